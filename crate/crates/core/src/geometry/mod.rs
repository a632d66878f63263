//! Boxes, overlap measures, detection loss terms and linear assignment.

mod boxes;
mod hungarian;
mod losses;

pub use boxes::{giou_loss, iou, l1_box_loss, Box2D};
pub use hungarian::{hungarian, Assignment, PAD_COST};
pub use losses::{focal_loss, focal_loss_logits, giou_loss_var, l1_loss_var, FOCAL_ALPHA, FOCAL_GAMMA};
