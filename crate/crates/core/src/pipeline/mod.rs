//! Model assembly, combined objective, toy training, checkpoints, inference
//! and the desk-scale benchmark used for the trend checks.

pub mod bench;
mod checkpoint;
pub mod gradsuite;
mod config;
mod infer;
mod losses;
mod model;
pub mod train;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, model_from_bytes, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::{seed_from_env, LossWeights, RunConfig, SEED_ENV};
pub use infer::{embed_scenario, frame_similarity, similarity_distribution, track_frames, track_scenario, tracker_config};
pub use losses::{det_loss, id_logits, id_loss, id_loss_var, total_loss, LossParts};
pub use model::{prepare_frames, FdtaModel, FrameOutput, InputDims, PreparedFrame};
pub use train::{train_model, train_toy, EpochLog, TrainReport};
