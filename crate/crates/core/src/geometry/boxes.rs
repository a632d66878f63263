use crate::error::{bail, Result};

/// Axis-aligned box: top-left corner plus extent, in image units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Box2D {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        if !b.is_valid() {
            bail!(InvalidArgument, "invalid box {x},{y},{w},{h}");
        }
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w >= 0.0 && self.h >= 0.0
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { x: cx - w / 2.0, y: cy - h / 2.0, w, h }
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Closed containment: border points count as inside.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x2() && py >= self.y && py <= self.y2()
    }

    pub fn intersection(&self, other: &Box2D) -> f64 {
        let iw = (self.x2().min(other.x2()) - self.x.max(other.x)).max(0.0);
        let ih = (self.y2().min(other.y2()) - self.y.max(other.y)).max(0.0);
        iw * ih
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

/// Intersection over union; degenerate (zero-area union) pairs give 0.
pub fn iou(a: &Box2D, b: &Box2D) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// `1 − GIoU(a, b)`, in `[0, 2)`.
pub fn giou_loss(a: &Box2D, b: &Box2D) -> Result<f64> {
    if a.area() <= 0.0 && b.area() <= 0.0 {
        bail!(InvalidArgument, "GIoU of two degenerate boxes");
    }
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    let ex = a.x2().max(b.x2()) - a.x.min(b.x);
    let ey = a.y2().max(b.y2()) - a.y.min(b.y);
    let enclosing = ex * ey;
    let giou = inter / union - (enclosing - union) / enclosing;
    Ok(1.0 - giou)
}

/// Sum of absolute coordinate differences over `(x, y, w, h)`.
pub fn l1_box_loss(a: &Box2D, b: &Box2D) -> f64 {
    (a.x - b.x).abs() + (a.y - b.y).abs() + (a.w - b.w).abs() + (a.h - b.h).abs()
}
