use crate::geometry::Box2D;

/// One output row: a box with its identity in a 1-based frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRecord {
    pub frame: u32,
    pub id: u32,
    pub bbox: Box2D,
    pub confidence: f64,
}

impl TrackRecord {
    pub fn new(frame: u32, id: u32, bbox: Box2D, confidence: f64) -> Self {
        Self { frame, id, bbox, confidence }
    }
}
