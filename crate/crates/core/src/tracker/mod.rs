//! Online association: per-identity trajectory stores, identity prediction
//! by cosine similarity and Hungarian assignment, and track lifecycle.

mod record;
mod store;

pub use record::TrackRecord;
pub use store::{
    predict_ids, track_sequence, update_store, FrameInput, LatestPresent, Refiner, TaRefiner, TrackStore, TrackerConfig, DEFAULT_MAX_MISSES,
    DEFAULT_SCORE_THRESHOLD, DEFAULT_SIMILARITY_THRESHOLD, DEFAULT_WINDOW,
};
