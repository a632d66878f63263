//! Synthetic multi-object scenes: motion presets, depth ground truth,
//! appearance codes, rendered feature images, noisy detections, training
//! clips with trajectory augmentation, and the toy observation encoder.

mod augment;
mod config;
mod encoder;
mod io;
mod scenario;

pub use augment::{augment_batch, build_clip, sample_clip_frames, ClipFrame, ClipObservation, TrainClip};
pub use config::{MotionPreset, ScenarioConfig};
pub use encoder::{toy_encoder, ToyEncoder, BOX_FEATURES};
pub use io::{depth_file_name, export_scenario, load_scenario, load_scenario_config, LoadOptions};
pub use scenario::{
    appearance_codes, background_depth, corrupt_detections, generate_scenario, object_depth, render_depth, render_image, Detection, GtObject, Scenario,
    SCENE_DEPTH_MAX,
};
