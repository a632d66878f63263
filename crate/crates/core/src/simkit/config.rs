use std::fmt;
use std::str::FromStr;

use ini::Ini;

use crate::error::{bail, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionPreset {
    Linear,
    Crossing,
    Circular,
    RandomWalk,
}

impl MotionPreset {
    pub const ALL: [MotionPreset; 4] = [Self::Linear, Self::Crossing, Self::Circular, Self::RandomWalk];
}

impl FromStr for MotionPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "linear" => Self::Linear,
            "crossing" => Self::Crossing,
            "circular" => Self::Circular,
            "random-walk" => Self::RandomWalk,
            _ => bail!(Config, "unknown motion preset {s:?} (linear, crossing, circular, random-walk)"),
        })
    }
}

impl fmt::Display for MotionPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Crossing => "crossing",
            Self::Circular => "circular",
            Self::RandomWalk => "random-walk",
        })
    }
}

/// Everything needed to regenerate a scenario bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_objects: usize,
    pub n_frames: usize,
    pub width: f64,
    pub height: f64,
    pub preset: MotionPreset,
    /// Per object and frame, chance that an occlusion span (1–6 frames,
    /// no detection) starts.
    pub occlusion_rate: f64,
    /// Box jitter σ in image units.
    pub box_noise: f64,
    pub drop_prob: f64,
    /// Mean number of low-score clutter detections per frame.
    pub clutter_rate: f64,
    pub appearance_dim: usize,
    /// Cosine between the appearance codes of any two identities.
    pub base_similarity: f64,
    /// Per-observation Gaussian noise on appearance codes.
    pub appearance_noise: f64,
    /// Size of the frame-variant pose channel.
    pub context_dim: usize,
    pub depth_rows: usize,
    pub depth_cols: usize,
    pub image_rows: usize,
    pub image_cols: usize,
    pub image_noise: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_objects: 8,
            n_frames: 200,
            width: 640.0,
            height: 360.0,
            preset: MotionPreset::Crossing,
            occlusion_rate: 0.0,
            box_noise: 0.0,
            drop_prob: 0.0,
            clutter_rate: 0.0,
            appearance_dim: 16,
            base_similarity: 0.9,
            appearance_noise: 0.15,
            context_dim: 4,
            depth_rows: 32,
            depth_cols: 32,
            image_rows: 8,
            image_cols: 8,
            image_noise: 0.05,
            seed: 0,
        }
    }
}

fn get<T: FromStr>(ini: &Ini, key: &str, default: T) -> Result<T> {
    match ini.section(Some("scenario")).and_then(|s| s.get(key)) {
        None => Ok(default),
        Some(v) => v.trim().parse().map_err(|_| Error::Config(format!("scenario.{key}: cannot parse {v:?}"))),
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_objects < 1 || self.n_frames < 1 {
            bail!(Config, "need at least one object and one frame");
        }
        for (k, v) in [("box_noise", self.box_noise), ("appearance_noise", self.appearance_noise), ("image_noise", self.image_noise), ("clutter_rate", self.clutter_rate)] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!(Config, "{k} must be a finite value ≥ 0, got {v}");
            }
        }
        for (k, v) in [("occlusion_rate", self.occlusion_rate), ("drop_prob", self.drop_prob), ("base_similarity", self.base_similarity)] {
            if !(0.0..1.0).contains(&v) {
                bail!(Config, "{k} must lie in [0, 1), got {v}");
            }
        }
        if self.appearance_dim < self.n_objects + 1 {
            bail!(Config, "appearance_dim {} cannot hold {} codes with a shared direction", self.appearance_dim, self.n_objects);
        }
        if !self.image_rows.is_multiple_of(4) || !self.image_cols.is_multiple_of(4) || self.image_rows == 0 || self.image_cols == 0 {
            bail!(Config, "image grid {}x{} must be a positive multiple of 4", self.image_rows, self.image_cols);
        }
        if self.depth_rows == 0 || self.depth_cols == 0 {
            bail!(Config, "empty depth grid");
        }
        Ok(())
    }

    pub fn to_ini_string(&self) -> String {
        let mut ini = Ini::new();
        ini.with_section(Some("scenario"))
            .set("n_objects", self.n_objects.to_string())
            .set("n_frames", self.n_frames.to_string())
            .set("width", self.width.to_string())
            .set("height", self.height.to_string())
            .set("preset", self.preset.to_string())
            .set("occlusion_rate", self.occlusion_rate.to_string())
            .set("box_noise", self.box_noise.to_string())
            .set("drop_prob", self.drop_prob.to_string())
            .set("clutter_rate", self.clutter_rate.to_string())
            .set("appearance_dim", self.appearance_dim.to_string())
            .set("base_similarity", self.base_similarity.to_string())
            .set("appearance_noise", self.appearance_noise.to_string())
            .set("context_dim", self.context_dim.to_string())
            .set("depth_rows", self.depth_rows.to_string())
            .set("depth_cols", self.depth_cols.to_string())
            .set("image_rows", self.image_rows.to_string())
            .set("image_cols", self.image_cols.to_string())
            .set("image_noise", self.image_noise.to_string())
            .set("seed", self.seed.to_string());
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ini output is utf-8")
    }

    /// Reads the `[scenario]` section; missing keys keep their defaults,
    /// unknown sections or keys are errors.
    pub fn from_ini(ini: &Ini) -> Result<Self> {
        const KEYS: [&str; 19] = [
            "n_objects", "n_frames", "width", "height", "preset", "occlusion_rate", "box_noise", "drop_prob", "clutter_rate", "appearance_dim",
            "base_similarity", "appearance_noise", "context_dim", "depth_rows", "depth_cols", "image_rows", "image_cols", "image_noise", "seed",
        ];
        for (section, props) in ini.iter() {
            match section {
                None if props.is_empty() => {}
                Some("scenario") => {
                    if let Some((k, _)) = props.iter().find(|(k, _)| !KEYS.contains(k)) {
                        bail!(Config, "unknown key scenario.{k}");
                    }
                }
                Some(name) => bail!(Config, "unknown section [{name}]"),
                None => bail!(Config, "keys outside a section"),
            }
        }
        let d = Self::default();
        let cfg = Self {
            n_objects: get(ini, "n_objects", d.n_objects)?,
            n_frames: get(ini, "n_frames", d.n_frames)?,
            width: get(ini, "width", d.width)?,
            height: get(ini, "height", d.height)?,
            preset: get(ini, "preset", d.preset)?,
            occlusion_rate: get(ini, "occlusion_rate", d.occlusion_rate)?,
            box_noise: get(ini, "box_noise", d.box_noise)?,
            drop_prob: get(ini, "drop_prob", d.drop_prob)?,
            clutter_rate: get(ini, "clutter_rate", d.clutter_rate)?,
            appearance_dim: get(ini, "appearance_dim", d.appearance_dim)?,
            base_similarity: get(ini, "base_similarity", d.base_similarity)?,
            appearance_noise: get(ini, "appearance_noise", d.appearance_noise)?,
            context_dim: get(ini, "context_dim", d.context_dim)?,
            depth_rows: get(ini, "depth_rows", d.depth_rows)?,
            depth_cols: get(ini, "depth_cols", d.depth_cols)?,
            image_rows: get(ini, "image_rows", d.image_rows)?,
            image_cols: get(ini, "image_cols", d.image_cols)?,
            image_noise: get(ini, "image_noise", d.image_noise)?,
            seed: get(ini, "seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_ini_str(s: &str) -> Result<Self> {
        let ini = Ini::load_from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_ini(&ini)
    }
}
