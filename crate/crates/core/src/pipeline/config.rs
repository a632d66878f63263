use std::str::FromStr;

use ini::Ini;

use crate::error::{bail, Error, Result};
use crate::temporal::MissingMode;

pub const SEED_ENV: &str = "FDTA_SEED";

/// Coefficients of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub bbox: f64,
    pub giou: f64,
    pub id: f64,
    pub depth: f64,
    pub ia: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cls: 2.0, bbox: 5.0, giou: 2.0, id: 1.0, depth: 1.0, ia: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in self.named() {
            if !(v >= 0.0 && v.is_finite()) {
                bail!(Config, "loss weight {k} must be finite and ≥ 0, got {v}");
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 6] {
        [("cls", self.cls), ("bbox", self.bbox), ("giou", self.giou), ("id", self.id), ("depth", self.depth), ("ia", self.ia)]
    }
}

/// Adapter toggles, ablation switches, model shape and training schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spatial: bool,
    pub temporal: bool,
    pub identity: bool,
    pub depth_pe: bool,
    pub missing: MissingMode,
    pub cfe: bool,
    pub iou_filter: bool,
    pub fg_weighting: bool,

    /// Trajectory window `T`.
    pub window: usize,
    /// Temporal encoder layers `L`.
    pub ta_layers: usize,
    pub tau: f64,
    pub fg_weight: f64,
    /// Initial scale on the cosine identity logits.
    pub id_scale: f64,

    pub dim: usize,
    pub heads: usize,
    pub depth_bins: usize,
    pub depth_max: f64,
    pub depth_encoder_layers: usize,

    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub max_interval: usize,
    pub occlusion_prob: f64,
    pub switch_prob: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub ia_warmup_epochs: usize,
    pub seed: u64,

    pub weights: LossWeights,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            spatial: true,
            temporal: true,
            identity: true,
            depth_pe: true,
            missing: MissingMode::Mask,
            cfe: true,
            iou_filter: true,
            fg_weighting: true,
            window: 30,
            ta_layers: 6,
            tau: 0.1,
            fg_weight: 7.0,
            id_scale: 10.0,
            dim: 64,
            heads: 2,
            depth_bins: 12,
            depth_max: 64.0,
            depth_encoder_layers: 1,
            epochs: 11,
            steps_per_epoch: 50,
            max_interval: 4,
            occlusion_prob: 0.1,
            switch_prob: 0.1,
            lr: 1e-4,
            weight_decay: 5e-4,
            ia_warmup_epochs: 1,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

struct Reader<'a> {
    ini: &'a Ini,
}

impl Reader<'_> {
    fn get<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.ini.section(Some(section)).and_then(|s| s.get(key)) {
            None => Ok(default),
            Some(v) => v.trim().parse().map_err(|_| Error::Config(format!("{section}.{key}: cannot parse {v:?}"))),
        }
    }
}

const KNOWN: [(&str, &[&str]); 4] = [
    ("adapters", &["spatial", "temporal", "identity", "depth_pe", "missing", "cfe", "iou_filter", "fg_weighting"]),
    ("model", &["window", "ta_layers", "tau", "fg_weight", "id_scale", "dim", "heads", "depth_bins", "depth_max", "depth_encoder_layers"]),
    (
        "train",
        &["epochs", "steps_per_epoch", "max_interval", "occlusion_prob", "switch_prob", "lr", "weight_decay", "ia_warmup_epochs", "seed"],
    ),
    ("loss", &["cls", "bbox", "giou", "id", "depth", "ia"]),
];

impl RunConfig {
    /// Everything off: the plain embedding baseline.
    pub fn baseline() -> Self {
        Self { spatial: false, temporal: false, identity: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temporal && self.window < 2 {
            bail!(Config, "the temporal adapter needs a window of at least 2, got {}", self.window);
        }
        if self.window < 1 || self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            bail!(Config, "invalid model shape: window {}, dim {}, heads {}", self.window, self.dim, self.heads);
        }
        if self.depth_bins == 0 || !(self.depth_max > 0.0) {
            bail!(Config, "invalid depth discretization: {} bins up to {}", self.depth_bins, self.depth_max);
        }
        if !(self.tau > 0.0) {
            bail!(Config, "tau must be positive, got {}", self.tau);
        }
        if !(self.id_scale > 0.0 && self.id_scale.is_finite()) {
            bail!(Config, "id_scale must be positive, got {}", self.id_scale);
        }
        if !(self.fg_weight >= 1.0) {
            bail!(Config, "fg_weight must be ≥ 1, got {}", self.fg_weight);
        }
        if self.max_interval == 0 {
            bail!(Config, "max_interval must be ≥ 1");
        }
        for (k, v) in [("occlusion_prob", self.occlusion_prob), ("switch_prob", self.switch_prob)] {
            if !(0.0..1.0).contains(&v) {
                bail!(Config, "{k} must lie in [0, 1), got {v}");
            }
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            bail!(Config, "invalid optimizer settings lr {} wd {}", self.lr, self.weight_decay);
        }
        self.weights.validate()
    }

    /// Foreground weight actually applied to the depth loss.
    pub fn effective_fg_weight(&self) -> f64 {
        if self.fg_weighting {
            self.fg_weight
        } else {
            1.0
        }
    }

    /// Frames per training clip: a full window of history plus the anchor.
    pub fn clip_len(&self) -> usize {
        self.window + 1
    }

    pub fn to_ini_string(&self) -> String {
        let mut ini = Ini::new();
        ini.with_section(Some("adapters"))
            .set("spatial", self.spatial.to_string())
            .set("temporal", self.temporal.to_string())
            .set("identity", self.identity.to_string())
            .set("depth_pe", self.depth_pe.to_string())
            .set("missing", self.missing.to_string())
            .set("cfe", self.cfe.to_string())
            .set("iou_filter", self.iou_filter.to_string())
            .set("fg_weighting", self.fg_weighting.to_string());
        ini.with_section(Some("model"))
            .set("window", self.window.to_string())
            .set("ta_layers", self.ta_layers.to_string())
            .set("tau", self.tau.to_string())
            .set("fg_weight", self.fg_weight.to_string())
            .set("id_scale", self.id_scale.to_string())
            .set("dim", self.dim.to_string())
            .set("heads", self.heads.to_string())
            .set("depth_bins", self.depth_bins.to_string())
            .set("depth_max", self.depth_max.to_string())
            .set("depth_encoder_layers", self.depth_encoder_layers.to_string());
        ini.with_section(Some("train"))
            .set("epochs", self.epochs.to_string())
            .set("steps_per_epoch", self.steps_per_epoch.to_string())
            .set("max_interval", self.max_interval.to_string())
            .set("occlusion_prob", self.occlusion_prob.to_string())
            .set("switch_prob", self.switch_prob.to_string())
            .set("lr", self.lr.to_string())
            .set("weight_decay", self.weight_decay.to_string())
            .set("ia_warmup_epochs", self.ia_warmup_epochs.to_string())
            .set("seed", self.seed.to_string());
        let w = &self.weights;
        ini.with_section(Some("loss"))
            .set("cls", w.cls.to_string())
            .set("bbox", w.bbox.to_string())
            .set("giou", w.giou.to_string())
            .set("id", w.id.to_string())
            .set("depth", w.depth.to_string())
            .set("ia", w.ia.to_string());
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ini output is utf-8")
    }

    /// Missing keys keep their defaults; unknown sections or keys are errors
    /// so that typos in ablation files do not pass silently.
    pub fn from_ini(ini: &Ini) -> Result<Self> {
        for (section, props) in ini.iter() {
            let Some(name) = section else {
                if props.is_empty() {
                    continue;
                }
                bail!(Config, "keys outside a section");
            };
            let Some((_, keys)) = KNOWN.iter().find(|(s, _)| *s == name) else {
                bail!(Config, "unknown section [{name}]");
            };
            for (k, _) in props.iter() {
                if !keys.contains(&k) {
                    bail!(Config, "unknown key {name}.{k}");
                }
            }
        }
        let r = Reader { ini };
        let d = Self::default();
        let dw = d.weights;
        let cfg = Self {
            spatial: r.get("adapters", "spatial", d.spatial)?,
            temporal: r.get("adapters", "temporal", d.temporal)?,
            identity: r.get("adapters", "identity", d.identity)?,
            depth_pe: r.get("adapters", "depth_pe", d.depth_pe)?,
            missing: r.get("adapters", "missing", d.missing)?,
            cfe: r.get("adapters", "cfe", d.cfe)?,
            iou_filter: r.get("adapters", "iou_filter", d.iou_filter)?,
            fg_weighting: r.get("adapters", "fg_weighting", d.fg_weighting)?,
            window: r.get("model", "window", d.window)?,
            ta_layers: r.get("model", "ta_layers", d.ta_layers)?,
            tau: r.get("model", "tau", d.tau)?,
            fg_weight: r.get("model", "fg_weight", d.fg_weight)?,
            id_scale: r.get("model", "id_scale", d.id_scale)?,
            dim: r.get("model", "dim", d.dim)?,
            heads: r.get("model", "heads", d.heads)?,
            depth_bins: r.get("model", "depth_bins", d.depth_bins)?,
            depth_max: r.get("model", "depth_max", d.depth_max)?,
            depth_encoder_layers: r.get("model", "depth_encoder_layers", d.depth_encoder_layers)?,
            epochs: r.get("train", "epochs", d.epochs)?,
            steps_per_epoch: r.get("train", "steps_per_epoch", d.steps_per_epoch)?,
            max_interval: r.get("train", "max_interval", d.max_interval)?,
            occlusion_prob: r.get("train", "occlusion_prob", d.occlusion_prob)?,
            switch_prob: r.get("train", "switch_prob", d.switch_prob)?,
            lr: r.get("train", "lr", d.lr)?,
            weight_decay: r.get("train", "weight_decay", d.weight_decay)?,
            ia_warmup_epochs: r.get("train", "ia_warmup_epochs", d.ia_warmup_epochs)?,
            seed: r.get("train", "seed", d.seed)?,
            weights: LossWeights {
                cls: r.get("loss", "cls", dw.cls)?,
                bbox: r.get("loss", "bbox", dw.bbox)?,
                giou: r.get("loss", "giou", dw.giou)?,
                id: r.get("loss", "id", dw.id)?,
                depth: r.get("loss", "depth", dw.depth)?,
                ia: r.get("loss", "ia", dw.ia)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_ini_str(s: &str) -> Result<Self> {
        let ini = Ini::load_from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_ini(&ini)
    }

    /// Applies `FDTA_SEED` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Some(seed) = seed_from_env()? {
            self.seed = seed;
        }
        Ok(())
    }
}

/// The `FDTA_SEED` override, if present.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!(Config, "{SEED_ENV}: {e}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_setup() {
        let c = RunConfig::default();
        assert_eq!((c.window, c.ta_layers, c.tau, c.fg_weight), (30, 6, 0.1, 7.0));
        assert_eq!((c.lr, c.weight_decay, c.ia_warmup_epochs), (1e-4, 5e-4, 1));
        assert_eq!(c.weights, LossWeights { cls: 2.0, bbox: 5.0, giou: 2.0, id: 1.0, depth: 1.0, ia: 1.0 });
    }

    #[test]
    fn ini_round_trip() {
        let c = RunConfig { missing: MissingMode::ZeroVector, cfe: false, window: 8, lr: 3e-3, seed: 17, ..RunConfig::baseline() };
        assert_eq!(RunConfig::from_ini_str(&c.to_ini_string()).unwrap(), c);
        assert_eq!(RunConfig::from_ini_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_bad_files() {
        for bad in [
            "[adapters]\nspatal=true\n",
            "[extra]\nx=1\n",
            "[model]\nwindow=1\n",
            "[loss]\nia=-1\n",
            "[adapters]\nmissing=sometimes\n",
            "[model]\ndim=30\nheads=4\n",
            "[train]\nswitch_prob=1\n",
        ] {
            assert!(RunConfig::from_ini_str(bad).is_err(), "{bad}");
        }
        // a single-slot window is fine once the temporal adapter is off
        assert!(RunConfig::from_ini_str("[adapters]\ntemporal=false\n[model]\nwindow=1\n").is_ok());
    }
}
