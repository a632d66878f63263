//! The fixed synthetic benchmark: crossing scenes with near-identical
//! appearance codes, a separate training set, and the ablation variants.

use std::str::FromStr;

use crate::error::{bail, Error, Result};
use crate::metrics::{Evaluator, EvalResult, SimilarityHistogram};
use crate::simkit::{generate_scenario, MotionPreset, Scenario, ScenarioConfig};
use crate::temporal::MissingMode;

use super::config::RunConfig;
use super::infer::{embed_scenario, similarity_distribution, track_frames, tracker_config};
use super::model::FdtaModel;
use super::train::train_toy;

pub const BENCH_SEQUENCES: usize = 8;
pub const BENCH_TRAIN_SEQUENCES: usize = 4;
pub const BENCH_FRAMES: usize = 200;
pub const BENCH_OBJECTS: usize = 8;
pub const TOP_K: usize = 3;
pub const HIGH_SIMILARITY: f64 = 0.9;
/// Training seeds the trend checks average over.
pub const BENCH_SEEDS: [u64; 3] = [1, 2, 3];

/// Scene settings shared by training and evaluation sequences.
pub fn bench_scenario_config(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n_objects: BENCH_OBJECTS,
        n_frames: BENCH_FRAMES,
        preset: MotionPreset::Crossing,
        base_similarity: 0.9,
        appearance_noise: 0.15,
        box_noise: 2.0,
        occlusion_rate: 0.02,
        drop_prob: 0.03,
        clutter_rate: 0.5,
        seed,
        ..ScenarioConfig::default()
    }
}

pub fn bench_eval_scenarios() -> Result<Vec<Scenario>> {
    (0..BENCH_SEQUENCES as u64).map(|i| generate_scenario(&bench_scenario_config(1001 + i))).collect()
}

pub fn bench_train_scenarios() -> Result<Vec<Scenario>> {
    (0..BENCH_TRAIN_SEQUENCES as u64).map(|i| generate_scenario(&bench_scenario_config(2001 + i))).collect()
}

/// Desk-scale model and schedule with every adapter enabled.
pub fn bench_profile(seed: u64) -> RunConfig {
    RunConfig {
        window: 8,
        ta_layers: 2,
        dim: 32,
        heads: 2,
        depth_bins: 12,
        depth_max: 64.0,
        depth_encoder_layers: 1,
        id_scale: 60.0,
        epochs: 12,
        steps_per_epoch: 200,
        lr: 1e-3,
        seed,
        ..RunConfig::default()
    }
}

/// The configurations compared by the ablation checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoAdapters,
    ZeroVector,
    NoCfe,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Self::Full, Self::NoAdapters, Self::ZeroVector, Self::NoCfe];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoAdapters => "no-adapters",
            Self::ZeroVector => "zero-vector",
            Self::NoCfe => "no-cfe",
        }
    }

    pub fn config(self, seed: u64) -> RunConfig {
        let full = bench_profile(seed);
        match self {
            Self::Full => full,
            Self::NoAdapters => RunConfig { spatial: false, temporal: false, identity: false, ..full },
            Self::ZeroVector => RunConfig { missing: MissingMode::ZeroVector, ..full },
            Self::NoCfe => RunConfig { cfe: false, ..full },
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub eval: EvalResult,
    pub similarity: SimilarityHistogram,
    /// Fraction of top-k inter-object similarities above [`HIGH_SIMILARITY`].
    pub high_fraction: f64,
}

/// Tracks and analyzes every evaluation sequence with a trained model;
/// metrics are pooled over sequences by summing counts.
pub fn evaluate_model(model: &FdtaModel, scenarios: &[Scenario]) -> Result<BenchOutcome> {
    let tcfg = tracker_config(model);
    let mut ev = Evaluator::new();
    let mut sims = SimilarityHistogram::default();
    for sc in scenarios {
        let frames = embed_scenario(model, sc, tcfg.score_threshold)?;
        let tracks = track_frames(model, &frames, &tcfg)?;
        ev.add_sequence(&sc.gt_records(), &tracks)?;
        sims.merge(&similarity_distribution(&frames, TOP_K)?);
    }
    let high_fraction = sims.fraction_above(HIGH_SIMILARITY);
    Ok(BenchOutcome { eval: ev.result(), similarity: sims, high_fraction })
}

pub fn run_variant(variant: Variant, seed: u64, train: &[Scenario], eval: &[Scenario]) -> Result<BenchOutcome> {
    let (model, _) = train_toy(&variant.config(seed), train)?;
    evaluate_model(&model, eval)
}

/// Seed-averaged figures of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: Variant,
    pub hota: f64,
    pub assa: f64,
    pub idf1: f64,
    pub high_fraction: f64,
    /// Per seed `(seed, AssA, high fraction)`.
    pub per_seed: Vec<(u64, f64, f64)>,
}

/// Trains and evaluates each variant once per seed and averages the
/// figures with equal weight per seed.
pub fn run_benchmark(variants: &[Variant], seeds: &[u64]) -> Result<Vec<VariantSummary>> {
    let train = bench_train_scenarios()?;
    let eval = bench_eval_scenarios()?;
    let k = 1.0 / seeds.len().max(1) as f64;
    let mut out = Vec::new();
    for &variant in variants {
        let mut sum = VariantSummary { variant, hota: 0.0, assa: 0.0, idf1: 0.0, high_fraction: 0.0, per_seed: Vec::new() };
        for &seed in seeds {
            let o = run_variant(variant, seed, &train, &eval)?;
            sum.hota += o.eval.hota * k;
            sum.assa += o.eval.ass_a * k;
            sum.idf1 += o.eval.idf1 * k;
            sum.high_fraction += o.high_fraction * k;
            sum.per_seed.push((seed, o.eval.ass_a, o.high_fraction));
        }
        out.push(sum);
    }
    Ok(out)
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match Self::ALL.into_iter().find(|v| v.name() == s) {
            Some(v) => Ok(v),
            None => bail!(Config, "unknown variant {s:?} (full, no-adapters, zero-vector, no-cfe)"),
        }
    }
}
