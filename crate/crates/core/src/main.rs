use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ini::Ini;

use fdta::formats::{read_tracks, write_tracks};
use fdta::metrics::{evaluate, SimilarityHistogram};
use fdta::pipeline::bench::{run_benchmark, Variant, BENCH_SEEDS, HIGH_SIMILARITY, TOP_K};
use fdta::pipeline::gradsuite::{run_grad_suite, SUITE_INSTANCES, SUITE_TOLERANCE};
use fdta::pipeline::{embed_scenario, load_checkpoint, save_checkpoint, seed_from_env, similarity_distribution, track_frames, tracker_config, train_toy, RunConfig};
use fdta::simkit::{export_scenario, generate_scenario, load_scenario, LoadOptions, MotionPreset, Scenario, ScenarioConfig};
use fdta::tracker::TrackerConfig;
use fdta::{Error, Result};

/// Synthetic-data multi-object tracking with spatial, temporal and identity
/// embedding adapters.
///
/// Exit status: 0 on success, 1 on a usage error, 2 on a data, config or
/// file error (and when `gradcheck` finds a gradient over tolerance).
#[derive(Parser)]
#[command(name = "fdta", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario directory.
    Simulate(SimulateArgs),
    /// Train a model on scenario directories and write a checkpoint.
    Train(TrainArgs),
    /// Track one scenario directory with a trained checkpoint.
    Track(TrackArgs),
    /// Score predicted tracks against ground truth (MOTChallenge files).
    Eval(EvalArgs),
    /// Histogram of top-k inter-object embedding similarities.
    Analyze(AnalyzeArgs),
    /// Finite-difference gradient checks over every op, layer and loss.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate ablation variants on the fixed benchmark.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config file with a [scenario] section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set n_frames=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Motion preset: linear, crossing, circular or random-walk.
    #[arg(long)]
    preset: Option<MotionPreset>,
    /// Generator seed; takes precedence over FDTA_SEED and the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    /// Per object and frame chance that an occlusion span starts.
    #[arg(long)]
    occlusion_rate: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Run config file with [adapters], [model], [train] and [loss] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set adapters.identity=false`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Scenario directories to train on.
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Training seed; takes precedence over FDTA_SEED and the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss components as CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Args)]
struct TrackerArgs {
    /// Tracker config file with a [tracker] section (similarity_threshold,
    /// max_misses, score_threshold).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    similarity_threshold: Option<f64>,
    #[arg(long)]
    max_misses: Option<usize>,
    /// Detections scoring below this are not tracked.
    #[arg(long)]
    score_threshold: Option<f64>,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scenario directory.
    #[arg(long)]
    data: PathBuf,
    /// Output tracks in MOTChallenge format.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tracker: TrackerArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth MOTChallenge file.
    #[arg(long)]
    gt: PathBuf,
    /// Predicted MOTChallenge file.
    #[arg(long)]
    pred: PathBuf,
    /// Also write all metrics and counts as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scenario directories; their similarities are pooled.
    #[arg(long, num_args = 1.., required = true)]
    data: Vec<PathBuf>,
    /// Most similar other objects kept per detection.
    #[arg(long, default_value_t = TOP_K)]
    top_k: usize,
    /// Reported share of similarities strictly above this value.
    #[arg(long, default_value_t = HIGH_SIMILARITY)]
    threshold: f64,
    /// Histogram CSV.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tracker: TrackerArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Check every case (the default when no --case is given).
    #[arg(long)]
    all: bool,
    /// Only cases whose name contains this string.
    #[arg(long, conflicts_with = "all")]
    case: Option<String>,
    #[arg(long, default_value_t = SUITE_INSTANCES)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SUITE_TOLERANCE)]
    tolerance: f64,
    /// Per-case results as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated: full, no-adapters, zero-vector, no-cfe.
    #[arg(long, value_delimiter = ',', default_values_t = Variant::ALL.map(|v| v.name().to_string()))]
    variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = BENCH_SEEDS)]
    seeds: Vec<u64>,
    /// Per-variant summary as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_ini(path: Option<&Path>) -> Result<Ini> {
    match path {
        None => Ok(Ini::new()),
        Some(p) => Ini::load_from_str(&fs::read_to_string(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
    }
}

/// Applies `section.key=value` overrides; keys without a section go to
/// `default_section`.
fn apply_sets(ini: &mut Ini, sets: &[String], default_section: &str) -> Result<()> {
    for s in sets {
        let Some((key, value)) = s.split_once('=') else {
            return Err(Error::Config(format!("--set {s:?} is not KEY=VALUE")));
        };
        let (section, key) = key.split_once('.').unwrap_or((default_section, key));
        ini.with_section(Some(section.trim())).set(key.trim(), value.trim());
    }
    Ok(())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut ini = read_ini(a.config.as_deref())?;
    apply_sets(&mut ini, &a.set, "scenario")?;
    let mut cfg = ScenarioConfig::from_ini(&ini)?;
    if let Some(seed) = seed_from_env()? {
        cfg.seed = seed;
    }
    cfg.preset = a.preset.unwrap_or(cfg.preset);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.n_objects = a.objects.unwrap_or(cfg.n_objects);
    cfg.n_frames = a.frames.unwrap_or(cfg.n_frames);
    cfg.occlusion_rate = a.occlusion_rate.unwrap_or(cfg.occlusion_rate);
    cfg.validate()?;
    export_scenario(&generate_scenario(&cfg)?, &a.out)?;
    println!("wrote {} frames of {} objects to {}", cfg.n_frames, cfg.n_objects, a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut ini = read_ini(a.config.as_deref())?;
    apply_sets(&mut ini, &a.set, "train")?;
    let mut cfg = RunConfig::from_ini(&ini)?;
    cfg.apply_env()?;
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.validate()?;
    // depth grids are only read when the spatial adapter needs them
    let opts = LoadOptions { depth: cfg.spatial, images: true };
    let scenarios: Vec<Scenario> = a.data.iter().map(|d| load_scenario(d, opts)).collect::<Result<_>>()?;
    let (model, report) = train_toy(&cfg, &scenarios)?;
    save_checkpoint(&model, &a.out)?;
    if let Some(p) = &a.loss_csv {
        write(p, report.to_csv())?;
    }
    if let (Some(first), Some(last)) = (report.epochs.first(), report.epochs.last()) {
        println!("epoch 1 loss {:.6}, epoch {} loss {:.6}", first.total, last.epoch, last.total);
    }
    println!("wrote {} parameters to {}", model.num_parameters(), a.out.display());
    Ok(())
}

fn tracker_settings(base: TrackerConfig, a: &TrackerArgs) -> Result<TrackerConfig> {
    const KEYS: [&str; 3] = ["similarity_threshold", "max_misses", "score_threshold"];
    let ini = read_ini(a.config.as_deref())?;
    let mut cfg = base;
    for (section, props) in ini.iter() {
        if section.is_some_and(|s| s != "tracker") || (section.is_none() && !props.is_empty()) {
            return Err(Error::Config("tracker config takes only a [tracker] section".into()));
        }
        for (k, v) in props.iter() {
            let bad = || Error::Config(format!("tracker.{k}: cannot parse {v:?}"));
            match k {
                "similarity_threshold" => cfg.similarity_threshold = v.trim().parse().map_err(|_| bad())?,
                "max_misses" => cfg.max_misses = v.trim().parse().map_err(|_| bad())?,
                "score_threshold" => cfg.score_threshold = v.trim().parse().map_err(|_| bad())?,
                _ => return Err(Error::Config(format!("unknown key tracker.{k} (expected one of {KEYS:?})"))),
            }
        }
    }
    cfg.similarity_threshold = a.similarity_threshold.unwrap_or(cfg.similarity_threshold);
    cfg.max_misses = a.max_misses.unwrap_or(cfg.max_misses);
    cfg.score_threshold = a.score_threshold.unwrap_or(cfg.score_threshold);
    Ok(cfg)
}

fn load_for(model: &fdta::pipeline::FdtaModel, dir: &Path) -> Result<Scenario> {
    load_scenario(dir, LoadOptions { depth: model.bins().is_some(), images: true })
}

fn track(a: TrackArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let tcfg = tracker_settings(tracker_config(&model), &a.tracker)?;
    let sc = load_for(&model, &a.data)?;
    let frames = embed_scenario(&model, &sc, tcfg.score_threshold)?;
    let tracks = track_frames(&model, &frames, &tcfg)?;
    write(&a.out, write_tracks(&tracks))?;
    println!("wrote {} track rows to {}", tracks.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let r = evaluate(&read_tracks(&a.gt)?, &read_tracks(&a.pred)?)?;
    println!("HOTA={:.3}", r.hota);
    println!("DetA={:.3}", r.det_a);
    println!("AssA={:.3}", r.ass_a);
    println!("IDF1={:.3}", r.idf1);
    println!("MOTA={:.3}", r.mota);
    println!("IDSW={}", r.clear.idsw);
    if let Some(p) = &a.csv {
        write(p, r.to_csv())?;
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let tcfg = tracker_settings(tracker_config(&model), &a.tracker)?;
    let mut hist = SimilarityHistogram::default();
    for dir in &a.data {
        let frames = embed_scenario(&model, &load_for(&model, dir)?, tcfg.score_threshold)?;
        hist.merge(&similarity_distribution(&frames, a.top_k)?);
    }
    write(&a.out, hist.to_csv())?;
    println!("similarities={}", hist.total());
    println!("fraction_above_{}={:.6}", a.threshold, hist.fraction_above(a.threshold));
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    let report = run_grad_suite(a.instances, a.seed, a.case.as_deref())?;
    for c in &report.cases {
        println!("{:<24} {:>3} instances  max_rel_error={:.3e}", c.name, c.instances, c.max_rel_error);
    }
    if let Some(p) = &a.csv {
        write(p, report.to_csv())?;
    }
    let ok = report.passed(a.tolerance);
    println!(
        "cases={} max_rel_error={:.3e} tolerance={:.0e} elapsed={:.2}s {}",
        report.cases.len(),
        report.max_rel_error(),
        a.tolerance,
        report.elapsed.as_secs_f64(),
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(ok)
}

fn bench(a: BenchArgs) -> Result<()> {
    let variants: Vec<Variant> = a.variants.iter().map(|v| v.parse()).collect::<Result<_>>()?;
    let start = Instant::now();
    let summaries = run_benchmark(&variants, &a.seeds)?;
    let mut csv = String::from("variant,hota,assa,idf1,high_fraction\n");
    for s in &summaries {
        println!("{:<12} HOTA={:.2} AssA={:.2} IDF1={:.2} high={:.3}", s.variant.name(), s.hota, s.assa, s.idf1, s.high_fraction);
        for (seed, assa, high) in &s.per_seed {
            println!("  seed {seed}: AssA={assa:.2} high={high:.3}");
        }
        csv.push_str(&format!("{},{:.6},{:.6},{:.6},{:.6}\n", s.variant.name(), s.hota, s.assa, s.idf1, s.high_fraction));
    }
    println!("elapsed={:.1}s", start.elapsed().as_secs_f64());
    if let Some(p) = &a.out {
        write(p, csv)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Track(a) => track(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
        Command::Gradcheck(a) => match gradcheck(a) {
            Ok(false) => return ExitCode::from(2),
            other => other.map(|_| ()),
        },
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
