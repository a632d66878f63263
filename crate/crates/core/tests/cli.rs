use std::path::Path;
use std::process::{Command, Output};

fn fdta(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdta")).args(args).current_dir(cwd).env_remove("FDTA_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate_small(dir: &Path, name: &str, seed: &str) {
    let o = fdta(&["simulate", "--preset", "crossing", "--seed", seed, "--frames", "40", "--objects", "4", "--out", name], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let d = tempfile::tempdir().unwrap();
    simulate_small(d.path(), "s", "7");
    let o = fdta(&["eval", "--gt", "s/gt/gt.txt", "--pred", "s/gt/gt.txt"], d.path());
    assert!(o.status.success());
    let out = stdout(&o);
    for m in ["HOTA", "IDF1", "MOTA"] {
        assert!(out.lines().any(|l| l == format!("{m}=100.000")), "{out}");
    }
}

#[test]
fn simulate_twice_gives_identical_bytes() {
    let d = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert!(fdta(&["simulate", "--preset", "crossing", "--seed", "7", "--out", out], d.path()).status.success());
    }
    for f in ["scenario.cfg", "appearance.appr", "gt/gt.txt", "gt/objects.txt", "gt/poses.appr", "det/det.txt", "det/observations.appr", "img/images.appr", "depth/000200.dgrid"] {
        assert_eq!(std::fs::read(d.path().join("a").join(f)).unwrap(), std::fs::read(d.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_env_overrides_config_but_not_the_flag() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("s.cfg"), "[scenario]\nn_frames=10\nn_objects=3\nseed=1\n").unwrap();
    let run = |out: &str, env: Option<&str>, flag: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_fdta"));
        c.args(["simulate", "--config", "s.cfg", "--out", out]).current_dir(d.path()).env_remove("FDTA_SEED");
        if let Some(s) = flag {
            c.args(["--seed", s]);
        }
        if let Some(e) = env {
            c.env("FDTA_SEED", e);
        }
        assert!(c.output().unwrap().status.success());
        std::fs::read_to_string(d.path().join(out).join("scenario.cfg")).unwrap()
    };
    assert!(run("cfg", None, None).contains("seed=1"));
    assert!(run("env", Some("5"), None).contains("seed=5"));
    assert!(run("flag", Some("5"), Some("9")).contains("seed=9"));
}

#[test]
fn train_track_analyze_round_trip() {
    let d = tempfile::tempdir().unwrap();
    simulate_small(d.path(), "s", "3");
    let train = ["train", "--data", "s", "--set", "model.window=4", "--set", "model.ta_layers=1", "--set", "model.dim=16", "--set", "train.steps_per_epoch=5", "--epochs", "2"];
    let o = fdta(&[&train[..], &["--out", "m.ckpt", "--loss-csv", "loss.csv"]].concat(), d.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let loss = std::fs::read_to_string(d.path().join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);

    let o = fdta(&["track", "--checkpoint", "m.ckpt", "--data", "s", "--out", "t.txt", "--similarity-threshold", "0.2"], d.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!std::fs::read_to_string(d.path().join("t.txt")).unwrap().is_empty());
    assert!(fdta(&["eval", "--gt", "s/gt/gt.txt", "--pred", "t.txt"], d.path()).status.success());

    let o = fdta(&["analyze", "--checkpoint", "m.ckpt", "--data", "s", "--out", "h.csv"], d.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("fraction_above_0.9="));
    assert_eq!(std::fs::read_to_string(d.path().join("h.csv")).unwrap().lines().count(), 41);
}

#[test]
fn spatial_off_training_needs_no_depth_files() {
    let d = tempfile::tempdir().unwrap();
    simulate_small(d.path(), "s", "4");
    std::fs::remove_dir_all(d.path().join("s/depth")).unwrap();
    let args = ["train", "--data", "s", "--set", "adapters.spatial=false", "--set", "model.window=4", "--set", "model.ta_layers=1", "--set", "model.dim=16", "--set", "train.steps_per_epoch=3", "--epochs", "1", "--out", "m.ckpt"];
    let o = fdta(&args, d.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fdta(&["track", "--checkpoint", "m.ckpt", "--data", "s", "--out", "t.txt"], d.path()).status.success());
    // with the spatial adapter on the missing grids are a data error
    let on = ["train", "--data", "s", "--set", "model.window=4", "--set", "model.ta_layers=1", "--set", "model.dim=16", "--epochs", "0", "--out", "m2.ckpt"];
    assert_eq!(fdta(&on, d.path()).status.code(), Some(2));
}

#[test]
fn gradcheck_reports_below_tolerance() {
    let d = tempfile::tempdir().unwrap();
    let o = fdta(&["gradcheck", "--all", "--instances", "3", "--csv", "g.csv"], d.path());
    assert!(o.status.success());
    let last = stdout(&o).lines().last().unwrap().to_string();
    assert!(last.ends_with("PASS"), "{last}");
    let err: f64 = last.split("max_rel_error=").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!(err < 1e-4);
    assert!(std::fs::read_to_string(d.path().join("g.csv")).unwrap().lines().count() > 50);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let o = fdta(&["frobnicate"], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(fdta(&[], d.path()).status.code(), Some(1));
    assert_eq!(fdta(&["eval", "--gt", "x.txt"], d.path()).status.code(), Some(1));
    assert_eq!(fdta(&["--help"], d.path()).status.code(), Some(0));
    assert_eq!(fdta(&["eval", "--gt", "missing.txt", "--pred", "missing.txt"], d.path()).status.code(), Some(2));

    std::fs::write(d.path().join("bad.txt"), "1,1,0,0,nan-ish,5,1,-1,-1,-1\n").unwrap();
    assert_eq!(fdta(&["eval", "--gt", "bad.txt", "--pred", "bad.txt"], d.path()).status.code(), Some(2));
    simulate_small(d.path(), "s", "1");
    assert_eq!(fdta(&["train", "--data", "s", "--set", "model.dimm=8", "--out", "m.ckpt"], d.path()).status.code(), Some(2));
    assert_eq!(fdta(&["simulate", "--set", "n_frame=5", "--out", "t"], d.path()).status.code(), Some(2));
    assert_eq!(fdta(&["bench", "--variants", "fancy"], d.path()).status.code(), Some(2));
}

#[test]
fn every_subcommand_documents_its_flags() {
    let d = tempfile::tempdir().unwrap();
    for (sub, flags) in [
        ("simulate", &["--config", "--set", "--preset", "--seed", "--out"][..]),
        ("train", &["--config", "--set", "--data", "--epochs", "--seed", "--out", "--loss-csv"]),
        ("track", &["--checkpoint", "--data", "--out", "--config", "--similarity-threshold", "--max-misses", "--score-threshold"]),
        ("eval", &["--gt", "--pred", "--csv"]),
        ("analyze", &["--checkpoint", "--data", "--top-k", "--threshold", "--out"]),
        ("gradcheck", &["--all", "--case", "--instances", "--seed", "--tolerance", "--csv"]),
        ("bench", &["--variants", "--seeds", "--out"]),
    ] {
        let o = fdta(&[sub, "--help"], d.path());
        assert!(o.status.success());
        let help = stdout(&o);
        for f in flags {
            assert!(help.contains(f), "{sub} --help lacks {f}");
        }
    }
}
