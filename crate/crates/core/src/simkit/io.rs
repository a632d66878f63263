//! Scenario directories:
//!
//! ```text
//! scenario.cfg            generator settings ([scenario] section)
//! appearance.appr         identity codes, one row per id
//! gt/gt.txt               MOTChallenge ground truth
//! gt/objects.txt          frame,id,depth,occluded per ground-truth row
//! gt/poses.appr           latent pose per frame and id
//! det/det.txt             detections, id −1
//! det/observations.appr   appearance ‖ pose observation per detection row
//! img/images.appr         feature image cells, frame-major
//! depth/NNNNNN.dgrid      dense depth per frame
//! ```

use std::fs;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{bail, Error, Result};
use crate::formats::{mot_line, parse_mot, ApprTable, DepthGrid};
use crate::spatial::FeatureGrid;

use super::config::ScenarioConfig;
use super::scenario::{Detection, GtObject, Scenario};

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn depth_file_name(frame: u32) -> String {
    format!("{frame:06}.dgrid")
}

pub fn export_scenario(sc: &Scenario, dir: &Path) -> Result<()> {
    let cfg = &sc.cfg;
    write(&dir.join("scenario.cfg"), cfg.to_ini_string())?;
    write(&dir.join("appearance.appr"), ApprTable::from_rows(cfg.appearance_dim, &sc.appearance)?.to_bytes())?;

    let mut gt = String::new();
    let mut objects = String::new();
    let mut poses = Vec::new();
    for (t, objs) in sc.gt.iter().enumerate() {
        let f = t as u32 + 1;
        for o in objs {
            gt.push_str(&mot_line(f, o.id as i64, &o.bbox, 1.0));
            objects.push_str(&format!("{f},{},{},{}\n", o.id, o.depth, u8::from(o.occluded)));
        }
        poses.extend(sc.poses[t].iter().cloned());
    }
    write(&dir.join("gt/gt.txt"), gt)?;
    write(&dir.join("gt/objects.txt"), objects)?;
    write(&dir.join("gt/poses.appr"), ApprTable::from_rows(cfg.context_dim, &poses)?.to_bytes())?;

    let mut det = String::new();
    let mut obs = Vec::new();
    for (t, dets) in sc.detections.iter().enumerate() {
        for d in dets {
            det.push_str(&mot_line(t as u32 + 1, -1, &d.bbox, d.score));
            obs.push([d.appearance.as_slice(), d.context.as_slice()].concat());
        }
    }
    write(&dir.join("det/det.txt"), det)?;
    write(&dir.join("det/observations.appr"), ApprTable::from_rows(cfg.appearance_dim + cfg.context_dim, &obs)?.to_bytes())?;

    let ch = cfg.appearance_dim + 2;
    let cells: Vec<Vec<f64>> = sc.images.iter().flat_map(|img| (0..img.data.rows()).map(|r| img.data.row(r).to_vec())).collect();
    write(&dir.join("img/images.appr"), ApprTable::from_rows(ch, &cells)?.to_bytes())?;
    for (t, grid) in sc.depth.iter().enumerate() {
        write(&dir.join("depth").join(depth_file_name(t as u32 + 1)), grid.to_bytes())?;
    }
    Ok(())
}

/// What to read besides ground truth and detections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub depth: bool,
    pub images: bool,
}

impl LoadOptions {
    pub const ALL: LoadOptions = LoadOptions { depth: true, images: true };
}

fn read_table(path: &Path, dim: usize) -> Result<ApprTable> {
    let t = ApprTable::from_bytes(&fs::read(path)?)?;
    if t.dim != dim {
        bail!(Format, "{}: dimension {} where {dim} was expected", path.display(), t.dim);
    }
    Ok(t)
}

pub fn load_scenario_config(dir: &Path) -> Result<ScenarioConfig> {
    ScenarioConfig::from_ini_str(&fs::read_to_string(dir.join("scenario.cfg"))?)
}

/// Reads a scenario directory. Depth grids and images are only touched when
/// requested; skipped parts come back empty.
pub fn load_scenario(dir: &Path, opts: LoadOptions) -> Result<Scenario> {
    let cfg = load_scenario_config(dir)?;
    let n = cfg.n_frames;
    let codes = read_table(&dir.join("appearance.appr"), cfg.appearance_dim)?;
    let appearance = (0..codes.count).map(|i| codes.row(i)).collect();

    let gt_rows = parse_mot(&fs::read_to_string(dir.join("gt/gt.txt"))?)?;
    let objects_text = fs::read_to_string(dir.join("gt/objects.txt"))?;
    let extra: Vec<&str> = objects_text.lines().filter(|l| !l.trim().is_empty()).collect();
    if extra.len() != gt_rows.len() {
        bail!(Format, "gt/objects.txt has {} rows for {} ground-truth rows", extra.len(), gt_rows.len());
    }
    let mut gt: Vec<Vec<GtObject>> = vec![Vec::new(); n];
    for (row, line) in gt_rows.iter().zip(extra) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format(format!("gt/objects.txt: bad row {line:?}"));
        if f.len() != 4 || f[0].parse::<u32>().ok() != Some(row.frame) || f[1].parse::<i64>().ok() != Some(row.id) {
            return Err(bad());
        }
        if row.frame as usize > n || row.id < 1 {
            bail!(Format, "ground-truth row frame {} id {} out of range", row.frame, row.id);
        }
        let depth: f64 = f[2].parse().map_err(|_| bad())?;
        gt[row.frame as usize - 1].push(GtObject { id: row.id as u32, bbox: row.bbox, depth, occluded: f[3] == "1" });
    }
    let pose_table = read_table(&dir.join("gt/poses.appr"), cfg.context_dim)?;
    if pose_table.count != n * cfg.n_objects {
        bail!(Format, "gt/poses.appr holds {} rows, expected {}", pose_table.count, n * cfg.n_objects);
    }
    let poses = (0..n).map(|t| (0..cfg.n_objects).map(|i| pose_table.row(t * cfg.n_objects + i)).collect()).collect();

    let det_rows = parse_mot(&fs::read_to_string(dir.join("det/det.txt"))?)?;
    let obs = read_table(&dir.join("det/observations.appr"), cfg.appearance_dim + cfg.context_dim)?;
    if obs.count != det_rows.len() {
        bail!(Format, "{} observations for {} detections", obs.count, det_rows.len());
    }
    let mut detections: Vec<Vec<Detection>> = vec![Vec::new(); n];
    let mut last = 0;
    for (i, r) in det_rows.iter().enumerate() {
        if r.frame as usize > n || r.frame < last {
            bail!(Format, "detection rows must be frame-ordered within 1..={n}");
        }
        last = r.frame;
        let v = obs.row(i);
        let (a, c) = v.split_at(cfg.appearance_dim);
        detections[r.frame as usize - 1].push(Detection { bbox: r.bbox, score: r.conf, appearance: a.to_vec(), context: c.to_vec() });
    }

    let mut images = Vec::new();
    if opts.images {
        let cells = cfg.image_rows * cfg.image_cols;
        let ch = cfg.appearance_dim + 2;
        let t = read_table(&dir.join("img/images.appr"), ch)?;
        if t.count != n * cells {
            bail!(Format, "img/images.appr holds {} cells, expected {}", t.count, n * cells);
        }
        for f in 0..n {
            let data: Vec<f64> = t.values[f * cells * ch..(f + 1) * cells * ch].iter().map(|&v| v as f64).collect();
            images.push(FeatureGrid::new(cfg.image_rows, cfg.image_cols, Tensor::new(vec![cells, ch], data)?)?);
        }
    }
    let mut depth = Vec::new();
    if opts.depth {
        for f in 1..=n as u32 {
            let g = DepthGrid::from_bytes(&fs::read(dir.join("depth").join(depth_file_name(f)))?)?;
            if g.rows != cfg.depth_rows || g.cols != cfg.depth_cols {
                bail!(Format, "depth grid for frame {f} is {}x{}", g.rows, g.cols);
            }
            depth.push(g);
        }
    }
    Ok(Scenario { cfg, gt, appearance, poses, depth, images, detections })
}
