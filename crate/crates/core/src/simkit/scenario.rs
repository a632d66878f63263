use crate::error::{bail, Result};
use crate::formats::{to_centi, to_f32_precision, DepthGrid};
use crate::geometry::Box2D;
use crate::rng::SimRng;
use crate::spatial::FeatureGrid;
use crate::diffcore::Tensor;
use crate::tracker::TrackRecord;

use super::config::{MotionPreset, ScenarioConfig};

/// Upper end of every depth the simulator produces.
pub const SCENE_DEPTH_MAX: f64 = 64.0;

const LONGEST_OCCLUSION: usize = 6;
const CONTEXT_NOISE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub id: u32,
    pub bbox: Box2D,
    pub depth: f64,
    /// Hidden from the detector in this frame.
    pub occluded: bool,
}

/// Detector output with the observation vectors the toy encoder consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: Box2D,
    pub score: f64,
    pub appearance: Vec<f64>,
    pub context: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    /// Per frame (index `frame − 1`), objects ordered by id.
    pub gt: Vec<Vec<GtObject>>,
    /// Unit appearance code per identity (index `id − 1`).
    pub appearance: Vec<Vec<f64>>,
    /// Latent pose per frame and identity.
    pub poses: Vec<Vec<Vec<f64>>>,
    pub depth: Vec<DepthGrid>,
    pub images: Vec<FeatureGrid>,
    pub detections: Vec<Vec<Detection>>,
}

impl Scenario {
    pub fn gt_records(&self) -> Vec<TrackRecord> {
        self.gt
            .iter()
            .enumerate()
            .flat_map(|(t, objs)| objs.iter().map(move |o| TrackRecord::new(t as u32 + 1, o.id, o.bbox, 1.0)))
            .collect()
    }

    pub fn gt_pairs(&self, frame: usize) -> Vec<(Box2D, u32)> {
        self.gt[frame].iter().map(|o| (o.bbox, o.id)).collect()
    }
}

/// Background depth, far at the top of the frame.
pub fn background_depth(y: f64, height: f64) -> f64 {
    60.0 - 30.0 * (y / height)
}

/// Object depth from its ground contact line plus an identity offset.
pub fn object_depth(bottom: f64, height: f64, offset: f64) -> f64 {
    40.0 - 32.0 * (bottom / height).clamp(0.0, 1.0) + offset
}

/// Reflects `x` into `[lo, hi]` as if bouncing off both walls.
fn fold(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let y = (x - lo).rem_euclid(2.0 * span);
    lo + if y > span { 2.0 * span - y } else { y }
}

/// Orthonormal vectors by Gram–Schmidt over Gaussian draws.
fn orthonormal(n: usize, dim: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v = rng.normal_vec(dim);
        for u in &out {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}

/// Unit codes with pairwise cosine `c`: `√c·u₀ + √(1−c)·uᵢ`.
pub fn appearance_codes(n: usize, dim: usize, c: f64, rng: &mut SimRng) -> Result<Vec<Vec<f64>>> {
    if dim < n + 1 {
        bail!(InvalidArgument, "{n} codes need dimension ≥ {}", n + 1);
    }
    let basis = orthonormal(n + 1, dim, rng);
    Ok((1..=n)
        .map(|i| basis[0].iter().zip(&basis[i]).map(|(a, b)| to_f32_precision(c.sqrt() * a + (1.0 - c).sqrt() * b)).collect())
        .collect())
}

fn centers(cfg: &ScenarioConfig, sizes: &[(f64, f64)], rng: &mut SimRng) -> Vec<Vec<(f64, f64)>> {
    let (w_arena, h_arena) = (cfg.width, cfg.height);
    let n = cfg.n_objects;
    let bounds = |i: usize| (sizes[i].0 / 2.0, w_arena - sizes[i].0 / 2.0, sizes[i].1 / 2.0, h_arena - sizes[i].1 / 2.0);
    let mut paths = vec![Vec::with_capacity(cfg.n_frames); n];
    let linear = |i: usize, rng: &mut SimRng, paths: &mut Vec<Vec<(f64, f64)>>| {
        let (x0, x1, y0, y1) = bounds(i);
        let (sx, sy) = (rng.range(x0, x1), rng.range(y0, y1));
        let a = rng.range(0.0, std::f64::consts::TAU);
        let speed = rng.range(1.5, 4.0);
        for t in 0..cfg.n_frames {
            let t = t as f64;
            paths[i].push((fold(sx + speed * a.cos() * t, x0, x1), fold(sy + speed * a.sin() * t, y0, y1)));
        }
    };
    match cfg.preset {
        MotionPreset::Linear => (0..n).for_each(|i| linear(i, rng, &mut paths)),
        MotionPreset::Crossing => {
            let pairs = n / 2;
            for k in 0..pairs {
                // both members reach the meeting point at frame m
                let m = ((k + 1) * cfg.n_frames / (pairs + 1)).min(cfg.n_frames - 1) as f64;
                let meet = (rng.range(0.3, 0.7) * w_arena, rng.range(0.35, 0.65) * h_arena);
                let a = rng.range(-0.4, 0.4);
                let speed = rng.range(2.0, 4.0);
                let b = std::f64::consts::PI + a + rng.range(-0.3, 0.3);
                let speed_b = rng.range(2.0, 4.0);
                for (i, ang, sp) in [(2 * k, a, speed), (2 * k + 1, b, speed_b)] {
                    let (x0, x1, y0, y1) = bounds(i);
                    let (mx, my) = (meet.0.clamp(x0, x1), meet.1.clamp(y0, y1));
                    for t in 0..cfg.n_frames {
                        let dt = t as f64 - m;
                        paths[i].push((fold(mx + sp * ang.cos() * dt, x0, x1), fold(my + sp * ang.sin() * dt, y0, y1)));
                    }
                }
            }
            if n % 2 == 1 {
                linear(n - 1, rng, &mut paths);
            }
        }
        MotionPreset::Circular => {
            for (i, path) in paths.iter_mut().enumerate() {
                let (x0, x1, y0, y1) = bounds(i);
                let ry = rng.range(0.1, 0.45) * (y1 - y0);
                let rx = rng.range(0.3, 0.9) * (x1 - x0) / 2.0;
                let omega = rng.range(0.02, 0.05) * if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
                let phase = rng.range(0.0, std::f64::consts::TAU);
                let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
                for t in 0..cfg.n_frames {
                    let a = phase + omega * t as f64;
                    path.push((fold(cx + rx * a.cos(), x0, x1), fold(cy + ry * a.sin(), y0, y1)));
                }
            }
        }
        MotionPreset::RandomWalk => {
            for (i, path) in paths.iter_mut().enumerate() {
                let (x0, x1, y0, y1) = bounds(i);
                let (mut x, mut y) = (rng.range(x0, x1), rng.range(y0, y1));
                let (mut vx, mut vy) = (rng.normal() * 2.0, rng.normal() * 2.0);
                for _ in 0..cfg.n_frames {
                    path.push((fold(x, x0, x1), fold(y, y0, y1)));
                    vx = 0.9 * vx + 0.8 * rng.normal();
                    vy = 0.9 * vy + 0.8 * rng.normal();
                    x += vx;
                    y += vy;
                }
            }
        }
    }
    paths
}

/// Dense depth map: each cell holds the nearest surface at its center.
pub fn render_depth(cfg: &ScenarioConfig, objects: &[GtObject]) -> DepthGrid {
    let (rows, cols) = (cfg.depth_rows, cfg.depth_cols);
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let py = (r as f64 + 0.5) * cfg.height / rows as f64;
        for c in 0..cols {
            let px = (c as f64 + 0.5) * cfg.width / cols as f64;
            let d = objects
                .iter()
                .filter(|o| o.bbox.contains(px, py))
                .map(|o| o.depth)
                .fold(background_depth(py, cfg.height), f64::min);
            values.push(d as f32);
        }
    }
    DepthGrid { rows, cols, values }
}

/// Coarse feature image: per cell the visible code, an occupancy flag and a
/// haze value proportional to visible depth, all with Gaussian noise.
pub fn render_image(cfg: &ScenarioConfig, objects: &[GtObject], codes: &[Vec<f64>], rng: &mut SimRng) -> FeatureGrid {
    let (rows, cols, a) = (cfg.image_rows, cfg.image_cols, cfg.appearance_dim);
    let ch = a + 2;
    let mut data = Vec::with_capacity(rows * cols * ch);
    for r in 0..rows {
        let py = (r as f64 + 0.5) * cfg.height / rows as f64;
        for c in 0..cols {
            let px = (c as f64 + 0.5) * cfg.width / cols as f64;
            let front = objects.iter().filter(|o| o.bbox.contains(px, py)).min_by(|x, y| x.depth.total_cmp(&y.depth));
            let depth = front.map_or(background_depth(py, cfg.height), |o| o.depth);
            for k in 0..a {
                let base = front.map_or(0.0, |o| codes[o.id as usize - 1][k]);
                data.push(to_f32_precision(base + cfg.image_noise * rng.normal()));
            }
            data.push(to_f32_precision(if front.is_some() { 1.0 } else { 0.0 } + cfg.image_noise * rng.normal()));
            data.push(to_f32_precision(depth / SCENE_DEPTH_MAX + cfg.image_noise * rng.normal()));
        }
    }
    FeatureGrid::new(rows, cols, Tensor::new(vec![rows * cols, ch], data).expect("image shape")).expect("image grid")
}

pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = SimRng::derive(cfg.seed, 1);
    let sizes: Vec<(f64, f64)> = (0..cfg.n_objects)
        .map(|_| {
            let s = rng.range(0.8, 1.2);
            (to_centi(40.0 * s), to_centi(90.0 * s))
        })
        .collect();
    if sizes.iter().any(|&(w, h)| w >= cfg.width || h >= cfg.height) || sizes.iter().map(|(w, h)| w * h).sum::<f64>() > cfg.width * cfg.height {
        bail!(InvalidArgument, "arena {}x{} too small for {} objects", cfg.width, cfg.height, cfg.n_objects);
    }
    let offsets: Vec<f64> = (0..cfg.n_objects).map(|_| rng.range(-3.0, 3.0)).collect();
    let paths = centers(cfg, &sizes, &mut rng);

    let mut occ_rng = SimRng::derive(cfg.seed, 2);
    let mut remaining = vec![0usize; cfg.n_objects];
    let mut gt = Vec::with_capacity(cfg.n_frames);
    for t in 0..cfg.n_frames {
        let mut objs = Vec::with_capacity(cfg.n_objects);
        for i in 0..cfg.n_objects {
            if remaining[i] == 0 && occ_rng.bernoulli(cfg.occlusion_rate) {
                remaining[i] = 1 + occ_rng.below(LONGEST_OCCLUSION);
            }
            let occluded = remaining[i] > 0;
            remaining[i] = remaining[i].saturating_sub(1);
            let (cx, cy) = paths[i][t];
            let (w, h) = sizes[i];
            let bbox = Box2D { x: to_centi(cx - w / 2.0), y: to_centi(cy - h / 2.0), w, h };
            let depth = to_f32_precision(object_depth(bbox.y2(), cfg.height, offsets[i]));
            objs.push(GtObject { id: i as u32 + 1, bbox, depth, occluded });
        }
        gt.push(objs);
    }

    let mut code_rng = SimRng::derive(cfg.seed, 3);
    let appearance = appearance_codes(cfg.n_objects, cfg.appearance_dim, cfg.base_similarity, &mut code_rng)?;
    let mut pose_rng = SimRng::derive(cfg.seed, 4);
    let mut pose: Vec<Vec<f64>> = (0..cfg.n_objects).map(|_| pose_rng.normal_vec(cfg.context_dim)).collect();
    let mut poses = Vec::with_capacity(cfg.n_frames);
    for _ in 0..cfg.n_frames {
        poses.push(pose.iter().map(|p| p.iter().map(|&v| to_f32_precision(v)).collect()).collect());
        for p in pose.iter_mut() {
            p.iter_mut().for_each(|v| *v = 0.95 * *v + 0.3 * pose_rng.normal());
        }
    }
    let depth = gt.iter().map(|objs| render_depth(cfg, objs)).collect();
    let mut img_rng = SimRng::derive(cfg.seed, 5);
    let images = gt.iter().map(|objs| render_image(cfg, objs, &appearance, &mut img_rng)).collect();

    let mut sc = Scenario { cfg: cfg.clone(), gt, appearance, poses, depth, images, detections: Vec::new() };
    sc.detections = corrupt_detections(&sc, cfg.box_noise, cfg.drop_prob, cfg.seed ^ 0xD37EC7)?;
    Ok(sc)
}

/// Detector simulation: visible objects are kept with probability
/// `1 − drop_prob` and jittered by `N(0, σ_box²)` on each box field; clutter
/// detections are added per the scenario's clutter rate. Rows inside a frame
/// are shuffled.
pub fn corrupt_detections(sc: &Scenario, sigma_box: f64, drop_prob: f64, seed: u64) -> Result<Vec<Vec<Detection>>> {
    if !(sigma_box >= 0.0) || !(0.0..1.0).contains(&drop_prob) {
        bail!(InvalidArgument, "need σ_box ≥ 0 and drop_prob in [0, 1)");
    }
    let cfg = &sc.cfg;
    let mut rng = SimRng::new(seed);
    let a = cfg.appearance_dim;
    let mut out = Vec::with_capacity(sc.gt.len());
    for (t, objs) in sc.gt.iter().enumerate() {
        let mut dets = Vec::new();
        for o in objs {
            if o.occluded || rng.bernoulli(drop_prob) {
                continue;
            }
            let b = o.bbox;
            let bbox = Box2D {
                x: to_centi(b.x + sigma_box * rng.normal()),
                y: to_centi(b.y + sigma_box * rng.normal()),
                w: to_centi((b.w + sigma_box * rng.normal()).max(1.0)),
                h: to_centi((b.h + sigma_box * rng.normal()).max(1.0)),
            };
            let score = (rng.range(0.6, 1.0) * 1e4).round() / 1e4;
            let code = &sc.appearance[o.id as usize - 1];
            let appearance = code.iter().map(|&v| to_f32_precision(v + cfg.appearance_noise * rng.normal())).collect();
            let context = sc.poses[t][o.id as usize - 1].iter().map(|&v| to_f32_precision(v + CONTEXT_NOISE * rng.normal())).collect();
            dets.push(Detection { bbox, score, appearance, context });
        }
        let clutter = cfg.clutter_rate.floor() as usize + usize::from(rng.bernoulli(cfg.clutter_rate.fract()));
        for _ in 0..clutter {
            let s = rng.range(0.8, 1.2);
            let (w, h) = (to_centi(40.0 * s), to_centi(90.0 * s));
            let bbox = Box2D { x: to_centi(rng.range(0.0, (cfg.width - w).max(0.0))), y: to_centi(rng.range(0.0, (cfg.height - h).max(0.0))), w, h };
            let score = (rng.range(0.1, 0.5) * 1e4).round() / 1e4;
            let appearance = (0..a).map(|_| to_f32_precision(rng.normal() / (a as f64).sqrt())).collect();
            let context = (0..cfg.context_dim).map(|_| to_f32_precision(rng.normal())).collect();
            dets.push(Detection { bbox, score, appearance, context });
        }
        for i in (1..dets.len()).rev() {
            dets.swap(i, rng.below(i + 1));
        }
        out.push(dets);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;

    fn small(preset: MotionPreset, n: usize, frames: usize, seed: u64) -> ScenarioConfig {
        ScenarioConfig { preset, n_objects: n, n_frames: frames, seed, ..Default::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        for p in MotionPreset::ALL {
            let cfg = ScenarioConfig { occlusion_rate: 0.05, box_noise: 2.0, drop_prob: 0.1, clutter_rate: 0.7, ..small(p, 5, 40, 9) };
            assert_eq!(generate_scenario(&cfg).unwrap(), generate_scenario(&cfg).unwrap());
            let other = generate_scenario(&ScenarioConfig { seed: 10, ..cfg.clone() }).unwrap();
            assert_ne!(other, generate_scenario(&cfg).unwrap());
        }
    }

    #[test]
    fn single_linear_object_moves_at_constant_velocity() {
        let sc = generate_scenario(&small(MotionPreset::Linear, 1, 30, 3)).unwrap();
        let c: Vec<(f64, f64)> = sc.gt.iter().map(|f| f[0].bbox.center()).collect();
        // away from the walls consecutive steps are equal up to rounding
        let steps: Vec<(f64, f64)> = c.windows(2).map(|w| (w[1].0 - w[0].0, w[1].1 - w[0].1)).collect();
        let bounces = steps.windows(2).filter(|s| (s[0].0 - s[1].0).abs() > 0.05 || (s[0].1 - s[1].1).abs() > 0.05).count();
        assert!(bounces <= 4, "{bounces}");
        let same = steps.iter().filter(|s| (s.0 - steps[0].0).abs() < 0.05 && (s.1 - steps[0].1).abs() < 0.05).count();
        assert!(same * 10 >= steps.len() * 8, "{same} of {}", steps.len());
    }

    #[test]
    fn crossing_pairs_overlap() {
        for seed in 0..20 {
            let sc = generate_scenario(&small(MotionPreset::Crossing, 2, 60, seed)).unwrap();
            let best = sc.gt.iter().map(|f| iou(&f[0].bbox, &f[1].bbox)).fold(0.0, f64::max);
            assert!(best > 0.3, "seed {seed}: {best}");
        }
    }

    #[test]
    fn boxes_stay_inside_the_arena() {
        for p in MotionPreset::ALL {
            let sc = generate_scenario(&small(p, 8, 200, 1)).unwrap();
            for o in sc.gt.iter().flatten() {
                assert!(o.bbox.x >= -0.01 && o.bbox.y >= -0.01);
                assert!(o.bbox.x2() <= 640.01 && o.bbox.y2() <= 360.01, "{p}: {:?}", o.bbox);
            }
        }
    }

    #[test]
    fn depth_grid_shows_the_nearest_surface() {
        let sc = generate_scenario(&small(MotionPreset::Crossing, 8, 100, 4)).unwrap();
        let cfg = &sc.cfg;
        for (objs, grid) in sc.gt.iter().zip(&sc.depth) {
            for o in objs {
                let (cx, cy) = o.bbox.center();
                let c = ((cx / cfg.width * cfg.depth_cols as f64) as usize).min(cfg.depth_cols - 1);
                let r = ((cy / cfg.height * cfg.depth_rows as f64) as usize).min(cfg.depth_rows - 1);
                let (px, py) = ((c as f64 + 0.5) * cfg.width / cfg.depth_cols as f64, (r as f64 + 0.5) * cfg.height / cfg.depth_rows as f64);
                let nearest = objs.iter().filter(|q| q.bbox.contains(px, py)).map(|q| q.depth).fold(f64::INFINITY, f64::min);
                assert!(o.bbox.contains(px, py));
                assert_eq!(grid.at(r, c) as f64, nearest);
                assert!(grid.at(r, c) as f64 <= o.depth);
            }
        }
    }

    #[test]
    fn codes_have_the_requested_similarity() {
        let mut rng = SimRng::new(0);
        let codes = appearance_codes(6, 10, 0.9, &mut rng).unwrap();
        for i in 0..6 {
            let n: f64 = codes[i].iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-6);
            for j in i + 1..6 {
                let c: f64 = codes[i].iter().zip(&codes[j]).map(|(a, b)| a * b).sum();
                assert!((c - 0.9).abs() < 1e-6);
            }
        }
        assert!(appearance_codes(10, 10, 0.9, &mut rng).is_err());
    }

    #[test]
    fn clean_detections_equal_gt() {
        let sc = generate_scenario(&small(MotionPreset::Circular, 4, 20, 2)).unwrap();
        let dets = corrupt_detections(&sc, 0.0, 0.0, 5).unwrap();
        for (objs, d) in sc.gt.iter().zip(&dets) {
            let mut a: Vec<[f64; 4]> = objs.iter().map(|o| o.bbox.to_array()).collect();
            let mut b: Vec<[f64; 4]> = d.iter().map(|x| x.bbox.to_array()).collect();
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            b.sort_by(|x, y| x.partial_cmp(y).unwrap());
            assert_eq!(a, b);
        }
        assert!(corrupt_detections(&sc, -1.0, 0.0, 5).is_err());
        assert!(corrupt_detections(&sc, 0.0, 1.0, 5).is_err());
    }

    #[test]
    fn drop_rate_matches_binomial() {
        let sc = generate_scenario(&small(MotionPreset::RandomWalk, 8, 200, 6)).unwrap();
        let eps = 0.1;
        let kept: usize = corrupt_detections(&sc, 0.0, 1.0 - eps, 11).unwrap().iter().map(Vec::len).sum();
        let n = 8.0 * 200.0;
        let sd = (n * eps * (1.0 - eps)).sqrt();
        assert!((kept as f64 - n * eps).abs() < 4.0 * sd, "{kept}");
    }

    #[test]
    fn jitter_lowers_iou_on_average() {
        let sc = generate_scenario(&small(MotionPreset::Linear, 8, 50, 7)).unwrap();
        let mean_iou = |sigma: f64| -> f64 {
            let mut s = 0.0;
            let mut n = 0.0;
            for seed in 0..4 {
                for (objs, dets) in sc.gt.iter().zip(corrupt_detections(&sc, sigma, 0.0, seed).unwrap()) {
                    for d in dets {
                        s += objs.iter().map(|o| iou(&o.bbox, &d.bbox)).fold(0.0, f64::max);
                        n += 1.0;
                    }
                }
            }
            s / n
        };
        let v: Vec<f64> = [0.0, 1.0, 3.0, 6.0, 10.0].iter().map(|&s| mean_iou(s)).collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]), "{v:?}");
    }

    #[test]
    fn occlusion_hides_detections_only() {
        let cfg = ScenarioConfig { occlusion_rate: 0.2, ..small(MotionPreset::Linear, 3, 100, 8) };
        let sc = generate_scenario(&cfg).unwrap();
        let hidden = sc.gt.iter().flatten().filter(|o| o.occluded).count();
        assert!(hidden > 0);
        assert_eq!(sc.gt.iter().map(Vec::len).sum::<usize>(), 300);
        let visible: usize = sc.gt.iter().map(|f| f.iter().filter(|o| !o.occluded).count()).sum();
        assert_eq!(sc.detections.iter().map(Vec::len).sum::<usize>(), visible);
    }

    #[test]
    fn arena_too_small() {
        let cfg = ScenarioConfig { width: 50.0, height: 60.0, ..small(MotionPreset::Linear, 2, 5, 0) };
        assert!(generate_scenario(&cfg).is_err());
    }
}
