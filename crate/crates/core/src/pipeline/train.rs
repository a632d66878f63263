use std::collections::BTreeSet;

use crate::diffcore::{AdamW, Bound, Graph, Tensor, Var};
use crate::error::{bail, Error, Result};
use crate::geometry::{focal_loss_logits, giou_loss_var, l1_loss_var, Box2D, FOCAL_ALPHA, FOCAL_GAMMA};
use crate::identity::{ia_loss_var, project, sample_pairs, LabeledEmbedding, DEFAULT_IOU_THRESHOLD};
use crate::rng::SimRng;
use crate::simkit::{augment_batch, build_clip, sample_clip_frames, Detection, Scenario, TrainClip};
use crate::spatial::weighted_depth_loss_var;

use super::config::RunConfig;
use super::losses::{id_logits, id_loss_var, LossParts};
use super::model::{prepare_frames, FdtaModel, InputDims, PreparedFrame};

/// Mean loss components of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub parts: LossParts,
    pub total: f64,
    pub steps: usize,
    /// Steps whose contrastive pool held no positive pair.
    pub ia_empty_steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,total,cls,bbox,giou,id,depth,ia,ia_empty_steps\n");
        for e in &self.epochs {
            let p = &e.parts;
            s.push_str(&format!(
                "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{}\n",
                e.epoch, e.total, p.cls, p.bbox, p.giou, p.id, p.depth, p.ia, e.ia_empty_steps
            ));
        }
        s
    }
}

/// Loss of one clip as a graph node, with the reported components.
pub struct ClipLoss {
    pub total: Var,
    pub parts: LossParts,
    pub ia_empty: bool,
}

/// A scenario with its per-frame model inputs.
pub struct TrainingData<'a> {
    pub scenario: &'a Scenario,
    pub frames: Vec<PreparedFrame>,
}

impl<'a> TrainingData<'a> {
    pub fn new(model: &FdtaModel, scenario: &'a Scenario) -> Result<Self> {
        model.check_scenario(&scenario.cfg)?;
        Ok(Self { scenario, frames: prepare_frames(scenario, model.bins())? })
    }
}

fn scalar(g: &Graph, v: Var) -> f64 {
    g.value(v).item()
}

fn weighted_sum(g: &mut Graph, terms: &[(f64, Option<Var>)]) -> Var {
    let mut acc = g.constant(Tensor::scalar(0.0));
    for &(w, t) in terms {
        if let Some(t) = t {
            if w != 0.0 {
                let s = g.scale(t, w);
                acc = g.add(acc, s);
            }
        }
    }
    acc
}

fn mean_of(g: &mut Graph, vs: &[Var]) -> Option<Var> {
    let (&first, rest) = vs.split_first()?;
    let mut acc = first;
    for &v in rest {
        acc = g.add(acc, v);
    }
    Some(g.scale(acc, 1.0 / vs.len() as f64))
}

/// Builds the loss of one (possibly augmented) clip: detection and depth
/// terms on every frame, identity prediction for the anchor frame from the
/// history frames, and the contrastive term over the whole clip when
/// `with_ia` is set.
pub fn clip_loss(model: &FdtaModel, g: &mut Graph, p: &Bound, data: &TrainingData, clip: &TrainClip, with_ia: bool) -> Result<ClipLoss> {
    let cfg = &model.cfg;
    let mut cls_terms = Vec::new();
    let mut l1_terms = Vec::new();
    let mut giou_terms = Vec::new();
    let mut depth_terms = Vec::new();
    // per frame: (offset of its first row in the stacked embeddings, node)
    let mut frame_rows: Vec<Option<(usize, Var)>> = Vec::new();
    let mut offset = 0;

    for cf in &clip.frames {
        let t = cf.frame as usize - 1;
        let prepared = &data.frames[t];
        let tokens = model.vision_tokens(g, p, &prepared.image)?;
        let depth = model.depth_pass(g, p, tokens)?;
        if let (Some((logits, _, _)), Some((targets, fg))) = (&depth, &prepared.depth) {
            depth_terms.push(weighted_depth_loss_var(g, *logits, targets, fg, cfg.effective_fg_weight())?);
        }
        if cf.obs.is_empty() {
            frame_rows.push(None);
            continue;
        }
        let dets: Vec<&Detection> = cf.obs.iter().map(|o| &o.det).collect();
        let out = model.forward_objects(g, p, &dets, tokens, depth.as_ref())?;

        let n = dets.len();
        let targets: Vec<usize> = cf.obs.iter().map(|o| o.identity.is_some() as usize).collect();
        let focal = focal_loss_logits(g, out.cls, &targets, None, FOCAL_ALPHA, FOCAL_GAMMA)?;
        cls_terms.push(g.scale(focal, 1.0 / n as f64));
        let labeled: Vec<usize> = (0..n).filter(|&i| cf.obs[i].identity.is_some()).collect();
        if !labeled.is_empty() {
            let gt = data.scenario.gt_pairs(t);
            let target_boxes: Vec<Box2D> = labeled
                .iter()
                .map(|&i| {
                    let id = cf.obs[i].identity.unwrap();
                    model.box_target(&gt.iter().find(|(_, gid)| *gid == id).expect("labels come from this frame").0)
                })
                .collect();
            let pred = g.gather_rows(out.boxes, &labeled);
            let k = 1.0 / labeled.len() as f64;
            let l1 = l1_loss_var(g, pred, &target_boxes)?;
            l1_terms.push(g.scale(l1, k));
            let gi = giou_loss_var(g, pred, &target_boxes)?;
            giou_terms.push(g.scale(gi, k));
        }
        frame_rows.push(Some((offset, out.embeddings)));
        offset += n;
    }

    let stacked: Vec<Var> = frame_rows.iter().flatten().map(|&(_, v)| v).collect();
    let all = if stacked.is_empty() { None } else { Some(g.concat_rows(&stacked)) };

    let id_term = match all {
        Some(all) => identity_term(model, g, p, clip, &frame_rows, all, offset)?,
        None => None,
    };

    let mut ia_empty = false;
    let ia_term = match (with_ia && cfg.identity, all) {
        (true, Some(all)) => {
            let mut pool = Vec::with_capacity(offset);
            for cf in clip.frames.iter() {
                for o in &cf.obs {
                    pool.push(LabeledEmbedding { embedding: Vec::new(), frame: cf.frame, identity: o.identity, iou: o.iou });
                }
            }
            let pairs = sample_pairs(&pool, cfg.iou_filter.then_some(DEFAULT_IOU_THRESHOLD));
            let z = project(g, p, all, model.phi.as_ref())?;
            let l = ia_loss_var(g, z, &pairs, cfg.tau)?;
            ia_empty = l.is_none();
            l
        }
        _ => None,
    };

    let cls = mean_of(g, &cls_terms);
    let bbox = mean_of(g, &l1_terms);
    let giou = mean_of(g, &giou_terms);
    let depth = mean_of(g, &depth_terms);
    let w = &cfg.weights;
    let total = weighted_sum(g, &[(w.cls, cls), (w.bbox, bbox), (w.giou, giou), (w.id, id_term), (w.depth, depth), (w.ia, ia_term)]);
    let val = |v: Option<Var>| v.map_or(0.0, |v| scalar(g, v));
    let parts = LossParts { cls: val(cls), bbox: val(bbox), giou: val(giou), id: val(id_term), depth: val(depth), ia: val(ia_term) };
    Ok(ClipLoss { total, parts, ia_empty })
}

/// Cross-entropy of the anchor frame's labeled detections against the
/// trajectories assembled from the history frames' (augmented) track labels.
fn identity_term(
    model: &FdtaModel,
    g: &mut Graph,
    p: &Bound,
    clip: &TrainClip,
    frame_rows: &[Option<(usize, Var)>],
    all: Var,
    total_rows: usize,
) -> Result<Option<Var>> {
    let (anchor, history) = clip.frames.split_last().expect("clips are non-empty");
    let Some((anchor_offset, _)) = frame_rows[history.len()] else { return Ok(None) };
    let labeled: Vec<usize> = (0..anchor.obs.len()).filter(|&i| anchor.obs[i].identity.is_some()).collect();
    if labeled.is_empty() {
        return Ok(None);
    }

    let keys: Vec<u32> = history
        .iter()
        .flat_map(|f| f.obs.iter().filter(|o| o.visible).filter_map(|o| o.track_label))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let refs = if keys.is_empty() {
        None
    } else {
        // slot row per key and history frame; `total_rows` is the zero row
        let zero = g.constant(Tensor::zeros(&[1, model.cfg.dim]));
        let ext = g.concat_rows(&[all, zero]);
        let mut per_key = Vec::with_capacity(keys.len());
        for &k in &keys {
            let slots: Vec<Option<usize>> = history
                .iter()
                .zip(frame_rows)
                .map(|(f, rows)| {
                    let (off, _) = (*rows)?;
                    f.obs.iter().position(|o| o.visible && o.track_label == Some(k)).map(|i| off + i)
                })
                .collect();
            let last = slots.iter().rposition(Option::is_some).expect("keys come from visible observations");
            let r = match &model.ta {
                Some(ta) => {
                    let idx: Vec<usize> = slots.iter().map(|s| s.unwrap_or(total_rows)).collect();
                    let presence: Vec<bool> = slots.iter().map(Option::is_some).collect();
                    let raw = g.gather_rows(ext, &idx);
                    let out = ta.encode(g, p, raw, &presence)?;
                    g.gather_rows(out, &[last])
                }
                None => g.gather_rows(all, &[slots[last].unwrap()]),
            };
            per_key.push(r);
        }
        Some(g.concat_rows(&per_key))
    };

    let rows: Vec<usize> = labeled.iter().map(|&i| anchor_offset + i).collect();
    let e = g.gather_rows(all, &rows);
    let targets: Vec<usize> = labeled
        .iter()
        .map(|&i| {
            let id = anchor.obs[i].identity.unwrap();
            keys.iter().position(|&k| k == id).unwrap_or(keys.len())
        })
        .collect();
    let logits = id_logits(g, e, refs, p.var(model.id_scale), p.var(model.new_logit));
    Ok(Some(id_loss_var(g, logits, &targets)?))
}

/// Samples one augmented training clip.
pub fn sample_clip(cfg: &RunConfig, scenarios: &[Scenario], rng: &mut SimRng) -> Result<TrainClip> {
    let s = rng.below(scenarios.len());
    let sc = &scenarios[s];
    let len = cfg.clip_len().min(sc.cfg.n_frames);
    let Some(frames) = sample_clip_frames(sc.cfg.n_frames, len, cfg.max_interval, rng) else {
        bail!(InvalidArgument, "scenario {s} with {} frames cannot hold a clip of {len}", sc.cfg.n_frames);
    };
    let clip = build_clip(sc, s, &frames);
    let seed = rng.next_u64();
    Ok(augment_batch(&[clip], cfg.occlusion_prob, cfg.switch_prob, seed).remove(0))
}

/// Trains a fresh model on the given scenarios. Deterministic per seed.
/// The contrastive term is skipped during the first `ia_warmup_epochs`.
pub fn train_toy(cfg: &RunConfig, scenarios: &[Scenario]) -> Result<(FdtaModel, TrainReport)> {
    let Some(first) = scenarios.first() else {
        bail!(InvalidArgument, "training needs at least one scenario");
    };
    let mut model = FdtaModel::new(cfg, InputDims::of(&first.cfg))?;
    let report = train_model(&mut model, scenarios)?;
    Ok((model, report))
}

#[allow(clippy::too_many_arguments)]
fn run_steps(
    model: &mut FdtaModel,
    opt: &mut AdamW,
    rng: &mut SimRng,
    scenarios: &[Scenario],
    data: &[TrainingData],
    epoch: usize,
    steps: usize,
    with_ia: bool,
) -> Result<EpochLog> {
    let cfg = model.cfg.clone();
    let mut sum = LossParts::default();
    let mut total = 0.0;
    let mut empty = 0;
    for step in 0..steps {
        let clip = sample_clip(&cfg, scenarios, rng)?;
        let mut g = Graph::new();
        let p = model.store.bind(&mut g, true);
        let loss = clip_loss(model, &mut g, &p, &data[clip.scenario], &clip, with_ia)?;
        let value = g.value(loss.total).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss {value} at epoch {epoch} step {step}: {:?}", loss.parts)));
        }
        let grads = g.backward(loss.total);
        opt.step(&mut model.store, &p, &grads);
        sum.add(&loss.parts);
        total += value;
        empty += loss.ia_empty as usize;
    }
    let k = 1.0 / steps.max(1) as f64;
    Ok(EpochLog { epoch, parts: sum.scaled(k), total: total * k, steps, ia_empty_steps: empty })
}

/// Runs the configured schedule on an existing model.
pub fn train_model(model: &mut FdtaModel, scenarios: &[Scenario]) -> Result<TrainReport> {
    if scenarios.is_empty() {
        bail!(InvalidArgument, "training needs at least one scenario");
    }
    let cfg = model.cfg.clone();
    let data: Vec<TrainingData> = scenarios.iter().map(|s| TrainingData::new(model, s)).collect::<Result<_>>()?;
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut rng = SimRng::derive(cfg.seed, 0xC11B);
    let mut report = TrainReport::default();
    for epoch in 1..=cfg.epochs {
        let with_ia = epoch > cfg.ia_warmup_epochs;
        report.epochs.push(run_steps(model, &mut opt, &mut rng, scenarios, &data, epoch, cfg.steps_per_epoch, with_ia)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkit::{generate_scenario, MotionPreset, ScenarioConfig};

    pub(crate) fn tiny_scenarios(n: usize) -> Vec<Scenario> {
        (0..n)
            .map(|i| {
                generate_scenario(&ScenarioConfig {
                    n_objects: 3,
                    n_frames: 24,
                    appearance_dim: 6,
                    context_dim: 2,
                    box_noise: 1.0,
                    clutter_rate: 0.3,
                    preset: MotionPreset::Crossing,
                    seed: 40 + i as u64,
                    ..Default::default()
                })
                .unwrap()
            })
            .collect()
    }

    fn tiny_cfg() -> RunConfig {
        RunConfig { dim: 8, window: 3, ta_layers: 1, epochs: 2, steps_per_epoch: 3, lr: 1e-3, ..RunConfig::default() }
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let sc = tiny_scenarios(1);
        let cfg = RunConfig { epochs: 0, ..tiny_cfg() };
        let (m, r) = train_toy(&cfg, &sc).unwrap();
        assert!(r.epochs.is_empty());
        assert_eq!(m.store.values(), FdtaModel::new(&cfg, InputDims::of(&sc[0].cfg)).unwrap().store.values());
    }

    #[test]
    fn training_is_deterministic() {
        let sc = tiny_scenarios(2);
        let (a, ra) = train_toy(&tiny_cfg(), &sc).unwrap();
        let (b, rb) = train_toy(&tiny_cfg(), &sc).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.store.values(), b.store.values());
        assert!(train_toy(&tiny_cfg(), &[]).is_err());
    }

    #[test]
    fn warmup_epoch_has_no_contrastive_signal() {
        let sc = tiny_scenarios(1);
        let cfg = RunConfig { epochs: 1, ..tiny_cfg() };
        let init = FdtaModel::new(&cfg, InputDims::of(&sc[0].cfg)).unwrap();
        let (m, r) = train_toy(&cfg, &sc).unwrap();
        assert_eq!(r.epochs[0].parts.ia, 0.0);
        let phi = m.phi.as_ref().unwrap();
        for l in &phi.layers {
            assert_eq!(m.store.get(l.weight), init.store.get(l.weight));
            assert_eq!(m.store.get(l.bias), init.store.get(l.bias));
        }
        // once warm-up is over the term is live
        let (_, r2) = train_toy(&RunConfig { epochs: 2, ..cfg }, &sc).unwrap();
        assert!(r2.epochs[1].parts.ia > 0.0);
    }

    #[test]
    fn spatial_off_leaves_no_depth_term() {
        let sc = tiny_scenarios(1);
        let cfg = RunConfig { spatial: false, ..tiny_cfg() };
        let (m, r) = train_toy(&cfg, &sc).unwrap();
        assert!(m.depth.is_none());
        assert!(r.epochs.iter().all(|e| e.parts.depth == 0.0));
        // no depth grids needed at all
        let no_depth: Vec<Scenario> = sc.into_iter().map(|s| Scenario { depth: Vec::new(), ..s }).collect();
        assert!(train_toy(&cfg, &no_depth).is_ok());
        assert!(train_toy(&tiny_cfg(), &no_depth).is_err());
    }

    #[test]
    fn detection_only_weights_touch_only_detection_paths() {
        let sc = tiny_scenarios(1);
        let zero = crate::pipeline::LossWeights { id: 0.0, depth: 0.0, ia: 0.0, ..Default::default() };
        let cfg = RunConfig { weights: zero, ia_warmup_epochs: 0, ..tiny_cfg() };
        let init = FdtaModel::new(&cfg, InputDims::of(&sc[0].cfg)).unwrap();
        let (m, _) = train_toy(&cfg, &sc).unwrap();
        let same = |id| m.store.get(id) == init.store.get(id);
        assert!(same(m.id_scale) && same(m.new_logit));
        assert!(m.phi.as_ref().unwrap().layers.iter().all(|l| same(l.weight)));
        assert!(same(m.ta.as_ref().unwrap().empty));
        assert!(same(m.depth.as_ref().unwrap().head.weight));
        assert!(!same(m.cls_head.weight));
        assert!(!same(m.box_head.weight));
    }

    #[test]
    fn nan_loss_aborts() {
        let sc = tiny_scenarios(1);
        let cfg = tiny_cfg();
        let mut m = FdtaModel::new(&cfg, InputDims::of(&sc[0].cfg)).unwrap();
        m.store.set(m.id_scale, Tensor::new(vec![1, 1], vec![f64::NAN]).unwrap());
        let err = train_model(&mut m, &sc).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
    }

    #[test]
    fn report_csv_has_one_row_per_epoch() {
        let (_, r) = train_toy(&tiny_cfg(), &tiny_scenarios(1)).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("epoch,total,cls,bbox,giou,id,depth,ia"));
    }
}
