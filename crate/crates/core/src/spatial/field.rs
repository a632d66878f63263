use super::bins::DepthBins;
use crate::diffcore::{Graph, Var};
use crate::error::{bail, Result};
use crate::geometry::{focal_loss, focal_loss_logits, Box2D, FOCAL_ALPHA, FOCAL_GAMMA};

/// Per-pixel depth distribution over `K + 1` bins with its expected depth,
/// foreground mask and (for training) target bins.
#[derive(Debug, Clone)]
pub struct DepthField {
    pub rows: usize,
    pub cols: usize,
    pub classes: usize,
    /// Row-major `[rows * cols, classes]`.
    pub probs: Vec<f64>,
    pub expected: Vec<f64>,
    pub foreground: Vec<bool>,
    pub targets: Vec<usize>,
}

impl DepthField {
    pub fn new(
        rows: usize,
        cols: usize,
        probs: Vec<f64>,
        bins: &DepthBins,
        foreground: Vec<bool>,
        targets: Vec<usize>,
    ) -> Result<Self> {
        let n = rows * cols;
        let classes = bins.num_classes();
        if probs.len() != n * classes || foreground.len() != n || targets.len() != n {
            bail!(Shape, "depth field {rows}x{cols} with {classes} classes got mismatched arrays");
        }
        let expected = super::bins::depth_expectation(&probs, bins)?;
        Ok(Self { rows, cols, classes, probs, expected, foreground, targets })
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.probs[i * self.classes..(i + 1) * self.classes]
    }
}

/// Rasterizes the union of `boxes` onto a `rows × cols` grid covering
/// `width × height` image units. A pixel is foreground when its center lies
/// inside (or on the border of) any box.
pub fn foreground_mask(rows: usize, cols: usize, width: f64, height: f64, boxes: &[Box2D]) -> Vec<bool> {
    let (cw, ch) = (width / cols as f64, height / rows as f64);
    let mut out = vec![false; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (px, py) = ((c as f64 + 0.5) * cw, (r as f64 + 0.5) * ch);
            out[r * cols + c] = boxes.iter().any(|b| b.contains(px, py));
        }
    }
    out
}

fn pixel_weights(foreground: &[bool], fg_weight: f64) -> Vec<f64> {
    foreground.iter().map(|&f| if f { fg_weight } else { 1.0 }).collect()
}

fn check_weight(fg_weight: f64) -> Result<()> {
    if !(fg_weight >= 1.0 && fg_weight.is_finite()) {
        bail!(InvalidArgument, "foreground weight {fg_weight} must be >= 1");
    }
    Ok(())
}

/// `(1/N) Σ w_ij FL(d_ij, d̄_ij)` with `w = fg_weight` on foreground pixels.
pub fn weighted_depth_loss(field: &DepthField, fg_weight: f64) -> Result<f64> {
    check_weight(fg_weight)?;
    let n = field.rows * field.cols;
    if n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        let t = field.targets[i];
        if t >= field.classes {
            bail!(InvalidArgument, "target bin {t} out of {}", field.classes);
        }
        let w = if field.foreground[i] { fg_weight } else { 1.0 };
        total += w * focal_loss(field.pixel(i), t, FOCAL_ALPHA, FOCAL_GAMMA)?;
    }
    Ok(total / n as f64)
}

/// Differentiable form over `[N, K + 1]` logits.
pub fn weighted_depth_loss_var(
    g: &mut Graph,
    logits: Var,
    targets: &[usize],
    foreground: &[bool],
    fg_weight: f64,
) -> Result<Var> {
    check_weight(fg_weight)?;
    if foreground.len() != targets.len() {
        bail!(Shape, "{} foreground flags for {} targets", foreground.len(), targets.len());
    }
    let w = pixel_weights(foreground, fg_weight);
    let s = focal_loss_logits(g, logits, targets, Some(&w), FOCAL_ALPHA, FOCAL_GAMMA)?;
    Ok(g.scale(s, 1.0 / targets.len().max(1) as f64))
}

#[cfg(test)]
mod tests {
    use super::super::bins::lid_bins;
    use super::*;
    use crate::diffcore::{grad_check, softmax, Tensor};
    use crate::rng::SimRng;

    #[test]
    fn perfect_predictions_cost_nothing() {
        let bins = lid_bins(4, 0.0, 20.0).unwrap();
        let targets = vec![0, 3, 4, 1];
        let mut probs = vec![0.0; 20];
        for (i, &t) in targets.iter().enumerate() {
            probs[i * 5 + t] = 1.0;
        }
        let f = DepthField::new(2, 2, probs, &bins, vec![true, false, true, false], targets).unwrap();
        assert_eq!(weighted_depth_loss(&f, 7.0).unwrap(), 0.0);
        assert_eq!(f.expected, vec![0.0, 12.0, 20.0, 2.0]);
    }

    #[test]
    fn single_foreground_pixel() {
        let bins = lid_bins(1, 0.0, 1.0).unwrap();
        let f = DepthField::new(1, 1, vec![0.5, 0.5], &bins, vec![true], vec![0]).unwrap();
        let l = weighted_depth_loss(&f, 7.0).unwrap();
        assert!((l - 7.0 * 0.0625 * 2f64.ln()).abs() < 1e-15);
        assert!((l - 0.3033).abs() < 1e-4);
        assert!(weighted_depth_loss(&f, 0.5).is_err());
    }

    #[test]
    fn unit_weight_is_plain_mean_focal() {
        let mut rng = SimRng::new(3);
        let bins = lid_bins(6, 0.0, 50.0).unwrap();
        for _ in 0..20 {
            let n = 12;
            let mut probs = Vec::new();
            for _ in 0..n {
                probs.extend(softmax(&rng.normal_vec(7)).unwrap());
            }
            let targets: Vec<usize> = (0..n).map(|_| rng.below(7)).collect();
            let fg: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
            let f = DepthField::new(3, 4, probs.clone(), &bins, fg, targets.clone()).unwrap();
            let plain: f64 = (0..n).map(|i| focal_loss(&probs[i * 7..(i + 1) * 7], targets[i], 0.25, 2.0).unwrap()).sum::<f64>() / n as f64;
            assert!((weighted_depth_loss(&f, 1.0).unwrap() - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_form_matches_and_differentiates() {
        let mut rng = SimRng::new(12);
        for _ in 0..20 {
            let n = 6;
            let logits = Tensor::new(vec![n, 5], (0..n * 5).map(|_| rng.range(-2.0, 2.0)).collect()).unwrap();
            let targets: Vec<usize> = (0..n).map(|_| rng.below(5)).collect();
            let fg: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
            let bins = lid_bins(4, 0.0, 20.0).unwrap();
            let probs: Vec<f64> = (0..n).flat_map(|i| softmax(logits.row(i)).unwrap()).collect();
            let f = DepthField::new(2, 3, probs, &bins, fg.clone(), targets.clone()).unwrap();
            let want = weighted_depth_loss(&f, 7.0).unwrap();
            let mut g = Graph::new();
            let lv = g.constant(logits.clone());
            let got = weighted_depth_loss_var(&mut g, lv, &targets, &fg, 7.0).unwrap();
            assert!((g.value(got).item() - want).abs() < 1e-12);
            let r = grad_check(|g, v| weighted_depth_loss_var(g, v[0], &targets, &fg, 7.0), &[logits], 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-4);
        }
    }

    #[test]
    fn border_pixels_are_foreground() {
        // 2x2 grid over 4x4 units: pixel centers at 1 and 3
        let m = foreground_mask(2, 2, 4.0, 4.0, &[Box2D { x: 0.0, y: 0.0, w: 1.0, h: 1.0 }]);
        assert_eq!(m, vec![true, false, false, false]);
        let m = foreground_mask(2, 2, 4.0, 4.0, &[Box2D { x: 3.0, y: 1.0, w: 2.0, h: 2.0 }]);
        assert_eq!(m, vec![false, true, false, true]);
    }
}
