use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{bail, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub value: f64,
    /// `max |g − ĝ| / max(1, |g|, |ĝ|)` over the checked coordinates.
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Check at most this many coordinates per parameter tensor (sampled
    /// deterministically). `None` checks all of them.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { epsilon: 1e-5, max_coords_per_param: None, seed: 0 }
    }
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// finite differences at `params`.
pub fn grad_check<F>(f: F, params: &[Tensor], epsilon: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_with(f, params, &GradCheckOptions { epsilon, ..Default::default() })
}

pub fn grad_check_with<F>(f: F, params: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&opts.epsilon) {
        bail!(InvalidArgument, "epsilon {} outside [1e-7, 1e-3]", opts.epsilon);
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out);
        if v.len() != 1 {
            bail!(Shape, "grad_check needs a scalar output, got {:?}", v.shape());
        }
        Ok(v.item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let value = g.value(out).item();
    if !value.is_finite() {
        bail!(NonFinite, "function value {value}");
    }
    let grads = g.backward(out);

    let mut rng = SimRng::new(opts.seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, (v, p)) in vars.iter().zip(params).enumerate() {
        let analytic = grads.get_or_zeros(*v, p.shape());
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < p.len() => (0..k).map(|_| rng.below(p.len())).collect(),
            _ => (0..p.len()).collect(),
        };
        for c in coords {
            let orig = p.data()[c];
            work[pi].data_mut()[c] = orig + opts.epsilon;
            let fp = eval(&work)?;
            work[pi].data_mut()[c] = orig - opts.epsilon;
            let fm = eval(&work)?;
            work[pi].data_mut()[c] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                bail!(NonFinite, "perturbed function value");
            }
            let numeric = (fp - fm) / (2.0 * opts.epsilon);
            let a = analytic.data()[c];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheckReport { value, max_rel_error: worst, coords_checked: checked })
}
