//! Central finite-difference verification of autodiff gradients.
//!
//! The numerical side only ever evaluates the forward pass, so it stays
//! independent of the backward rules it checks.

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;

/// Outcome for one checked tensor.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub max_abs_err: f64,
    /// `max |autodiff - fd| / max |fd|` over the checked elements.
    pub rel_err: f64,
    pub grad_scale: f64,
}

impl GradReport {
    /// Relative error below `rel_tol`, or a gradient that is zero up to
    /// `abs_floor` on both sides (e.g. attention key biases, which softmax
    /// cancels exactly).
    pub fn passes(&self, rel_tol: f64, abs_floor: f64) -> bool {
        self.rel_err < rel_tol || (self.grad_scale < abs_floor && self.max_abs_err < abs_floor)
    }

    fn from_pairs(name: String, pairs: &[(f64, f64)]) -> Self {
        let max_abs_err = pairs.iter().map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
        let grad_scale = pairs.iter().map(|(_, n)| n.abs()).fold(0.0, f64::max);
        Self {
            name,
            checked: pairs.len(),
            max_abs_err,
            rel_err: max_abs_err / grad_scale.max(1e-12),
            grad_scale,
        }
    }
}

/// Checks d(loss)/d(inputs) for a function of plain tensors.
pub fn check_inputs(
    inputs: &[Tensor<f64>],
    step: f64,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<Vec<GradReport>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut reports = Vec::new();
    for (idx, t) in inputs.iter().enumerate() {
        let auto = grads.wrt(vars[idx]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        let mut pairs = Vec::with_capacity(t.numel());
        for e in 0..t.numel() {
            let mut xs = inputs.to_vec();
            let numeric = {
                let mut plus = t.data().to_vec();
                plus[e] += step;
                xs[idx] = Tensor::new(t.shape(), plus)?;
                let fp = eval(&xs)?;
                let mut minus = t.data().to_vec();
                minus[e] -= step;
                xs[idx] = Tensor::new(t.shape(), minus)?;
                let fm = eval(&xs)?;
                (fp - fm) / (2.0 * step)
            };
            pairs.push((auto.data()[e], numeric));
        }
        reports.push(GradReport::from_pairs(format!("input{idx}"), &pairs));
    }
    Ok(reports)
}

/// Checks d(loss)/d(param) for every trainable parameter accepted by
/// `select`. At most `max_per_tensor` elements are probed per tensor, spread
/// evenly across it.
pub fn check_params(
    store: &ParamStore<f64>,
    step: f64,
    max_per_tensor: usize,
    select: impl Fn(&str) -> bool,
    f: impl Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
) -> Result<Vec<GradReport>> {
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let grads = g.backward(loss)?;

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        Ok(g.value(out).item())
    };

    let mut reports = Vec::new();
    for (name, p) in store.iter() {
        if !p.trainable || !select(name) {
            continue;
        }
        let n = p.value.numel();
        let auto = grads
            .param(name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
        let stride = n.div_ceil(max_per_tensor.max(1)).max(1);
        let mut pairs = Vec::new();
        let mut work = store.clone();
        for e in (0..n).step_by(stride) {
            let base = p.value.data().to_vec();
            let mut plus = base.clone();
            plus[e] += step;
            work.get_mut(name).unwrap().value = Tensor::new(p.value.shape(), plus)?;
            let fp = eval(&work)?;
            let mut minus = base;
            minus[e] -= step;
            work.get_mut(name).unwrap().value = Tensor::new(p.value.shape(), minus)?;
            let fm = eval(&work)?;
            work.get_mut(name).unwrap().value = p.value.clone();
            pairs.push((auto.data()[e], (fp - fm) / (2.0 * step)));
        }
        reports.push(GradReport::from_pairs(name.to_string(), &pairs));
    }
    Ok(reports)
}
