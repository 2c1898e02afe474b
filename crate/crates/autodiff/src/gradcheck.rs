//! Central finite-difference checks of tape gradients (f64 only).

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Per-element round-off floor of a central difference, relative to `max(1, |f|)`.
/// When both the analytic and numeric gradients are below it (for instance a
/// key bias under softmax, whose gradient is exactly zero) they count as agreeing.
const NOISE_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub checked: usize,
    pub analytic_norm: f64,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` over the checked elements.
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Options for [`check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Upper bound on elements probed per tensor; evenly strided when exceeded.
    pub max_per_tensor: usize,
    pub check_params: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { h: 1e-6, max_per_tensor: 64, check_params: true }
    }
}

/// Compares backward-pass gradients of the scalar built by `f` against central
/// differences, for every input tensor and (optionally) every parameter.
pub fn check<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], opts: GradCheckOptions, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let scale = g.value(out).item().abs().max(1.0);
    let grads = g.backward(out)?;

    let mut report = GradCheckReport::default();
    let mut work_inputs = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let entry = compare(format!("input[{i}]"), &analytic, opts, scale, |k, delta| {
            let orig = work_inputs[i].data()[k];
            work_inputs[i].data_mut()[k] = orig + delta;
            let y = eval(store, &work_inputs);
            work_inputs[i].data_mut()[k] = orig;
            y
        })?;
        report.entries.push(entry);
    }

    if opts.check_params {
        let mut work = store.clone();
        for id in store.ids() {
            let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
            let entry = compare(store.name(id).to_string(), &analytic, opts, scale, |k, delta| {
                let orig = work.value(id).data()[k];
                work.value_mut(id).data_mut()[k] = orig + delta;
                let y = eval(&work, inputs);
                work.value_mut(id).data_mut()[k] = orig;
                y
            })?;
            report.entries.push(entry);
        }
    }
    Ok(report)
}

fn compare(
    name: String,
    analytic: &Tensor<f64>,
    opts: GradCheckOptions,
    scale: f64,
    mut perturbed: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<GradCheckEntry> {
    let n = analytic.len();
    let stride = n.div_ceil(opts.max_per_tensor.max(1)).max(1);
    let (mut diff2, mut a2, mut n2, mut checked) = (0.0, 0.0, 0.0, 0);
    for k in (0..n).step_by(stride) {
        let plus = perturbed(k, opts.h)?;
        let minus = perturbed(k, -opts.h)?;
        let numeric = (plus - minus) / (2.0 * opts.h);
        let a = analytic.data()[k];
        diff2 += (a - numeric) * (a - numeric);
        a2 += a * a;
        n2 += numeric * numeric;
        checked += 1;
    }
    let denom = a2.sqrt().max(n2.sqrt());
    let floor = NOISE_FLOOR * scale * (checked as f64).sqrt();
    // A gradient that is zero analytically leaves only finite-difference noise.
    let rel_err = if denom < floor { 0.0 } else { diff2.sqrt() / denom };
    Ok(GradCheckEntry { name, checked, analytic_norm: a2.sqrt(), rel_err })
}
