//! Linear probability paths, the conditional flow-matching objective, priors,
//! the Euler sampler, and classifier-free guidance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use tokenflow_autodiff::nn::{Activation, LayerNorm, Linear, Mlp, TimestepEmbedding};
use tokenflow_autodiff::{Graph, ParamStore, Real, Tensor, Var};

use crate::error::{CoreError, Result};

/// Gaussian prior `N(mean, sigma2 I)`; a missing mean means the standard normal.
#[derive(Clone, Debug, PartialEq)]
pub struct InformativePrior {
    pub mean: Option<Vec<f64>>,
    pub sigma2: f64,
}

impl InformativePrior {
    pub fn standard() -> Self {
        Self { mean: None, sigma2: 1.0 }
    }

    pub fn centered(mean: Vec<f64>, sigma2: f64) -> Result<Self> {
        if sigma2 < 0.0 || sigma2.is_nan() {
            return Err(CoreError::NegativeVariance(sigma2));
        }
        Ok(Self { mean: Some(mean), sigma2 })
    }

    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Result<Vec<f64>> {
        sample_prior(self.mean.as_deref(), dim, self.sigma2, rng)
    }
}

/// `prev + sqrt(sigma2) * eps`, or a plain standard-normal draw when `prev` is `None`.
///
/// The noise vector is always drawn, so the random stream advances identically
/// whatever the variance.
pub fn sample_prior<R: Rng + ?Sized>(prev: Option<&[f64]>, dim: usize, sigma2: f64, rng: &mut R) -> Result<Vec<f64>> {
    if sigma2 < 0.0 || sigma2.is_nan() {
        return Err(CoreError::NegativeVariance(sigma2));
    }
    let eps: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    match prev {
        None => Ok(eps),
        Some(m) => {
            if m.len() != dim {
                return Err(CoreError::Dimension { expected: dim, got: m.len() });
            }
            if sigma2 == 0.0 {
                return Ok(m.to_vec());
            }
            let s = sigma2.sqrt();
            Ok(m.iter().zip(&eps).map(|(a, e)| a + s * e).collect())
        }
    }
}

/// One training draw on the linear path between `x0` and `x1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub x_t: Vec<f64>,
    pub t: f64,
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub u: Vec<f64>,
}

impl FlowSample {
    /// Builds the path point from fixed endpoints.
    pub fn on_path(x0: Vec<f64>, x1: Vec<f64>, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(CoreError::TimeRange(t));
        }
        if x0.len() != x1.len() {
            return Err(CoreError::Dimension { expected: x1.len(), got: x0.len() });
        }
        let x_t = x0.iter().zip(&x1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let u = x0.iter().zip(&x1).map(|(a, b)| b - a).collect();
        Ok(Self { x_t, t, x0, x1, u })
    }
}

/// Draws `x0` from `prior` and places it on the path towards `x1` at time `t`.
pub fn make_path_sample<R: Rng + ?Sized>(x1: &[f64], prior: &InformativePrior, t: f64, rng: &mut R) -> Result<FlowSample> {
    if !(0.0..=1.0).contains(&t) {
        return Err(CoreError::TimeRange(t));
    }
    let x0 = prior.sample(x1.len(), rng)?;
    FlowSample::on_path(x0, x1.to_vec(), t)
}

/// Same as [`make_path_sample`] with `t ~ U[0, 1]`.
pub fn draw_path_sample<R: Rng + ?Sized>(x1: &[f64], prior: &InformativePrior, rng: &mut R) -> Result<FlowSample> {
    let t = rng.gen_range(0.0..=1.0);
    make_path_sample(x1, prior, t, rng)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Input and output width.
    pub dim: usize,
    pub hidden: usize,
    /// Width of the condition vector; 0 disables the condition projection.
    pub cond_dim: usize,
    /// Width of the auxiliary (coarse) input; 0 disables it.
    pub aux_dim: usize,
    pub time_freq_dim: usize,
    pub n_blocks: usize,
}

impl FieldConfig {
    pub fn new(dim: usize, hidden: usize) -> Self {
        Self { dim, hidden, cond_dim: 0, aux_dim: 0, time_freq_dim: 32, n_blocks: 3 }
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    ln: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

/// Residual-MLP vector field `v(x, t; cond, aux)`.
///
/// Input, timestep embedding, condition, and auxiliary input are each
/// projected to the hidden width and summed before the residual blocks.
#[derive(Clone, Debug)]
pub struct VectorFieldNet {
    cfg: FieldConfig,
    prefix: String,
    in_proj: Linear,
    temb: TimestepEmbedding,
    cond_proj: Option<Linear>,
    aux: Option<Mlp>,
    blocks: Vec<ResBlock>,
    ln_out: LayerNorm,
    out_proj: Linear,
}

impl VectorFieldNet {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, cfg: &FieldConfig, rng: &mut R) -> Result<Self> {
        if cfg.dim == 0 || cfg.hidden == 0 || cfg.time_freq_dim < 2 {
            return Err(CoreError::Config(format!("invalid vector field config {cfg:?}")));
        }
        let h = cfg.hidden;
        let in_proj = Linear::new(store, &format!("{prefix}.in"), cfg.dim, h, rng)?;
        let temb = TimestepEmbedding::new(store, &format!("{prefix}.temb"), cfg.time_freq_dim, h, rng)?;
        let cond_proj = (cfg.cond_dim > 0)
            .then(|| Linear::new(store, &format!("{prefix}.cond"), cfg.cond_dim, h, rng))
            .transpose()?;
        let aux = (cfg.aux_dim > 0)
            .then(|| Mlp::new(store, &format!("{prefix}.aux"), &[cfg.aux_dim, h, h], Activation::Silu, rng))
            .transpose()?;
        let blocks = (0..cfg.n_blocks)
            .map(|i| {
                Ok(ResBlock {
                    ln: LayerNorm::new(store, &format!("{prefix}.block{i}.ln"), h)?,
                    fc1: Linear::new(store, &format!("{prefix}.block{i}.fc1"), h, h, rng)?,
                    fc2: Linear::new(store, &format!("{prefix}.block{i}.fc2"), h, h, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            prefix: prefix.to_string(),
            in_proj,
            temb,
            cond_proj,
            aux,
            blocks,
            ln_out: LayerNorm::new(store, &format!("{prefix}.ln_out"), h)?,
            out_proj: Linear::new(store, &format!("{prefix}.out"), h, cfg.dim, rng)?,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.cfg
    }

    /// Parameter-name prefix shared by every tensor of this net.
    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn cond_proj(&self) -> Option<&Linear> {
        self.cond_proj.as_ref()
    }

    pub fn out_proj(&self) -> &Linear {
        &self.out_proj
    }

    /// Scalar count of a net with this configuration.
    pub fn count_params(cfg: &FieldConfig) -> usize {
        let lin = |i: usize, o: usize| i * o + o;
        let h = cfg.hidden;
        let mut n = lin(cfg.dim, h) + lin(cfg.time_freq_dim, h) + lin(h, h);
        if cfg.cond_dim > 0 {
            n += lin(cfg.cond_dim, h);
        }
        if cfg.aux_dim > 0 {
            n += lin(cfg.aux_dim, h) + lin(h, h);
        }
        n += cfg.n_blocks * (2 * h + 2 * lin(h, h));
        n + 2 * h + lin(h, cfg.dim)
    }

    /// Rows of `x` are independent samples; `ts` holds one time per row.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        ts: &[T],
        cond: Option<Var>,
        aux: Option<Var>,
    ) -> Result<Var> {
        let cols = g.value(x).cols();
        if cols != self.cfg.dim {
            return Err(CoreError::Dimension { expected: self.cfg.dim, got: cols });
        }
        let mut h = self.in_proj.forward(g, x)?;
        let te = self.temb.forward(g, ts)?;
        h = g.add(h, te)?;
        match (&self.cond_proj, cond) {
            (Some(p), Some(c)) => {
                let c = p.forward(g, c)?;
                h = g.add(h, c)?;
            }
            (None, None) => {}
            _ => return Err(CoreError::Config(format!("{}: condition input does not match config", self.prefix))),
        }
        match (&self.aux, aux) {
            (Some(m), Some(a)) => {
                let a = m.forward(g, a)?;
                h = g.add(h, a)?;
            }
            (None, None) => {}
            _ => return Err(CoreError::Config(format!("{}: auxiliary input does not match config", self.prefix))),
        }
        for b in &self.blocks {
            let r = b.ln.forward(g, h)?;
            let r = b.fc1.forward(g, r)?;
            let r = g.silu(r)?;
            let r = b.fc2.forward(g, r)?;
            h = g.add(h, r)?;
        }
        let h = self.ln_out.forward(g, h)?;
        Ok(self.out_proj.forward(g, h)?)
    }

    /// Field value at a single point, evaluated in the store's precision.
    pub fn velocity<T: Real>(
        &self,
        params: &ParamStore<T>,
        x: &[f64],
        t: f64,
        cond: Option<&[f64]>,
        aux: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new(params);
        let xv = g.input(Tensor::from_f64(vec![1, x.len()], x)?);
        let cv = cond.map(|c| Tensor::from_f64(vec![1, c.len()], c).map(|t| g.input(t))).transpose()?;
        let av = aux.map(|a| Tensor::from_f64(vec![1, a.len()], a).map(|t| g.input(t))).transpose()?;
        let out = self.forward(&mut g, xv, &[T::lit(t)], cv, av)?;
        Ok(g.value(out).data().iter().map(|v| v.as_f64()).collect())
    }
}

/// Mean over samples of `||u - v||^2`.
///
/// `cond` and `aux`, when present, hold one row per sample.
pub fn cfm_loss<T: Real>(
    g: &mut Graph<'_, T>,
    net: &VectorFieldNet,
    samples: &[FlowSample],
    cond: Option<Var>,
    aux: Option<Var>,
) -> Result<Var> {
    if samples.is_empty() {
        return Err(CoreError::Empty("flow-matching batch"));
    }
    let d = samples[0].x_t.len();
    let mut xs = Vec::with_capacity(samples.len() * d);
    let mut us = Vec::with_capacity(samples.len() * d);
    for s in samples {
        if s.x_t.len() != d {
            return Err(CoreError::Dimension { expected: d, got: s.x_t.len() });
        }
        xs.extend_from_slice(&s.x_t);
        us.extend_from_slice(&s.u);
    }
    let ts: Vec<T> = samples.iter().map(|s| T::lit(s.t)).collect();
    let x = g.input(Tensor::from_f64(vec![samples.len(), d], &xs)?);
    let u = g.input(Tensor::from_f64(vec![samples.len(), d], &us)?);
    let v = net.forward(g, x, &ts, cond, aux)?;
    let diff = g.sub(u, v)?;
    let sq = g.square(diff)?;
    let total = g.sum(sq)?;
    Ok(g.scale(total, 1.0 / samples.len() as f64)?)
}

/// `w * v_cond + (1 - w) * v_uncond`, returning either input untouched at `w = 1` or `w = 0`.
pub fn blend_guidance(v_cond: &[f64], v_uncond: &[f64], w: f64) -> Vec<f64> {
    if w == 1.0 {
        return v_cond.to_vec();
    }
    if w == 0.0 {
        return v_uncond.to_vec();
    }
    v_cond.iter().zip(v_uncond).map(|(c, u)| w * c + (1.0 - w) * u).collect()
}

/// Guidance scale plus the reduced (prompt-masked) condition.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceSpec {
    pub scale: f64,
    pub uncond: Vec<f64>,
}

/// Forward Euler on the uniform grid `t_k = k / nfe`.
pub fn euler_integrate<F>(x0: Vec<f64>, nfe: usize, mut field: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    if nfe == 0 {
        return Err(CoreError::ZeroNfe);
    }
    let dt = 1.0 / nfe as f64;
    let mut x = x0;
    for k in 0..nfe {
        let t = k as f64 / nfe as f64;
        let v = field(&x, t)?;
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += dt * vi;
        }
    }
    Ok(x)
}

/// Integrates `net` from `x0` to `t = 1`, blending in the guided field at
/// every step when `guidance` is given and its scale is not 1.
pub fn euler_sample<T: Real>(
    net: &VectorFieldNet,
    params: &ParamStore<T>,
    x0: Vec<f64>,
    cond: Option<&[f64]>,
    aux: Option<&[f64]>,
    nfe: usize,
    guidance: Option<&GuidanceSpec>,
) -> Result<Vec<f64>> {
    let guidance = guidance.filter(|gs| gs.scale != 1.0);
    euler_integrate(x0, nfe, |x, t| {
        let vc = net.velocity(params, x, t, cond, aux)?;
        match guidance {
            None => Ok(vc),
            Some(gs) => {
                let vu = net.velocity(params, x, t, Some(&gs.uncond), aux)?;
                Ok(blend_guidance(&vc, &vu, gs.scale))
            }
        }
    })
}
