//! Parameterized layers built on [`Graph`] operations.

use rand::Rng;

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Fully connected layer: Xavier-uniform weights, zero bias.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.insert_xavier(format!("{name}.w"), fan_in, fan_out, rng)?;
        let b = store.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
        Ok(Self { w, b, fan_in, fan_out })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.linear(x, w, b)
    }
}

/// Layer normalization over the last axis with learned gain (ones) and bias (zeros).
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        let gain = store.insert(format!("{name}.gain"), Tensor::full(&[dim], T::one()))?;
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[dim]))?;
        Ok(Self { gain, bias })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
}

impl Activation {
    pub fn apply<T: Real>(self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Silu => g.silu(x),
        }
    }
}

/// Stack of linear layers with an activation between consecutive layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers, activation })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                x = self.activation.apply(g, x)?;
            }
            x = layer.forward(g, x)?;
        }
        Ok(x)
    }
}

/// Lowest and highest angular frequency of the sinusoidal ladder.
const MIN_FREQ: f64 = 1.0;
const MAX_FREQ: f64 = 1.0e4;

/// Sinusoidal features of a scalar `t`: `dim / 2` sines followed by `dim / 2`
/// cosines over a geometric frequency ladder from 1 to 10^4.
pub fn sinusoidal_features(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let freq = |i: usize| {
        if half <= 1 {
            MIN_FREQ
        } else {
            MIN_FREQ * (MAX_FREQ / MIN_FREQ).powf(i as f64 / (half - 1) as f64)
        }
    };
    let mut out = Vec::with_capacity(dim);
    out.extend((0..half).map(|i| (t * freq(i)).sin()));
    out.extend((0..half).map(|i| (t * freq(i)).cos()));
    out.resize(dim, 0.0);
    out
}

/// Sinusoidal encoding of the flow time followed by FC -> SiLU -> FC.
#[derive(Clone, Debug)]
pub struct TimestepEmbedding {
    pub freq_dim: usize,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TimestepEmbedding {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        freq_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            freq_dim,
            fc1: Linear::new(store, &format!("{name}.fc1"), freq_dim, out_dim, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), out_dim, out_dim, rng)?,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.fc2.fan_out
    }

    /// Embeds one timestep per row. Every `t` must lie in `[0, 1]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, ts: &[T]) -> Result<Var> {
        let mut data = Vec::with_capacity(ts.len() * self.freq_dim);
        for &t in ts {
            let t = t.as_f64();
            if !(0.0..=1.0).contains(&t) {
                return Err(AutodiffError::TimestepRange(t));
            }
            data.extend(sinusoidal_features(t, self.freq_dim).into_iter().map(T::lit));
        }
        let feats = g.input(Tensor::new(vec![ts.len(), self.freq_dim], data)?);
        let h = self.fc1.forward(g, feats)?;
        let h = g.silu(h)?;
        self.fc2.forward(g, h)
    }
}
