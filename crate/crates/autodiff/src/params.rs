use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{AutodiffError, Result};
use crate::graph::Gradients;
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a parameter registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Param<T> {
    pub(crate) name: String,
    pub(crate) value: Tensor<T>,
    pub(crate) grad: Tensor<T>,
    pub(crate) m: Tensor<T>,
    pub(crate) v: Tensor<T>,
}

/// Hyperparameters for [`ParamStore::adam_step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Named parameters with gradient buffers and Adam moments.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    pub(crate) params: Vec<Param<T>>,
    index: BTreeMap<String, ParamId>,
    /// Number of Adam updates applied so far.
    pub(crate) adam_t: u64,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: BTreeMap::new(), adam_t: 0 }
    }

    /// Registers a parameter; gradient and moments start at zero.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        let zeros = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.clone(),
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        });
        self.index.insert(name, id);
        Ok(id)
    }

    /// Xavier-uniform `[fan_in, fan_out]` matrix.
    pub fn insert_xavier<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| T::lit(rng.gen_range(-limit..limit))).collect();
        self.insert(name, Tensor::new(vec![fan_in, fan_out], data)?)
    }

    /// `[rows, cols]` matrix with entries drawn from `N(0, std^2)`-like uniform noise
    /// of the same variance. Used for embedding tables.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let limit = std * 3f64.sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.gen_range(-limit..limit))).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index.get(name).copied().ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub fn moments(&self, id: ParamId) -> (&Tensor<T>, &Tensor<T>) {
        let p = &self.params[id.0];
        (&p.m, &p.v)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Scalar count of parameters whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.params.iter().filter(|p| p.name.starts_with(prefix)).map(|p| p.value.len()).sum()
    }

    pub fn adam_steps_taken(&self) -> u64 {
        self.adam_t
    }

    /// Adds `scale * grads` into the gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients<T>, scale: T) {
        for (id, g) in grads.params() {
            let buf = &mut self.params[id.0].grad;
            for (a, &b) in buf.data_mut().iter_mut().zip(g.data()) {
                *a += scale * b;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// One bias-corrected Adam update over every parameter, then clears gradients.
    ///
    /// A non-finite gradient aborts before any parameter is touched.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| !p.grad.is_finite()) {
            return Err(AutodiffError::NonFiniteGradient { param: p.name.clone() });
        }
        self.adam_t += 1;
        let t = self.adam_t as i32;
        let b1 = T::lit(cfg.beta1);
        let b2 = T::lit(cfg.beta2);
        let one = T::one();
        let bc1 = T::lit(1.0 - cfg.beta1.powi(t));
        let bc2 = T::lit(1.0 - cfg.beta2.powi(t));
        let lr = T::lit(cfg.lr);
        let eps = T::lit(cfg.eps);
        for p in &mut self.params {
            let Param { value, grad, m, v, .. } = p;
            for i in 0..value.len() {
                let g = grad.data()[i];
                let mi = b1 * m.data()[i] + (one - b1) * g;
                let vi = b2 * v.data()[i] + (one - b2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                value.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.zero_grad();
        Ok(())
    }

    /// Copies values (not moments) from `other` for every parameter sharing a name.
    pub fn load_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for p in &mut self.params {
            let id = other.id(&p.name)?;
            let src = other.value(id);
            if src.shape() != p.value.shape() {
                return Err(AutodiffError::shape(
                    "load_values_from",
                    format!("{}: {:?} vs {:?}", p.name, src.shape(), p.value.shape()),
                ));
            }
            p.value = src.clone();
        }
        Ok(())
    }

    /// Structural and bitwise equality of values, moments, and step count.
    pub fn bit_eq(&self, other: &ParamStore<T>) -> bool {
        self.adam_t == other.adam_t
            && self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && bits_eq(a.value.data(), b.value.data())
                    && bits_eq(a.m.data(), b.m.data())
                    && bits_eq(a.v.data(), b.v.data())
            })
    }
}

fn bits_eq<T: Real>(a: &[T], b: &[T]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
}
