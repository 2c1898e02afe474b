use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokenflow_autodiff::{Checkpoint, ParamStore, Real};

use crate::c2f::{FlowHeads, HeadsConfig, Mechanism, PriorKind};
use crate::conditioner::{Decoder, DecoderConfig};
use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub decoder: DecoderConfig,
    pub flow_hidden: usize,
    pub flow_blocks: usize,
    pub time_freq_dim: usize,
    pub mechanism: Mechanism,
    /// Prior the flow heads are trained with.
    pub prior: PriorKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            decoder: DecoderConfig::default(),
            flow_hidden: 64,
            flow_blocks: 3,
            time_freq_dim: 32,
            mechanism: Mechanism::C2f,
            prior: PriorKind::PreviousFrame,
        }
    }
}

impl ModelConfig {
    pub fn heads(&self) -> HeadsConfig {
        HeadsConfig {
            frame_dim: self.decoder.frame_dim,
            hidden: self.flow_hidden,
            n_blocks: self.flow_blocks,
            time_freq_dim: self.time_freq_dim,
            mechanism: self.mechanism,
        }
    }
}

/// Decoder and flow heads over one parameter store.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub decoder: Decoder,
    pub heads: FlowHeads,
}

impl<T: Real> Model<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        if !config.decoder.frame_dim.is_multiple_of(2) {
            return Err(CoreError::OddDimension(config.decoder.frame_dim));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let decoder = Decoder::new(&mut params, &config.decoder, &mut rng)?;
        let heads = FlowHeads::new(&mut params, &config.heads(), &mut rng)?;
        Ok(Self { config: config.clone(), params, decoder, heads })
    }

    /// Checkpoint holding the model config under `meta.model` next to `extra`.
    pub fn checkpoint(&self, extra: serde_json::Value) -> Result<Checkpoint<T>> {
        let meta = serde_json::json!({ "model": self.config, "extra": extra });
        Ok(Checkpoint::from_store(&self.params, meta))
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<(Self, serde_json::Value)> {
        let config: ModelConfig = serde_json::from_value(ck.meta.get("model").cloned().unwrap_or_default())
            .map_err(|e| CoreError::Config(format!("checkpoint model config: {e}")))?;
        let mut model = Self::new(&config, 0)?;
        let store = ck.to_store()?;
        let layout_matches = store.len() == model.params.len()
            && store.ids().zip(model.params.ids()).all(|(a, b)| {
                store.name(a) == model.params.name(b) && store.value(a).shape() == model.params.value(b).shape()
            });
        if !layout_matches {
            return Err(CoreError::Config("checkpoint tensors do not match the model layout".into()));
        }
        model.params = store;
        let extra = ck.meta.get("extra").cloned().unwrap_or_default();
        Ok((model, extra))
    }

    pub fn save(&self, path: impl AsRef<Path>, extra: serde_json::Value) -> Result<()> {
        self.checkpoint(extra)?.save(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let path = path.as_ref();
        let ck = Checkpoint::load(path).map_err(|e| CoreError::Load { path: path.to_path_buf(), reason: e.to_string() })?;
        Self::from_checkpoint(&ck)
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Scalar count of the flow-matching heads only.
    pub fn num_flow_params(&self) -> usize {
        self.params.num_scalars_with_prefix("fm.")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            decoder: DecoderConfig { n_blocks: 1, n_heads: 2, embed_dim: 8, ffn_dim: 16, frame_dim: 4, vocab_size: 3, max_len: 16 },
            flow_hidden: 8,
            time_freq_dim: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let m = Model::<f32>::new(&small(), 3).unwrap();
        let ck = m.checkpoint(serde_json::json!({"step": 7})).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let (back, extra) = Model::<f32>::from_checkpoint(&Checkpoint::from_slice(&bytes).unwrap()).unwrap();
        assert!(back.params.bit_eq(&m.params));
        assert_eq!(extra["step"], 7);
        assert_eq!(back.config, m.config);
    }

    #[test]
    fn flow_budget_matched_across_mechanisms() {
        let counts: Vec<usize> = [Mechanism::C2f, Mechanism::Hfm, Mechanism::Dfm]
            .iter()
            .map(|&mechanism| {
                let cfg = ModelConfig { mechanism, flow_hidden: 32, ..small() };
                Model::<f32>::new(&cfg, 0).unwrap().num_flow_params()
            })
            .collect();
        assert_eq!(counts[0], counts[2]);
        assert!((counts[1] as f64 / counts[0] as f64 - 1.0).abs() < 0.05, "{counts:?}");
    }

    #[test]
    fn odd_frame_dim_rejected() {
        let mut cfg = small();
        cfg.decoder.frame_dim = 5;
        assert!(matches!(Model::<f32>::new(&cfg, 0), Err(CoreError::OddDimension(5))));
    }
}
