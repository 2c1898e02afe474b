//! Causal transformer decoder producing per-step condition vectors and stop logits.
//!
//! Input rows are laid out as
//!
//! ```text
//! [ y_0 .. y_{N-1} | SEP | prompt_0 .. prompt_{P-1} | x^0 .. x^{i-1} ]
//! ```
//!
//! where the prompt block is a single learned null row when the prompt is
//! masked and is absent altogether when there is no prompt (the separator then
//! precedes the first frame instead). The condition for step 0 is read from the
//! last row before any frame; the condition for step `i > 0` from the row of
//! `x^{i-1}`. Every row only attends to rows at or before it, so a teacher-forced
//! pass and step-by-step decoding produce bit-identical states.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tokenflow_autodiff::nn::{Activation, LayerNorm, Linear, Mlp};
use tokenflow_autodiff::{Graph, ParamId, ParamStore, Real, Tensor, Var};

use crate::error::{CoreError, Result};
use crate::frames::FrameSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub n_blocks: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub frame_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { n_blocks: 2, n_heads: 4, embed_dim: 64, ffn_dim: 256, frame_dim: 16, vocab_size: 8, max_len: 256 }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_blocks", self.n_blocks),
            ("n_heads", self.n_heads),
            ("embed_dim", self.embed_dim),
            ("ffn_dim", self.ffn_dim),
            ("frame_dim", self.frame_dim),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(CoreError::Config(format!("{name} must be positive")));
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(CoreError::Config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Text-like input: indices into a fixed vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolSequence {
    symbols: Vec<usize>,
    vocab_size: usize,
}

impl SymbolSequence {
    pub fn new(symbols: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if symbols.is_empty() {
            return Err(CoreError::Empty("symbol sequence"));
        }
        if let Some(&s) = symbols.iter().find(|&&s| s >= vocab_size) {
            return Err(CoreError::Symbol { symbol: s, vocab: vocab_size });
        }
        Ok(Self { symbols, vocab_size })
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}

/// Style-conditioning frames; a masked prompt is replaced by one learned null row.
#[derive(Clone, Debug, PartialEq)]
pub struct StylePrompt {
    pub frames: Option<FrameSequence>,
    pub masked: bool,
}

impl StylePrompt {
    pub fn none() -> Self {
        Self { frames: None, masked: false }
    }

    pub fn new(frames: FrameSequence) -> Self {
        Self { frames: Some(frames), masked: false }
    }

    /// The reduced condition used for the unconditional guidance branch.
    pub fn masked(&self) -> Self {
        Self { frames: self.frames.clone(), masked: true }
    }

    fn rows(&self) -> usize {
        match (&self.frames, self.masked) {
            (_, true) => 1,
            (Some(f), false) => f.len(),
            (None, false) => 0,
        }
    }
}

/// Output of one decoding step.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionState {
    /// Condition vector in frame space.
    pub z: Vec<f64>,
    pub stop_logit: f64,
    pub step: usize,
}

impl ConditionState {
    pub fn stop_probability(&self) -> f64 {
        stop_probability(self.stop_logit)
    }
}

/// Logistic squashing of a stop logit.
pub fn stop_probability(logit: f64) -> f64 {
    if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

/// Graph values produced by [`Decoder::forward`].
#[derive(Clone, Debug)]
pub struct DecoderOutput {
    /// `[n_states, frame_dim]`
    pub z: Var,
    /// `[n_states, 1]`
    pub stop: Var,
    /// Attention node of each block, for inspection.
    pub attention: Vec<Var>,
    pub positions: usize,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    cfg: DecoderConfig,
    text_emb: ParamId,
    text_pos: ParamId,
    /// Text positions counted from the last symbol, so "final symbol" is one row.
    text_rpos: ParamId,
    prompt_pos: ParamId,
    frame_pos: ParamId,
    sep: ParamId,
    null_prompt: ParamId,
    prenet: Mlp,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    z_head: Linear,
    stop_head: Linear,
}

const EMBED_STD: f64 = 0.1;

impl Decoder {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &DecoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let e = cfg.embed_dim;
        let text_emb = store.insert_uniform("lm.text_emb", &[cfg.vocab_size, e], EMBED_STD, rng)?;
        let text_pos = store.insert_uniform("lm.text_pos", &[cfg.max_len, e], EMBED_STD, rng)?;
        let text_rpos = store.insert_uniform("lm.text_rpos", &[cfg.max_len, e], EMBED_STD, rng)?;
        let prompt_pos = store.insert_uniform("lm.prompt_pos", &[cfg.max_len, e], EMBED_STD, rng)?;
        let frame_pos = store.insert_uniform("lm.frame_pos", &[cfg.max_len, e], EMBED_STD, rng)?;
        let sep = store.insert_uniform("lm.sep", &[1, e], EMBED_STD, rng)?;
        let null_prompt = store.insert_uniform("lm.null_prompt", &[1, e], EMBED_STD, rng)?;
        let prenet = Mlp::new(store, "lm.prenet", &[cfg.frame_dim, e, e, e], Activation::Relu, rng)?;
        let blocks = (0..cfg.n_blocks)
            .map(|i| {
                let p = format!("lm.block{i}");
                Ok(Block {
                    ln1: LayerNorm::new(store, &format!("{p}.ln1"), e)?,
                    q: Linear::new(store, &format!("{p}.q"), e, e, rng)?,
                    k: Linear::new(store, &format!("{p}.k"), e, e, rng)?,
                    v: Linear::new(store, &format!("{p}.v"), e, e, rng)?,
                    o: Linear::new(store, &format!("{p}.o"), e, e, rng)?,
                    ln2: LayerNorm::new(store, &format!("{p}.ln2"), e)?,
                    ff1: Linear::new(store, &format!("{p}.ff1"), e, cfg.ffn_dim, rng)?,
                    ff2: Linear::new(store, &format!("{p}.ff2"), cfg.ffn_dim, e, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            text_emb,
            text_pos,
            text_rpos,
            prompt_pos,
            frame_pos,
            sep,
            null_prompt,
            prenet,
            blocks,
            ln_f: LayerNorm::new(store, "lm.ln_f", e)?,
            z_head: Linear::new(store, "lm.z_head", e, cfg.frame_dim, rng)?,
            stop_head: Linear::new(store, "lm.stop_head", e, 1, rng)?,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn null_prompt_param(&self) -> ParamId {
        self.null_prompt
    }

    pub fn prompt_pos_param(&self) -> ParamId {
        self.prompt_pos
    }

    pub fn stop_head(&self) -> &Linear {
        &self.stop_head
    }

    /// Three-layer fully connected map from frames (`[n, D]`) into the embedding space.
    pub fn prenet<T: Real>(&self, g: &mut Graph<'_, T>, frames: Var) -> Result<Var> {
        let d = g.value(frames).cols();
        if d != self.cfg.frame_dim {
            return Err(CoreError::Dimension { expected: self.cfg.frame_dim, got: d });
        }
        Ok(self.prenet.forward(g, frames)?)
    }

    fn frames_input<T: Real>(&self, g: &mut Graph<'_, T>, frames: &FrameSequence, n: usize) -> Result<Var> {
        if frames.dim() != self.cfg.frame_dim {
            return Err(CoreError::Dimension { expected: self.cfg.frame_dim, got: frames.dim() });
        }
        let t = Tensor::from_f64(vec![n, frames.dim()], &frames.as_flat()[..n * frames.dim()])?;
        Ok(g.input(t))
    }

    fn positions<T: Real>(&self, g: &mut Graph<'_, T>, table: ParamId, n: usize) -> Result<Var> {
        let t = g.param(table);
        let idx: Vec<usize> = (0..n).collect();
        Ok(g.gather_rows(t, &idx)?)
    }

    /// Teacher-forced pass producing `n_states` conditions from the first
    /// `n_states - 1` frames of `frames`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        y: &SymbolSequence,
        prompt: &StylePrompt,
        frames: &FrameSequence,
        n_states: usize,
    ) -> Result<DecoderOutput> {
        if n_states == 0 {
            return Err(CoreError::Empty("decoder states"));
        }
        if y.vocab_size() != self.cfg.vocab_size {
            return Err(CoreError::Dimension { expected: self.cfg.vocab_size, got: y.vocab_size() });
        }
        let n_prev = n_states - 1;
        if frames.len() < n_prev {
            return Err(CoreError::Dimension { expected: n_prev, got: frames.len() });
        }
        let has_prompt = prompt.rows() > 0;
        let positions = y.len() + usize::from(has_prompt || n_prev > 0) + prompt.rows() + n_prev;
        if positions > self.cfg.max_len {
            return Err(CoreError::SequenceTooLong { len: positions, max: self.cfg.max_len });
        }

        let mut parts = Vec::with_capacity(5);
        let table = g.param(self.text_emb);
        let tokens = g.gather_rows(table, y.symbols())?;
        let pos = self.positions(g, self.text_pos, y.len())?;
        let rtable = g.param(self.text_rpos);
        let rev: Vec<usize> = (0..y.len()).rev().collect();
        let rpos = g.gather_rows(rtable, &rev)?;
        let tokens = g.add(tokens, pos)?;
        parts.push(g.add(tokens, rpos)?);
        let sep = g.param(self.sep);
        if has_prompt {
            parts.push(sep);
            if prompt.masked {
                parts.push(g.param(self.null_prompt));
            } else if let Some(pf) = &prompt.frames {
                let x = self.frames_input(g, pf, pf.len())?;
                let emb = self.prenet(g, x)?;
                let pos = self.positions(g, self.prompt_pos, pf.len())?;
                parts.push(g.add(emb, pos)?);
            }
        }
        let prefix_len = y.len() + if has_prompt { 1 + prompt.rows() } else { 0 };
        let mut frame_start = prefix_len;
        if n_prev > 0 {
            if !has_prompt {
                parts.push(sep);
                frame_start += 1;
            }
            let x = self.frames_input(g, frames, n_prev)?;
            let emb = self.prenet(g, x)?;
            let pos = self.positions(g, self.frame_pos, n_prev)?;
            parts.push(g.add(emb, pos)?);
        }
        let mut h = g.concat_rows(&parts)?;

        let mut attention = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let x = b.ln1.forward(g, h)?;
            let q = b.q.forward(g, x)?;
            let k = b.k.forward(g, x)?;
            let v = b.v.forward(g, x)?;
            let a = g.causal_attention(q, k, v, self.cfg.n_heads)?;
            attention.push(a);
            let o = b.o.forward(g, a)?;
            h = g.add(h, o)?;
            let x = b.ln2.forward(g, h)?;
            let f = b.ff1.forward(g, x)?;
            let f = g.relu(f)?;
            let f = b.ff2.forward(g, f)?;
            h = g.add(h, f)?;
        }

        let first = g.slice_rows(h, prefix_len - 1, 1)?;
        let read = if n_prev > 0 {
            let rest = g.slice_rows(h, frame_start, n_prev)?;
            g.concat_rows(&[first, rest])?
        } else {
            first
        };
        let read = self.ln_f.forward(g, read)?;
        let z = self.z_head.forward(g, read)?;
        let stop = self.stop_head.forward(g, read)?;
        Ok(DecoderOutput { z, stop, attention, positions })
    }

    /// Condition states for every step of `target` in one causal pass.
    pub fn teacher_forced<T: Real>(
        &self,
        params: &ParamStore<T>,
        y: &SymbolSequence,
        prompt: &StylePrompt,
        target: &FrameSequence,
    ) -> Result<Vec<ConditionState>> {
        let mut g = Graph::new(params);
        let out = self.forward(&mut g, y, prompt, target, target.len())?;
        Ok(states_from(&g, &out, 0))
    }

    /// Condition for the frame following `prev` (which may be empty).
    pub fn decode_step<T: Real>(
        &self,
        params: &ParamStore<T>,
        y: &SymbolSequence,
        prompt: &StylePrompt,
        prev: &FrameSequence,
    ) -> Result<ConditionState> {
        let mut g = Graph::new(params);
        let n = prev.len() + 1;
        let out = self.forward(&mut g, y, prompt, prev, n)?;
        let zt = g.value(out.z);
        let last = n - 1;
        Ok(ConditionState {
            z: zt.row(last).iter().map(|v| v.as_f64()).collect(),
            stop_logit: g.value(out.stop).row(last)[0].as_f64(),
            step: last,
        })
    }
}

pub(crate) fn states_from<T: Real>(g: &Graph<'_, T>, out: &DecoderOutput, first_step: usize) -> Vec<ConditionState> {
    let zt = g.value(out.z);
    let st = g.value(out.stop);
    (0..zt.rows())
        .map(|i| ConditionState {
            z: zt.row(i).iter().map(|v| v.as_f64()).collect(),
            stop_logit: st.row(i)[0].as_f64(),
            step: first_step + i,
        })
        .collect()
}
