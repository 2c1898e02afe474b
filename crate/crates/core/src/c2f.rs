//! Coarse-to-fine frame decomposition, the two flow-matching stages, and
//! token-by-token generation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokenflow_autodiff::{Graph, ParamStore, Real, Tensor, Var};

use crate::conditioner::{stop_probability, StylePrompt, SymbolSequence};
use crate::error::{CoreError, Result};
use crate::flow::{cfm_loss, draw_path_sample, euler_sample, FieldConfig, FlowSample, GuidanceSpec, InformativePrior, VectorFieldNet};
use crate::frames::FrameSequence;
use crate::model::Model;

/// Even-indexed features of `frame`.
pub fn downsample(frame: &[f64]) -> Result<Vec<f64>> {
    if !frame.len().is_multiple_of(2) {
        return Err(CoreError::OddDimension(frame.len()));
    }
    Ok(frame.iter().step_by(2).copied().collect())
}

/// Zero insertion at odd indices.
pub fn upsample(coarse: &[f64]) -> Vec<f64> {
    coarse.iter().flat_map(|&c| [c, 0.0]).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoarseFine {
    /// `D / 2` even-index features.
    pub coarse: Vec<f64>,
    /// `D`-dim residual; zero at even indices.
    pub fine: Vec<f64>,
}

pub fn decompose(frame: &[f64]) -> Result<CoarseFine> {
    let coarse = downsample(frame)?;
    let fine = frame.iter().zip(upsample(&coarse)).map(|(x, u)| x - u).collect();
    Ok(CoarseFine { coarse, fine })
}

pub fn reconstruct(parts: &CoarseFine) -> Vec<f64> {
    upsample(&parts.coarse).iter().zip(&parts.fine).map(|(c, f)| c + f).collect()
}

/// How the frame is split across flow-matching stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    /// Coarse stage, then a fine stage conditioned on the coarse output.
    #[default]
    C2f,
    /// One full-dimension stage with a parameter budget matched to the two-stage pair.
    Hfm,
    /// Two stages, but the fine stage never sees the coarse output.
    Dfm,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::C2f => "c2f",
            Mechanism::Hfm => "hfm",
            Mechanism::Dfm => "dfm",
        })
    }
}

impl FromStr for Mechanism {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c2f" => Ok(Mechanism::C2f),
            "hfm" => Ok(Mechanism::Hfm),
            "dfm" => Ok(Mechanism::Dfm),
            _ => Err(CoreError::Config(format!("unknown mechanism `{s}` (expected c2f, hfm, dfm)"))),
        }
    }
}

/// Where each token's flow starts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    /// Gaussian centred on the previous frame (standard normal for the first).
    #[default]
    PreviousFrame,
    /// Standard normal at every step.
    Vanilla,
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorKind::PreviousFrame => "previous-frame",
            PriorKind::Vanilla => "vanilla",
        })
    }
}

impl FromStr for PriorKind {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "previous-frame" => Ok(PriorKind::PreviousFrame),
            "vanilla" => Ok(PriorKind::Vanilla),
            _ => Err(CoreError::Config(format!("unknown prior `{s}` (expected previous-frame, vanilla)"))),
        }
    }
}

impl PriorKind {
    /// Prior for one stage given the matching component of the previous frame.
    pub fn prior(self, prev: Option<Vec<f64>>, sigma2: f64) -> Result<InformativePrior> {
        match (self, prev) {
            (PriorKind::PreviousFrame, Some(m)) => InformativePrior::centered(m, sigma2),
            _ => Ok(InformativePrior::standard()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadsConfig {
    pub frame_dim: usize,
    pub hidden: usize,
    pub n_blocks: usize,
    pub time_freq_dim: usize,
    pub mechanism: Mechanism,
}

impl HeadsConfig {
    fn coarse(&self) -> FieldConfig {
        FieldConfig {
            dim: self.frame_dim / 2,
            hidden: self.hidden,
            cond_dim: self.frame_dim,
            aux_dim: 0,
            time_freq_dim: self.time_freq_dim,
            n_blocks: self.n_blocks,
        }
    }

    fn fine(&self) -> FieldConfig {
        FieldConfig { dim: self.frame_dim, aux_dim: self.frame_dim / 2, ..self.coarse() }
    }

    /// Full-dimension net whose hidden width brings its size closest to the two-stage pair.
    fn single(&self) -> FieldConfig {
        let budget = VectorFieldNet::count_params(&self.coarse()) + VectorFieldNet::count_params(&self.fine());
        let base = FieldConfig { dim: self.frame_dim, ..self.coarse() };
        let count = |h: usize| VectorFieldNet::count_params(&FieldConfig { hidden: h, ..base.clone() });
        let hidden = (1..=4 * self.hidden + 8)
            .min_by_key(|&h| count(h).abs_diff(budget))
            .unwrap_or(self.hidden);
        FieldConfig { hidden, ..base }
    }
}

/// The flow-matching nets of a model.
#[derive(Clone, Debug)]
pub enum FlowHeads {
    TwoStage { coarse: VectorFieldNet, fine: VectorFieldNet, blind_fine: bool },
    Single(VectorFieldNet),
}

impl FlowHeads {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &HeadsConfig, rng: &mut R) -> Result<Self> {
        if !cfg.frame_dim.is_multiple_of(2) {
            return Err(CoreError::OddDimension(cfg.frame_dim));
        }
        Ok(match cfg.mechanism {
            Mechanism::Hfm => FlowHeads::Single(VectorFieldNet::new(store, "fm.full", &cfg.single(), rng)?),
            m => FlowHeads::TwoStage {
                coarse: VectorFieldNet::new(store, "fm.coarse", &cfg.coarse(), rng)?,
                fine: VectorFieldNet::new(store, "fm.fine", &cfg.fine(), rng)?,
                blind_fine: m == Mechanism::Dfm,
            },
        })
    }

    pub fn nets(&self) -> Vec<&VectorFieldNet> {
        match self {
            FlowHeads::TwoStage { coarse, fine, .. } => vec![coarse, fine],
            FlowHeads::Single(n) => vec![n],
        }
    }

    /// Coarse input actually fed to the fine stage.
    fn fine_aux(&self, coarse: &[f64]) -> Vec<f64> {
        match self {
            FlowHeads::TwoStage { blind_fine: true, .. } => vec![0.0; coarse.len()],
            _ => coarse.to_vec(),
        }
    }
}

/// Flow-matching draws for every frame of one sequence.
#[derive(Clone, Debug)]
pub struct StageDraws {
    /// Coarse-stage samples, or full-frame samples for a single-stage model.
    pub coarse: Vec<FlowSample>,
    pub fine: Vec<FlowSample>,
    /// Row-major `[L, D/2]` coarse input for the fine stage.
    pub aux: Vec<f64>,
}

/// Teacher-forced draws: stage priors come from the ground-truth previous
/// frame, and each stage draws its own time.
pub fn draw_stages<R: Rng + ?Sized>(
    heads: &FlowHeads,
    target: &FrameSequence,
    prior: PriorKind,
    sigma2: f64,
    rng: &mut R,
) -> Result<StageDraws> {
    let l = target.len();
    let mut draws = StageDraws { coarse: Vec::with_capacity(l), fine: Vec::with_capacity(l), aux: Vec::new() };
    for i in 0..l {
        let x = target.frame(i);
        let prev = (i > 0).then(|| target.frame(i - 1));
        match heads {
            FlowHeads::Single(_) => {
                let p = prior.prior(prev.map(<[f64]>::to_vec), sigma2)?;
                draws.coarse.push(draw_path_sample(x, &p, rng)?);
            }
            FlowHeads::TwoStage { .. } => {
                let parts = decompose(x)?;
                let prev_parts = prev.map(decompose).transpose()?;
                let pc = prior.prior(prev_parts.as_ref().map(|p| p.coarse.clone()), sigma2)?;
                draws.coarse.push(draw_path_sample(&parts.coarse, &pc, rng)?);
                let pf = prior.prior(prev_parts.map(|p| p.fine), sigma2)?;
                draws.fine.push(draw_path_sample(&parts.fine, &pf, rng)?);
                draws.aux.extend(heads.fine_aux(&parts.coarse));
            }
        }
    }
    Ok(draws)
}

/// Coarse-stage (or single-stage) CFM loss; `z` holds one condition row per frame.
pub fn coarse_stage_loss<T: Real>(g: &mut Graph<'_, T>, heads: &FlowHeads, draws: &StageDraws, z: Var) -> Result<Var> {
    let net = match heads {
        FlowHeads::TwoStage { coarse, .. } => coarse,
        FlowHeads::Single(n) => n,
    };
    cfm_loss(g, net, &draws.coarse, Some(z), None)
}

/// Fine-stage CFM loss, conditioned on `z` and the ground-truth coarse part.
pub fn fine_stage_loss<T: Real>(g: &mut Graph<'_, T>, heads: &FlowHeads, draws: &StageDraws, z: Var) -> Result<Option<Var>> {
    match heads {
        FlowHeads::Single(_) => Ok(None),
        FlowHeads::TwoStage { fine, .. } => {
            let half = draws.aux.len() / draws.fine.len().max(1);
            let aux = g.input(Tensor::from_f64(vec![draws.fine.len(), half], &draws.aux)?);
            cfm_loss(g, fine, &draws.fine, Some(z), Some(aux)).map(Some)
        }
    }
}

/// Sum of the stage losses.
pub fn c2f_loss<T: Real>(g: &mut Graph<'_, T>, heads: &FlowHeads, draws: &StageDraws, z: Var) -> Result<Var> {
    let c = coarse_stage_loss(g, heads, draws, z)?;
    match fine_stage_loss(g, heads, draws, z)? {
        Some(f) => Ok(g.add(c, f)?),
        None => Ok(c),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub nfe: usize,
    pub cfg_scale: f64,
    pub sigma2: f64,
    pub stop_threshold: f64,
    pub prior: PriorKind,
    pub max_len: usize,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self { nfe: 3, cfg_scale: 1.6, sigma2: 0.1, stop_threshold: 0.5, prior: PriorKind::PreviousFrame, max_len: 64 }
    }
}

/// Per-utterance sampling state: the previous emitted frame and the noise stream.
pub struct GenerationSession<'m, T: Real> {
    model: &'m Model<T>,
    settings: GenerationSettings,
    prev: Option<Vec<f64>>,
    rng: ChaCha8Rng,
    finished: bool,
}

impl<'m, T: Real> GenerationSession<'m, T> {
    pub fn new(model: &'m Model<T>, settings: GenerationSettings, seed: u64) -> Result<Self> {
        if settings.nfe == 0 {
            return Err(CoreError::ZeroNfe);
        }
        if settings.sigma2 < 0.0 {
            return Err(CoreError::NegativeVariance(settings.sigma2));
        }
        Ok(Self { model, settings, prev: None, rng: ChaCha8Rng::seed_from_u64(seed), finished: false })
    }

    pub fn settings(&self) -> &GenerationSettings {
        &self.settings
    }

    pub fn previous_frame(&self) -> Option<&[f64]> {
        self.prev.as_deref()
    }

    /// Overrides the frame the next token's prior is centred on.
    pub fn set_previous_frame(&mut self, frame: Option<Vec<f64>>) {
        self.prev = frame;
    }

    pub fn finish(&mut self) {
        self.finished = true;
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Samples one frame for condition `z`; `z_uncond` enables guidance.
    pub fn generate_token(&mut self, z: &[f64], z_uncond: Option<&[f64]>) -> Result<Vec<f64>> {
        if self.finished {
            return Err(CoreError::SessionFinished);
        }
        let s = &self.settings;
        let params = &self.model.params;
        let guidance = z_uncond.map(|u| GuidanceSpec { scale: s.cfg_scale, uncond: u.to_vec() });
        let frame = match &self.model.heads {
            FlowHeads::Single(net) => {
                let prior = s.prior.prior(self.prev.clone(), s.sigma2)?;
                let x0 = prior.sample(net.config().dim, &mut self.rng)?;
                euler_sample(net, params, x0, Some(z), None, s.nfe, guidance.as_ref())?
            }
            heads @ FlowHeads::TwoStage { coarse, fine, .. } => {
                let prev = self.prev.as_deref().map(decompose).transpose()?;
                let pc = s.prior.prior(prev.as_ref().map(|p| p.coarse.clone()), s.sigma2)?;
                let x0c = pc.sample(coarse.config().dim, &mut self.rng)?;
                let pf = s.prior.prior(prev.map(|p| p.fine), s.sigma2)?;
                let x0f = pf.sample(fine.config().dim, &mut self.rng)?;
                let xc = euler_sample(coarse, params, x0c, Some(z), None, s.nfe, guidance.as_ref())?;
                let aux = heads.fine_aux(&xc);
                let xf = euler_sample(fine, params, x0f, Some(z), Some(&aux), s.nfe, guidance.as_ref())?;
                upsample(&xc).iter().zip(&xf).map(|(c, f)| c + f).collect()
            }
        };
        if frame.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Autodiff(tokenflow_autodiff::AutodiffError::NonFinite { op: "generate_token" }));
        }
        self.prev = Some(frame.clone());
        Ok(frame)
    }
}

/// Frames plus the stop probability seen after each one.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub frames: FrameSequence,
    pub stop_probs: Vec<f64>,
}

/// Decodes frame by frame until the stop probability exceeds the threshold or
/// `settings.max_len` frames exist.
pub fn generate_sequence<T: Real>(
    model: &Model<T>,
    y: &SymbolSequence,
    prompt: &StylePrompt,
    settings: &GenerationSettings,
    seed: u64,
) -> Result<Generated> {
    if settings.max_len == 0 {
        return Err(CoreError::Config("max_len must be at least 1".into()));
    }
    let dcfg = model.decoder.config();
    let prompt_rows = if prompt.masked { 1 } else { prompt.frames.as_ref().map_or(0, FrameSequence::len) };
    // Positions left for frames once text, separator, and prompt are placed.
    let capacity = dcfg.max_len.saturating_sub(y.len() + 1 + prompt_rows) + 1;
    let max_len = settings.max_len.min(capacity);
    let guided = settings.cfg_scale != 1.0;
    let uncond_prompt = prompt.masked();
    let mut session = GenerationSession::new(model, settings.clone(), seed)?;
    let mut out = Generated { frames: FrameSequence::new(dcfg.frame_dim), stop_probs: Vec::new() };
    while out.frames.len() < max_len {
        let state = model.decoder.decode_step(&model.params, y, prompt, &out.frames)?;
        let uncond = if guided {
            Some(model.decoder.decode_step(&model.params, y, &uncond_prompt, &out.frames)?.z)
        } else {
            None
        };
        let frame = session.generate_token(&state.z, uncond.as_deref())?;
        out.frames.push(&frame)?;
        let p = stop_probability(state.stop_logit);
        out.stop_probs.push(p);
        if p > settings.stop_threshold {
            break;
        }
    }
    session.finish();
    Ok(out)
}
