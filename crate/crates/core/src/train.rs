//! Combined objective, prompt dropout, optimisation loop, and metric logging.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tokenflow_autodiff::{AdamConfig, Gradients, Graph, Precision, Real, Var};

use crate::c2f::{c2f_loss, draw_stages, GenerationSettings, Mechanism, PriorKind};
use crate::conditioner::{DecoderConfig, StylePrompt};
use crate::error::{CoreError, Result};
use crate::model::{Model, ModelConfig};
use crate::tasks::{derive_seed, TaskInstance, TaskSpec};

/// Every knob of a training run, read from one flat TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    /// Weight of the condition loss.
    pub lambda_cond: f64,
    /// Weight of the stop loss.
    pub alpha_stop: f64,
    pub sigma2: f64,
    pub p_drop: f64,
    pub nfe: usize,
    pub cfg_scale: f64,
    pub stop_threshold: f64,
    pub precision: Precision,
    /// Save a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    /// Record elapsed seconds in the metric CSV; off keeps the file reproducible.
    pub log_wall_time: bool,

    pub n_blocks: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub flow_hidden: usize,
    pub flow_blocks: usize,
    pub time_freq_dim: usize,
    pub mechanism: Mechanism,
    pub prior: PriorKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let d = DecoderConfig::default();
        let m = ModelConfig::default();
        Self {
            seed: 0,
            steps: 5000,
            batch_size: 16,
            lr: 1e-3,
            warmup_steps: 100,
            lambda_cond: 0.1,
            alpha_stop: 0.01,
            sigma2: 0.1,
            p_drop: 0.1,
            nfe: 3,
            cfg_scale: 1.6,
            stop_threshold: 0.5,
            precision: Precision::F32,
            checkpoint_every: 0,
            log_wall_time: false,
            n_blocks: d.n_blocks,
            n_heads: d.n_heads,
            embed_dim: d.embed_dim,
            ffn_dim: d.ffn_dim,
            max_len: d.max_len,
            flow_hidden: m.flow_hidden,
            flow_blocks: m.flow_blocks,
            time_freq_dim: m.time_freq_dim,
            mechanism: m.mechanism,
            prior: m.prior,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CoreError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CoreError::Config(m) => CoreError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let unit = [("lambda_cond", self.lambda_cond), ("alpha_stop", self.alpha_stop), ("p_drop", self.p_drop)];
        if let Some((k, v)) = unit.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(CoreError::Config(format!("{k} = {v} must lie in [0, 1]")));
        }
        if !(self.lr > 0.0) {
            return Err(CoreError::Config("lr must be positive".into()));
        }
        if self.sigma2 < 0.0 {
            return Err(CoreError::Config("sigma2 must be non-negative".into()));
        }
        if self.batch_size == 0 || self.nfe == 0 {
            return Err(CoreError::Config("batch_size and nfe must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, spec: &TaskSpec) -> ModelConfig {
        ModelConfig {
            decoder: DecoderConfig {
                n_blocks: self.n_blocks,
                n_heads: self.n_heads,
                embed_dim: self.embed_dim,
                ffn_dim: self.ffn_dim,
                frame_dim: spec.frame_dim,
                vocab_size: spec.vocab_size,
                max_len: self.max_len,
            },
            flow_hidden: self.flow_hidden,
            flow_blocks: self.flow_blocks,
            time_freq_dim: self.time_freq_dim,
            mechanism: self.mechanism,
            prior: self.prior,
        }
    }

    /// Inference settings implied by this config; max length is twice the oracle
    /// length of an `n_symbols`-symbol input.
    pub fn generation(&self, spec: &TaskSpec, n_symbols: usize) -> GenerationSettings {
        GenerationSettings {
            nfe: self.nfe,
            cfg_scale: self.cfg_scale,
            sigma2: self.sigma2,
            stop_threshold: self.stop_threshold,
            prior: self.prior,
            max_len: 2 * spec.frames_per_symbol * n_symbols,
        }
    }

    pub fn adam(&self, step: u64) -> AdamConfig {
        let warm = if self.warmup_steps == 0 { 1.0 } else { ((step + 1) as f64 / self.warmup_steps as f64).min(1.0) };
        AdamConfig { lr: self.lr * warm, ..AdamConfig::default() }
    }
}

/// Mean over rows of `||z - x||_1 + ||z - x||_2^2`.
pub fn cond_loss<T: Real>(g: &mut Graph<'_, T>, z: Var, x: Var) -> Result<Var> {
    let rows = g.value(z).rows().max(1);
    let diff = g.sub(z, x)?;
    let a = g.abs(diff)?;
    let l1 = g.sum(a)?;
    let s = g.square(diff)?;
    let l2 = g.sum(s)?;
    let tot = g.add(l1, l2)?;
    Ok(g.scale(tot, 1.0 / rows as f64)?)
}

/// Binary cross-entropy of per-step stop logits against "stop only at the last step".
pub fn stop_loss<T: Real>(g: &mut Graph<'_, T>, logits: Var, oracle_len: usize) -> Result<Var> {
    let n = g.value(logits).len();
    if n != oracle_len || n == 0 {
        return Err(CoreError::Dimension { expected: oracle_len, got: n });
    }
    let mut targets = vec![T::zero(); n];
    targets[n - 1] = T::one();
    Ok(g.bce_with_logits(logits, &targets)?)
}

/// Graph nodes of the three loss terms for one instance.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub c2f: Var,
    pub cond: Var,
    pub stop: Var,
}

/// Teacher-forced losses of one instance. The prompt is replaced by the null
/// prompt when `masked`.
pub fn instance_losses<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<'_, T>,
    model: &Model<T>,
    inst: &TaskInstance,
    masked: bool,
    sigma2: f64,
    rng: &mut R,
) -> Result<LossTerms> {
    let prompt = StylePrompt::new(inst.prompt.clone());
    let prompt = if masked { prompt.masked() } else { prompt };
    let target = &inst.target;
    let out = model.decoder.forward(g, &inst.symbols, &prompt, target, target.len())?;
    let draws = draw_stages(&model.heads, target, model.config.prior, sigma2, rng)?;
    let c2f = c2f_loss(g, &model.heads, &draws, out.z)?;
    let x = g.input(tokenflow_autodiff::Tensor::from_f64(vec![target.len(), target.dim()], target.as_flat())?);
    let cond = cond_loss(g, out.z, x)?;
    let stop = stop_loss(g, out.stop, target.len())?;
    Ok(LossTerms { c2f, cond, stop })
}

/// One logged optimisation step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss_c2f: f64,
    pub loss_cond: f64,
    pub loss_stop: f64,
    pub loss_total: f64,
    pub sec: f64,
}

impl StepRecord {
    pub const CSV_HEADER: &'static str = "step,loss_c2f,loss_cond,loss_stop,loss_total,sec";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.loss_c2f, self.loss_cond, self.loss_stop, self.loss_total, self.sec
        )
    }
}

/// Append-only training and evaluation log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<crate::eval::EvalRow>,
}

impl MetricLog {
    pub fn push(&mut self, rec: StepRecord) -> Result<()> {
        if let Some(last) = self.steps.last() {
            if rec.step <= last.step {
                return Err(CoreError::Config(format!("step {} logged after step {}", rec.step, last.step)));
            }
        }
        self.steps.push(rec);
        Ok(())
    }

    pub fn steps_csv(&self) -> String {
        let mut out = String::from(StepRecord::CSV_HEADER);
        out.push('\n');
        for r in &self.steps {
            writeln!(out, "{}", r.csv_row()).expect("write to string");
        }
        out
    }
}

/// Runs one optimizer step on `batch` and returns its log record.
///
/// Each instance gets its own random stream derived from `(seed, step, index)`
/// and its own graph; gradients are reduced in batch order, so results do not
/// depend on how many workers evaluate the batch.
pub fn train_step<T: Real>(model: &mut Model<T>, batch: &[&TaskInstance], cfg: &TrainConfig, step: u64) -> Result<StepRecord> {
    if batch.is_empty() {
        return Err(CoreError::Empty("batch"));
    }
    let step_seed = derive_seed(derive_seed(cfg.seed, 0x7472_6169_6e), step);
    let results: Vec<Result<([f64; 3], Gradients<T>)>> = {
        let model = &*model;
        batch
            .par_iter()
            .enumerate()
            .map(|(b, inst)| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(step_seed, b as u64));
                let masked = rng.gen::<f64>() < cfg.p_drop;
                let mut g = Graph::new(&model.params);
                let terms = instance_losses(&mut g, model, inst, masked, cfg.sigma2, &mut rng)?;
                let wc = g.scale(terms.cond, cfg.lambda_cond)?;
                let ws = g.scale(terms.stop, cfg.alpha_stop)?;
                let t = g.add(terms.c2f, wc)?;
                let total = g.add(t, ws)?;
                let vals = [terms.c2f, terms.cond, terms.stop].map(|v| g.value(v).item().as_f64());
                Ok((vals, g.backward(total)?))
            })
            .collect()
    };
    let scale = 1.0 / batch.len() as f64;
    let mut sums = [0.0f64; 3];
    for r in results {
        let (vals, grads) = r?;
        for (s, v) in sums.iter_mut().zip(vals) {
            *s += v;
        }
        model.params.accumulate(&grads, T::lit(scale));
    }
    let [loss_c2f, loss_cond, loss_stop] = sums.map(|s| s * scale);
    let loss_total = loss_c2f + cfg.lambda_cond * loss_cond + cfg.alpha_stop * loss_stop;
    if !loss_total.is_finite() {
        model.params.zero_grad();
        return Err(CoreError::NonFiniteLoss { step, last_good: String::new() });
    }
    model.params.adam_step(&cfg.adam(step))?;
    Ok(StepRecord { step, loss_c2f, loss_cond, loss_stop, loss_total, sec: 0.0 })
}

/// Batch indices for `step`; sampled with replacement from the corpus.
pub fn batch_indices(cfg: &TrainConfig, step: u64, corpus_len: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, 0x6261_7463_68), step));
    (0..cfg.batch_size).map(|_| rng.gen_range(0..corpus_len)).collect()
}

/// Mean teacher-forced condition loss (unmasked prompts) over `instances`.
pub fn eval_cond_loss<T: Real>(model: &Model<T>, instances: &[TaskInstance]) -> Result<f64> {
    let mut total = 0.0;
    for inst in instances {
        let mut g = Graph::new(&model.params);
        let prompt = StylePrompt::new(inst.prompt.clone());
        let out = model.decoder.forward(&mut g, &inst.symbols, &prompt, &inst.target, inst.target.len())?;
        let x = g.input(tokenflow_autodiff::Tensor::from_f64(vec![inst.target.len(), inst.target.dim()], inst.target.as_flat())?);
        let l = cond_loss(&mut g, out.z, x)?;
        total += g.value(l).item().as_f64();
    }
    Ok(total / instances.len().max(1) as f64)
}

/// Checkpoint metadata beyond the model config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub train: TrainConfig,
    pub task: TaskSpec,
    /// Number of completed steps.
    pub step: u64,
}

/// Owns the model being trained and the step counter.
pub struct Trainer<T: Real> {
    pub model: Model<T>,
    pub config: TrainConfig,
    pub task: TaskSpec,
    pub step: u64,
    pub log: MetricLog,
    pub last_good: Option<PathBuf>,
    started: Instant,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: &TrainConfig, task: &TaskSpec) -> Result<Self> {
        config.validate()?;
        task.validate()?;
        let model = Model::new(&config.model_config(task), derive_seed(config.seed, 0x696e_6974))?;
        Ok(Self {
            model,
            config: config.clone(),
            task: task.clone(),
            step: 0,
            log: MetricLog::default(),
            last_good: None,
            started: Instant::now(),
        })
    }

    pub fn resume(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (model, extra) = Model::load(path)?;
        let state: TrainerState = serde_json::from_value(extra)
            .map_err(|e| CoreError::Load { path: path.to_path_buf(), reason: format!("trainer state: {e}") })?;
        Ok(Self {
            model,
            config: state.train,
            task: state.task,
            step: state.step,
            log: MetricLog::default(),
            last_good: Some(path.to_path_buf()),
            started: Instant::now(),
        })
    }

    pub fn state(&self) -> TrainerState {
        TrainerState { train: self.config.clone(), task: self.task.clone(), step: self.step }
    }

    pub fn save(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.model.save(path, serde_json::to_value(self.state())?)?;
        self.last_good = Some(path.to_path_buf());
        Ok(())
    }

    /// One step on a batch drawn from `corpus`.
    pub fn step(&mut self, corpus: &[TaskInstance]) -> Result<StepRecord> {
        if corpus.is_empty() {
            return Err(CoreError::Empty("training corpus"));
        }
        let idx = batch_indices(&self.config, self.step, corpus.len());
        let batch: Vec<&TaskInstance> = idx.iter().map(|&i| &corpus[i]).collect();
        let mut rec = train_step(&mut self.model, &batch, &self.config, self.step).map_err(|e| {
            if e.is_numeric() {
                CoreError::NonFiniteLoss { step: self.step, last_good: self.last_good_label() }
            } else {
                e
            }
        })?;
        if self.config.log_wall_time {
            rec.sec = self.started.elapsed().as_secs_f64();
        }
        self.step += 1;
        self.log.push(rec)?;
        Ok(rec)
    }

    fn last_good_label(&self) -> String {
        self.last_good.as_ref().map_or_else(|| "none".to_string(), |p| p.display().to_string())
    }

    /// Trains until `self.step == until`, calling `on_step` after each step.
    pub fn run_until(&mut self, corpus: &[TaskInstance], until: u64, mut on_step: impl FnMut(&mut Self, &StepRecord) -> Result<()>) -> Result<()> {
        while self.step < until {
            let rec = self.step(corpus)?;
            on_step(self, &rec)?;
        }
        Ok(())
    }
}
