//! Held-out evaluation in the continuation and cross-prompt settings, and
//! parameter sweeps over inference or training knobs.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tokenflow_autodiff::Real;

use crate::c2f::{generate_sequence, GenerationSettings, Mechanism, PriorKind};
use crate::conditioner::StylePrompt;
use crate::error::{CoreError, Result};
use crate::model::Model;
use crate::tasks::{derive_seed, oracle_metrics, OracleMetrics, TaskInstance, TaskSpec};
use crate::train::{TrainConfig, Trainer};

/// Where the style prompt comes from at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// The first frames of the instance's own target.
    Continuation,
    /// The prompt of another held-out instance with the same style.
    Cross,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Continuation => "continuation",
            Setting::Cross => "cross",
        })
    }
}

impl FromStr for Setting {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuation" => Ok(Setting::Continuation),
            "cross" => Ok(Setting::Cross),
            _ => Err(CoreError::Config(format!("unknown setting `{s}` (expected continuation, cross)"))),
        }
    }
}

/// Prompt used for `instances[index]` under `setting`.
pub fn eval_prompt(spec: &TaskSpec, setting: Setting, instances: &[TaskInstance], index: usize) -> StylePrompt {
    let inst = &instances[index];
    match setting {
        Setting::Continuation => StylePrompt::new(inst.target.prefix(spec.prompt_frames)),
        Setting::Cross => {
            let n = instances.len();
            let partner = (1..n).map(|o| &instances[(index + o) % n]).find(|o| o.style == inst.style);
            StylePrompt::new(partner.map_or(&inst.prompt, |p| &p.prompt).clone())
        }
    }
}

/// Aggregate metrics of one evaluation point; one row of the eval CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub setting: String,
    pub nfe: usize,
    pub w: f64,
    pub sigma2: f64,
    pub mse: f64,
    pub corr: f64,
    pub mode_acc: f64,
    /// Mean absolute length error in frames.
    pub len_err: f64,
    /// Fraction of instances whose length is within one frame of the oracle.
    pub len_within_one: f64,
}

impl EvalRow {
    pub const CSV_HEADER: &'static str = "setting,nfe,w,sigma2,mse,corr,mode_acc,len_err";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.setting, self.nfe, self.w, self.sigma2, self.mse, self.corr, self.mode_acc, self.len_err
        )
    }
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from(EvalRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Per-instance metrics of generations from `model`; instance `i` samples
/// with a seed derived from `(seed, id)`, so results do not depend on worker count.
pub fn eval_instances<T: Real>(
    model: &Model<T>,
    spec: &TaskSpec,
    instances: &[TaskInstance],
    setting: Setting,
    settings: &GenerationSettings,
    seed: u64,
) -> Result<Vec<OracleMetrics>> {
    (0..instances.len())
        .into_par_iter()
        .map(|i| {
            let inst = &instances[i];
            let prompt = eval_prompt(spec, setting, instances, i);
            let gen = GenerationSettings { max_len: 2 * spec.frames_per_symbol * inst.symbols.len(), ..settings.clone() };
            let out = generate_sequence(model, &inst.symbols, &prompt, &gen, derive_seed(seed, inst.id as u64))?;
            oracle_metrics(spec, &out.frames, inst)
        })
        .collect()
}

pub fn aggregate(label: &str, settings: &GenerationSettings, metrics: &[OracleMetrics]) -> EvalRow {
    let n = metrics.len().max(1) as f64;
    let mean = |f: &dyn Fn(&OracleMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
    EvalRow {
        setting: label.to_string(),
        nfe: settings.nfe,
        w: settings.cfg_scale,
        sigma2: settings.sigma2,
        mse: mean(&|m| m.mse),
        corr: mean(&|m| m.corr),
        mode_acc: mean(&|m| m.mode_acc),
        len_err: mean(&|m| m.len_err as f64),
        len_within_one: mean(&|m| f64::from(u8::from(m.len_err <= 1))),
    }
}

/// Evaluates one setting and returns its aggregate row.
pub fn run_eval<T: Real>(
    model: &Model<T>,
    spec: &TaskSpec,
    instances: &[TaskInstance],
    setting: Setting,
    settings: &GenerationSettings,
    seed: u64,
) -> Result<EvalRow> {
    let metrics = eval_instances(model, spec, instances, setting, settings, seed)?;
    Ok(aggregate(&setting.to_string(), settings, &metrics))
}

/// Knob varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Nfe,
    Cfg,
    Sigma2,
    Netscale,
    Prior,
    Mechanism,
}

impl FromStr for SweepAxis {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "nfe" => SweepAxis::Nfe,
            "cfg" => SweepAxis::Cfg,
            "sigma2" => SweepAxis::Sigma2,
            "netscale" => SweepAxis::Netscale,
            "prior" => SweepAxis::Prior,
            "mechanism" => SweepAxis::Mechanism,
            _ => {
                return Err(CoreError::Config(format!(
                    "unknown sweep axis `{s}` (expected nfe, cfg, sigma2, netscale, prior, mechanism)"
                )))
            }
        })
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Nfe => "nfe",
            SweepAxis::Cfg => "cfg",
            SweepAxis::Sigma2 => "sigma2",
            SweepAxis::Netscale => "netscale",
            SweepAxis::Prior => "prior",
            SweepAxis::Mechanism => "mechanism",
        })
    }
}

impl SweepAxis {
    /// Axes that need a freshly trained model per grid point.
    pub fn retrains(self) -> bool {
        matches!(self, SweepAxis::Netscale | SweepAxis::Prior | SweepAxis::Mechanism)
    }

    pub fn default_grid(self) -> Vec<String> {
        let v: &[&str] = match self {
            SweepAxis::Nfe => &["1", "2", "3", "5", "7", "16", "32"],
            SweepAxis::Cfg => &["1.0", "1.3", "1.6", "2.0", "3.0"],
            SweepAxis::Sigma2 => &["0.05", "0.1", "0.2"],
            SweepAxis::Netscale => &["0.5", "1", "2"],
            SweepAxis::Prior => &["previous-frame", "vanilla"],
            SweepAxis::Mechanism => &["c2f", "hfm", "dfm"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

fn parse_point<V: FromStr>(axis: SweepAxis, p: &str) -> Result<V> {
    p.parse().map_err(|_| CoreError::Config(format!("bad {axis} grid value `{p}`")))
}

/// Inference-only sweep: one row per grid point, each evaluated in `setting`.
pub fn sweep_inference<T: Real>(
    model: &Model<T>,
    spec: &TaskSpec,
    instances: &[TaskInstance],
    setting: Setting,
    base: &GenerationSettings,
    axis: SweepAxis,
    grid: &[String],
    seed: u64,
) -> Result<Vec<EvalRow>> {
    if axis.retrains() {
        return Err(CoreError::Config(format!("axis {axis} needs training; use sweep_training")));
    }
    grid.iter()
        .map(|p| {
            let mut s = base.clone();
            match axis {
                SweepAxis::Nfe => s.nfe = parse_point(axis, p)?,
                SweepAxis::Cfg => s.cfg_scale = parse_point(axis, p)?,
                SweepAxis::Sigma2 => s.sigma2 = parse_point(axis, p)?,
                _ => unreachable!(),
            }
            run_eval(model, spec, instances, setting, &s, seed)
        })
        .collect()
}

/// Training configuration of one training-axis grid point.
pub fn variant_config(base: &TrainConfig, axis: SweepAxis, point: &str) -> Result<TrainConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Netscale => {
            let f: f64 = parse_point(axis, point)?;
            if !(f > 0.0) {
                return Err(CoreError::Config(format!("netscale {f} must be positive")));
            }
            cfg.flow_hidden = ((base.flow_hidden as f64 * f).round() as usize).max(1);
        }
        SweepAxis::Prior => cfg.prior = parse_point::<PriorKind>(axis, point)?,
        SweepAxis::Mechanism => cfg.mechanism = parse_point::<Mechanism>(axis, point)?,
        _ => return Err(CoreError::Config(format!("axis {axis} does not retrain"))),
    }
    Ok(cfg)
}

/// Trains one model per grid point on `train` and evaluates each at every
/// NFE in `eval_nfes`. Rows are labelled `setting/axis=point`.
pub fn sweep_training<T: Real>(
    base: &TrainConfig,
    spec: &TaskSpec,
    train: &[TaskInstance],
    heldout: &[TaskInstance],
    setting: Setting,
    axis: SweepAxis,
    grid: &[String],
    eval_nfes: &[usize],
    seed: u64,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    for p in grid {
        let cfg = variant_config(base, axis, p)?;
        let mut trainer = Trainer::<T>::new(&cfg, spec)?;
        trainer.run_until(train, cfg.steps, |_, _| Ok(()))?;
        for &nfe in eval_nfes {
            let gen = GenerationSettings { nfe, ..cfg.generation(spec, 1) };
            let metrics = eval_instances(&trainer.model, spec, heldout, setting, &gen, seed)?;
            rows.push(aggregate(&format!("{setting}/{axis}={p}"), &gen, &metrics));
        }
    }
    Ok(rows)
}
