mod manifest;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use tokenflow_core::autodiff::{peek_precision, AutodiffError, Precision, Real};
use tokenflow_core::c2f::{generate_sequence, GenerationSettings};
use tokenflow_core::conditioner::{StylePrompt, SymbolSequence};
use tokenflow_core::eval::{eval_csv, eval_prompt, run_eval, sweep_inference, sweep_training, Setting, SweepAxis};
use tokenflow_core::model::Model;
use tokenflow_core::tasks::{Corpus, TaskSpec, MANIFEST_FILE};
use tokenflow_core::train::{StepRecord, TrainConfig, Trainer, TrainerState};
use tokenflow_core::{CoreError, FrameSequence};

use crate::manifest::{RunManifest, MANIFEST_NAME};

/// Environment variable capping the worker pool size.
const WORKERS_ENV: &str = "TOKENFLOW_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "tokenflow", version, about = "Coarse-to-fine flow-matching sequence generator on synthetic tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic corpus to CSV shards plus a JSON manifest.
    MakeCorpus(MakeCorpusArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Sample sequences from a checkpoint.
    Generate(GenerateArgs),
    /// Evaluate a checkpoint on a held-out corpus in both prompt settings.
    Eval(EvalArgs),
    /// Evaluate over a grid of one inference or training knob.
    Sweep(SweepArgs),
    /// Rerun the command recorded in a run manifest and compare outputs.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct MakeCorpusArgs {
    /// TOML task specification; defaults are used for missing keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    /// Overwrite an existing corpus in `out`.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML training config; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `steps` (total, counted from step 0).
    #[arg(long)]
    steps: Option<u64>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from this checkpoint; its stored config is used.
    #[arg(long)]
    resume: Option<PathBuf>,
}

/// Inference knobs shared by generate, eval, and sweep. Unset flags fall back
/// to `--config`, then to the config stored in the checkpoint.
#[derive(Args, Debug, Clone)]
struct InferenceArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nfe: Option<usize>,
    #[arg(long = "cfg-scale")]
    cfg_scale: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    /// Same as `--cfg-scale 1`.
    #[arg(long = "no-guidance")]
    no_guidance: bool,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated symbol indices.
    #[arg(long)]
    symbols: Option<String>,
    /// Prompt frames as CSV.
    #[arg(long)]
    prompt: Option<PathBuf>,
    /// Corpus providing symbols and prompts for `--instance`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    instance: Vec<usize>,
    #[arg(long, default_value = "continuation")]
    setting: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "max-len")]
    max_len: Option<usize>,
    #[command(flatten)]
    inference: InferenceArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Evaluate only the first N instances.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    inference: InferenceArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Held-out corpus.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    axis: String,
    /// Comma-separated grid; the axis default when omitted.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, default_value = "continuation")]
    setting: String,
    #[arg(long)]
    limit: Option<usize>,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training corpus, required by axes that retrain (netscale, prior, mechanism).
    #[arg(long = "train-corpus")]
    train_corpus: Option<PathBuf>,
    /// Training steps per retrained variant.
    #[arg(long)]
    steps: Option<u64>,
    /// NFE values at which retrained variants are evaluated.
    #[arg(long = "eval-nfe")]
    eval_nfe: Option<String>,
    #[command(flatten)]
    inference: InferenceArgs,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory (or file, matching the original) to write the rerun to.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    if let Err(e) = init_workers() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli.command, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn init_workers() -> Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v.parse().with_context(|| format!("{WORKERS_ENV}={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

/// 3 for numeric failures, 4 for I/O, 2 for everything else (bad input or config).
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<CoreError>() {
            return if c.is_numeric() {
                3
            } else if c.is_io() {
                4
            } else {
                2
            };
        }
        if let Some(a) = cause.downcast_ref::<AutodiffError>() {
            return match a {
                AutodiffError::NonFinite { .. } | AutodiffError::NonFiniteGradient { .. } => 3,
                AutodiffError::Io(_) | AutodiffError::Checkpoint(_) => 4,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    2
}

fn run(command: Command, argv: Vec<String>) -> Result<()> {
    match command {
        Command::MakeCorpus(a) => make_corpus(a, argv),
        Command::Train(a) => train(a, argv),
        Command::Generate(a) => with_precision(&a.checkpoint.clone(), |p| match p {
            Precision::F32 => generate::<f32>(&a, &argv),
            Precision::F64 => generate::<f64>(&a, &argv),
        }),
        Command::Eval(a) => with_precision(&a.checkpoint.clone(), |p| match p {
            Precision::F32 => evaluate::<f32>(&a, &argv),
            Precision::F64 => evaluate::<f64>(&a, &argv),
        }),
        Command::Sweep(a) => with_precision(&a.checkpoint.clone(), |p| match p {
            Precision::F32 => sweep::<f32>(&a, &argv),
            Precision::F64 => sweep::<f64>(&a, &argv),
        }),
        Command::Replay(a) => replay(a),
    }
}

fn with_precision(checkpoint: &Path, f: impl FnOnce(Precision) -> Result<()>) -> Result<()> {
    let p = peek_precision(checkpoint).map_err(|e| CoreError::Load { path: checkpoint.to_path_buf(), reason: e.to_string() })?;
    f(p)
}

fn make_corpus(a: MakeCorpusArgs, argv: Vec<String>) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<TaskSpec>(&text).map_err(|e| CoreError::Config(format!("{}: {}", p.display(), e.message())))?
        }
        None => TaskSpec::default(),
    };
    spec.validate()?;
    if a.out.exists() && fs::read_dir(&a.out)?.next().is_some() {
        if !a.force {
            return Err(CoreError::Config(format!("{} is not empty; pass --force to overwrite", a.out.display())).into());
        }
        for name in [MANIFEST_FILE, MANIFEST_NAME] {
            let p = a.out.join(name);
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
        if a.out.join("shards").exists() {
            fs::remove_dir_all(a.out.join("shards"))?;
        }
    }
    let corpus = Corpus::generate(&spec, a.count, a.seed)?;
    let written = corpus.save(&a.out)?;
    let mut m = RunManifest::new("make-corpus", argv, serde_json::to_value(&spec)?, a.seed);
    if let Some(p) = &a.spec {
        m.input(p)?;
    }
    for p in &written {
        m.output(p)?;
    }
    m.write(&a.out.join(MANIFEST_NAME))?;
    println!("wrote {} instances to {}", corpus.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs, argv: Vec<String>) -> Result<()> {
    let precision = match &a.resume {
        Some(ck) => peek_precision(ck).map_err(|e| CoreError::Load { path: ck.clone(), reason: e.to_string() })?,
        None => load_train_config(a.config.as_deref())?.precision,
    };
    match precision {
        Precision::F32 => train_with::<f32>(&a, argv),
        Precision::F64 => train_with::<f64>(&a, argv),
    }
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    Ok(match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    })
}

fn train_with<T: Real>(a: &TrainArgs, argv: Vec<String>) -> Result<()> {
    let corpus = Corpus::load(&a.corpus)?;
    let mut trainer = match &a.resume {
        Some(ck) => Trainer::<T>::resume(ck)?,
        None => {
            let mut cfg = load_train_config(a.config.as_deref())?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            Trainer::<T>::new(&cfg, &corpus.spec)?
        }
    };
    if trainer.task != corpus.spec {
        bail!(CoreError::Config("corpus task spec differs from the checkpoint's".into()));
    }
    if let Some(s) = a.steps {
        trainer.config.steps = s;
    }
    fs::create_dir_all(&a.out)?;
    let metrics_path = a.out.join("metrics.csv");
    let mut metrics = String::from(StepRecord::CSV_HEADER);
    metrics.push('\n');
    if a.resume.is_some() && metrics_path.exists() {
        // Keep the rows written before the checkpoint so the curve continues.
        let old = fs::read_to_string(&metrics_path)?;
        for line in old.lines().skip(1) {
            let step: u64 = line.split(',').next().and_then(|s| s.parse().ok()).unwrap_or(u64::MAX);
            if step < trainer.step {
                metrics.push_str(line);
                metrics.push('\n');
            }
        }
    }
    let config_path = a.out.join("config.toml");
    fs::write(&config_path, trainer.config.to_toml())?;

    let mut m = RunManifest::new("train", argv, serde_json::to_value(trainer.state())?, trainer.config.seed);
    m.input(&a.corpus.join(MANIFEST_FILE))?;
    if let Some(r) = &a.resume {
        m.input(r)?;
    }
    let started = Instant::now();
    let every = trainer.config.checkpoint_every;
    let mut checkpoints = Vec::new();
    let until = trainer.config.steps;
    let result = trainer.run_until(&corpus.instances, until, |t, rec| {
        metrics.push_str(&rec.csv_row());
        metrics.push('\n');
        if rec.step % 100 == 0 {
            eprintln!("step {:>6}  total {:.5}  c2f {:.5}  cond {:.5}  stop {:.5}", rec.step, rec.loss_total, rec.loss_c2f, rec.loss_cond, rec.loss_stop);
        }
        if every > 0 && t.step % every == 0 && t.step < until {
            let p = a.out.join(format!("checkpoint_step{:06}.json", t.step));
            t.save(&p)?;
            checkpoints.push(p);
        }
        Ok(())
    });
    fs::write(&metrics_path, &metrics)?;
    result?;
    let final_ck = a.out.join("checkpoint.json");
    trainer.save(&final_ck)?;
    checkpoints.push(final_ck);
    let timing = a.out.join("timing.txt");
    fs::write(&timing, format!("{:.3} s for steps up to {}\n", started.elapsed().as_secs_f64(), trainer.step))?;

    m.config = serde_json::to_value(trainer.state())?;
    m.output(&config_path)?;
    m.output(&metrics_path)?;
    for c in &checkpoints {
        m.output(c)?;
    }
    m.volatile_output(&timing)?;
    m.checkpoints = checkpoints;
    m.write(&a.out.join(MANIFEST_NAME))?;
    println!("trained to step {}; checkpoint in {}", trainer.step, a.out.display());
    Ok(())
}

/// Stored training config of a checkpoint, with `--config` and flags applied.
fn inference_settings(state: &TrainerState, inf: &InferenceArgs) -> Result<(TrainConfig, GenerationSettings)> {
    let mut cfg = state.train.clone();
    if let Some(p) = &inf.config {
        let c = TrainConfig::load(p)?;
        cfg.nfe = c.nfe;
        cfg.cfg_scale = c.cfg_scale;
        cfg.sigma2 = c.sigma2;
        cfg.stop_threshold = c.stop_threshold;
    }
    if let Some(n) = inf.nfe {
        cfg.nfe = n;
    }
    if let Some(w) = inf.cfg_scale {
        cfg.cfg_scale = w;
    }
    if let Some(s) = inf.sigma2 {
        cfg.sigma2 = s;
    }
    if inf.no_guidance {
        cfg.cfg_scale = 1.0;
    }
    cfg.validate()?;
    let gen = cfg.generation(&state.task, 1);
    Ok((cfg, gen))
}

fn load_model<T: Real>(path: &Path) -> Result<(Model<T>, TrainerState)> {
    let (model, extra) = Model::<T>::load(path)?;
    let state: TrainerState = serde_json::from_value(extra)
        .map_err(|e| CoreError::Load { path: path.to_path_buf(), reason: format!("trainer state: {e}") })?;
    Ok((model, state))
}

fn parse_list<V: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<V>> {
    s.split(',')
        .map(|p| p.trim().parse::<V>().map_err(|_| CoreError::Config(format!("bad {what} value `{p}`")).into()))
        .collect()
}

fn generate<T: Real>(a: &GenerateArgs, argv: &[String]) -> Result<()> {
    let (model, state) = load_model::<T>(&a.checkpoint)?;
    let (cfg, gen) = inference_settings(&state, &a.inference)?;
    let setting: Setting = a.setting.parse()?;
    let spec = &state.task;
    let corpus = a.corpus.as_ref().map(Corpus::load).transpose()?;
    let prompt_file = a.prompt.as_ref().map(FrameSequence::read_csv).transpose()?;

    // (label, symbols, prompt)
    let mut jobs: Vec<(String, SymbolSequence, StylePrompt)> = Vec::new();
    if let Some(sym) = &a.symbols {
        let y = SymbolSequence::new(parse_list(sym, "symbol")?, spec.vocab_size)?;
        let prompt = match (&prompt_file, &corpus, a.instance.first()) {
            (Some(p), _, _) => StylePrompt::new(p.clone()),
            (None, Some(c), Some(&id)) => eval_prompt(spec, setting, &c.instances, index_of(c, id)?),
            _ => StylePrompt::none(),
        };
        jobs.push(("0".into(), y, prompt));
    } else {
        let c = corpus.as_ref().ok_or_else(|| CoreError::Config("give --symbols or --corpus with --instance".into()))?;
        if a.instance.is_empty() {
            bail!(CoreError::Config("--corpus needs at least one --instance".into()));
        }
        for &id in &a.instance {
            let i = index_of(c, id)?;
            let prompt = match &prompt_file {
                Some(p) => StylePrompt::new(p.clone()),
                None => eval_prompt(spec, setting, &c.instances, i),
            };
            jobs.push((format!("{id:05}"), c.instances[i].symbols.clone(), prompt));
        }
    }

    fs::create_dir_all(&a.out)?;
    let mut m = RunManifest::new("generate", argv.to_vec(), serde_json::to_value(&cfg)?, a.seed);
    m.input(&a.checkpoint)?;
    m.checkpoints.push(a.checkpoint.clone());
    let outputs: Vec<Result<(PathBuf, PathBuf, usize)>> = jobs
        .par_iter()
        .enumerate()
        .map(|(k, (label, y, prompt))| {
            let g = GenerationSettings { max_len: a.max_len.unwrap_or(2 * spec.frames_per_symbol * y.len()), ..gen.clone() };
            let out = generate_sequence(&model, y, prompt, &g, tokenflow_core::tasks::derive_seed(a.seed, k as u64))?;
            let csv = a.out.join(format!("utt_{label}.csv"));
            let pgm = a.out.join(format!("utt_{label}.pgm"));
            out.frames.write_csv(&csv)?;
            out.frames.write_pgm(&pgm)?;
            Ok((csv, pgm, out.frames.len()))
        })
        .collect();
    for o in outputs {
        let (csv, pgm, n) = o?;
        println!("{} ({n} frames)", csv.display());
        m.output(&csv)?;
        m.output(&pgm)?;
    }
    m.write(&a.out.join(MANIFEST_NAME))?;
    Ok(())
}

fn index_of(c: &Corpus, id: usize) -> Result<usize> {
    c.instances
        .iter()
        .position(|i| i.id == id)
        .ok_or_else(|| CoreError::Config(format!("instance {id} not in corpus")).into())
}

fn limited(c: &Corpus, limit: Option<usize>) -> &[tokenflow_core::tasks::TaskInstance] {
    &c.instances[..limit.unwrap_or(c.len()).min(c.len())]
}

fn write_csv_with_manifest(out: &Path, csv: &str, mut m: RunManifest) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(out)?.write_all(csv.as_bytes())?;
    m.output(out)?;
    let mpath = out.with_extension("manifest.json");
    m.write(&mpath)?;
    print!("{csv}");
    Ok(())
}

fn evaluate<T: Real>(a: &EvalArgs, argv: &[String]) -> Result<()> {
    let (model, state) = load_model::<T>(&a.checkpoint)?;
    let (cfg, gen) = inference_settings(&state, &a.inference)?;
    let corpus = Corpus::load(&a.corpus)?;
    let inst = limited(&corpus, a.limit);
    let rows = [Setting::Continuation, Setting::Cross]
        .iter()
        .map(|&s| run_eval(&model, &state.task, inst, s, &gen, a.seed))
        .collect::<tokenflow_core::Result<Vec<_>>>()?;
    let mut m = RunManifest::new("eval", argv.to_vec(), serde_json::to_value(&cfg)?, a.seed);
    m.input(&a.checkpoint)?;
    m.input(&a.corpus.join(MANIFEST_FILE))?;
    m.checkpoints.push(a.checkpoint.clone());
    write_csv_with_manifest(&a.out, &eval_csv(&rows), m)
}

fn sweep<T: Real>(a: &SweepArgs, argv: &[String]) -> Result<()> {
    let (model, state) = load_model::<T>(&a.checkpoint)?;
    let (mut cfg, gen) = inference_settings(&state, &a.inference)?;
    let axis: SweepAxis = a.axis.parse()?;
    let setting: Setting = a.setting.parse()?;
    let grid = match &a.grid {
        Some(g) => parse_list::<String>(g, "grid")?,
        None => axis.default_grid(),
    };
    let heldout = Corpus::load(&a.corpus)?;
    let inst = limited(&heldout, a.limit);
    let mut m = RunManifest::new("sweep", argv.to_vec(), serde_json::Value::Null, a.seed);
    m.input(&a.checkpoint)?;
    m.input(&a.corpus.join(MANIFEST_FILE))?;
    m.checkpoints.push(a.checkpoint.clone());
    let rows = if axis.retrains() {
        let train_dir = a.train_corpus.as_ref().ok_or_else(|| CoreError::Config(format!("axis {axis} needs --train-corpus")))?;
        let train = Corpus::load(train_dir)?;
        m.input(&train_dir.join(MANIFEST_FILE))?;
        if let Some(s) = a.steps {
            cfg.steps = s;
        }
        let nfes = match (&a.eval_nfe, axis) {
            (Some(s), _) => parse_list(s, "nfe")?,
            (None, SweepAxis::Prior) => vec![3, 7],
            (None, _) => vec![cfg.nfe],
        };
        sweep_training::<T>(&cfg, &state.task, &train.instances, inst, setting, axis, &grid, &nfes, a.seed)?
    } else {
        sweep_inference(&model, &state.task, inst, setting, &gen, axis, &grid, a.seed)?
    };
    m.config = serde_json::json!({ "axis": axis.to_string(), "grid": grid, "base": cfg });
    write_csv_with_manifest(&a.out, &eval_csv(&rows), m)
}

fn replay(a: ReplayArgs) -> Result<()> {
    let old = RunManifest::read(&a.manifest)?;
    let mut argv = old.argv.clone();
    let pos = argv.iter().position(|s| s == "--out").ok_or_else(|| CoreError::Config("manifest argv has no --out".into()))?;
    let old_out = PathBuf::from(&argv[pos + 1]);
    argv[pos + 1] = a.out.display().to_string();
    if let Some(r) = argv.iter().position(|s| s == "--resume") {
        // A resumed run started from a checkpoint that lived in the old output directory.
        let ck = PathBuf::from(&argv[r + 1]);
        if ck.starts_with(&old_out) {
            bail!(CoreError::Config("cannot replay a resume whose checkpoint lives in its own output directory".into()));
        }
    }
    let exe = std::env::current_exe()?;
    let status = std::process::Command::new(exe).args(&argv).status()?;
    if !status.success() {
        bail!("replayed command failed with {status}");
    }
    let new_manifest = if old.command == "eval" || old.command == "sweep" {
        a.out.with_extension("manifest.json")
    } else {
        a.out.join(MANIFEST_NAME)
    };
    let new = RunManifest::read(&new_manifest)?;
    let digest = |m: &RunManifest| -> Vec<(String, String)> {
        m.outputs
            .iter()
            .filter(|o| o.reproducible)
            .map(|o| (o.path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(), o.sha256.clone()))
            .collect()
    };
    if digest(&old) != digest(&new) {
        bail!(CoreError::Config(format!("replay outputs differ from {}", a.manifest.display())));
    }
    println!("replay reproduced {} outputs (artifact {})", new.outputs.len(), new.artifact_hash);
    Ok(())
}
