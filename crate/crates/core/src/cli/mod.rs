//! The `cbgt` command line: `train`, `eval`, `sweep` and `report`.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

pub use config::{parse_flat, read_flat, Dataset, EncoderChoice, ExperimentConfig, ModelChoice, KEYS};

use crate::env::{load_cifar10, load_mnist, AnyEnv, Environment, ImageDataset, PatchStreamEnv, Reseed, Split, SyntheticEvidenceEnv};
use crate::error::{Error, Result};
use crate::eval::{evaluate, percent_fewer, EvalReport};
use crate::models::{checkpoint, Encoder, EncoderConfig, ModelKind};
use crate::numerics::{DType, Scalar};
use crate::train::{train, TrainLog};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const SNAPSHOT_FILE: &str = "config.resolved";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Parser)]
#[command(name = "cbgt", version, about = "Train and evaluate evidence-accumulating streaming classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model; writes a checkpoint, training log and config snapshot.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint to evaluate [default: <out>/model.ckpt].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every cell of a grid, resuming finished cells.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Thresholds for cbgt cells, comma separated.
        #[arg(long, value_delimiter = ',')]
        taus: Vec<f64>,
        /// Sequence lengths for lstm cells, comma separated.
        #[arg(long, value_delimiter = ',')]
        seq_lens: Vec<usize>,
        /// Patch sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        patch_sizes: Vec<usize>,
    },
    /// Summarize report files and compare convergence of two training logs.
    Report {
        /// Directory searched (one level deep) for `*.json` reports.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Training log of the CBGT model for a convergence comparison.
        #[arg(long, requires = "lstm_log")]
        cbgt_log: Option<PathBuf>,
        /// Training log of the LSTM baseline.
        #[arg(long, requires = "cbgt_log")]
        lstm_log: Option<PathBuf>,
    },
}

/// Configuration flags; each overrides the same key of `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// mnist | cifar10 | synthetic
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// One of 5, 8, 10, 12, 16, 20 (image datasets).
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// cbgt | lstm | single_patch
    #[arg(long)]
    pub model: Option<String>,
    /// lenet5 | resnet_lite | mlp | identity
    #[arg(long)]
    pub encoder: Option<String>,
    /// Hidden widths for the mlp encoder, comma separated.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Training budget in episodes.
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub val_episodes: Option<usize>,
    #[arg(long)]
    pub val_every: Option<usize>,
    #[arg(long)]
    pub val_seed: Option<u64>,
    #[arg(long)]
    pub stop_at_convergence: Option<bool>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Evaluation episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub eval_seed: Option<u64>,
    /// f32 | f64
    #[arg(long)]
    pub precision: Option<String>,
    /// Synthetic noise rate.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Synthetic category count.
    #[arg(long)]
    pub categories: Option<usize>,
    /// Use only the first N training images.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Use only the first N test images.
    #[arg(long)]
    pub test_limit: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace existing outputs instead of skipping.
    #[arg(long)]
    pub overwrite: bool,
}

impl ConfigArgs {
    fn overrides(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        let s = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
        put("dataset", self.dataset.clone());
        put("data_root", s(&self.data_root));
        put("patch_size", self.patch_size.map(|v| v.to_string()));
        put("model", self.model.clone());
        put("encoder", self.encoder.clone());
        put("hidden", self.hidden.clone());
        put("tau", self.tau.map(|v| v.to_string()));
        put("seq_len", self.seq_len.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("max_steps", self.max_steps.map(|v| v.to_string()));
        put("budget", self.budget.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("val_episodes", self.val_episodes.map(|v| v.to_string()));
        put("val_every", self.val_every.map(|v| v.to_string()));
        put("val_seed", self.val_seed.map(|v| v.to_string()));
        put("stop_at_convergence", self.stop_at_convergence.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("episodes", self.episodes.map(|v| v.to_string()));
        put("eval_seed", self.eval_seed.map(|v| v.to_string()));
        put("precision", self.precision.clone());
        put("eta", self.eta.map(|v| v.to_string()));
        put("categories", self.categories.map(|v| v.to_string()));
        put("train_limit", self.train_limit.map(|v| v.to_string()));
        put("test_limit", self.test_limit.map(|v| v.to_string()));
        put("out", s(&self.out));
        m
    }

    /// Config file (if any) with flag overrides applied, then validated.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut map = match &self.config {
            Some(p) => read_flat(p)?,
            None => BTreeMap::new(),
        };
        map.extend(self.overrides());
        ExperimentConfig::from_map(&map)
    }
}

/// Process exit code for an error: 1 for invalid configuration or
/// arguments, 2 for anything that went wrong while running.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) => 1,
        _ => 2,
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<ImageDataset> {
    let ds = match cfg.dataset {
        Dataset::Mnist => load_mnist(&cfg.data_root, split)?,
        Dataset::Cifar10 => load_cifar10(&cfg.data_root, split)?,
        Dataset::Synthetic => return Err(Error::Internal("synthetic data has no files".into())),
    };
    let limit = match split {
        Split::Train => cfg.train_limit,
        Split::Test => cfg.test_limit,
    };
    Ok(match limit {
        Some(n) => ds.truncated(n),
        None => ds,
    })
}

const TRAIN_ENV_SALT: u64 = 0x5851_f42d_4c95_7f2d;

/// `(training environment, test environment)`; the test environment is
/// reseeded before every use.
pub fn build_envs(cfg: &ExperimentConfig) -> Result<(AnyEnv, AnyEnv)> {
    let train_seed = cfg.seed ^ TRAIN_ENV_SALT;
    Ok(match cfg.dataset {
        Dataset::Synthetic => (
            AnyEnv::Synthetic(SyntheticEvidenceEnv::new(cfg.categories, cfg.eta, train_seed)?),
            AnyEnv::Synthetic(SyntheticEvidenceEnv::new(cfg.categories, cfg.eta, cfg.eval_seed)?),
        ),
        Dataset::Mnist | Dataset::Cifar10 => {
            let p = cfg.patch_size.expect("validated");
            let train = Arc::new(load_split(cfg, Split::Train)?);
            let test = Arc::new(load_split(cfg, Split::Test)?);
            (
                AnyEnv::Patch(PatchStreamEnv::new(train, p, train_seed)?),
                AnyEnv::Patch(PatchStreamEnv::new(test, p, cfg.eval_seed)?),
            )
        }
    })
}

pub fn build_encoder<T: Scalar>(cfg: &ExperimentConfig, env: &AnyEnv) -> Result<Encoder<T>> {
    let k = env.num_categories();
    match cfg.encoder {
        EncoderChoice::Lenet5 => Encoder::lenet5(k, cfg.seed),
        EncoderChoice::ResnetLite => Encoder::resnet_lite(k, cfg.seed),
        EncoderChoice::Identity => Encoder::identity(k),
        EncoderChoice::Mlp => Encoder::new(
            EncoderConfig::mlp(env.observation_shape(), cfg.hidden.clone(), k),
            cfg.seed,
        ),
    }
}

fn train_typed<T: Scalar>(cfg: &ExperimentConfig, quiet: bool) -> Result<()> {
    let (mut env, test_env) = build_envs(cfg)?;
    let encoder = build_encoder::<T>(cfg, &env)?;
    let tc = cfg.train_config();
    let id = env.id();
    let trained = train(&tc, &mut env, &test_env, encoder, |row| {
        if !quiet && row.step % 100 == 0 {
            eprintln!(
                "[{id}] step {} episodes {} loss {:.4} val_acc {:.4} t_d {:.3}",
                row.step, row.episodes_seen, row.mean_loss, row.val_accuracy, row.avg_decision_time
            );
        }
    })?;
    create_dir(&cfg.out)?;
    trained.log.write_csv(&cfg.out.join(LOG_FILE))?;
    checkpoint::save(&trained.model, &cfg.out.join(CHECKPOINT_FILE))?;
    write_file(&cfg.out.join(SNAPSHOT_FILE), cfg.snapshot())?;
    if !quiet {
        match trained.log.episodes_to_convergence {
            Some(n) => eprintln!("[{id}] converged after {n} episodes"),
            None => eprintln!("[{id}] budget exhausted without convergence"),
        }
    }
    Ok(())
}

fn training_done(dir: &Path) -> bool {
    [CHECKPOINT_FILE, LOG_FILE, SNAPSHOT_FILE].iter().all(|f| dir.join(f).is_file())
}

/// `cbgt train`: skips when the output directory already holds a finished
/// run unless `overwrite` is set.
pub fn cmd_train(cfg: &ExperimentConfig, overwrite: bool) -> Result<()> {
    if training_done(&cfg.out) && !overwrite {
        eprintln!("{} already holds a trained model; pass --overwrite to retrain", cfg.out.display());
        return Ok(());
    }
    match cfg.precision {
        DType::F32 => train_typed::<f32>(cfg, false),
        DType::F64 => train_typed::<f64>(cfg, false),
    }
}

fn eval_typed<T: Scalar>(cfg: &ExperimentConfig, ckpt: &Path, test_env: &AnyEnv) -> Result<EvalReport> {
    let model = checkpoint::load::<T>(ckpt)?;
    let mut report = evaluate(&model, &mut test_env.reseeded(cfg.eval_seed), cfg.episodes)?;
    let log = ckpt.with_file_name(LOG_FILE);
    if log.is_file() {
        report.episodes_to_convergence = TrainLog::read_csv(&log)?.episodes_to_convergence;
    }
    Ok(report)
}

fn check_compatible(cfg: &ExperimentConfig, header: &checkpoint::CheckpointHeader, env: &AnyEnv) -> Result<()> {
    let want = cfg.model_kind();
    let same = match (header.model, want) {
        (ModelKind::Cbgt { tau: a, .. }, ModelKind::Cbgt { tau: b, .. }) => a == b,
        (a, b) => a == b,
    };
    if !same {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint holds {:?}, configuration asks for {:?}",
            header.model, want
        )));
    }
    if header.encoder.input != env.observation_shape() || header.encoder.num_categories != env.num_categories() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint encoder expects {:?} with {} categories, environment provides {:?} with {}",
            header.encoder.input,
            header.encoder.num_categories,
            env.observation_shape(),
            env.num_categories()
        )));
    }
    Ok(())
}

/// `cbgt eval`: nothing is written unless evaluation succeeds.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>, overwrite: bool) -> Result<EvalReport> {
    let ckpt = checkpoint.map_or_else(|| cfg.out.join(CHECKPOINT_FILE), Path::to_path_buf);
    if !ckpt.is_file() {
        return Err(Error::MissingCheckpoint {
            what: format!("{} model", cfg.model),
            path: ckpt,
        });
    }
    let header = checkpoint::read_header(&ckpt)?;
    let (_, test_env) = build_envs(cfg)?;
    check_compatible(cfg, &header, &test_env)?;
    let report = match header.dtype {
        DType::F32 => eval_typed::<f32>(cfg, &ckpt, &test_env)?,
        DType::F64 => eval_typed::<f64>(cfg, &ckpt, &test_env)?,
    };
    let paths = report.paths(&cfg.out);
    if paths.iter().all(|p| p.is_file()) && !overwrite {
        eprintln!("{} exists; pass --overwrite to replace", paths[2].display());
        return Ok(report);
    }
    report.write(&cfg.out)?;
    Ok(report)
}

/// One grid cell of a sweep.
fn sweep_cells(base: &ExperimentConfig, taus: &[f64], seq_lens: &[usize], patch_sizes: &[usize]) -> Result<Vec<ExperimentConfig>> {
    let sizes: Vec<Option<usize>> = if patch_sizes.is_empty() {
        vec![base.patch_size]
    } else {
        patch_sizes.iter().map(|&p| Some(p)).collect()
    };
    let mut cells = Vec::new();
    for p in sizes {
        let variants: Vec<(Option<f64>, Option<usize>)> = match base.model {
            ModelChoice::Cbgt if !taus.is_empty() => taus.iter().map(|&t| (Some(t), None)).collect(),
            ModelChoice::Lstm if !seq_lens.is_empty() => seq_lens.iter().map(|&l| (None, Some(l))).collect(),
            _ => vec![(base.tau, base.seq_len)],
        };
        for (tau, seq_len) in variants {
            let mut c = base.clone();
            c.patch_size = p;
            c.tau = tau;
            c.seq_len = seq_len;
            c.validate()?;
            let size = p.map_or(String::new(), |p| format!("_{p}x{p}"));
            let name = match (tau, seq_len) {
                (Some(t), _) => format!("{}{size}_tau{t}", c.dataset),
                (_, Some(l)) => format!("{}{size}_lstm{l}", c.dataset),
                _ => format!("{}{size}_single", c.dataset),
            };
            c.out = base.out.join(name);
            cells.push(c);
        }
    }
    if cells.is_empty() {
        return Err(Error::Config {
            field: "grid".into(),
            message: "sweep grid is empty".into(),
        });
    }
    Ok(cells)
}

/// `cbgt sweep`: returns the number of failed cells.
pub fn cmd_sweep(base: &ExperimentConfig, taus: &[f64], seq_lens: &[usize], patch_sizes: &[usize], overwrite: bool) -> Result<usize> {
    let cells = sweep_cells(base, taus, seq_lens, patch_sizes)?;
    create_dir(&base.out)?;
    write_file(&base.out.join(SNAPSHOT_FILE), base.snapshot())?;
    let mut merged = csv::Writer::from_writer(Vec::new());
    merged.write_record(EvalReport::CSV_HEADER)?;
    let mut failures = 0;
    for cell in &cells {
        let outcome = cmd_train(cell, overwrite).and_then(|()| cmd_eval(cell, None, overwrite));
        match outcome {
            Ok(report) => merged.write_record(report.csv_record())?,
            Err(e) => {
                eprintln!("cell {} failed: {e}", cell.out.display());
                failures += 1;
            }
        }
    }
    let bytes = merged.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    write_file(&base.out.join(SWEEP_FILE), bytes)?;
    Ok(failures)
}

/// Every `*.json` report in `dir` and its immediate subdirectories, sorted
/// by path.
pub fn collect_reports(dir: &Path) -> Result<Vec<(PathBuf, EvalReport)>> {
    let mut paths = Vec::new();
    let visit = |d: &Path, recurse: bool, paths: &mut Vec<PathBuf>| -> Result<Vec<PathBuf>> {
        let mut subdirs = Vec::new();
        for entry in fs::read_dir(d).map_err(|e| Error::io(d, e))? {
            let p = entry.map_err(|e| Error::io(d, e))?.path();
            if p.is_dir() && recurse {
                subdirs.push(p);
            } else if p.extension().is_some_and(|x| x == "json") {
                paths.push(p);
            }
        }
        Ok(subdirs)
    };
    for sub in visit(dir, true, &mut paths)? {
        visit(&sub, false, &mut paths)?;
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let text = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            Ok((p, serde_json::from_slice(&text)?))
        })
        .collect()
}

/// `cbgt report`: prints a table of reports (and a convergence comparison
/// when both logs are given) and writes `summary.csv` into `dir`.
pub fn cmd_report(dir: &Path, logs: Option<(&Path, &Path)>) -> Result<String> {
    let reports = collect_reports(dir)?;
    let mut out = String::new();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EvalReport::CSV_HEADER)?;
    out.push_str(&format!("{:<28} {:<13} {:>6} {:>9} {:>9}\n", "env", "model", "param", "accuracy", "avg t_d"));
    for (_, r) in &reports {
        let param = r.tau.map(|t| format!("τ={t}")).or(r.seq_len.map(|l| format!("L={l}"))).unwrap_or_default();
        out.push_str(&format!(
            "{:<28} {:<13} {:>6} {:>9.4} {:>9.3}\n",
            r.env_id, r.model, param, r.accuracy, r.avg_decision_time
        ));
        w.write_record(r.csv_record())?;
    }
    if let Some((cbgt, lstm)) = logs {
        let c = TrainLog::read_csv(cbgt)?;
        let l = TrainLog::read_csv(lstm)?;
        let ce = c
            .episodes_to_convergence
            .ok_or_else(|| Error::NotConverged(cbgt.display().to_string()))?;
        let le = l
            .episodes_to_convergence
            .ok_or_else(|| Error::NotConverged(lstm.display().to_string()))?;
        out.push_str(&format!(
            "convergence: cbgt {ce} episodes, lstm {le} episodes, {:.1}% fewer\n",
            percent_fewer(ce, le)?
        ));
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    write_file(&dir.join("summary.csv"), bytes)?;
    Ok(out)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train(args) => args.resolve().and_then(|cfg| cmd_train(&cfg, args.overwrite)).map(|()| 0),
        Command::Eval { config, checkpoint } => config.resolve().and_then(|cfg| {
            let r = cmd_eval(&cfg, checkpoint.as_deref(), config.overwrite)?;
            println!(
                "{}: accuracy {:.4}, avg decision time {:.3} over {} episodes",
                r.stem(),
                r.accuracy,
                r.avg_decision_time,
                r.n_episodes
            );
            Ok(0)
        }),
        Command::Sweep {
            config,
            taus,
            seq_lens,
            patch_sizes,
        } => config.resolve().and_then(|cfg| {
            let failed = cmd_sweep(&cfg, &taus, &seq_lens, &patch_sizes, config.overwrite)?;
            println!("merged results in {}", cfg.out.join(SWEEP_FILE).display());
            if failed > 0 {
                eprintln!("{failed} cell(s) failed");
                Ok(2)
            } else {
                Ok(0)
            }
        }),
        Command::Report { out, cbgt_log, lstm_log } => {
            let logs = cbgt_log.as_deref().zip(lstm_log.as_deref());
            cmd_report(&out, logs).map(|text| {
                print!("{text}");
                0
            })
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
