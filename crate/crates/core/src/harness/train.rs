use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Variant};
use crate::error::{Error, Result};
use crate::ppo::{Metrics, Trainer};
use crate::recom::{RecomUpdate, UpdateOutcome};

pub const METRICS_FILE: &str = "metrics.csv";
pub const RECOM_FILE: &str = "recom.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const EVAL_FILE: &str = "eval.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LATEST_CHECKPOINT: &str = "latest.json";
const CHECKPOINT_FORMAT: u32 = 1;

/// Provenance written next to every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub package: String,
    pub code_version: String,
    pub variant: Variant,
    pub seed: u64,
    pub resolved_l2_lambda: f64,
    pub recom_enabled: bool,
    pub steps_per_iteration: u64,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            package: env!("CARGO_PKG_NAME").to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            variant: config.variant,
            seed: config.seed,
            resolved_l2_lambda: config.l2_lambda(),
            recom_enabled: config.variant.uses_recom(),
            steps_per_iteration: config.ppo.batch_size() as u64,
            config: config.clone(),
        }
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        read_json(&run_dir.join(MANIFEST_FILE))
    }
}

/// Full learner state plus the config that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config: ExperimentConfig,
    pub trainer: Trainer,
}

impl Checkpoint {
    pub fn new(config: &ExperimentConfig, trainer: &Trainer) -> Self {
        Self {
            format: CHECKPOINT_FORMAT,
            config: config.clone(),
            trainer: trainer.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidConfig(format!("unsupported checkpoint format {}", ck.format)));
        }
        ck.trainer.params.check_architecture()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub deterministic: bool,
    /// Print a progress line per iteration to stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub iterations: u64,
    pub global_step: u64,
    pub resumed_from: Option<u64>,
    pub final_checkpoint: Option<PathBuf>,
    pub metrics: Vec<Metrics>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_metrics(path: &Path) -> Result<Vec<Metrics>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn read_recom_log(path: &Path) -> Result<Vec<RecomUpdate>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn append_row<T: Serialize>(path: &Path, row: &T) -> Result<()> {
    let file = fs::OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.serialize(row)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub const RECOM_FIELDS: [&str; 7] = ["global_step", "c_ret", "c_prev", "g_cost", "lr_before", "lr_after", "clamped"];

fn checkpoint_name(step: u64) -> String {
    format!("step_{step:012}.json")
}

/// Trains `config` to its timestep budget, resuming from `checkpoints/latest.json`
/// when the run directory already holds one for the same configuration.
pub fn run_training(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    let mut config = config.clone();
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    config.deterministic |= opts.deterministic;
    config.validate()?;

    let run_dir = config.resolved_output_dir();
    let ck_dir = run_dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ck_dir).map_err(|e| Error::io(&ck_dir, e))?;
    let metrics_path = run_dir.join(METRICS_FILE);
    let recom_path = run_dir.join(RECOM_FILE);
    let latest = ck_dir.join(LATEST_CHECKPOINT);

    let (mut trainer, resumed_from, mut history) = if latest.exists() {
        let ck = Checkpoint::load(&latest)?;
        if ck.config != config {
            return Err(Error::InvalidConfig(format!(
                "{} holds a run with a different configuration",
                run_dir.display()
            )));
        }
        let step = ck.trainer.global_step;
        let keep: Vec<Metrics> = read_metrics(&metrics_path)?
            .into_iter()
            .filter(|m| m.global_step <= step)
            .collect();
        let recom_rows: Vec<RecomUpdate> = read_recom_log(&recom_path)?
            .into_iter()
            .filter(|r| r.global_step <= step)
            .collect();
        write_rows(&metrics_path, &Metrics::FIELDS, &keep)?;
        write_rows(&recom_path, &RECOM_FIELDS, &recom_rows)?;
        (ck.trainer, Some(step), keep)
    } else {
        write_rows::<Metrics>(&metrics_path, &Metrics::FIELDS, &[])?;
        write_rows::<RecomUpdate>(&recom_path, &RECOM_FIELDS, &[])?;
        (Trainer::new(config.trainer_config(), config.env_spec())?, None, Vec::new())
    };

    let manifest = serde_json::to_string_pretty(&Manifest::new(&config))?;
    write_atomic(&run_dir.join(MANIFEST_FILE), manifest.as_bytes())?;

    let mut final_checkpoint = None;
    let mut iterations = 0;
    while trainer.global_step < config.total_timesteps {
        let before = trainer.global_step;
        let report = trainer.train_iteration()?;
        iterations += 1;
        append_row(&metrics_path, &report.metrics)?;
        if let Some(UpdateOutcome::Updated(u)) = report.recom {
            append_row(&recom_path, &u)?;
        }
        if opts.verbose {
            let m = &report.metrics;
            let mut err = std::io::stderr().lock();
            let _ = writeln!(
                err,
                "[{}] step {:>10} reward {:>10} lr {:.3e} dormant {:.3} wind {:.1}",
                config.variant,
                m.global_step,
                m.mean_episode_reward.map_or("-".to_string(), |r| format!("{r:.2}")),
                m.learning_rate,
                m.dormant_ratio,
                m.wind_speed
            );
        }
        history.push(report.metrics);

        let done = trainer.global_step >= config.total_timesteps;
        let crossed = trainer.global_step / config.checkpoint_interval > before / config.checkpoint_interval;
        if crossed || done {
            let ck = Checkpoint::new(&config, &trainer);
            let path = ck_dir.join(checkpoint_name(trainer.global_step));
            ck.save(&path)?;
            ck.save(&latest)?;
            final_checkpoint = Some(path);
        }
    }
    if final_checkpoint.is_none() && latest.exists() {
        final_checkpoint = Some(latest);
    }

    Ok(RunSummary {
        run_dir,
        iterations,
        global_step: trainer.global_step,
        resumed_from,
        final_checkpoint,
        metrics: history,
    })
}
