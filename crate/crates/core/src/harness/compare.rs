use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Variant};
use super::train::{read_metrics, Manifest, METRICS_FILE};
use crate::error::{Error, Result};
use crate::ppo::Metrics;

#[derive(Debug, Clone)]
pub struct RunData {
    pub dir: PathBuf,
    pub variant: Variant,
    pub seed: u64,
    pub metrics: Vec<Metrics>,
}

impl RunData {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(METRICS_FILE);
        let mut rdr = csv::Reader::from_path(&path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let missing: Vec<String> = Metrics::FIELDS
            .iter()
            .filter(|f| !header.iter().any(|h| h == *f))
            .map(|f| f.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::SchemaMismatch { path, missing });
        }
        let manifest = Manifest::load(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            variant: manifest.variant,
            seed: manifest.seed,
            metrics: read_metrics(&path)?,
        })
    }
}

/// Mean and range of one quantity across the runs of a variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    /// `None` when `values` is empty.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Self { mean, min, max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePoint {
    pub variant: Variant,
    pub global_step: u64,
    pub n_runs: usize,
    pub reward: Option<Spread>,
    pub dormant_ratio: Spread,
    pub learning_rate: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalDormant {
    pub variant: Variant,
    pub global_step: u64,
    /// `(seed, dormant_ratio)` of each run's last row.
    pub per_seed: Vec<(u64, f64)>,
    pub spread: Spread,
}

/// Difference of final mean dormant ratios, `higher - lower`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DormantGap {
    pub higher: Variant,
    pub lower: Variant,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub traces: Vec<TracePoint>,
    pub final_dormant: Vec<FinalDormant>,
    pub gaps: Vec<DormantGap>,
}

pub const MERGED_FIELDS: [&str; 12] = [
    "variant",
    "global_step",
    "n_runs",
    "reward_mean",
    "reward_min",
    "reward_max",
    "dormant_mean",
    "dormant_min",
    "dormant_max",
    "lr_mean",
    "lr_min",
    "lr_max",
];

fn aggregate(variant: Variant, runs: &[&RunData]) -> (Vec<TracePoint>, FinalDormant) {
    // steps every run of the variant logged
    let steps: Vec<u64> = runs[0]
        .metrics
        .iter()
        .map(|m| m.global_step)
        .filter(|s| runs.iter().all(|r| r.metrics.iter().any(|m| m.global_step == *s)))
        .collect();
    let traces = steps
        .iter()
        .map(|&step| {
            let rows: Vec<&Metrics> = runs
                .iter()
                .map(|r| r.metrics.iter().find(|m| m.global_step == step).expect("step present"))
                .collect();
            let rewards: Vec<f64> = rows.iter().filter_map(|m| m.mean_episode_reward).collect();
            let dormant: Vec<f64> = rows.iter().map(|m| m.dormant_ratio).collect();
            let lr: Vec<f64> = rows.iter().map(|m| m.learning_rate).collect();
            TracePoint {
                variant,
                global_step: step,
                n_runs: rows.len(),
                reward: Spread::of(&rewards),
                dormant_ratio: Spread::of(&dormant).expect("non-empty"),
                learning_rate: Spread::of(&lr).expect("non-empty"),
            }
        })
        .collect();
    let per_seed: Vec<(u64, f64)> = runs
        .iter()
        .map(|r| (r.seed, r.metrics.last().map_or(f64::NAN, |m| m.dormant_ratio)))
        .collect();
    let finals: Vec<f64> = per_seed.iter().map(|p| p.1).collect();
    let final_dormant = FinalDormant {
        variant,
        global_step: runs.iter().filter_map(|r| r.metrics.last()).map(|m| m.global_step).min().unwrap_or(0),
        per_seed,
        spread: Spread::of(&finals).expect("non-empty"),
    };
    (traces, final_dormant)
}

/// Aligns and aggregates already-loaded runs by variant.
pub fn compare(runs: &[RunData]) -> Result<ComparisonReport> {
    if runs.len() < 2 {
        return Err(Error::Usage("comparison needs at least two runs".into()));
    }
    if let Some(r) = runs.iter().find(|r| r.metrics.is_empty()) {
        return Err(Error::Usage(format!("{} has no metrics rows", r.dir.display())));
    }
    let mut groups: BTreeMap<Variant, Vec<&RunData>> = BTreeMap::new();
    for r in runs {
        groups.entry(r.variant).or_default().push(r);
    }
    let mut traces = Vec::new();
    let mut final_dormant = Vec::new();
    for (variant, members) in &groups {
        let (t, f) = aggregate(*variant, members);
        traces.extend(t);
        final_dormant.push(f);
    }
    let mut gaps = Vec::new();
    for (i, a) in final_dormant.iter().enumerate() {
        for b in &final_dormant[i + 1..] {
            gaps.push(DormantGap {
                higher: a.variant,
                lower: b.variant,
                gap: a.spread.mean - b.spread.mean,
            });
        }
    }
    Ok(ComparisonReport {
        traces,
        final_dormant,
        gaps,
    })
}

pub fn compare_runs(dirs: &[PathBuf]) -> Result<ComparisonReport> {
    let runs = dirs.iter().map(|d| RunData::load(d)).collect::<Result<Vec<_>>>()?;
    compare(&runs)
}

impl ComparisonReport {
    pub fn write_merged_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(MERGED_FIELDS)?;
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        for t in &self.traces {
            w.write_record([
                t.variant.to_string(),
                t.global_step.to_string(),
                t.n_runs.to_string(),
                opt(t.reward.map(|s| s.mean)),
                opt(t.reward.map(|s| s.min)),
                opt(t.reward.map(|s| s.max)),
                t.dormant_ratio.mean.to_string(),
                t.dormant_ratio.min.to_string(),
                t.dormant_ratio.max.to_string(),
                t.learning_rate.mean.to_string(),
                t.learning_rate.min.to_string(),
                t.learning_rate.max.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn final_mean(&self, variant: Variant) -> Option<f64> {
        self.final_dormant.iter().find(|f| f.variant == variant).map(|f| f.spread.mean)
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "final dormant ratio (policy network)")?;
        for d in &self.final_dormant {
            let seeds: Vec<String> = d.per_seed.iter().map(|(s, r)| format!("{s}:{:.2}%", 100.0 * r)).collect();
            writeln!(
                f,
                "  {:<9} step {:>10}  mean {:6.2}%  range [{:.2}%, {:.2}%]  seeds {}",
                d.variant.to_string(),
                d.global_step,
                100.0 * d.spread.mean,
                100.0 * d.spread.min,
                100.0 * d.spread.max,
                seeds.join(" ")
            )?;
        }
        for g in &self.gaps {
            writeln!(f, "  gap {} - {}: {:+.2} percentage points", g.higher, g.lower, 100.0 * g.gap)?;
        }
        Ok(())
    }
}

/// When the wind changes, when RECOM acts and when checkpoints land.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchedulePreview {
    pub total_timesteps: u64,
    pub steps_per_iteration: u64,
    pub iterations: u64,
    /// `(first_step, last_step_exclusive, speed)`; the last segment runs to the end.
    pub wind_segments: Vec<(u64, u64, f64)>,
    /// Global steps (end of iteration) at which a RECOM update is due.
    pub recom_updates: Vec<u64>,
    pub checkpoints: Vec<u64>,
}

pub fn schedule_preview(cfg: &ExperimentConfig) -> SchedulePreview {
    let batch = cfg.ppo.batch_size() as u64;
    let iterations = cfg.total_timesteps.div_ceil(batch);
    let ends: Vec<u64> = (1..=iterations).map(|k| k * batch).collect();
    let mut wind_segments = Vec::new();
    let seg = cfg.wind.segment_length;
    for (i, &speed) in cfg.wind.speeds.iter().enumerate() {
        let start = seg.saturating_mul(i as u64);
        if start >= cfg.total_timesteps && i > 0 {
            break;
        }
        let end = if i + 1 == cfg.wind.speeds.len() {
            cfg.total_timesteps.max(start)
        } else {
            seg.saturating_mul(i as u64 + 1).min(cfg.total_timesteps)
        };
        wind_segments.push((start, end, speed));
    }
    let crossings = |period: u64| -> Vec<u64> {
        let mut prev = 0;
        ends.iter()
            .copied()
            .filter(|&e| {
                let hit = e / period > prev / period;
                prev = e;
                hit
            })
            .collect()
    };
    let recom_updates = if cfg.variant.uses_recom() {
        crossings(cfg.recom.update_period)
    } else {
        Vec::new()
    };
    let mut checkpoints = if cfg.checkpoint_interval > 0 {
        crossings(cfg.checkpoint_interval)
    } else {
        Vec::new()
    };
    if let Some(&last) = ends.last() {
        if checkpoints.last() != Some(&last) {
            checkpoints.push(last);
        }
    }
    SchedulePreview {
        total_timesteps: cfg.total_timesteps,
        steps_per_iteration: batch,
        iterations,
        wind_segments,
        recom_updates,
        checkpoints,
    }
}

impl fmt::Display for SchedulePreview {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} timesteps in {} iterations of {} steps",
            self.total_timesteps, self.iterations, self.steps_per_iteration
        )?;
        writeln!(f, "wind:")?;
        for (a, b, s) in &self.wind_segments {
            writeln!(f, "  [{a:>10}, {b:>10})  {s:.2} m/s")?;
        }
        match (self.recom_updates.first(), self.recom_updates.last()) {
            (Some(first), Some(last)) => writeln!(
                f,
                "learning-rate updates: {} (first at {first}, last at {last})",
                self.recom_updates.len()
            )?,
            _ => writeln!(f, "learning-rate updates: none (fixed learning rate)")?,
        }
        writeln!(f, "checkpoints: {}", self.checkpoints.len())?;
        for c in &self.checkpoints {
            writeln!(f, "  {c}")?;
        }
        Ok(())
    }
}
