use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::RobotParams;
use crate::env::{EnvSpec, EpisodeConfig, RewardWeights, WindSchedule};
use crate::error::{Error, Result};
use crate::nn::InitConfig;
use crate::plasticity::DormantConfig;
use crate::ppo::{PpoConfig, TrainerConfig};
use crate::recom::RecomConfig;

pub const DEFAULT_L2_LAMBDA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Standard,
    L2,
    RecomL2,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Standard, Variant::L2, Variant::RecomL2];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::L2 => "l2",
            Variant::RecomL2 => "recom_l2",
        }
    }

    pub fn uses_recom(self) -> bool {
        self == Variant::RecomL2
    }

    pub fn default_l2_lambda(self) -> f64 {
        match self {
            Variant::Standard => 0.0,
            _ => DEFAULT_L2_LAMBDA,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}` (standard, l2, recom_l2)")))
    }
}

/// Evaluation protocol settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Constant wind during evaluation (m/s).
    pub wind_speed: f64,
    pub init_range: f64,
    /// Success if the robot stays this close to the target over the final window (m).
    pub success_radius: f64,
    pub window_seconds: f64,
    /// Compute MSE over the whole episode instead of the final window.
    pub whole_trajectory: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 10,
            wind_speed: 3.0,
            init_range: 2.0,
            success_radius: 0.25,
            window_seconds: 1.0,
            whole_trajectory: false,
            seed: 1_000_003,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::InvalidConfig("evaluation.episodes must be positive".into()));
        }
        for (name, x) in [
            ("wind_speed", self.wind_speed),
            ("init_range", self.init_range),
            ("success_radius", self.success_radius),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::InvalidConfig(format!("evaluation.{name} must be non-negative, got {x}")));
            }
        }
        if !(self.window_seconds.is_finite() && self.window_seconds > 0.0) {
            return Err(Error::InvalidConfig("evaluation.window_seconds must be positive".into()));
        }
        Ok(())
    }
}

/// Everything a training run consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    #[serde(default)]
    pub seed: u64,
    pub total_timesteps: u64,
    /// `{variant}` and `{seed}` are substituted.
    pub output_dir: PathBuf,
    #[serde(default = "default_checkpoint_interval")]
    pub checkpoint_interval: u64,
    /// Defaults to 0 for `standard` and 1e-4 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2_lambda: Option<f64>,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub robot: RobotParams,
    #[serde(default)]
    pub reward: RewardWeights,
    #[serde(default)]
    pub wind: WindSchedule,
    #[serde(default)]
    pub episode: EpisodeConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub init: InitConfig,
    /// Used by `recom_l2` only.
    #[serde(default)]
    pub recom: RecomConfig,
    #[serde(default)]
    pub plasticity: DormantConfig,
    #[serde(default)]
    pub evaluation: EvalConfig,
}

fn default_checkpoint_interval() -> u64 {
    1_000_000
}

impl ExperimentConfig {
    /// The long-horizon protocol: 20M steps, wind changing every 2M.
    pub fn full(variant: Variant) -> Self {
        Self {
            variant,
            seed: 0,
            total_timesteps: 20_000_000,
            output_dir: PathBuf::from("runs/full/{variant}/seed{seed}"),
            checkpoint_interval: default_checkpoint_interval(),
            l2_lambda: None,
            deterministic: false,
            robot: RobotParams::default(),
            reward: RewardWeights::default(),
            wind: WindSchedule::default(),
            episode: EpisodeConfig::default(),
            ppo: PpoConfig::default(),
            init: InitConfig::default(),
            recom: RecomConfig::default(),
            plasticity: DormantConfig::default(),
            evaluation: EvalConfig::default(),
        }
    }

    /// The full protocol with every cadence divided by 100.
    pub fn desk(variant: Variant) -> Self {
        let mut cfg = Self::full(variant);
        cfg.total_timesteps = 200_000;
        cfg.output_dir = PathBuf::from("runs/desk/{variant}/seed{seed}");
        cfg.checkpoint_interval = 10_000;
        cfg.wind.segment_length = 20_000;
        cfg.recom.update_period = 400;
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("cannot serialize config: {e}")))
    }

    pub fn l2_lambda(&self) -> f64 {
        self.l2_lambda.unwrap_or_else(|| self.variant.default_l2_lambda())
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_timesteps > 0 && self.checkpoint_interval == 0 {
            return Err(Error::InvalidConfig("checkpoint_interval must be positive".into()));
        }
        let l2 = self.l2_lambda();
        if !(l2.is_finite() && l2 >= 0.0) {
            return Err(Error::InvalidConfig(format!("l2_lambda must be non-negative, got {l2}")));
        }
        if self.variant == Variant::Standard && l2 != 0.0 {
            return Err(Error::InvalidConfig(format!(
                "variant `standard` trains without L2, but l2_lambda = {l2}"
            )));
        }
        self.env_spec().validate()?;
        self.trainer_config().validate()?;
        if self.variant.uses_recom() {
            let r = &self.recom;
            if !(self.ppo.learning_rate >= r.lr_min && self.ppo.learning_rate <= r.lr_max) {
                return Err(Error::InvalidConfig(format!(
                    "ppo.learning_rate {} lies outside recom bounds [{}, {}]",
                    self.ppo.learning_rate, r.lr_min, r.lr_max
                )));
            }
        }
        self.evaluation.validate()
    }

    pub fn env_spec(&self) -> EnvSpec {
        EnvSpec {
            robot: self.robot.clone(),
            reward: self.reward.clone(),
            wind: self.wind.clone(),
            episode: self.episode.clone(),
        }
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            ppo: self.ppo.clone(),
            init: self.init.clone(),
            l2_lambda: self.l2_lambda(),
            recom: self.variant.uses_recom().then(|| self.recom.clone()),
            dormant: self.plasticity.clone(),
            seed: self.seed,
            deterministic: self.deterministic,
        }
    }

    /// `output_dir` with `{variant}` and `{seed}` filled in.
    pub fn resolved_output_dir(&self) -> PathBuf {
        let raw = self.output_dir.to_string_lossy();
        PathBuf::from(
            raw.replace("{variant}", self.variant.as_str())
                .replace("{seed}", &self.seed.to_string()),
        )
    }
}
