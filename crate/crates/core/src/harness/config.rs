use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bayes::FusionSettings;
use crate::error::{Error, IoContext, Result};
use crate::fusenet::{NetConfig, TrainConfig};
use crate::metrics::{GospaConfig, PppSearch};
use crate::sim::{ScenarioConfig, SensorConfig};
use crate::tpmb::FilterSettings;

pub const DEFAULT_HORIZON: usize = 20;
pub const DEFAULT_P_BER: f64 = 0.1;

/// Everything needed to simulate, filter and vectorise one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub scenario: u8,
    pub task: u8,
    pub model: ScenarioConfig,
    pub filter: FilterSettings,
    /// Existence threshold below which local Bernoullis are not vectorised.
    pub p_ber: f64,
    pub transformer_threshold: f64,
    pub bayes_threshold: f64,
}

fn sensor(x: f64, y: f64, orientation: f64, mobile: bool) -> SensorConfig {
    SensorConfig {
        position: [x, y],
        orientation,
        fov_bearing: 2.0 * PI / 3.0,
        fov_radius: 20.0,
        mobile,
        motion_noise_std: if mobile { 10.0 } else { 0.0 },
        initial_velocity: [0.0, 0.0],
    }
}

/// Sensor layouts: scenario 1 has small pairwise overlaps, scenario 2 moves
/// the sensors closer, scenario 3 starts from scenario 2 with mobile sensors.
pub fn scenario_sensors(scenario: u8) -> Result<Vec<SensorConfig>> {
    let (dx, dy, mobile) = match scenario {
        1 => (18.0, 22.0, false),
        2 => (12.0, 18.0, false),
        3 => (12.0, 18.0, true),
        other => return Err(Error::Config(format!("scenario must be 1, 2 or 3, got {other}"))),
    };
    Ok(vec![
        sensor(-dx, 0.0, 0.0, mobile),
        sensor(dx, 0.0, PI, mobile),
        sensor(0.0, dy, -PI / 2.0, mobile),
    ])
}

impl TaskSpec {
    /// Model parameters for `scenario` and `task` with the default horizon.
    pub fn table(scenario: u8, task: u8) -> Result<Self> {
        let measurement_noise = match task {
            1 => 0.01,
            2 => 0.1,
            other => return Err(Error::Config(format!("task must be 1 or 2, got {other}"))),
        };
        let model = ScenarioConfig {
            sensors: scenario_sensors(scenario)?,
            horizon: DEFAULT_HORIZON,
            process_noise: 0.5,
            measurement_noise,
            scan_time: 0.1,
            birth_rate: 0.1,
            clutter_rate: 5.0,
            survival_prob: 0.9,
            detection_prob: 0.95,
            birth_mean: [0.0, 5.0, 0.0, 0.0],
            birth_covariance: [
                [100.0, 0.0, 0.0, 0.0],
                [0.0, 100.0, 0.0, 0.0],
                [0.0, 0.0, 4.0, 0.0],
                [0.0, 0.0, 0.0, 4.0],
            ],
            seed: 0,
        };
        Ok(TaskSpec {
            scenario,
            task,
            model,
            filter: FilterSettings::default(),
            p_ber: DEFAULT_P_BER,
            transformer_threshold: 0.75,
            bayes_threshold: 0.5,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.filter.validate()?;
        if self.model.sensors.is_empty() || self.model.horizon == 0 {
            return Err(Error::Config("need at least one sensor and a positive horizon".into()));
        }
        for (name, v) in [
            ("p_ber", self.p_ber),
            ("transformer_threshold", self.transformer_threshold),
            ("bayes_threshold", self.bayes_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        Ok(())
    }

    pub fn mobile(&self) -> bool {
        self.model.sensors.iter().any(|s| s.mobile)
    }

    pub fn input_dim(&self) -> usize {
        if self.mobile() {
            crate::dataprep::POSE_DIM
        } else {
            crate::dataprep::BASE_DIM
        }
    }
}

/// Sizes of the scaled-down experimental protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Protocol {
    /// Training groups (full scale: 100_000).
    pub train_groups: usize,
    /// Validation groups (full scale: 25_000).
    pub validation_groups: usize,
    /// Records per group (full scale: 32).
    pub group_size: usize,
    /// Monte Carlo evaluation runs (full scale: 1000).
    pub mc_runs: usize,
    /// Runs used to tune the Poisson floor of the NLL.
    pub tuning_runs: usize,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            train_groups: 2000,
            validation_groups: 200,
            group_size: 32,
            mc_runs: 100,
            tuning_runs: 20,
        }
    }
}

/// Top-level configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: u8,
    pub task: u8,
    /// Replaces the tabulated model parameters when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ScenarioConfig>,
    pub horizon: usize,
    pub filter: FilterSettings,
    pub p_ber: f64,
    pub transformer_threshold: f64,
    pub bayes_threshold: f64,
    pub model_dim: usize,
    pub network: NetConfig,
    pub training: TrainConfig,
    pub fusion: FusionSettings,
    pub gospa: GospaConfig,
    pub ppp_search: PppSearch,
    pub protocol: Protocol,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: 1,
            task: 1,
            model: None,
            horizon: DEFAULT_HORIZON,
            filter: FilterSettings::default(),
            p_ber: DEFAULT_P_BER,
            transformer_threshold: 0.75,
            bayes_threshold: 0.5,
            model_dim: 256,
            network: NetConfig::default(),
            training: TrainConfig::default(),
            fusion: FusionSettings::default(),
            gospa: GospaConfig::default(),
            ppp_search: PppSearch::default(),
            protocol: Protocol::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).io_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        let mut spec = TaskSpec::table(self.scenario, self.task)?;
        spec.model.horizon = self.horizon;
        if let Some(m) = &self.model {
            spec.model = m.clone();
        }
        spec.filter = self.filter.clone();
        spec.p_ber = self.p_ber;
        spec.transformer_threshold = self.transformer_threshold;
        spec.bayes_threshold = self.bayes_threshold;
        spec.validate()?;
        Ok(spec)
    }
}
