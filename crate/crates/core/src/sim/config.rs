use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::plant::PlantParams;
use crate::scheduling::Policy;

pub const DEFAULT_HORIZON: usize = 100_000;
pub const DEFAULT_RUNS: usize = 10;
pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RecordLevel {
    /// Costs and frequencies only.
    #[default]
    Costs,
    /// Adds conditional trigger frequencies and error second moments.
    Moments,
    /// Adds per-slot signals of every run.
    FullTrace,
}

impl RecordLevel {
    pub fn moments(self) -> bool {
        !matches!(self, RecordLevel::Costs)
    }

    pub fn trace(self) -> bool {
        matches!(self, RecordLevel::FullTrace)
    }
}

impl std::str::FromStr for RecordLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "costs" => Ok(RecordLevel::Costs),
            "moments" | "costs+moments" | "costs_moments" => Ok(RecordLevel::Moments),
            "full_trace" | "trace" => Ok(RecordLevel::FullTrace),
            other => Err(Error::InvalidConfig(format!(
                "unknown record level `{other}` (expected costs, moments or full_trace)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub params: PlantParams,
    pub policy: Policy,
    /// Target per-slot triggering probability.
    pub p: f64,
    /// Optional periodic schedule `p_k = schedule[k mod len]`, overriding `p`
    /// slot by slot.
    pub p_schedule: Option<Vec<f64>>,
    /// Mean of the initial state and of both estimator priors. Zero when
    /// absent.
    pub initial_mean: Option<DVector<f64>>,
}

impl LoopConfig {
    pub fn new(params: PlantParams, policy: Policy, p: f64) -> Self {
        Self {
            params,
            policy,
            p,
            p_schedule: None,
            initial_mean: None,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        self.params.check_dimensions()?;
        let check = |value: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidProbability {
                    what: "triggering probability",
                    value,
                    range: "[0, 1]",
                });
            }
            if self.policy.is_event_based() && value >= 1.0 {
                return Err(Error::InvalidProbability {
                    what: "event-triggered probability",
                    value,
                    range: "[0, 1)",
                });
            }
            Ok(())
        };
        check(self.p)?;
        if let Some(schedule) = &self.p_schedule {
            if schedule.is_empty() {
                return Err(Error::InvalidConfig(format!("loop {index}: empty probability schedule")));
            }
            for &p in schedule {
                check(p)?;
            }
        }
        if let Some(mean) = &self.initial_mean {
            if mean.len() != self.params.state_dim() {
                return Err(Error::DimensionMismatch {
                    left: "initial_mean",
                    right: "A",
                    detail: format!(
                        "loop {index}: initial mean has length {}, state dimension is {}",
                        mean.len(),
                        self.params.state_dim()
                    ),
                });
            }
        }
        Ok(())
    }

    pub(crate) fn probability_at(&self, k: usize) -> f64 {
        match &self.p_schedule {
            Some(s) => s[k % s.len()],
            None => self.p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub loops: Vec<LoopConfig>,
    pub network: NetworkConfig,
    pub horizon: usize,
    pub runs: usize,
    pub master_seed: u64,
    pub record_level: RecordLevel,
    /// `‖x‖` above this flags the episode as diverged.
    pub divergence_threshold: f64,
    /// Runs episodes on the rayon pool. Results do not depend on it.
    pub parallel: bool,
}

impl ExperimentConfig {
    /// A single loop on an abstracted channel with default horizon and runs.
    pub fn single_loop(params: PlantParams, policy: Policy, p: f64, q: f64, master_seed: u64) -> Self {
        Self {
            loops: vec![LoopConfig::new(params, policy, p)],
            network: NetworkConfig::Abstracted { q },
            horizon: DEFAULT_HORIZON,
            runs: DEFAULT_RUNS,
            master_seed,
            record_level: RecordLevel::Costs,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            parallel: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.loops.is_empty() {
            return Err(Error::InvalidConfig("at least one loop is required".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.runs == 0 {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "divergence threshold must be positive, got {}",
                self.divergence_threshold
            )));
        }
        self.network.validate(self.loops.len())?;
        for (i, l) in self.loops.iter().enumerate() {
            l.validate(i)?;
        }
        Ok(())
    }
}
