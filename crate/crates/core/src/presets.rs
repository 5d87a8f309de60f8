//! Named configurations.

use crate::network::NetworkConfig;
use crate::plant::PlantParams;
use crate::scheduling::Policy;
use crate::sim::{ExperimentConfig, LoopConfig, RecordLevel, DEFAULT_DIVERGENCE_THRESHOLD, DEFAULT_HORIZON, DEFAULT_RUNS};

pub const REFERENCE_PRESET: &str = "paper-example";
pub const PRESET_NAMES: &[&str] = &[REFERENCE_PRESET];

/// Published gains of the reference loop, four decimals.
pub const REFERENCE_K: f64 = -0.8233;
pub const REFERENCE_L: f64 = 0.4476;

pub const REFERENCE_GRID_Q: [f64; 2] = [0.5, 1.0];
pub const DEFAULT_SEED: u64 = 20_240_601;

/// Scalar loop `A = 0.9, B = 1, C = 1.5, W = 1, V = 1.5, Q = 1, R = 0.1`.
pub fn reference_plant() -> PlantParams {
    PlantParams::scalar(0.9, 1.0, 1.5, 1.0, 1.5, 1.0, 0.1)
}

/// `p ∈ {0.1, 0.2, …, 0.9}`.
pub fn reference_grid_p() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// The reference loop under PST at `p = 0.5` on an always-free channel.
pub fn reference_experiment(master_seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        loops: vec![LoopConfig::new(reference_plant(), Policy::Pst, 0.5)],
        network: NetworkConfig::Abstracted { q: 1.0 },
        horizon: DEFAULT_HORIZON,
        runs: DEFAULT_RUNS,
        master_seed,
        record_level: RecordLevel::Costs,
        divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
        parallel: true,
    }
}

pub fn preset(name: &str, master_seed: u64) -> Option<ExperimentConfig> {
    match name {
        REFERENCE_PRESET => Some(reference_experiment(master_seed)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::GainSet;

    #[test]
    fn reference_gains_round_to_published_values() {
        let g = GainSet::solve(&reference_plant()).unwrap();
        assert!((g.k[(0, 0)] - REFERENCE_K).abs() < 5e-5);
        assert!((g.l[(0, 0)] - REFERENCE_L).abs() < 5e-5);
    }

    #[test]
    fn preset_lookup() {
        let cfg = preset("paper-example", 3).unwrap();
        assert_eq!(cfg.loops[0].params, reference_plant());
        assert_eq!(cfg.master_seed, 3);
        assert!(preset("nope", 3).is_none());
        assert_eq!(reference_grid_p().len(), 9);
    }
}
