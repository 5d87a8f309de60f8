//! Monte Carlo engine: episodes, aggregation over runs, policy comparisons
//! and parameter sweeps.

mod config;
mod episode;
mod monte_carlo;

pub use config::{
    ExperimentConfig, LoopConfig, RecordLevel, DEFAULT_DIVERGENCE_THRESHOLD, DEFAULT_HORIZON,
    DEFAULT_RUNS,
};
pub use episode::{
    run_episode, EpisodeRecord, EpisodeTrace, Experiment, LoopRecord, MomentStats, PreparedLoop,
    SecondMoment, TriggerBin, Wiring, MAX_BINNED_GAP,
};
pub use monte_carlo::{
    mean_and_stderr, performance_gain, run_monte_carlo, sweep_grid, GainEstimate, LoopSummary,
    SimResult, SweepRow,
};
