use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::episode::{EpisodeRecord, EpisodeTrace, Experiment, MomentStats};
use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::scheduling::Policy;

#[derive(Debug, Clone, PartialEq)]
pub struct LoopSummary {
    pub policy: Policy,
    pub p: f64,
    /// Channel availability of the abstracted network.
    pub q: Option<f64>,
    /// Decomposed cost of each run, in run order.
    pub run_costs: Vec<f64>,
    /// Direct quadratic cost of each run, in run order.
    pub run_direct_costs: Vec<f64>,
    pub j_mean: f64,
    pub j_stderr: f64,
    pub j_direct_mean: f64,
    pub j_direct_stderr: f64,
    pub trigger_freq: f64,
    pub success_freq: f64,
    /// Frequency of unacknowledged attempts.
    pub collision_freq: f64,
    pub slots: u64,
    pub diverged_runs: Vec<usize>,
    pub max_state_norms: Vec<f64>,
    pub moments: Option<MomentStats>,
    pub traces: Vec<EpisodeTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub runs: usize,
    pub horizon: usize,
    pub loops: Vec<LoopSummary>,
}

/// Sample mean and standard error of the mean. A single sample has an
/// undefined standard error (NaN); any infinite sample makes both infinite.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if xs.iter().any(|x| x.is_infinite()) {
        return (f64::INFINITY, f64::INFINITY);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl Experiment {
    pub fn run_monte_carlo(&self) -> Result<SimResult> {
        let runs = self.config.runs;
        let episodes: Vec<EpisodeRecord> = if self.config.parallel {
            (0..runs).into_par_iter().map(|r| self.run_episode(r)).collect::<Result<_>>()?
        } else {
            (0..runs).map(|r| self.run_episode(r)).collect::<Result<_>>()?
        };
        Ok(aggregate(self, episodes))
    }
}

fn aggregate(exp: &Experiment, episodes: Vec<EpisodeRecord>) -> SimResult {
    let q = exp.config.network.q();
    let mut loops: Vec<LoopSummary> = exp
        .loops
        .iter()
        .map(|lp| LoopSummary {
            policy: lp.config.policy,
            p: lp.config.p,
            q,
            run_costs: Vec::with_capacity(episodes.len()),
            run_direct_costs: Vec::with_capacity(episodes.len()),
            j_mean: 0.0,
            j_stderr: 0.0,
            j_direct_mean: 0.0,
            j_direct_stderr: 0.0,
            trigger_freq: 0.0,
            success_freq: 0.0,
            collision_freq: 0.0,
            slots: 0,
            diverged_runs: Vec::new(),
            max_state_norms: Vec::with_capacity(episodes.len()),
            moments: None,
            traces: Vec::new(),
        })
        .collect();
    let mut counts = vec![(0u64, 0u64, 0u64); loops.len()];

    for ep in episodes {
        for ((summary, count), rec) in loops.iter_mut().zip(counts.iter_mut()).zip(ep.loops) {
            summary.run_costs.push(rec.cost);
            summary.run_direct_costs.push(rec.direct_cost);
            summary.slots += rec.slots as u64;
            count.0 += rec.triggers;
            count.1 += rec.successes;
            count.2 += rec.collisions;
            if rec.diverged {
                summary.diverged_runs.push(ep.run);
            }
            summary.max_state_norms.push(rec.max_state_norm);
            if let Some(m) = rec.moments {
                match &mut summary.moments {
                    Some(acc) => acc.merge(&m),
                    None => summary.moments = Some(m),
                }
            }
            if let Some(t) = rec.trace {
                summary.traces.push(t);
            }
        }
    }
    for (summary, (triggers, successes, collisions)) in loops.iter_mut().zip(counts) {
        (summary.j_mean, summary.j_stderr) = mean_and_stderr(&summary.run_costs);
        (summary.j_direct_mean, summary.j_direct_stderr) = mean_and_stderr(&summary.run_direct_costs);
        let slots = summary.slots.max(1) as f64;
        summary.trigger_freq = triggers as f64 / slots;
        summary.success_freq = successes as f64 / slots;
        summary.collision_freq = collisions as f64 / slots;
    }
    SimResult {
        runs: exp.config.runs,
        horizon: exp.config.horizon,
        loops,
    }
}

pub fn run_monte_carlo(cfg: &ExperimentConfig) -> Result<SimResult> {
    Experiment::prepare(cfg)?.run_monte_carlo()
}

/// Relative improvement `(J_ps − J_π)/J_ps` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainEstimate {
    pub gain: f64,
    pub stderr: f64,
}

impl GainEstimate {
    /// Gain in standard errors.
    pub fn z_score(&self) -> f64 {
        self.gain / self.stderr
    }
}

/// Ratio of mean paired cost difference to mean baseline cost over runs
/// that share their noise realizations. The standard error follows from the
/// delta method applied to the ratio of means.
pub fn performance_gain(baseline: &LoopSummary, candidate: &LoopSummary) -> Result<GainEstimate> {
    let base = &baseline.run_costs;
    let cand = &candidate.run_costs;
    if base.len() != cand.len() || base.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "gain needs paired runs, got {} and {}",
            base.len(),
            cand.len()
        )));
    }
    let n = base.len() as f64;
    let base_mean = base.iter().sum::<f64>() / n;
    if !(base_mean > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "baseline cost must be positive, got {base_mean}"
        )));
    }
    let diffs: Vec<f64> = base.iter().zip(cand).map(|(b, c)| b - c).collect();
    let diff_mean = diffs.iter().sum::<f64>() / n;
    let gain = diff_mean / base_mean;
    let stderr = if base.len() < 2 {
        f64::NAN
    } else {
        let resid: Vec<f64> = diffs.iter().zip(base).map(|(d, b)| d - gain * b).collect();
        let rmean = resid.iter().sum::<f64>() / n;
        let var = resid.iter().map(|r| (r - rmean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt() / base_mean
    };
    Ok(GainEstimate { gain, stderr })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub policy: Policy,
    pub p: f64,
    pub q: f64,
    pub summary: LoopSummary,
    /// Gain against the PST arm at the same grid point.
    pub gain: GainEstimate,
}

/// Evaluates every policy on the cross product of the grids for the single
/// loop of `base`. Rows are ordered by `q`, then `p`, then policy in the
/// given order. All grid points reuse the seed of `base`.
pub fn sweep_grid(
    base: &ExperimentConfig,
    policies: &[Policy],
    grid_p: &[f64],
    grid_q: &[f64],
) -> Result<Vec<SweepRow>> {
    if base.loops.len() != 1 || !matches!(base.network, NetworkConfig::Abstracted { .. }) {
        return Err(Error::InvalidConfig(
            "a sweep needs a single loop on the abstracted network".into(),
        ));
    }
    let mut rows = Vec::with_capacity(policies.len() * grid_p.len() * grid_q.len());
    for &q in grid_q {
        for &p in grid_p {
            let run = |policy: Policy| -> Result<LoopSummary> {
                let mut cfg = base.clone();
                cfg.network = NetworkConfig::Abstracted { q };
                cfg.loops[0].policy = policy;
                cfg.loops[0].p = p;
                let mut result = run_monte_carlo(&cfg)?;
                Ok(result.loops.remove(0))
            };
            let mut summaries: Vec<(Policy, LoopSummary)> = Vec::with_capacity(policies.len());
            for &policy in policies {
                summaries.push((policy, run(policy)?));
            }
            let baseline = match summaries.iter().find(|(pol, _)| *pol == Policy::Pst) {
                Some((_, s)) => s.clone(),
                None => run(Policy::Pst)?,
            };
            for (policy, summary) in summaries {
                let gain = performance_gain(&baseline, &summary)?;
                rows.push(SweepRow {
                    policy,
                    p,
                    q,
                    summary,
                    gain,
                });
            }
        }
    }
    Ok(rows)
}
