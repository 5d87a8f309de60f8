//! End-to-end checks on the reference loop. Each check returns a report
//! with a one-line verdict; the caller decides how to surface failures.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    aggregate_utility, closed_form_pst_cost, utility_optimal_probabilities, UtilityConfig,
    SERIES_TOLERANCE,
};
use crate::error::Result;
use crate::linalg::relative_frobenius;
use crate::network::NetworkConfig;
use crate::plant::PlantParams;
use crate::presets::{
    reference_experiment, reference_grid_p, reference_plant, REFERENCE_GRID_Q, REFERENCE_K,
    REFERENCE_L,
};
use crate::report::{render_csv, CsvRow};
use crate::riccati::GainSet;
use crate::scheduling::{lambda_from_probability, Policy};
use crate::sim::{sweep_grid, Experiment, ExperimentConfig, RecordLevel, SweepRow, DEFAULT_HORIZON, DEFAULT_RUNS};

pub const CLOSED_FORM_TOLERANCE: f64 = 0.02;
pub const GAIN_MIN_Z: f64 = 3.0;
pub const POST_SUCCESS_TOLERANCE: f64 = 0.01;
pub const POST_SUCCESS_MIN_SLOTS: u64 = 100_000;
pub const NO_TRIGGER_MOMENT_TOLERANCE: f64 = 0.05;
pub const COLLISION_MOMENT_TOLERANCE: f64 = 0.10;
pub const MOMENT_MIN_EPISODES: u64 = 100_000;
pub const UNSTABLE_A: f64 = 1.2;
pub const STABLE_ETA: f64 = 0.5;
pub const UNSTABLE_ETA: f64 = 0.2;
pub const MIN_DIVERGED_RUNS: usize = 8;
pub const UTILITY_TRIALS: u64 = 10;
pub const UTILITY_ALTERNATIVES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionReport {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{verdict}] {}. {}: {}", self.id, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReproduceOptions {
    pub seed: u64,
    pub runs: usize,
    pub horizon: usize,
}

impl ReproduceOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            runs: DEFAULT_RUNS,
            horizon: DEFAULT_HORIZON,
        }
    }

    fn base(&self) -> ExperimentConfig {
        let mut cfg = reference_experiment(self.seed);
        cfg.runs = self.runs;
        cfg.horizon = self.horizon;
        cfg
    }
}

/// PST and CETT on the reference grid with conditional statistics recorded.
pub fn reference_sweep(opts: &ReproduceOptions) -> Result<Vec<SweepRow>> {
    let mut base = opts.base();
    base.record_level = RecordLevel::Moments;
    sweep_grid(&base, &[Policy::Pst, Policy::Cett], &reference_grid_p(), &REFERENCE_GRID_Q)
}

pub fn check_gains() -> Result<CriterionReport> {
    let g = GainSet::solve(&reference_plant())?;
    let (k, l) = (g.k[(0, 0)], g.l[(0, 0)]);
    let passed = (k - REFERENCE_K).abs() < 5e-5 && (l - REFERENCE_L).abs() < 5e-5;
    Ok(CriterionReport {
        id: 1,
        name: "gains",
        passed,
        detail: format!("K = {k:.6} (expected {REFERENCE_K}), L = {l:.6} (expected {REFERENCE_L})"),
    })
}

pub fn check_closed_form(rows: &[SweepRow]) -> Result<CriterionReport> {
    let params = reference_plant();
    let gains = GainSet::solve(&params)?;
    let mut worst = (0.0_f64, 0.0, 0.0);
    let mut points = 0;
    for r in rows.iter().filter(|r| r.policy == Policy::Pst) {
        let cf = closed_form_pst_cost(&params, &gains, r.p, r.q, SERIES_TOLERANCE)?;
        let rel = (r.summary.j_mean - cf).abs() / cf;
        points += 1;
        if !(rel <= worst.0) {
            worst = (rel, r.p, r.q);
        }
    }
    Ok(CriterionReport {
        id: 2,
        name: "closed-form PST cost vs Monte Carlo",
        passed: points > 0 && worst.0 < CLOSED_FORM_TOLERANCE,
        detail: format!(
            "{points} grid points, worst relative error {:.4}% at p = {}, q = {} (limit {}%)",
            100.0 * worst.0,
            worst.1,
            worst.2,
            100.0 * CLOSED_FORM_TOLERANCE
        ),
    })
}

pub fn check_gain_sign(rows: &[SweepRow]) -> CriterionReport {
    let cett: Vec<&SweepRow> = rows.iter().filter(|r| r.policy == Policy::Cett).collect();
    let worst = cett
        .iter()
        .map(|r| (r.gain.z_score(), r.p, r.q, r.gain.gain))
        .fold(None, |acc: Option<(f64, f64, f64, f64)>, x| match acc {
            Some(a) if a.0 <= x.0 => Some(a),
            _ => Some(x),
        });
    let passed = !cett.is_empty()
        && cett
            .iter()
            .all(|r| r.gain.gain > 0.0 && r.gain.z_score() >= GAIN_MIN_Z);
    let detail = match worst {
        Some((z, p, q, g)) => format!(
            "{} grid points, smallest margin {z:.1} standard errors (gain {:.3}%) at p = {p}, q = {q}",
            cett.len(),
            100.0 * g
        ),
        None => "no CETT rows".into(),
    };
    CriterionReport {
        id: 3,
        name: "CETT improves on PST",
        passed,
        detail,
    }
}

pub fn check_gain_ordering(rows: &[SweepRow]) -> CriterionReport {
    let gain = |p: f64, q: f64| {
        rows.iter()
            .find(|r| r.policy == Policy::Cett && r.p == p && r.q == q)
            .map(|r| r.gain.gain)
    };
    let mut failures = Vec::new();
    let mut smallest = f64::INFINITY;
    let grid = reference_grid_p();
    for &p in &grid {
        match (gain(p, 1.0), gain(p, 0.5)) {
            (Some(hi), Some(lo)) => {
                smallest = smallest.min(hi - lo);
                if !(hi > lo) {
                    failures.push(p);
                }
            }
            _ => failures.push(p),
        }
    }
    CriterionReport {
        id: 4,
        name: "gain higher on a free channel",
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!(
                "gain(q = 1) > gain(q = 0.5) at all {} p values, smallest difference {:.3} percentage points",
                grid.len(),
                100.0 * smallest
            )
        } else {
            format!("ordering fails at p = {failures:?}")
        },
    }
}

pub fn check_tunability(rows: &[SweepRow], horizon: usize) -> CriterionReport {
    let mut worst_overall = (0.0_f64, String::new());
    let mut overall_ok = !rows.is_empty();
    for r in rows {
        let band = 3.0 * (r.p * (1.0 - r.p) / horizon as f64).sqrt();
        let dev = (r.summary.trigger_freq - r.p).abs();
        if dev > band {
            overall_ok = false;
        }
        let ratio = dev / band;
        if !(ratio <= worst_overall.0) {
            worst_overall = (ratio, format!("{} p = {} q = {}", r.policy, r.p, r.q));
        }
    }

    let mut post_ok = true;
    let mut post_worst = (0.0_f64, 0.0, 0.0, 0u64);
    for p in reference_grid_p() {
        let (mut slots, mut triggers) = (0u64, 0u64);
        for r in rows.iter().filter(|r| r.policy == Policy::Cett && r.p == p) {
            if let Some(m) = &r.summary.moments {
                slots += m.bins[1][0].slots;
                triggers += m.bins[1][0].triggers;
            }
        }
        let freq = triggers as f64 / slots as f64;
        let dev = (freq - p).abs();
        if slots < POST_SUCCESS_MIN_SLOTS || !(dev <= POST_SUCCESS_TOLERANCE) {
            post_ok = false;
        }
        if !(dev <= post_worst.0) || slots < post_worst.3 {
            post_worst = (dev, p, freq, slots);
        }
    }
    CriterionReport {
        id: 5,
        name: "tunability",
        passed: overall_ok && post_ok,
        detail: format!(
            "trigger frequency within {:.2} of the 3-sigma band at worst ({}); post-success CETT frequency {:.4} at p = {} over {} slots (deviation {:.4}, limit {})",
            worst_overall.0, worst_overall.1, post_worst.2, post_worst.1, post_worst.3, post_worst.0, POST_SUCCESS_TOLERANCE
        ),
    }
}

/// Expected second moments two slots after a success: `(Ψ̂, M)`.
pub fn conditional_moments(params: &PlantParams, gains: &GainSet, p: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let lambda = lambda_from_probability(p, params.state_dim())?;
    let a = &params.a;
    let propagated = a * &gains.phi * a.transpose();
    let psi_hat = &propagated / (1.0 + lambda) + &gains.phi;
    let psi_full = propagated + &gains.phi;
    let m = psi_full / p - &psi_hat * ((1.0 - p) / p);
    Ok((psi_hat, m))
}

pub fn check_moments(opts: &ReproduceOptions) -> Result<CriterionReport> {
    let p = 0.5;
    let mut cfg = opts.base();
    cfg.loops[0].policy = Policy::Cett;
    cfg.loops[0].p = p;
    cfg.network = NetworkConfig::Abstracted { q: 0.5 };
    cfg.horizon = 2 * opts.horizon;
    cfg.record_level = RecordLevel::Moments;
    let exp = Experiment::prepare(&cfg)?;
    let result = exp.run_monte_carlo()?;
    let stats = result.loops[0].moments.clone().expect("moments were recorded");
    let (psi_hat, m) = conditional_moments(&cfg.loops[0].params, &exp.loops[0].gains, p)?;
    let no_trigger = &stats.after_no_trigger;
    let collision = &stats.after_collision;
    let err_hat = relative_frobenius(&no_trigger.mean(), &psi_hat);
    let err_m = relative_frobenius(&collision.mean(), &m);
    let passed = no_trigger.count >= MOMENT_MIN_EPISODES
        && collision.count >= MOMENT_MIN_EPISODES
        && err_hat < NO_TRIGGER_MOMENT_TOLERANCE
        && err_m < COLLISION_MOMENT_TOLERANCE;
    Ok(CriterionReport {
        id: 6,
        name: "conditional error moments",
        passed,
        detail: format!(
            "no trigger: {:.2}% off over {} episodes (limit {}%); collision: {:.2}% off over {} episodes (limit {}%)",
            100.0 * err_hat,
            no_trigger.count,
            100.0 * NO_TRIGGER_MOMENT_TOLERANCE,
            100.0 * err_m,
            collision.count,
            100.0 * COLLISION_MOMENT_TOLERANCE
        ),
    })
}

/// Per-run maximum state norms and divergence flags of PST on the
/// open-loop unstable variant at success probability `eta` (with `q = 1`).
pub fn unstable_variant_runs(opts: &ReproduceOptions, eta: f64) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut cfg = opts.base();
    cfg.loops[0].params = PlantParams::scalar(UNSTABLE_A, 1.0, 1.5, 1.0, 1.5, 1.0, 0.1);
    cfg.loops[0].p = eta;
    cfg.network = NetworkConfig::Abstracted { q: 1.0 };
    let result = Experiment::prepare(&cfg)?.run_monte_carlo()?;
    let summary = result.loops.into_iter().next().expect("one loop");
    Ok((summary.max_state_norms, summary.diverged_runs))
}

pub fn check_stability_boundary(opts: &ReproduceOptions) -> Result<CriterionReport> {
    let (stable_norms, stable_div) = unstable_variant_runs(opts, STABLE_ETA)?;
    let (unstable_norms, unstable_div) = unstable_variant_runs(opts, UNSTABLE_ETA)?;
    let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    let passed = stable_div.is_empty() && unstable_div.len() >= MIN_DIVERGED_RUNS.min(opts.runs);
    Ok(CriterionReport {
        id: 7,
        name: "stability boundary",
        passed,
        detail: format!(
            "A = {UNSTABLE_A}: qp = {STABLE_ETA} diverged in {}/{} runs (max |x| {:.3e}); qp = {UNSTABLE_ETA} diverged in {}/{} runs (max |x| {:.3e}, need >= {MIN_DIVERGED_RUNS})",
            stable_div.len(),
            stable_norms.len(),
            max(&stable_norms),
            unstable_div.len(),
            unstable_norms.len(),
            max(&unstable_norms)
        ),
    })
}

pub fn check_utility(seed: u64) -> Result<CriterionReport> {
    let equal = utility_optimal_probabilities(&UtilityConfig::equal(4))?;
    let equal_ok = equal.iter().all(|&p| (p - 0.25).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut beaten = 0usize;
    let mut total = 0usize;
    for _ in 0..UTILITY_TRIALS {
        let m = rng.random_range(2..=6);
        let c: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..10.0)).collect();
        let cfg = UtilityConfig { c: c.clone(), alpha: vec![] };
        let best = aggregate_utility(&c, &utility_optimal_probabilities(&cfg)?);
        for _ in 0..UTILITY_ALTERNATIVES {
            let alt: Vec<f64> = (0..m).map(|_| rng.random_range(1e-6..1.0 - 1e-6)).collect();
            total += 1;
            if best > aggregate_utility(&c, &alt) {
                beaten += 1;
            }
        }
    }
    Ok(CriterionReport {
        id: 8,
        name: "utility tuner",
        passed: equal_ok && beaten == total,
        detail: format!(
            "equal priorities, m = 4: p* = {equal:?}; optimum beat {beaten}/{total} random alternatives over {UTILITY_TRIALS} trials"
        ),
    })
}

pub fn check_determinism(opts: &ReproduceOptions) -> Result<CriterionReport> {
    let mut base = opts.base();
    base.runs = opts.runs.min(3);
    base.horizon = opts.horizon.min(5_000);
    let render = |cfg: &ExperimentConfig| -> Result<String> {
        let rows = sweep_grid(cfg, &[Policy::Pst, Policy::Cett], &[0.3, 0.7], &REFERENCE_GRID_Q)?;
        Ok(render_csv(&rows.iter().map(CsvRow::from_sweep).collect::<Vec<_>>()))
    };
    let first = render(&base)?;
    let second = render(&base)?;
    let mut serial = base.clone();
    serial.parallel = false;
    let third = render(&serial)?;
    let csv_ok = first == second && first == third;

    let mut cfg = base.clone();
    cfg.loops[0].policy = Policy::Cett;
    cfg.loops[0].p = 0.5;
    cfg.network = NetworkConfig::Abstracted { q: 0.5 };
    cfg.record_level = RecordLevel::FullTrace;
    let exp = Experiment::prepare(&cfg)?;
    let mut doubled = exp.clone();
    doubled.override_gain(0, &exp.loops[0].gains.k * 2.0)?;
    let a = exp.run_monte_carlo()?;
    let b = doubled.run_monte_carlo()?;
    let (ta, tb) = (&a.loops[0].traces, &b.loops[0].traces);
    let sequences_ok = ta.len() == tb.len()
        && ta.iter().zip(tb).all(|(x, y)| x.delta == y.delta && x.sigma == y.sigma);
    let cost_changed = a.loops[0].j_direct_mean != b.loops[0].j_direct_mean;
    Ok(CriterionReport {
        id: 9,
        name: "determinism and gain independence",
        passed: csv_ok && sequences_ok && cost_changed,
        detail: format!(
            "repeated and serial sweeps byte-identical: {csv_ok}; delta/sigma unchanged under 2K: {sequences_ok} (direct cost {:.4} -> {:.4})",
            a.loops[0].j_direct_mean, b.loops[0].j_direct_mean
        ),
    })
}

#[derive(Debug, Clone)]
pub struct Reproduction {
    pub reports: Vec<CriterionReport>,
    pub rows: Vec<SweepRow>,
}

impl Reproduction {
    pub fn all_passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed)
    }
}

pub fn reproduce_all(opts: &ReproduceOptions) -> Result<Reproduction> {
    let rows = reference_sweep(opts)?;
    let reports = vec![
        check_gains()?,
        check_closed_form(&rows)?,
        check_gain_sign(&rows),
        check_gain_ordering(&rows),
        check_tunability(&rows, opts.horizon),
        check_moments(opts)?,
        check_stability_boundary(opts)?,
        check_utility(opts.seed)?,
        check_determinism(opts)?,
    ];
    Ok(Reproduction { reports, rows })
}
