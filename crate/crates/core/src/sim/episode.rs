//! One episode of every configured loop.
//!
//! The default wiring propagates the estimation errors in coordinates that
//! never see the control input: the local prediction error
//! `ε = x − x̂_{k|k−1}` and the estimator gap `g = x̂_{k|k−1} − x̄_{k|k−1}`.
//! The true state is propagated alongside with `u = K(x − ē)` and only feeds
//! the cost and the divergence check. Trigger decisions and channel outcomes
//! are therefore bitwise independent of `K`. The literal wiring, which runs
//! the plant, the local Kalman filter and the remote estimator as written,
//! is kept as a cross-check.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{ExperimentConfig, LoopConfig};
use crate::analysis::mss_check;
use crate::error::{Error, Result};
use crate::estimation::{LocalEstimator, RemoteEstimator};
use crate::linalg::{covariance_factor, symmetrize};
use crate::network::{resolve_slot, resolve_slot_abstracted, LoopOutcome, NetworkConfig};
use crate::riccati::GainSet;
use crate::rng::{stream, Purpose, StreamRng};
use crate::scheduling::SchedulerState;

/// Largest gap since the last success with its own trigger-frequency bin;
/// longer gaps share the last bin.
pub const MAX_BINNED_GAP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Wiring {
    #[default]
    ErrorCoordinates,
    Direct,
}

#[derive(Debug, Clone)]
pub struct PreparedLoop {
    pub config: LoopConfig,
    pub gains: GainSet,
    process_factor: DMatrix<f64>,
    measurement_factor: DMatrix<f64>,
    initial_factor: DMatrix<f64>,
    /// Scheduler covariance at the start, the covariance of `e_{0|−1}`
    /// given the initial state distribution.
    pub psi0: DMatrix<f64>,
}

/// A validated configuration with gains solved and noise covariances
/// factored, ready to run episodes.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub loops: Vec<PreparedLoop>,
    pub wiring: Wiring,
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let loops = config
            .loops
            .iter()
            .map(|lc| {
                let params = &lc.params;
                let gains = GainSet::solve(params)?;
                let innovation_cov = &params.c * &gains.theta * params.c.transpose() + &params.v;
                let psi0 = symmetrize(&(&gains.l * innovation_cov * gains.l.transpose()));
                Ok(PreparedLoop {
                    process_factor: covariance_factor(&params.w, "W")?,
                    measurement_factor: covariance_factor(&params.v, "V")?,
                    initial_factor: covariance_factor(&gains.theta, "Theta")?,
                    psi0,
                    gains,
                    config: lc.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            loops,
            wiring: Wiring::default(),
        })
    }

    pub fn with_wiring(mut self, wiring: Wiring) -> Self {
        self.wiring = wiring;
        self
    }

    /// Replaces the feedback gain of one loop. The decomposed cost keeps
    /// using the optimal `Y`, so only the direct quadratic cost reflects the
    /// new gain.
    pub fn override_gain(&mut self, loop_index: usize, k: DMatrix<f64>) -> Result<()> {
        let lp = self
            .loops
            .get_mut(loop_index)
            .ok_or_else(|| Error::InvalidConfig(format!("no loop {loop_index}")))?;
        if k.shape() != lp.gains.k.shape() {
            return Err(Error::DimensionMismatch {
                left: "K",
                right: "B",
                detail: format!("gain is {:?}, expected {:?}", k.shape(), lp.gains.k.shape()),
            });
        }
        lp.gains.k = k;
        Ok(())
    }

    /// Loops whose success probability fails the mean-square stability test.
    /// Such runs are still simulated.
    pub fn mss_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, lp) in self.loops.iter().enumerate() {
            let q = match self.config.network {
                NetworkConfig::Abstracted { q } => q,
                NetworkConfig::Full => self
                    .loops
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, o)| 1.0 - o.config.p)
                    .product(),
            };
            if let Ok(false) = mss_check(&lp.config.params, lp.config.p, q) {
                out.push(format!(
                    "loop {i}: sqrt(1 - q p) * rho(A) >= 1 at p = {}, q = {q}; the state is not mean-square stable",
                    lp.config.p
                ));
            }
        }
        out
    }

    pub fn run_episode(&self, run: usize) -> Result<EpisodeRecord> {
        let record = self.config.record_level;
        let mut states = self
            .loops
            .iter()
            .enumerate()
            .map(|(i, lp)| LoopRun::new(lp, self.wiring, self.config.master_seed, run, i, record.moments(), record.trace()))
            .collect::<Result<Vec<_>>>()?;
        let mut channel = stream(self.config.master_seed, run as u64, 0, Purpose::Channel);
        let threshold = self.config.divergence_threshold;
        let mut deltas = vec![false; states.len()];

        'slots: for k in 0..self.config.horizon {
            for (state, delta) in states.iter_mut().zip(deltas.iter_mut()) {
                *delta = state.measure_and_decide(k)?;
            }
            let outcomes: Vec<LoopOutcome> = match self.config.network {
                NetworkConfig::Abstracted { q } => vec![resolve_slot_abstracted(deltas[0], q, &mut channel)],
                NetworkConfig::Full => {
                    let slot = resolve_slot(&deltas);
                    (0..states.len())
                        .map(|i| LoopOutcome {
                            delta: slot.delta[i],
                            rho: slot.rho[i],
                            sigma: slot.sigma[i],
                        })
                        .collect()
                }
            };
            let mut diverged = false;
            for (state, outcome) in states.iter_mut().zip(&outcomes) {
                diverged |= state.finish_slot(k, *outcome, threshold)?;
            }
            if diverged {
                break 'slots;
            }
        }
        Ok(EpisodeRecord {
            run,
            loops: states.into_iter().map(LoopRun::into_record).collect(),
        })
    }
}

/// Counts of slots and triggers sharing a history class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TriggerBin {
    pub slots: u64,
    pub triggers: u64,
}

impl TriggerBin {
    pub fn frequency(&self) -> f64 {
        self.triggers as f64 / self.slots as f64
    }
}

/// Accumulated `Σ eeᵀ` and sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMoment {
    pub count: u64,
    pub sum: DMatrix<f64>,
}

impl SecondMoment {
    pub fn new(n: usize) -> Self {
        Self {
            count: 0,
            sum: DMatrix::zeros(n, n),
        }
    }

    fn add(&mut self, e: &DVector<f64>) {
        self.sum.ger(1.0, e, e, 1.0);
        self.count += 1;
    }

    pub fn merge(&mut self, other: &SecondMoment) {
        self.sum += &other.sum;
        self.count += other.count;
    }

    pub fn mean(&self) -> DMatrix<f64> {
        &self.sum / self.count as f64
    }
}

/// Conditional statistics, collected from the first real success onward.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStats {
    /// `bins[d][c]`: slots `d` after the last success (`d = 1` right after
    /// it, capped at [`MAX_BINNED_GAP`]) and whether an attempt collided
    /// since (`c = 1`).
    pub bins: Vec<[TriggerBin; 2]>,
    /// `e_pred` in the slot right after a success.
    pub post_success: SecondMoment,
    /// `e_pred` two slots after a success, given no attempt in between.
    pub after_no_trigger: SecondMoment,
    /// `e_pred` two slots after a success, given the attempt in between
    /// collided.
    pub after_collision: SecondMoment,
}

impl MomentStats {
    pub fn new(n: usize) -> Self {
        Self {
            bins: vec![[TriggerBin::default(); 2]; MAX_BINNED_GAP + 1],
            post_success: SecondMoment::new(n),
            after_no_trigger: SecondMoment::new(n),
            after_collision: SecondMoment::new(n),
        }
    }

    pub fn merge(&mut self, other: &MomentStats) {
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            for c in 0..2 {
                a[c].slots += b[c].slots;
                a[c].triggers += b[c].triggers;
            }
        }
        self.post_success.merge(&other.post_success);
        self.after_no_trigger.merge(&other.after_no_trigger);
        self.after_collision.merge(&other.after_collision);
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    pub delta: Vec<bool>,
    pub rho: Vec<bool>,
    pub sigma: Vec<bool>,
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub e_pred: Vec<DVector<f64>>,
    pub e_bar: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopRecord {
    /// `tr(PW) + mean ēᵀYē`; infinite when the episode diverged.
    pub cost: f64,
    /// `mean (xᵀQx + uᵀRu)`; infinite when the episode diverged.
    pub direct_cost: f64,
    pub slots: usize,
    pub triggers: u64,
    pub successes: u64,
    pub collisions: u64,
    pub diverged: bool,
    pub max_state_norm: f64,
    pub moments: Option<MomentStats>,
    pub trace: Option<EpisodeTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub run: usize,
    pub loops: Vec<LoopRecord>,
}

enum Estimators {
    Errors {
        eps: DVector<f64>,
        gap: DVector<f64>,
        correction: DVector<f64>,
        innovation: DVector<f64>,
        e_hat: DVector<f64>,
        diff: DVector<f64>,
    },
    Direct {
        local: LocalEstimator,
        remote: RemoteEstimator,
    },
}

struct LoopRun<'a> {
    lp: &'a PreparedLoop,
    sched: SchedulerState,
    process_rng: StreamRng,
    measurement_rng: StreamRng,
    est: Estimators,
    x: DVector<f64>,
    u: DVector<f64>,
    e_pred: DVector<f64>,
    e_bar: DVector<f64>,
    noise_w: DVector<f64>,
    noise_v: DVector<f64>,
    z_w: DVector<f64>,
    z_v: DVector<f64>,
    tmp_n: DVector<f64>,
    tmp_m: DVector<f64>,
    delta: bool,
    cost_sum: f64,
    direct_sum: f64,
    slots: usize,
    triggers: u64,
    successes: u64,
    collisions: u64,
    diverged: bool,
    max_norm: f64,
    since_success: usize,
    collided: bool,
    seen_success: bool,
    first_attempt: Option<bool>,
    moments: Option<MomentStats>,
    trace: Option<EpisodeTrace>,
}

fn fill_normal(z: &mut DVector<f64>, rng: &mut StreamRng) {
    for zi in z.iter_mut() {
        *zi = rng.sample(StandardNormal);
    }
}

impl<'a> LoopRun<'a> {
    fn new(
        lp: &'a PreparedLoop,
        wiring: Wiring,
        seed: u64,
        run: usize,
        index: usize,
        moments: bool,
        trace: bool,
    ) -> Result<Self> {
        let params = &lp.config.params;
        let (n, m, p) = (params.state_dim(), params.input_dim(), params.output_dim());
        let key = |purpose| stream(seed, run as u64, index as u64, purpose);
        let mut init_rng = key(Purpose::InitialState);
        let mut z0 = DVector::zeros(n);
        fill_normal(&mut z0, &mut init_rng);
        let deviation = &lp.initial_factor * z0;
        let mean = lp.config.initial_mean.clone().unwrap_or_else(|| DVector::zeros(n));
        let x = &mean + &deviation;
        let est = match wiring {
            Wiring::ErrorCoordinates => Estimators::Errors {
                eps: deviation,
                gap: DVector::zeros(n),
                correction: DVector::zeros(n),
                innovation: DVector::zeros(p),
                e_hat: DVector::zeros(n),
                diff: DVector::zeros(n),
            },
            Wiring::Direct => Estimators::Direct {
                local: LocalEstimator::new(mean.clone()),
                remote: RemoteEstimator::new(mean),
            },
        };
        let sched = SchedulerState::new(
            lp.config.policy,
            lp.config.probability_at(0),
            lp.psi0.clone(),
            key(Purpose::Scheduler),
        )?;
        Ok(Self {
            lp,
            sched,
            process_rng: key(Purpose::Process),
            measurement_rng: key(Purpose::Measurement),
            est,
            x,
            u: DVector::zeros(m),
            e_pred: DVector::zeros(n),
            e_bar: DVector::zeros(n),
            noise_w: DVector::zeros(n),
            noise_v: DVector::zeros(p),
            z_w: DVector::zeros(params.w.ncols()),
            z_v: DVector::zeros(params.v.ncols()),
            tmp_n: DVector::zeros(n),
            tmp_m: DVector::zeros(m),
            delta: false,
            cost_sum: 0.0,
            direct_sum: 0.0,
            slots: 0,
            triggers: 0,
            successes: 0,
            collisions: 0,
            diverged: false,
            max_norm: 0.0,
            since_success: 1,
            collided: false,
            seen_success: false,
            first_attempt: None,
            moments: moments.then(|| MomentStats::new(n)),
            trace: trace.then(EpisodeTrace::default),
        })
    }

    /// Measurement, local update and the trigger decision of slot `k`.
    fn measure_and_decide(&mut self, k: usize) -> Result<bool> {
        let params = &self.lp.config.params;
        let gains = &self.lp.gains;
        fill_normal(&mut self.z_v, &mut self.measurement_rng);
        self.noise_v.gemv(1.0, &self.lp.measurement_factor, &self.z_v, 0.0);
        match &mut self.est {
            Estimators::Errors {
                eps,
                gap,
                correction,
                innovation,
                e_hat,
                ..
            } => {
                innovation.copy_from(&self.noise_v);
                innovation.gemv(1.0, &params.c, eps, 1.0);
                correction.gemv(1.0, &gains.l, innovation, 0.0);
                e_hat.copy_from(eps);
                *e_hat -= &*correction;
                self.e_pred.copy_from(gap);
                self.e_pred += &*correction;
            }
            Estimators::Direct { local, remote } => {
                let mut y = self.noise_v.clone();
                y.gemv(1.0, &params.c, &self.x, 1.0);
                local.update(params, gains, &y);
                self.e_pred.copy_from(&local.x_hat_upd);
                self.e_pred -= &remote.x_bar_pred;
            }
        }
        if self.lp.config.p_schedule.is_some() {
            self.sched.set_probability(self.lp.config.probability_at(k))?;
        }
        self.delta = self.sched.decide(&self.e_pred)?;
        Ok(self.delta)
    }

    /// Remote update, control, cost and propagation to slot `k + 1`.
    /// Returns whether the state norm crossed `threshold`.
    fn finish_slot(&mut self, k: usize, outcome: LoopOutcome, threshold: f64) -> Result<bool> {
        let params = &self.lp.config.params;
        let gains = &self.lp.gains;
        let delta = self.delta;
        let sigma = outcome.sigma;
        debug_assert_eq!(delta, outcome.delta);

        match &mut self.est {
            Estimators::Errors { e_hat, diff, .. } => {
                if sigma {
                    diff.fill(0.0);
                } else {
                    diff.copy_from(&self.e_pred);
                }
                self.e_bar.copy_from(e_hat);
                self.e_bar += &*diff;
                self.tmp_n.copy_from(&self.x);
                self.tmp_n -= &self.e_bar;
                self.u.gemv(1.0, &gains.k, &self.tmp_n, 0.0);
            }
            Estimators::Direct { local, remote } => {
                remote.receive(sigma, sigma.then_some(&local.x_hat_upd))?;
                self.e_bar.copy_from(&self.x);
                self.e_bar -= &remote.x_bar_upd;
                self.u.gemv(1.0, &gains.k, &remote.x_bar_upd, 0.0);
            }
        }

        self.tmp_n.gemv(1.0, &gains.y, &self.e_bar, 0.0);
        self.cost_sum += self.e_bar.dot(&self.tmp_n);
        self.tmp_n.gemv(1.0, &params.q, &self.x, 0.0);
        self.direct_sum += self.x.dot(&self.tmp_n);
        self.tmp_m.gemv(1.0, &params.r, &self.u, 0.0);
        self.direct_sum += self.u.dot(&self.tmp_m);

        self.slots += 1;
        self.triggers += u64::from(delta);
        self.successes += u64::from(sigma);
        self.collisions += u64::from(outcome.collision());
        self.record_moments(delta, sigma);
        if let Some(t) = &mut self.trace {
            t.delta.push(delta);
            t.rho.push(outcome.rho);
            t.sigma.push(sigma);
            t.x.push(self.x.clone());
            t.u.push(self.u.clone());
            t.e_pred.push(self.e_pred.clone());
            t.e_bar.push(self.e_bar.clone());
        }

        let norm = self.x.norm();
        self.max_norm = self.max_norm.max(norm);
        if !(norm <= threshold) {
            self.diverged = true;
            return Ok(true);
        }

        fill_normal(&mut self.z_w, &mut self.process_rng);
        self.noise_w.gemv(1.0, &self.lp.process_factor, &self.z_w, 0.0);
        self.tmp_n.copy_from(&self.noise_w);
        self.tmp_n.gemv(1.0, &params.a, &self.x, 1.0);
        self.tmp_n.gemv(1.0, &params.b, &self.u, 1.0);
        std::mem::swap(&mut self.x, &mut self.tmp_n);
        match &mut self.est {
            Estimators::Errors { eps, gap, e_hat, diff, .. } => {
                eps.copy_from(&self.noise_w);
                eps.gemv(1.0, &params.a, e_hat, 1.0);
                gap.gemv(1.0, &params.a, diff, 0.0);
            }
            Estimators::Direct { local, remote } => {
                local.predict(params, &self.u);
                remote.predict(params, &self.u);
            }
        }
        self.sched.propagate_psi(params, gains, delta, sigma, k)?;
        Ok(false)
    }

    fn record_moments(&mut self, delta: bool, sigma: bool) {
        if let Some(stats) = self.moments.as_mut().filter(|_| self.seen_success) {
            let d = self.since_success.min(MAX_BINNED_GAP);
            let bin = &mut stats.bins[d][usize::from(self.collided)];
            bin.slots += 1;
            bin.triggers += u64::from(delta);
            match self.since_success {
                1 => {
                    stats.post_success.add(&self.e_pred);
                    self.first_attempt = Some(delta);
                }
                2 => match self.first_attempt.take() {
                    Some(false) => stats.after_no_trigger.add(&self.e_pred),
                    Some(true) => stats.after_collision.add(&self.e_pred),
                    None => {}
                },
                _ => {}
            }
        }
        if sigma {
            self.seen_success = true;
            self.since_success = 1;
            self.collided = false;
        } else {
            self.since_success += 1;
            self.collided |= delta;
        }
    }

    fn into_record(self) -> LoopRecord {
        let t = self.slots.max(1) as f64;
        let (cost, direct_cost) = if self.diverged {
            (f64::INFINITY, f64::INFINITY)
        } else {
            (
                self.lp.gains.cost_floor(&self.lp.config.params) + self.cost_sum / t,
                self.direct_sum / t,
            )
        };
        LoopRecord {
            cost,
            direct_cost,
            slots: self.slots,
            triggers: self.triggers,
            successes: self.successes,
            collisions: self.collisions,
            diverged: self.diverged,
            max_state_norm: self.max_norm,
            moments: self.moments,
            trace: self.trace,
        }
    }
}

/// Runs one episode of `cfg` with the default wiring.
pub fn run_episode(cfg: &ExperimentConfig, run: usize) -> Result<EpisodeRecord> {
    Experiment::prepare(cfg)?.run_episode(run)
}

