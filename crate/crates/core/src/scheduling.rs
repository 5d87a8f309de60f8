//! Triggering policies: purely stochastic (PST), stochastic threshold
//! (STETT) and the combined policy (CETT) that runs STETT from each success
//! until the first collision and PST afterwards.
//!
//! Every decision consumes exactly one uniform draw from the scheduler
//! stream, whatever the policy or branch. Bernoulli decisions use `U < p` and
//! the exponential threshold uses inverse-transform sampling
//! `r = −ln(1 − U)/λ`, so the STETT trigger event is `U < 1 − e^{−λs}`. Two
//! policy arms sharing a scheduler stream therefore stay aligned slot by
//! slot and their decisions are positively coupled.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::plant::PlantParams;
use crate::riccati::GainSet;
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Bernoulli(p) triggering, independent of the plant.
    Pst,
    /// Stochastic-threshold triggering; only defined until the first
    /// collision after a success.
    Stett,
    /// STETT after each success, PST after the first collision.
    Cett,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Pst => "pst",
            Policy::Stett => "stett",
            Policy::Cett => "cett",
        }
    }

    pub fn is_event_based(self) -> bool {
        !matches!(self, Policy::Pst)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pst" => Ok(Policy::Pst),
            "stett" => Ok(Policy::Stett),
            "cett" | "cetc" => Ok(Policy::Cett),
            other => Err(Error::InvalidConfig(format!(
                "unknown policy `{other}` (expected pst, stett or cett)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Event,
    Fallback,
}

/// `λ = (1 − p)^{−2/n} − 1`.
pub fn lambda_from_probability(p: f64, n: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidProbability {
            what: "threshold rate calibration",
            value: p,
            range: "[0, 1)",
        });
    }
    assert!(n >= 1, "state dimension must be positive");
    Ok((1.0 - p).powf(-2.0 / n as f64) - 1.0)
}

/// `p = 1 − (1 + λ)^{−n/2}`.
pub fn probability_from_lambda(lambda: f64, n: usize) -> f64 {
    assert!(lambda >= 0.0, "threshold rate must be nonnegative");
    assert!(n >= 1, "state dimension must be positive");
    1.0 - (1.0 + lambda).powf(-(n as f64) / 2.0)
}

/// Second moment of the predicted error after a triggered attempt collided:
/// the signed two-Gaussian mixture `(1/p)·N(0, Ψ) − ((1−p)/p)·N(0, Ψ̂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDiagnostic {
    /// `(1/p)Ψ − ((1−p)/p)Ψ̂`
    pub m: DMatrix<f64>,
    /// `AΨAᵀ + Φ`
    pub psi_full: DMatrix<f64>,
    /// `AΨAᵀ/(1+λ) + Φ`
    pub psi_hat: DMatrix<f64>,
    /// `(1/p, −(1−p)/p)`, summing to one.
    pub weights: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct SchedulerState {
    pub policy: Policy,
    pub mode: Mode,
    /// Target per-slot triggering probability.
    pub p: f64,
    /// Exponential threshold rate, recalibrated from `p` in event mode.
    pub lambda: f64,
    /// Predicted-error covariance `Ψ_{k|k−1}` given no trigger since the
    /// last success. Frozen in fallback mode.
    pub psi: DMatrix<f64>,
    psi_factor: Option<Cholesky<f64, Dyn>>,
    rng: StreamRng,
}

impl SchedulerState {
    /// Starts in event mode with `Ψ = psi0`. The dimension of `psi0` is the
    /// `n` in the λ calibration.
    pub fn new(policy: Policy, p: f64, psi0: DMatrix<f64>, rng: StreamRng) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability {
                what: "triggering probability",
                value: p,
                range: "[0, 1]",
            });
        }
        let lambda = if policy.is_event_based() {
            lambda_from_probability(p, psi0.nrows())?
        } else {
            0.0
        };
        let mut state = Self {
            policy,
            mode: Mode::Event,
            p,
            lambda,
            psi: DMatrix::zeros(psi0.nrows(), psi0.ncols()),
            psi_factor: None,
            rng,
        };
        state.set_psi(psi0);
        Ok(state)
    }

    /// Changes the target probability for the coming slots and recalibrates
    /// λ, for time-varying schedules.
    pub fn set_probability(&mut self, p: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability {
                what: "triggering probability",
                value: p,
                range: "[0, 1]",
            });
        }
        if self.policy.is_event_based() {
            self.lambda = lambda_from_probability(p, self.psi.nrows())?;
        }
        self.p = p;
        Ok(())
    }

    fn set_psi(&mut self, psi: DMatrix<f64>) {
        self.psi = symmetrize(&psi);
        self.psi_factor = if self.policy.is_event_based() {
            Cholesky::new(self.psi.clone())
        } else {
            None
        };
    }

    fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// `δ ~ Bernoulli(p)`, independent of every plant signal.
    pub fn pst_decide(&mut self) -> bool {
        let u = self.uniform();
        u < self.p
    }

    /// `δ = 1` iff `½ eᵀΨ⁻¹e > r` with `r ~ Exp(λ)`; `λ = 0` never triggers.
    pub fn stett_decide(&mut self, e_pred: &DVector<f64>) -> Result<bool> {
        let u = self.uniform();
        let factor = self.psi_factor.as_ref().ok_or(Error::SingularCovariance)?;
        if self.lambda == 0.0 {
            return Ok(false);
        }
        let whitened = factor.l().solve_lower_triangular(e_pred).ok_or(Error::SingularCovariance)?;
        let level = 0.5 * whitened.norm_squared();
        let threshold = -(1.0 - u).ln() / self.lambda;
        Ok(level > threshold)
    }

    /// STETT branch in event mode, Bernoulli branch in fallback mode.
    pub fn cett_decide(&mut self, e_pred: &DVector<f64>) -> Result<bool> {
        match self.mode {
            Mode::Event => self.stett_decide(e_pred),
            Mode::Fallback => Ok(self.pst_decide()),
        }
    }

    /// Dispatches on the configured policy.
    pub fn decide(&mut self, e_pred: &DVector<f64>) -> Result<bool> {
        match self.policy {
            Policy::Pst => Ok(self.pst_decide()),
            Policy::Stett => self.stett_decide(e_pred),
            Policy::Cett => self.cett_decide(e_pred),
        }
    }

    /// Slot-end covariance and mode update from the scheduler's own view of
    /// the slot: its attempt `delta` and the acknowledgment `sigma`. An
    /// attempt without acknowledgment is a collision.
    ///
    /// Returns the collision mixture when a collision happens in event mode.
    /// Pure STETT refuses to continue past a collision.
    pub fn propagate_psi(
        &mut self,
        params: &PlantParams,
        gains: &GainSet,
        delta: bool,
        sigma: bool,
        slot: usize,
    ) -> Result<Option<MixtureDiagnostic>> {
        debug_assert!(!sigma || delta, "success requires an attempt");
        if self.policy == Policy::Pst {
            return Ok(None);
        }
        if sigma {
            self.mode = Mode::Event;
            self.set_psi(gains.phi.clone());
            return Ok(None);
        }
        if self.mode == Mode::Fallback {
            return Ok(None);
        }
        let a = &params.a;
        let propagated = a * &self.psi * a.transpose();
        let psi_hat = &propagated / (1.0 + self.lambda) + &gains.phi;
        if !delta {
            self.set_psi(psi_hat);
            return Ok(None);
        }
        if self.policy == Policy::Stett {
            return Err(Error::StettAfterCollision { slot });
        }
        let psi_full = propagated + &gains.phi;
        let weights = (1.0 / self.p, -(1.0 - self.p) / self.p);
        let m = symmetrize(&(&psi_full * weights.0 + &psi_hat * weights.1));
        self.mode = Mode::Fallback;
        Ok(Some(MixtureDiagnostic {
            m,
            psi_full,
            psi_hat,
            weights,
        }))
    }
}
