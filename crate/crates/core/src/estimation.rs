//! Local Kalman filter (scheduler side), remote estimator (controller side)
//! and the error signals between them.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::plant::PlantParams;
use crate::riccati::GainSet;

/// Steady-state Kalman filter collocated with the scheduler.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEstimator {
    /// `x̂_{k|k−1}`
    pub x_hat_pred: DVector<f64>,
    /// `x̂_{k|k}`
    pub x_hat_upd: DVector<f64>,
}

impl LocalEstimator {
    /// Starts from the prior mean `x̂_{0|−1}`.
    pub fn new(prior_mean: DVector<f64>) -> Self {
        Self {
            x_hat_upd: prior_mean.clone(),
            x_hat_pred: prior_mean,
        }
    }

    /// Measurement update `x̂_{k|k} = x̂_{k|k−1} + L(y − C x̂_{k|k−1})`.
    pub fn update(&mut self, params: &PlantParams, gains: &GainSet, y: &DVector<f64>) {
        let mut innovation = y.clone();
        innovation.gemv(-1.0, &params.c, &self.x_hat_pred, 1.0);
        self.x_hat_upd.copy_from(&self.x_hat_pred);
        self.x_hat_upd.gemv(1.0, &gains.l, &innovation, 1.0);
    }

    /// Time update `x̂_{k+1|k} = A x̂_{k|k} + B u`.
    pub fn predict(&mut self, params: &PlantParams, u: &DVector<f64>) {
        self.x_hat_pred.gemv(1.0, &params.a, &self.x_hat_upd, 0.0);
        self.x_hat_pred.gemv(1.0, &params.b, u, 1.0);
    }
}

/// Predict with the previous input, then update with `y`.
pub fn kalman_step(
    est: &LocalEstimator,
    params: &PlantParams,
    gains: &GainSet,
    y: &DVector<f64>,
    u_prev: &DVector<f64>,
) -> LocalEstimator {
    let mut next = est.clone();
    next.predict(params, u_prev);
    next.update(params, gains, y);
    next
}

/// Controller-side estimate driven only by successful transmissions.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteEstimator {
    /// `x̄_{k|k−1}`
    pub x_bar_pred: DVector<f64>,
    /// `x̄_{k|k}`
    pub x_bar_upd: DVector<f64>,
}

impl RemoteEstimator {
    pub fn new(prior_mean: DVector<f64>) -> Self {
        Self {
            x_bar_upd: prior_mean.clone(),
            x_bar_pred: prior_mean,
        }
    }

    /// Slot update: adopt the received `x̂_{k|k}` on success, otherwise keep
    /// the prediction.
    pub fn receive(&mut self, sigma: bool, payload: Option<&DVector<f64>>) -> Result<()> {
        match (sigma, payload) {
            (true, Some(x_hat)) => self.x_bar_upd.copy_from(x_hat),
            (false, None) => self.x_bar_upd.copy_from(&self.x_bar_pred),
            (true, None) => return Err(Error::ProtocolViolation("success without payload")),
            (false, Some(_)) => return Err(Error::ProtocolViolation("payload without success")),
        }
        Ok(())
    }

    /// `x̄_{k+1|k} = A x̄_{k|k} + B u`.
    pub fn predict(&mut self, params: &PlantParams, u: &DVector<f64>) {
        self.x_bar_pred.gemv(1.0, &params.a, &self.x_bar_upd, 0.0);
        self.x_bar_pred.gemv(1.0, &params.b, u, 1.0);
    }
}

pub fn remote_step(
    est: &RemoteEstimator,
    params: &PlantParams,
    sigma: bool,
    payload: Option<&DVector<f64>>,
    u: &DVector<f64>,
) -> Result<RemoteEstimator> {
    let mut next = est.clone();
    next.receive(sigma, payload)?;
    next.predict(params, u);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTriple {
    /// `x̂_{k|k} − x̄_{k|k−1}`, the signal the event trigger reads.
    pub e_pred: DVector<f64>,
    /// `x − x̂_{k|k}`
    pub e_hat: DVector<f64>,
    /// `x − x̄_{k|k}`
    pub e_bar: DVector<f64>,
}

/// Error signals at slot `k`; call after [`RemoteEstimator::receive`].
pub fn compute_errors(x: &DVector<f64>, local: &LocalEstimator, remote: &RemoteEstimator) -> ErrorTriple {
    ErrorTriple {
        e_pred: &local.x_hat_upd - &remote.x_bar_pred,
        e_hat: x - &local.x_hat_upd,
        e_bar: x - &remote.x_bar_upd,
    }
}
