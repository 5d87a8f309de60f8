//! Steady-state control and filter Riccati solutions and the derived
//! matrices used by the schedulers and the cost analysis.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, relative_frobenius, spectral_radius, symmetrize};
use crate::plant::PlantParams;

/// Relative Frobenius change that ends a fixed-point iteration.
pub const ITERATION_TOLERANCE: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 100_000;
/// Relative residual accepted when plugging a solution back in.
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    /// Control Riccati solution.
    pub p: DMatrix<f64>,
    /// State-feedback gain, `u = K x̄`.
    pub k: DMatrix<f64>,
    /// Steady-state Kalman gain.
    pub l: DMatrix<f64>,
    /// Predicted estimation-error covariance `Θ̄`.
    pub theta_bar: DMatrix<f64>,
    /// Updated estimation-error covariance `Θ`.
    pub theta: DMatrix<f64>,
    /// `Φ = AΘAᵀ − Θ + W`, the covariance of the local/remote error one
    /// slot after a successful transmission.
    pub phi: DMatrix<f64>,
    /// `Y = Kᵀ(BᵀPB + R)K`, the weight of the remote estimation error in
    /// the stage cost.
    pub y: DMatrix<f64>,
}

impl GainSet {
    /// Solves both Riccati equations and derives `Φ` and `Y`. Fails if the
    /// closed loop `A + BK` or the filter `A(I − LC)` is not stable.
    pub fn solve(params: &PlantParams) -> Result<Self> {
        params.check_dimensions()?;
        let (p, k) = solve_control_riccati(params)?;
        let (theta_bar, theta, l) = solve_filter_riccati(params)?;
        let (phi, y) = derive_auxiliary(params, &p, &k, &theta);

        let n = params.state_dim();
        let radius = spectral_radius(&(&params.a + &params.b * &k));
        if !(radius < 1.0) {
            return Err(Error::Unstable {
                what: "closed loop A + BK",
                radius,
            });
        }
        let radius = spectral_radius(&(&params.a * (DMatrix::identity(n, n) - &l * &params.c)));
        if !(radius < 1.0) {
            return Err(Error::Unstable {
                what: "filter A(I - LC)",
                radius,
            });
        }
        Ok(Self {
            p,
            k,
            l,
            theta_bar,
            theta,
            phi,
            y,
        })
    }

    /// `tr(PW)`, the part of the average cost no scheduler can remove.
    pub fn cost_floor(&self, params: &PlantParams) -> f64 {
        linalg::trace_of_product(&self.p, &params.w)
    }
}

fn control_update(params: &PlantParams, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (a, b) = (&params.a, &params.b);
    let at_p = a.transpose() * p;
    let gram = b.transpose() * p * b + &params.r;
    let gram_inv = linalg::inverse(&gram, "B'PB + R")?;
    let at_p_b = &at_p * b;
    let next = &at_p * a + &params.q - &at_p_b * gram_inv * at_p_b.transpose();
    Ok(symmetrize(&next))
}

/// `K = −(BᵀPB + R)⁻¹BᵀPA`.
pub fn feedback_gain(params: &PlantParams, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (a, b) = (&params.a, &params.b);
    let gram = b.transpose() * p * b + &params.r;
    let gram_inv = linalg::inverse(&gram, "B'PB + R")?;
    Ok(-(gram_inv * b.transpose() * p * a))
}

/// Control Riccati fixed point by value iteration from `P₀ = Q`.
pub fn solve_control_riccati(params: &PlantParams) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut p = symmetrize(&params.q);
    let mut change = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let next = control_update(params, &p)?;
        change = relative_frobenius(&p, &next);
        p = next;
        if change < ITERATION_TOLERANCE {
            let k = feedback_gain(params, &p)?;
            return Ok((p, k));
        }
    }
    Err(Error::NoConvergence {
        equation: "control Riccati",
        iterations: MAX_ITERATIONS,
        last_change: change,
    })
}

/// Innovation covariance `CΘ̄Cᵀ + V` and gain `Θ̄Cᵀ(CΘ̄Cᵀ + V)⁻¹`.
fn kalman_gain(params: &PlantParams, theta_bar: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let c = &params.c;
    let innovation = c * theta_bar * c.transpose() + &params.v;
    let inv = linalg::inverse(&innovation, "C Theta_bar C' + V")?;
    let l = theta_bar * c.transpose() * inv;
    Ok((innovation, l))
}

fn filter_update(params: &PlantParams, theta_bar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (innovation, l) = kalman_gain(params, theta_bar)?;
    let updated = theta_bar - &l * innovation * l.transpose();
    let next = &params.a * updated * params.a.transpose() + &params.w;
    Ok(symmetrize(&next))
}

/// Filter Riccati fixed point from `Θ̄₀ = W`; returns `(Θ̄, Θ, L)`.
pub fn solve_filter_riccati(
    params: &PlantParams,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let mut theta_bar = symmetrize(&params.w);
    let mut change = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let next = filter_update(params, &theta_bar)?;
        change = relative_frobenius(&theta_bar, &next);
        theta_bar = next;
        if change < ITERATION_TOLERANCE {
            let (innovation, l) = kalman_gain(params, &theta_bar)?;
            let theta = symmetrize(&(&theta_bar - &l * innovation * l.transpose()));
            return Ok((theta_bar, theta, l));
        }
    }
    Err(Error::NoConvergence {
        equation: "filter Riccati",
        iterations: MAX_ITERATIONS,
        last_change: change,
    })
}

/// `Φ = AΘAᵀ − Θ + W` and `Y = Kᵀ(BᵀPB + R)K`, both symmetrized.
pub fn derive_auxiliary(
    params: &PlantParams,
    p: &DMatrix<f64>,
    k: &DMatrix<f64>,
    theta: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = &params.a;
    let phi = a * theta * a.transpose() - theta + &params.w;
    let gram = params.b.transpose() * p * &params.b + &params.r;
    let y = k.transpose() * gram * k;
    (symmetrize(&phi), symmetrize(&y))
}

/// Relative residual of the control Riccati equation at `p`.
pub fn control_residual(params: &PlantParams, p: &DMatrix<f64>) -> Result<f64> {
    Ok(relative_frobenius(&control_update(params, p)?, p))
}

/// Relative residual of the filter Riccati equation at `theta_bar`.
pub fn filter_residual(params: &PlantParams, theta_bar: &DMatrix<f64>) -> Result<f64> {
    Ok(relative_frobenius(&filter_update(params, theta_bar)?, theta_bar))
}
