//! Analytic results for a loop under purely stochastic triggering, and the
//! logarithmic-utility rule for choosing triggering probabilities.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{quadratic_form, spectral_radius, trace_of_product};
use crate::network::full_network_success_probability;
use crate::plant::PlantParams;
use crate::riccati::GainSet;

pub const SERIES_TOLERANCE: f64 = 1e-12;
pub const SERIES_MAX_TERMS: usize = 1_000_000;

fn check_probability(what: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidProbability {
            what,
            value,
            range: "[0, 1]",
        })
    }
}

/// Mean-square stability of the loop when each slot succeeds independently
/// with probability `q·p`: `√(1 − qp)·ρ(A) < 1`.
pub fn mss_check(params: &PlantParams, p: f64, q: f64) -> Result<bool> {
    check_probability("triggering probability", p)?;
    check_probability("channel availability q", q)?;
    Ok(mss_radius(params, p * q) < 1.0)
}

/// `√(1 − η)·ρ(A)`.
pub fn mss_radius(params: &PlantParams, eta: f64) -> f64 {
    (1.0 - eta).max(0.0).sqrt() * spectral_radius(&params.a)
}

/// Average cost of the loop under PST with success probability `η = qp`,
///
/// `tr(PW) + Σ_j [(1−η)^{j+1} tr(AʲWAʲᵀY) + η(1−η)ʲ tr(AʲΘAʲᵀY)]`.
///
/// The terms shrink at least as fast as `r = (1−η)ρ(A)²` asymptotically, so
/// summation stops once a term falls below `tol·(1−r)` times the partial
/// sum, which keeps the geometric tail below `tol` times the result.
pub fn closed_form_pst_cost(
    params: &PlantParams,
    gains: &GainSet,
    p: f64,
    q: f64,
    tol: f64,
) -> Result<f64> {
    check_probability("triggering probability", p)?;
    check_probability("channel availability q", q)?;
    let eta = p * q;
    let radius = mss_radius(params, eta);
    if radius >= 1.0 {
        return Err(Error::CostDiverges(radius));
    }
    let ratio = radius * radius;
    let stop = tol * (1.0 - ratio);
    let a = &params.a;
    let at = a.transpose();
    let mut pw = params.w.clone();
    let mut ptheta = gains.theta.clone();
    let mut sum = gains.cost_floor(params);
    let mut decay = 1.0;
    for _ in 0..SERIES_MAX_TERMS {
        let term = (1.0 - eta) * decay * trace_of_product(&pw, &gains.y)
            + eta * decay * trace_of_product(&ptheta, &gains.y);
        sum += term;
        if term <= stop * sum {
            return Ok(sum);
        }
        decay *= 1.0 - eta;
        pw = a * &pw * &at;
        ptheta = a * &ptheta * &at;
    }
    Err(Error::NoConvergence {
        equation: "PST cost series",
        iterations: SERIES_MAX_TERMS,
        last_change: f64::NAN,
    })
}

/// `tr(PW) + (1/T) Σ_k ēᵀYē` over the recorded remote estimation errors.
pub fn empirical_cost_decomposition(
    params: &PlantParams,
    gains: &GainSet,
    e_bar: &[DVector<f64>],
) -> f64 {
    let floor = gains.cost_floor(params);
    if e_bar.is_empty() {
        return floor;
    }
    let total: f64 = e_bar.iter().map(|e| quadratic_form(&gains.y, e)).sum();
    floor + total / e_bar.len() as f64
}

/// Logarithmic utilities `cᵢ log ηᵢ`, with an optional blend weight per loop
/// for deriving the priorities from the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityConfig {
    pub c: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl UtilityConfig {
    pub fn equal(m: usize) -> Self {
        Self {
            c: vec![1.0; m],
            alpha: vec![0.5; m],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c.is_empty() {
            return Err(Error::InvalidConfig("at least one priority is required".into()));
        }
        if let Some(bad) = self.c.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidConfig(format!("priorities must be positive, got {bad}")));
        }
        if !self.alpha.is_empty() && self.alpha.len() != self.c.len() {
            return Err(Error::InvalidConfig(format!(
                "{} blend weights for {} priorities",
                self.alpha.len(),
                self.c.len()
            )));
        }
        for &a in &self.alpha {
            check_probability("priority blend weight", a)?;
        }
        Ok(())
    }
}

/// Maximizer of `Σ cⱼ log ηⱼ` over a full network: `pᵢ* = cᵢ / Σ cⱼ`.
pub fn utility_optimal_probabilities(cfg: &UtilityConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let total: f64 = cfg.c.iter().sum();
    Ok(cfg.c.iter().map(|c| c / total).collect())
}

/// `Σ cⱼ log ηⱼ(p)` with `ηⱼ = pⱼ ∏_{i≠j}(1 − pᵢ)`.
pub fn aggregate_utility(c: &[f64], p: &[f64]) -> f64 {
    c.iter()
        .enumerate()
        .map(|(j, cj)| cj * full_network_success_probability(p, j).ln())
        .sum()
}

/// `cᵢ = αᵢ tr(AWAᵀY) + (1 − αᵢ) tr(AΘAᵀY)` for each loop.
pub fn priority_coefficients(loops: &[(&PlantParams, &GainSet)], alpha: &[f64]) -> Result<Vec<f64>> {
    if loops.len() != alpha.len() {
        return Err(Error::InvalidConfig(format!(
            "{} blend weights for {} loops",
            alpha.len(),
            loops.len()
        )));
    }
    loops
        .iter()
        .zip(alpha)
        .map(|(&(params, gains), &a)| {
            check_probability("priority blend weight", a)?;
            let at = params.a.transpose();
            let from_noise = trace_of_product(&(&params.a * &params.w * &at), &gains.y);
            let from_filter = trace_of_product(&(&params.a * &gains.theta * &at), &gains.y);
            Ok(a * from_noise + (1.0 - a) * from_filter)
        })
        .collect()
}

/// One evaluated point of the social cost `Σ Jᵢ` over a full network where
/// every loop uses PST.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialCostPoint {
    pub p: Vec<f64>,
    pub per_loop: Vec<f64>,
    pub total: f64,
}

/// Evaluates the social cost on the cross product of `grid` over all loops.
/// Points where some loop is not mean-square stable get an infinite cost.
pub fn social_cost_grid(loops: &[(&PlantParams, &GainSet)], grid: &[f64]) -> Result<Vec<SocialCostPoint>> {
    let m = loops.len();
    if m == 0 || grid.is_empty() {
        return Ok(Vec::new());
    }
    for &g in grid {
        check_probability("grid probability", g)?;
    }
    let points = grid.len().checked_pow(m as u32).filter(|&n| n <= 1_000_000).ok_or_else(|| {
        Error::InvalidConfig(format!("social cost grid with {m} loops is too large"))
    })?;
    let mut out = Vec::with_capacity(points);
    let mut index = vec![0usize; m];
    for _ in 0..points {
        let p: Vec<f64> = index.iter().map(|&i| grid[i]).collect();
        let per_loop: Vec<f64> = loops
            .iter()
            .enumerate()
            .map(|(i, &(params, gains))| {
                let q: f64 = p
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, pj)| 1.0 - pj)
                    .product();
                closed_form_pst_cost(params, gains, p[i], q, SERIES_TOLERANCE)
                    .unwrap_or(f64::INFINITY)
            })
            .collect();
        let total = per_loop.iter().sum();
        out.push(SocialCostPoint { p, per_loop, total });
        for digit in index.iter_mut() {
            *digit += 1;
            if *digit < grid.len() {
                break;
            }
            *digit = 0;
        }
    }
    Ok(out)
}

/// Second moment of the remote error under PST at stationarity, used by the
/// closed form; exposed for diagnostics.
pub fn pst_stationary_error_covariance(
    params: &PlantParams,
    gains: &GainSet,
    eta: f64,
) -> Result<DMatrix<f64>> {
    let radius = mss_radius(params, eta);
    if radius >= 1.0 {
        return Err(Error::CostDiverges(radius));
    }
    let a = &params.a;
    let at = a.transpose();
    let mut pw = params.w.clone();
    let mut ptheta = gains.theta.clone();
    let mut acc = DMatrix::zeros(a.nrows(), a.ncols());
    let mut decay = 1.0;
    for _ in 0..SERIES_MAX_TERMS {
        let term = (&pw * (1.0 - eta) + &ptheta * eta) * decay;
        let size = term.norm();
        acc += term;
        if size <= SERIES_TOLERANCE * (1.0 - radius * radius) * acc.norm() {
            return Ok(acc);
        }
        decay *= 1.0 - eta;
        pw = a * &pw * &at;
        ptheta = a * &ptheta * &at;
    }
    Err(Error::NoConvergence {
        equation: "PST error covariance series",
        iterations: SERIES_MAX_TERMS,
        last_change: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> (PlantParams, GainSet) {
        let params = PlantParams::scalar(0.9, 1.0, 1.5, 1.0, 1.5, 1.0, 0.1);
        let gains = GainSet::solve(&params).unwrap();
        (params, gains)
    }

    #[test]
    fn mss_examples() {
        let (params, _) = reference();
        for i in 0..=10 {
            assert!(mss_check(&params, i as f64 / 10.0, 1.0).unwrap());
        }
        let unstable = PlantParams::scalar(1.2, 1.0, 1.5, 1.0, 1.5, 1.0, 0.1);
        assert!(!mss_check(&unstable, 0.2, 1.0).unwrap());
        assert!(!mss_check(&unstable, 0.4, 0.5).unwrap());
        assert!(mss_check(&unstable, 0.5, 1.0).unwrap());
        assert!(mss_check(&params, 1.2, 1.0).is_err());
    }

    #[test]
    fn always_successful_cost() {
        let (params, gains) = reference();
        let j = closed_form_pst_cost(&params, &gains, 1.0, 1.0, SERIES_TOLERANCE).unwrap();
        let expected = gains.cost_floor(&params) + trace_of_product(&gains.theta, &gains.y);
        assert!((j - expected).abs() < 1e-14 * expected);
    }

    #[test]
    fn never_successful_cost_matches_lyapunov() {
        let (params, gains) = reference();
        let j = closed_form_pst_cost(&params, &gains, 0.0, 1.0, SERIES_TOLERANCE).unwrap();
        // X = A X Aᵀ + W in the scalar case.
        let a = params.a[(0, 0)];
        let x = params.w[(0, 0)] / (1.0 - a * a);
        let expected = gains.cost_floor(&params) + x * gains.y[(0, 0)];
        assert!((j - expected).abs() < 1e-10 * expected, "{j} vs {expected}");
    }

    #[test]
    fn divergent_cost_is_an_error() {
        let params = PlantParams::scalar(1.2, 1.0, 1.5, 1.0, 1.5, 1.0, 0.1);
        let gains = GainSet::solve(&params).unwrap();
        assert!(matches!(
            closed_form_pst_cost(&params, &gains, 0.2, 1.0, SERIES_TOLERANCE),
            Err(Error::CostDiverges(_))
        ));
    }

    #[test]
    fn cost_is_monotone_in_success_probability() {
        let (params, gains) = reference();
        let costs: Vec<f64> = (1..=10)
            .map(|i| closed_form_pst_cost(&params, &gains, i as f64 / 10.0, 1.0, SERIES_TOLERANCE).unwrap())
            .collect();
        assert!(costs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn empirical_decomposition_floor() {
        let (params, gains) = reference();
        let zeros = vec![DVector::zeros(1); 10];
        assert_eq!(empirical_cost_decomposition(&params, &gains, &zeros), gains.cost_floor(&params));
        let ones = vec![DVector::from_element(1, 1.0); 4];
        let j = empirical_cost_decomposition(&params, &gains, &ones);
        assert!((j - gains.cost_floor(&params) - gains.y[(0, 0)]).abs() < 1e-14);
    }

    #[test]
    fn utility_examples() {
        let p = utility_optimal_probabilities(&UtilityConfig::equal(4)).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let cfg = UtilityConfig {
            c: vec![1.0, 3.0],
            alpha: vec![],
        };
        assert_eq!(utility_optimal_probabilities(&cfg).unwrap(), vec![0.25, 0.75]);
        assert_eq!(utility_optimal_probabilities(&UtilityConfig::equal(1)).unwrap(), vec![1.0]);
        let bad = UtilityConfig {
            c: vec![1.0, 0.0],
            alpha: vec![],
        };
        assert!(utility_optimal_probabilities(&bad).is_err());
    }

    #[test]
    fn priority_blend_endpoints() {
        let (params, gains) = reference();
        let loops = [(&params, &gains)];
        let a2 = 0.81;
        let noise = priority_coefficients(&loops, &[1.0]).unwrap()[0];
        assert!((noise - a2 * params.w[(0, 0)] * gains.y[(0, 0)]).abs() < 1e-12);
        let filter = priority_coefficients(&loops, &[0.0]).unwrap()[0];
        assert!((filter - a2 * gains.theta[(0, 0)] * gains.y[(0, 0)]).abs() < 1e-12);
        let mid = priority_coefficients(&loops, &[0.5]).unwrap()[0];
        assert!((mid - 0.5 * (noise + filter)).abs() < 1e-12);
    }

    #[test]
    fn social_cost_grid_shape() {
        let (params, gains) = reference();
        let loops = [(&params, &gains), (&params, &gains)];
        let grid = [0.2, 0.5, 0.8];
        let pts = social_cost_grid(&loops, &grid).unwrap();
        assert_eq!(pts.len(), 9);
        let symmetric = pts.iter().find(|pt| pt.p == vec![0.5, 0.5]).unwrap();
        assert!((symmetric.per_loop[0] - symmetric.per_loop[1]).abs() < 1e-12);
        let expected = closed_form_pst_cost(&params, &gains, 0.5, 0.5, SERIES_TOLERANCE).unwrap();
        assert!((symmetric.per_loop[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn stationary_covariance_matches_cost() {
        let (params, gains) = reference();
        let cov = pst_stationary_error_covariance(&params, &gains, 0.35).unwrap();
        let j = closed_form_pst_cost(&params, &gains, 0.7, 0.5, SERIES_TOLERANCE).unwrap();
        let from_cov = gains.cost_floor(&params) + trace_of_product(&cov, &gains.y);
        assert!((j - from_cov).abs() < 1e-10 * j);
    }
}
