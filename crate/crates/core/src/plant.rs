//! Stochastic LTI plant `x' = A x + B u + w`, `y = C x + v`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::riccati::GainSet;

/// Singular-value ratio below which a controllability or observability
/// matrix is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// One control loop: dynamics, noise covariances and quadratic cost weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantParams {
    /// State transition (n×n).
    pub a: DMatrix<f64>,
    /// Input matrix (n×m).
    pub b: DMatrix<f64>,
    /// Output matrix (o×n).
    pub c: DMatrix<f64>,
    /// Process-noise covariance (n×n).
    pub w: DMatrix<f64>,
    /// Measurement-noise covariance (o×o).
    pub v: DMatrix<f64>,
    /// State cost weight (n×n).
    pub q: DMatrix<f64>,
    /// Input cost weight (m×m).
    pub r: DMatrix<f64>,
}

impl PlantParams {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        w: DMatrix<f64>,
        v: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let params = Self { a, b, c, w, v, q, r };
        params.check_dimensions()?;
        Ok(params)
    }

    /// Single-state, single-input, single-output loop.
    pub fn scalar(a: f64, b: f64, c: f64, w: f64, v: f64, q: f64, r: f64) -> Self {
        let s = |x: f64| DMatrix::from_element(1, 1, x);
        Self {
            a: s(a),
            b: s(b),
            c: s(c),
            w: s(w),
            v: s(v),
            q: s(q),
            r: s(r),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn check_dimensions(&self) -> Result<()> {
        let n = self.a.nrows();
        let mismatch = |left, right, detail: String| Error::DimensionMismatch {
            left,
            right,
            detail,
        };
        if n == 0 || self.a.ncols() != n {
            return Err(mismatch(
                "A",
                "A",
                format!("A must be square and non-empty, got {}x{}", self.a.nrows(), self.a.ncols()),
            ));
        }
        if self.b.nrows() != n || self.b.ncols() == 0 {
            return Err(mismatch(
                "A",
                "B",
                format!("B must have {n} rows and at least one column, got {}x{}", self.b.nrows(), self.b.ncols()),
            ));
        }
        if self.c.ncols() != n || self.c.nrows() == 0 {
            return Err(mismatch(
                "A",
                "C",
                format!("C must have {n} columns and at least one row, got {}x{}", self.c.nrows(), self.c.ncols()),
            ));
        }
        let square = |m: &DMatrix<f64>, k: usize| m.nrows() == k && m.ncols() == k;
        if !square(&self.w, n) {
            return Err(mismatch("A", "W", format!("W must be {n}x{n}, got {}x{}", self.w.nrows(), self.w.ncols())));
        }
        if !square(&self.q, n) {
            return Err(mismatch("A", "Q", format!("Q must be {n}x{n}, got {}x{}", self.q.nrows(), self.q.ncols())));
        }
        let o = self.c.nrows();
        if !square(&self.v, o) {
            return Err(mismatch("C", "V", format!("V must be {o}x{o}, got {}x{}", self.v.nrows(), self.v.ncols())));
        }
        let m = self.b.ncols();
        if !square(&self.r, m) {
            return Err(mismatch("B", "R", format!("R must be {m}x{m}, got {}x{}", self.r.nrows(), self.r.ncols())));
        }
        let all = [&self.a, &self.b, &self.c, &self.w, &self.v, &self.q, &self.r];
        if all.iter().any(|m| m.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidPlant("matrices must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NotSymmetric(&'static str),
    NotPositiveDefinite(&'static str),
    NotPositiveSemidefinite(&'static str),
    Uncontrollable { ratio: f64 },
    Unobservable { ratio: f64 },
    CostUnobservable { ratio: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotSymmetric(m) => write!(f, "{m} is not symmetric"),
            Violation::NotPositiveDefinite(m) => write!(f, "{m} is not positive definite"),
            Violation::NotPositiveSemidefinite(m) => write!(f, "{m} is not positive semi-definite"),
            Violation::Uncontrollable { ratio } => {
                write!(f, "(A,B) is not controllable (singular value ratio {ratio:e})")
            }
            Violation::Unobservable { ratio } => {
                write!(f, "(A,C) is not observable (singular value ratio {ratio:e})")
            }
            Violation::CostUnobservable { ratio } => {
                write!(f, "(A,Q^1/2) is not observable (singular value ratio {ratio:e})")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.passed() {
            Ok(())
        } else {
            let msg: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
            Err(Error::InvalidPlant(msg.join("; ")))
        }
    }
}

/// `[B, AB, …, A^{n−1}B]`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        out.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    out
}

/// `[C; CA; …; CA^{n−1}]`.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    controllability_matrix(&a.transpose(), &c.transpose()).transpose()
}

/// Checks covariance/weight definiteness and the controllability and
/// observability assumptions. Dimension mismatches are hard errors; every
/// other failed condition is collected in the report.
pub fn validate_plant(params: &PlantParams) -> Result<ValidationReport> {
    params.check_dimensions()?;
    let mut violations = Vec::new();

    let mut definite = |name: &'static str, m: &DMatrix<f64>, semi: bool| {
        if !linalg::is_symmetric(m) {
            violations.push(Violation::NotSymmetric(name));
        } else if semi && !linalg::is_positive_semidefinite(m) {
            violations.push(Violation::NotPositiveSemidefinite(name));
        } else if !semi && !linalg::is_positive_definite(m) {
            violations.push(Violation::NotPositiveDefinite(name));
        }
    };
    definite("W", &params.w, false);
    definite("V", &params.v, false);
    definite("Q", &params.q, true);
    definite("R", &params.r, false);

    let n = params.state_dim();
    let ratio = linalg::singular_value_ratio(&controllability_matrix(&params.a, &params.b), n);
    if !(ratio > RANK_TOLERANCE) {
        violations.push(Violation::Uncontrollable { ratio });
    }
    let ratio = linalg::singular_value_ratio(&observability_matrix(&params.a, &params.c), n);
    if !(ratio > RANK_TOLERANCE) {
        violations.push(Violation::Unobservable { ratio });
    }
    if linalg::is_symmetric(&params.q) {
        let q_half = linalg::sqrt_psd(&params.q);
        let ratio = linalg::singular_value_ratio(&observability_matrix(&params.a, &q_half), n);
        if !(ratio > RANK_TOLERANCE) {
            violations.push(Violation::CostUnobservable { ratio });
        }
    }
    Ok(ValidationReport { violations })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: DVector<f64>,
    pub k: u64,
}

impl PlantState {
    pub fn new(x: DVector<f64>) -> Self {
        Self { x, k: 0 }
    }

    /// In-place `x ← A x + B u + w`, `k ← k + 1`. Dimensions are only
    /// checked in debug builds; [`step_plant`] is the checked entry point.
    pub fn advance(&mut self, params: &PlantParams, u: &DVector<f64>, w: &DVector<f64>) {
        debug_assert_eq!(self.x.len(), params.state_dim());
        let mut next = w.clone();
        next.gemv(1.0, &params.a, &self.x, 1.0);
        next.gemv(1.0, &params.b, u, 1.0);
        self.x = next;
        self.k += 1;
    }
}

pub fn step_plant(
    state: &PlantState,
    params: &PlantParams,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<PlantState> {
    let n = params.state_dim();
    if state.x.len() != n {
        return Err(Error::DimensionMismatch {
            left: "x",
            right: "A",
            detail: format!("state has length {}, A is {n}x{n}", state.x.len()),
        });
    }
    if u.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            left: "u",
            right: "B",
            detail: format!("input has length {}, B has {} columns", u.len(), params.input_dim()),
        });
    }
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            left: "w",
            right: "A",
            detail: format!("process noise has length {}, expected {n}", w.len()),
        });
    }
    let mut next = state.clone();
    next.advance(params, u, w);
    Ok(next)
}

pub fn standard_normal_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Gaussian sample `F·z` with `z ~ N(0, I)`.
pub fn gaussian<R: Rng + ?Sized>(factor: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    factor * standard_normal_vector(factor.ncols(), rng)
}

/// Pre-factored noise covariances of one loop.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    process: DMatrix<f64>,
    measurement: DMatrix<f64>,
}

impl NoiseSampler {
    pub fn new(params: &PlantParams) -> Result<Self> {
        Ok(Self {
            process: linalg::covariance_factor(&params.w, "W")?,
            measurement: linalg::covariance_factor(&params.v, "V")?,
        })
    }

    pub fn process<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        gaussian(&self.process, rng)
    }

    pub fn measurement<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        gaussian(&self.measurement, rng)
    }
}

/// Draws `w ~ N(0, W)` then `v ~ N(0, V)` from one stream.
pub fn sample_noise<R: Rng + ?Sized>(
    params: &PlantParams,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let sampler = NoiseSampler::new(params)?;
    let w = sampler.process(rng);
    let v = sampler.measurement(rng);
    Ok((w, v))
}

/// `x₀ ~ N(0, Θ)` at `k = 0`.
pub fn sample_initial_state<R: Rng + ?Sized>(gains: &GainSet, rng: &mut R) -> Result<PlantState> {
    let factor = linalg::covariance_factor(&gains.theta, "Theta")?;
    Ok(PlantState::new(gaussian(&factor, rng)))
}
