//! Plant, sensor and controller constants.
//!
//! Each plant evolves as `x' = A x + B u + w`, `y = C x + v` with Gaussian
//! noises of covariance `Qw` and `Qv`. The controller uses a deadbeat gain
//! `K̃` (so `Φ = A + B K̃` is nilpotent of order `v`) and the sensor runs a
//! Kalman filter at its steady state `(K̂, P̂ˢ)`.

use crate::linalg::{is_symmetric, min_eigenvalue, symmetrize, Mat};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("matrix A is singular (|det A| = {0:e})")]
    NonSingularityViolated(f64),
    #[error("pair (A, B) is not controllable within {0} steps")]
    NotControllable(usize),
    #[error("deadbeat synthesis failed: ‖Φ^v‖_F = {0:e}")]
    SynthesisFailed(f64),
    #[error("deadbeat synthesis supports single-input plants only (B has {0} columns)")]
    MultiInputUnsupported(usize),
    #[error("Kalman iteration did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{0} must be symmetric positive {1}")]
    NotPositive(&'static str, &'static str),
}

/// Nilpotency tolerance for the deadbeat closed loop.
pub const DEADBEAT_TOL: f64 = 1e-8;
const KALMAN_TOL: f64 = 1e-12;
const KALMAN_MAX_ITER: usize = 100_000;
const RANK_REL_TOL: f64 = 1e-9;

/// One plant with its controller and filter constants.
#[derive(Debug, Clone)]
pub struct PlantModel {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub qw: Mat,
    pub qv: Mat,
    /// Controllability index.
    pub v: usize,
    pub ktilde: Mat,
    pub phi: Mat,
    pub khat: Mat,
    pub ps_hat: Mat,
    /// `(I − K̂C)A`.
    pub z: Mat,
}

impl PlantModel {
    /// Builds the plant, synthesizing the deadbeat gain and the steady-state
    /// filter.
    pub fn new(a: Mat, b: Mat, c: Mat, qw: Mat, qv: Mat) -> Result<Self, ModelError> {
        check_dims(&a, &b, &c, &qw, &qv)?;
        check_psd("Qw", &qw)?;
        check_pd("Qv", &qv)?;
        let n = a.nrows();
        let v = controllability_index(&a, &b, n)?;
        let ktilde = deadbeat_gain(&a, &b, v)?;
        let kf = steady_state_kalman(&a, &c, &qw, &qv)?;
        let phi = &a + &b * &ktilde;
        Ok(PlantModel {
            a,
            b,
            c,
            qw,
            qv,
            v,
            ktilde,
            phi,
            khat: kf.khat,
            ps_hat: kf.ps_hat,
            z: kf.z,
        })
    }

    /// Builds the plant with a caller-supplied filter gain and posterior
    /// covariance. Useful when `Qv` is singular, e.g. for noise-free runs.
    pub fn with_filter(
        a: Mat,
        b: Mat,
        c: Mat,
        qw: Mat,
        qv: Mat,
        khat: Mat,
        ps_hat: Mat,
    ) -> Result<Self, ModelError> {
        check_dims(&a, &b, &c, &qw, &qv)?;
        check_psd("Qw", &qw)?;
        check_psd("Qv", &qv)?;
        check_psd("Ps_hat", &ps_hat)?;
        let n = a.nrows();
        if khat.shape() != (n, c.nrows()) {
            return Err(ModelError::DimensionMismatch(format!(
                "Khat is {}x{}, expected {}x{}",
                khat.nrows(),
                khat.ncols(),
                n,
                c.nrows()
            )));
        }
        let v = controllability_index(&a, &b, n)?;
        let ktilde = deadbeat_gain(&a, &b, v)?;
        let phi = &a + &b * &ktilde;
        let z = (Mat::identity(n, n) - &khat * &c) * &a;
        Ok(PlantModel {
            a,
            b,
            c,
            qw,
            qv,
            v,
            ktilde,
            phi,
            khat,
            ps_hat,
            z,
        })
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Measurement dimension.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// `I − K̂C`.
    pub fn i_minus_kc(&self) -> Mat {
        Mat::identity(self.n(), self.n()) - &self.khat * &self.c
    }
}

fn check_dims(a: &Mat, b: &Mat, c: &Mat, qw: &Mat, qv: &Mat) -> Result<(), ModelError> {
    let n = a.nrows();
    let bad = |what: &str| Err(ModelError::DimensionMismatch(what.to_string()));
    if !a.is_square() || n == 0 {
        return bad("A must be square and non-empty");
    }
    if b.nrows() != n || b.ncols() == 0 {
        return bad("B row count must equal the dimension of A");
    }
    if c.ncols() != n || c.nrows() == 0 {
        return bad("C column count must equal the dimension of A");
    }
    if qw.shape() != (n, n) {
        return bad("Qw must be n x n");
    }
    if qv.shape() != (c.nrows(), c.nrows()) {
        return bad("Qv must be p x p");
    }
    Ok(())
}

fn check_psd(name: &'static str, m: &Mat) -> Result<(), ModelError> {
    let tol = 1e-12 * m.amax().max(1.0);
    if !is_symmetric(m, 1e-12) || min_eigenvalue(m) < -tol {
        return Err(ModelError::NotPositive(name, "semidefinite"));
    }
    Ok(())
}

pub(crate) fn check_pd(name: &'static str, m: &Mat) -> Result<(), ModelError> {
    if !is_symmetric(m, 1e-12) || min_eigenvalue(m) <= 0.0 {
        return Err(ModelError::NotPositive(name, "definite"));
    }
    Ok(())
}

/// Positive-definite cost weights for one plant.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub sx: Mat,
    pub su: Mat,
}

impl CostWeights {
    pub fn new(sx: Mat, su: Mat) -> Result<Self, ModelError> {
        check_pd("Sx", &sx)?;
        check_pd("Su", &su)?;
        Ok(CostWeights { sx, su })
    }

    /// Unvalidated weights; zero weights are handy in tests.
    pub fn new_unchecked(sx: Mat, su: Mat) -> Self {
        CostWeights { sx, su }
    }

    pub fn identity(n: usize, m: usize) -> Self {
        CostWeights {
            sx: Mat::identity(n, n),
            su: Mat::identity(m, m),
        }
    }
}

fn numerical_rank(m: &Mat) -> usize {
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_REL_TOL * smax).count()
}

/// Smallest `v ≤ v_max` with `rank[A⁻¹B, …, A⁻ᵛB] = n`.
pub fn controllability_index(a: &Mat, b: &Mat, v_max: usize) -> Result<usize, ModelError> {
    if !a.is_square() || b.nrows() != a.nrows() {
        return Err(ModelError::DimensionMismatch(
            "A must be square with as many rows as B".into(),
        ));
    }
    let n = a.nrows();
    let det = a.determinant();
    if det.abs() <= 1e-12 {
        return Err(ModelError::NonSingularityViolated(det));
    }
    let a_inv = a
        .clone()
        .try_inverse()
        .ok_or(ModelError::NonSingularityViolated(det))?;
    let m = b.ncols();
    let mut blocks = Mat::zeros(n, 0);
    let mut cur = b.clone();
    for v in 1..=v_max {
        cur = &a_inv * cur;
        let start = blocks.ncols();
        blocks = blocks.insert_columns(start, m, 0.0);
        blocks.view_mut((0, start), (n, m)).copy_from(&cur);
        if numerical_rank(&blocks) == n {
            return Ok(v);
        }
    }
    Err(ModelError::NotControllable(v_max))
}

/// Gain `K̃` with `(A + B K̃)^v = 0`.
///
/// A zero gain is returned when `A` is already nilpotent of order `v`.
/// Otherwise single-input plants are handled by Ackermann's formula with every
/// closed-loop pole at the origin: `K̃ = −e_nᵀ 𝒞⁻¹ Aⁿ`.
pub fn deadbeat_gain(a: &Mat, b: &Mat, v: usize) -> Result<Mat, ModelError> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n {
        return Err(ModelError::DimensionMismatch(
            "A must be square with as many rows as B".into(),
        ));
    }
    let m = b.ncols();
    if a.pow(v as u32).norm() <= DEADBEAT_TOL {
        return Ok(Mat::zeros(m, n));
    }
    if m != 1 {
        return Err(ModelError::MultiInputUnsupported(m));
    }
    if v < n {
        return Err(ModelError::NotControllable(v));
    }
    let mut ctrb = Mat::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        ctrb.set_column(k, &col.column(0));
        col = a * col;
    }
    if numerical_rank(&ctrb) < n {
        return Err(ModelError::NotControllable(v));
    }
    let inv = ctrb
        .try_inverse()
        .ok_or(ModelError::NotControllable(v))?;
    let k = -(inv.row(n - 1) * a.pow(n as u32));
    let gain = Mat::from_row_slice(1, n, k.as_slice());
    let residual = (a + b * &gain).pow(v as u32).norm();
    if residual > DEADBEAT_TOL {
        return Err(ModelError::SynthesisFailed(residual));
    }
    Ok(gain)
}

/// Converged Kalman filter quantities.
#[derive(Debug, Clone)]
pub struct KalmanSteadyState {
    pub khat: Mat,
    pub ps_hat: Mat,
    pub z: Mat,
    pub iterations: usize,
}

/// One step of the filter covariance recursion. Returns `(K, P⁺)` given the
/// previous posterior covariance.
pub fn riccati_step(a: &Mat, c: &Mat, qw: &Mat, qv: &Mat, p: &Mat) -> Option<(Mat, Mat)> {
    let n = a.nrows();
    let prior = a * p * a.transpose() + qw;
    let s = c * &prior * c.transpose() + qv;
    let k = &prior * c.transpose() * s.try_inverse()?;
    let post = symmetrize(&((Mat::identity(n, n) - &k * c) * prior));
    Some((k, post))
}

/// Fixed-point iteration of the filter recursion from `P₀ = Qw`.
pub fn steady_state_kalman(
    a: &Mat,
    c: &Mat,
    qw: &Mat,
    qv: &Mat,
) -> Result<KalmanSteadyState, ModelError> {
    let n = a.nrows();
    let mut p = qw.clone();
    for it in 1..=KALMAN_MAX_ITER {
        let (k, next) = riccati_step(a, c, qw, qv, &p).ok_or_else(|| {
            ModelError::NotPositive("innovation covariance", "definite")
        })?;
        let change = (&next - &p).norm();
        p = next;
        if change <= KALMAN_TOL {
            let (khat, _) = riccati_step(a, c, qw, qv, &p).unwrap_or((k, p.clone()));
            let z = (Mat::identity(n, n) - &khat * c) * a;
            return Ok(KalmanSteadyState {
                khat,
                ps_hat: p,
                z,
                iterations: it,
            });
        }
    }
    Err(ModelError::NoConvergence(KALMAN_MAX_ITER))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &Mat) -> f64 {
    assert!(a.is_square(), "spectral radius of a non-square matrix");
    match a.nrows() {
        0 => 0.0,
        1 => a[(0, 0)].abs(),
        2 => {
            let half_tr = 0.5 * (a[(0, 0)] + a[(1, 1)]);
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            let disc = half_tr * half_tr - det;
            if disc >= 0.0 {
                let r = disc.sqrt();
                (half_tr + r).abs().max((half_tr - r).abs())
            } else {
                det.abs().sqrt()
            }
        }
        _ => a
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
    }
}
