//! Filtering problems: a signal `dX = A(X)dt + R1^{1/2} dW` observed through
//! `dY = B X dt + R2^{1/2} dV`.

mod drift;
mod langevin;
mod path;
mod transform;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use drift::{AffineDrift, ClosureDrift, Drift};
pub use langevin::{
    build_cubic_langevin, build_interacting_potential, build_quadratic_langevin, interacting_constants,
    CubicDrift, CubicPotentialSpec, InteractingDrift, InteractingPotentialSpec, LogCoshPair, LogCoshScalar,
    PairPotential, QuadraticPotentialSpec, ScalarPotential,
};
pub use path::{sample_signal_path, simulate_truth, TimeGrid, TruthPath};
pub use transform::{identity_sensor_transform, identity_sensor_transform_with_constants, ConjugatedDrift, SensorReduction};

use crate::error::{Error, Result};
use crate::linalg;

const SYM_TOL: f64 = 1e-10;

/// Signal drift, noise covariance and certified stability constants.
#[derive(Clone, Debug)]
pub struct SignalModel {
    drift: Arc<dyn Drift>,
    r1: DMatrix<f64>,
    r1_sqrt: DMatrix<f64>,
    lambda_da: f64,
    kappa_da: f64,
    lambda_a: f64,
}

impl SignalModel {
    /// `lambda_da` is `-sup_x lambda_max(dA(x) + dA(x)')`; it may be nonpositive for
    /// unstable probes, in which case every stability condition reports false.
    /// `r1` must be symmetric positive semidefinite (zero noise is allowed).
    pub fn new(drift: Arc<dyn Drift>, r1: DMatrix<f64>, lambda_da: f64, kappa_da: f64) -> Result<Self> {
        let n = drift.dim();
        if n == 0 {
            return Err(Error::InvalidModel("signal dimension must be positive".into()));
        }
        if r1.shape() != (n, n) {
            return Err(Error::Dimension(format!("R1 is {:?}, expected {n}x{n}", r1.shape())));
        }
        if !linalg::is_symmetric(&r1, SYM_TOL) {
            return Err(Error::InvalidModel("R1 is not symmetric".into()));
        }
        if linalg::lambda_min(&r1) < -SYM_TOL * r1.amax().max(1.0) {
            return Err(Error::InvalidModel("R1 is not positive semidefinite".into()));
        }
        if !lambda_da.is_finite() {
            return Err(Error::InvalidModel("lambda_dA must be finite".into()));
        }
        if !(kappa_da.is_finite() && kappa_da >= 0.0) {
            return Err(Error::InvalidModel("kappa_dA must be finite and nonnegative".into()));
        }
        let r1 = linalg::symmetrize(&r1);
        let r1_sqrt = linalg::psd_sqrt(&r1);
        Ok(Self { drift, r1, r1_sqrt, lambda_da, kappa_da, lambda_a: lambda_da / 2.0 })
    }

    /// Overrides the one-sided Lipschitz constant (default `lambda_dA / 2`).
    pub fn with_lambda_a(mut self, lambda_a: f64) -> Result<Self> {
        if !(lambda_a.is_finite() && lambda_a > 0.0) {
            return Err(Error::InvalidModel("lambda_A must be positive".into()));
        }
        self.lambda_a = lambda_a;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.r1.nrows()
    }
    pub fn drift(&self) -> &Arc<dyn Drift> {
        &self.drift
    }
    pub fn r1(&self) -> &DMatrix<f64> {
        &self.r1
    }
    pub fn r1_sqrt(&self) -> &DMatrix<f64> {
        &self.r1_sqrt
    }
    pub fn lambda_da(&self) -> f64 {
        self.lambda_da
    }
    pub fn kappa_da(&self) -> f64 {
        self.kappa_da
    }
    pub fn lambda_a(&self) -> f64 {
        self.lambda_a
    }
}

/// Observation matrix and noise covariance, with the derived quantities used by every filter.
#[derive(Clone, Debug)]
pub struct SensorModel {
    b: DMatrix<f64>,
    r2: DMatrix<f64>,
    r2_sqrt: DMatrix<f64>,
    /// B' R2^{-1}
    bt_r2inv: DMatrix<f64>,
    /// B' R2^{-1} B
    s: DMatrix<f64>,
}

impl SensorModel {
    pub fn new(b: DMatrix<f64>, r2: DMatrix<f64>) -> Result<Self> {
        let r2n = b.nrows();
        if r2n == 0 || b.ncols() == 0 {
            return Err(Error::InvalidModel("sensor matrix must be non-empty".into()));
        }
        if r2.shape() != (r2n, r2n) {
            return Err(Error::Dimension(format!("R2 is {:?}, expected {r2n}x{r2n}", r2.shape())));
        }
        if !linalg::is_symmetric(&r2, SYM_TOL) {
            return Err(Error::InvalidModel("R2 is not symmetric".into()));
        }
        let r2 = linalg::symmetrize(&r2);
        if linalg::lambda_min(&r2) <= 0.0 {
            return Err(Error::InvalidModel("R2 must be positive definite".into()));
        }
        let r2_inv = r2
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidModel("R2 is singular".into()))?;
        let bt_r2inv = b.transpose() * &r2_inv;
        let s = linalg::symmetrize(&(&bt_r2inv * &b));
        let r2_sqrt = linalg::psd_sqrt(&r2);
        Ok(Self { b, r2, r2_sqrt, bt_r2inv, s })
    }

    /// `B = b Id`, `R2 = sigma2^2 Id`.
    pub fn fully_observed(dim: usize, b: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidModel("sigma2 must be positive".into()));
        }
        Self::new(DMatrix::identity(dim, dim) * b, DMatrix::identity(dim, dim) * (sigma2 * sigma2))
    }

    pub fn obs_dim(&self) -> usize {
        self.b.nrows()
    }
    pub fn state_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn r2(&self) -> &DMatrix<f64> {
        &self.r2
    }
    pub fn r2_sqrt(&self) -> &DMatrix<f64> {
        &self.r2_sqrt
    }
    pub fn bt_r2inv(&self) -> &DMatrix<f64> {
        &self.bt_r2inv
    }
    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }
}

/// `S = B'R2^{-1}B`, its spectral radius and whether `S = rho Id` with `rho > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveS {
    pub s: DMatrix<f64>,
    pub rho: f64,
    pub is_condition_s: bool,
}

pub fn effective_s(sensor: &SensorModel) -> EffectiveS {
    let s = sensor.s().clone();
    let rho = linalg::lambda_max(&s).max(0.0);
    let is_condition_s = rho > 0.0 && {
        let dev = (&s - DMatrix::identity(s.nrows(), s.ncols()) * rho).amax();
        dev < 1e-10 * rho
    };
    EffectiveS { s, rho, is_condition_s }
}

/// Signal, sensor and Gaussian initial law `N(x0_mean, P0)`.
#[derive(Clone, Debug)]
pub struct FilteringProblem {
    pub signal: SignalModel,
    pub sensor: SensorModel,
    pub x0_mean: DVector<f64>,
    pub p0: DMatrix<f64>,
    p0_sqrt: DMatrix<f64>,
}

impl FilteringProblem {
    pub fn new(signal: SignalModel, sensor: SensorModel, x0_mean: DVector<f64>, p0: DMatrix<f64>) -> Result<Self> {
        let n = signal.dim();
        if sensor.state_dim() != n {
            return Err(Error::Dimension(format!("sensor acts on dimension {}, signal has {n}", sensor.state_dim())));
        }
        if x0_mean.len() != n {
            return Err(Error::Dimension(format!("x0_mean has length {}, expected {n}", x0_mean.len())));
        }
        if p0.shape() != (n, n) {
            return Err(Error::Dimension(format!("P0 is {:?}, expected {n}x{n}", p0.shape())));
        }
        if !linalg::is_symmetric(&p0, SYM_TOL) {
            return Err(Error::InvalidModel("P0 is not symmetric".into()));
        }
        let p0 = linalg::symmetrize(&p0);
        if linalg::lambda_min(&p0) < -SYM_TOL * p0.amax().max(1.0) {
            return Err(Error::InvalidModel("P0 is not positive semidefinite".into()));
        }
        let p0_sqrt = linalg::psd_sqrt(&p0);
        Ok(Self { signal, sensor, x0_mean, p0, p0_sqrt })
    }

    pub fn dim(&self) -> usize {
        self.signal.dim()
    }
    pub fn obs_dim(&self) -> usize {
        self.sensor.obs_dim()
    }
    pub fn p0_sqrt(&self) -> &DMatrix<f64> {
        &self.p0_sqrt
    }

    /// Same problem with a different initial law.
    pub fn with_initial(&self, x0_mean: DVector<f64>, p0: DMatrix<f64>) -> Result<Self> {
        Self::new(self.signal.clone(), self.sensor.clone(), x0_mean, p0)
    }
}
