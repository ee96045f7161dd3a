//! Change of basis turning a square, invertible sensor into the identity sensor.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::drift::Drift;
use super::{FilteringProblem, SensorModel, SignalModel};
use crate::error::{Error, Result};
use crate::linalg;

/// `u -> T A(T^{-1} u)`.
#[derive(Clone)]
pub struct ConjugatedDrift {
    inner: Arc<dyn Drift>,
    t: DMatrix<f64>,
    t_inv: DMatrix<f64>,
}

impl ConjugatedDrift {
    pub fn new(inner: Arc<dyn Drift>, t: DMatrix<f64>, t_inv: DMatrix<f64>) -> Self {
        Self { inner, t, t_inv }
    }
}

impl Drift for ConjugatedDrift {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval_into(&self, u: &DVector<f64>, out: &mut DVector<f64>) {
        let x = &self.t_inv * u;
        out.copy_from(&(&self.t * self.inner.eval(&x)));
    }

    fn jacobian_into(&self, u: &DVector<f64>, out: &mut DMatrix<f64>) {
        let x = &self.t_inv * u;
        out.copy_from(&(&self.t * self.inner.jacobian(&x) * &self.t_inv));
    }

    fn constant_jacobian(&self) -> Option<DMatrix<f64>> {
        self.inner.constant_jacobian().map(|j| &self.t * j * &self.t_inv)
    }
}

/// Transformed problem plus the maps taking original states and observation
/// increments into the new coordinates.
#[derive(Clone, Debug)]
pub struct SensorReduction {
    pub problem: FilteringProblem,
    /// `T = R2^{-1/2} B`: new state is `T x`.
    pub state_map: DMatrix<f64>,
    /// `R2^{-1/2}`: new observation increment is `R2^{-1/2} dY`.
    pub observation_map: DMatrix<f64>,
}

impl SensorReduction {
    pub fn state(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.state_map * x
    }
    pub fn observation(&self, dy: &DVector<f64>) -> DVector<f64> {
        &self.observation_map * dy
    }
}

fn maps(problem: &FilteringProblem) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let (r1, r2) = (problem.dim(), problem.obs_dim());
    if r1 != r2 {
        return Err(Error::SingularTransform(format!("sensor is {r2}x{r1}, not square")));
    }
    let r2_inv_sqrt = linalg::spd_inv_sqrt(problem.sensor.r2());
    let t = &r2_inv_sqrt * problem.sensor.b();
    let gram = t.transpose() * &t;
    let (lo, hi) = (linalg::lambda_min(&gram), linalg::lambda_max(&gram));
    if !(hi > 0.0 && lo > 1e-24 * hi) {
        return Err(Error::SingularTransform("R2^{-1/2} B is not invertible".into()));
    }
    let t_inv = t.clone().try_inverse().ok_or_else(|| Error::SingularTransform("R2^{-1/2} B is not invertible".into()))?;
    Ok((t, t_inv, r2_inv_sqrt))
}

fn assemble(
    problem: &FilteringProblem,
    t: DMatrix<f64>,
    t_inv: DMatrix<f64>,
    r2_inv_sqrt: DMatrix<f64>,
    lambda: f64,
    kappa: f64,
) -> Result<SensorReduction> {
    let n = problem.dim();
    let drift = ConjugatedDrift::new(problem.signal.drift().clone(), t.clone(), t_inv);
    let r1 = linalg::symmetrize(&(&t * problem.signal.r1() * t.transpose()));
    let signal = SignalModel::new(Arc::new(drift), r1, lambda, kappa)?;
    let sensor = SensorModel::new(DMatrix::identity(n, n), DMatrix::identity(n, n))?;
    let p0 = linalg::symmetrize(&(&t * &problem.p0 * t.transpose()));
    let new = FilteringProblem::new(signal, sensor, &t * &problem.x0_mean, p0)?;
    Ok(SensorReduction { problem: new, state_map: t, observation_map: r2_inv_sqrt })
}

/// Identity-sensor form of `problem`. Stability constants are carried over
/// exactly when the drift is affine (recomputed from the conjugated matrix) or
/// when `T'T` is a multiple of the identity (`lambda` unchanged, `kappa`
/// scaled by `||T^{-1}||`). Otherwise they cannot be certified and
/// [`identity_sensor_transform_with_constants`] must be used.
pub fn identity_sensor_transform(problem: &FilteringProblem) -> Result<SensorReduction> {
    let (t, t_inv, r2_inv_sqrt) = maps(problem)?;
    let (lambda, kappa) = if let Some(j) = problem.signal.drift().constant_jacobian() {
        let jt = &t * j * &t_inv;
        (-linalg::lambda_max(&(&jt + jt.transpose())), 0.0)
    } else {
        let gram = t.transpose() * &t;
        let c2 = linalg::lambda_max(&gram);
        let conformal = (&gram - DMatrix::identity(gram.nrows(), gram.ncols()) * c2).amax() <= 1e-10 * c2;
        if !conformal {
            return Err(Error::Uncertified(
                "nonlinear drift under a non-conformal change of basis; supply constants explicitly".into(),
            ));
        }
        (problem.signal.lambda_da(), problem.signal.kappa_da() / c2.sqrt())
    };
    assemble(problem, t, t_inv, r2_inv_sqrt, lambda, kappa)
}

/// Identity-sensor form with caller-certified constants for the new drift.
pub fn identity_sensor_transform_with_constants(
    problem: &FilteringProblem,
    lambda_da: f64,
    kappa_da: f64,
) -> Result<SensorReduction> {
    let (t, t_inv, r2_inv_sqrt) = maps(problem)?;
    assemble(problem, t, t_inv, r2_inv_sqrt, lambda_da, kappa_da)
}
