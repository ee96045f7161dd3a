use nalgebra::DVector;
use rand::Rng;

use super::FilteringProblem;
use crate::error::{Error, Result};
use crate::rng::{fill_brownian, gaussian};

/// Uniform grid `t_k = k dt`, `k = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// Grid covering `[0, horizon]`; the horizon is rounded to a whole number of steps.
    pub fn new(dt: f64, horizon: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if !(horizon.is_finite() && horizon >= dt) {
            return Err(Error::InvalidArgument(format!("horizon {horizon} must be at least dt = {dt}")));
        }
        Ok(Self { dt, steps: (horizon / dt).round() as usize })
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }

    /// Index of the grid point closest to `t`.
    pub fn index_of(&self, t: f64) -> usize {
        ((t / self.dt).round() as usize).min(self.steps)
    }
}

/// Euler-Maruyama path of the signal alone, started from `N(x0_mean, P0)`.
pub fn sample_signal_path<R: Rng + ?Sized>(
    problem: &FilteringProblem,
    dt: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let grid = TimeGrid::new(dt, horizon)?;
    let n = problem.dim();
    let drift = problem.signal.drift();
    let r1_sqrt = problem.signal.r1_sqrt();
    let mut x = gaussian(rng, &problem.x0_mean, problem.p0_sqrt());
    let mut path = Vec::with_capacity(grid.steps + 1);
    path.push(x.clone());
    let mut a = DVector::zeros(n);
    let mut dw = DVector::zeros(n);
    for _ in 0..grid.steps {
        drift.eval_into(&x, &mut a);
        fill_brownian(rng, dt, dw.as_mut_slice());
        x.axpy(dt, &a, 1.0);
        x.gemv(1.0, r1_sqrt, &dw, 1.0);
        path.push(x.clone());
    }
    Ok(path)
}

/// Hidden signal path together with the observation increments it generates.
#[derive(Clone, Debug)]
pub struct TruthPath {
    pub grid: TimeGrid,
    /// `X_{t_k}`, `k = 0..=steps`.
    pub states: Vec<DVector<f64>>,
    /// `dY_k = B X_{t_k} dt + R2^{1/2} dV_k`, `k = 0..steps`.
    pub increments: Vec<DVector<f64>>,
}

/// Simulates the hidden signal and its observations. Each step consumes the
/// signal increment and then the observation increment from `rng`.
pub fn simulate_truth<R: Rng + ?Sized>(problem: &FilteringProblem, grid: TimeGrid, rng: &mut R) -> TruthPath {
    let (n, r2) = (problem.dim(), problem.obs_dim());
    let dt = grid.dt;
    let drift = problem.signal.drift();
    let (r1_sqrt, b, r2_sqrt) = (problem.signal.r1_sqrt(), problem.sensor.b(), problem.sensor.r2_sqrt());
    let mut x = gaussian(rng, &problem.x0_mean, problem.p0_sqrt());
    let mut states = Vec::with_capacity(grid.steps + 1);
    let mut increments = Vec::with_capacity(grid.steps);
    states.push(x.clone());
    let mut a = DVector::zeros(n);
    let mut dw = DVector::zeros(n);
    let mut dv = DVector::zeros(r2);
    for _ in 0..grid.steps {
        fill_brownian(rng, dt, dw.as_mut_slice());
        fill_brownian(rng, dt, dv.as_mut_slice());
        let mut dy = r2_sqrt * &dv;
        dy.gemv(dt, b, &x, 1.0);
        increments.push(dy);
        drift.eval_into(&x, &mut a);
        x.axpy(dt, &a, 1.0);
        x.gemv(1.0, r1_sqrt, &dw, 1.0);
        states.push(x.clone());
    }
    TruthPath { grid, states, increments }
}
