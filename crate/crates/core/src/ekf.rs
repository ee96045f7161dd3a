//! Extended Kalman-Bucy filter with an Euler step for the stochastic Riccati
//! equation, projected back onto the PSD cone after every step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::FilteringProblem;

#[derive(Clone, Debug, PartialEq)]
pub struct EkfState {
    pub xhat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub t: f64,
}

impl EkfState {
    pub fn initial(problem: &FilteringProblem) -> Self {
        Self { xhat: problem.x0_mean.clone(), p: problem.p0.clone(), t: 0.0 }
    }

    pub fn csv_header(dim: usize) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((0..dim).map(|i| format!("xhat_{i}")));
        h.extend(linalg::upper_triangle_labels("P", dim));
        h.push("trace_P".into());
        h
    }

    pub fn csv_row(&self) -> Vec<f64> {
        let mut r = vec![self.t];
        r.extend(self.xhat.iter());
        r.extend(linalg::upper_triangle(&self.p));
        r.push(self.p.trace());
        r
    }
}

/// `J P + P J' + R - P S P`, symmetrized.
pub fn riccati_rhs(p: &DMatrix<f64>, jacobian: &DMatrix<f64>, r: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    let jp = jacobian * p;
    let mut out = &jp + jp.transpose() + r - p * s * p;
    linalg::symmetrize_mut(&mut out);
    out
}

/// Riccati drift evaluated at the filter mean.
pub fn riccati_drift(p: &DMatrix<f64>, xhat: &DVector<f64>, problem: &FilteringProblem) -> DMatrix<f64> {
    let j = problem.signal.drift().jacobian(xhat);
    riccati_rhs(p, &j, problem.signal.r1(), problem.sensor.s())
}

/// Advances `state` by one step in place, consuming the observation increment `dy`.
pub fn advance(state: &mut EkfState, dy: &DVector<f64>, dt: f64, problem: &FilteringProblem) {
    let drift = problem.signal.drift();
    let a = drift.eval(&state.xhat);
    let j = drift.jacobian(&state.xhat);
    let mut innovation = dy.clone();
    innovation.gemv(-dt, problem.sensor.b(), &state.xhat, 1.0);
    let gain_input = problem.sensor.bt_r2inv() * innovation;
    let rhs = riccati_rhs(&state.p, &j, problem.signal.r1(), problem.sensor.s());
    state.xhat.axpy(dt, &a, 1.0);
    state.xhat.gemv(1.0, &state.p, &gain_input, 1.0);
    state.p = linalg::psd_project(&(&state.p + rhs * dt));
    state.t += dt;
}

pub fn ekf_step(state: &EkfState, dy: &DVector<f64>, dt: f64, problem: &FilteringProblem) -> EkfState {
    let mut next = state.clone();
    advance(&mut next, dy, dt, problem);
    next
}

/// Filter trajectory along a path of observation increments; the first entry is the initial state.
pub fn run_ekf(problem: &FilteringProblem, increments: &[DVector<f64>], dt: f64) -> Result<Vec<EkfState>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if let Some(bad) = increments.iter().position(|dy| dy.len() != problem.obs_dim()) {
        return Err(Error::Dimension(format!(
            "observation increment {bad} has length {}, expected {}",
            increments[bad].len(),
            problem.obs_dim()
        )));
    }
    let mut state = EkfState::initial(problem);
    let mut out = Vec::with_capacity(increments.len() + 1);
    out.push(state.clone());
    for dy in increments {
        advance(&mut state, dy, dt, problem);
        out.push(state.clone());
    }
    Ok(out)
}
