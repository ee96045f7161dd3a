//! The EKF-diffusion: a conditional McKean-Vlasov process whose conditional
//! mean and covariance are the EKF pair. Those statistics are not estimated;
//! each state carries an [`EkfState`] advanced in lockstep with the same
//! observation increments.

use nalgebra::DVector;

use crate::ekf::{advance, EkfState};
use crate::models::{Drift, FilteringProblem};

/// `A(m) + dA(m)(x - m)`.
pub fn nonlinear_drift(x: &DVector<f64>, m: &DVector<f64>, drift: &dyn Drift) -> DVector<f64> {
    drift.eval(m) + drift.jacobian(m) * (x - m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct McKeanState {
    pub xbar: DVector<f64>,
    pub ekf: EkfState,
    pub t: f64,
}

impl McKeanState {
    pub fn new(xbar: DVector<f64>, ekf: EkfState) -> Self {
        let t = ekf.t;
        Self { xbar, ekf, t }
    }
}

/// One Euler step. `dw_bar` and `dv_bar` are Brownian increments with covariance `dt Id`.
pub fn mckean_step(
    state: &McKeanState,
    dy: &DVector<f64>,
    dw_bar: &DVector<f64>,
    dv_bar: &DVector<f64>,
    dt: f64,
    problem: &FilteringProblem,
) -> McKeanState {
    let (signal, sensor) = (&problem.signal, &problem.sensor);
    let x = &state.xbar;
    let innovation = dy - sensor.b() * x * dt - sensor.r2_sqrt() * dv_bar;
    let xbar = x
        + nonlinear_drift(x, &state.ekf.xhat, signal.drift().as_ref()) * dt
        + signal.r1_sqrt() * dw_bar
        + &state.ekf.p * (sensor.bt_r2inv() * innovation);
    let mut ekf = state.ekf.clone();
    advance(&mut ekf, dy, dt, problem);
    McKeanState { xbar, t: ekf.t, ekf }
}

/// Two EKF-diffusions driven by the same Brownian motions and observations,
/// each slaved to its own filter.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledPair {
    pub a: McKeanState,
    pub b: McKeanState,
}

/// Noise shared by both legs for one step.
#[derive(Clone, Debug)]
pub struct SharedIncrements {
    pub dy: DVector<f64>,
    pub dw_bar: DVector<f64>,
    pub dv_bar: DVector<f64>,
}

pub fn coupled_step(pair: &CoupledPair, shared: &SharedIncrements, dt: f64, problem: &FilteringProblem) -> CoupledPair {
    CoupledPair {
        a: mckean_step(&pair.a, &shared.dy, &shared.dw_bar, &shared.dv_bar, dt, problem),
        b: mckean_step(&pair.b, &shared.dy, &shared.dw_bar, &shared.dv_bar, dt, problem),
    }
}

impl CoupledPair {
    pub fn gap_squared(&self) -> f64 {
        (&self.a.xbar - &self.b.xbar).norm_squared()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_cubic_langevin, AffineDrift, CubicPotentialSpec, SensorModel, SignalModel};
    use crate::rng::{fill_brownian, normal_vector, stream, Role};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn cubic_scalar() -> FilteringProblem {
        let signal = build_cubic_langevin(&CubicPotentialSpec {
            q1: DMatrix::identity(1, 1),
            q2: DMatrix::identity(1, 1),
            q: DVector::zeros(1),
            beta: 1.0,
            sigma1: 1.0,
        })
        .unwrap();
        FilteringProblem::new(
            signal,
            SensorModel::fully_observed(1, 1.0, 1.0).unwrap(),
            DVector::zeros(1),
            DMatrix::identity(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn drift_at_the_mean_is_the_signal_drift() {
        let p = cubic_scalar();
        let m = DVector::from_element(1, 2.0);
        assert_eq!(nonlinear_drift(&m, &m, p.signal.drift().as_ref()), p.signal.drift().eval(&m));
    }

    #[test]
    fn cubic_hand_value() {
        let p = cubic_scalar();
        let v = nonlinear_drift(&DVector::from_element(1, 3.0), &DVector::from_element(1, 2.0), p.signal.drift().as_ref());
        assert_relative_eq!(v[0], -11.0, epsilon = 1e-13);
    }

    #[test]
    fn linear_drift_ignores_the_linearization_point() {
        let d = AffineDrift::linear(DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]));
        let x = DVector::from_vec(vec![0.3, -1.2]);
        let a = nonlinear_drift(&x, &DVector::from_vec(vec![5.0, 7.0]), &d);
        assert!((a - d.eval(&x)).amax() < 1e-14);
    }

    #[test]
    fn unobserved_step_is_a_signal_step() {
        let signal = SignalModel::new(
            Arc::new(AffineDrift::linear(DMatrix::from_element(1, 1, -1.0))),
            DMatrix::from_element(1, 1, 0.49),
            2.0,
            0.0,
        )
        .unwrap();
        let sensor = SensorModel::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        let prob = FilteringProblem::new(signal, sensor, DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let mut rng = stream(1, Role::Particle, 0, 0);
        let mut state = McKeanState::new(DVector::from_element(1, 1.5), EkfState::initial(&prob));
        let mut x = 1.5;
        for _ in 0..100 {
            let mut dw = [0.0];
            fill_brownian(&mut rng, 0.01, &mut dw);
            let dv = normal_vector(&mut rng, 1);
            state = mckean_step(&state, &DVector::from_element(1, 0.3), &DVector::from_element(1, dw[0]), &dv, 0.01, &prob);
            x += -x * 0.01 + 0.7 * dw[0];
            assert_relative_eq!(state.xbar[0], x, epsilon = 1e-13);
        }
        assert_relative_eq!(state.t, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_legs_never_separate() {
        let prob = cubic_scalar();
        let s = McKeanState::new(DVector::from_element(1, 0.7), EkfState::initial(&prob));
        let mut pair = CoupledPair { a: s.clone(), b: s };
        let mut rng = stream(2, Role::Coupling, 0, 0);
        for _ in 0..500 {
            let shared = SharedIncrements {
                dy: normal_vector(&mut rng, 1) * 0.03,
                dw_bar: normal_vector(&mut rng, 1) * 0.03,
                dv_bar: normal_vector(&mut rng, 1) * 0.03,
            };
            pair = coupled_step(&pair, &shared, 1e-3, &prob);
            assert_eq!(pair.gap_squared(), 0.0);
        }
    }
}
