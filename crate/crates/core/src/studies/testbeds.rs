//! Reference problems used by the experiments and the acceptance suite.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::models::{
    build_cubic_langevin, build_quadratic_langevin, AffineDrift, CubicPotentialSpec, FilteringProblem,
    QuadraticPotentialSpec, SensorModel, SignalModel,
};

fn scalar_linear(a: f64, sigma1: f64, b: f64, sigma2: f64, x0: f64, p0: f64) -> FilteringProblem {
    // log-norm convention: lambda_dA = -lambda_max(J + J') = -2a
    let signal = SignalModel::new(
        Arc::new(AffineDrift::linear(DMatrix::from_element(1, 1, a))),
        DMatrix::from_element(1, 1, sigma1 * sigma1),
        -2.0 * a,
        0.0,
    )
    .expect("valid scalar signal");
    FilteringProblem::new(
        signal,
        SensorModel::fully_observed(1, b, sigma2).expect("valid sensor"),
        DVector::from_element(1, x0),
        DMatrix::from_element(1, 1, p0),
    )
    .expect("valid scalar problem")
}

/// `dX = -10 X dt + dW`, `dY = X dt + dV`, `X0 ~ N(0.5, 0.25)`. Satisfies the
/// stability condition and the trace premise (`lambda_S = lambda_R = 20`).
pub fn scalar() -> FilteringProblem {
    scalar_linear(-10.0, 1.0, 1.0, 1.0, 0.5, 0.25)
}

/// Linear model `(a, r, s) = (-1, 1, 1)` with a chosen initial covariance;
/// its Riccati solution tends to `sqrt 2 - 1`.
pub fn kalman(p0: f64) -> FilteringProblem {
    scalar_linear(-1.0, 1.0, 1.0, 1.0, 0.0, p0)
}

/// Ornstein-Uhlenbeck `dX = -X dt + dW` observed through `dY = X dt + dV`, `X0 ~ N(1, 0.5)`.
pub fn ornstein_uhlenbeck() -> FilteringProblem {
    scalar_linear(-1.0, 1.0, 1.0, 1.0, 1.0, 0.5)
}

/// Two-dimensional cubic Langevin model, fully observed.
pub fn cubic() -> FilteringProblem {
    let signal = build_cubic_langevin(&CubicPotentialSpec {
        q1: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        q2: DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
        q: DVector::from_vec(vec![0.5, -0.5]),
        beta: 1.0,
        sigma1: 1.0,
    })
    .expect("valid cubic signal");
    FilteringProblem::new(
        signal,
        SensorModel::fully_observed(2, 1.0, 1.0).expect("valid sensor"),
        DVector::from_vec(vec![1.0, -1.0]),
        DMatrix::identity(2, 2),
    )
    .expect("valid cubic problem")
}

/// Two-dimensional quadratic Langevin model, fully observed.
pub fn quadratic() -> FilteringProblem {
    let signal = build_quadratic_langevin(&QuadraticPotentialSpec {
        q1: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.5]),
        q: DVector::zeros(2),
        beta: 1.0,
        sigma1: 1.0,
    })
    .expect("valid quadratic signal");
    FilteringProblem::new(
        signal,
        SensorModel::fully_observed(2, 1.0, 1.0).expect("valid sensor"),
        DVector::from_vec(vec![1.0, 0.5]),
        DMatrix::identity(2, 2) * 0.5,
    )
    .expect("valid quadratic problem")
}

/// Three-dimensional stable linear model, for rank-deficiency probes with `N < 3`.
pub fn stable_3d() -> FilteringProblem {
    let a = DMatrix::from_row_slice(3, 3, &[-1.0, 0.2, 0.0, -0.2, -1.5, 0.1, 0.0, -0.1, -2.0]);
    let lambda = -crate::linalg::lambda_max(&(&a + a.transpose()));
    let signal = SignalModel::new(Arc::new(AffineDrift::linear(a)), DMatrix::identity(3, 3) * 0.5, lambda, 0.0)
        .expect("valid signal");
    FilteringProblem::new(
        signal,
        SensorModel::fully_observed(3, 1.0, 1.0).expect("valid sensor"),
        DVector::from_vec(vec![1.0, 0.0, -1.0]),
        DMatrix::identity(3, 3),
    )
    .expect("valid problem")
}

/// Unobserved linear signal `A = diag(0.5, -1)`: the ensemble mean grows at rate 0.5.
pub fn unstable_unobserved() -> FilteringProblem {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -1.0]));
    let signal = SignalModel::new(Arc::new(AffineDrift::linear(a)), DMatrix::identity(2, 2) * 0.01, -1.0, 0.0)
        .expect("valid signal");
    FilteringProblem::new(
        signal,
        SensorModel::new(DMatrix::zeros(1, 2), DMatrix::identity(1, 1)).expect("valid sensor"),
        DVector::from_vec(vec![1.0, 1.0]),
        DMatrix::identity(2, 2) * 0.01,
    )
    .expect("valid problem")
}
