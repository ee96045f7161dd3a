//! Langevin signal families `A = -beta * grad V`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::drift::{AffineDrift, Drift};
use super::SignalModel;
use crate::error::{Error, Result};
use crate::linalg;

fn check_spd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::InvalidModel(format!("{name} must be a non-empty square matrix")));
    }
    if !linalg::is_symmetric(m, 1e-10) {
        return Err(Error::InvalidModel(format!("{name} is not symmetric")));
    }
    if linalg::lambda_min(m) <= 0.0 {
        return Err(Error::InvalidModel(format!("{name} is not positive definite")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("{name} must be positive, got {v}")))
    }
}

/// `V(x) = <x, Q1 x>/2 + <q, x>`.
#[derive(Clone, Debug)]
pub struct QuadraticPotentialSpec {
    pub q1: DMatrix<f64>,
    pub q: DVector<f64>,
    pub beta: f64,
    pub sigma1: f64,
}

/// `A(x) = -beta (Q1 x + q)`, `R1 = sigma1^2 Id`, `lambda_dA = 2 beta lambda_min(Q1)`, `kappa_dA = 0`.
pub fn build_quadratic_langevin(spec: &QuadraticPotentialSpec) -> Result<SignalModel> {
    check_spd("Q1", &spec.q1)?;
    check_positive("beta", spec.beta)?;
    check_positive("sigma1", spec.sigma1)?;
    let n = spec.q1.nrows();
    if spec.q.len() != n {
        return Err(Error::Dimension(format!("q has length {}, expected {n}", spec.q.len())));
    }
    let q1 = linalg::symmetrize(&spec.q1);
    let lambda = 2.0 * spec.beta * linalg::lambda_min(&q1);
    let drift = AffineDrift::new(-spec.beta * q1, -spec.beta * &spec.q);
    SignalModel::new(Arc::new(drift), DMatrix::identity(n, n) * spec.sigma1.powi(2), lambda, 0.0)
}

/// `V(x) = <x, Q1 x>/2 + <q, x> + <Q2 x, x>^{3/2}/3`.
#[derive(Clone, Debug)]
pub struct CubicPotentialSpec {
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub q: DVector<f64>,
    pub beta: f64,
    pub sigma1: f64,
}

#[derive(Clone, Debug)]
pub struct CubicDrift {
    q1: DMatrix<f64>,
    q2: DMatrix<f64>,
    q: DVector<f64>,
    beta: f64,
}

impl Drift for CubicDrift {
    fn dim(&self) -> usize {
        self.q.len()
    }

    fn eval_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        let y = &self.q2 * x;
        let root = y.dot(x).max(0.0).sqrt();
        out.copy_from(&self.q);
        out.gemv(1.0, &self.q1, x, 1.0);
        out.axpy(root, &y, 1.0);
        *out *= -self.beta;
    }

    fn jacobian_into(&self, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        let y = &self.q2 * x;
        let root = y.dot(x).max(0.0).sqrt();
        out.copy_from(&self.q1);
        if root > 0.0 {
            *out += &self.q2 * root;
            out.ger(1.0 / root, &y, &y, 1.0);
        }
        *out *= -self.beta;
    }
}

/// Cubic Langevin drift. `lambda_dA = 2 beta lambda_min(Q1)`, `kappa_dA = 2 beta lambda_max(Q2)^{3/2}`.
pub fn build_cubic_langevin(spec: &CubicPotentialSpec) -> Result<SignalModel> {
    check_spd("Q1", &spec.q1)?;
    check_spd("Q2", &spec.q2)?;
    check_positive("beta", spec.beta)?;
    check_positive("sigma1", spec.sigma1)?;
    let n = spec.q1.nrows();
    if spec.q2.nrows() != n || spec.q.len() != n {
        return Err(Error::Dimension("Q1, Q2 and q must share one dimension".into()));
    }
    let q1 = linalg::symmetrize(&spec.q1);
    let q2 = linalg::symmetrize(&spec.q2);
    let lambda = 2.0 * spec.beta * linalg::lambda_min(&q1);
    let kappa = 2.0 * spec.beta * linalg::lambda_max(&q2).powf(1.5);
    let drift = CubicDrift { q1, q2, q: spec.q.clone(), beta: spec.beta };
    SignalModel::new(Arc::new(drift), DMatrix::identity(n, n) * spec.sigma1.powi(2), lambda, kappa)
}

/// One-dimensional confining potential, through its first two derivatives.
pub trait ScalarPotential: Send + Sync {
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;
}

/// Two-variable interaction potential `U(x, y)`, through gradient and Hessian.
pub trait PairPotential: Send + Sync {
    fn grad(&self, x: f64, y: f64) -> [f64; 2];
    fn hessian(&self, x: f64, y: f64) -> [[f64; 2]; 2];
}

/// sup |d^3/dx^3 ln cosh x| = 4 / (3 sqrt 3).
pub const LOG_COSH_THIRD_DERIVATIVE_BOUND: f64 = 0.769_800_358_919_501;

/// `U(x) = (u/2) x^2 + c ln cosh x`, with `U'' >= u` for `c >= 0`.
#[derive(Clone, Copy, Debug)]
pub struct LogCoshScalar {
    pub quadratic: f64,
    pub log_cosh: f64,
}

impl LogCoshScalar {
    pub fn hessian_lower_bound(&self) -> f64 {
        self.quadratic + self.log_cosh.min(0.0)
    }
    pub fn hessian_lipschitz(&self) -> f64 {
        self.log_cosh.abs() * LOG_COSH_THIRD_DERIVATIVE_BOUND
    }
}

impl ScalarPotential for LogCoshScalar {
    fn d1(&self, x: f64) -> f64 {
        self.quadratic * x + self.log_cosh * x.tanh()
    }
    fn d2(&self, x: f64) -> f64 {
        let sech = 1.0 / x.cosh();
        self.quadratic + self.log_cosh * sech * sech
    }
}

/// `U(x, y) = (u/2)(x^2 + y^2) + c ln cosh(x - y)`.
#[derive(Clone, Copy, Debug)]
pub struct LogCoshPair {
    pub quadratic: f64,
    pub log_cosh: f64,
}

impl LogCoshPair {
    /// The coupling Hessian `c sech^2(x-y) [[1,-1],[-1,1]]` has eigenvalues 0 and `2c sech^2`.
    pub fn hessian_lower_bound(&self) -> f64 {
        self.quadratic + 2.0 * self.log_cosh.min(0.0)
    }
    pub fn hessian_lipschitz(&self) -> f64 {
        2.0 * std::f64::consts::SQRT_2 * self.log_cosh.abs() * LOG_COSH_THIRD_DERIVATIVE_BOUND
    }
}

impl PairPotential for LogCoshPair {
    fn grad(&self, x: f64, y: f64) -> [f64; 2] {
        let t = self.log_cosh * (x - y).tanh();
        [self.quadratic * x + t, self.quadratic * y - t]
    }
    fn hessian(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        let sech = 1.0 / (x - y).cosh();
        let c = self.log_cosh * sech * sech;
        [[self.quadratic + c, -c], [-c, self.quadratic + c]]
    }
}

/// Parameters of `V(x) = sum_i U1(x_i) + sum_{i<j} U2(x_i, x_j)`.
#[derive(Clone, Copy, Debug)]
pub struct InteractingPotentialSpec {
    pub r1: usize,
    /// Lower bound on `U1''`.
    pub u1_hessian_lb: f64,
    /// Lower bound on the Hessian of `U2` (as a multiple of the 2x2 identity).
    pub u2_hessian_lb: f64,
    /// Lipschitz constant of `U1''`.
    pub kappa1: f64,
    /// Lipschitz constant of the Hessian of `U2`.
    pub kappa2: f64,
    pub beta: f64,
    pub sigma1: f64,
}

/// Hessian lower bound `v = u1 + (r1-1) u2` and Hessian Lipschitz constant
/// `kappa1 + kappa2 (r1-1) sqrt(2(r1-1))` of the interacting potential.
pub fn interacting_constants(u1: f64, u2: f64, kappa1: f64, kappa2: f64, r1: usize) -> (f64, f64) {
    let k = r1.saturating_sub(1) as f64;
    (u1 + k * u2, kappa1 + kappa2 * k * (2.0 * k).sqrt())
}

#[derive(Clone)]
pub struct InteractingDrift {
    r1: usize,
    beta: f64,
    u1: Arc<dyn ScalarPotential>,
    u2: Arc<dyn PairPotential>,
}

impl Drift for InteractingDrift {
    fn dim(&self) -> usize {
        self.r1
    }

    fn eval_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        for k in 0..self.r1 {
            out[k] = self.u1.d1(x[k]);
        }
        for i in 0..self.r1 {
            for j in (i + 1)..self.r1 {
                let g = self.u2.grad(x[i], x[j]);
                out[i] += g[0];
                out[j] += g[1];
            }
        }
        *out *= -self.beta;
    }

    fn jacobian_into(&self, x: &DVector<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        for k in 0..self.r1 {
            out[(k, k)] = self.u1.d2(x[k]);
        }
        for i in 0..self.r1 {
            for j in (i + 1)..self.r1 {
                let h = self.u2.hessian(x[i], x[j]);
                out[(i, i)] += h[0][0];
                out[(j, j)] += h[1][1];
                out[(i, j)] += h[0][1];
                out[(j, i)] += h[1][0];
            }
        }
        *out *= -self.beta;
    }
}

/// Interacting gradient flow with `lambda_dA = 2 beta v` and `kappa_dA = beta kappa_V`,
/// where `(v, kappa_V)` come from [`interacting_constants`].
pub fn build_interacting_potential(
    spec: &InteractingPotentialSpec,
    u1: Arc<dyn ScalarPotential>,
    u2: Arc<dyn PairPotential>,
) -> Result<SignalModel> {
    if spec.r1 == 0 {
        return Err(Error::InvalidModel("r1 must be positive".into()));
    }
    check_positive("beta", spec.beta)?;
    check_positive("sigma1", spec.sigma1)?;
    if !(spec.kappa1 >= 0.0 && spec.kappa2 >= 0.0) {
        return Err(Error::InvalidModel("Hessian Lipschitz constants must be nonnegative".into()));
    }
    let (v, kappa_v) = interacting_constants(spec.u1_hessian_lb, spec.u2_hessian_lb, spec.kappa1, spec.kappa2, spec.r1);
    if !(v > 0.0) {
        return Err(Error::InvalidModel(format!("u1 + (r1-1) u2 must be positive, got {v}")));
    }
    let drift = InteractingDrift { r1: spec.r1, beta: spec.beta, u1, u2 };
    let n = spec.r1;
    SignalModel::new(
        Arc::new(drift),
        DMatrix::identity(n, n) * spec.sigma1.powi(2),
        2.0 * spec.beta * v,
        spec.beta * kappa_v,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{lambda_max, spectral_norm};
    use crate::rng::{normal_vector, stream, Role};
    use approx::assert_relative_eq;

    fn quad_identity() -> SignalModel {
        build_quadratic_langevin(&QuadraticPotentialSpec {
            q1: DMatrix::identity(1, 1),
            q: DVector::zeros(1),
            beta: 1.0,
            sigma1: 1.0,
        })
        .unwrap()
    }

    fn cubic_2d() -> SignalModel {
        build_cubic_langevin(&CubicPotentialSpec {
            q1: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            q2: DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
            q: DVector::from_vec(vec![0.5, -0.5]),
            beta: 1.0,
            sigma1: 1.0,
        })
        .unwrap()
    }

    fn cubic_scalar() -> SignalModel {
        build_cubic_langevin(&CubicPotentialSpec {
            q1: DMatrix::identity(1, 1),
            q2: DMatrix::identity(1, 1),
            q: DVector::zeros(1),
            beta: 1.0,
            sigma1: 1.0,
        })
        .unwrap()
    }

    fn interacting_3d() -> SignalModel {
        let u1 = LogCoshScalar { quadratic: 1.0, log_cosh: 0.5 };
        let u2 = LogCoshPair { quadratic: 0.25, log_cosh: 0.3 };
        build_interacting_potential(
            &InteractingPotentialSpec {
                r1: 3,
                u1_hessian_lb: u1.hessian_lower_bound(),
                u2_hessian_lb: u2.hessian_lower_bound(),
                kappa1: u1.hessian_lipschitz(),
                kappa2: u2.hessian_lipschitz(),
                beta: 0.8,
                sigma1: 1.0,
            },
            Arc::new(u1),
            Arc::new(u2),
        )
        .unwrap()
    }

    fn all_models() -> Vec<(&'static str, SignalModel)> {
        let diag = build_quadratic_langevin(&QuadraticPotentialSpec {
            q1: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])),
            q: DVector::from_vec(vec![0.1, -0.2]),
            beta: 0.5,
            sigma1: 0.7,
        })
        .unwrap();
        vec![
            ("quadratic-1d", quad_identity()),
            ("quadratic-2d", diag),
            ("cubic-1d", cubic_scalar()),
            ("cubic-2d", cubic_2d()),
            ("interacting-3d", interacting_3d()),
        ]
    }

    fn random_point(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> DVector<f64> {
        normal_vector(rng, n) * 2.0
    }

    #[test]
    fn quadratic_identity_constants() {
        let m = quad_identity();
        let x = DVector::from_vec(vec![1.5]);
        assert_eq!(m.drift().eval(&x)[0], -1.5);
        assert_eq!(m.drift().jacobian(&x)[(0, 0)], -1.0);
        assert_eq!(m.lambda_da(), 2.0);
        assert_eq!(m.kappa_da(), 0.0);
    }

    #[test]
    fn quadratic_diag_log_norm_is_attained() {
        let m = build_quadratic_langevin(&QuadraticPotentialSpec {
            q1: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])),
            q: DVector::zeros(2),
            beta: 0.5,
            sigma1: 1.0,
        })
        .unwrap();
        assert_eq!(m.lambda_da(), 1.0);
        let mut rng = stream(11, Role::Initial, 0, 0);
        for _ in 0..10 {
            let j = m.drift().jacobian(&random_point(&mut rng, 2));
            assert_relative_eq!(lambda_max(&(&j + j.transpose())), -1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn cubic_hand_values() {
        let m = cubic_scalar();
        let x = DVector::from_vec(vec![2.0]);
        assert_relative_eq!(m.drift().eval(&x)[0], -6.0, epsilon = 1e-14);
        assert_relative_eq!(m.drift().jacobian(&x)[(0, 0)], -5.0, epsilon = 1e-14);
        // central differences agree with the analytic Jacobian
        let h = 1e-6;
        let fd = (m.drift().eval(&DVector::from_vec(vec![2.0 + h]))[0] - m.drift().eval(&DVector::from_vec(vec![2.0 - h]))[0])
            / (2.0 * h);
        assert_relative_eq!(fd, -5.0, epsilon = 1e-8);
    }

    #[test]
    fn cubic_jacobian_at_origin_is_continuous_extension() {
        let m = cubic_2d();
        let j0 = m.drift().jacobian(&DVector::zeros(2));
        assert_eq!(j0, -DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]));
        let eps = DVector::from_vec(vec![1e-9, -2e-9]);
        assert!((m.drift().jacobian(&eps) - &j0).amax() < 1e-8);
    }

    #[test]
    fn cubic_without_quartic_part_has_zero_kappa() {
        // Q2 must be positive definite, so approach zero and watch kappa vanish.
        let m = build_cubic_langevin(&CubicPotentialSpec {
            q1: DMatrix::identity(1, 1),
            q2: DMatrix::identity(1, 1) * 1e-12,
            q: DVector::zeros(1),
            beta: 1.0,
            sigma1: 1.0,
        })
        .unwrap();
        assert!(m.kappa_da() < 1e-17);
    }

    #[test]
    fn cubic_hessian_lipschitz_bound() {
        let q2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let bound = 2.0 * spectral_norm(&q2).powf(1.5);
        let m = cubic_2d();
        let mut rng = stream(12, Role::Initial, 0, 0);
        for _ in 0..1000 {
            let (x, y) = (random_point(&mut rng, 2), random_point(&mut rng, 2));
            let dh = m.drift().jacobian(&x) - m.drift().jacobian(&y);
            assert!(spectral_norm(&dh) <= bound * (x - y).norm() + 1e-12);
        }
    }

    #[test]
    fn interacting_constants_examples() {
        assert_eq!(interacting_constants(1.0, 0.0, 0.0, 0.0, 3).0, 1.0);
        assert_eq!(interacting_constants(1.0, 0.5, 0.0, 0.0, 3).1, 0.0);
        let (v, k) = interacting_constants(1.0, 0.5, 0.1, 0.2, 3);
        assert_relative_eq!(v, 2.0, epsilon = 1e-15);
        assert_relative_eq!(k, 0.9, epsilon = 1e-15);
    }

    #[test]
    fn interacting_rejects_nonconvex() {
        let spec = InteractingPotentialSpec {
            r1: 3,
            u1_hessian_lb: 1.0,
            u2_hessian_lb: -0.6,
            kappa1: 0.0,
            kappa2: 0.0,
            beta: 1.0,
            sigma1: 1.0,
        };
        let u1 = Arc::new(LogCoshScalar { quadratic: 1.0, log_cosh: 0.0 });
        let u2 = Arc::new(LogCoshPair { quadratic: -0.6, log_cosh: 0.0 });
        assert!(build_interacting_potential(&spec, u1, u2).is_err());
    }

    #[test]
    fn log_cosh_lipschitz_constants_from_finite_differences() {
        let u1 = LogCoshScalar { quadratic: 0.0, log_cosh: 1.0 };
        let u2 = LogCoshPair { quadratic: 0.0, log_cosh: 1.0 };
        let mut worst1 = 0.0f64;
        let mut worst2 = 0.0f64;
        let mut rng = stream(13, Role::Initial, 0, 0);
        for _ in 0..20_000 {
            let p = random_point(&mut rng, 4) * 0.5;
            worst1 = worst1.max((u1.d2(p[0]) - u1.d2(p[1])).abs() / (p[0] - p[1]).abs());
            let (ha, hb) = (u2.hessian(p[0], p[1]), u2.hessian(p[2], p[3]));
            let d = DMatrix::from_fn(2, 2, |i, j| ha[i][j] - hb[i][j]);
            let dist = ((p[0] - p[2]).powi(2) + (p[1] - p[3]).powi(2)).sqrt();
            worst2 = worst2.max(spectral_norm(&d) / dist);
        }
        assert!(worst1 <= u1.hessian_lipschitz() * (1.0 + 1e-9));
        assert!(worst1 >= 0.9 * u1.hessian_lipschitz());
        assert!(worst2 <= u2.hessian_lipschitz() * (1.0 + 1e-9));
    }

    #[test]
    fn certified_constants_hold_on_random_points() {
        let mut rng = stream(14, Role::Initial, 0, 0);
        for (name, m) in all_models() {
            let n = m.dim();
            let d = m.drift();
            for _ in 0..200 {
                let (x, y) = (random_point(&mut rng, n), random_point(&mut rng, n));
                let jx = d.jacobian(&x);
                assert!(lambda_max(&(&jx + jx.transpose())) <= -m.lambda_da() + 1e-8, "{name}: log-norm");
                let dj = spectral_norm(&(&jx - d.jacobian(&y)));
                assert!(dj <= m.kappa_da() * (&x - &y).norm() + 1e-8, "{name}: Lipschitz");
                let diff = &x - &y;
                let osl = diff.dot(&(d.eval(&x) - d.eval(&y)));
                assert!(osl <= -m.lambda_a() * diff.norm_squared() + 1e-8, "{name}: one-sided Lipschitz");
            }
        }
    }

    #[test]
    fn jacobians_match_central_differences() {
        let mut rng = stream(15, Role::Initial, 0, 0);
        let h = 1e-6;
        for (name, m) in all_models() {
            let n = m.dim();
            let d = m.drift();
            for _ in 0..50 {
                let x = random_point(&mut rng, n) + DVector::from_element(n, 0.3);
                let j = d.jacobian(&x);
                for k in 0..n {
                    let mut e = DVector::zeros(n);
                    e[k] = h;
                    let fd = (d.eval(&(&x + &e)) - d.eval(&(&x - &e))) / (2.0 * h);
                    for i in 0..n {
                        let scale = j[(i, k)].abs().max(1.0);
                        assert!((fd[i] - j[(i, k)]).abs() <= 1e-5 * scale, "{name}: entry ({i},{k})");
                    }
                }
            }
        }
    }
}
