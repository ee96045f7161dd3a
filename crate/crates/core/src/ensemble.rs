//! Ensemble extended Kalman-Bucy filter (perturbed-observation form), the
//! reference system driven by the exact EKF statistics, and the error
//! functional comparing the two.
//!
//! Particles are stored column-wise in an `r1 x N` matrix. Every particle
//! update is a fixed-order loop over its own column, and the sample
//! statistics are accumulated in a canonical order (particles sorted
//! lexicographically), so results do not depend on particle storage order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ekf::{advance, riccati_rhs, EkfState};
use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{simulate_truth, FilteringProblem, TimeGrid};
use crate::rng::{self, fill_brownian, standard_normal, Role};

/// Brownian increments for one step: column `i` belongs to particle `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleNoise {
    pub dw: DMatrix<f64>,
    pub dv: DMatrix<f64>,
}

impl ParticleNoise {
    pub fn zeros(dim: usize, obs_dim: usize, n: usize) -> Self {
        Self { dw: DMatrix::zeros(dim, n), dv: DMatrix::zeros(obs_dim, n) }
    }

    pub fn for_problem(problem: &FilteringProblem, n: usize) -> Self {
        Self::zeros(problem.dim(), problem.obs_dim(), n)
    }

    /// Particle `i` draws its signal increment, then its observation increment, from `streams[i]`.
    pub fn draw<R: Rng>(&mut self, streams: &mut [R], dt: f64) {
        let (r1, r2) = (self.dw.nrows(), self.dv.nrows());
        let (dw, dv) = (self.dw.as_mut_slice(), self.dv.as_mut_slice());
        for (i, rng) in streams.iter_mut().enumerate() {
            fill_brownian(rng, dt, &mut dw[i * r1..(i + 1) * r1]);
            fill_brownian(rng, dt, &mut dv[i * r2..(i + 1) * r2]);
        }
    }
}

/// `x0_mean + P0^{1/2} z`, with `z` drawn from each particle's own stream.
pub fn initial_particles<R: Rng>(problem: &FilteringProblem, streams: &mut [R]) -> DMatrix<f64> {
    let r1 = problem.dim();
    let mut out = DMatrix::zeros(r1, streams.len());
    let mut z = DVector::zeros(r1);
    for (i, rng) in streams.iter_mut().enumerate() {
        for v in z.iter_mut() {
            *v = standard_normal(rng);
        }
        let x = &problem.x0_mean + problem.p0_sqrt() * &z;
        out.column_mut(i).copy_from(&x);
    }
    out
}

/// Per-step affine map shared by all particles:
/// `x <- x + H (x - c) + b + L1 dW - K L2 dV`.
struct ParticleMap {
    h: DMatrix<f64>,
    b: DVector<f64>,
    l1: DMatrix<f64>,
    kl2: DMatrix<f64>,
}

impl ParticleMap {
    /// Linearization center `c`, gain covariance `cov` (gain `K = cov B'R2^{-1}`).
    fn new(center: &DVector<f64>, cov: &DMatrix<f64>, dy: &DVector<f64>, dt: f64, problem: &FilteringProblem) -> Self {
        let (signal, sensor) = (&problem.signal, &problem.sensor);
        let drift = signal.drift();
        let a = drift.eval(center);
        let j = drift.jacobian(center);
        let k = cov * sensor.bt_r2inv();
        let cs = cov * sensor.s();
        let h = (j - &cs) * dt;
        let b = (a - &cs * center) * dt + &k * dy;
        let kl2 = &k * sensor.r2_sqrt();
        Self { h, b, l1: signal.r1_sqrt().clone(), kl2 }
    }

    fn apply(&self, particles: &mut DMatrix<f64>, center: &DVector<f64>, noise: &ParticleNoise) {
        let (r1, r2) = (self.h.nrows(), self.kl2.ncols());
        let n = particles.ncols();
        let (dw, dv) = (noise.dw.as_slice(), noise.dv.as_slice());
        let xs = particles.as_mut_slice();
        let mut d = vec![0.0; r1];
        for i in 0..n {
            let x = &mut xs[i * r1..(i + 1) * r1];
            let (w, v) = (&dw[i * r1..(i + 1) * r1], &dv[i * r2..(i + 1) * r2]);
            for k in 0..r1 {
                d[k] = x[k] - center[k];
            }
            for k in 0..r1 {
                let mut acc = x[k] + self.b[k];
                for j in 0..r1 {
                    acc += self.h[(k, j)] * d[j] + self.l1[(k, j)] * w[j];
                }
                for j in 0..r2 {
                    acc -= self.kl2[(k, j)] * v[j];
                }
                x[k] = acc;
            }
        }
    }
}

fn lexicographic(particles: &DMatrix<f64>, a: usize, b: usize) -> std::cmp::Ordering {
    let (ca, cb) = (particles.column(a), particles.column(b));
    for (x, y) in ca.iter().zip(cb.iter()) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

/// Sample mean and `(N-1)^{-1}`-normalized covariance (zero for `N = 1`),
/// summed in lexicographic particle order. `order` is a reusable permutation
/// buffer; a stable sort keeps re-sorting cheap when the order barely changes.
fn sample_statistics(particles: &DMatrix<f64>, order: &mut Vec<usize>) -> (DVector<f64>, DMatrix<f64>) {
    let (r1, n) = particles.shape();
    if order.len() != n {
        *order = (0..n).collect();
    }
    order.sort_by(|&a, &b| lexicographic(particles, a, b));
    let mut m = DVector::zeros(r1);
    for &i in order.iter() {
        for k in 0..r1 {
            m[k] += particles[(k, i)];
        }
    }
    m /= n as f64;
    let mut p = DMatrix::zeros(r1, r1);
    if n > 1 {
        let mut d = vec![0.0; r1];
        for &i in order.iter() {
            for k in 0..r1 {
                d[k] = particles[(k, i)] - m[k];
            }
            for k in 0..r1 {
                for l in k..r1 {
                    p[(k, l)] += d[k] * d[l];
                }
            }
        }
        let scale = 1.0 / (n - 1) as f64;
        for k in 0..r1 {
            for l in k..r1 {
                let v = p[(k, l)] * scale;
                p[(k, l)] = v;
                p[(l, k)] = v;
            }
        }
    }
    (m, p)
}

/// N-particle ensemble with its sample mean `m` and covariance `p`.
#[derive(Clone, Debug)]
pub struct EnsembleState {
    particles: DMatrix<f64>,
    m: DVector<f64>,
    p: DMatrix<f64>,
    t: f64,
    order: Vec<usize>,
}

impl PartialEq for EnsembleState {
    fn eq(&self, other: &Self) -> bool {
        self.particles == other.particles && self.m == other.m && self.p == other.p && self.t == other.t
    }
}

impl EnsembleState {
    pub fn new(particles: DMatrix<f64>, t: f64) -> Result<Self> {
        if particles.ncols() == 0 {
            return Err(Error::EmptyEnsemble);
        }
        let mut order = Vec::new();
        let (m, p) = sample_statistics(&particles, &mut order);
        let state = Self { particles, m, p, t, order };
        state.check_finite()?;
        Ok(state)
    }

    /// Ensemble of `n` particles drawn from the initial law using `streams`.
    pub fn sample<R: Rng>(problem: &FilteringProblem, streams: &mut [R]) -> Result<Self> {
        Self::new(initial_particles(problem, streams), 0.0)
    }

    pub fn n(&self) -> usize {
        self.particles.ncols()
    }
    pub fn dim(&self) -> usize {
        self.particles.nrows()
    }
    pub fn particles(&self) -> &DMatrix<f64> {
        &self.particles
    }
    pub fn m(&self) -> &DVector<f64> {
        &self.m
    }
    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }
    pub fn t(&self) -> f64 {
        self.t
    }

    /// `p + theta Id`.
    pub fn gain_covariance(&self, theta: f64) -> DMatrix<f64> {
        let r1 = self.dim();
        &self.p + DMatrix::identity(r1, r1) * theta
    }

    fn check_finite(&self) -> Result<()> {
        if self.m.iter().chain(self.p.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(self.t))
        }
    }

    /// Synchronous Euler step: every particle uses the pre-step `(m, p)`.
    /// Returns [`Error::NonFinite`] once any coordinate overflows.
    pub fn step(
        &mut self,
        dy: &DVector<f64>,
        noise: &ParticleNoise,
        dt: f64,
        problem: &FilteringProblem,
        theta: f64,
    ) -> Result<()> {
        let map = ParticleMap::new(&self.m, &self.gain_covariance(theta), dy, dt, problem);
        map.apply(&mut self.particles, &self.m, noise);
        self.t += dt;
        let (m, p) = sample_statistics(&self.particles, &mut self.order);
        self.m = m;
        self.p = p;
        self.check_finite()
    }
}

/// Functional form of [`EnsembleState::step`].
pub fn enkf_step(
    state: &EnsembleState,
    dy: &DVector<f64>,
    noise: &ParticleNoise,
    dt: f64,
    problem: &FilteringProblem,
    theta: f64,
) -> Result<EnsembleState> {
    let mut next = state.clone();
    next.step(dy, noise, dt, problem, theta)?;
    Ok(next)
}

/// Particles driven by the exact EKF statistics instead of their own.
#[derive(Clone, Debug)]
pub struct ZetaState {
    particles: DMatrix<f64>,
    pub ekf: EkfState,
    order: Vec<usize>,
}

impl ZetaState {
    pub fn new(particles: DMatrix<f64>, ekf: EkfState) -> Result<Self> {
        if particles.ncols() == 0 {
            return Err(Error::EmptyEnsemble);
        }
        Ok(Self { particles, ekf, order: Vec::new() })
    }

    /// Reference system starting from exactly the particles of `ensemble`.
    pub fn paired_with(ensemble: &EnsembleState, ekf: EkfState) -> Result<Self> {
        if (ensemble.t() - ekf.t).abs() > 1e-9 {
            return Err(Error::TimeMismatch(ensemble.t(), ekf.t));
        }
        Self::new(ensemble.particles().clone(), ekf)
    }

    pub fn particles(&self) -> &DMatrix<f64> {
        &self.particles
    }
    pub fn t(&self) -> f64 {
        self.ekf.t
    }

    pub fn step(&mut self, dy: &DVector<f64>, noise: &ParticleNoise, dt: f64, problem: &FilteringProblem) {
        let map = ParticleMap::new(&self.ekf.xhat, &self.ekf.p, dy, dt, problem);
        map.apply(&mut self.particles, &self.ekf.xhat, noise);
        advance(&mut self.ekf, dy, dt, problem);
    }

    /// Sample mean and covariance of the particles (canonical order).
    pub fn sample_mean_cov(&mut self) -> (DVector<f64>, DMatrix<f64>) {
        sample_statistics(&self.particles, &mut self.order)
    }
}

pub fn zeta_step(
    state: &ZetaState,
    dy: &DVector<f64>,
    noise: &ParticleNoise,
    dt: f64,
    problem: &FilteringProblem,
) -> ZetaState {
    let mut next = state.clone();
    next.step(dy, noise, dt, problem);
    next
}

/// `||m - xhat||^2 + ||p - P||_F^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XiError {
    pub value: f64,
}

pub fn xi_error(state: &EnsembleState, ekf: &EkfState) -> Result<XiError> {
    if (state.t() - ekf.t).abs() > 1e-9 * state.t().abs().max(1.0) {
        return Err(Error::TimeMismatch(state.t(), ekf.t));
    }
    let value = (state.m() - &ekf.xhat).norm_squared() + (state.p() - &ekf.p).norm_squared();
    Ok(XiError { value })
}

/// Rescaled martingale increments of the sample mean (`sqrt(N)`) and sample
/// covariance (`sqrt(N-1)`) over one step, with inflation off.
pub fn fluctuation_increments(
    pre: &EnsembleState,
    post: &EnsembleState,
    dy: &DVector<f64>,
    dt: f64,
    problem: &FilteringProblem,
) -> (DVector<f64>, DMatrix<f64>) {
    let (signal, sensor) = (&problem.signal, &problem.sensor);
    let drift = signal.drift();
    let (m, p) = (pre.m(), pre.p());
    let innovation = dy - sensor.b() * m * dt;
    let mean_drift = drift.eval(m) * dt + p * (sensor.bt_r2inv() * innovation);
    let dm_bar = (post.m() - m - mean_drift) * (pre.n() as f64).sqrt();
    let cov_drift = riccati_rhs(p, &drift.jacobian(m), signal.r1(), sensor.s()) * dt;
    let dm = (post.p() - p - cov_drift) * ((pre.n().max(1) - 1) as f64).sqrt();
    (dm_bar, dm)
}

/// Column names of [`EnsembleRecord::csv_row`].
pub fn ensemble_csv_header(dim: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..dim).map(|i| format!("m_{i}")));
    h.extend(linalg::upper_triangle_labels("p", dim));
    h.extend(["trace_p", "lambda_min_p", "xi", "blowup"].map(String::from));
    h
}

/// Summary of an ensemble at one grid time.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleRecord {
    pub t: f64,
    pub m: DVector<f64>,
    pub p: DMatrix<f64>,
    pub lambda_min_p: f64,
    pub xi: Option<f64>,
    pub blow_up: bool,
}

impl EnsembleRecord {
    pub fn of(state: &EnsembleState, ekf: Option<&EkfState>) -> Self {
        Self {
            t: state.t(),
            m: state.m().clone(),
            p: state.p().clone(),
            lambda_min_p: linalg::lambda_min(state.p()),
            xi: ekf.and_then(|e| xi_error(state, e).ok()).map(|x| x.value),
            blow_up: false,
        }
    }

    /// `xi` is NaN when no filter is paired; `blowup` is 0 or 1.
    pub fn csv_row(&self) -> Vec<f64> {
        let mut r = vec![self.t];
        r.extend(self.m.iter());
        r.extend(linalg::upper_triangle(&self.p));
        r.push(self.p.trace());
        r.push(self.lambda_min_p);
        r.push(self.xi.unwrap_or(f64::NAN));
        r.push(if self.blow_up { 1.0 } else { 0.0 });
        r
    }
}

/// Growth diagnostics of an ensemble run (no pass/fail claim).
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct DivergenceReport {
    pub n: usize,
    pub max_norm_m: f64,
    pub min_lambda_min_p: f64,
    pub max_lambda_min_p: f64,
    pub blow_up: bool,
    pub blow_up_time: Option<f64>,
    /// Least-squares slope of `ln ||m_t||` over the second half of the run.
    pub growth_rate: f64,
    pub records: Vec<(f64, f64, f64)>,
}

/// Runs one ensemble of size `n` against a simulated truth and records
/// `(t, ||m_t||, lambda_min(p_t))` at every step.
pub fn divergence_probe(
    problem: &FilteringProblem,
    n: usize,
    grid: TimeGrid,
    seed: u64,
    theta: f64,
) -> Result<DivergenceReport> {
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let truth = simulate_truth(problem, grid, &mut rng::stream(seed, Role::Truth, 0, 0));
    let mut streams: Vec<ChaCha8Rng> = rng::streams(seed, Role::Particle, 0, n);
    let mut state = EnsembleState::sample(problem, &mut streams)?;
    let mut noise = ParticleNoise::for_problem(problem, n);
    let mut records = vec![(0.0, state.m().norm(), linalg::lambda_min(state.p()))];
    let mut blow_up_time = None;
    for dy in &truth.increments {
        noise.draw(&mut streams, grid.dt);
        if state.step(dy, &noise, grid.dt, problem, theta).is_err() {
            blow_up_time = Some(state.t());
            break;
        }
        records.push((state.t(), state.m().norm(), linalg::lambda_min(state.p())));
    }
    let max_norm_m = records.iter().map(|r| r.1).fold(0.0, f64::max);
    let min_lambda_min_p = records.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let max_lambda_min_p = records.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    let half = &records[records.len() / 2..];
    let pts: Vec<(f64, f64)> = half.iter().filter(|r| r.1 > 0.0).map(|r| (r.0, r.1.ln())).collect();
    let growth_rate = least_squares_slope(&pts);
    Ok(DivergenceReport {
        n,
        max_norm_m,
        min_lambda_min_p,
        max_lambda_min_p,
        blow_up: blow_up_time.is_some(),
        blow_up_time,
        growth_rate,
        records,
    })
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let k = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
