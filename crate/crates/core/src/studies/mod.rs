//! Monte Carlo experiments shared by the CLI and the acceptance suite.
//!
//! Every experiment is a pure function of `(problem, settings, seed)`.
//! Independent runs are spread over the rayon pool and collected in run
//! order, and all reductions happen sequentially afterwards, so results are
//! bit-identical for any thread count.

pub mod testbeds;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ekf::{advance, run_ekf, EkfState};
use crate::ensemble::{fluctuation_increments, xi_error, EnsembleRecord, EnsembleState, ParticleNoise, ZetaState};
use crate::error::{Error, Result};
use crate::mckean::{mckean_step, McKeanState};
use crate::metrics::{
    chaos_rate_fit, concentration_check, qv_check, qv_cross_check, sup_over_time, ConcentrationReport,
    ConcentrationSample, QvReport, RateFit,
};
use crate::models::{simulate_truth, FilteringProblem, TimeGrid, TruthPath};
use crate::rng::{self, fill_brownian, gaussian, Role};
use crate::stability::{compute_report, gamma_functional};

fn step_index(grid: &TimeGrid, t: f64) -> Result<usize> {
    if !(t >= 0.0) || t > grid.horizon() + 0.5 * grid.dt {
        return Err(Error::InvalidArgument(format!("time {t} is outside [0, {}]", grid.horizon())));
    }
    Ok(grid.index_of(t))
}

fn truth(problem: &FilteringProblem, grid: TimeGrid, seed: u64, run: u64) -> TruthPath {
    simulate_truth(problem, grid, &mut rng::stream(seed, Role::Truth, run, 0))
}

/// Hidden path and EKF trajectory on the same grid.
pub fn ekf_run(problem: &FilteringProblem, grid: TimeGrid, seed: u64) -> Result<(TruthPath, Vec<EkfState>)> {
    let path = truth(problem, grid, seed, 0);
    let filter = run_ekf(problem, &path.increments, grid.dt)?;
    Ok((path, filter))
}

/// Ensemble trajectory paired with the EKF on the same observations.
#[derive(Clone, Debug)]
pub struct EnsembleRun {
    pub records: Vec<EnsembleRecord>,
    pub blow_up: bool,
}

pub fn enkf_run(problem: &FilteringProblem, grid: TimeGrid, n: usize, seed: u64, theta: f64) -> Result<EnsembleRun> {
    let path = truth(problem, grid, seed, 0);
    let mut streams = rng::streams(seed, Role::Particle, 0, n);
    let mut state = EnsembleState::sample(problem, &mut streams)?;
    let mut ekf = EkfState::initial(problem);
    let mut noise = ParticleNoise::for_problem(problem, n);
    let mut records = vec![EnsembleRecord::of(&state, Some(&ekf))];
    for dy in &path.increments {
        noise.draw(&mut streams, grid.dt);
        let stepped = state.step(dy, &noise, grid.dt, problem, theta);
        advance(&mut ekf, dy, grid.dt, problem);
        if stepped.is_err() {
            records.push(EnsembleRecord {
                t: state.t(),
                m: state.m().clone(),
                p: state.p().clone(),
                lambda_min_p: f64::NAN,
                xi: None,
                blow_up: true,
            });
            return Ok(EnsembleRun { records, blow_up: true });
        }
        records.push(EnsembleRecord::of(&state, Some(&ekf)));
    }
    Ok(EnsembleRun { records, blow_up: false })
}

/// Riccati trace bound checked along simulated filter paths.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceBoundStudy {
    pub paths: usize,
    pub points: usize,
    /// `max (tr P_t - bound_t)`, negative when the bound holds everywhere.
    pub max_excess: f64,
    pub violations: usize,
}

/// Checks `tr P_t <= e^{-lambda t} tr P0 + tr R / lambda + slack dt (tr R + kappa tr(P_t)^2)`.
pub fn trace_bound_study(problem: &FilteringProblem, grid: TimeGrid, paths: usize, seed: u64, slack: f64) -> Result<TraceBoundStudy> {
    let (lambda, kappa) = (problem.signal.lambda_da(), problem.signal.kappa_da());
    let trace_r = problem.signal.r1().trace();
    let trace_p0 = problem.p0.trace();
    let per_path: Vec<Result<(f64, usize)>> = (0..paths as u64)
        .into_par_iter()
        .map(|run| {
            let path = truth(problem, grid, seed, run);
            let filter = run_ekf(problem, &path.increments, grid.dt)?;
            let mut worst = f64::NEG_INFINITY;
            let mut bad = 0;
            for f in &filter {
                let tr = f.p.trace();
                let bound = crate::stability::trace_bound(f.t, trace_p0, trace_r, lambda)
                    + slack * grid.dt * (trace_r + kappa * tr * tr);
                worst = worst.max(tr - bound);
                bad += usize::from(tr > bound);
            }
            Ok((worst, bad))
        })
        .collect();
    let mut out = TraceBoundStudy { paths, points: paths * (grid.steps + 1), max_excess: f64::NEG_INFINITY, violations: 0 };
    for r in per_path {
        let (w, b) = r?;
        out.max_excess = out.max_excess.max(w);
        out.violations += b;
    }
    Ok(out)
}

/// Pathwise contraction of EKF-diffusions driven by common noise.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionStudy {
    pub paths: usize,
    pub lambda: f64,
    pub times: Vec<f64>,
    /// Largest `||Xbar_t - Zbar_t||^2 / (e^{-lambda t} ||Xbar_0 - Zbar_0||^2 (1 + slack dt t))`
    /// over paths and grid points, for two legs slaved to one filter.
    pub matched_max_ratio: f64,
    pub matched_violations: usize,
    pub matched_mean_gap_sq: Vec<f64>,
    /// `sqrt(mean ||Xbar_t - Zbar_t||^2)` for legs slaved to filters started
    /// from different statistics; an upper bound on the 2-Wasserstein distance.
    pub mismatched_coupled_w2: Vec<f64>,
    /// Fitted exponential decay rate of `mismatched_coupled_w2` over the second half of the run.
    pub mismatched_decay_rate: f64,
}

/// `offset` shifts the mean and `scale` multiplies the covariance of the
/// second filter in the mismatched pair.
pub fn contraction_study(
    problem: &FilteringProblem,
    grid: TimeGrid,
    paths: usize,
    seed: u64,
    slack: f64,
    offset: f64,
    scale: f64,
) -> Result<ContractionStudy> {
    let lambda = problem.signal.lambda_da();
    let r1 = problem.dim();
    let shifted = problem.with_initial(problem.x0_mean.add_scalar(offset), &problem.p0 * scale)?;
    let times: Vec<f64> = (0..=grid.steps).map(|k| grid.time(k)).collect();
    type PathOut = (f64, usize, Vec<f64>, Vec<f64>);
    let per_path: Vec<PathOut> = (0..paths as u64)
        .into_par_iter()
        .map(|run| {
            let path = truth(problem, grid, seed, run);
            let mut init_a = rng::stream(seed, Role::Coupling, run, 0);
            let mut init_b = rng::stream(seed, Role::Coupling, run, 1);
            let mut shared = rng::stream(seed, Role::Coupling, run, 2);
            let za = rng::normal_vector(&mut init_a, r1);
            let zb = rng::normal_vector(&mut init_b, r1);
            let ekf = EkfState::initial(problem);
            let ekf_shifted = EkfState::initial(&shifted);
            let mut a = McKeanState::new(&problem.x0_mean + problem.p0_sqrt() * &za, ekf.clone());
            let mut b = McKeanState::new(&problem.x0_mean + problem.p0_sqrt() * &zb, ekf);
            let mut c = McKeanState::new(&shifted.x0_mean + shifted.p0_sqrt() * &zb, ekf_shifted);
            let gap0 = (&a.xbar - &b.xbar).norm_squared();
            let mut worst = 0.0f64;
            let mut bad = 0;
            let mut matched = Vec::with_capacity(grid.steps + 1);
            let mut mismatched = Vec::with_capacity(grid.steps + 1);
            let mut dw = DVector::zeros(r1);
            let mut dv = DVector::zeros(problem.obs_dim());
            for k in 0..=grid.steps {
                let t = grid.time(k);
                let gap = (&a.xbar - &b.xbar).norm_squared();
                let ratio = gap / ((-lambda * t).exp() * gap0 * (1.0 + slack * grid.dt * t));
                worst = worst.max(ratio);
                bad += usize::from(ratio > 1.0);
                matched.push(gap);
                mismatched.push((&a.xbar - &c.xbar).norm_squared());
                if k == grid.steps {
                    break;
                }
                fill_brownian(&mut shared, grid.dt, dw.as_mut_slice());
                fill_brownian(&mut shared, grid.dt, dv.as_mut_slice());
                let dy = &path.increments[k];
                a = mckean_step(&a, dy, &dw, &dv, grid.dt, problem);
                b = mckean_step(&b, dy, &dw, &dv, grid.dt, problem);
                c = mckean_step(&c, dy, &dw, &dv, grid.dt, problem);
            }
            (worst, bad, matched, mismatched)
        })
        .collect();
    let n = paths as f64;
    let mut matched_mean = vec![0.0; grid.steps + 1];
    let mut mismatched_mean = vec![0.0; grid.steps + 1];
    let mut worst = 0.0f64;
    let mut bad = 0;
    for (w, b, m, mm) in &per_path {
        worst = worst.max(*w);
        bad += b;
        for k in 0..=grid.steps {
            matched_mean[k] += m[k] / n;
            mismatched_mean[k] += mm[k] / n;
        }
    }
    let w2: Vec<f64> = mismatched_mean.iter().map(|v| v.sqrt()).collect();
    let half = grid.steps / 2;
    let pts: Vec<(f64, f64)> = (half..=grid.steps).filter(|&k| w2[k] > 0.0).map(|k| (times[k], w2[k].ln())).collect();
    Ok(ContractionStudy {
        paths,
        lambda,
        times,
        matched_max_ratio: worst,
        matched_violations: bad,
        matched_mean_gap_sq: matched_mean,
        mismatched_coupled_w2: w2,
        mismatched_decay_rate: -slope(&pts),
    })
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Empirical statistics of independent EKF-diffusion copies against the filter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McKeanConsistency {
    pub copies: usize,
    pub t: f64,
    pub xhat: Vec<f64>,
    /// Row-major filter covariance.
    pub p: Vec<f64>,
    pub mean: Vec<f64>,
    /// Row-major sample covariance of the copies.
    pub cov: Vec<f64>,
    /// `max_i |mean_i - xhat_i| / (4 sqrt(P_ii / M))`.
    pub mean_ratio: f64,
    /// `max_ij |cov_ij - P_ij| / (4 sqrt((P_ii P_jj + P_ij^2) / M))`.
    pub cov_ratio: f64,
}

/// `copies` independent copies conditioned on one observation path, each
/// slaved to the exact filter statistics.
pub fn mckean_consistency(problem: &FilteringProblem, grid: TimeGrid, copies: usize, seed: u64, t: f64) -> Result<McKeanConsistency> {
    let last = step_index(&grid, t)?;
    if copies < 2 {
        return Err(Error::InvalidArgument("need at least 2 copies".into()));
    }
    let path = truth(problem, grid, seed, 0);
    let mut streams = rng::streams(seed, Role::Particle, 0, copies);
    let start = crate::ensemble::initial_particles(problem, &mut streams);
    let mut zeta = ZetaState::new(start, EkfState::initial(problem))?;
    let mut noise = ParticleNoise::for_problem(problem, copies);
    for dy in &path.increments[..last] {
        noise.draw(&mut streams, grid.dt);
        zeta.step(dy, &noise, grid.dt, problem);
    }
    let (mean, cov) = zeta.sample_mean_cov();
    let (xhat, p) = (&zeta.ekf.xhat, &zeta.ekf.p);
    let m = copies as f64;
    let r1 = problem.dim();
    let mut mean_ratio = 0.0f64;
    let mut cov_ratio = 0.0f64;
    for i in 0..r1 {
        mean_ratio = mean_ratio.max((mean[i] - xhat[i]).abs() / (4.0 * (p[(i, i)] / m).sqrt()));
        for j in 0..r1 {
            let sd = ((p[(i, i)] * p[(j, j)] + p[(i, j)].powi(2)) / m).sqrt();
            cov_ratio = cov_ratio.max((cov[(i, j)] - p[(i, j)]).abs() / (4.0 * sd));
        }
    }
    let row_major = |a: &DMatrix<f64>| a.transpose().as_slice().to_vec();
    Ok(McKeanConsistency {
        copies,
        t: zeta.t(),
        xhat: xhat.as_slice().to_vec(),
        p: row_major(p),
        mean: mean.as_slice().to_vec(),
        cov: row_major(&cov),
        mean_ratio,
        cov_ratio,
    })
}

/// Mean squared error of a one-particle ensemble against the hidden signal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingleParticleStudy {
    pub reps: usize,
    pub t: f64,
    pub mean_sq_error: f64,
    pub std_error: f64,
}

pub fn single_particle_study(problem: &FilteringProblem, grid: TimeGrid, reps: usize, seed: u64, t: f64) -> Result<SingleParticleStudy> {
    let last = step_index(&grid, t)?;
    let errors: Vec<Result<f64>> = (0..reps as u64)
        .into_par_iter()
        .map(|run| {
            let path = truth(problem, grid, seed, run);
            let mut streams = rng::streams(seed, Role::Particle, run, 1);
            let mut state = EnsembleState::sample(problem, &mut streams)?;
            let mut noise = ParticleNoise::for_problem(problem, 1);
            for dy in &path.increments[..last] {
                noise.draw(&mut streams, grid.dt);
                state.step(dy, &noise, grid.dt, problem, 0.0)?;
            }
            Ok((state.m() - &path.states[last]).norm_squared())
        })
        .collect();
    let errors = errors.into_iter().collect::<Result<Vec<f64>>>()?;
    let k = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / k;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(SingleParticleStudy { reps, t: grid.time(last), mean_sq_error: mean, std_error: (var / k).sqrt() })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NamedQv {
    pub name: String,
    #[serde(flatten)]
    pub report: QvReport,
}

/// Quadratic-variation z-scores of the ensemble fluctuation martingales on one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FluctuationCheck {
    pub n: usize,
    pub steps: usize,
    pub checks: Vec<NamedQv>,
    pub max_abs_z: f64,
}

/// Brackets: `R + pSp` for the mean martingale, the four-term product
/// formula for the covariance martingale, zero for their cross-variation.
pub fn fluctuation_check(problem: &FilteringProblem, grid: TimeGrid, n: usize, seed: u64) -> Result<FluctuationCheck> {
    if n < 2 {
        return Err(Error::InvalidArgument("fluctuation check needs N >= 2".into()));
    }
    let r1 = problem.dim();
    let path = truth(problem, grid, seed, 0);
    let mut streams = rng::streams(seed, Role::Particle, 0, n);
    let mut state = EnsembleState::sample(problem, &mut streams)?;
    let mut noise = ParticleNoise::for_problem(problem, n);
    let pairs: Vec<(usize, usize)> = (0..r1).flat_map(|k| (k..r1).map(move |l| (k, l))).collect();
    let mut dm_bar: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.steps); r1];
    let mut dm: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.steps); pairs.len()];
    let mut q_diag: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.steps); r1];
    let mut bracket: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.steps); pairs.len()];
    for dy in &path.increments {
        let pre = state.clone();
        let p = pre.p();
        let q = problem.signal.r1() + p * problem.sensor.s() * p;
        noise.draw(&mut streams, grid.dt);
        state.step(dy, &noise, grid.dt, problem, 0.0)?;
        let (d_mean, d_cov) = fluctuation_increments(&pre, &state, dy, grid.dt, problem);
        for k in 0..r1 {
            dm_bar[k].push(d_mean[k]);
            q_diag[k].push(q[(k, k)]);
        }
        for (idx, &(k, l)) in pairs.iter().enumerate() {
            dm[idx].push(d_cov[(k, l)]);
            bracket[idx].push(q[(k, k)] * p[(l, l)] + q[(l, l)] * p[(k, k)] + 2.0 * q[(l, k)] * p[(k, l)]);
        }
    }
    let mut checks = Vec::new();
    for k in 0..r1 {
        checks.push(NamedQv { name: format!("mean[{k}]"), report: qv_check(&dm_bar[k], &q_diag[k], grid.dt)? });
    }
    for (idx, &(k, l)) in pairs.iter().enumerate() {
        checks.push(NamedQv { name: format!("cov[{k},{l}]"), report: qv_check(&dm[idx], &bracket[idx], grid.dt)? });
    }
    for (idx, &(k, l)) in pairs.iter().enumerate() {
        for j in 0..r1 {
            let report = qv_cross_check(&dm[idx], &dm_bar[j], &bracket[idx], &q_diag[j], grid.dt)?;
            checks.push(NamedQv { name: format!("cross cov[{k},{l}] x mean[{j}]"), report });
        }
    }
    let max_abs_z = checks.iter().map(|c| c.report.z.abs()).fold(0.0, f64::max);
    Ok(FluctuationCheck { n, steps: grid.steps, checks, max_abs_z })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChaosSettings {
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub theta: f64,
    pub t_burn: f64,
    /// Time at which the ensemble is compared particle by particle with the
    /// reference system driven by the exact filter statistics.
    pub pair_time: Option<f64>,
}

/// Particle-level distance between the ensemble and its reference system.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParticleChaos {
    pub t: f64,
    /// `E ||xi^i_t - zeta^i_t||^2`, averaged over particles and repetitions.
    pub mean_sq_gap: Vec<f64>,
    pub fit: RateFit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChaosStudy {
    pub n: Vec<usize>,
    pub reps: usize,
    /// `sup_t E[Xi_t]` over grid points with `t >= t_burn`.
    pub sup_mean_xi: Vec<f64>,
    /// `sqrt(sup_mean_xi)`, the statistic entering the rate fit.
    pub statistic: Vec<f64>,
    pub fit: RateFit,
    pub particle: Option<ParticleChaos>,
    #[serde(skip)]
    pub times: Vec<f64>,
    /// `E[Xi_t]` per `N` and grid point.
    #[serde(skip)]
    pub mean_xi: Vec<Vec<f64>>,
}

struct ChaosRun {
    xi: Vec<f64>,
    pair_gap: Option<f64>,
}

fn chaos_run(problem: &FilteringProblem, grid: TimeGrid, n: usize, seed: u64, run: u64, theta: f64, pair_step: Option<usize>) -> Result<ChaosRun> {
    let path = truth(problem, grid, seed, run);
    let mut streams: Vec<ChaCha8Rng> = rng::streams(seed, Role::Particle, run, n);
    let mut state = EnsembleState::sample(problem, &mut streams)?;
    let mut ekf = EkfState::initial(problem);
    let mut zeta = match pair_step {
        Some(_) => Some(ZetaState::paired_with(&state, ekf.clone())?),
        None => None,
    };
    let mut noise = ParticleNoise::for_problem(problem, n);
    let mut xi = Vec::with_capacity(grid.steps + 1);
    xi.push(xi_error(&state, &ekf)?.value);
    let mut pair_gap = None;
    for (k, dy) in path.increments.iter().enumerate() {
        if pair_step == Some(k) {
            pair_gap = zeta.take().map(|z| mean_column_gap(state.particles(), z.particles()));
        }
        noise.draw(&mut streams, grid.dt);
        state.step(dy, &noise, grid.dt, problem, theta)?;
        advance(&mut ekf, dy, grid.dt, problem);
        if let Some(z) = zeta.as_mut() {
            z.step(dy, &noise, grid.dt, problem);
        }
        xi.push(xi_error(&state, &ekf)?.value);
    }
    if pair_step == Some(grid.steps) {
        pair_gap = zeta.take().map(|z| mean_column_gap(state.particles(), z.particles()));
    }
    Ok(ChaosRun { xi, pair_gap })
}

fn mean_column_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let total: f64 = a.column_iter().zip(b.column_iter()).map(|(x, y)| (x - y).norm_squared()).sum();
    total / a.ncols() as f64
}

/// Sweeps the ensemble size. Run `r` uses the same hidden path and the same
/// leading particle streams for every `N`.
pub fn chaos_study(problem: &FilteringProblem, grid: TimeGrid, settings: &ChaosSettings, seed: u64) -> Result<ChaosStudy> {
    if settings.reps == 0 || settings.n_list.iter().any(|&n| n < 2) {
        return Err(Error::InvalidArgument("chaos study needs reps >= 1 and N >= 2".into()));
    }
    let pair_step = settings.pair_time.map(|t| step_index(&grid, t)).transpose()?;
    let times: Vec<f64> = (0..=grid.steps).map(|k| grid.time(k)).collect();
    let reps = settings.reps as f64;
    let mut sup_mean_xi = Vec::new();
    let mut mean_xi = Vec::new();
    let mut pair_gaps = Vec::new();
    for &n in &settings.n_list {
        let runs: Vec<Result<ChaosRun>> = (0..settings.reps as u64)
            .into_par_iter()
            .map(|run| chaos_run(problem, grid, n, seed, run, settings.theta, pair_step))
            .collect();
        let mut curve = vec![0.0; grid.steps + 1];
        let mut gap = 0.0;
        for run in runs {
            let run = run?;
            for (c, v) in curve.iter_mut().zip(&run.xi) {
                *c += v / reps;
            }
            gap += run.pair_gap.unwrap_or(0.0) / reps;
        }
        sup_mean_xi.push(sup_over_time(&times, &curve, settings.t_burn).ok_or_else(|| {
            Error::InvalidArgument(format!("t_burn {} leaves no grid points", settings.t_burn))
        })?);
        mean_xi.push(curve);
        pair_gaps.push(gap);
    }
    let statistic: Vec<f64> = sup_mean_xi.iter().map(|v| v.sqrt()).collect();
    let fit = chaos_rate_fit(&settings.n_list, &statistic)?;
    let particle = match pair_step {
        Some(k) => Some(ParticleChaos { t: grid.time(k), fit: chaos_rate_fit(&settings.n_list, &pair_gaps)?, mean_sq_gap: pair_gaps }),
        None => None,
    };
    Ok(ChaosStudy { n: settings.n_list.clone(), reps: settings.reps, sup_mean_xi, statistic, fit, particle, times, mean_xi })
}

/// Concentration events at time `t` over independent runs. The hidden signal
/// starts at `start`; the filter starts at the problem's `(x0_mean, P0)` and the
/// diffusion from a draw of `N(x0_mean, P0)`.
pub fn concentration_study(
    problem: &FilteringProblem,
    grid: TimeGrid,
    runs: usize,
    seed: u64,
    delta: f64,
    t: f64,
    start: &DVector<f64>,
) -> Result<ConcentrationReport> {
    let last = step_index(&grid, t)?;
    let pinned = problem.with_initial(start.clone(), DMatrix::zeros(problem.dim(), problem.dim()))?;
    let samples: Vec<ConcentrationSample> = (0..runs as u64)
        .into_par_iter()
        .map(|run| {
            let path = truth(&pinned, grid, seed, run);
            let mut own = rng::stream(seed, Role::Coupling, run, 0);
            let x0 = gaussian(&mut own, &problem.x0_mean, problem.p0_sqrt());
            let mut leg = McKeanState::new(x0, EkfState::initial(problem));
            let mut dw = DVector::zeros(problem.dim());
            let mut dv = DVector::zeros(problem.obs_dim());
            for dy in &path.increments[..last] {
                fill_brownian(&mut own, grid.dt, dw.as_mut_slice());
                fill_brownian(&mut own, grid.dt, dv.as_mut_slice());
                leg = mckean_step(&leg, dy, &dw, &dv, grid.dt, problem);
            }
            ConcentrationSample { signal: path.states[last].clone(), filter_mean: leg.ekf.xhat.clone(), diffusion: leg.xbar }
        })
        .collect();
    let report = compute_report(problem);
    let gap = (start - &problem.x0_mean).norm_squared();
    concentration_check(&samples, delta, grid.time(last), &report, gap, problem.p0.trace())
}

/// Pathwise and averaged behaviour of the Gamma functional.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaStudy {
    pub paths: usize,
    pub lambda_minus: f64,
    /// Grid points where `tr P_s <= tr P0 + 1/lambda_R`.
    pub premise_points: usize,
    /// Premise points where `-Gamma_A(s) > Lambda^-_Gamma`.
    pub bound_violations: usize,
    pub times: Vec<f64>,
    /// `E[exp(-int_0^t Gamma_A)]`.
    pub mean_inverse_exponential: Vec<f64>,
    /// `exp(Lambda^-_Gamma t)`.
    pub limit: Vec<f64>,
}

pub fn gamma_study(problem: &FilteringProblem, grid: TimeGrid, paths: usize, seed: u64, times: &[f64]) -> Result<GammaStudy> {
    let idx: Vec<usize> = times.iter().map(|&t| step_index(&grid, t)).collect::<Result<_>>()?;
    let lambda_minus = compute_report(problem).lambda_minus_gamma;
    let per_path: Vec<Result<(usize, usize, Vec<f64>)>> = (0..paths as u64)
        .into_par_iter()
        .map(|run| {
            let path = truth(problem, grid, seed, run);
            let filter = run_ekf(problem, &path.increments, grid.dt)?;
            let g = gamma_functional(&path.states, &filter, problem)?;
            let premise = g.premise.iter().filter(|p| **p).count();
            let bad = g.premise.iter().zip(&g.bound_holds).filter(|(p, b)| **p && !**b).count();
            Ok((premise, bad, idx.iter().map(|&k| (-g.integral[k]).exp()).collect()))
        })
        .collect();
    let mut out = GammaStudy {
        paths,
        lambda_minus,
        premise_points: 0,
        bound_violations: 0,
        times: idx.iter().map(|&k| grid.time(k)).collect(),
        mean_inverse_exponential: vec![0.0; idx.len()],
        limit: idx.iter().map(|&k| (lambda_minus * grid.time(k)).exp()).collect(),
    };
    for r in per_path {
        let (premise, bad, inv) = r?;
        out.premise_points += premise;
        out.bound_violations += bad;
        for (acc, v) in out.mean_inverse_exponential.iter_mut().zip(inv) {
            *acc += v / paths as f64;
        }
    }
    Ok(out)
}
