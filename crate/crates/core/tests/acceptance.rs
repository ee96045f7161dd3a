//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//! Tolerances are pinned as constants next to each check.

use std::f64::consts::{E, SQRT_2};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use enekf::ekf::run_ekf;
use enekf::ensemble::{initial_particles, EnsembleState, ParticleNoise};
use enekf::linalg::{lambda_min, sym_eigenvalues};
use enekf::models::{
    build_quadratic_langevin, simulate_truth, AffineDrift, FilteringProblem, QuadraticPotentialSpec, SensorModel,
    SignalModel, TimeGrid,
};
use enekf::rng::{stream, streams, Role};
use enekf::stability::compute_report;
use enekf::studies::{self, testbeds, ChaosSettings};
use nalgebra::{DMatrix, DVector};

const SEED: u64 = 20_240_611;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn grid(dt: f64, horizon: f64) -> TimeGrid {
    TimeGrid::new(dt, horizon).expect("valid grid")
}

/// Riccati solution of `dP/dt = 2aP + r - sP^2` in closed form.
fn scalar_riccati(a: f64, r: f64, s: f64, p0: f64, t: f64) -> f64 {
    let disc = (a * a + r * s).sqrt();
    let (hi, lo) = ((a + disc) / s, (a - disc) / s);
    let u = (p0 - hi) / (p0 - lo) * (-2.0 * disc * t).exp();
    (hi - lo * u) / (1.0 - u)
}

fn kalman_oracle() -> Outcome {
    const TOL: f64 = 1e-3;
    let root = SQRT_2 - 1.0;
    // independent check of the root of 2aP + r - sP^2 = 0 for (a, r, s) = (-1, 1, 1)
    assert!((-2.0 * root + 1.0 - root * root).abs() < 1e-15);
    let g = grid(1e-3, 20.0);
    let mut worst: f64 = 0.0;
    let mut worst_closed: f64 = 0.0;
    for p0 in [0.0, 1.0, 5.0] {
        let problem = testbeds::kalman(p0);
        let path = simulate_truth(&problem, g, &mut stream(SEED, Role::Truth, 0, 0));
        let filter = run_ekf(&problem, &path.increments, g.dt).unwrap();
        for f in &filter {
            let p = f.p[(0, 0)];
            worst_closed = worst_closed.max((p - scalar_riccati(-1.0, 1.0, 1.0, p0, f.t)).abs());
            if f.t >= 10.0 - 1e-9 {
                worst = worst.max((p - root).abs());
            }
        }
    }
    outcome(worst < TOL, format!("max |P_t - (sqrt2-1)| on [10,20] = {worst:.3e} < {TOL:e}; max gap to closed form on [0,20] = {worst_closed:.3e}"))
}

fn trace_bound() -> Outcome {
    const SLACK: f64 = 5.0;
    let s = studies::trace_bound_study(&testbeds::cubic(), grid(1e-3, 10.0), 100, SEED, SLACK).unwrap();
    outcome(
        s.violations == 0,
        format!("{} violations over {} points; max (trP - bound) = {:.3e}", s.violations, s.points, s.max_excess),
    )
}

fn contraction() -> Outcome {
    const SLACK: f64 = 10.0;
    let s = studies::contraction_study(&testbeds::quadratic(), grid(0.01, 10.0), 200, SEED, SLACK, 1.0, 2.0).unwrap();
    outcome(
        s.matched_violations == 0,
        format!(
            "max gap^2 / (e^(-lambda t) gap0^2 (1+10 dt t)) = {:.4} over 200 paths; mismatched coupled W2 decay rate {:.3}",
            s.matched_max_ratio, s.mismatched_decay_rate
        ),
    )
}

fn mckean_consistency() -> Outcome {
    const M: usize = 10_000;
    let c = studies::mckean_consistency(&testbeds::scalar(), grid(1e-3, 5.0), M, SEED, 5.0).unwrap();
    let (mean, xhat, cov, p) = (c.mean[0], c.xhat[0], c.cov[0], c.p[0]);
    let mean_tol = 4.0 * (p / M as f64).sqrt();
    let cov_tol = 4.0 * p * (2.0 / M as f64).sqrt();
    let pass = (mean - xhat).abs() <= mean_tol && (cov - p).abs() <= cov_tol;
    outcome(
        pass,
        format!(
            "|mean - xhat| = {:.3e} <= {mean_tol:.3e}, |cov - P| = {:.3e} <= {cov_tol:.3e}",
            (mean - xhat).abs(),
            (cov - p).abs()
        ),
    )
}

fn single_particle() -> Outcome {
    let problem = testbeds::ornstein_uhlenbeck();
    let t = 5.0;
    let s = studies::single_particle_study(&problem, grid(0.01, t), 10_000, SEED, t).unwrap();
    // Var X_t for dX = -X dt + sigma1 dW, X_0 ~ N(x0, P0)
    let (sigma1, p0) = (1.0, problem.p0[(0, 0)]);
    let var = sigma1 * sigma1 * (1.0 - (-2.0 * t).exp()) / 2.0 + (-2.0 * t).exp() * p0;
    let target = 2.0 * var;
    let z = (s.mean_sq_error - target) / s.std_error;
    outcome(z.abs() <= 3.0, format!("E|m - X|^2 = {:.4} vs 2 Var(X_t) = {target:.4}, {z:+.2} standard errors (limit 3)", s.mean_sq_error))
}

fn fluctuation() -> Outcome {
    const Z_MAX: f64 = 4.0;
    let f = studies::fluctuation_check(&testbeds::scalar(), grid(1e-3, 5.0), 100, SEED).unwrap();
    let parts: Vec<String> = f.checks.iter().map(|c| format!("{} z={:+.2}", c.name, c.report.z)).collect();
    outcome(f.max_abs_z <= Z_MAX, format!("{} (limit +-{Z_MAX})", parts.join(", ")))
}

fn chaos() -> (Outcome, Outcome) {
    let settings = ChaosSettings { n_list: vec![50, 100, 200, 400, 800], reps: 200, theta: 0.0, t_burn: 0.0, pair_time: Some(5.0) };
    let s = studies::chaos_study(&testbeds::scalar(), grid(0.01, 10.0), &settings, SEED).unwrap();
    let decreasing = s.sup_mean_xi.windows(2).all(|w| w[1] < w[0]);
    let fit = &s.fit;
    let pass7 = decreasing && (0.3..=0.7).contains(&fit.beta) && fit.r_squared >= 0.95;
    let sups: Vec<String> = s.sup_mean_xi.iter().map(|v| format!("{v:.3e}")).collect();
    let seven = outcome(
        pass7,
        format!(
            "sup_t E[Xi_t] = [{}], strictly decreasing = {decreasing}, ratio N=100/N=400 = {:.2}; beta_hat = {:.3} +- {:.3} in [0.3, 0.7], R^2 = {:.4} >= 0.95",
            sups.join(", "),
            s.sup_mean_xi[1] / s.sup_mean_xi[3],
            fit.beta,
            fit.std_error,
            fit.r_squared
        ),
    );
    let pc = s.particle.as_ref().unwrap();
    let dec = pc.mean_sq_gap.windows(2).all(|w| w[1] < w[0]);
    let gaps: Vec<String> = pc.mean_sq_gap.iter().map(|v| format!("{v:.3e}")).collect();
    let eight = outcome(
        dec && pc.fit.beta > 0.2,
        format!("E|xi - zeta|^2 at t=5 = [{}], decreasing = {dec}; exponent {:.3} > 0.2", gaps.join(", "), pc.fit.beta),
    );
    (seven, eight)
}

fn concentration() -> Outcome {
    const DELTA: f64 = 3.0;
    const REQUIRED: f64 = 0.9502 - 0.02;
    let problem = testbeds::scalar();
    assert!(compute_report(&problem).cond_20);
    let start = DVector::from_element(1, 0.0);
    let r = studies::concentration_study(&problem, grid(0.01, 10.0), 2000, SEED, DELTA, 10.0, &start).unwrap();
    outcome(
        r.signal_frequency >= REQUIRED && r.diffusion_frequency >= REQUIRED,
        format!(
            "frequencies {:.4} (signal) and {:.4} (diffusion) >= {REQUIRED:.4}; bounds {:.3} and {:.3}",
            r.signal_frequency, r.diffusion_frequency, r.signal_bound, r.diffusion_bound
        ),
    )
}

fn gamma() -> Outcome {
    const FACTOR: f64 = 1.05;
    let s = studies::gamma_study(&testbeds::scalar(), grid(0.01, 5.0), 500, SEED, &[1.0, 2.0, 5.0]).unwrap();
    let means_ok = s.mean_inverse_exponential.iter().zip(&s.limit).all(|(m, l)| *m <= FACTOR * l);
    let parts: Vec<String> = s
        .times
        .iter()
        .zip(s.mean_inverse_exponential.iter().zip(&s.limit))
        .map(|(t, (m, l))| format!("t={t}: {m:.4e} <= 1.05*{l:.4e}"))
        .collect();
    outcome(
        s.bound_violations == 0 && means_ok && s.premise_points > 0,
        format!("{} violations at {} premise points; {}", s.bound_violations, s.premise_points, parts.join(", ")),
    )
}

fn quadratic_problem(v: f64, r1: usize, sigma1: f64, sigma2: f64) -> FilteringProblem {
    let signal = build_quadratic_langevin(&QuadraticPotentialSpec {
        q1: DMatrix::identity(r1, r1) * (v / 4.0),
        q: DVector::zeros(r1),
        beta: 1.0,
        sigma1,
    })
    .unwrap();
    FilteringProblem::new(signal, SensorModel::fully_observed(r1, 1.0, sigma2).unwrap(), DVector::zeros(r1), DMatrix::identity(r1, r1) * 0.1)
        .unwrap()
}

fn declared_problem(lambda: f64, kappa: f64, trace_r: f64) -> FilteringProblem {
    let signal = SignalModel::new(
        Arc::new(AffineDrift::linear(DMatrix::from_element(1, 1, -lambda / 2.0))),
        DMatrix::from_element(1, 1, trace_r),
        lambda,
        kappa,
    )
    .unwrap();
    FilteringProblem::new(signal, SensorModel::fully_observed(1, 1.0, 1.0).unwrap(), DVector::zeros(1), DMatrix::zeros(1, 1)).unwrap()
}

fn stability_regression() -> Outcome {
    const TOL: f64 = 1e-12;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
    let mut worst: f64 = 0.0;
    for v in [0.5, 3.0, 16.0, 40.0, 250.0] {
        for r1 in [1usize, 2, 3] {
            for (sigma1, sigma2) in [(1.0, 1.0), (0.3, 2.0), (2.5, 0.7)] {
                let r = compute_report(&quadratic_problem(v, r1, sigma1, sigma2));
                let n = r1 as f64;
                let lambda_s = sigma2 * sigma2 * v / 2.0;
                let lambda_r = v / (2.0 * n * sigma1 * sigma1);
                let a = 1.0 / (sigma2 * v.sqrt());
                let hat = 0.5 + 0.5 * (1.0 - 2.0 * SQRT_2 * a) * (1.0 - 0.75 * SQRT_2 * a);
                let radius = 16.0 * E * n * sigma1 * sigma1 / v * (1.0 + 8.0 * n * sigma1 * sigma1 / (sigma2 * sigma2 * v * v));
                assert!(r.lambda_k.is_infinite());
                for (got, want) in [
                    (r.lambda_s, lambda_s),
                    (r.lambda_r, lambda_r),
                    (r.lambda_hat_da / r.lambda_da, hat),
                    (r.confidence_radius, radius),
                    (r.confidence_radius_expanded(), radius),
                ] {
                    worst = worst.max(rel(got, want));
                }
            }
        }
    }
    let mut mismatches = 0;
    let mut accepted = 0;
    for i in 0..20 {
        for j in 0..20 {
            for kappa in [0.0, 0.05, 0.5, 2.0, 10.0] {
                let lambda = 2.0 + 2.1 * i as f64;
                let trace_r = 0.013 + 0.37 * j as f64;
                let report = compute_report(&declared_problem(lambda, kappa, trace_r));
                let half = lambda * lambda / 2.0;
                let squared = lambda > 4.0
                    && lambda * lambda > 4.0 * kappa * trace_r
                    && half * half * (1.0 + 1.0 / (4.0 * E * lambda.sqrt())) > (trace_r + half).powi(2);
                let got = report.cond_21.expect("rho(S) = 1");
                mismatches += usize::from(got != squared);
                accepted += usize::from(got);
            }
        }
    }
    outcome(
        worst <= TOL && mismatches == 0 && accepted > 0 && accepted < 2000,
        format!("max relative error of closed forms {worst:.2e} <= {TOL:e}; condition mismatches {mismatches}/2000 ({accepted} accepted)"),
    )
}

fn structural() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    // p_t is an exact Gram form: symmetric bit-for-bit and PSD
    let problem = testbeds::quadratic();
    let run = studies::enkf_run(&problem, grid(0.01, 5.0), 10, SEED, 0.0).unwrap();
    let psd = run.records.iter().all(|r| r.p == r.p.transpose() && r.lambda_min_p >= 0.0);
    pass &= psd;
    notes.push(format!("psd={psd}"));

    // permuting particles together with their streams leaves (m, p) bit-identical
    let n = 16;
    let g = grid(0.01, 2.0);
    let path = simulate_truth(&problem, g, &mut stream(SEED, Role::Truth, 0, 0));
    let mut base = streams(SEED, Role::Particle, 0, n);
    let start = initial_particles(&problem, &mut base);
    let perm: Vec<usize> = (0..n).map(|i| (7 * i + 3) % n).collect();
    let mut perm_streams: Vec<_> = perm.iter().map(|&i| base[i].clone()).collect();
    let perm_start = DMatrix::from_fn(problem.dim(), n, |r, c| start[(r, perm[c])]);
    let mut a = EnsembleState::new(start, 0.0).unwrap();
    let mut b = EnsembleState::new(perm_start, 0.0).unwrap();
    let (mut na, mut nb) = (ParticleNoise::for_problem(&problem, n), ParticleNoise::for_problem(&problem, n));
    let mut exchangeable = a.m() == b.m() && a.p() == b.p();
    for dy in &path.increments {
        na.draw(&mut base, g.dt);
        nb.draw(&mut perm_streams, g.dt);
        a.step(dy, &na, g.dt, &problem, 0.0).unwrap();
        b.step(dy, &nb, g.dt, &problem, 0.0).unwrap();
        exchangeable &= a.m() == b.m() && a.p() == b.p();
    }
    pass &= exchangeable;
    notes.push(format!("exchangeable={exchangeable}"));

    // thread-count invariance of every study output
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let everything = || {
        let scalar = testbeds::scalar();
        let settings = ChaosSettings { n_list: vec![10, 20, 40], reps: 12, theta: 0.0, t_burn: 0.0, pair_time: Some(1.0) };
        let start = DVector::from_element(1, 0.0);
        serde_json::json!({
            "chaos": studies::chaos_study(&scalar, grid(0.01, 2.0), &settings, SEED).unwrap(),
            "contraction": studies::contraction_study(&problem, grid(0.01, 2.0), 12, SEED, 10.0, 1.0, 2.0).unwrap(),
            "concentration": studies::concentration_study(&scalar, grid(0.01, 2.0), 50, SEED, 3.0, 2.0, &start).unwrap(),
            "gamma": studies::gamma_study(&scalar, grid(0.01, 2.0), 20, SEED, &[1.0, 2.0]).unwrap(),
            "single": studies::single_particle_study(&scalar, grid(0.01, 1.0), 50, SEED, 1.0).unwrap(),
            "trace": studies::trace_bound_study(&testbeds::cubic(), grid(0.01, 2.0), 12, SEED, 5.0).unwrap(),
        })
        .to_string()
    };
    let invariant = one.install(everything) == three.install(everything);
    pass &= invariant;
    notes.push(format!("thread-invariant={invariant}"));

    // N < r1: the sample covariance keeps a null eigenvalue
    let p3 = testbeds::stable_3d();
    let run = studies::enkf_run(&p3, grid(0.01, 2.0), 2, SEED, 0.0).unwrap();
    let deficient = run.records.iter().all(|r| {
        let ev = sym_eigenvalues(&r.p);
        lambda_min(&r.p).abs() <= 1e-12 * r.p.trace().max(1.0) && ev[0].abs() <= 1e-12 * r.p.trace().max(1.0)
    });
    pass &= deficient;
    notes.push(format!("rank-deficient(N=2,r1=3)={deficient}"));
    outcome(pass, notes.join(", "))
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |id: u32, name: &str, started: Instant, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id:>2}] {name}: {} ({:.1}s)", o.detail, started.elapsed().as_secs_f64());
        failures += usize::from(!o.pass);
    };
    let t = Instant::now();
    report(1, "kalman oracle", t, kalman_oracle());
    let t = Instant::now();
    report(2, "riccati trace bound", t, trace_bound());
    let t = Instant::now();
    report(3, "matched-statistics contraction", t, contraction());
    let t = Instant::now();
    report(4, "diffusion copies reproduce filter statistics", t, mckean_consistency());
    let t = Instant::now();
    report(5, "single-particle identity", t, single_particle());
    let t = Instant::now();
    report(6, "fluctuation brackets", t, fluctuation());
    let t = Instant::now();
    let (seven, eight) = chaos();
    report(7, "propagation of chaos rate", t, seven);
    report(8, "particle-level chaos", t, eight);
    let t = Instant::now();
    report(9, "concentration events", t, concentration());
    let t = Instant::now();
    report(10, "gamma functional bound", t, gamma());
    let t = Instant::now();
    report(11, "stability report regression", t, stability_regression());
    let t = Instant::now();
    report(12, "structural suite", t, structural());
    if failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
