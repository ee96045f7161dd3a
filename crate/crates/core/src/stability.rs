//! Stability ratios, exponents and sufficient conditions, plus the Gamma
//! functional evaluated along realized filter paths.

use std::f64::consts::{E, SQRT_2};

use nalgebra::DVector;
use serde::Serialize;

use crate::ekf::EkfState;
use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{effective_s, FilteringProblem};

/// `lambda_max((M + M')/2)`.
pub fn log_norm(m: &nalgebra::DMatrix<f64>) -> f64 {
    linalg::lambda_max(m)
}

/// `(e^2 / sqrt 2) (1/2 + delta + sqrt delta)`.
pub fn varpi(delta: f64) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("varpi needs delta >= 0, got {delta}")));
    }
    Ok(E * E / SQRT_2 * (0.5 + delta + delta.sqrt()))
}

/// `(8e)^{-1} lambda_R sqrt(lambda_S) [1 + 2/(lambda_R lambda_S)]^{-1}`.
pub fn lambda_rs(lambda_r: f64, lambda_s: f64) -> f64 {
    lambda_r * lambda_s.sqrt() / (8.0 * E) / (1.0 + 2.0 / (lambda_r * lambda_s))
}

/// `lambda_hat / lambda_dA`.
pub fn lambda_hat_ratio(lambda_k: f64, lambda_r: f64, lambda_s: f64) -> f64 {
    let a = 1.0 / lambda_s.sqrt();
    (0.5 - 2.0 / (lambda_k * lambda_r)) + (0.5 - a) * (1.0 - 0.75 * a)
}

/// `min(lambda_K lambda_R / 4, lambda_RS, lambda_S / 4) > 1`, strictly.
pub fn cond_20(lambda_k: f64, lambda_r: f64, lambda_s: f64) -> bool {
    let m = (lambda_k * lambda_r / 4.0).min(lambda_rs(lambda_r, lambda_s)).min(lambda_s / 4.0);
    m > 1.0
}

/// Sufficient condition for unit `rho(S)`:
/// `lambda > 4` and `tr(R) <= (lambda^2/2) min{1/(2 kappa), sqrt(1 + 1/(4e sqrt(lambda))) - 1}`.
pub fn cond_21_root(lambda: f64, kappa: f64, trace_r: f64) -> bool {
    let half_sq = lambda * lambda / 2.0;
    let by_kappa = if kappa > 0.0 { 1.0 / (2.0 * kappa) } else { f64::INFINITY };
    let by_noise = (1.0 + 1.0 / (4.0 * E * lambda.sqrt())).sqrt() - 1.0;
    lambda > 4.0 && trace_r <= half_sq * by_kappa.min(by_noise)
}

/// The same condition before taking square roots:
/// `lambda > 4`, `lambda^2 >= 4 kappa tr(R)` and
/// `(lambda^2/2)^2 (1 + 1/(4e sqrt(lambda))) >= (tr(R) + lambda^2/2)^2`.
pub fn cond_21_squared(lambda: f64, kappa: f64, trace_r: f64) -> bool {
    let half_sq = lambda * lambda / 2.0;
    lambda > 4.0
        && lambda * lambda >= 4.0 * kappa * trace_r
        && half_sq * half_sq * (1.0 + 1.0 / (4.0 * E * lambda.sqrt())) >= (trace_r + half_sq).powi(2)
}

/// Closed-form restatement for the quadratic Langevin model with `b = sigma2`:
/// `v/8 > 1` and `2 sqrt(2) e r1 sigma1^2 <= (v/8) / (sqrt(1 + 1/(2 sqrt(2) e v)) + 1)`.
/// It does not coincide with [`cond_21_root`] for all parameters.
pub fn cond_21_quadratic_restatement(v: f64, r1: usize, sigma1: f64) -> bool {
    let lhs = 2.0 * SQRT_2 * E * r1 as f64 * sigma1 * sigma1;
    let rhs = (v / 8.0) / ((1.0 + 1.0 / (2.0 * SQRT_2 * E * v)).sqrt() + 1.0);
    v / 8.0 > 1.0 && lhs <= rhs
}

/// `(lambda_S/lambda_R)[1/2 + 1/(lambda_R lambda_S)]`.
pub fn trace_cond_rhs(lambda_r: f64, lambda_s: f64) -> f64 {
    lambda_s / lambda_r * (0.5 + 1.0 / (lambda_r * lambda_s))
}

/// Riccati trace bound `e^{-lambda t} tr(P0) + tr(R)/lambda`.
pub fn trace_bound(t: f64, trace_p0: f64, trace_r: f64, lambda: f64) -> f64 {
    (-lambda * t).exp() * trace_p0 + trace_r / lambda
}

/// Tunables for the parametrized quantities of the report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReportOptions {
    /// `delta` of the chi-square initial condition `r1 rho(P0) <= 1/(4 delta)`.
    pub chi2_delta: f64,
    /// `epsilon` in `[0, 1]` of the positive exponential-moment estimate.
    pub eps: f64,
    /// `delta > 0` of the positive exponential-moment estimate.
    pub delta: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { chi2_delta: 1.0, eps: 1.0, delta: 1.0 }
    }
}

/// Every stability ratio, exponent and condition for one filtering problem.
/// Infinite values serialize as `"inf"`, undefined ones as `null`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub r1: usize,
    #[serde(serialize_with = "crate::json::f64")]
    pub lambda_da: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub kappa_da: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub lambda_a: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub rho_s: f64,
    pub cond_s: bool,
    /// False when `rho(S) = 0`; `lambda_S` and everything built on it is then undefined.
    pub observable: bool,
    #[serde(serialize_with = "crate::json::f64")]
    pub trace_r: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub trace_p0: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub rho_p0: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub lambda_s: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub lambda_r: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub lambda_k: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub lambda_rs: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub lambda_hat_da: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub delta_s: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub delta_rs: f64,
    pub cond_20: bool,
    /// Only defined when `rho(S) = 1`.
    pub cond_21: Option<bool>,
    #[serde(serialize_with = "crate::json::f64")]
    pub trace_cond_rhs: f64,
    /// `tr(P0)^2 <= trace_cond_rhs`.
    pub trace_cond: bool,
    #[serde(serialize_with = "crate::json::f64")]
    pub chi2_delta: f64,
    pub chi2_ok: bool,
    #[serde(serialize_with = "crate::json::f64")]
    pub lambda_minus_gamma: f64,
    /// `Lambda^-_Gamma - 2 rho(S)`.
    #[serde(serialize_with = "crate::json::f64")]
    pub lambda_gamma: f64,
    /// `sqrt(lambda_S) / lambda_RS`.
    #[serde(serialize_with = "crate::json::f64")]
    pub confidence_radius: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub eps: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub delta: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub lambda_da_eps_delta: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub sigma_sq_eps_delta: f64,
    /// `delta <= e eps lambda_RS` and `tr(P0)^2 <= sigma^2(eps, delta)`.
    pub sigma_premise: bool,
    #[serde(serialize_with = "crate::json::f64")]
    pub lambda_plus_gamma: f64,
    /// The constant `c_delta(P0)` depends on a quantity that is never defined; it is not evaluated.
    pub c_delta: &'static str,
    pub warnings: Vec<String>,
}

/// `Lambda_dA[eps, delta]`.
pub fn lambda_da_eps_delta(lambda: f64, lambda_a: f64, lambda_k: f64, lambda_r: f64, lambda_s: f64, eps: f64, delta: f64) -> f64 {
    lambda * (1.0 - 2.0 / (lambda_k * lambda_r) + (0.75 - delta) / lambda_s - eps * lambda_a / (2.0 * lambda * delta))
}

/// `sigma^2(eps, delta)`.
pub fn sigma_sq_eps_delta(lambda_r: f64, lambda_s: f64, eps: f64, delta: f64) -> f64 {
    trace_cond_rhs(lambda_r, lambda_s) * (E * eps * lambda_rs(lambda_r, lambda_s) / delta - 1.0)
}

pub fn compute_report(problem: &FilteringProblem) -> StabilityReport {
    compute_report_with(problem, ReportOptions::default())
}

pub fn compute_report_with(problem: &FilteringProblem, opts: ReportOptions) -> StabilityReport {
    let signal = &problem.signal;
    let es = effective_s(&problem.sensor);
    let (lambda, kappa, lambda_a) = (signal.lambda_da(), signal.kappa_da(), signal.lambda_a());
    let trace_r = signal.r1().trace();
    let trace_p0 = problem.p0.trace();
    let rho_p0 = linalg::lambda_max(&problem.p0);
    let observable = es.rho > 0.0;
    let lambda_s = if observable { lambda / es.rho } else { f64::NAN };
    let lambda_r = lambda / trace_r;
    let lambda_k = if kappa > 0.0 { lambda / kappa } else { f64::INFINITY };
    let l_rs = lambda_rs(lambda_r, lambda_s);
    let lambda_hat = lambda * lambda_hat_ratio(lambda_k, lambda_r, lambda_s);
    let delta_s = lambda_s.sqrt() / 2.0;
    let c20 = observable && lambda > 0.0 && cond_20(lambda_k, lambda_r, lambda_s);
    let unit_rho = (es.rho - 1.0).abs() <= 1e-10;
    let cond_21 = unit_rho.then(|| cond_21_root(lambda, kappa, trace_r));
    let rhs = trace_cond_rhs(lambda_r, lambda_s);
    let lambda_minus = lambda * (1.0 - 2.0 / (lambda_k * lambda_r));
    let lambda_gamma = lambda_minus - 2.0 * es.rho;
    let l_eps = lambda_da_eps_delta(lambda, lambda_a, lambda_k, lambda_r, lambda_s, opts.eps, opts.delta);
    let sigma_sq = sigma_sq_eps_delta(lambda_r, lambda_s, opts.eps, opts.delta);
    let sigma_premise = opts.delta > 0.0 && opts.delta <= E * opts.eps * l_rs && trace_p0 * trace_p0 <= sigma_sq;
    let lambda_plus = 2.0 * kappa * sigma_sq.max(0.0).sqrt() - l_eps - (opts.delta - 1.0) * es.rho;
    let chi2_ok = signal.dim() as f64 * rho_p0 <= 1.0 / (4.0 * opts.chi2_delta);

    let mut warnings = Vec::new();
    if !observable {
        warnings.push("condition (S) fails: rho(S)=0, the sensor carries no information".to_string());
    } else if !es.is_condition_s {
        warnings.push(format!("condition (S) fails: S is not a multiple of the identity (rho(S)={})", es.rho));
    }
    if lambda <= 0.0 {
        warnings.push(format!("drift is not contractive: lambda_dA = {lambda}"));
    }
    if !c20 {
        warnings.push("stability condition min(lambda_K lambda_R/4, lambda_RS, lambda_S/4) > 1 fails".to_string());
    }
    if observable && !(trace_p0 * trace_p0 <= rhs) {
        warnings.push(format!(
            "trace premise of the uniform chaos estimate fails: tr(P0)^2 = {} > (lambda_S/lambda_R)[1/2 + 1/(lambda_R lambda_S)] = {}",
            trace_p0 * trace_p0,
            rhs
        ));
    }

    StabilityReport {
        r1: signal.dim(),
        lambda_da: lambda,
        kappa_da: kappa,
        lambda_a,
        rho_s: es.rho,
        cond_s: es.is_condition_s,
        observable,
        trace_r,
        trace_p0,
        rho_p0,
        lambda_s,
        lambda_r,
        lambda_k,
        lambda_rs: l_rs,
        lambda_hat_da: lambda_hat,
        delta_s,
        delta_rs: (E * l_rs).min(delta_s),
        cond_20: c20,
        cond_21,
        trace_cond_rhs: rhs,
        trace_cond: trace_p0 * trace_p0 <= rhs,
        chi2_delta: opts.chi2_delta,
        chi2_ok,
        lambda_minus_gamma: lambda_minus,
        lambda_gamma,
        confidence_radius: lambda_s.sqrt() / l_rs,
        eps: opts.eps,
        delta: opts.delta,
        lambda_da_eps_delta: l_eps,
        sigma_sq_eps_delta: sigma_sq,
        sigma_premise,
        lambda_plus_gamma: lambda_plus,
        c_delta: "undetermined constant",
        warnings,
    }
}

impl StabilityReport {
    /// Expanded form `8e lambda_S (1/(lambda_R lambda_S)) [1 + 2/(lambda_R lambda_S)]` of the radius.
    pub fn confidence_radius_expanded(&self) -> f64 {
        let prod = self.lambda_r * self.lambda_s;
        8.0 * E * self.lambda_s / prod * (1.0 + 2.0 / prod)
    }

    /// Rows `(name, value)` for a human-readable table.
    pub fn table(&self) -> Vec<(&'static str, String)> {
        let f = |v: f64| {
            if v.is_nan() {
                "undefined".to_string()
            } else if v.is_infinite() {
                if v > 0.0 { "inf".into() } else { "-inf".into() }
            } else {
                format!("{v:.6}")
            }
        };
        vec![
            ("r1", self.r1.to_string()),
            ("lambda_dA", f(self.lambda_da)),
            ("kappa_dA", f(self.kappa_da)),
            ("lambda_A", f(self.lambda_a)),
            ("rho(S)", f(self.rho_s)),
            ("condition S", self.cond_s.to_string()),
            ("lambda_S", f(self.lambda_s)),
            ("lambda_R", f(self.lambda_r)),
            ("lambda_K", f(self.lambda_k)),
            ("lambda_RS", f(self.lambda_rs)),
            ("lambda_hat_dA", f(self.lambda_hat_da)),
            ("delta_S", f(self.delta_s)),
            ("delta_RS", f(self.delta_rs)),
            ("stability condition", self.cond_20.to_string()),
            ("easy check (rho(S)=1)", self.cond_21.map_or("n/a".into(), |b| b.to_string())),
            ("trace premise rhs", f(self.trace_cond_rhs)),
            ("trace premise", self.trace_cond.to_string()),
            ("chi2 initial condition", self.chi2_ok.to_string()),
            ("Lambda^-_Gamma", f(self.lambda_minus_gamma)),
            ("lambda_Gamma", f(self.lambda_gamma)),
            ("confidence radius", f(self.confidence_radius)),
            ("Lambda_dA[eps,delta]", f(self.lambda_da_eps_delta)),
            ("sigma^2(eps,delta)", f(self.sigma_sq_eps_delta)),
            ("Lambda^+_Gamma(eps,delta)", f(self.lambda_plus_gamma)),
            ("c_delta(P0)", self.c_delta.to_string()),
        ]
    }
}

/// The easy-to-check sufficient condition; only defined for `rho(S) = 1`.
pub fn check_cs_easy(problem: &FilteringProblem) -> Result<bool> {
    let es = effective_s(&problem.sensor);
    if (es.rho - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidArgument(format!("condition requires rho(S) = 1, got {}", es.rho)));
    }
    let s = &problem.signal;
    Ok(cond_21_root(s.lambda_da(), s.kappa_da(), s.r1().trace()))
}

/// `|e^{-a t} - e^{-b t}| / |a/b - 1|`, continuous at `a = b` (limit `b t e^{-b t}`).
fn rate_gap(a: f64, b: f64, t: f64) -> f64 {
    if ((a - b) / b).abs() < 1e-8 {
        b * t * (-b * t).exp()
    } else {
        ((-a * t).exp() - (-b * t).exp()).abs() / (a / b - 1.0).abs()
    }
}

/// Right side of the signal-versus-filter concentration event:
/// `varpi sqrt(lambda_S)/(2e lambda_RS) + 2 e^{-lambda t}||x-m||^2
///  + 8 varpi |e^{-lambda_A t} - e^{-lambda t}| / |lambda_A/lambda - 1| tr(p)^2/lambda_S`.
pub fn signal_event_bound(report: &StabilityReport, delta: f64, t: f64, init_gap_sq: f64, trace_p: f64) -> Result<f64> {
    let w = varpi(delta)?;
    let l = report.lambda_da;
    Ok(w * report.confidence_radius / (2.0 * E)
        + 2.0 * (-l * t).exp() * init_gap_sq
        + 8.0 * w * rate_gap(report.lambda_a, l, t) * trace_p * trace_p / report.lambda_s)
}

/// Right side of the diffusion-versus-filter concentration event:
/// `varpi sqrt(lambda_S)/(2e lambda_RS) + 8 varpi e^{-lambda t} tr(p)^2/lambda_S`.
pub fn diffusion_event_bound(report: &StabilityReport, delta: f64, t: f64, trace_p: f64) -> Result<f64> {
    let w = varpi(delta)?;
    Ok(w * report.confidence_radius / (2.0 * E) + 8.0 * w * (-report.lambda_da * t).exp() * trace_p * trace_p / report.lambda_s)
}

/// Uniform bound on `E(||Xbar_t - xhat_t||^delta | F_s)^{2/delta}`, `delta >= 1`.
pub fn centered_moment_bound(report: &StabilityReport, delta: f64, s: f64, t: f64, gap_sq_s: f64, trace_p0: f64) -> Result<f64> {
    if !(delta >= 1.0) || t < s {
        return Err(Error::InvalidArgument("need delta >= 1 and t >= s".into()));
    }
    let l = report.lambda_da;
    let prod = report.lambda_r * report.lambda_s;
    Ok((-l * (t - s)).exp() * gap_sq_s
        + (2.0 * delta - 1.0)
            * ((1.0 + 2.0 / prod) / report.lambda_r + 2.0 * (-l * (t + s)).exp() * trace_p0 * trace_p0 / report.lambda_s))
}

/// `Gamma_A(s) = -[lambda - (2 kappa tr(P_s) + rho(S) ||X_s - xhat_s||)]` along a path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaPathStat {
    pub times: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Left-point cumulative integral of `Gamma_A`.
    pub integral: Vec<f64>,
    /// `exp(integral)`.
    pub exp_gamma: Vec<f64>,
    /// `tr(P_s) <= tr(P0) + 1/lambda_R` at each grid point.
    pub premise: Vec<bool>,
    /// `-Gamma_A(s) <= Lambda^-_Gamma` at each grid point.
    pub bound_holds: Vec<bool>,
}

impl GammaPathStat {
    /// True when the bound holds wherever the premise does.
    pub fn bound_ok(&self) -> bool {
        self.premise.iter().zip(&self.bound_holds).all(|(p, b)| !p || *b)
    }
}

pub fn gamma_functional(
    truth: &[DVector<f64>],
    filter: &[EkfState],
    problem: &FilteringProblem,
) -> Result<GammaPathStat> {
    if truth.len() != filter.len() {
        return Err(Error::Dimension(format!("{} signal states vs {} filter states", truth.len(), filter.len())));
    }
    let report = compute_report(problem);
    let (lambda, kappa, rho) = (report.lambda_da, report.kappa_da, report.rho_s);
    let premise_level = report.trace_p0 + 1.0 / report.lambda_r;
    let n = filter.len();
    let mut out = GammaPathStat {
        times: Vec::with_capacity(n),
        gamma: Vec::with_capacity(n),
        integral: Vec::with_capacity(n),
        exp_gamma: Vec::with_capacity(n),
        premise: Vec::with_capacity(n),
        bound_holds: Vec::with_capacity(n),
    };
    let mut acc = 0.0;
    for (k, (x, f)) in truth.iter().zip(filter).enumerate() {
        if k > 0 {
            acc += out.gamma[k - 1] * (f.t - filter[k - 1].t);
        }
        let tr = f.p.trace();
        let g = -(lambda - (2.0 * kappa * tr + rho * (x - &f.xhat).norm()));
        out.times.push(f.t);
        out.gamma.push(g);
        out.integral.push(acc);
        out.exp_gamma.push(acc.exp());
        out.premise.push(tr <= premise_level);
        out.bound_holds.push(-g <= report.lambda_minus_gamma);
    }
    Ok(out)
}
