//! Statistical checks over simulated runs: transport distances, quadratic
//! variation z-scores, rate regression and event frequencies.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stability::{diffusion_event_bound, signal_event_bound, StabilityReport};

/// Uniformly weighted samples in `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalLaw {
    samples: Vec<DVector<f64>>,
}

impl EmpiricalLaw {
    pub fn new(samples: Vec<DVector<f64>>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidArgument(format!("an empirical law needs at least 2 samples, got {}", samples.len())));
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::Dimension("samples of mixed dimension".into()));
        }
        Ok(Self { samples })
    }

    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| DVector::from_element(1, v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    fn sorted_scalars(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.samples.iter().map(|s| s[0]).collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

fn check_order(delta: f64) -> Result<()> {
    if !(delta >= 1.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("transport order must be finite and >= 1, got {delta}")));
    }
    Ok(())
}

/// Exact order-`delta` Wasserstein distance between two scalar laws with the
/// same number of atoms, through the monotone coupling.
pub fn wasserstein_1d(a: &EmpiricalLaw, b: &EmpiricalLaw, delta: f64) -> Result<f64> {
    check_order(delta)?;
    if a.dim() != 1 || b.dim() != 1 {
        return Err(Error::Dimension("wasserstein_1d needs scalar samples".into()));
    }
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("unequal sample counts {} and {}", a.len(), b.len())));
    }
    let (x, y) = (a.sorted_scalars(), b.sorted_scalars());
    let sum: f64 = x.iter().zip(&y).map(|(p, q)| (p - q).abs().powf(delta)).sum();
    Ok((sum / x.len() as f64).powf(1.0 / delta))
}

/// `(mean ||z1_i - z2_i||^delta)^{1/delta}` over the coupling realized by the
/// simulation. This upper-bounds the Wasserstein distance, it is not the distance.
pub fn wasserstein_coupled_upper(left: &[DVector<f64>], right: &[DVector<f64>], delta: f64) -> Result<f64> {
    check_order(delta)?;
    if left.len() != right.len() || left.is_empty() {
        return Err(Error::InvalidArgument("coupled samples must be non-empty and paired".into()));
    }
    let sum: f64 = left.iter().zip(right).map(|(a, b)| (a - b).norm().powf(delta)).sum();
    Ok((sum / left.len() as f64).powf(1.0 / delta))
}

/// Standardized deviation of an empirical quadratic variation from its
/// predicted bracket.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QvReport {
    pub realized: f64,
    pub predicted: f64,
    pub z: f64,
    pub steps: usize,
}

/// Increments `dM_k` against predicted bracket densities `v_k`:
/// `z = (sum dM^2 - sum v dt) / sqrt(sum 2 (v dt)^2)`.
pub fn qv_check(increments: &[f64], bracket: &[f64], dt: f64) -> Result<QvReport> {
    if increments.len() != bracket.len() || increments.is_empty() {
        return Err(Error::InvalidArgument("increments and bracket must be aligned and non-empty".into()));
    }
    let realized: f64 = increments.iter().map(|d| d * d).sum();
    let predicted: f64 = bracket.iter().map(|v| v * dt).sum();
    let var: f64 = bracket.iter().map(|v| 2.0 * (v * dt).powi(2)).sum();
    Ok(QvReport { realized, predicted, z: (realized - predicted) / var.sqrt(), steps: increments.len() })
}

/// Cross-variation of two martingales expected to be orthogonal:
/// `z = sum dM1 dM2 / sqrt(sum v1 v2 dt^2)`.
pub fn qv_cross_check(first: &[f64], second: &[f64], bracket_first: &[f64], bracket_second: &[f64], dt: f64) -> Result<QvReport> {
    let n = first.len();
    if n == 0 || second.len() != n || bracket_first.len() != n || bracket_second.len() != n {
        return Err(Error::InvalidArgument("cross-variation inputs must be aligned and non-empty".into()));
    }
    let realized: f64 = first.iter().zip(second).map(|(a, b)| a * b).sum();
    let var: f64 = bracket_first.iter().zip(bracket_second).map(|(a, b)| a * b * dt * dt).sum();
    Ok(QvReport { realized, predicted: 0.0, z: realized / var.sqrt(), steps: n })
}

/// Log-log regression of a per-`N` statistic, `stat ~ c N^{-beta}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub n: Vec<usize>,
    pub statistic: Vec<f64>,
    pub beta: f64,
    pub std_error: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
}

pub fn chaos_rate_fit(n: &[usize], statistic: &[f64]) -> Result<RateFit> {
    if n.len() != statistic.len() || n.len() < 3 {
        return Err(Error::InvalidArgument("a rate fit needs at least 3 aligned points".into()));
    }
    if n.windows(2).any(|w| w[0] >= w[1]) || n[0] == 0 {
        return Err(Error::InvalidArgument("N grid must be positive and strictly increasing".into()));
    }
    if statistic.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument("statistics must be positive and finite".into()));
    }
    let x: Vec<f64> = n.iter().map(|&v| (v as f64).ln()).collect();
    let y: Vec<f64> = statistic.iter().map(|s| s.ln()).collect();
    let k = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / k, y.iter().sum::<f64>() / k);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - (intercept + slope * a)).collect();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let std_error = (sse / (k - 2.0) / sxx).sqrt();
    Ok(RateFit {
        n: n.to_vec(),
        statistic: statistic.to_vec(),
        beta: -slope,
        std_error,
        intercept,
        residuals,
        r_squared,
    })
}

/// Largest value over grid points with `t >= t_burn`.
pub fn sup_over_time(times: &[f64], values: &[f64], t_burn: f64) -> Option<f64> {
    times.iter().zip(values).filter(|(t, _)| **t >= t_burn).map(|(_, v)| *v).reduce(f64::max)
}

/// One run's states at the evaluation time.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationSample {
    pub signal: DVector<f64>,
    pub filter_mean: DVector<f64>,
    pub diffusion: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub delta: f64,
    pub t: f64,
    pub runs: usize,
    pub required: f64,
    pub signal_bound: f64,
    pub diffusion_bound: f64,
    pub signal_frequency: f64,
    pub diffusion_frequency: f64,
}

/// Fraction of runs in which each concentration event holds. The signal
/// starts at `x`, the filter at `(m, p)`.
pub fn concentration_check(
    samples: &[ConcentrationSample],
    delta: f64,
    t: f64,
    report: &StabilityReport,
    init_gap_sq: f64,
    trace_p: f64,
) -> Result<ConcentrationReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no runs".into()));
    }
    let signal_bound = signal_event_bound(report, delta, t, init_gap_sq, trace_p)?;
    let diffusion_bound = diffusion_event_bound(report, delta, t, trace_p)?;
    let n = samples.len() as f64;
    let hit1 = samples.iter().filter(|s| (&s.signal - &s.filter_mean).norm_squared() <= signal_bound).count();
    let hit2 = samples.iter().filter(|s| (&s.diffusion - &s.filter_mean).norm_squared() <= diffusion_bound).count();
    Ok(ConcentrationReport {
        delta,
        t,
        runs: samples.len(),
        required: 1.0 - (-delta).exp(),
        signal_bound,
        diffusion_bound,
        signal_frequency: hit1 as f64 / n,
        diffusion_frequency: hit2 as f64 / n,
    })
}

/// Outcome of a single check, as written to JSON.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub check: String,
    #[serde(serialize_with = "crate::json::f64")]
    pub statistic: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub bound: f64,
    #[serde(serialize_with = "crate::json::f64")]
    pub margin: f64,
    pub pass: bool,
    pub seeds: Vec<u64>,
}

impl Verdict {
    /// Passes when `statistic <= bound`.
    pub fn at_most(check: &str, statistic: f64, bound: f64, seeds: Vec<u64>) -> Self {
        Self { check: check.into(), statistic, bound, margin: bound - statistic, pass: statistic <= bound, seeds }
    }

    /// Passes when `statistic >= bound`.
    pub fn at_least(check: &str, statistic: f64, bound: f64, seeds: Vec<u64>) -> Self {
        Self { check: check.into(), statistic, bound, margin: statistic - bound, pass: statistic >= bound, seeds }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{fill_brownian, stream, Role};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn law(v: &[f64]) -> EmpiricalLaw {
        EmpiricalLaw::from_scalars(v).unwrap()
    }

    fn brute_force(a: &[f64], b: &[f64], delta: f64) -> f64 {
        fn perms(k: usize, idx: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if k == idx.len() {
                out.push(idx.clone());
                return;
            }
            for i in k..idx.len() {
                idx.swap(k, i);
                perms(k + 1, idx, out);
                idx.swap(k, i);
            }
        }
        let mut all = Vec::new();
        perms(0, &mut (0..a.len()).collect(), &mut all);
        let best = all
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).abs().powf(delta)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        (best / a.len() as f64).powf(1.0 / delta)
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein_1d(&law(&[0.3, -1.0, 2.0]), &law(&[2.0, 0.3, -1.0]), 2.0).unwrap(), 0.0);
        assert_eq!(wasserstein_1d(&law(&[0.0, 0.0]), &law(&[1.0, 1.0]), 2.0).unwrap(), 1.0);
        assert_eq!(wasserstein_1d(&law(&[0.0, 1.0]), &law(&[0.0, 3.0]), 1.0).unwrap(), 1.0);
        assert!(wasserstein_1d(&law(&[0.0, 1.0]), &law(&[0.0, 3.0, 4.0]), 1.0).is_err());
        assert!(wasserstein_1d(&law(&[0.0, 1.0]), &law(&[0.0, 3.0]), 0.5).is_err());
        assert!(EmpiricalLaw::from_scalars(&[1.0]).is_err());
    }

    #[test]
    fn coupled_upper_examples() {
        let a: Vec<_> = [0.0, 1.0, 5.0].iter().map(|&v| DVector::from_element(1, v)).collect();
        assert_eq!(wasserstein_coupled_upper(&a, &a, 2.0).unwrap(), 0.0);
        let b: Vec<_> = [5.0, 0.0, 1.0].iter().map(|&v| DVector::from_element(1, v)).collect();
        let exact = wasserstein_1d(&EmpiricalLaw::new(a.clone()).unwrap(), &EmpiricalLaw::new(b.clone()).unwrap(), 2.0).unwrap();
        assert!(wasserstein_coupled_upper(&a, &b, 2.0).unwrap() >= exact);
    }

    proptest! {
        #[test]
        fn wasserstein_matches_assignment(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..=6),
            delta in 1.0f64..3.0,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let w = wasserstein_1d(&law(&a), &law(&b), delta).unwrap();
            prop_assert!((w - brute_force(&a, &b, delta)).abs() <= 1e-12);
        }

        #[test]
        fn wasserstein_triangle(
            triples in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 2..20),
            delta in 1.0f64..4.0,
        ) {
            let a: Vec<f64> = triples.iter().map(|t| t.0).collect();
            let b: Vec<f64> = triples.iter().map(|t| t.1).collect();
            let c: Vec<f64> = triples.iter().map(|t| t.2).collect();
            let (a, b, c) = (law(&a), law(&b), law(&c));
            let ab = wasserstein_1d(&a, &b, delta).unwrap();
            let bc = wasserstein_1d(&b, &c, delta).unwrap();
            let ac = wasserstein_1d(&a, &c, delta).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!(wasserstein_1d(&a, &a, delta).unwrap() == 0.0);
        }

        #[test]
        fn wasserstein_scale_equivariant(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..20),
            c in -4.0f64..4.0,
            delta in 1.0f64..3.0,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let base = wasserstein_1d(&law(&a), &law(&b), delta).unwrap();
            let sa: Vec<f64> = a.iter().map(|v| c * v).collect();
            let sb: Vec<f64> = b.iter().map(|v| c * v).collect();
            let scaled = wasserstein_1d(&law(&sa), &law(&sb), delta).unwrap();
            prop_assert!((scaled - c.abs() * base).abs() <= 1e-12 * (1.0 + base * c.abs()));
        }

        #[test]
        fn planted_exponent_recovered(beta in 0.05f64..2.0, c in 0.01f64..100.0) {
            let n = [10usize, 30, 100, 300, 1000];
            let stat: Vec<f64> = n.iter().map(|&k| c * (k as f64).powf(-beta)).collect();
            let fit = chaos_rate_fit(&n, &stat).unwrap();
            prop_assert!((fit.beta - beta).abs() <= 1e-10);
            prop_assert!(fit.r_squared > 1.0 - 1e-12);
        }
    }

    #[test]
    fn rate_fit_examples() {
        let n = [50usize, 100, 200, 400, 800];
        let root: Vec<f64> = n.iter().map(|&k| 3.0 / (k as f64).sqrt()).collect();
        assert!((chaos_rate_fit(&n, &root).unwrap().beta - 0.5).abs() <= 1e-10);
        let inv: Vec<f64> = n.iter().map(|&k| 3.0 / k as f64).collect();
        assert!((chaos_rate_fit(&n, &inv).unwrap().beta - 1.0).abs() <= 1e-10);
        assert!(chaos_rate_fit(&n[..2], &inv[..2]).is_err());
        assert!(chaos_rate_fit(&[100, 50, 200], &inv[..3]).is_err());
        assert!(chaos_rate_fit(&n, &[1.0, 0.0, 1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn rate_fit_standard_error_on_noisy_line() {
        let n = [10usize, 20, 40, 80, 160];
        let noise = [0.01, -0.02, 0.015, -0.005, 0.0];
        let stat: Vec<f64> = n.iter().zip(noise).map(|(&k, e)| (k as f64).powf(-0.5) * f64::exp(e)).collect();
        let fit = chaos_rate_fit(&n, &stat).unwrap();
        assert!(fit.std_error > 0.0 && fit.std_error < 0.05);
        assert!((fit.residuals.iter().sum::<f64>()).abs() < 1e-12);
    }

    /// z-scores of Brownian quadratic variations, 1000 increments each.
    fn brownian_z(replicates: u64) -> Vec<f64> {
        let dt = 1e-3;
        (0..replicates)
            .map(|r| {
                let mut rng = stream(99, Role::Truth, r, 0);
                let mut dw = vec![0.0; 1000];
                fill_brownian(&mut rng, dt, &mut dw);
                qv_check(&dw, &vec![1.0; 1000], dt).unwrap().z
            })
            .collect()
    }

    #[test]
    fn qv_calibration_is_standard_normal() {
        let mut z = brownian_z(400);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 / n.sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.25, "var {var}");
        assert!(z.iter().all(|v| v.abs() <= 5.0));
        // Kolmogorov-Smirnov against N(0,1); 1% critical value ~ 1.63/sqrt(n)
        z.sort_by(f64::total_cmp);
        let ks = z
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = normal_cdf(v);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 1.63 / n.sqrt(), "ks {ks}");
    }

    fn normal_cdf(x: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26 for erf, absolute error below 1.5e-7
        let t = 1.0 / (1.0 + 0.3275911 * x.abs() / std::f64::consts::SQRT_2);
        let poly = t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
        let erf = 1.0 - poly * (-(x * x) / 2.0).exp();
        0.5 * (1.0 + erf.copysign(x))
    }

    #[test]
    fn cross_variation_of_independent_motions() {
        let dt = 1e-3;
        let (mut a, mut b) = (vec![0.0; 5000], vec![0.0; 5000]);
        fill_brownian(&mut stream(5, Role::Truth, 0, 0), dt, &mut a);
        fill_brownian(&mut stream(5, Role::Truth, 0, 1), dt, &mut b);
        let ones = vec![1.0; 5000];
        assert!(qv_cross_check(&a, &b, &ones, &ones, dt).unwrap().z.abs() <= 4.0);
        let same = qv_cross_check(&a, &a, &ones, &ones, dt).unwrap();
        assert!(same.z > 10.0);
    }

    #[test]
    fn sup_over_time_respects_burn_in() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let v = [9.0, 1.0, 3.0, 2.0];
        assert_eq!(sup_over_time(&t, &v, 0.0), Some(9.0));
        assert_eq!(sup_over_time(&t, &v, 0.5), Some(3.0));
        assert_eq!(sup_over_time(&t, &v, 5.0), None);
    }

    #[test]
    fn verdict_margins() {
        let v = Verdict::at_most("x", 1.0, 3.0, vec![1]);
        assert!(v.pass && v.margin == 2.0);
        let w = Verdict::at_least("y", 1.0, 3.0, vec![]);
        assert!(!w.pass && w.margin == -2.0);
        let json = serde_json::to_value(&Verdict::at_most("z", 0.0, f64::INFINITY, vec![])).unwrap();
        assert_eq!(json["bound"], "inf");
    }

    #[test]
    fn concentration_thresholds() {
        use crate::models::{build_quadratic_langevin, FilteringProblem, QuadraticPotentialSpec, SensorModel};
        use crate::stability::compute_report;
        use nalgebra::DMatrix;
        let signal = build_quadratic_langevin(&QuadraticPotentialSpec {
            q1: DMatrix::identity(1, 1) * 10.0,
            q: DVector::zeros(1),
            beta: 1.0,
            sigma1: 1.0,
        })
        .unwrap();
        let problem = FilteringProblem::new(
            signal,
            SensorModel::fully_observed(1, 1.0, 1.0).unwrap(),
            DVector::zeros(1),
            DMatrix::identity(1, 1) * 0.25,
        )
        .unwrap();
        let report = compute_report(&problem);
        let zero = DVector::zeros(1);
        let far = DVector::from_element(1, 1e6);
        let samples = vec![
            ConcentrationSample { signal: zero.clone(), filter_mean: zero.clone(), diffusion: zero.clone() },
            ConcentrationSample { signal: far.clone(), filter_mean: zero.clone(), diffusion: far },
        ];
        let r = concentration_check(&samples, 0.0, 1.0, &report, 0.0, 0.25).unwrap();
        assert_eq!(r.required, 0.0);
        assert_eq!((r.signal_frequency, r.diffusion_frequency), (0.5, 0.5));
        let r3 = concentration_check(&samples, 3.0, 1.0, &report, 0.0, 0.25).unwrap();
        assert_relative_eq!(r3.required, 0.950212931632136, epsilon = 1e-12);
        assert!(r3.diffusion_bound > r.diffusion_bound);
    }
}
