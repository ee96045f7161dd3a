//! Experiment configuration: TOML schema, problem construction and validation.

use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use enekf::linalg;
use enekf::models::{
    build_cubic_langevin, build_interacting_potential, build_quadratic_langevin, AffineDrift, CubicPotentialSpec,
    FilteringProblem, InteractingPotentialSpec, LogCoshPair, LogCoshScalar, QuadraticPotentialSpec, SensorModel,
    SignalModel, TimeGrid,
};
use enekf::stability::compute_report;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    StabilityReport,
    EkfRun,
    EnkfRun,
    MckeanConsistency,
    ContractionStudy,
    FluctuationCheck,
    ChaosStudy,
    ConcentrationCheck,
    DivergenceProbe,
}

/// A matrix given either as a multiple of the identity or as nested rows.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn build(&self, dim: usize, name: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixSpec::Scalar(s) => Ok(DMatrix::identity(dim, dim) * *s),
            MatrixSpec::Rows(rows) => {
                let n = rows.len();
                if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
                    bail!("{name} must be a non-empty rectangular array of rows");
                }
                Ok(DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
            }
        }
    }

    fn rows(&self) -> Option<usize> {
        match self {
            MatrixSpec::Scalar(_) => None,
            MatrixSpec::Rows(r) => Some(r.len()),
        }
    }
}

/// A vector given either as one value repeated or as explicit entries.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum VectorSpec {
    Scalar(f64),
    Values(Vec<f64>),
}

impl VectorSpec {
    pub fn build(&self, dim: usize, name: &str) -> Result<DVector<f64>> {
        match self {
            VectorSpec::Scalar(s) => Ok(DVector::from_element(dim, *s)),
            VectorSpec::Values(v) if v.len() == dim => Ok(DVector::from_column_slice(v)),
            VectorSpec::Values(v) => bail!("{name} has {} entries, expected {dim}", v.len()),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family", deny_unknown_fields)]
pub enum ModelConfig {
    /// `A(x) = -beta (Q1 x + q)`. `v` sets `Q1 = v/(4 beta) Id` so that `lambda_dA = v/2`.
    Quadratic {
        dim: Option<usize>,
        v: Option<f64>,
        q1: Option<MatrixSpec>,
        q: Option<VectorSpec>,
        #[serde(default = "one")]
        beta: f64,
        sigma1: f64,
    },
    Cubic {
        dim: Option<usize>,
        q1: MatrixSpec,
        q2: MatrixSpec,
        q: Option<VectorSpec>,
        #[serde(default = "one")]
        beta: f64,
        sigma1: f64,
    },
    /// `U1(x) = (u1/2) x^2 + c1 ln cosh x`, `U2(x, y) = (u2/2)(x^2 + y^2) + c2 ln cosh(x - y)`.
    Interacting {
        dim: usize,
        u1: f64,
        #[serde(default)]
        c1: f64,
        #[serde(default)]
        u2: f64,
        #[serde(default)]
        c2: f64,
        #[serde(default = "one")]
        beta: f64,
        sigma1: f64,
    },
    /// `A(x) = a x + offset`, with `lambda_dA = -lambda_max(a + a')` unless declared.
    Linear {
        dim: Option<usize>,
        a: MatrixSpec,
        offset: Option<VectorSpec>,
        r1: Option<MatrixSpec>,
        sigma1: Option<f64>,
        lambda: Option<f64>,
    },
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::StabilityReport => "stability-report",
            ExperimentKind::EkfRun => "ekf-run",
            ExperimentKind::EnkfRun => "enkf-run",
            ExperimentKind::MckeanConsistency => "mckean-consistency",
            ExperimentKind::ContractionStudy => "contraction-study",
            ExperimentKind::FluctuationCheck => "fluctuation-check",
            ExperimentKind::ChaosStudy => "chaos-study",
            ExperimentKind::ConcentrationCheck => "concentration-check",
            ExperimentKind::DivergenceProbe => "divergence-probe",
        }
    }
}

fn one() -> f64 {
    1.0
}

impl ModelConfig {
    fn dim(&self) -> Result<usize> {
        let (declared, inferred) = match self {
            ModelConfig::Quadratic { dim, q1, .. } => (*dim, q1.as_ref().and_then(MatrixSpec::rows)),
            ModelConfig::Cubic { dim, q1, q2, .. } => (*dim, q1.rows().or(q2.rows())),
            ModelConfig::Interacting { dim, .. } => (Some(*dim), None),
            ModelConfig::Linear { dim, a, .. } => (*dim, a.rows()),
        };
        match (declared, inferred) {
            (Some(d), Some(i)) if d != i => bail!("model.dim = {d} conflicts with matrices of size {i}"),
            (Some(0), _) => bail!("model.dim must be positive"),
            (Some(d), _) | (None, Some(d)) => Ok(d),
            (None, None) => Ok(1),
        }
    }

    pub fn build(&self) -> Result<SignalModel> {
        let n = self.dim()?;
        let signal = match self {
            ModelConfig::Quadratic { v, q1, q, beta, sigma1, .. } => {
                let q1 = match (v, q1) {
                    (Some(v), None) => DMatrix::identity(n, n) * (v / (4.0 * beta)),
                    (None, Some(m)) => m.build(n, "model.q1")?,
                    _ => bail!("quadratic model needs exactly one of `v` and `q1`"),
                };
                let q = q.as_ref().map_or(Ok(DVector::zeros(n)), |q| q.build(n, "model.q"))?;
                build_quadratic_langevin(&QuadraticPotentialSpec { q1, q, beta: *beta, sigma1: *sigma1 })?
            }
            ModelConfig::Cubic { q1, q2, q, beta, sigma1, .. } => build_cubic_langevin(&CubicPotentialSpec {
                q1: q1.build(n, "model.q1")?,
                q2: q2.build(n, "model.q2")?,
                q: q.as_ref().map_or(Ok(DVector::zeros(n)), |q| q.build(n, "model.q"))?,
                beta: *beta,
                sigma1: *sigma1,
            })?,
            ModelConfig::Interacting { u1, c1, u2, c2, beta, sigma1, .. } => {
                let single = LogCoshScalar { quadratic: *u1, log_cosh: *c1 };
                let pair = LogCoshPair { quadratic: *u2, log_cosh: *c2 };
                let spec = InteractingPotentialSpec {
                    r1: n,
                    u1_hessian_lb: single.hessian_lower_bound(),
                    u2_hessian_lb: pair.hessian_lower_bound(),
                    kappa1: single.hessian_lipschitz(),
                    kappa2: pair.hessian_lipschitz(),
                    beta: *beta,
                    sigma1: *sigma1,
                };
                build_interacting_potential(&spec, Arc::new(single), Arc::new(pair))?
            }
            ModelConfig::Linear { a, offset, r1, sigma1, lambda, .. } => {
                let a = a.build(n, "model.a")?;
                if a.shape() != (n, n) {
                    bail!("model.a must be {n}x{n}");
                }
                let offset = offset.as_ref().map_or(Ok(DVector::zeros(n)), |o| o.build(n, "model.offset"))?;
                let r1 = match (r1, sigma1) {
                    (Some(r), None) => r.build(n, "model.r1")?,
                    (None, Some(s)) => DMatrix::identity(n, n) * (s * s),
                    _ => bail!("linear model needs exactly one of `r1` and `sigma1`"),
                };
                let lambda = lambda.unwrap_or_else(|| -linalg::lambda_max(&(&a + a.transpose())));
                SignalModel::new(Arc::new(AffineDrift::new(a, offset)), r1, lambda, 0.0)?
            }
        };
        Ok(signal)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    /// Fully observed sensor `B = b Id`, `R2 = sigma2^2 Id`.
    pub b: Option<f64>,
    pub sigma2: Option<f64>,
    /// Full observation matrix and noise covariance.
    pub matrix: Option<MatrixSpec>,
    pub r2: Option<MatrixSpec>,
}

impl SensorConfig {
    pub fn build(&self, dim: usize) -> Result<SensorModel> {
        match (self.b, self.sigma2, &self.matrix, &self.r2) {
            (Some(b), Some(s), None, None) => Ok(SensorModel::fully_observed(dim, b, s)?),
            (None, None, Some(m), Some(r2)) => {
                let b = m.build(dim, "sensor.matrix")?;
                let r2 = r2.build(b.nrows(), "sensor.r2")?;
                Ok(SensorModel::new(b, r2)?)
            }
            _ => bail!("sensor needs either `b` and `sigma2`, or `matrix` and `r2`"),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub mean: VectorSpec,
    pub cov: MatrixSpec,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsConfig {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub t_burn: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n: Vec<usize>,
    #[serde(default)]
    pub theta: f64,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
}

fn default_reps() -> usize {
    1
}

/// Experiment-specific knobs; unused ones are ignored by other kinds.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Evaluation time for consistency, concentration and particle comparisons.
    pub time: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_slack")]
    pub slack: f64,
    /// Mean shift and covariance scale of the mismatched filter in contraction studies.
    #[serde(default = "one")]
    pub offset: f64,
    #[serde(default = "two")]
    pub scale: f64,
    /// Hidden-signal start for concentration checks; defaults to the initial mean.
    pub start: Option<VectorSpec>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { time: None, delta: default_delta(), slack: default_slack(), offset: 1.0, scale: 2.0, start: None }
    }
}

fn default_delta() -> f64 {
    3.0
}
fn default_slack() -> f64 {
    10.0
}
fn two() -> f64 {
    2.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub output_dir: Option<String>,
    pub model: ModelConfig,
    pub sensor: SensorConfig,
    pub initial: InitialConfig,
    pub numerics: NumericsConfig,
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default)]
    pub study: StudyConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow!("invalid config: {e}"))
    }

    pub fn problem(&self) -> Result<FilteringProblem> {
        let signal = self.model.build().context("invalid model block")?;
        let n = signal.dim();
        let sensor = self.sensor.build(n).context("invalid sensor block")?;
        let mean = self.initial.mean.build(n, "initial.mean")?;
        let cov = self.initial.cov.build(n, "initial.cov")?;
        Ok(FilteringProblem::new(signal, sensor, mean, cov).context("invalid initial block")?)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::new(self.numerics.dt, self.numerics.horizon)?)
    }

    pub fn ensemble(&self) -> Result<&EnsembleConfig> {
        self.ensemble.as_ref().ok_or_else(|| anyhow!("experiment {:?} needs an [ensemble] block", self.experiment))
    }

    fn needs_ensemble(&self) -> bool {
        !matches!(self.experiment, ExperimentKind::StabilityReport | ExperimentKind::EkfRun)
    }
}

/// Hard errors and stability warnings for one configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Validation {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

/// Parses and checks a configuration without running it.
pub fn validate(text: &str) -> (Option<ExperimentConfig>, Validation) {
    let mut v = Validation::default();
    let config = match ExperimentConfig::parse(text) {
        Ok(c) => c,
        Err(e) => {
            v.errors.push(e.to_string());
            return (None, v);
        }
    };
    let n = &config.numerics;
    if !(n.dt > 0.0) || !n.dt.is_finite() {
        v.errors.push(format!("numerics.dt must be positive, got {}", n.dt));
    } else if !(n.horizon >= n.dt) {
        v.errors.push(format!("numerics.horizon ({}) must be at least dt ({})", n.horizon, n.dt));
    }
    if !(n.t_burn >= 0.0) || n.t_burn > n.horizon {
        v.errors.push(format!("numerics.t_burn must lie in [0, horizon], got {}", n.t_burn));
    }
    match &config.ensemble {
        Some(e) => {
            if e.n.is_empty() || e.n.contains(&0) {
                v.errors.push("ensemble.n must be a non-empty list of sizes >= 1".into());
            }
            if !(e.theta >= 0.0) {
                v.errors.push(format!("ensemble.theta must be nonnegative, got {}", e.theta));
            }
            if e.repetitions == 0 {
                v.errors.push("ensemble.repetitions must be >= 1".into());
            }
            if config.experiment == ExperimentKind::ChaosStudy && (e.n.len() < 3 || e.n.windows(2).any(|w| w[0] >= w[1])) {
                v.errors.push("chaos-study needs at least 3 strictly increasing ensemble sizes".into());
            }
        }
        None if config.needs_ensemble() => v.errors.push(format!("experiment {:?} needs an [ensemble] block", config.experiment)),
        None => {}
    }
    if let Some(t) = config.study.time {
        if !(t >= 0.0 && t <= n.horizon) {
            v.errors.push(format!("study.time = {t} must lie in [0, horizon]"));
        }
    }
    match config.problem() {
        Ok(problem) => v.warnings.extend(compute_report(&problem).warnings),
        Err(e) => v.errors.push(format!("{e:#}")),
    }
    (Some(config), v)
}
