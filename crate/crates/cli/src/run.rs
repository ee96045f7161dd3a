//! Experiment dispatch, result files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use enekf::ekf::EkfState;
use enekf::ensemble::{divergence_probe, ensemble_csv_header};
use enekf::metrics::Verdict;
use enekf::stability::compute_report;
use enekf::studies::{self, ChaosSettings};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, ExperimentKind};

/// What a finished experiment reports back to the caller.
pub struct RunOutcome {
    pub blow_up: bool,
    pub verdicts: Vec<Verdict>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    status: &'a str,
    version: &'a str,
    experiment: String,
    config_sha256: String,
    config: &'a str,
    seed: u64,
    /// Streams are keyed by (seed, role, run, unit); runs are numbered 0..runs.
    runs: usize,
    files: Vec<String>,
    started_unix: u64,
    wall_clock_seconds: Option<f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn write_csv(&mut self, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot create {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.into_iter().map(fmt))?;
        }
        w.flush()?;
        self.files.push(name.into());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write_text(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        self.files.push(name.into());
        Ok(())
    }
}

fn runs_of(config: &ExperimentConfig) -> usize {
    config.ensemble.as_ref().map_or(1, |e| e.repetitions)
}

/// Runs the experiment, writing the manifest before any result and again when done.
pub fn run(config: &ExperimentConfig, config_text: &str, dir: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut manifest = Manifest {
        status: "running",
        version: env!("CARGO_PKG_VERSION"),
        experiment: config.experiment.name().to_string(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        config: config_text,
        seed: config.seed,
        runs: runs_of(config),
        files: Vec::new(),
        started_unix,
        wall_clock_seconds: None,
    };
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;

    let mut out = Output { dir: dir.to_path_buf(), files: Vec::new() };
    let outcome = match dispatch(config, &mut out) {
        Ok(o) => o,
        Err(e) if matches!(e.downcast_ref::<enekf::Error>(), Some(enekf::Error::NonFinite(_))) => {
            RunOutcome { blow_up: true, verdicts: Vec::new() }
        }
        Err(e) => return Err(e),
    };
    if !outcome.verdicts.is_empty() {
        out.write_json("verdicts.json", &outcome.verdicts)?;
    }

    manifest.status = if outcome.blow_up { "blow-up" } else { "complete" };
    manifest.files = out.files;
    manifest.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(outcome)
}

fn dispatch(config: &ExperimentConfig, out: &mut Output) -> Result<RunOutcome> {
    let problem = config.problem()?;
    let grid = config.grid()?;
    let seed = config.seed;
    let seeds = vec![seed];
    let study = &config.study;
    let eval_time = study.time.unwrap_or(grid.horizon());
    let mut verdicts = Vec::new();
    let mut blow_up = false;
    match config.experiment {
        ExperimentKind::StabilityReport => {
            let report = compute_report(&problem);
            out.write_json("stability_report.json", &report)?;
            let table: String = report.table().iter().map(|(k, v)| format!("{k:<28} {v}\n")).collect();
            print!("{table}");
            out.write_text("stability_report.txt", &table)?;
            verdicts.push(Verdict::at_least("stability condition", f64::from(u8::from(report.cond_20)), 1.0, seeds));
        }
        ExperimentKind::EkfRun => {
            let (path, filter) = studies::ekf_run(&problem, grid, seed)?;
            let mut header = vec!["t".to_string()];
            header.extend((0..problem.dim()).map(|i| format!("x_{i}")));
            let rows = path.states.iter().enumerate().map(|(k, x)| {
                let mut r = vec![grid.time(k)];
                r.extend(x.iter());
                r
            });
            out.write_csv("truth.csv", &header, rows)?;
            out.write_csv("ekf.csv", &EkfState::csv_header(problem.dim()), filter.iter().map(EkfState::csv_row))?;
        }
        ExperimentKind::EnkfRun => {
            let ens = config.ensemble()?;
            for &n in &ens.n {
                let run = studies::enkf_run(&problem, grid, n, seed, ens.theta)?;
                blow_up |= run.blow_up;
                out.write_csv(
                    &format!("ensemble_n{n}.csv"),
                    &ensemble_csv_header(problem.dim()),
                    run.records.iter().map(|r| r.csv_row()),
                )?;
            }
        }
        ExperimentKind::MckeanConsistency => {
            let copies = config.ensemble()?.n[0];
            let c = studies::mckean_consistency(&problem, grid, copies, seed, eval_time)?;
            out.write_json("mckean_consistency.json", &c)?;
            verdicts.push(Verdict::at_most("mean within 4 standard errors", c.mean_ratio, 1.0, seeds.clone()));
            verdicts.push(Verdict::at_most("covariance within 4 standard errors", c.cov_ratio, 1.0, seeds));
        }
        ExperimentKind::ContractionStudy => {
            let paths = config.ensemble()?.repetitions;
            let s = studies::contraction_study(&problem, grid, paths, seed, study.slack, study.offset, study.scale)?;
            out.write_csv(
                "contraction.csv",
                &["t", "matched_mean_gap_sq", "mismatched_coupled_w2"].map(String::from),
                (0..s.times.len()).map(|k| vec![s.times[k], s.matched_mean_gap_sq[k], s.mismatched_coupled_w2[k]]),
            )?;
            out.write_json(
                "contraction.json",
                &serde_json::json!({
                    "paths": s.paths,
                    "lambda": s.lambda,
                    "matched_max_ratio": s.matched_max_ratio,
                    "matched_violations": s.matched_violations,
                    "mismatched_decay_rate": s.mismatched_decay_rate,
                }),
            )?;
            verdicts.push(Verdict::at_most("matched legs contract on every path", s.matched_max_ratio, 1.0, seeds));
        }
        ExperimentKind::FluctuationCheck => {
            let n = config.ensemble()?.n[0];
            let f = studies::fluctuation_check(&problem, grid, n, seed)?;
            out.write_json("fluctuation.json", &f)?;
            verdicts.push(Verdict::at_most("max |z| of bracket checks", f.max_abs_z, 4.0, seeds));
        }
        ExperimentKind::ChaosStudy => {
            let ens = config.ensemble()?;
            let settings = ChaosSettings {
                n_list: ens.n.clone(),
                reps: ens.repetitions,
                theta: ens.theta,
                t_burn: config.numerics.t_burn,
                pair_time: study.time,
            };
            let s = studies::chaos_study(&problem, grid, &settings, seed)?;
            let mut header = vec!["t".to_string()];
            header.extend(s.n.iter().map(|n| format!("mean_xi_n{n}")));
            out.write_csv(
                "chaos_xi.csv",
                &header,
                (0..s.times.len()).map(|k| {
                    let mut r = vec![s.times[k]];
                    r.extend(s.mean_xi.iter().map(|c| c[k]));
                    r
                }),
            )?;
            out.write_json("chaos_rate_fit.json", &s)?;
            let decreasing = s.sup_mean_xi.windows(2).all(|w| w[1] < w[0]);
            verdicts.push(Verdict::at_least("rate exponent lower limit", s.fit.beta, 0.3, seeds.clone()));
            verdicts.push(Verdict::at_most("rate exponent upper limit", s.fit.beta, 0.7, seeds.clone()));
            verdicts.push(Verdict::at_least("log-log R^2", s.fit.r_squared, 0.95, seeds.clone()));
            verdicts.push(Verdict::at_least("sup E[Xi] strictly decreasing", f64::from(u8::from(decreasing)), 1.0, seeds));
        }
        ExperimentKind::ConcentrationCheck => {
            let runs = config.ensemble()?.repetitions;
            let start = match &study.start {
                Some(s) => s.build(problem.dim(), "study.start")?,
                None => problem.x0_mean.clone(),
            };
            let r = studies::concentration_study(&problem, grid, runs, seed, study.delta, eval_time, &start)?;
            out.write_json("concentration.json", &r)?;
            let required = r.required - 0.02;
            verdicts.push(Verdict::at_least("signal event frequency", r.signal_frequency, required, seeds.clone()));
            verdicts.push(Verdict::at_least("diffusion event frequency", r.diffusion_frequency, required, seeds));
        }
        ExperimentKind::DivergenceProbe => {
            let ens = config.ensemble()?;
            for &n in &ens.n {
                let d = divergence_probe(&problem, n, grid, seed, ens.theta)?;
                blow_up |= d.blow_up;
                out.write_csv(
                    &format!("divergence_n{n}.csv"),
                    &["t", "norm_m", "lambda_min_p"].map(String::from),
                    d.records.iter().map(|r| vec![r.0, r.1, r.2]),
                )?;
                out.write_json(
                    &format!("divergence_n{n}.json"),
                    &serde_json::json!({
                        "n": d.n,
                        "max_norm_m": d.max_norm_m,
                        "min_lambda_min_p": d.min_lambda_min_p,
                        "max_lambda_min_p": d.max_lambda_min_p,
                        "blow_up": d.blow_up,
                        "blow_up_time": d.blow_up_time,
                        "growth_rate": d.growth_rate,
                    }),
                )?;
            }
        }
    }
    Ok(RunOutcome { blow_up, verdicts })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn csv_numbers_keep_full_precision() {
        let x = 0.1 + 0.2;
        assert_eq!(fmt(x).parse::<f64>().unwrap(), x);
        assert_eq!(fmt(f64::NAN), "NaN");
    }

}
