//! Simulation study: for every error level, simulate replicate datasets,
//! fit each model and score the transition estimates by MSE, squared bias
//! and variance against the matrix that generated each dataset.

use std::path::Path;

use rayon::prelude::*;
use spocc_core::metrics::{estimator_quality, EstimatorQuality};
use spocc_core::random::derive_seed;
use spocc_core::sampler::Parameter;
use spocc_core::simulate::simulate_dataset;
use spocc_core::TransitionMatrix;

use crate::config::{ModelChoice, StudyConfig};
use crate::error::{CliError, Result, ResultExt};
use crate::fit::{fit_model, FitOutcome};
use crate::io::column_name;

const SCENARIO_STREAM: u64 = 0x7363_656e;
const FIT_STREAM: u64 = 0x66_6974;

/// Point estimates from one (level, dataset, model) fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub level: usize,
    pub error_rate: f64,
    pub replicate: usize,
    pub model: ModelChoice,
    pub truth: TransitionMatrix,
    pub transitions: TransitionMatrix,
    /// Naive columns with no observed transitions; left out of scoring.
    pub unobserved: Vec<usize>,
    pub error_rate_hat: Option<f64>,
    /// `(sigma1, sigma2, rho)` for the spatial model.
    pub kernel: Option<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityRow {
    pub error_rate: f64,
    pub model: ModelChoice,
    /// `P`, `e`, `sigma1` or `sigma2`.
    pub parameter: String,
    pub quality: EstimatorQuality,
    pub estimates: usize,
    pub excluded: usize,
}

/// A kernel-scale estimate dropped for being far from the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Exclusion {
    pub error_rate: f64,
    pub replicate: usize,
    pub model: ModelChoice,
    pub parameter: String,
    pub estimate: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub fits: Vec<FitRecord>,
    pub quality: Vec<QualityRow>,
    pub exclusions: Vec<Exclusion>,
}

impl StudyResult {
    pub fn quality(&self, error_rate: f64, model: ModelChoice, parameter: &str) -> Option<&QualityRow> {
        self.quality.iter().find(|q| q.error_rate == error_rate && q.model == model && q.parameter == parameter)
    }
}

fn model_index(m: ModelChoice) -> u64 {
    match m {
        ModelChoice::Naive => 0,
        ModelChoice::Nonspatial => 1,
        ModelChoice::Spatial => 2,
    }
}

fn run_job(config: &StudyConfig, level: usize, replicate: usize, model: ModelChoice) -> Result<FitRecord> {
    let error_rate = config.error_levels[level];
    let scenario = config.design.scenario(error_rate, derive_seed(config.seed, &[SCENARIO_STREAM, level as u64]))?;
    let data = simulate_dataset(&scenario, replicate)?;
    let seed = derive_seed(config.seed, &[FIT_STREAM, level as u64, replicate as u64, model_index(model)]);
    let kind = model.sampler().unwrap_or(spocc_core::sampler::ModelKind::NonSpatial);
    let fit_config = config.fit.to_config(kind, seed);
    let outcome = fit_model(model, &data.observations, &scenario.frame, &scenario.states, &fit_config, false)?;
    log::info!("e={error_rate} dataset {replicate} {}: done", model.name());
    Ok(match outcome {
        FitOutcome::Naive { transitions, unobserved } => FitRecord {
            level,
            error_rate,
            replicate,
            model,
            truth: data.transitions,
            transitions,
            unobserved,
            error_rate_hat: None,
            kernel: None,
        },
        FitOutcome::Bayesian { summary, .. } => FitRecord {
            level,
            error_rate,
            replicate,
            model,
            truth: data.transitions,
            transitions: summary.transitions.clone(),
            unobserved: Vec::new(),
            error_rate_hat: Some(summary.error_rate),
            kernel: summary.bandwidth.map(|b| (b.sigma1(), b.sigma2(), b.rho())),
        },
    })
}

/// Transition quality when each dataset has its own generating matrix:
/// entrywise deviations `estimate - truth` are scored against zero. With a
/// shared truth this equals `matrix_quality`.
fn transition_quality(fits: &[&FitRecord]) -> Result<EstimatorQuality> {
    let s = fits[0].truth.states();
    let mut acc = EstimatorQuality::default();
    let mut entries = 0usize;
    for to in 0..s {
        for from in 0..s {
            let dev: Vec<f64> = fits
                .iter()
                .filter(|f| !f.unobserved.contains(&from))
                .map(|f| f.transitions.get(to, from) - f.truth.get(to, from))
                .collect();
            if dev.is_empty() {
                continue;
            }
            let q = estimator_quality(&dev, 0.0);
            acc.mse += q.mse;
            acc.bias2 += q.bias2;
            acc.var += q.var;
            entries += 1;
        }
    }
    if entries == 0 {
        return Err(CliError::Invalid("no transition column was estimable in any dataset".into()));
    }
    let k = entries as f64;
    Ok(EstimatorQuality { mse: acc.mse / k, bias2: acc.bias2 / k, var: acc.var / k })
}

/// Runs the whole study. Fits are spread over the rayon pool; results are
/// ordered by level, dataset and model whatever the scheduling.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let mut models = config.models.clone();
    models.sort();
    models.dedup();
    let jobs: Vec<(usize, usize, ModelChoice)> = (0..config.error_levels.len())
        .flat_map(|l| {
            (0..config.datasets).flat_map({
                let models = models.clone();
                move |r| models.clone().into_iter().map(move |m| (l, r, m))
            })
        })
        .collect();
    let run = || -> Result<Vec<FitRecord>> {
        jobs.par_iter()
            .map(|&(l, r, m)| {
                run_job(config, l, r, m)
                    .context(|| format!("error level {} dataset {} model {}", config.error_levels[l], r, m.name()))
            })
            .collect()
    };
    let fits = if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?
            .install(run)?
    } else {
        run()?
    };

    let mut quality = Vec::new();
    let mut exclusions = Vec::new();
    let (sigma1, sigma2) = (config.design.sigma1, config.design.sigma2);
    for (l, &error_rate) in config.error_levels.iter().enumerate() {
        for &model in &models {
            let group: Vec<&FitRecord> = fits.iter().filter(|f| f.level == l && f.model == model).collect();
            quality.push(QualityRow {
                error_rate,
                model,
                parameter: "P".into(),
                quality: transition_quality(&group)?,
                estimates: group.len(),
                excluded: 0,
            });
            let e_hat: Vec<f64> = group.iter().filter_map(|f| f.error_rate_hat).collect();
            if !e_hat.is_empty() {
                quality.push(QualityRow {
                    error_rate,
                    model,
                    parameter: "e".into(),
                    quality: estimator_quality(&e_hat, error_rate),
                    estimates: e_hat.len(),
                    excluded: 0,
                });
            }
            for (name, truth, pick) in [
                ("sigma1", sigma1, (|k: (f64, f64, f64)| k.0) as fn((f64, f64, f64)) -> f64),
                ("sigma2", sigma2, |k: (f64, f64, f64)| k.1),
            ] {
                let mut kept = Vec::new();
                let mut excluded = 0;
                for f in &group {
                    let Some(k) = f.kernel else { continue };
                    let v = pick(k);
                    if (v - truth).abs() > config.sigma_exclusion {
                        log::warn!(
                            "excluding {name} estimate {v} (truth {truth}) at e={error_rate}, dataset {}, model {}",
                            f.replicate,
                            model.name()
                        );
                        exclusions.push(Exclusion {
                            error_rate,
                            replicate: f.replicate,
                            model,
                            parameter: name.into(),
                            estimate: v,
                            truth,
                        });
                        excluded += 1;
                    } else {
                        kept.push(v);
                    }
                }
                if !kept.is_empty() || excluded > 0 {
                    quality.push(QualityRow {
                        error_rate,
                        model,
                        parameter: name.into(),
                        quality: estimator_quality(&kept, truth),
                        estimates: kept.len(),
                        excluded,
                    });
                }
            }
        }
    }
    Ok(StudyResult { fits, quality, exclusions })
}

fn writer(path: &Path) -> Result<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(std::io::BufWriter::new(file)))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Invalid(format!("{}: {e}", path.display()))
}

/// Writes `quality.csv`, `estimates.csv` and `exclusions.csv` into `dir`.
pub fn write_study(dir: &Path, config: &StudyConfig, result: &StudyResult) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;

    let path = dir.join("quality.csv");
    let mut w = writer(&path)?;
    w.write_record(["error_rate", "model", "parameter", "mse", "bias2", "var", "estimates", "excluded"])
        .map_err(csv_err(&path))?;
    for q in &result.quality {
        w.write_record([
            q.error_rate.to_string(),
            q.model.name().into(),
            q.parameter.clone(),
            q.quality.mse.to_string(),
            q.quality.bias2.to_string(),
            q.quality.var.to_string(),
            q.estimates.to_string(),
            q.excluded.to_string(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let path = dir.join("estimates.csv");
    let mut w = writer(&path)?;
    let s = config.design.states;
    let entries: Vec<Parameter> =
        (0..s).flat_map(|to| (0..s).map(move |from| Parameter::Transition { to, from })).collect();
    let mut header: Vec<String> = vec!["error_rate".into(), "dataset".into(), "model".into()];
    header.extend(entries.iter().map(|&p| column_name(p)));
    header.extend(entries.iter().map(|&p| format!("true_{}", column_name(p))));
    header.extend(["e", "sigma1", "sigma2", "rho"].map(String::from));
    w.write_record(&header).map_err(csv_err(&path))?;
    for f in &result.fits {
        let mut row = vec![f.error_rate.to_string(), f.replicate.to_string(), f.model.name().to_string()];
        for &p in &entries {
            let Parameter::Transition { to, from } = p else { unreachable!() };
            row.push(if f.unobserved.contains(&from) {
                String::new()
            } else {
                f.transitions.get(to, from).to_string()
            });
        }
        for &p in &entries {
            let Parameter::Transition { to, from } = p else { unreachable!() };
            row.push(f.truth.get(to, from).to_string());
        }
        row.push(f.error_rate_hat.map_or(String::new(), |v| v.to_string()));
        match f.kernel {
            Some((a, b, c)) => row.extend([a.to_string(), b.to_string(), c.to_string()]),
            None => row.extend([String::new(), String::new(), String::new()]),
        }
        w.write_record(&row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let path = dir.join("exclusions.csv");
    let mut w = writer(&path)?;
    w.write_record(["error_rate", "dataset", "model", "parameter", "estimate", "truth"]).map_err(csv_err(&path))?;
    for x in &result.exclusions {
        w.write_record([
            x.error_rate.to_string(),
            x.replicate.to_string(),
            x.model.name().into(),
            x.parameter.clone(),
            x.estimate.to_string(),
            x.truth.to_string(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(())
}
