//! Batch command front end: `sample`, `rate`, `check`, `oracle`.
//!
//! Exit codes are part of the interface: 0 pass, 2 config error, 3 divergence
//! budget exceeded, 4 rate-check failure, 5 oracle failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::{BatchFormat, BridgeRun, DistanceRequest, ExperimentConfig};
use crate::io::{format_f64, write_batch_csv, write_batch_ulab};
use crate::metric::{
    ou_em_law, sliced_wp, tv_histogram, w2_gaussian, w_p_1d, DistanceMeta, DistanceReport,
    EstimatorKind, GaussianLaw,
};
use crate::model::{probe_holder_modulus, probe_partial_dissipation, Diffusion, Drift, ModelSpec};
use crate::ratefit::{check_rate, fit_rate};
use crate::sim::{
    reference_samples, run_noisy_gd_series, snapshot_series, ReferenceMethod, SampleBatch,
    SamplerConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_RATE_FAIL: i32 = 4;
pub const EXIT_ORACLE_FAIL: i32 = 5;

/// Fraction of chains allowed to diverge before an experiment is failed.
pub const DIVERGENCE_BUDGET: f64 = 1e-3;

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn load(config_path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, String> {
    let mut cfg = ExperimentConfig::load(config_path).map_err(|e| e.to_string())?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.output_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}_out", cfg.name)))
}

fn run_chains(cfg: &ExperimentConfig) -> Result<Vec<SampleBatch>, String> {
    match &cfg.bridge {
        Some(BridgeRun {
            data,
            lambda,
            gamma,
            noise_scale,
        }) => run_noisy_gd_series(
            data,
            *lambda,
            *gamma,
            &cfg.schedule,
            noise_scale,
            cfg.x0.as_slice().unwrap(),
            &cfg.checkpoints,
            cfg.n_chains,
            cfg.seed,
        )
        .map_err(|e| e.to_string()),
        None => snapshot_series(
            &SamplerConfig {
                model: cfg.model.clone(),
                schedule: cfg.schedule.clone(),
                x0: cfg.x0.clone(),
                n_steps: *cfg.checkpoints.last().unwrap(),
                n_chains: cfg.n_chains,
                seed: cfg.seed,
            },
            &cfg.checkpoints,
        )
        .map_err(|e| e.to_string()),
    }
}

fn divergence_exceeded(batches: &[SampleBatch], n_chains: usize) -> Option<usize> {
    let worst = batches.iter().map(|b| b.diverged.len()).max().unwrap_or(0);
    if worst as f64 > DIVERGENCE_BUDGET * n_chains as f64 {
        Some(worst)
    } else {
        None
    }
}

/// `sample <cfg>`: one batch file per checkpoint plus a manifest CSV.
pub fn cmd_sample(config_path: &Path, overrides: &Overrides, log: &mut impl Write) -> i32 {
    let cfg = match load(config_path, overrides) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(log, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let batches = match run_chains(&cfg) {
        Ok(b) => b,
        Err(e) => {
            let _ = writeln!(log, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(worst) = divergence_exceeded(&batches, cfg.n_chains) {
        let _ = writeln!(
            log,
            "divergence budget exceeded: {worst} of {} chains diverged",
            cfg.n_chains
        );
        return EXIT_DIVERGENCE;
    }
    let dir = out_dir(&cfg);
    if let Err(e) = std::fs::create_dir_all(&dir) {
        let _ = writeln!(log, "config error: cannot create {}: {e}", dir.display());
        return EXIT_CONFIG;
    }
    let ext = match cfg.batch_format {
        BatchFormat::Csv => "csv",
        BatchFormat::Ulab1 => "ulab",
    };
    let mut manifest = String::from("checkpoint,t_n,file,diverged_count\n");
    for batch in &batches {
        let file = format!("batch_{:08}.{ext}", batch.step_index);
        let path = dir.join(&file);
        let res = match cfg.batch_format {
            BatchFormat::Csv => write_batch_csv(batch, &path),
            BatchFormat::Ulab1 => write_batch_ulab(batch, &path),
        };
        if let Err(e) = res {
            let _ = writeln!(log, "config error: cannot write {}: {e}", path.display());
            return EXIT_CONFIG;
        }
        manifest.push_str(&format!(
            "{},{},{file},{}\n",
            batch.step_index,
            format_f64(batch.time),
            batch.diverged.len()
        ));
    }
    if let Err(e) = std::fs::write(dir.join("manifest.csv"), manifest) {
        let _ = writeln!(log, "config error: cannot write manifest: {e}");
        return EXIT_CONFIG;
    }
    let _ = writeln!(
        log,
        "wrote {} batches and manifest.csv to {}",
        batches.len(),
        dir.display()
    );
    EXIT_OK
}

/// OU rate parameters (a, sigma) when the model is isotropic OU with a
/// constant isotropic diffusion.
fn isotropic_ou_params(model: &ModelSpec) -> Option<(f64, f64)> {
    let a = match &model.drift {
        Drift::Ou { rate_matrix } => {
            let d = rate_matrix.nrows();
            let a = rate_matrix[[0, 0]];
            let iso = (0..d).all(|i| {
                (0..d).all(|j| rate_matrix[[i, j]] == if i == j { a } else { 0.0 })
            });
            if iso {
                a
            } else {
                return None;
            }
        }
        _ => return None,
    };
    let sigma = match &model.diffusion {
        Diffusion::ConstantMatrix { sigma } => {
            let d = sigma.nrows();
            let s = sigma[[0, 0]];
            let iso = (0..d).all(|i| (0..d).all(|j| sigma[[i, j]] == if i == j { s } else { 0.0 }));
            if iso {
                s
            } else {
                return None;
            }
        }
        _ => return None,
    };
    Some((a, sigma))
}

fn reference_gaussian(cfg: &ExperimentConfig) -> Result<GaussianLaw, String> {
    match cfg.reference.as_ref().map(|r| &r.method) {
        Some(ReferenceMethod::ExactGaussian { mean, cov_diag }) => {
            Ok(GaussianLaw::diagonal(mean.clone(), cov_diag.clone()))
        }
        _ => Err("closed-form estimators need an exact_gaussian reference".into()),
    }
}

fn needs_reference_samples(distances: &[DistanceRequest]) -> bool {
    distances.iter().any(|d| {
        matches!(
            d.estimator,
            EstimatorKind::Sorted1d | EstimatorKind::Sliced | EstimatorKind::TvHistogram
        )
    })
}

fn evaluate_distance(
    cfg: &ExperimentConfig,
    req: &DistanceRequest,
    batch: &SampleBatch,
    reference: Option<&SampleBatch>,
) -> Result<DistanceReport, String> {
    match req.estimator {
        EstimatorKind::Sorted1d => {
            if cfg.model.dim != 1 {
                return Err("sorted_1d estimator requires dim = 1".into());
            }
            let r = reference.ok_or("sorted_1d needs a sample reference")?;
            w_p_1d(&batch.column_vec(0), &r.column_vec(0), req.p).map_err(|e| e.to_string())
        }
        EstimatorKind::Sliced => {
            let r = reference.ok_or("sliced needs a sample reference")?;
            sliced_wp(&batch.values, &r.values, req.p, req.n_projections, cfg.seed)
                .map_err(|e| e.to_string())
        }
        EstimatorKind::TvHistogram => {
            let r = reference.ok_or("tv_histogram needs a sample reference")?;
            tv_histogram(&batch.values, &r.values, req.bins_per_dim).map_err(|e| e.to_string())
        }
        EstimatorKind::GaussianClosedForm => {
            let reference = reference_gaussian(cfg)?;
            let empirical = GaussianLaw::diagonal(batch.mean(), batch.variance());
            let value = w2_gaussian(&empirical, &reference).map_err(|e| e.to_string())?;
            Ok(DistanceReport {
                p: 2.0,
                estimator: EstimatorKind::GaussianClosedForm,
                value,
                stderr: None,
                meta: DistanceMeta {
                    n_a: Some(batch.n_samples()),
                    ..Default::default()
                },
            })
        }
        EstimatorKind::ExactOuLaw => {
            let (a, sigma) = isotropic_ou_params(&cfg.model)
                .ok_or("exact_ou_law requires an isotropic OU model with constant diffusion")?;
            let reference = reference_gaussian(cfg)?;
            let scalar = ou_em_law(a, sigma, &cfg.schedule, 1.0, batch.step_index)
                .map_err(|e| e.to_string())?;
            let m1 = scalar.mean[0];
            let v = scalar.cov_diag().map_err(|e| e.to_string())?[0];
            let law = GaussianLaw::diagonal(
                cfg.x0.iter().map(|x| x * m1).collect(),
                vec![v; cfg.model.dim],
            );
            let value = w2_gaussian(&law, &reference).map_err(|e| e.to_string())?;
            Ok(DistanceReport {
                p: 2.0,
                estimator: EstimatorKind::ExactOuLaw,
                value,
                stderr: None,
                meta: DistanceMeta::default(),
            })
        }
    }
}

/// `rate <cfg>`: the full pipeline — snapshots, reference, distances per
/// checkpoint, slope fit, verdict. Exit 0 iff the rate check passes.
pub fn cmd_rate(config_path: &Path, overrides: &Overrides, log: &mut impl Write) -> i32 {
    let cfg = match load(config_path, overrides) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(log, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let rate = match &cfg.rate {
        Some(r) => r.clone(),
        None => {
            let _ = writeln!(log, "config error: rate command needs a [rate] section");
            return EXIT_CONFIG;
        }
    };
    let batches = match run_chains(&cfg) {
        Ok(b) => b,
        Err(e) => {
            let _ = writeln!(log, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(worst) = divergence_exceeded(&batches, cfg.n_chains) {
        let _ = writeln!(
            log,
            "divergence budget exceeded: {worst} of {} chains diverged",
            cfg.n_chains
        );
        return EXIT_DIVERGENCE;
    }
    let reference = if needs_reference_samples(&cfg.distances) {
        let spec = match &cfg.reference {
            Some(s) => s,
            None => {
                let _ = writeln!(log, "config error: sample estimators need a [reference]");
                return EXIT_CONFIG;
            }
        };
        match reference_samples(spec, Some(&cfg.model), cfg.seed) {
            Ok(b) => Some(b),
            Err(e) => {
                let _ = writeln!(log, "config error: {e}");
                return EXIT_CONFIG;
            }
        }
    } else {
        None
    };

    let mut rates_csv = String::from("n,t_n,estimator,p,value,stderr\n");
    let mut fit_values: Vec<f64> = Vec::new();
    for batch in &batches {
        for (di, req) in cfg.distances.iter().enumerate() {
            let report = match evaluate_distance(&cfg, req, batch, reference.as_ref()) {
                Ok(r) => r,
                Err(e) => {
                    let _ = writeln!(log, "config error: {e}");
                    return EXIT_CONFIG;
                }
            };
            rates_csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                batch.step_index,
                format_f64(batch.time),
                report.estimator,
                format_f64(report.p),
                format_f64(report.value),
                report.stderr.map(format_f64).unwrap_or_default()
            ));
            if di == 0 {
                fit_values.push(report.value);
            }
        }
    }

    let fit = match fit_rate(&cfg.checkpoints, &fit_values, rate.drop_fraction) {
        Ok(f) => f,
        Err(e) => {
            let _ = writeln!(log, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let check = match check_rate(&fit, &rate.prediction, rate.tol) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(log, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let pass = check.pass && fit.r_squared >= rate.min_r2;

    let dir = out_dir(&cfg);
    if let Err(e) = std::fs::create_dir_all(&dir) {
        let _ = writeln!(log, "config error: cannot create {}: {e}", dir.display());
        return EXIT_CONFIG;
    }
    let verdict_csv = format!(
        "slope,predicted,tol,r2,pass\n{},{},{},{},{}\n",
        format_f64(check.slope),
        format_f64(check.predicted),
        format_f64(check.tol),
        format_f64(check.r_squared),
        pass
    );
    if let Err(e) = std::fs::write(dir.join("rates.csv"), &rates_csv)
        .and_then(|_| std::fs::write(dir.join("verdict.csv"), &verdict_csv))
    {
        let _ = writeln!(log, "config error: cannot write reports: {e}");
        return EXIT_CONFIG;
    }
    let _ = writeln!(
        log,
        "slope {} vs predicted {} (tol {}), r2 {} -> {}",
        format_f64(check.slope),
        format_f64(check.predicted),
        format_f64(check.tol),
        format_f64(check.r_squared),
        if pass { "pass" } else { "FAIL" }
    );
    if pass {
        EXIT_OK
    } else {
        EXIT_RATE_FAIL
    }
}

/// `check <cfg>`: assumption probes and schedule validation; informational.
pub fn cmd_check(config_path: &Path, overrides: &Overrides, log: &mut impl Write) -> i32 {
    let cfg = match load(config_path, overrides) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(log, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let report = cfg.schedule.validate();
    let _ = writeln!(log, "schedule: {report}");
    let probe = match probe_partial_dissipation(&cfg.model, 4096, 10.0, cfg.seed) {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(log, "config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let _ = writeln!(
        log,
        "dissipation probe: K1_hat = {}, K2_hat = {} ({} pairs, radius 10)",
        format_f64(probe.k1_hat),
        format_f64(probe.k2_hat),
        probe.n_pairs
    );
    let alpha = cfg.model.declared_alpha.min(1.0);
    match probe_holder_modulus(&cfg.model, 4096, 10.0, alpha, cfg.seed) {
        Ok(k1) => {
            let _ = writeln!(
                log,
                "holder modulus probe (alpha = {}): K1_hat = {}",
                format_f64(alpha),
                format_f64(k1)
            );
        }
        Err(e) => {
            let _ = writeln!(log, "config error: {e}");
            return EXIT_CONFIG;
        }
    }
    EXIT_OK
}

/// `oracle`: built-in estimator self-checks; exit 5 on any failure.
pub fn cmd_oracle(log: &mut impl Write) -> i32 {
    match crate::oracle::run_oracles(log, None) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_ORACLE_FAIL,
        Err(_) => EXIT_ORACLE_FAIL,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_config_is_exit_2() {
        let mut log = Vec::new();
        let code = cmd_sample(Path::new("/nonexistent.cfg"), &Overrides::default(), &mut log);
        assert_eq!(code, EXIT_CONFIG);
    }

    #[test]
    fn oracle_passes() {
        let mut log = Vec::new();
        assert_eq!(cmd_oracle(&mut log), EXIT_OK);
    }
}
