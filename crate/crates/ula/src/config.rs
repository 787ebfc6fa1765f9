//! Experiment configuration: a single TOML file describing model, schedule,
//! checkpoints, reference, distances and the rate check. Unknown keys are
//! rejected so typos fail loudly instead of silently running the wrong
//! experiment.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::Deserialize;
use thiserror::Error;

use crate::metric::EstimatorKind;
use crate::model::{Diffusion, DissipationClass, Drift, ModelSpec, RegressionData};
use crate::ratefit::RatePrediction;
use crate::schedule::{ScheduleKind, StepSchedule};
use crate::sim::{NoiseSchedule, ReferenceMethod, ReferenceSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Read(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error("schedule fails admissibility: {0}")]
    Schedule(String),
    #[error(transparent)]
    Data(#[from] crate::io::IoError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    name: String,
    seed: u64,
    n_chains: usize,
    x0: Vec<f64>,
    output_dir: Option<String>,
    /// "csv" (default) or "ulab1".
    batch_format: Option<String>,
    model: ModelSection,
    schedule: ScheduleSection,
    checkpoints: CheckpointsSection,
    reference: Option<ReferenceSection>,
    #[serde(default)]
    distances: Vec<DistanceSection>,
    noise_scale: Option<NoiseSection>,
    rate: Option<RateSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    drift: String,
    dim: usize,
    rate: Option<f64>,
    rate_matrix: Option<Vec<Vec<f64>>>,
    alpha: Option<f64>,
    data: Option<String>,
    lambda: Option<f64>,
    gamma: Option<f64>,
    diffusion: DiffusionSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiffusionSection {
    kind: String,
    scale: Option<f64>,
    matrix: Option<Vec<Vec<f64>>>,
    k_prime: Option<f64>,
    p: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleSection {
    kind: String,
    theta: Option<f64>,
    a: Option<f64>,
    eta: Option<f64>,
    steps: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointsSection {
    explicit: Option<Vec<usize>>,
    lo: Option<usize>,
    hi: Option<usize>,
    factor: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceSection {
    method: String,
    n_samples: usize,
    mean: Option<Vec<f64>>,
    cov_diag: Option<Vec<f64>>,
    alpha: Option<f64>,
    proposal_sd: Option<f64>,
    eta: Option<f64>,
    t_burn: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistanceSection {
    estimator: String,
    p: Option<f64>,
    n_projections: Option<usize>,
    bins_per_dim: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSection {
    kind: String,
    k_prime: Option<f64>,
    p: Option<f64>,
    value: Option<f64>,
    values: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RateSection {
    theorem: String,
    alpha: f64,
    p: Option<f64>,
    k2_prime: Option<f64>,
    tol: f64,
    drop_fraction: Option<f64>,
    min_r2: Option<f64>,
}

/// One distance requested per checkpoint.
#[derive(Debug, Clone)]
pub struct DistanceRequest {
    pub estimator: EstimatorKind,
    pub p: f64,
    pub n_projections: usize,
    pub bins_per_dim: Option<usize>,
}

/// The rate check driven by the first requested distance.
#[derive(Debug, Clone)]
pub struct RateRequest {
    pub prediction: RatePrediction,
    pub tol: f64,
    pub drop_fraction: f64,
    pub min_r2: f64,
}

/// Batch file format for `sample`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchFormat {
    Csv,
    Ulab1,
}

/// Fully validated experiment description.
#[derive(Debug)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub n_chains: usize,
    pub x0: Array1<f64>,
    pub output_dir: Option<PathBuf>,
    pub batch_format: BatchFormat,
    pub model: ModelSpec,
    /// Present when the model is a bridge gradient flow.
    pub bridge: Option<BridgeRun>,
    pub schedule: StepSchedule,
    pub checkpoints: Vec<usize>,
    pub reference: Option<ReferenceSpec>,
    pub distances: Vec<DistanceRequest>,
    pub rate: Option<RateRequest>,
}

/// Noisy gradient-descent experiment parameters.
#[derive(Debug, Clone)]
pub struct BridgeRun {
    pub data: Arc<RegressionData>,
    pub lambda: f64,
    pub gamma: f64,
    pub noise_scale: NoiseSchedule,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let file: ConfigFile = toml::from_str(&text)?;
        Self::from_file(file, path.parent().unwrap_or(Path::new(".")))
    }

    fn from_file(file: ConfigFile, base_dir: &Path) -> Result<Self, ConfigError> {
        if file.n_chains == 0 {
            return Err(invalid("n_chains must be at least 1"));
        }
        let schedule = parse_schedule(&file.schedule)?;
        let report = schedule.validate();
        if !report.is_valid() {
            return Err(ConfigError::Schedule(report.to_string()));
        }
        let checkpoints = parse_checkpoints(&file.checkpoints)?;
        let (model, bridge) = parse_model(&file.model, &file.noise_scale, base_dir, &schedule)?;
        if file.x0.len() != model.dim {
            return Err(invalid(format!(
                "x0 has dimension {}, model has dim {}",
                file.x0.len(),
                model.dim
            )));
        }
        let reference = file
            .reference
            .as_ref()
            .map(|r| parse_reference(r, model.dim))
            .transpose()?;
        let distances = file
            .distances
            .iter()
            .map(parse_distance)
            .collect::<Result<Vec<_>, _>>()?;
        let rate = file
            .rate
            .as_ref()
            .map(|r| parse_rate(r, &schedule))
            .transpose()?;
        if rate.is_some() && distances.is_empty() {
            return Err(invalid("a rate check requires at least one distance"));
        }
        let batch_format = match file.batch_format.as_deref() {
            None | Some("csv") => BatchFormat::Csv,
            Some("ulab1") => BatchFormat::Ulab1,
            Some(other) => return Err(invalid(format!("unknown batch_format '{other}'"))),
        };
        Ok(ExperimentConfig {
            name: file.name,
            seed: file.seed,
            n_chains: file.n_chains,
            x0: Array1::from(file.x0),
            output_dir: file.output_dir.map(PathBuf::from),
            batch_format,
            model,
            bridge,
            schedule,
            checkpoints,
            reference,
            distances,
            rate,
        })
    }
}

fn parse_schedule(s: &ScheduleSection) -> Result<StepSchedule, ConfigError> {
    let kind = match s.kind.as_str() {
        "polynomial" => ScheduleKind::Polynomial {
            theta: s
                .theta
                .ok_or_else(|| invalid("polynomial schedule needs theta"))?,
            a: s.a.ok_or_else(|| invalid("polynomial schedule needs a"))?,
        },
        "constant" => ScheduleKind::Constant {
            eta: s.eta.ok_or_else(|| invalid("constant schedule needs eta"))?,
        },
        "explicit" => ScheduleKind::Explicit(
            s.steps
                .clone()
                .ok_or_else(|| invalid("explicit schedule needs steps"))?,
        ),
        other => return Err(invalid(format!("unknown schedule kind '{other}'"))),
    };
    Ok(StepSchedule::new(kind))
}

fn parse_checkpoints(c: &CheckpointsSection) -> Result<Vec<usize>, ConfigError> {
    let out = if let Some(list) = &c.explicit {
        if c.lo.is_some() || c.hi.is_some() || c.factor.is_some() {
            return Err(invalid("checkpoints: give either explicit or lo/hi/factor"));
        }
        list.clone()
    } else {
        let lo = c.lo.ok_or_else(|| invalid("checkpoints need lo"))?;
        let hi = c.hi.ok_or_else(|| invalid("checkpoints need hi"))?;
        let factor = c.factor.ok_or_else(|| invalid("checkpoints need factor"))?;
        if factor < 2 {
            return Err(invalid("checkpoints factor must be at least 2"));
        }
        let mut out = Vec::new();
        let mut n = lo;
        while n <= hi {
            out.push(n);
            match n.checked_mul(factor) {
                Some(next) => n = next,
                None => break,
            }
        }
        out
    };
    if out.is_empty() || out[0] == 0 || out.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("checkpoints must be strictly increasing and >= 1"));
    }
    Ok(out)
}

fn matrix_from(rows: &[Vec<f64>], dim: usize) -> Result<Array2<f64>, ConfigError> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(invalid(format!("matrix must be {dim}x{dim}")));
    }
    let mut m = Array2::zeros((dim, dim));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[[i, j]] = *v;
        }
    }
    Ok(m)
}

fn parse_model(
    m: &ModelSection,
    noise: &Option<NoiseSection>,
    base_dir: &Path,
    schedule: &StepSchedule,
) -> Result<(ModelSpec, Option<BridgeRun>), ConfigError> {
    if m.dim == 0 {
        return Err(invalid("model dim must be at least 1"));
    }
    let diffusion = match m.diffusion.kind.as_str() {
        "constant" => {
            let sigma = match (&m.diffusion.scale, &m.diffusion.matrix) {
                (Some(s), None) => Array2::eye(m.dim) * *s,
                (None, Some(rows)) => matrix_from(rows, m.dim)?,
                _ => return Err(invalid("constant diffusion needs scale or matrix")),
            };
            Diffusion::ConstantMatrix { sigma }
        }
        "decaying" => Diffusion::DecayingScalar {
            k_prime: m
                .diffusion
                .k_prime
                .ok_or_else(|| invalid("decaying diffusion needs k_prime"))?,
            p: m.diffusion
                .p
                .ok_or_else(|| invalid("decaying diffusion needs p"))?,
        },
        other => return Err(invalid(format!("unknown diffusion kind '{other}'"))),
    };
    match m.drift.as_str() {
        "ou" => {
            let rate_matrix = match (&m.rate, &m.rate_matrix) {
                (Some(a), None) => Array2::eye(m.dim) * *a,
                (None, Some(rows)) => matrix_from(rows, m.dim)?,
                _ => return Err(invalid("ou drift needs rate or rate_matrix")),
            };
            Ok((
                ModelSpec {
                    dim: m.dim,
                    drift: Drift::Ou { rate_matrix },
                    diffusion,
                    declared_alpha: 2.0,
                    dissipation_class: DissipationClass::Uniform,
                },
                None,
            ))
        }
        "holder" => {
            let alpha = m.alpha.ok_or_else(|| invalid("holder drift needs alpha"))?;
            if !(0.0 < alpha && alpha <= 1.0) {
                return Err(invalid("holder alpha must lie in (0, 1]"));
            }
            Ok((
                ModelSpec {
                    dim: m.dim,
                    drift: Drift::HolderConfining { alpha },
                    diffusion,
                    declared_alpha: alpha,
                    dissipation_class: DissipationClass::Partial,
                },
                None,
            ))
        }
        "bridge" => {
            let rel = m
                .data
                .as_ref()
                .ok_or_else(|| invalid("bridge drift needs a data csv path"))?;
            let data = crate::io::read_regression_csv(&base_dir.join(rel))?;
            if data.dim() != m.dim {
                return Err(invalid(format!(
                    "bridge data has dimension {}, model declares {}",
                    data.dim(),
                    m.dim
                )));
            }
            let lambda = m.lambda.ok_or_else(|| invalid("bridge drift needs lambda"))?;
            let gamma = m.gamma.ok_or_else(|| invalid("bridge drift needs gamma"))?;
            if !(1.0 < gamma && gamma <= 2.0) {
                return Err(invalid("bridge gamma must lie in (1, 2]"));
            }
            if lambda < 0.0 {
                return Err(invalid("bridge lambda must be non-negative"));
            }
            let data = Arc::new(data);
            let noise_scale = parse_noise(noise, schedule)?;
            let model = ModelSpec {
                dim: m.dim,
                drift: Drift::BridgeGradientFlow {
                    data: data.clone(),
                    lambda,
                    gamma,
                },
                diffusion,
                declared_alpha: gamma - 1.0,
                dissipation_class: DissipationClass::Uniform,
            };
            Ok((
                model,
                Some(BridgeRun {
                    data,
                    lambda,
                    gamma,
                    noise_scale,
                }),
            ))
        }
        other => Err(invalid(format!("unknown drift '{other}'"))),
    }
}

fn parse_noise(
    noise: &Option<NoiseSection>,
    schedule: &StepSchedule,
) -> Result<NoiseSchedule, ConfigError> {
    let n = noise
        .as_ref()
        .ok_or_else(|| invalid("bridge experiments need a [noise_scale] section"))?;
    match n.kind.as_str() {
        "constant" => Ok(NoiseSchedule::Constant(
            n.value
                .ok_or_else(|| invalid("constant noise_scale needs value"))?,
        )),
        "explicit" => Ok(NoiseSchedule::Explicit(
            n.values
                .clone()
                .ok_or_else(|| invalid("explicit noise_scale needs values"))?,
        )),
        "decaying" => {
            let theta = match schedule.kind() {
                ScheduleKind::Polynomial { theta, a } if *a == 1.0 => *theta,
                _ => {
                    return Err(invalid(
                        "decaying noise_scale requires a polynomial schedule with a = 1",
                    ))
                }
            };
            Ok(NoiseSchedule::Decaying {
                k_prime: n
                    .k_prime
                    .ok_or_else(|| invalid("decaying noise_scale needs k_prime"))?,
                theta,
                p: n.p.ok_or_else(|| invalid("decaying noise_scale needs p"))?,
            })
        }
        other => Err(invalid(format!("unknown noise_scale kind '{other}'"))),
    }
}

fn parse_reference(r: &ReferenceSection, dim: usize) -> Result<ReferenceSpec, ConfigError> {
    if r.n_samples == 0 {
        return Err(invalid("reference n_samples must be at least 1"));
    }
    let method = match r.method.as_str() {
        "exact_gaussian" => {
            let mean = r
                .mean
                .clone()
                .ok_or_else(|| invalid("exact_gaussian reference needs mean"))?;
            let cov_diag = r
                .cov_diag
                .clone()
                .ok_or_else(|| invalid("exact_gaussian reference needs cov_diag"))?;
            if mean.len() != dim || cov_diag.len() != dim {
                return Err(invalid("reference mean/cov_diag must match model dim"));
            }
            if cov_diag.iter().any(|v| *v < 0.0) {
                return Err(invalid("reference cov_diag entries must be >= 0"));
            }
            ReferenceMethod::ExactGaussian { mean, cov_diag }
        }
        "rejection_1d" => {
            if dim != 1 {
                return Err(invalid("rejection_1d reference requires dim = 1"));
            }
            ReferenceMethod::Rejection1d {
                alpha: r
                    .alpha
                    .ok_or_else(|| invalid("rejection_1d reference needs alpha"))?,
                proposal_sd: r.proposal_sd.unwrap_or(2f64.sqrt()),
            }
        }
        "fine_grid_em" => ReferenceMethod::FineGridEm {
            eta: r
                .eta
                .ok_or_else(|| invalid("fine_grid_em reference needs eta"))?,
            t_burn: r
                .t_burn
                .ok_or_else(|| invalid("fine_grid_em reference needs t_burn"))?,
        },
        other => return Err(invalid(format!("unknown reference method '{other}'"))),
    };
    Ok(ReferenceSpec {
        method,
        n_samples: r.n_samples,
    })
}

fn parse_distance(d: &DistanceSection) -> Result<DistanceRequest, ConfigError> {
    let estimator = match d.estimator.as_str() {
        "sorted_1d" => EstimatorKind::Sorted1d,
        "sliced" => EstimatorKind::Sliced,
        "tv_histogram" => EstimatorKind::TvHistogram,
        "gaussian_closed_form" => EstimatorKind::GaussianClosedForm,
        "exact_ou_law" => EstimatorKind::ExactOuLaw,
        other => return Err(invalid(format!("unknown estimator '{other}'"))),
    };
    let p = match estimator {
        EstimatorKind::TvHistogram => {
            if d.p.is_some_and(|p| p != 0.0) {
                return Err(invalid("tv_histogram reports p = 0"));
            }
            0.0
        }
        EstimatorKind::GaussianClosedForm | EstimatorKind::ExactOuLaw => {
            let p = d.p.unwrap_or(2.0);
            if p != 2.0 {
                return Err(invalid("closed-form Gaussian distances are W_2 only"));
            }
            p
        }
        EstimatorKind::Sliced => {
            let p = d.p.ok_or_else(|| invalid("estimator needs p"))?;
            if p < 1.0 {
                return Err(invalid("sliced estimator requires p >= 1"));
            }
            p
        }
        EstimatorKind::Sorted1d => {
            let p = d.p.ok_or_else(|| invalid("estimator needs p"))?;
            if p <= 0.0 {
                return Err(invalid("p must be positive"));
            }
            p
        }
    };
    Ok(DistanceRequest {
        estimator,
        p,
        n_projections: d.n_projections.unwrap_or(64),
        bins_per_dim: d.bins_per_dim,
    })
}

fn parse_rate(r: &RateSection, schedule: &StepSchedule) -> Result<RateRequest, ConfigError> {
    let prediction = match r.theorem.as_str() {
        "t21_w1w0" => RatePrediction::T21W1W0 { alpha: r.alpha },
        "t21_wp_interp" => RatePrediction::T21WpInterp {
            alpha: r.alpha,
            p: r.p.ok_or_else(|| invalid("t21_wp_interp needs p"))?,
        },
        "t32_wp" => {
            let theta = match schedule.kind() {
                ScheduleKind::Polynomial { theta, a } if *a == 1.0 => *theta,
                _ => {
                    return Err(invalid(
                        "t32_wp prediction requires a polynomial schedule with a = 1",
                    ))
                }
            };
            RatePrediction::T32Wp {
                alpha: r.alpha,
                p: r.p.ok_or_else(|| invalid("t32_wp needs p"))?,
                theta,
                k2_prime: r
                    .k2_prime
                    .ok_or_else(|| invalid("t32_wp needs k2_prime"))?,
            }
        }
        other => return Err(invalid(format!("unknown theorem '{other}'"))),
    };
    // reject out-of-range parameters now rather than at verdict time
    crate::ratefit::predict_exponent(&prediction)
        .map_err(|e| invalid(format!("rate prediction: {e}")))?;
    if !(r.tol > 0.0) {
        return Err(invalid("rate tol must be positive"));
    }
    let drop_fraction = r.drop_fraction.unwrap_or(0.25);
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(invalid("drop_fraction must lie in [0, 1)"));
    }
    let min_r2 = r.min_r2.unwrap_or(0.9);
    Ok(RateRequest {
        prediction,
        tol: r.tol,
        drop_fraction,
        min_r2,
    })
}
