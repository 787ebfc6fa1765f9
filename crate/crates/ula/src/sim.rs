//! Chain simulation: the decreasing-step EM/ULA recursion, the noisy
//! gradient-descent variant, and reference samplers standing in for the
//! invariant measure.
//!
//! Chains are embarrassingly parallel. Each chain owns its own RNG stream
//! (see `rng`), so results are bit-identical regardless of thread count.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{decaying_scalar, Diffusion, ModelSpec, RegressionData};
use crate::rng::{chain_rng, stream_rng, REFERENCE_STREAM};
use crate::schedule::{describe, StepSchedule};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Schedule(#[from] crate::schedule::ScheduleError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("noise dimension {got} does not match state dimension {expected}")]
    NoiseDimension { expected: usize, got: usize },
    #[error("step produced a non-finite state")]
    NonFiniteState,
    #[error("checkpoints must be strictly increasing and at most n_steps")]
    BadCheckpoints,
    #[error("n_steps and n_chains must be at least 1")]
    EmptyRun,
    #[error("noise scale schedule has no value for step {k}")]
    NoiseScheduleExhausted { k: usize },
    #[error("rejection sampler acceptance rate {rate:.2e} below 1e-3; bad proposal for this target")]
    RejectionRateTooLow { rate: f64 },
    #[error("reference method requires a model")]
    MissingModel,
    #[error("rejection reference is one-dimensional only")]
    RejectionDimension,
}

/// Everything needed to run one batch of chains.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub model: ModelSpec,
    pub schedule: StepSchedule,
    pub x0: Array1<f64>,
    pub n_steps: usize,
    pub n_chains: usize,
    pub seed: u64,
}

/// Where a batch came from; carried along so downstream reports can name it.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub model_id: String,
    pub schedule: String,
    pub seed: u64,
    pub generator: String,
    pub n_chains_requested: usize,
}

/// A chain that left the finite range, with the step at which it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DivergedChain {
    pub chain: usize,
    pub step: usize,
}

/// n_surviving × d states of the chains at one step index.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub values: Array2<f64>,
    pub step_index: usize,
    pub time: f64,
    pub provenance: Provenance,
    /// Chains excluded from `values` because they diverged at or before
    /// `step_index`, in chain order.
    pub diverged: Vec<DivergedChain>,
}

impl SampleBatch {
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Column j as an owned vector (the d = 1 estimators take plain samples).
    pub fn column_vec(&self, j: usize) -> Vec<f64> {
        self.values.column(j).to_vec()
    }

    /// Per-coordinate empirical mean.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.n_samples() as f64;
        (0..self.dim())
            .map(|j| self.values.column(j).sum() / n)
            .collect()
    }

    /// Per-coordinate empirical variance (unnormalized by n, not n−1).
    pub fn variance(&self) -> Vec<f64> {
        let n = self.n_samples() as f64;
        let m = self.mean();
        (0..self.dim())
            .map(|j| {
                self.values
                    .column(j)
                    .iter()
                    .map(|v| (v - m[j]) * (v - m[j]))
                    .sum::<f64>()
                    / n
            })
            .collect()
    }

    /// Mean squared Euclidean distance to a fixed point.
    pub fn mean_squared_distance_to(&self, point: &[f64]) -> f64 {
        let n = self.n_samples() as f64;
        self.values
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .zip(point)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n
    }
}

const GENERATOR_TAG: &str = "chacha12-stream-per-chain";

/// One EM/ULA update: y + η·b_t(y) + σ_t(y)·√η·ζ.
pub fn ula_step(
    y: &Array1<f64>,
    m: &ModelSpec,
    t_prev: f64,
    eta_next: f64,
    noise: &Array1<f64>,
) -> Result<Array1<f64>, SimError> {
    if noise.len() != m.dim {
        return Err(SimError::NoiseDimension {
            expected: m.dim,
            got: noise.len(),
        });
    }
    let drift = m.drift_eval(t_prev, y)?;
    let sigma = m.diffusion_eval(t_prev, y)?;
    let scaled = sigma.dot(noise) * eta_next.sqrt();
    let out = y + &(drift * eta_next) + scaled;
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(SimError::NonFiniteState)
    }
}

/// Constant diffusions get applied without re-evaluating the matrix each step.
enum DiffApply {
    /// σ = s·I.
    Scalar(f64),
    Matrix(Array2<f64>),
    DecayingScalar { k_prime: f64, p: f64 },
    Custom,
}

fn classify_diffusion(m: &ModelSpec) -> DiffApply {
    match &m.diffusion {
        Diffusion::ConstantMatrix { sigma } => {
            let d = sigma.nrows();
            let s = sigma[[0, 0]];
            let isotropic = (0..d).all(|i| {
                (0..d).all(|j| {
                    if i == j {
                        sigma[[i, j]] == s
                    } else {
                        sigma[[i, j]] == 0.0
                    }
                })
            });
            if isotropic {
                DiffApply::Scalar(s)
            } else {
                DiffApply::Matrix(sigma.clone())
            }
        }
        Diffusion::DecayingScalar { k_prime, p } => DiffApply::DecayingScalar {
            k_prime: *k_prime,
            p: *p,
        },
        Diffusion::Custom(_) => DiffApply::Custom,
    }
}

struct ChainResult {
    snapshots: Vec<Option<Vec<f64>>>,
    diverged: Option<usize>,
}

fn run_chain(
    cfg: &SamplerConfig,
    chain: usize,
    etas: &[f64],
    times: &[f64],
    checkpoints: &[usize],
    diff: &DiffApply,
) -> ChainResult {
    let d = cfg.model.dim;
    let mut rng = chain_rng(cfg.seed, chain as u64);
    let mut state: Vec<f64> = cfg.x0.to_vec();
    let mut drift = vec![0.0; d];
    let mut noise = vec![0.0; d];
    let mut snapshots = Vec::with_capacity(checkpoints.len());
    let mut diverged = None;
    let mut ci = 0;
    for k in 1..=*checkpoints.last().unwrap() {
        if diverged.is_none() {
            let eta = etas[k - 1];
            let t_prev = times[k - 1];
            let sqrt_eta = eta.sqrt();
            cfg.model.drift_into(&state, &mut drift);
            for n in noise.iter_mut() {
                *n = rng.sample(StandardNormal);
            }
            // grouping matches `ula_step` exactly: (y + eta*b) + (sigma*z)*sqrt(eta)
            match diff {
                DiffApply::Scalar(s) => {
                    for i in 0..d {
                        state[i] = state[i] + eta * drift[i] + s * noise[i] * sqrt_eta;
                    }
                }
                DiffApply::Matrix(mat) => {
                    for i in 0..d {
                        let mut acc = 0.0;
                        for j in 0..d {
                            acc += mat[[i, j]] * noise[j];
                        }
                        state[i] = state[i] + eta * drift[i] + acc * sqrt_eta;
                    }
                }
                DiffApply::DecayingScalar { k_prime, p } => {
                    let s = decaying_scalar(*k_prime, *p, t_prev);
                    for i in 0..d {
                        state[i] = state[i] + eta * drift[i] + s * noise[i] * sqrt_eta;
                    }
                }
                DiffApply::Custom => {
                    let x = Array1::from(state.clone());
                    let mat = cfg.model.diffusion_eval(t_prev, &x).expect("dims checked");
                    for i in 0..d {
                        let mut acc = 0.0;
                        for j in 0..d {
                            acc += mat[[i, j]] * noise[j];
                        }
                        state[i] = state[i] + eta * drift[i] + acc * sqrt_eta;
                    }
                }
            }
            if !state.iter().all(|v| v.is_finite()) {
                diverged = Some(k);
            }
        }
        if ci < checkpoints.len() && checkpoints[ci] == k {
            snapshots.push(if diverged.is_none() {
                Some(state.clone())
            } else {
                None
            });
            ci += 1;
            if diverged.is_some() && ci < checkpoints.len() {
                // remaining checkpoints are also past the divergence
                while ci < checkpoints.len() {
                    snapshots.push(None);
                    ci += 1;
                }
                break;
            }
        }
    }
    ChainResult {
        snapshots,
        diverged,
    }
}

fn assemble_batches(
    results: Vec<ChainResult>,
    checkpoints: &[usize],
    times: &[f64],
    dim: usize,
    provenance: &Provenance,
) -> Vec<SampleBatch> {
    checkpoints
        .iter()
        .enumerate()
        .map(|(ci, &n)| {
            let mut rows = Vec::new();
            let mut diverged = Vec::new();
            for (chain, res) in results.iter().enumerate() {
                match &res.snapshots[ci] {
                    Some(v) => rows.push(v.clone()),
                    None => diverged.push(DivergedChain {
                        chain,
                        step: res.diverged.expect("missing snapshot implies divergence"),
                    }),
                }
            }
            let mut values = Array2::zeros((rows.len(), dim));
            for (i, row) in rows.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    values[[i, j]] = *v;
                }
            }
            SampleBatch {
                values,
                step_index: n,
                time: times[n],
                provenance: provenance.clone(),
                diverged,
            }
        })
        .collect()
}

/// Runs the chains once and materializes the state at each checkpoint.
pub fn snapshot_series(
    cfg: &SamplerConfig,
    checkpoints: &[usize],
) -> Result<Vec<SampleBatch>, SimError> {
    if cfg.n_steps == 0 || cfg.n_chains == 0 {
        return Err(SimError::EmptyRun);
    }
    if checkpoints.is_empty()
        || checkpoints.windows(2).any(|w| w[1] <= w[0])
        || checkpoints[0] == 0
        || *checkpoints.last().unwrap() > cfg.n_steps
    {
        return Err(SimError::BadCheckpoints);
    }
    let n_last = *checkpoints.last().unwrap();
    let mut etas = Vec::with_capacity(n_last);
    for k in 1..=n_last {
        etas.push(cfg.schedule.eta(k)?);
    }
    cfg.schedule.precompute(n_last)?;
    let mut times = Vec::with_capacity(n_last + 1);
    for n in 0..=n_last {
        times.push(cfg.schedule.time_at(n)?);
    }
    let diff = classify_diffusion(&cfg.model);
    let provenance = Provenance {
        model_id: format!("{:?}", cfg.model.drift),
        schedule: describe(cfg.schedule.kind()),
        seed: cfg.seed,
        generator: GENERATOR_TAG.to_string(),
        n_chains_requested: cfg.n_chains,
    };
    let results: Vec<ChainResult> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|chain| run_chain(cfg, chain, &etas, &times, checkpoints, &diff))
        .collect();
    Ok(assemble_batches(
        results,
        checkpoints,
        &times,
        cfg.model.dim,
        &provenance,
    ))
}

/// Runs n_chains independent chains for n_steps and returns the final batch.
pub fn run_batch(cfg: &SamplerConfig) -> Result<SampleBatch, SimError> {
    Ok(snapshot_series(cfg, &[cfg.n_steps])?.pop().unwrap())
}

/// Per-step noise scale σ_k for the noisy gradient-descent iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSchedule {
    Constant(f64),
    Explicit(Vec<f64>),
    /// σ_1 = σ_2 = 1, then min(k^(−K'θ/p)·(θ ln k)^(−2/p), 1).
    Decaying { k_prime: f64, theta: f64, p: f64 },
}

impl NoiseSchedule {
    pub fn value(&self, k: usize) -> Result<f64, SimError> {
        match self {
            NoiseSchedule::Constant(s) => Ok(*s),
            NoiseSchedule::Explicit(v) => v
                .get(k - 1)
                .copied()
                .ok_or(SimError::NoiseScheduleExhausted { k }),
            NoiseSchedule::Decaying { k_prime, theta, p } => {
                if k <= 2 {
                    return Ok(1.0);
                }
                let kf = k as f64;
                let v = kf.powf(-k_prime * theta / p) * (theta * kf.ln()).powf(-2.0 / p);
                Ok(v.min(1.0))
            }
        }
    }
}

/// Noisy gradient descent β_{k+1} = β_k − η_{k+1}∇L(β_k) + √η_{k+1}·σ_{k+1}·ζ,
/// materialized at each checkpoint.
#[allow(clippy::too_many_arguments)]
pub fn run_noisy_gd_series(
    data: &RegressionData,
    lambda: f64,
    gamma: f64,
    schedule: &StepSchedule,
    noise_scale: &NoiseSchedule,
    beta0: &[f64],
    checkpoints: &[usize],
    n_chains: usize,
    seed: u64,
) -> Result<Vec<SampleBatch>, SimError> {
    if n_chains == 0 || checkpoints.is_empty() {
        return Err(SimError::EmptyRun);
    }
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) || checkpoints[0] == 0 {
        return Err(SimError::BadCheckpoints);
    }
    let d = data.dim();
    let n_last = *checkpoints.last().unwrap();
    let mut etas = Vec::with_capacity(n_last);
    let mut sigmas = Vec::with_capacity(n_last);
    for k in 1..=n_last {
        etas.push(schedule.eta(k)?);
        sigmas.push(noise_scale.value(k)?);
    }
    schedule.precompute(n_last)?;
    let mut times = Vec::with_capacity(n_last + 1);
    for n in 0..=n_last {
        times.push(schedule.time_at(n)?);
    }
    let provenance = Provenance {
        model_id: format!("noisy-gd(lambda={lambda},gamma={gamma},n={})", data.len()),
        schedule: describe(schedule.kind()),
        seed,
        generator: GENERATOR_TAG.to_string(),
        n_chains_requested: n_chains,
    };
    let results: Vec<ChainResult> = (0..n_chains)
        .into_par_iter()
        .map(|chain| {
            let mut rng = chain_rng(seed, chain as u64);
            let mut state = beta0.to_vec();
            let mut grad = vec![0.0; d];
            let mut snapshots = Vec::with_capacity(checkpoints.len());
            let mut diverged = None;
            let mut ci = 0;
            for k in 1..=n_last {
                if diverged.is_none() {
                    let eta = etas[k - 1];
                    let noise_amp = sigmas[k - 1] * eta.sqrt();
                    data.grad_into(lambda, gamma, &state, &mut grad);
                    for i in 0..d {
                        let z: f64 = rng.sample(StandardNormal);
                        state[i] += -eta * grad[i] + noise_amp * z;
                    }
                    if !state.iter().all(|v| v.is_finite()) {
                        diverged = Some(k);
                    }
                }
                if ci < checkpoints.len() && checkpoints[ci] == k {
                    snapshots.push(if diverged.is_none() {
                        Some(state.clone())
                    } else {
                        None
                    });
                    ci += 1;
                }
            }
            ChainResult {
                snapshots,
                diverged,
            }
        })
        .collect();
    Ok(assemble_batches(
        results,
        checkpoints,
        &times,
        d,
        &provenance,
    ))
}

/// Single-checkpoint wrapper over `run_noisy_gd_series`.
#[allow(clippy::too_many_arguments)]
pub fn run_noisy_gd(
    data: &RegressionData,
    lambda: f64,
    gamma: f64,
    schedule: &StepSchedule,
    noise_scale: &NoiseSchedule,
    beta0: &[f64],
    n_steps: usize,
    n_chains: usize,
    seed: u64,
) -> Result<SampleBatch, SimError> {
    Ok(run_noisy_gd_series(
        data,
        lambda,
        gamma,
        schedule,
        noise_scale,
        beta0,
        &[n_steps],
        n_chains,
        seed,
    )?
    .pop()
    .unwrap())
}

/// How reference samples standing in for the invariant measure are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceMethod {
    /// Constant-step chain integrated past t_burn, then subsampled with
    /// spacing of at least one time unit to decorrelate.
    FineGridEm { eta: f64, t_burn: f64 },
    /// Accept/reject for the 1-d density ∝ exp(−x²/2 + |x|^(α+1)/4) from a
    /// centered normal proposal.
    Rejection1d { alpha: f64, proposal_sd: f64 },
    /// Direct draws from a diagonal Gaussian.
    ExactGaussian { mean: Vec<f64>, cov_diag: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSpec {
    pub method: ReferenceMethod,
    pub n_samples: usize,
}

/// Draws reference samples. `model` is consulted only by `FineGridEm`.
pub fn reference_samples(
    spec: &ReferenceSpec,
    model: Option<&ModelSpec>,
    seed: u64,
) -> Result<SampleBatch, SimError> {
    let mut r = stream_rng(seed, REFERENCE_STREAM);
    match &spec.method {
        ReferenceMethod::ExactGaussian { mean, cov_diag } => {
            let d = mean.len();
            let sd: Vec<f64> = cov_diag.iter().map(|v| v.sqrt()).collect();
            let mut values = Array2::zeros((spec.n_samples, d));
            for i in 0..spec.n_samples {
                for j in 0..d {
                    let z: f64 = r.sample(StandardNormal);
                    values[[i, j]] = mean[j] + sd[j] * z;
                }
            }
            Ok(SampleBatch {
                values,
                step_index: 0,
                time: 0.0,
                provenance: Provenance {
                    model_id: "reference-exact-gaussian".into(),
                    schedule: "n/a".into(),
                    seed,
                    generator: GENERATOR_TAG.into(),
                    n_chains_requested: spec.n_samples,
                },
                diverged: Vec::new(),
            })
        }
        ReferenceMethod::Rejection1d { alpha, proposal_sd } => {
            rejection_1d(*alpha, *proposal_sd, spec.n_samples, &mut r, seed)
        }
        ReferenceMethod::FineGridEm { eta, t_burn } => {
            let m = model.ok_or(SimError::MissingModel)?;
            fine_grid_em(m, *eta, *t_burn, spec.n_samples, seed)
        }
    }
}

/// log of the unnormalized target exp(−x²/2 + |x|^(α+1)/4).
fn log_holder_target(alpha: f64, x: f64) -> f64 {
    -x * x / 2.0 + x.abs().powf(alpha + 1.0) / 4.0
}

/// Golden-section maximum of f over [lo, hi], refined from a coarse scan.
fn golden_section_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let coarse = 1024;
    let mut best_i = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..=coarse {
        let x = lo + (hi - lo) * i as f64 / coarse as f64;
        let v = f(x);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let step = (hi - lo) / coarse as f64;
    let mut a = lo + (best_i as f64 - 1.0).max(0.0) * step;
    let mut b = (lo + (best_i + 1) as f64 * step).min(hi);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if f(c) < f(d) {
            a = c;
        } else {
            b = d;
        }
    }
    f(0.5 * (a + b)).max(best_v)
}

fn rejection_1d(
    alpha: f64,
    proposal_sd: f64,
    n_samples: usize,
    r: &mut ChaCha12Rng,
    seed: u64,
) -> Result<SampleBatch, SimError> {
    if proposal_sd <= 0.0 {
        return Err(SimError::RejectionRateTooLow { rate: 0.0 });
    }
    // envelope in log space: M = max_x [log target(x) − log proposal(x)]
    let log_ratio = |x: f64| log_holder_target(alpha, x) + x * x / (2.0 * proposal_sd * proposal_sd);
    let log_m = golden_section_max(log_ratio, 0.0, 50.0);
    let mut values = Array2::zeros((n_samples, 1));
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    while accepted < n_samples {
        attempts += 1;
        let z: f64 = r.sample(StandardNormal);
        let x = proposal_sd * z;
        let u: f64 = r.gen();
        if u.ln() <= log_ratio(x) - log_m {
            values[[accepted, 0]] = x;
            accepted += 1;
        }
        if attempts >= 10_000 && (accepted as f64) < 1e-3 * attempts as f64 {
            return Err(SimError::RejectionRateTooLow {
                rate: accepted as f64 / attempts as f64,
            });
        }
    }
    Ok(SampleBatch {
        values,
        step_index: 0,
        time: 0.0,
        provenance: Provenance {
            model_id: format!("reference-rejection1d(alpha={alpha},sd={proposal_sd})"),
            schedule: "n/a".into(),
            seed,
            generator: GENERATOR_TAG.into(),
            n_chains_requested: n_samples,
        },
        diverged: Vec::new(),
    })
}

fn fine_grid_em(
    m: &ModelSpec,
    eta: f64,
    t_burn: f64,
    n_samples: usize,
    seed: u64,
) -> Result<SampleBatch, SimError> {
    let d = m.dim;
    let burn_steps = (t_burn / eta).ceil() as usize;
    let stride = (1.0 / eta).ceil() as usize;
    let diff = classify_diffusion(m);
    let mut rng = stream_rng(seed, REFERENCE_STREAM);
    let mut state = vec![0.0; d];
    let mut drift = vec![0.0; d];
    let mut noise = vec![0.0; d];
    let sqrt_eta = eta.sqrt();
    let mut values = Array2::zeros((n_samples, d));
    let total = burn_steps + n_samples * stride;
    let mut taken = 0usize;
    for k in 1..=total {
        m.drift_into(&state, &mut drift);
        for n in noise.iter_mut() {
            *n = rng.sample(StandardNormal);
        }
        match &diff {
            DiffApply::Scalar(s) => {
                for i in 0..d {
                    state[i] += eta * drift[i] + s * sqrt_eta * noise[i];
                }
            }
            DiffApply::Matrix(mat) => {
                for i in 0..d {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += mat[[i, j]] * noise[j];
                    }
                    state[i] += eta * drift[i] + sqrt_eta * acc;
                }
            }
            // reference chains run in stationary time; the decaying scalar is
            // evaluated at the running time k·eta
            DiffApply::DecayingScalar { k_prime, p } => {
                let s = decaying_scalar(*k_prime, *p, (k - 1) as f64 * eta);
                for i in 0..d {
                    state[i] += eta * drift[i] + s * sqrt_eta * noise[i];
                }
            }
            DiffApply::Custom => {
                let x = Array1::from(state.clone());
                let mat = m.diffusion_eval((k - 1) as f64 * eta, &x)?;
                for i in 0..d {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += mat[[i, j]] * noise[j];
                    }
                    state[i] += eta * drift[i] + sqrt_eta * acc;
                }
            }
        }
        if !state.iter().all(|v| v.is_finite()) {
            return Err(SimError::NonFiniteState);
        }
        if k > burn_steps && (k - burn_steps) % stride == 0 && taken < n_samples {
            for j in 0..d {
                values[[taken, j]] = state[j];
            }
            taken += 1;
        }
    }
    Ok(SampleBatch {
        values,
        step_index: 0,
        time: 0.0,
        provenance: Provenance {
            model_id: format!("reference-fine-grid-em(eta={eta},t_burn={t_burn})"),
            schedule: "constant".into(),
            seed,
            generator: GENERATOR_TAG.into(),
            n_chains_requested: n_samples,
        },
        diverged: Vec::new(),
    })
}
