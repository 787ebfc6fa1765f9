//! Drift/diffusion model catalogue with regularity metadata, plus numerical
//! probes for the dissipation and Hölder-modulus assumptions.
//!
//! Probes sample random pairs and scan a fixed grid of candidate constants;
//! they produce reports, not certificates.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: model has d={expected}, input has d={got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("rate matrix must be {dim}x{dim}, got {rows}x{cols}")]
    BadMatrixShape { dim: usize, rows: usize, cols: usize },
    #[error("probe requires a time-homogeneous drift")]
    TimeDependentDrift,
    #[error("regression data rows must all have dimension {expected}, row {row} has {got}")]
    RaggedData { expected: usize, row: usize, got: usize },
}

/// Declared dissipation regime of a drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DissipationClass {
    Partial,
    Uniform,
    Unknown,
}

type DriftFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type DiffusionFn = dyn Fn(f64, &[f64]) -> Array2<f64> + Send + Sync;

/// Drift b(x) of the equation. All built-in drifts are time-homogeneous.
#[derive(Clone)]
pub enum Drift {
    /// b(x) = −A x.
    Ou { rate_matrix: Array2<f64> },
    /// b(x) = −x + ((α+1)/4)·|x|^(α−1)·x, extended by b(0) = 0.
    HolderConfining { alpha: f64 },
    /// b(β) = −∇L(β) for the penalized least-squares loss.
    BridgeGradientFlow {
        data: Arc<RegressionData>,
        lambda: f64,
        gamma: f64,
    },
    /// User-supplied drift with caller-declared metadata.
    Custom(Arc<DriftFn>),
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Ou { rate_matrix } => write!(f, "Ou(d={})", rate_matrix.nrows()),
            Drift::HolderConfining { alpha } => write!(f, "HolderConfining(alpha={alpha})"),
            Drift::BridgeGradientFlow { lambda, gamma, .. } => {
                write!(f, "BridgeGradientFlow(lambda={lambda},gamma={gamma})")
            }
            Drift::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Diffusion coefficient σ_t(x).
#[derive(Clone)]
pub enum Diffusion {
    /// Constant matrix; ignores (t, x).
    ConstantMatrix { sigma: Array2<f64> },
    /// σ̄_t = min(e^(−(K'/p)t)·t^(−2/p), 1) times the identity.
    DecayingScalar { k_prime: f64, p: f64 },
    /// User-supplied (t, x) ↦ matrix.
    Custom(Arc<DiffusionFn>),
}

impl fmt::Debug for Diffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diffusion::ConstantMatrix { sigma } => write!(f, "ConstantMatrix(d={})", sigma.nrows()),
            Diffusion::DecayingScalar { k_prime, p } => {
                write!(f, "DecayingScalar(k_prime={k_prime},p={p})")
            }
            Diffusion::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// A drift + diffusion pair with its declared regularity metadata.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub dim: usize,
    pub drift: Drift,
    pub diffusion: Diffusion,
    /// Hölder exponent the model claims, in (0, 2].
    pub declared_alpha: f64,
    pub dissipation_class: DissipationClass,
}

impl ModelSpec {
    /// Scalar OU model: b(x) = −a·x, σ = sigma·I.
    pub fn ou_isotropic(dim: usize, a: f64, sigma: f64) -> Self {
        ModelSpec {
            dim,
            drift: Drift::Ou {
                rate_matrix: Array2::eye(dim) * a,
            },
            diffusion: Diffusion::ConstantMatrix {
                sigma: Array2::eye(dim) * sigma,
            },
            declared_alpha: 2.0,
            dissipation_class: DissipationClass::Uniform,
        }
    }

    /// The confining Hölder drift with additive noise sigma·I.
    pub fn holder_confining(dim: usize, alpha: f64, sigma: f64) -> Self {
        ModelSpec {
            dim,
            drift: Drift::HolderConfining { alpha },
            diffusion: Diffusion::ConstantMatrix {
                sigma: Array2::eye(dim) * sigma,
            },
            declared_alpha: alpha,
            dissipation_class: DissipationClass::Partial,
        }
    }

    /// b_t(x); the t argument is ignored by the time-homogeneous drifts.
    pub fn drift_eval(&self, t: f64, x: &Array1<f64>) -> Result<Array1<f64>, ModelError> {
        let _ = t;
        if x.len() != self.dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.dim];
        self.drift_into(x.as_slice().unwrap(), &mut out);
        Ok(Array1::from(out))
    }

    /// σ_t(x) as a d×d matrix.
    pub fn diffusion_eval(&self, t: f64, x: &Array1<f64>) -> Result<Array2<f64>, ModelError> {
        if x.len() != self.dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(match &self.diffusion {
            Diffusion::ConstantMatrix { sigma } => sigma.clone(),
            Diffusion::DecayingScalar { k_prime, p } => {
                Array2::eye(self.dim) * decaying_scalar(*k_prime, *p, t)
            }
            Diffusion::Custom(f) => f(t, x.as_slice().unwrap()),
        })
    }

    /// Writes b(x) into `out` without allocating; hot path for the samplers.
    pub(crate) fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.drift {
            Drift::Ou { rate_matrix } => {
                for i in 0..self.dim {
                    let mut acc = 0.0;
                    for j in 0..self.dim {
                        acc += rate_matrix[[i, j]] * x[j];
                    }
                    out[i] = -acc;
                }
            }
            Drift::HolderConfining { alpha } => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let c = (alpha + 1.0) / 4.0;
                // |x|^(alpha-1)·x -> 0 continuously as x -> 0; alpha = 0.5
                // and 1.0 avoid powf in the hot path
                let scale = if norm > 0.0 {
                    if *alpha == 0.5 {
                        c / norm.sqrt()
                    } else if *alpha == 1.0 {
                        c
                    } else {
                        c * norm.powf(alpha - 1.0)
                    }
                } else {
                    0.0
                };
                for i in 0..self.dim {
                    out[i] = -x[i] + scale * x[i];
                }
            }
            Drift::BridgeGradientFlow { data, lambda, gamma } => {
                data.grad_into(*lambda, *gamma, x, out);
                for v in out.iter_mut() {
                    *v = -*v;
                }
            }
            Drift::Custom(f) => f(x, out),
        }
    }

    pub(crate) fn is_time_homogeneous_drift(&self) -> bool {
        // Custom drifts take only x, so every variant is time-homogeneous;
        // time dependence enters through the diffusion.
        true
    }
}

/// σ̄_t for the decaying scalar diffusion; clamped at 1 (so also at t = 0).
pub fn decaying_scalar(k_prime: f64, p: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let v = (-(k_prime / p) * t).exp() * t.powf(-2.0 / p);
    v.min(1.0)
}

/// Regression data points (x_i, y_i) with cached Gram matrix.
#[derive(Debug, Clone)]
pub struct RegressionData {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    dim: usize,
    /// XᵀX and Xᵀy, used by the gradient.
    gram: Array2<f64>,
    xty: Vec<f64>,
}

impl RegressionData {
    pub fn new(points: Vec<(Vec<f64>, f64)>, dim: usize) -> Result<Self, ModelError> {
        let mut xs = Vec::with_capacity(points.len());
        let mut ys = Vec::with_capacity(points.len());
        for (row, (x, y)) in points.into_iter().enumerate() {
            if x.len() != dim {
                return Err(ModelError::RaggedData {
                    expected: dim,
                    row,
                    got: x.len(),
                });
            }
            xs.push(x);
            ys.push(y);
        }
        let mut gram = Array2::zeros((dim, dim));
        let mut xty = vec![0.0; dim];
        for (x, y) in xs.iter().zip(&ys) {
            for i in 0..dim {
                for j in 0..dim {
                    gram[[i, j]] += x[i] * x[j];
                }
                xty[i] += x[i] * y;
            }
        }
        Ok(RegressionData { xs, ys, dim, gram, xty })
    }

    /// Deterministic synthetic dataset: x_ij ~ N(0, 0.35²), y = xᵀβ* + 0.1·noise
    /// with β* = (1, −0.5, 0.25, 1, −0.5, ...) cycled to dimension d.
    pub fn synthetic(n: usize, dim: usize, seed: u64) -> Self {
        let mut r = rng::stream_rng(seed, rng::REFERENCE_STREAM);
        let base = [1.0, -0.5, 0.25];
        let beta: Vec<f64> = (0..dim).map(|j| base[j % base.len()]).collect();
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..dim)
                .map(|_| 0.35 * r.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let y = x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>()
                + 0.1 * r.sample::<f64, _>(rand_distr::StandardNormal);
            points.push((x, y));
        }
        RegressionData::new(points, dim).unwrap()
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.xs.iter().map(|x| x.as_slice()).zip(self.ys.iter().copied())
    }

    pub(crate) fn grad_into(&self, lambda: f64, gamma: f64, beta: &[f64], out: &mut [f64]) {
        // ∇L = 2(XᵀXβ − Xᵀy) + λγ|β_j|^(γ−1)·sign(β_j), zero at β_j = 0.
        for i in 0..self.dim {
            let mut acc = 0.0;
            for j in 0..self.dim {
                acc += self.gram[[i, j]] * beta[j];
            }
            out[i] = 2.0 * (acc - self.xty[i]);
        }
        if lambda != 0.0 {
            let e = gamma - 1.0;
            for (o, b) in out.iter_mut().zip(beta) {
                if *b != 0.0 {
                    // gamma = 2 (ridge) and 1.5 avoid powf in the hot path
                    let mag = if e == 1.0 {
                        b.abs()
                    } else if e == 0.5 {
                        b.abs().sqrt()
                    } else {
                        b.abs().powf(e)
                    };
                    *o += lambda * gamma * mag * b.signum();
                }
            }
        }
    }
}

/// L(β) = Σ_i (y_i − x_iᵀβ)² + λ Σ_j |β_j|^γ.
pub fn bridge_loss(data: &RegressionData, lambda: f64, gamma: f64, beta: &[f64]) -> f64 {
    let mut loss = 0.0;
    for (x, y) in data.points() {
        let r = y - x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        loss += r * r;
    }
    loss + lambda * beta.iter().map(|b| b.abs().powf(gamma)).sum::<f64>()
}

/// ∇L(β); the penalty term is 0 at β_j = 0 (valid limit for γ > 1).
pub fn bridge_loss_grad(data: &RegressionData, lambda: f64, gamma: f64, beta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; data.dim()];
    data.grad_into(lambda, gamma, beta, &mut out);
    out
}

/// Result of the partial-dissipation probe: the smallest grid constants
/// (K₁, K₂) such that ⟨b(x)−b(y), x−y⟩ ≤ K₁ − K₂|x−y|² on all sampled pairs.
#[derive(Debug, Clone)]
pub struct DissipationProbe {
    pub k1_hat: f64,
    pub k2_hat: f64,
    /// The sampled pair with the tightest constraint at (k1_hat, k2_hat).
    pub worst_pair: (Vec<f64>, Vec<f64>),
    pub n_pairs: usize,
}

const GRID_POINTS: usize = 512;
const K1_GRID_LO: f64 = 1e-6;
const K1_GRID_HI: f64 = 1e6;
const K2_GRID_LO: f64 = 1e-6;
const K2_GRID_HI: f64 = 1e3;

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn sample_in_ball(r: &mut impl Rng, dim: usize, radius: f64) -> Vec<f64> {
    // direction uniform on the sphere, radius ~ R·U^(1/d)
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| r.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 0.0 {
            let scale = radius * r.gen::<f64>().powf(1.0 / dim as f64) / norm;
            return v.into_iter().map(|a| a * scale).collect();
        }
    }
}

/// Scans sampled pairs in the ball of the given radius for the smallest grid
/// (K₁, K₂) making the drift partially dissipative on those pairs. K₁ is
/// minimized first, then K₂ is pushed as high as the sampled pairs allow.
pub fn probe_partial_dissipation(
    m: &ModelSpec,
    n_pairs: usize,
    radius: f64,
    seed: u64,
) -> Result<DissipationProbe, ModelError> {
    if !m.is_time_homogeneous_drift() {
        return Err(ModelError::TimeDependentDrift);
    }
    let mut r = rng::stream_rng(seed, rng::PROBE_STREAM);
    let mut pairs = Vec::with_capacity(n_pairs);
    // s = <b(x)-b(y), x-y>, r2 = |x-y|^2 per pair
    let mut bx = vec![0.0; m.dim];
    let mut by = vec![0.0; m.dim];
    for _ in 0..n_pairs {
        let x = sample_in_ball(&mut r, m.dim, radius);
        let y = sample_in_ball(&mut r, m.dim, radius);
        m.drift_into(&x, &mut bx);
        m.drift_into(&y, &mut by);
        let mut s = 0.0;
        let mut r2 = 0.0;
        for i in 0..m.dim {
            let dx = x[i] - y[i];
            s += (bx[i] - by[i]) * dx;
            r2 += dx * dx;
        }
        pairs.push((x, y, s, r2));
    }
    let k1_grid = log_grid(K1_GRID_LO, K1_GRID_HI, GRID_POINTS);
    let k2_grid = log_grid(K2_GRID_LO, K2_GRID_HI, GRID_POINTS);

    let required_k1 = |k2: f64| -> f64 {
        pairs
            .iter()
            .map(|(_, _, s, r2)| s + k2 * r2)
            .fold(f64::NEG_INFINITY, f64::max)
    };

    // smallest grid K1 feasible at the grid floor of K2
    let need = required_k1(k2_grid[0]);
    let k1_hat = k1_grid
        .iter()
        .copied()
        .find(|k1| *k1 >= need)
        .unwrap_or(K1_GRID_HI);
    // largest grid K2 still feasible at that K1
    let k2_hat = k2_grid
        .iter()
        .copied()
        .rev()
        .find(|k2| required_k1(*k2) <= k1_hat)
        .unwrap_or(K2_GRID_LO);
    let worst = pairs
        .iter()
        .max_by(|a, b| {
            let va = a.2 + k2_hat * a.3;
            let vb = b.2 + k2_hat * b.3;
            va.partial_cmp(&vb).unwrap()
        })
        .expect("n_pairs must be positive");
    Ok(DissipationProbe {
        k1_hat,
        k2_hat,
        worst_pair: (worst.0.clone(), worst.1.clone()),
        n_pairs,
    })
}

/// Max over sampled pairs of |b(x)−b(y)| / (|x−y| + |x−y|^α); pairs with
/// x = y are skipped.
pub fn probe_holder_modulus(
    m: &ModelSpec,
    n_pairs: usize,
    radius: f64,
    alpha: f64,
    seed: u64,
) -> Result<f64, ModelError> {
    if !m.is_time_homogeneous_drift() {
        return Err(ModelError::TimeDependentDrift);
    }
    let mut r = rng::stream_rng(seed, rng::PROBE_STREAM);
    let mut best = 0.0f64;
    let mut bx = vec![0.0; m.dim];
    let mut by = vec![0.0; m.dim];
    for _ in 0..n_pairs {
        let x = sample_in_ball(&mut r, m.dim, radius);
        let y = sample_in_ball(&mut r, m.dim, radius);
        let dist = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dist == 0.0 {
            continue;
        }
        m.drift_into(&x, &mut bx);
        m.drift_into(&y, &mut by);
        let num = bx
            .iter()
            .zip(&by)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        best = best.max(num / (dist + dist.powf(alpha)));
    }
    Ok(best)
}
