//! Distance estimators between sample batches and between Gaussian laws.
//!
//! Conventions: W_p carries the exponent 1/max(p,1), so no root is taken for
//! p in (0,1). The total-variation estimator reports W_0 = TV/2, in [0,1].

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::rng::{stream_rng, PROJECTION_STREAM};
use crate::schedule::StepSchedule;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty sample set")]
    EmptySamples,
    #[error("estimator requires p > 0")]
    NonPositiveP,
    #[error("brute force coupling capped at 8 points, got {n}")]
    BruteForceTooLarge { n: usize },
    #[error("exact transport for p < 1 capped at 256 points, got {n}")]
    SubUnitTooLarge { n: usize },
    #[error("sliced distance requires d >= 2, got {d}")]
    SlicedDimension { d: usize },
    #[error("sliced distance requires p >= 1")]
    SlicedSubUnitP,
    #[error("tv histogram supports d <= 2, got {d}")]
    TvDimension { d: usize },
    #[error("covariance must be diagonal (within 1e-10) in this version")]
    NonDiagonalCovariance,
    #[error("covariance has negative diagonal entry {value}")]
    NotPsd { value: f64 },
    #[error("gaussian laws have different dimensions {a} and {b}")]
    LawDimensionMismatch { a: usize, b: usize },
    #[error("OU EM recursion unstable at step {k}: |1 - eta_k*a| = {factor} > 1")]
    OuUnstable { k: usize, factor: f64 },
    #[error(transparent)]
    Schedule(#[from] crate::schedule::ScheduleError),
}

/// Which estimator produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Sorted1d,
    Sliced,
    TvHistogram,
    GaussianClosedForm,
    ExactOuLaw,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EstimatorKind::Sorted1d => "sorted_1d",
            EstimatorKind::Sliced => "sliced",
            EstimatorKind::TvHistogram => "tv_histogram",
            EstimatorKind::GaussianClosedForm => "gaussian_closed_form",
            EstimatorKind::ExactOuLaw => "exact_ou_law",
        };
        f.write_str(s)
    }
}

/// Estimator-specific details carried with each report.
#[derive(Debug, Clone, Default, Serialize)]
pub struct DistanceMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_a: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_b: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trimmed_to: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_projections: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins_per_dim: Option<usize>,
}

/// One distance estimate.
#[derive(Debug, Clone)]
pub struct DistanceReport {
    pub p: f64,
    pub estimator: EstimatorKind,
    pub value: f64,
    pub stderr: Option<f64>,
    pub meta: DistanceMeta,
}

impl DistanceReport {
    /// One CSV row: estimator, p, value, stderr, n_a, n_b, meta-json.
    pub fn csv_row(&self) -> String {
        use crate::io::format_f64;
        format!(
            "{},{},{},{},{},{},{}",
            self.estimator,
            format_f64(self.p),
            format_f64(self.value),
            self.stderr.map(format_f64).unwrap_or_default(),
            self.meta.n_a.map(|v| v.to_string()).unwrap_or_default(),
            self.meta.n_b.map(|v| v.to_string()).unwrap_or_default(),
            serde_json::to_string(&self.meta).expect("meta serializes"),
        )
    }
}

/// Exact empirical W_p in one dimension.
///
/// For p ≥ 1 the cost is convex and the sorted (monotone) coupling is
/// optimal. For p in (0,1) the cost is strictly concave, the monotone
/// coupling is no longer optimal (shared mass should stay in place), and the
/// exact optimum is computed by an interval DP over the merged order
/// statistics: optimal concave-cost matchings on the line are non-crossing,
/// so matched arcs are nested or disjoint. The DP is cubic and capped at 256
/// points per side.
///
/// Unequal sample counts are trimmed to the smaller count before sorting
/// (recorded in the meta), which keeps the coupling exact on what remains.
pub fn w_p_1d(a: &[f64], b: &[f64], p: f64) -> Result<DistanceReport, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySamples);
    }
    if p <= 0.0 {
        return Err(MetricError::NonPositiveP);
    }
    let n = a.len().min(b.len());
    let mut xs = a[..n].to_vec();
    let mut ys = b[..n].to_vec();
    xs.sort_by(|u, v| u.partial_cmp(v).unwrap());
    ys.sort_by(|u, v| u.partial_cmp(v).unwrap());
    let mean_cost = if p >= 1.0 {
        xs.iter()
            .zip(&ys)
            .map(|(x, y)| (x - y).abs().powf(p))
            .sum::<f64>()
            / n as f64
    } else {
        subunit_transport_cost(&xs, &ys, p)?
    };
    let value = mean_cost.powf(1.0 / p.max(1.0));
    Ok(DistanceReport {
        p,
        estimator: EstimatorKind::Sorted1d,
        value,
        stderr: None,
        meta: DistanceMeta {
            n_a: Some(a.len()),
            n_b: Some(b.len()),
            trimmed_to: if a.len() != b.len() { Some(n) } else { None },
            ..Default::default()
        },
    })
}

/// Mean optimal transport cost (1/n)·Σ|x−y|^p for p in (0,1) between two
/// sorted equal-size samples.
///
/// Interval DP on the merged point sequence: the leftmost point of a span is
/// matched to some opposite-side point k, splitting the span into the
/// balanced inside (matched under the arc) and the remainder.
fn subunit_transport_cost(xs: &[f64], ys: &[f64], p: f64) -> Result<f64, MetricError> {
    let n = xs.len();
    if n > 256 {
        return Err(MetricError::SubUnitTooLarge { n });
    }
    let m = 2 * n;
    let mut pts: Vec<(f64, bool)> = xs
        .iter()
        .map(|v| (*v, false))
        .chain(ys.iter().map(|v| (*v, true)))
        .collect();
    pts.sort_by(|u, v| u.0.partial_cmp(&v.0).unwrap());
    // bal[t] = (#a − #b) among pts[0..t); span [u..=v] is balanced iff
    // bal[v+1] == bal[u]
    let mut bal = vec![0i32; m + 1];
    for (t, (_, is_b)) in pts.iter().enumerate() {
        bal[t + 1] = bal[t] + if *is_b { -1 } else { 1 };
    }
    let mut memo = vec![f64::NAN; m * m];
    fn solve(
        i: usize,
        j: usize,
        pts: &[(f64, bool)],
        bal: &[i32],
        memo: &mut [f64],
        m: usize,
        p: f64,
    ) -> f64 {
        if i > j {
            return 0.0;
        }
        let key = i * m + j;
        if !memo[key].is_nan() {
            return memo[key];
        }
        let mut best = f64::INFINITY;
        for k in (i + 1)..=j {
            if pts[k].1 != pts[i].1 && bal[k] == bal[i + 1] {
                let c = (pts[i].0 - pts[k].0).abs().powf(p);
                if c < best {
                    let inner = solve(i + 1, k - 1, pts, bal, memo, m, p);
                    if c + inner < best {
                        let outer = solve(k + 1, j, pts, bal, memo, m, p);
                        let total = c + inner + outer;
                        if total < best {
                            best = total;
                        }
                    }
                }
            }
        }
        memo[key] = best;
        best
    }
    let total = solve(0, m - 1, &pts, &bal, &mut memo, m, p);
    Ok(total / n as f64)
}

/// Exact W_p between two small equal-weight empirical measures by exhausting
/// all permutation couplings. Oracle for `w_p_1d`; capped at 8 points.
pub fn w_p_bruteforce(a: &[f64], b: &[f64], p: f64) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySamples);
    }
    if p <= 0.0 {
        return Err(MetricError::NonPositiveP);
    }
    let n = a.len().min(b.len());
    if n > 8 {
        return Err(MetricError::BruteForceTooLarge { n });
    }
    let a = &a[..n];
    let b = &b[..n];
    let mut idx: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm over assignments of b to a
    fn walk(idx: &mut Vec<usize>, k: usize, a: &[f64], b: &[f64], p: f64, best: &mut f64) {
        if k == idx.len() {
            let cost: f64 = idx
                .iter()
                .enumerate()
                .map(|(i, &j)| (a[i] - b[j]).abs().powf(p))
                .sum();
            if cost < *best {
                *best = cost;
            }
            return;
        }
        for i in k..idx.len() {
            idx.swap(k, i);
            walk(idx, k + 1, a, b, p, best);
            idx.swap(k, i);
        }
    }
    walk(&mut idx, 0, a, b, p, &mut best);
    Ok((best / n as f64).powf(1.0 / p.max(1.0)))
}

/// Monte Carlo sliced W_p: the average of `w_p_1d` over random unit
/// projection directions drawn from the seeded stream.
pub fn sliced_wp(
    a: &Array2<f64>,
    b: &Array2<f64>,
    p: f64,
    n_proj: usize,
    seed: u64,
) -> Result<DistanceReport, MetricError> {
    let d = a.ncols();
    if d < 2 || b.ncols() != d {
        return Err(MetricError::SlicedDimension { d });
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(MetricError::EmptySamples);
    }
    if p < 1.0 {
        return Err(MetricError::SlicedSubUnitP);
    }
    let mut r = stream_rng(seed, PROJECTION_STREAM);
    let mut vals = Vec::with_capacity(n_proj);
    for _ in 0..n_proj {
        // uniform direction on the sphere
        let mut u: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        for v in u.iter_mut() {
            *v /= norm;
        }
        let pa: Vec<f64> = a
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(&u).map(|(x, w)| x * w).sum())
            .collect();
        let pb: Vec<f64> = b
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(&u).map(|(x, w)| x * w).sum())
            .collect();
        vals.push(w_p_1d(&pa, &pb, p)?.value);
    }
    let m = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / m;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    Ok(DistanceReport {
        p,
        estimator: EstimatorKind::Sliced,
        value: mean,
        stderr: Some((var / m).sqrt()),
        meta: DistanceMeta {
            n_a: Some(a.nrows()),
            n_b: Some(b.nrows()),
            n_projections: Some(vals.len()),
            ..Default::default()
        },
    })
}

/// Default histogram resolution: ceil(n^(1/3)) per dimension in [8, 256].
pub fn default_bins(n: usize) -> usize {
    ((n as f64).powf(1.0 / 3.0).ceil() as usize).clamp(8, 256)
}

/// Histogram estimate of W_0 = TV/2 on a common bounding box, d <= 2.
pub fn tv_histogram(
    a: &Array2<f64>,
    b: &Array2<f64>,
    bins_per_dim: Option<usize>,
) -> Result<DistanceReport, MetricError> {
    let d = a.ncols();
    if d == 0 || d > 2 || b.ncols() != d {
        return Err(MetricError::TvDimension { d });
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(MetricError::EmptySamples);
    }
    let bins = bins_per_dim.unwrap_or_else(|| default_bins(a.nrows().min(b.nrows())));
    // pooled bounding box
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for batch in [a, b] {
        for row in batch.rows() {
            for (j, v) in row.iter().enumerate() {
                lo[j] = lo[j].min(*v);
                hi[j] = hi[j].max(*v);
            }
        }
    }
    let cell = |row: ndarray::ArrayView1<f64>| -> usize {
        let mut idx = 0;
        for j in 0..d {
            let w = hi[j] - lo[j];
            let b_j = if w == 0.0 {
                0
            } else {
                (((row[j] - lo[j]) / w * bins as f64) as usize).min(bins - 1)
            };
            idx = idx * bins + b_j;
        }
        idx
    };
    let n_cells = bins.pow(d as u32);
    let mut pa = vec![0.0; n_cells];
    let mut pb = vec![0.0; n_cells];
    for row in a.rows() {
        pa[cell(row)] += 1.0 / a.nrows() as f64;
    }
    for row in b.rows() {
        pb[cell(row)] += 1.0 / b.nrows() as f64;
    }
    let value = 0.5
        * pa.iter()
            .zip(&pb)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>();
    Ok(DistanceReport {
        p: 0.0,
        estimator: EstimatorKind::TvHistogram,
        value,
        stderr: None,
        meta: DistanceMeta {
            n_a: Some(a.nrows()),
            n_b: Some(b.nrows()),
            bins_per_dim: Some(bins),
            ..Default::default()
        },
    })
}

/// Gaussian law with diagonal covariance storage.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    pub mean: Vec<f64>,
    cov: Cov,
}

#[derive(Debug, Clone, PartialEq)]
enum Cov {
    Diagonal(Vec<f64>),
    Full(Array2<f64>),
}

impl GaussianLaw {
    pub fn diagonal(mean: Vec<f64>, cov_diag: Vec<f64>) -> Self {
        assert_eq!(mean.len(), cov_diag.len());
        GaussianLaw {
            mean,
            cov: Cov::Diagonal(cov_diag),
        }
    }

    pub fn full(mean: Vec<f64>, cov: Array2<f64>) -> Self {
        assert_eq!(mean.len(), cov.nrows());
        assert_eq!(cov.nrows(), cov.ncols());
        GaussianLaw {
            mean,
            cov: Cov::Full(cov),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Diagonal of the covariance if the law is diagonal within 1e-10.
    pub fn cov_diag(&self) -> Result<Vec<f64>, MetricError> {
        let diag = match &self.cov {
            Cov::Diagonal(d) => d.clone(),
            Cov::Full(m) => {
                let d = m.nrows();
                for i in 0..d {
                    for j in 0..d {
                        if i != j && m[[i, j]].abs() > 1e-10 {
                            return Err(MetricError::NonDiagonalCovariance);
                        }
                    }
                }
                (0..d).map(|i| m[[i, i]]).collect()
            }
        };
        for v in &diag {
            if *v < -1e-10 {
                return Err(MetricError::NotPsd { value: *v });
            }
        }
        Ok(diag.into_iter().map(|v| v.max(0.0)).collect())
    }
}

/// Closed-form W₂ between diagonal Gaussians:
/// sqrt(|m₁−m₂|² + Σ_j (√c1_j − √c2_j)²).
pub fn w2_gaussian(g1: &GaussianLaw, g2: &GaussianLaw) -> Result<f64, MetricError> {
    if g1.dim() != g2.dim() {
        return Err(MetricError::LawDimensionMismatch {
            a: g1.dim(),
            b: g2.dim(),
        });
    }
    let c1 = g1.cov_diag()?;
    let c2 = g2.cov_diag()?;
    let mean_sq: f64 = g1
        .mean
        .iter()
        .zip(&g2.mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let cov_sq: f64 = c1
        .iter()
        .zip(&c2)
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    Ok((mean_sq + cov_sq).sqrt())
}

/// Exact scalar law of the linear (OU) EM chain after n steps:
/// m_k = (1 − η_k a)·m_{k−1}, v_k = (1 − η_k a)²·v_{k−1} + η_k σ².
///
/// Applied per-coordinate for isotropic d-dimensional OU. The recursion is
/// rejected as unstable when |1 − η_k a| > 1 for some k ≤ n.
pub fn ou_em_law(
    a: f64,
    sigma: f64,
    sched: &StepSchedule,
    x0: f64,
    n: usize,
) -> Result<GaussianLaw, MetricError> {
    let mut m = x0;
    let mut v = 0.0;
    for k in 1..=n {
        let eta = sched.eta(k)?;
        let factor = 1.0 - eta * a;
        if factor.abs() > 1.0 {
            return Err(MetricError::OuUnstable {
                k,
                factor: factor.abs(),
            });
        }
        m *= factor;
        v = factor * factor * v + eta * sigma * sigma;
    }
    Ok(GaussianLaw::diagonal(vec![m], vec![v]))
}

/// Exact OU transition law: mean x0·e^(−a t), variance (σ²/2a)(1 − e^(−2 a t)).
pub fn ou_sde_law(a: f64, sigma: f64, x0: f64, t: f64) -> GaussianLaw {
    let mean = x0 * (-a * t).exp();
    let var = sigma * sigma / (2.0 * a) * (1.0 - (-2.0 * a * t).exp());
    GaussianLaw::diagonal(vec![mean], vec![var])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::arr2;
    use proptest::prelude::*;

    #[test]
    fn w1_identity_and_point_mass() {
        let r = w_p_1d(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0], 2.0).unwrap();
        assert_eq!(r.value, 0.0);
        let r = w_p_1d(&[0.0], &[3.0], 1.0).unwrap();
        assert_eq!(r.value, 3.0);
    }

    #[test]
    fn w2_monotone_coupling() {
        let r = w_p_1d(&[0.0, 1.0], &[1.0, 2.0], 2.0).unwrap();
        assert_relative_eq!(r.value, 1.0);
    }

    #[test]
    fn w1_trims_to_min() {
        let r = w_p_1d(&[0.0, 0.0, 0.0], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(r.meta.trimmed_to, Some(2));
        assert_eq!(r.value, 1.0);
    }

    #[test]
    fn w1_rejects_empty_and_bad_p() {
        assert!(w_p_1d(&[], &[1.0], 1.0).is_err());
        assert!(w_p_1d(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn bruteforce_examples() {
        assert_eq!(w_p_bruteforce(&[0.0, 10.0], &[0.0, 10.0], 1.0).unwrap(), 0.0);
        assert_relative_eq!(w_p_bruteforce(&[0.0, 1.0], &[1.0, 2.0], 2.0).unwrap(), 1.0);
        assert!(w_p_bruteforce(&[0.0; 9], &[0.0; 9], 1.0).is_err());
    }

    #[test]
    fn sorted_equals_bruteforce_on_integer_multisets() {
        // exhaustive for size <= 3 with entries in {-3..3}
        let entries: Vec<f64> = (-3..=3).map(|v| v as f64).collect();
        for p in [0.5, 1.0, 2.0] {
            for n in 1..=3usize {
                let mut idx = vec![0usize; 2 * n];
                loop {
                    let a: Vec<f64> = idx[..n].iter().map(|&i| entries[i]).collect();
                    let b: Vec<f64> = idx[n..].iter().map(|&i| entries[i]).collect();
                    let fast = w_p_1d(&a, &b, p).unwrap().value;
                    let brute = w_p_bruteforce(&a, &b, p).unwrap();
                    assert!(
                        (fast - brute).abs() < 1e-12,
                        "a={a:?} b={b:?} p={p}: {fast} vs {brute}"
                    );
                    // odometer over the index tuple
                    let mut pos = 0;
                    loop {
                        if pos == idx.len() {
                            break;
                        }
                        idx[pos] += 1;
                        if idx[pos] < entries.len() {
                            break;
                        }
                        idx[pos] = 0;
                        pos += 1;
                    }
                    if pos == idx.len() {
                        break;
                    }
                }
            }
        }
    }

    #[test]
    fn sliced_identity_and_determinism() {
        let a = arr2(&[[0.0, 0.0], [1.0, 1.0], [2.0, 0.5]]);
        let r = sliced_wp(&a, &a, 2.0, 16, 7).unwrap();
        assert_eq!(r.value, 0.0);
        let b = arr2(&[[3.0, 4.0]]);
        let a1 = arr2(&[[0.0, 0.0]]);
        let r1 = sliced_wp(&a1, &b, 2.0, 32, 7).unwrap();
        let r2 = sliced_wp(&a1, &b, 2.0, 32, 7).unwrap();
        assert_eq!(r1.value, r2.value);
        // each projection contributes |<u,(3,4)>| <= 5
        assert!(r1.value > 0.0 && r1.value <= 5.0);
    }

    #[test]
    fn sliced_requires_d2_and_p1() {
        let a = arr2(&[[0.0], [1.0]]);
        assert!(sliced_wp(&a, &a, 2.0, 4, 1).is_err());
        let a2 = arr2(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(
            sliced_wp(&a2, &a2, 0.5, 4, 1),
            Err(MetricError::SlicedSubUnitP)
        ));
    }

    #[test]
    fn tv_two_dimensional() {
        let a = arr2(&[[0.1, 0.1], [0.4, 0.2], [0.9, 0.8]]);
        let r = tv_histogram(&a, &a, Some(8)).unwrap();
        assert_eq!(r.value, 0.0);
        let b = arr2(&[[10.0, 10.0], [10.5, 10.5], [10.9, 10.1]]);
        let r = tv_histogram(&a, &b, Some(16)).unwrap();
        assert_relative_eq!(r.value, 1.0, epsilon = 1e-12);
        let c = arr2(&[[0.1, 0.1, 0.0]]);
        assert!(tv_histogram(&c, &c, None).is_err());
    }

    #[test]
    fn sliced_gaussian_mean_shift() {
        // N(0, I_2) vs N((1,0), I_2): each projection u sees two unit
        // Gaussians shifted by <u, e_1>, so W_2 per slice is |cos phi| and
        // the average tends to 2/pi ~ 0.637 (plus a small sampling floor)
        use crate::rng::stream_rng;
        use rand::Rng;
        let n = 100_000;
        let mut r = stream_rng(77, 1);
        let mut a = Array2::zeros((n, 2));
        let mut b = Array2::zeros((n, 2));
        for i in 0..n {
            for j in 0..2 {
                a[[i, j]] = r.sample::<f64, _>(StandardNormal);
                b[[i, j]] = r.sample::<f64, _>(StandardNormal) + if j == 0 { 1.0 } else { 0.0 };
            }
        }
        let rep = sliced_wp(&a, &b, 2.0, 64, 5).unwrap();
        assert!(
            rep.value > 0.5 && rep.value < 0.8,
            "sliced value {} outside [0.5, 0.8]",
            rep.value
        );
        assert!(rep.stderr.unwrap() > 0.0);
    }

    #[test]
    fn tv_same_law_bias() {
        // two independent N(0,1) batches: histogram TV reads the noise floor
        use crate::rng::stream_rng;
        use rand::Rng;
        let n = 100_000;
        let mut r = stream_rng(78, 1);
        let mut a = Array2::zeros((n, 1));
        let mut b = Array2::zeros((n, 1));
        for i in 0..n {
            a[[i, 0]] = r.sample::<f64, _>(StandardNormal);
            b[[i, 0]] = r.sample::<f64, _>(StandardNormal);
        }
        let rep = tv_histogram(&a, &b, Some(64)).unwrap();
        assert!(rep.value < 0.02, "floor {} above 0.02", rep.value);
    }

    #[test]
    fn tv_identical_and_disjoint() {
        let a = arr2(&[[0.1], [0.4], [0.9]]);
        let r = tv_histogram(&a, &a, Some(16)).unwrap();
        assert_eq!(r.value, 0.0);
        let b = arr2(&[[10.1], [10.4], [10.9]]);
        let r = tv_histogram(&a, &b, Some(64)).unwrap();
        assert_relative_eq!(r.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tv_default_bins_rule() {
        assert_eq!(default_bins(100_000), 47);
        assert_eq!(default_bins(10), 8);
        assert_eq!(default_bins(100_000_000), 256);
    }

    #[test]
    fn w2_gaussian_examples() {
        let g1 = GaussianLaw::diagonal(vec![0.0], vec![1.0]);
        assert_eq!(w2_gaussian(&g1, &g1).unwrap(), 0.0);
        let g2 = GaussianLaw::diagonal(vec![0.0], vec![4.0]);
        assert_relative_eq!(w2_gaussian(&g1, &g2).unwrap(), 1.0);
        // translation only
        let g3 = GaussianLaw::diagonal(vec![3.0, 4.0], vec![2.0, 5.0]);
        let g4 = GaussianLaw::diagonal(vec![0.0, 0.0], vec![2.0, 5.0]);
        assert_relative_eq!(w2_gaussian(&g3, &g4).unwrap(), 5.0);
    }

    #[test]
    fn w2_gaussian_rejects_nondiagonal() {
        let g1 = GaussianLaw::full(vec![0.0, 0.0], arr2(&[[1.0, 0.5], [0.5, 1.0]]));
        let g2 = GaussianLaw::diagonal(vec![0.0, 0.0], vec![1.0, 1.0]);
        assert!(matches!(
            w2_gaussian(&g1, &g2),
            Err(MetricError::NonDiagonalCovariance)
        ));
        // near-diagonal full storage is fine
        let g3 = GaussianLaw::full(vec![0.0, 0.0], arr2(&[[1.0, 1e-12], [1e-12, 1.0]]));
        assert_eq!(w2_gaussian(&g3, &g2).unwrap(), 0.0);
    }

    #[test]
    fn w2_gaussian_matches_sorted_coupling_on_exact_samples() {
        // quantile map between N(0,1) and N(0,4): check the closed form
        // against w_p_1d on inverse-CDF grids
        let n = 1_000_000;
        let probit = |u: f64| -> f64 {
            // Acklam/Moro-style rational approximation of the normal quantile
            // (sufficient here: both grids share the same u so errors cancel)
            let a = [
                -3.969683028665376e+01,
                2.209460984245205e+02,
                -2.759285104469687e+02,
                1.383577518672690e+02,
                -3.066479806614716e+01,
                2.506628277459239e+00,
            ];
            let b = [
                -5.447609879822406e+01,
                1.615858368580409e+02,
                -1.556989798598866e+02,
                6.680131188771972e+01,
                -1.328068155288572e+01,
            ];
            let c = [
                -7.784894002430293e-03,
                -3.223964580411365e-01,
                -2.400758277161838e+00,
                -2.549732539343734e+00,
                4.374664141464968e+00,
                2.938163982698783e+00,
            ];
            let d = [
                7.784695709041462e-03,
                3.224671290700398e-01,
                2.445134137142996e+00,
                3.754408661907416e+00,
            ];
            let plow = 0.02425;
            if u < plow {
                let q = (-2.0 * u.ln()).sqrt();
                (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
                    / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
            } else if u <= 1.0 - plow {
                let q = u - 0.5;
                let r = q * q;
                (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
                    / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
            } else {
                let q = (-2.0 * (1.0 - u).ln()).sqrt();
                -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
                    / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
            }
        };
        let qs: Vec<f64> = (0..n).map(|i| probit((i as f64 + 0.5) / n as f64)).collect();
        let doubled: Vec<f64> = qs.iter().map(|q| 2.0 * q).collect();
        let emp = w_p_1d(&qs, &doubled, 2.0).unwrap().value;
        let g1 = GaussianLaw::diagonal(vec![0.0], vec![1.0]);
        let g2 = GaussianLaw::diagonal(vec![0.0], vec![4.0]);
        let exact = w2_gaussian(&g1, &g2).unwrap();
        assert!((emp - exact).abs() < 2e-3, "emp={emp} exact={exact}");
    }

    #[test]
    fn ou_em_law_small_cases() {
        let sched = StepSchedule::explicit(vec![0.5]);
        let law = ou_em_law(1.0, 2f64.sqrt(), &sched, 1.0, 1).unwrap();
        assert_relative_eq!(law.mean[0], 0.5);
        assert_relative_eq!(law.cov_diag().unwrap()[0], 1.0);
        let law0 = ou_em_law(1.0, 1.0, &sched, 1.0, 0).unwrap();
        assert_eq!(law0.mean[0], 1.0);
        assert_eq!(law0.cov_diag().unwrap()[0], 0.0);
    }

    #[test]
    fn ou_em_law_stationary_limit() {
        // variance tends to sigma^2/(2a) = 1 under admissible schedules
        for sched in [
            StepSchedule::polynomial(2.0, 1.0),
            StepSchedule::polynomial(0.9, 0.7),
        ] {
            let law = ou_em_law(1.0, 2f64.sqrt(), &sched, 1.0, 1_000_000).unwrap();
            assert!((law.cov_diag().unwrap()[0] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn w2_gaussian_isotropic_scaling() {
        // N(0, I_d) vs N(0, 4 I_d) -> sqrt(d)
        let d = 4;
        let g1 = GaussianLaw::diagonal(vec![0.0; d], vec![1.0; d]);
        let g2 = GaussianLaw::diagonal(vec![0.0; d], vec![4.0; d]);
        assert_relative_eq!(w2_gaussian(&g1, &g2).unwrap(), 2.0);
    }

    #[test]
    fn report_csv_rows() {
        let r = w_p_1d(&[0.0, 1.0], &[1.0, 2.0, 5.0], 2.0).unwrap();
        let row = r.csv_row();
        assert!(row.starts_with("sorted_1d,2.0000000000000000e0,1.0000000000000000e0,,2,3,{"));
        assert!(row.contains("\"trimmed_to\":2"));
        let fit = crate::ratefit::RateFit {
            slope: -1.0,
            intercept: 0.5,
            r_squared: 0.99,
            window: (2, 7),
            n_points: 6,
        };
        assert_eq!(
            fit.csv_row(),
            "-1.0000000000000000e0,5.0000000000000000e-1,9.8999999999999999e-1,6,2,7"
        );
    }

    #[test]
    fn ou_em_law_detects_instability() {
        let sched = StepSchedule::constant(3.0);
        let r = ou_em_law(1.0, 1.0, &sched, 1.0, 10);
        assert!(matches!(r, Err(MetricError::OuUnstable { k: 1, .. })));
    }

    #[test]
    fn ou_sde_law_values() {
        let law = ou_sde_law(1.0, 2f64.sqrt(), 1.0, 0.0);
        assert_eq!(law.mean[0], 1.0);
        assert_eq!(law.cov_diag().unwrap()[0], 0.0);
        let law = ou_sde_law(1.0, 2f64.sqrt(), 1.0, 2f64.ln());
        assert_relative_eq!(law.mean[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(law.cov_diag().unwrap()[0], 0.75, max_relative = 1e-15);
        let law = ou_sde_law(1.0, 2f64.sqrt(), 1.0, 1e9);
        assert_relative_eq!(law.cov_diag().unwrap()[0], 1.0);
    }

    #[test]
    fn ou_sde_to_stationary_decays_monotonically() {
        let stationary = GaussianLaw::diagonal(vec![0.0], vec![1.0]);
        let mut prev = f64::INFINITY;
        for i in 1..40 {
            let t = 0.25 * i as f64;
            let w = w2_gaussian(&ou_sde_law(1.0, 2f64.sqrt(), 1.0, t), &stationary).unwrap();
            assert!(w < prev);
            prev = w;
        }
    }

    proptest! {
        #[test]
        fn symmetry(mut a in proptest::collection::vec(-50.0f64..50.0, 1..40),
                    mut b in proptest::collection::vec(-50.0f64..50.0, 1..40),
                    p in prop_oneof![Just(0.5f64), Just(1.0), Just(2.0)]) {
            let ab = w_p_1d(&a, &b, p).unwrap().value;
            let ba = w_p_1d(&b, &a, p).unwrap().value;
            prop_assert_eq!(ab, ba);
            a.truncate(6); b.truncate(6);
            let fast = w_p_1d(&a, &b, p).unwrap().value;
            let brute = w_p_bruteforce(&a, &b, p).unwrap();
            prop_assert!((fast - brute).abs() < 1e-9, "{} vs {}", fast, brute);
        }

        #[test]
        fn triangle_inequality(a in proptest::collection::vec(-10.0f64..10.0, 16),
                               b in proptest::collection::vec(-10.0f64..10.0, 16),
                               c in proptest::collection::vec(-10.0f64..10.0, 16),
                               p in prop_oneof![Just(1.0f64), Just(2.0)]) {
            let ab = w_p_1d(&a, &b, p).unwrap().value;
            let ac = w_p_1d(&a, &c, p).unwrap().value;
            let cb = w_p_1d(&c, &b, p).unwrap().value;
            prop_assert!(ab <= ac + cb + 1e-9);
        }

        #[test]
        fn triangle_inequality_sub_one(a in proptest::collection::vec(-10.0f64..10.0, 12),
                                       b in proptest::collection::vec(-10.0f64..10.0, 12),
                                       c in proptest::collection::vec(-10.0f64..10.0, 12)) {
            // for p in (0,1) the no-root value is itself a metric
            let p = 0.5;
            let ab = w_p_1d(&a, &b, p).unwrap().value;
            let ac = w_p_1d(&a, &c, p).unwrap().value;
            let cb = w_p_1d(&c, &b, p).unwrap().value;
            prop_assert!(ab <= ac + cb + 1e-9);
        }

        #[test]
        fn tv_symmetric_and_bounded(a in proptest::collection::vec(-5.0f64..5.0, 3..60),
                                    b in proptest::collection::vec(-5.0f64..5.0, 3..60)) {
            let na = a.len();
            let nb = b.len();
            let aa = Array2::from_shape_vec((na, 1), a).unwrap();
            let bb = Array2::from_shape_vec((nb, 1), b).unwrap();
            let ab = tv_histogram(&aa, &bb, Some(16)).unwrap().value;
            let ba = tv_histogram(&bb, &aa, Some(16)).unwrap().value;
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}
