//! Built-in self-check suites for the `oracle` command: fast, deterministic
//! cross-validations of the estimators against independent references.

use std::io::Write;

use rand::Rng;

use crate::metric::{ou_em_law, w_p_1d, w_p_bruteforce};
use crate::model::{bridge_loss, bridge_loss_grad, RegressionData};
use crate::rng::stream_rng;
use crate::schedule::StepSchedule;

/// Test-double hooks: corrupt one suite to prove the runner catches it.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleFault {
    /// Skip sorting in the 1-d transport estimate.
    UnsortedCoupling,
}

/// Runs all oracle suites, writing one line per suite; returns overall pass.
pub fn run_oracles(out: &mut impl Write, fault: Option<OracleFault>) -> std::io::Result<bool> {
    let mut all = true;
    let mut suite = |name: &str, pass: bool, detail: String, out: &mut dyn Write| {
        all &= pass;
        writeln!(
            out,
            "oracle {name}: {} ({detail})",
            if pass { "pass" } else { "FAIL" }
        )
    };

    // 1. sorted 1-d coupling vs exhaustive permutation coupling
    let mut r = stream_rng(0x0A11_5EED, 1);
    let mut worst = 0.0f64;
    let mut pass = true;
    for _ in 0..2000 {
        let n = r.gen_range(1..=6);
        let a: Vec<f64> = (0..n).map(|_| r.gen_range(-3i32..=3) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| r.gen_range(-3i32..=3) as f64).collect();
        for p in [0.5, 1.0, 2.0] {
            let fast = match fault {
                Some(OracleFault::UnsortedCoupling) => unsorted_wp(&a, &b, p),
                None => w_p_1d(&a, &b, p).unwrap().value,
            };
            let brute = w_p_bruteforce(&a, &b, p).unwrap();
            let diff = (fast - brute).abs();
            worst = worst.max(diff);
            pass &= diff <= 1e-12;
        }
    }
    suite(
        "w_p_1d-vs-bruteforce",
        pass,
        format!("worst diff {:.3e}", worst),
        out,
    )?;

    // 2. bridge gradient vs central finite differences
    let data = RegressionData::synthetic(15, 3, 0xBEEF);
    let mut worst = 0.0f64;
    let mut pass = true;
    for i in 0..200 {
        let gamma = [1.1, 1.5, 2.0][i % 3];
        let lambda = r.gen::<f64>() * 2.0;
        let beta: Vec<f64> = (0..3)
            .map(|_| {
                let v: f64 = r.gen::<f64>() * 2.0 - 1.0;
                v.signum() * (0.1 + v.abs())
            })
            .collect();
        let g = bridge_loss_grad(&data, lambda, gamma, &beta);
        for j in 0..3 {
            let mut hi = beta.clone();
            let mut lo = beta.clone();
            hi[j] += 1e-6;
            lo[j] -= 1e-6;
            let fd = (bridge_loss(&data, lambda, gamma, &hi)
                - bridge_loss(&data, lambda, gamma, &lo))
                / 2e-6;
            let rel = (g[j] - fd).abs() / fd.abs().max(1e-12);
            worst = worst.max(rel);
            pass &= rel < 1e-6;
        }
    }
    suite(
        "bridge-grad-vs-finite-diff",
        pass,
        format!("worst rel err {:.3e}", worst),
        out,
    )?;

    // 3. OU EM law variance limit sigma^2/(2a)
    let sched = StepSchedule::polynomial(2.0, 1.0);
    let law = ou_em_law(1.0, 2f64.sqrt(), &sched, 1.0, 1_000_000).unwrap();
    let v = law.cov_diag().unwrap()[0];
    let pass = (v - 1.0).abs() < 1e-3;
    suite(
        "ou-em-law-stationary-limit",
        pass,
        format!("v(1e6) = {v:.9}"),
        out,
    )?;

    Ok(all)
}

fn unsorted_wp(a: &[f64], b: &[f64], p: f64) -> f64 {
    let n = a.len().min(b.len());
    let cost: f64 = a[..n]
        .iter()
        .zip(&b[..n])
        .map(|(x, y)| (x - y).abs().powf(p))
        .sum::<f64>()
        / n as f64;
    cost.powf(1.0 / p.max(1.0))
}
