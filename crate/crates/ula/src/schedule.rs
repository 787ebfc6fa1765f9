//! Decreasing step-size schedules and their accumulated times.
//!
//! A schedule is the sequence {η_k}_{k≥1} driving the chain, together with
//! the grid times t_n = Σ_{i=1..n} η_i. The admissibility conditions are:
//! positive, non-increasing steps with η_k → 0 and Σ η_k = ∞. `validate`
//! reports which of those clauses hold instead of failing construction, so
//! reference simulators can still run constant-step chains.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("step index {k} out of range for explicit schedule of length {len}")]
    IndexOutOfRange { k: usize, len: usize },
    #[error("step index must be >= 1")]
    ZeroIndex,
}

/// The parametric family a schedule belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScheduleKind {
    /// η_k = θ·k^(−a).
    Polynomial { theta: f64, a: f64 },
    /// η_k = η for all k. Not admissible (η does not vanish) but useful
    /// for fine-grid reference integration.
    Constant { eta: f64 },
    /// η_k read from a finite list.
    Explicit(Vec<f64>),
}

/// An immutable step-size sequence with memoized prefix sums.
///
/// Prefix sums use compensated (Kahan) summation so t_n does not drift over
/// long runs; the memo is guarded by a mutex so schedules can be shared
/// across concurrently running chains.
#[derive(Debug)]
pub struct StepSchedule {
    kind: ScheduleKind,
    times: Mutex<PrefixSums>,
}

#[derive(Debug, Clone)]
struct PrefixSums {
    /// sums[n] = t_n, sums[0] = 0.
    sums: Vec<f64>,
    /// Kahan compensation carried alongside the running sum.
    compensation: f64,
}

impl Clone for StepSchedule {
    fn clone(&self) -> Self {
        StepSchedule {
            kind: self.kind.clone(),
            times: Mutex::new(self.times.lock().unwrap().clone()),
        }
    }
}

impl PartialEq for StepSchedule {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl StepSchedule {
    pub fn new(kind: ScheduleKind) -> Self {
        StepSchedule {
            kind,
            times: Mutex::new(PrefixSums {
                sums: vec![0.0],
                compensation: 0.0,
            }),
        }
    }

    pub fn polynomial(theta: f64, a: f64) -> Self {
        Self::new(ScheduleKind::Polynomial { theta, a })
    }

    pub fn constant(eta: f64) -> Self {
        Self::new(ScheduleKind::Constant { eta })
    }

    pub fn explicit(steps: Vec<f64>) -> Self {
        Self::new(ScheduleKind::Explicit(steps))
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    /// η_k for k ≥ 1.
    pub fn eta(&self, k: usize) -> Result<f64, ScheduleError> {
        if k == 0 {
            return Err(ScheduleError::ZeroIndex);
        }
        match &self.kind {
            ScheduleKind::Polynomial { theta, a } => Ok(theta * (k as f64).powf(-a)),
            ScheduleKind::Constant { eta } => Ok(*eta),
            ScheduleKind::Explicit(steps) => steps
                .get(k - 1)
                .copied()
                .ok_or(ScheduleError::IndexOutOfRange { k, len: steps.len() }),
        }
    }

    /// t_n = Σ_{i=1..n} η_i, with t_0 = 0.
    pub fn time_at(&self, n: usize) -> Result<f64, ScheduleError> {
        let mut memo = self.times.lock().unwrap();
        while memo.sums.len() <= n {
            let k = memo.sums.len();
            let eta = self.eta(k)?;
            let last = *memo.sums.last().unwrap();
            // Kahan step: add eta to the running sum, carrying compensation.
            let y = eta - memo.compensation;
            let t = last + y;
            memo.compensation = (t - last) - y;
            memo.sums.push(t);
        }
        Ok(memo.sums[n])
    }

    /// Precompute prefix sums up to n so later `time_at` calls do not contend.
    pub fn precompute(&self, n: usize) -> Result<(), ScheduleError> {
        self.time_at(n).map(|_| ())
    }

    /// Checks the admissibility clauses and returns a report instead of failing.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let (divergence, decaying) = match &self.kind {
            ScheduleKind::Polynomial { theta, a } => {
                if *theta <= 0.0 || !theta.is_finite() {
                    violations.push(A0Violation::NonPositiveStep { k: 1 });
                }
                if *a < 0.0 {
                    violations.push(A0Violation::NonMonotone { k: 2 });
                }
                if *a <= 0.0 {
                    violations.push(A0Violation::StepsDoNotVanish);
                }
                if *a > 1.0 {
                    // p-series: Σ k^(−a) converges for a > 1.
                    violations.push(A0Violation::SumConverges);
                }
                let divergence = if *a > 1.0 {
                    Divergence::Convergent
                } else {
                    Divergence::Divergent
                };
                (divergence, *a > 0.0)
            }
            ScheduleKind::Constant { eta } => {
                if *eta <= 0.0 || !eta.is_finite() {
                    violations.push(A0Violation::NonPositiveStep { k: 1 });
                }
                violations.push(A0Violation::StepsDoNotVanish);
                (Divergence::Divergent, false)
            }
            ScheduleKind::Explicit(steps) => {
                for (i, s) in steps.iter().enumerate() {
                    if *s <= 0.0 || !s.is_finite() {
                        violations.push(A0Violation::NonPositiveStep { k: i + 1 });
                        break;
                    }
                }
                for (i, w) in steps.windows(2).enumerate() {
                    if w[1] > w[0] {
                        violations.push(A0Violation::NonMonotone { k: i + 2 });
                        break;
                    }
                }
                // A finite list carries no divergence guarantee either way.
                (Divergence::Unknown, false)
            }
        };
        ValidationReport {
            violations,
            divergence,
            decaying,
        }
    }
}

/// One violated admissibility clause.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum A0Violation {
    /// η_k ≤ 0 (or non-finite) at the given index.
    NonPositiveStep { k: usize },
    /// η_k increases at the given index.
    NonMonotone { k: usize },
    /// η_k does not tend to 0 (constant schedules, or polynomial with a ≤ 0).
    StepsDoNotVanish,
    /// Σ η_k < ∞ (polynomial with a > 1), so t_n stays bounded.
    SumConverges,
}

impl std::fmt::Display for A0Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            A0Violation::NonPositiveStep { k } => write!(f, "positivity: eta_{k} <= 0"),
            A0Violation::NonMonotone { k } => write!(f, "monotonicity: eta_{k} > eta_{}", k - 1),
            A0Violation::StepsDoNotVanish => write!(f, "decay: eta_k does not tend to 0"),
            A0Violation::SumConverges => write!(f, "divergence: sum of eta_k is finite"),
        }
    }
}

/// Summability status of Σ η_k.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divergence {
    Divergent,
    Convergent,
    Unknown,
}

/// Outcome of `StepSchedule::validate`.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub violations: Vec<A0Violation>,
    pub divergence: Divergence,
    /// Whether η_k → 0.
    pub decaying: bool,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_valid() {
            write!(f, "valid")?;
        } else {
            write!(f, "violated: ")?;
            for (i, v) in self.violations.iter().enumerate() {
                if i > 0 {
                    write!(f, "; ")?;
                }
                write!(f, "{v}")?;
            }
        }
        let div = match self.divergence {
            Divergence::Divergent => "divergent",
            Divergence::Convergent => "convergent",
            Divergence::Unknown => "divergence unknown",
        };
        write!(f, " ({div}, {})", if self.decaying { "decaying" } else { "non-decaying" })
    }
}

/// Short human-readable descriptor used in batch provenance records.
pub fn describe(kind: &ScheduleKind) -> String {
    match kind {
        ScheduleKind::Polynomial { theta, a } => format!("polynomial(theta={theta},a={a})"),
        ScheduleKind::Constant { eta } => format!("constant(eta={eta})"),
        ScheduleKind::Explicit(steps) => format!("explicit(len={})", steps.len()),
    }
}
