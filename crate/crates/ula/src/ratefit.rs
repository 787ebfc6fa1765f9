//! Log-log slope extraction from (n, distance) series and comparison with
//! the theoretical decay exponents.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("series must have equal lengths, got {ns} and {values}")]
    LengthMismatch { ns: usize, values: usize },
    #[error("checkpoint indices must be increasing")]
    NonIncreasingNs,
    #[error("value at index {index} is not positive: {value}")]
    NonPositiveValue { index: usize, value: f64 },
    #[error("need at least 3 retained points, have {retained}")]
    TooFewPoints { retained: usize },
    #[error("drop fraction must lie in [0, 1)")]
    BadDropFraction,
    #[error("degenerate abscissae: all retained n are equal")]
    DegenerateAbscissae,
    #[error("parameter {name}={value} outside the theorem's range")]
    OutOfRange { name: &'static str, value: f64 },
}

/// Ordinary least-squares fit of log(value) against log(n).
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Indices (into the input series) of the first and last point used.
    pub window: (usize, usize),
    pub n_points: usize,
}

impl RateFit {
    /// One CSV row: slope, intercept, r2, n_points, window_lo, window_hi.
    pub fn csv_row(&self) -> String {
        use crate::io::format_f64;
        format!(
            "{},{},{},{},{},{}",
            format_f64(self.slope),
            format_f64(self.intercept),
            format_f64(self.r_squared),
            self.n_points,
            self.window.0,
            self.window.1
        )
    }
}

/// Theoretical rate being tested against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatePrediction {
    /// W₁ and W₀ decay n^(−α/2) under partial dissipation, α in (0,2].
    T21W1W0 { alpha: f64 },
    /// W_p for p in (0,1) inherits the n^(−α/2) exponent by interpolation.
    T21WpInterp { alpha: f64, p: f64 },
    /// W_p under uniform dissipation with η_k = θ/k:
    /// W_p^p ≲ n^(−(θK₂' ∧ αp/2)), so W_p itself decays with that exponent
    /// divided by p. Requires α in (0,1], p > 1.
    T32Wp {
        alpha: f64,
        p: f64,
        theta: f64,
        k2_prime: f64,
    },
}

/// Fits log(value) ~ slope·log(n) + intercept after discarding the first
/// drop_fraction of the points (burn-in transients dominate small n).
pub fn fit_rate(ns: &[usize], values: &[f64], drop_fraction: f64) -> Result<RateFit, FitError> {
    if ns.len() != values.len() {
        return Err(FitError::LengthMismatch {
            ns: ns.len(),
            values: values.len(),
        });
    }
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(FitError::BadDropFraction);
    }
    if ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FitError::NonIncreasingNs);
    }
    for (i, v) in values.iter().enumerate() {
        if !(*v > 0.0) {
            return Err(FitError::NonPositiveValue {
                index: i,
                value: *v,
            });
        }
    }
    let skip = (ns.len() as f64 * drop_fraction).floor() as usize;
    let retained = ns.len() - skip;
    if retained < 3 {
        return Err(FitError::TooFewPoints { retained });
    }
    let xs: Vec<f64> = ns[skip..].iter().map(|n| (*n as f64).ln()).collect();
    let ys: Vec<f64> = values[skip..].iter().map(|v| v.ln()).collect();
    let m = retained as f64;
    let xbar = xs.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    if sxx == 0.0 {
        return Err(FitError::DegenerateAbscissae);
    }
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - ybar) * (y - ybar)).sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        window: (skip, ns.len() - 1),
        n_points: retained,
    })
}

/// The exponent of n predicted for the distance itself (not its p-th power).
pub fn predict_exponent(pred: &RatePrediction) -> Result<f64, FitError> {
    match pred {
        RatePrediction::T21W1W0 { alpha } => {
            if !(0.0 < *alpha && *alpha <= 2.0) {
                return Err(FitError::OutOfRange {
                    name: "alpha",
                    value: *alpha,
                });
            }
            Ok(-alpha / 2.0)
        }
        RatePrediction::T21WpInterp { alpha, p } => {
            if !(0.0 < *alpha && *alpha <= 2.0) {
                return Err(FitError::OutOfRange {
                    name: "alpha",
                    value: *alpha,
                });
            }
            if !(0.0 < *p && *p < 1.0) {
                return Err(FitError::OutOfRange { name: "p", value: *p });
            }
            // W_p <= const · W₀^(1−p) · W₁^p keeps the n-exponent −α/2
            Ok(-alpha / 2.0)
        }
        RatePrediction::T32Wp {
            alpha,
            p,
            theta,
            k2_prime,
        } => {
            if !(0.0 < *alpha && *alpha <= 1.0) {
                return Err(FitError::OutOfRange {
                    name: "alpha",
                    value: *alpha,
                });
            }
            if !(*p > 1.0) {
                return Err(FitError::OutOfRange { name: "p", value: *p });
            }
            if !(*theta > 0.0) {
                return Err(FitError::OutOfRange {
                    name: "theta",
                    value: *theta,
                });
            }
            if !(*k2_prime > 0.0) {
                return Err(FitError::OutOfRange {
                    name: "k2_prime",
                    value: *k2_prime,
                });
            }
            Ok(-(theta * k2_prime).min(alpha * p / 2.0) / p)
        }
    }
}

/// Pass/fail comparison of a fitted slope against a predicted exponent.
#[derive(Debug, Clone)]
pub struct RateCheck {
    pub slope: f64,
    pub predicted: f64,
    pub tol: f64,
    pub r_squared: f64,
    pub pass: bool,
}

/// Passes iff |slope − predicted| ≤ tol and r² ≥ 0.9.
pub fn check_rate(fit: &RateFit, pred: &RatePrediction, tol: f64) -> Result<RateCheck, FitError> {
    let predicted = predict_exponent(pred)?;
    let pass = (fit.slope - predicted).abs() <= tol && fit.r_squared >= 0.9;
    Ok(RateCheck {
        slope: fit.slope,
        predicted,
        tol,
        r_squared: fit.r_squared,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn geometric(lo: u32, hi: u32) -> Vec<usize> {
        (lo..=hi).map(|e| 1usize << e).collect()
    }

    #[test]
    fn exact_power_law() {
        let ns = geometric(4, 14);
        let vals: Vec<f64> = ns.iter().map(|n| (*n as f64).powf(-0.5)).collect();
        let fit = fit_rate(&ns, &vals, 0.0).unwrap();
        assert_relative_eq!(fit.slope, -0.5, max_relative = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn constant_series_has_zero_slope() {
        let ns = geometric(4, 10);
        let vals = vec![3.5; ns.len()];
        let fit = fit_rate(&ns, &vals, 0.0).unwrap();
        assert_relative_eq!(fit.slope, 0.0);
    }

    #[test]
    fn wiggly_power_law_within_tolerance() {
        // 3·n^(−1)·(1 + 0.01·sin n) over n in [2^6, 2^16]
        let ns = geometric(6, 16);
        let vals: Vec<f64> = ns
            .iter()
            .map(|n| 3.0 / *n as f64 * (1.0 + 0.01 * (*n as f64).sin()))
            .collect();
        let fit = fit_rate(&ns, &vals, 0.0).unwrap();
        assert!((fit.slope + 1.0).abs() < 0.02, "slope={}", fit.slope);
    }

    #[test]
    fn drop_fraction_and_window() {
        let ns = geometric(4, 11);
        let vals: Vec<f64> = ns.iter().map(|n| 1.0 / *n as f64).collect();
        let fit = fit_rate(&ns, &vals, 0.25).unwrap();
        assert_eq!(fit.window, (2, 7));
        assert_eq!(fit.n_points, 6);
    }

    #[test]
    fn errors() {
        let ns = geometric(4, 8);
        let mut vals: Vec<f64> = ns.iter().map(|n| 1.0 / *n as f64).collect();
        vals[2] = 0.0;
        assert!(matches!(
            fit_rate(&ns, &vals, 0.0),
            Err(FitError::NonPositiveValue { index: 2, .. })
        ));
        let vals = [1.0, 0.5];
        assert!(matches!(
            fit_rate(&[16, 32], &vals, 0.0),
            Err(FitError::TooFewPoints { retained: 2 })
        ));
        assert!(fit_rate(&[16, 8, 32], &[1.0, 1.0, 1.0], 0.0).is_err());
        assert!(fit_rate(&ns, &[1.0; 4], 0.0).is_err());
    }

    #[test]
    fn predicted_exponents() {
        assert_eq!(
            predict_exponent(&RatePrediction::T21W1W0 { alpha: 2.0 }).unwrap(),
            -1.0
        );
        assert_eq!(
            predict_exponent(&RatePrediction::T21W1W0 { alpha: 0.5 }).unwrap(),
            -0.25
        );
        assert_eq!(
            predict_exponent(&RatePrediction::T21WpInterp { alpha: 0.5, p: 0.5 }).unwrap(),
            -0.25
        );
        // saturation: min(theta*k2', alpha*p/2)/p = min(10, 1)/2
        assert_eq!(
            predict_exponent(&RatePrediction::T32Wp {
                alpha: 1.0,
                p: 2.0,
                theta: 5.0,
                k2_prime: 2.0
            })
            .unwrap(),
            -0.5
        );
        assert!(predict_exponent(&RatePrediction::T21W1W0 { alpha: 2.5 }).is_err());
        assert!(predict_exponent(&RatePrediction::T32Wp {
            alpha: 1.5,
            p: 2.0,
            theta: 1.0,
            k2_prime: 1.0
        })
        .is_err());
    }

    #[test]
    fn check_rate_thresholds() {
        let fit = RateFit {
            slope: -1.02,
            intercept: 0.0,
            r_squared: 0.99,
            window: (0, 5),
            n_points: 6,
        };
        let pred = RatePrediction::T21W1W0 { alpha: 2.0 };
        assert!(check_rate(&fit, &pred, 0.1).unwrap().pass);
        let fit = RateFit { slope: -0.5, ..fit };
        assert!(!check_rate(&fit, &pred, 0.1).unwrap().pass);
        // good slope but wiggly curve fails the r² gate
        let fit = RateFit {
            slope: -1.0,
            r_squared: 0.5,
            ..fit
        };
        assert!(!check_rate(&fit, &pred, 0.1).unwrap().pass);
    }

    #[test]
    fn t32_monotone_in_saturation() {
        // exponent is non-increasing in alpha and in theta*k2' until alpha*p/2 saturates
        let mut prev = 0.0;
        for i in 1..=10 {
            let alpha = i as f64 / 10.0;
            let e = predict_exponent(&RatePrediction::T32Wp {
                alpha,
                p: 2.0,
                theta: 10.0,
                k2_prime: 1.0,
            })
            .unwrap();
            assert!(e <= prev);
            prev = e;
        }
        let mut prev = 0.0;
        for i in 1..=30 {
            let tk = i as f64 / 10.0;
            let e = predict_exponent(&RatePrediction::T32Wp {
                alpha: 0.5,
                p: 2.0,
                theta: tk,
                k2_prime: 1.0,
            })
            .unwrap();
            assert!(e <= prev);
            prev = e;
        }
    }

    proptest! {
        #[test]
        fn scale_invariance(c in 0.001f64..1000.0, q in 0.05f64..2.0) {
            let ns = geometric(4, 12);
            let base: Vec<f64> = ns.iter().map(|n| (*n as f64).powf(-q)).collect();
            let scaled: Vec<f64> = base.iter().map(|v| c * v).collect();
            let f1 = fit_rate(&ns, &base, 0.25).unwrap();
            let f2 = fit_rate(&ns, &scaled, 0.25).unwrap();
            prop_assert!((f1.slope - f2.slope).abs() < 1e-12);
            prop_assert!((f2.intercept - f1.intercept - c.ln()).abs() < 1e-9);
        }

        #[test]
        fn subsequence_invariance(q in 0.05f64..2.0, stride in 1usize..3) {
            // exact power laws fit the same slope on any arithmetic log-subgrid
            let ns = geometric(4, 14);
            let vals: Vec<f64> = ns.iter().map(|n| (*n as f64).powf(-q)).collect();
            let sub_ns: Vec<usize> = ns.iter().step_by(stride + 1).copied().collect();
            let sub_vals: Vec<f64> = vals.iter().step_by(stride + 1).copied().collect();
            if sub_ns.len() >= 3 {
                let f1 = fit_rate(&ns, &vals, 0.0).unwrap();
                let f2 = fit_rate(&sub_ns, &sub_vals, 0.0).unwrap();
                prop_assert!((f1.slope - f2.slope).abs() < 1e-10);
            }
        }
    }
}
