//! Decreasing-step Euler-Maruyama / unadjusted Langevin sampling with
//! Wasserstein-distance estimation and empirical convergence-rate fitting.
//!
//! The crate is organized around the experiment pipeline:
//!
//! - [`schedule`]: step sequences η_k and their accumulated times t_n
//! - [`model`]: drift/diffusion catalogue and assumption probes
//! - [`sim`]: the chain drivers and reference samplers
//! - [`metric`]: distance estimators (sorted 1-d coupling, sliced, TV
//!   histogram, closed-form Gaussian, exact OU law)
//! - [`ratefit`]: log-log slope extraction and theoretical exponents
//! - [`cli`]: the batch front end gluing the above together
//!
//! ```no_run
//! use ndarray::arr1;
//! use ula::model::ModelSpec;
//! use ula::schedule::StepSchedule;
//! use ula::sim::{run_batch, SamplerConfig};
//!
//! let batch = run_batch(&SamplerConfig {
//!     model: ModelSpec::ou_isotropic(1, 1.0, 2f64.sqrt()),
//!     schedule: StepSchedule::polynomial(2.0, 1.0),
//!     x0: arr1(&[1.0]),
//!     n_steps: 1024,
//!     n_chains: 10_000,
//!     seed: 42,
//! }).unwrap();
//! println!("E[Y^2] ~ {}", batch.variance()[0]);
//! ```

pub mod cli;
pub mod config;
pub mod io;
pub mod metric;
pub mod model;
pub mod oracle;
pub mod ratefit;
pub mod rng;
pub mod schedule;
pub mod sim;
