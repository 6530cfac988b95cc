//! Conformal uncertainty for sampled open-ended generations.
//!
//! Given `M` sampled generations per question and pairwise similarity
//! scores, this crate clusters generations into semantic classes, scores
//! each generation's uncertainty from cluster frequency and cross-cluster
//! similarity, calibrates an uncertainty threshold on held-out data, and
//! builds prediction sets that contain a correct generation with
//! probability at least `1 - α`.
//!
//! ```
//! use conu::synthetic::{generate, GeneratorSpec};
//! use conu::data::{split, SplitSpec};
//! use conu::evaluation::evaluate;
//!
//! let spec = GeneratorSpec { n_records: 220, seed: 1, ..Default::default() };
//! let (dataset, _truth) = generate(&spec, 0.7).unwrap();
//! let (cal, test) = split(&dataset, &SplitSpec::new(1.0 / 11.0, 3).unwrap()).unwrap();
//! let reports = evaluate(&cal, &test, &[0.1], 0.5, 0.7).unwrap();
//! assert_eq!(reports[0].n_test, 200);
//! ```

pub mod clustering;
pub mod config;
pub mod conformal;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod synthetic;
pub mod uncertainty;

pub use error::{Error, ErrorClass, Result};
