//! Training of binary-activation deep networks (BDNNs) as mixed-integer
//! programs.
//!
//! The crate covers four training routes over one shared model type:
//!
//! - [`milp`] builds the exact big-M formulation whose optimum is the global
//!   empirical-risk minimizer; [`solver`] solves it with a built-in
//!   branch-and-bound (or writes MPS for an external solver).
//! - [`heuristic`] runs the alternating local search that fixes layers of
//!   one parity and optimizes the other.
//! - [`robust`] trains under per-point norm-ball input uncertainty with a
//!   column-and-constraint generation loop.
//! - [`baseline`] is a small ReLU/softmax network trained by SGD for
//!   comparison runs.
//!
//! [`data`] generates and loads datasets, [`document`] (de)serializes trained
//! models, and [`trainer`] wires the pieces together the way the CLI does.

pub mod baseline;
pub mod data;
pub mod dataset;
pub mod document;
pub mod error;
pub mod heuristic;
pub mod metrics;
pub mod milp;
pub mod model;
pub mod robust;
pub mod solver;
pub mod trainer;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use metrics::{evaluate_metrics, Metrics};
pub use model::{Architecture, BdnnModel, LambdaMode, WeightDomain};
