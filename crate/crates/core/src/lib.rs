//! Graph condensation with an explicit original-to-synthetic node mapping.
//!
//! A large attributed graph is condensed into a small synthetic graph
//! `S = {A′, X′, Y′}` together with a nonnegative mapping matrix `M` that
//! expresses every original node as a weighted ensemble of synthetic nodes.
//! Unseen nodes that link into the original graph are re-linked onto the
//! synthetic graph through `M` and classified there, which costs a fraction
//! of full-graph propagation.
//!
//! The numeric core is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix it to `f64`, which every training path uses.

pub mod autodiff;
pub mod baselines;
pub mod calibration;
pub mod condense;
pub mod dense;
pub mod error;
pub mod evaluate;
pub mod graph;
pub mod inference;
pub mod io;
pub mod mapping;
pub mod optim;
pub mod relay;
pub mod rng;
pub mod scalar;
pub mod sparse;
pub mod trainer;

pub use autodiff::{grad_check, GradCheck, Gradients, Tape, Var};
pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use graph::{BatchMode, GraphBundle, IncrementalBatch, InductiveSetup, SbmParams, SparseGraph, Splits};
pub use optim::{Optimizer, OptimizerKind};
pub use relay::{Architecture, GradientSet, RelayConfig, RelayWeights};
pub use scalar::Scalar;
pub use sparse::{CsrMatrix, Propagate};

pub type Matrix = DenseMatrix<f64>;
pub type Matrix32 = DenseMatrix<f32>;
pub type Csr = CsrMatrix<f64>;
pub type Graph = SparseGraph<f64>;
pub type Batch = IncrementalBatch<f64>;
