//! Distributed Newton-Raphson consensus optimization at desk scale: the
//! algorithm family with selectable curvature surrogates, three standard
//! baselines, consensus-matrix construction with spectral tuning, analytic
//! cost families with a centralized oracle, and a deterministic synchronous
//! simulator with sweep and Monte Carlo layers.
//!
//! Parallel execution of independent replicas sits behind the `parallel`
//! feature (on by default); disabling it yields a fully sequential build
//! with identical results.

pub mod baselines;
pub mod config;
pub mod costs;
pub mod data;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod nrc;
pub mod par;

pub use config::{AlgorithmSpec, CostSpec, ExperimentConfig, GraphSpec, MatrixSpec, RunSpec};
pub use costs::{CostFunction, HessianScheme};
pub use error::{Error, Result};
pub use graph::{ConsensusMatrix, Graph};
pub use harness::{Prepared, RunResult, TraceRecord};
