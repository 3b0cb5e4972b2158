//! forgetbench: a benchmark harness for incremental (session-based) learning.
//!
//! Six learners share one sequential-session interface — a plain MLP
//! baseline, quadratic-anchor regularization (EWC), evolutionary path
//! selection with per-task heads (PathNet), a SOM-plus-rehearsal model
//! (GeppNet) and its short-term-memory variant, and a fixed sparse expansion
//! layer (FEL). The harness drives them through three protocols (feature
//! permutation, incremental classes, multi-modal pairs), records accuracy
//! curves, and reduces them to the omega retention/acquisition metrics.
//! A symmetric-uncertainty feature-redundancy filter (FCBF) rounds out the
//! analysis tooling.

pub mod data;
pub mod error;
pub mod ewc;
pub mod fcbf;
pub mod fel;
pub mod geppnet;
pub mod harness;
pub mod learner;
pub mod linalg;
pub mod metrics;
pub mod nncore;
pub mod pathnet;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::Matrix;
