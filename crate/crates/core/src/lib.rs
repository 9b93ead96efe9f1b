//! Conditional meta-learning of linear representations.
//!
//! A within-task learner solves a regularized problem preconditioned by a
//! PSD matrix `θ`. Meta-learning picks `θ` per task from side information
//! through `τ_{H,C}(s) = (I_d ⊗ Φ(s)ᵀ) H (I_d ⊗ Φ(s)) + C`, with `(H, C)`
//! trained by projected stochastic subgradient descent on a surrogate loss.

pub mod conditioner;
pub mod data;
pub mod env;
pub mod error;
pub mod harness;
pub mod inner;
pub mod linalg;
pub mod loss;
pub mod meta;
pub mod oracles;
#[doc(hidden)]
pub mod testing;

pub use conditioner::{Conditioner, FeatureMap};
pub use data::LabeledDataset;
pub use env::{EnvConfig, EnvKind, MetaSplit, TaskInstance};
pub use error::{Error, Result};
pub use harness::{Method, MetricsRecord, RunConfig};
pub use inner::{BatchOptions, InnerMode, InnerSolution};
pub use linalg::{EigDecomp, SymMatrix};
pub use loss::Loss;
pub use meta::{Checkpoint, MetaConfig, MetaGradient, MetaState};
