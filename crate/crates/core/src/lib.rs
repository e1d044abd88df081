//! Bilinear-family knowledge-graph embeddings.
//!
//! The crate covers five link-prediction models (RESCAL, DISTMULT, HolE,
//! ComplEx, TransE), margin-based training with Adagrad, filtered entity
//! ranking and triple classification, a relation-level stacking ensemble, and
//! executable constructions relating the expressiveness of the models
//! (liftings into RESCAL, universality and consistency constructions, and
//! obstruction checks).

pub mod cli;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod kb;
pub mod models;
pub mod ranking;
pub mod synthetic;
pub mod training;
pub mod transforms;

pub use error::{KgError, Result};
pub use kb::{KnowledgeBase, RelationCategory, Triple};
pub use models::{Model, ModelKind, Scorer};
