//! Conversational critiquing over a user-item knowledge graph.
//!
//! The pipeline has three stages:
//!
//! 1. [`kg`] builds a user-item knowledge graph from ratings and item side
//!    facts (or from the planted-cluster generator in [`synthetic`]).
//! 2. [`embed`] trains SimplE embeddings with either the logistic or the
//!    Gaussian likelihood and ranks items for a user.
//! 3. [`critique`] runs critiquing sessions: a user critiques a knowledge
//!    graph fact, [`belief`] turns it into Gaussian evidence over item space
//!    and folds it into the user's belief in closed form, and the items are
//!    re-ranked. [`metrics`] scores and aggregates the resulting traces.

pub mod belief;
pub mod config;
pub mod critique;
pub mod dataset;
pub mod embed;
mod error;
pub mod kg;
pub mod metrics;
pub mod synthetic;

pub use error::{Error, Result};
pub use kg::{EntityId, KnowledgeGraph, RelationId, Triple};
