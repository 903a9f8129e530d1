//! Roundtable: multi-agent response refinement over a self-organizing
//! communication graph.
//!
//! A pool of agents answers the same query in parallel. Each round, the
//! responses are embedded, every agent is scored by how well its response
//! aligns with the pool consensus (a closed-form stand-in for its Shapley
//! value), and a directed acyclic communication graph is rebuilt so that
//! information flows from high-scoring agents downstream. The round's output
//! is the existing response nearest to the contribution-weighted centroid.
//!
//! The crate ships three agent backends and a verification toolkit:
//!
//! - [`agents`] — role-profiled agents over a probabilistic simulator or an
//!   HTTP chat-completion service;
//! - [`valuation`] — exact Shapley enumeration, the cosine approximation,
//!   and the residual-bound certificate relating them;
//! - [`topology`] — similarity-gated graph formation, cycle removal, and
//!   contribution-ordered scheduling;
//! - [`orchestrator`] — the multi-round collaboration loop with optional
//!   consensus-based early stopping;
//! - [`analysis`] — Monte Carlo and closed-form checks for the probabilistic
//!   model, plus experiment sweeps;
//! - [`manifest`] — run configuration, query loading, and transcript output.
//!
//! See the `examples/` directory for one runnable program per capability,
//! and the `roundtable` binary for the `run` / `verify` / `sweep` CLI.

pub mod agents;
pub mod analysis;
pub mod cli;
pub mod embedding;
mod error;
pub mod manifest;
mod net;
pub mod orchestrator;
pub mod rng;
#[doc(hidden)]
pub mod testsupport;
pub mod topology;
pub mod valuation;

pub use error::{Error, Result};
