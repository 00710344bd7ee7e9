//! Simulation library for measuring how generated news items displace
//! human-written ones in a content-based news recommender.
//!
//! The pipeline: build a veracity-labeled corpus and user impressions
//! ([`corpus`]), embed text ([`textrep`]), train a neural recommender on a
//! small autodiff tape ([`tape`], [`recmodel`]), run staged contamination
//! experiments ([`phases`]), and report ranking metrics ([`metrics`]) plus
//! language-model perplexity diagnostics ([`ppl`]).

pub mod config;
pub mod corpus;
pub mod error;
pub mod fixture;
pub mod manifest;
pub mod metrics;
pub mod phases;
pub mod ppl;
pub mod recmodel;
pub mod rng;
pub mod tape;
pub mod textrep;

pub use error::{Error, Result};
