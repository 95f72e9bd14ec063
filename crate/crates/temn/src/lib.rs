//! A point-of-interest recommender that fuses a memory-augmented metric
//! scorer with a temporal topic model and a geographical score, trained
//! jointly by pairwise ranking.
//!
//! The crate covers the full pipeline: check-in ingestion and splitting
//! ([`corpus`]), a synthetic generator with planted structure
//! ([`synthgen`]), collapsed Gibbs topic inference ([`tlda`]), the
//! memory-network scorer ([`memnet`]), the topic-fusion layer
//! ([`fusion`]), geographic scoring ([`geo`]), joint mini-batch SGD
//! training and model persistence ([`trainer`], [`model`]), the sampled
//! top-N evaluation protocol ([`eval`]) and text exports for qualitative
//! inspection ([`inspect`]).

pub mod corpus;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geo;
pub mod inspect;
pub mod linalg;
pub mod memnet;
pub mod model;
pub mod sampling;
pub mod synthgen;
pub mod tlda;
pub mod trainer;

pub use error::{Error, Result};
