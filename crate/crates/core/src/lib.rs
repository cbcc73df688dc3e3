//! Semantic coherence of dialogues measured against background knowledge.
//!
//! The pipeline ingests dialogues, links words to knowledge-graph entities,
//! induces the subgraph connecting those entities, builds adversarial
//! negative samples and trains a convolutional classifier that scores how
//! coherent a word or entity sequence is.

pub mod analysis;
pub mod annotator;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod kg;
pub mod net;
pub mod paths;
pub mod sampler;
pub mod synthetic;

pub use error::{Error, ErrorCategory, Result};
