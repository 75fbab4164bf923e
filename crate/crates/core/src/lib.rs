//! Corpus engine and benchmark harness for entity insertion: deciding where
//! in a source article a link to a target entity belongs.
//!
//! The pipeline runs
//! [`ingest`] (markup → articles and links) →
//! [`diff`] (added links, localized and classified) →
//! [`candidates`] (ranking examples) →
//! [`augment`] (training-time context removal) →
//! [`rank`] (baselines and external scorers) →
//! [`eval`] (Hits@k, MRR and aggregation).

pub mod augment;
pub mod candidates;
pub mod diff;
pub mod eval;
pub mod ids;
pub mod ingest;
pub mod model;
pub mod rank;
pub mod stats;
pub mod text;
