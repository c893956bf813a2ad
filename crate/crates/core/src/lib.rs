//! Probabilistic logic queries over coordinate-based meta-analysis
//! databases.
//!
//! A CBMA dataset (study × term TF-IDF features and study × voxel reported
//! activations) is encoded as a small CP-Logic program whose queries, such as
//! `P[Activation(v) | TermAssociation(insula) ∧ TermAssociation(speech)]`,
//! are answered exactly by lifted inference. Closed-form estimators, a
//! possible-worlds oracle, a generative simulator and the statistics used to
//! evaluate forward-inference maps are included.

pub mod cbma;
pub mod dsl;
pub mod engine;
pub mod experiments;
pub mod lifted;
pub mod oracle;
pub mod probdb;
pub mod ra;
pub mod sim;
pub mod stats;
