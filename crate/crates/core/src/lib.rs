//! Date-aware document retrieval trained with a smooth-nDCG ranking objective.
//!
//! Documents enter as precomputed feature vectors with optional year labels.
//! A small projection model maps them onto the unit sphere so that cosine
//! similarity orders documents by date proximity. The trained embedding
//! supports ranked retrieval, weighted k-NN year estimation, and a 2-D view
//! of per-year cluster centers. A relevance matrix over year pairs grades
//! every (query, item) pair and can be edited to steer retraining.
//!
//! Modules:
//! - [`math`]: relevance functions, smooth-nDCG and its gradient, exact metrics
//! - [`relevance`]: the year × year relevance matrix
//! - [`model`]: projection model, batch loss, training loop
//! - [`index`]: exhaustive cosine index and year estimation
//! - [`pca`]: two-component projection
//! - [`datastore`]: dataset files, synthetic data, splits, feedback journal
//! - [`pipeline`]: evaluation and projection compositions

pub mod datastore;
pub mod error;
pub mod index;
pub mod math;
pub mod model;
pub mod pca;
pub mod pipeline;
pub mod relevance;

pub use datastore::{DocumentRecord, Split, SyntheticSpec};
pub use error::{Error, Result};
pub use index::{IndexedDocument, RankedHit, RetrievalIndex, Source, Weighting, YearEstimate};
pub use math::{LossConfig, RelevanceSpec, ScoredList};
pub use model::{
    Activation, EvalSnapshot, Optimizer, ProjectionModel, Trainer, TrainingConfig, TrainingReport,
};
pub use relevance::{Provenance, RelevanceMatrix};
