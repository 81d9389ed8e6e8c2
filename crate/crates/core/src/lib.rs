//! Training-free ranking of pretraining documents by neuron-activated graph
//! (NAG) similarity to a small target set.
//!
//! The pipeline is: run a document through an extraction model, score every
//! projection neuron by the magnitude of its column contribution, keep the
//! top-K neurons per layer as the document's NAG, aggregate target NAGs into a
//! frequency profile, and rank candidates by their coverage of that profile.
//!
//! Data-parallel loops (extraction, pool scoring, distance matrices, analysis
//! sweeps) run on rayon when the `parallel` feature is enabled (default) and
//! fall back to plain iterators otherwise. See [`exec::Exec`].

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod extract;
pub mod impact;
pub mod io;
pub mod model;
pub mod nag;
pub mod selection;
pub mod similarity;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Exec;
pub use model::{LossEstimate, ModelSpec, ProjType, ProjectionRef, ToyModel};
pub use nag::{NagConfig, NagRecord};
pub use similarity::GroupProfile;
