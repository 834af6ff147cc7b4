//! Model-annotation census of a labeled image dataset.
//!
//! The crate ingests per-image annotations (faces with age and gender
//! estimates, five-way content-classifier softmaxes, top-5 predictions,
//! label embeddings) and turns them into class-level audit tables:
//!
//! - [`census`]: count/age/gender metrics per class and cross-model agreement
//! - [`nsfw`]: per-class content scores, affinity-propagation clustering and
//!   the survey shortlist
//! - [`semantics`]: 2-D semantic coordinates for class labels
//! - [`bias`]: co-occurrence gender-bias breakdowns
//! - [`screening`]: label vocabulary screening and watchlists
//! - [`accuracy`]: class-wise top-k accuracy and the human-delta test
//! - [`survey`]: the hand-survey queue, consensus and event log
//! - [`card`]: the rendered audit card
//!
//! [`ingest`] holds the file formats and [`stats`] the numerical kernel.

pub mod ingest;
pub mod stats;
pub mod census;
pub mod nsfw;
pub mod semantics;
pub mod accuracy;
pub mod bias;
pub mod card;
pub mod screening;
pub mod survey;
