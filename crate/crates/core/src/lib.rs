//! Video–text matching model for zero-shot action recognition.
//!
//! A video is reduced to a fixed vector (top objects, skeleton, mean visual
//! feature), each class is described by weighted text features, and a small
//! network scores how well a text describes a video. Class scores are weighted
//! means of those degrees and can be used alone or to correct another
//! classifier's scores.

pub mod api;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod features;
mod io;
pub mod net;
pub mod pairs;
pub mod report;
pub mod scoring;
pub mod store;

pub use dataset::{Dataset, Split};
pub use embedding::{SentenceEmbedder, TextEncoder};
pub use error::{Diagnostic, Error, ErrorKind, Result};
pub use features::VideoFeature;
pub use net::{MatchDegree, MatchingNetwork, NetDims, TrainConfig, TrainPreset};
pub use scoring::{AnnotatedFeature, AnnotationSet, ClassScoreBreakdown, FeatureKind, ScoreMode};
pub use store::Project;
