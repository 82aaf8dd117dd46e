//! Building blocks for an e-commerce instruction-tuning corpus: ingestion,
//! atomic task derivation, pseudo-labelling, instruction rendering, quality
//! filtering, train/test splitting and evaluation.

pub mod corpus;
pub mod eval;
pub mod forge;
pub mod ingest;
pub mod ndjson;
pub mod pipeline;
pub mod pseudo;
pub mod quality;
pub mod render;
pub mod scalar;
pub mod seed;
pub mod split;
pub mod stats;

pub use corpus::{
    AnnotationKind, Annotations, InstructionRecord, LabelSource, Language, Paradigm, RawSample, SpanAnnotation,
    TaskSpec,
};
pub use eval::{PredictionRecord, TokenizerMode};
pub use scalar::Scalar;

/// Default score type used by reports.
pub type Score = f64;
/// Precision/recall/F1 in the default score type.
pub type PrfScores = eval::Prf<Score>;
/// Exact precision/recall/F1, for oracles.
pub type ExactPrf = eval::Prf<num_rational::Ratio<i64>>;
/// Exact rational score.
pub type ExactScore = num_rational::Ratio<i64>;
