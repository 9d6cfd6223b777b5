//! Semantic-faithfulness tooling for extractive QA models.

pub mod corpus;
pub mod error;
pub mod intervene;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod probe;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use corpus::{load_corpus, AnswerType, Corpus, Layout, QaItem, Record, SourceFormat, Span, Split, Variant};
pub use intervene::{DeletionSuite, InterventionRecord, NegationValidationReport, Verdict};
pub use manifest::RunManifest;
pub use metrics::{EvalReport, NegationReport};
pub use model::{ModelConfig, Predictor, QaModel};
pub use probe::{EmbeddingDump, SimilarityDistribution};
pub use synth::{PaItem, QuestionForm};
pub use training::{Regime, TrainConfig, TrainLog};
