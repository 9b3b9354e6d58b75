//! Relation extraction as entailment ranking.
//!
//! Every relation label is verbalized into a hypothesis; a scorer rates how
//! strongly the masked sentence entails each one, and the highest-scoring
//! label wins. Training combines a temperature-scaled contrastive loss with
//! a hinge term that calibrates the abstention (no-relation) label.

pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod inference;
pub mod ingest;
pub mod loss;
pub mod model;
pub mod scorer;
pub mod synth;
mod templates;
pub mod trainer;
pub mod verbalizer;

pub use model::{
    DatasetSpec, Instance, LabelSpace, LossConfig, ModelError, Negatives, Prediction,
    RelationLabel, ScoreVector,
};

/// Umbrella error for end-to-end runs.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Verbalize(#[from] verbalizer::VerbalizeError),
    #[error(transparent)]
    Scorer(#[from] scorer::ScorerError),
    #[error(transparent)]
    Loss(#[from] loss::LossError),
    #[error(transparent)]
    Train(#[from] trainer::TrainError),
    #[error(transparent)]
    Inference(#[from] inference::InferenceError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
