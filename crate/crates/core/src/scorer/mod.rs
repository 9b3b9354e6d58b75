//! Entailment scorers. Every backend maps a batch of premise/hypothesis
//! queries to one entailment logit each, in input order.

mod external;
mod mock;
mod toy;

use std::path::PathBuf;

use thiserror::Error;

pub use external::{Endpoint, ExternalScorer, ScoreRequest, ScoreResponse};
pub use mock::MockScorer;
pub use toy::{featurize, Features, ToyCache, ToyGrad, ToyScorerParams, CHECKPOINT_VERSION};

use crate::verbalizer::NliQuery;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("no score for premise {premise:?} / hypothesis {hypothesis:?}")]
    MissingEntry { premise: String, hypothesis: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("scoring adapter timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("response id mismatch: {0}")]
    IdMismatch(String),
    #[error("invalid scorer parameters: {0}")]
    BadParams(String),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("mock table line {line}: {msg}")]
    Table { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait Scorer: Send + Sync {
    /// One entailment logit per query, same order as `queries`.
    fn score_batch(&self, queries: &[NliQuery]) -> Result<Vec<f64>, ScorerError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score_batch(&self, queries: &[NliQuery]) -> Result<Vec<f64>, ScorerError> {
        (**self).score_batch(queries)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score_batch(&self, queries: &[NliQuery]) -> Result<Vec<f64>, ScorerError> {
        (**self).score_batch(queries)
    }
}

/// Splits `queries` into `jobs` contiguous chunks scored on scoped
/// threads; results are concatenated in chunk order.
pub fn score_parallel<S: Scorer + ?Sized>(
    scorer: &S,
    queries: &[NliQuery],
    jobs: usize,
) -> Result<Vec<f64>, ScorerError> {
    let jobs = jobs.max(1);
    if jobs == 1 || queries.len() < 2 * jobs {
        return scorer.score_batch(queries);
    }
    let chunk = queries.len().div_ceil(jobs);
    let parts: Vec<Result<Vec<f64>, ScorerError>> = std::thread::scope(|s| {
        let handles: Vec<_> = queries
            .chunks(chunk)
            .map(|c| s.spawn(move || scorer.score_batch(c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scoring thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(queries.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
