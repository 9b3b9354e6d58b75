use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use super::{Scorer, ScorerError};
use crate::verbalizer::NliQuery;

/// Lookup-table scorer keyed by `(premise, hypothesis)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockScorer {
    table: HashMap<(String, String), f64>,
    default: Option<f64>,
}

impl MockScorer {
    pub fn new(default: Option<f64>) -> Self {
        Self {
            table: HashMap::new(),
            default,
        }
    }

    pub fn insert(&mut self, premise: &str, hypothesis: &str, score: f64) {
        self.table
            .insert((premise.to_string(), hypothesis.to_string()), score);
    }

    pub fn with_default(mut self, default: Option<f64>) -> Self {
        self.default = default;
        self
    }

    /// Reads `premise TAB hypothesis TAB score` lines.
    pub fn read<R: BufRead>(reader: R, default: Option<f64>) -> Result<Self, ScorerError> {
        let mut s = Self::new(default);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [p, h, v] = cols.as_slice() else {
                return Err(ScorerError::Table {
                    line: i + 1,
                    msg: format!("expected 3 columns, found {}", cols.len()),
                });
            };
            let v: f64 = v.trim().parse().map_err(|_| ScorerError::Table {
                line: i + 1,
                msg: format!("bad score {v:?}"),
            })?;
            if !v.is_finite() {
                return Err(ScorerError::Table {
                    line: i + 1,
                    msg: "score must be finite".into(),
                });
            }
            s.insert(p, h, v);
        }
        Ok(s)
    }

    pub fn load(path: &Path, default: Option<f64>) -> Result<Self, ScorerError> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f), default)
    }

    pub fn score(&self, q: &NliQuery) -> Result<f64, ScorerError> {
        self.table
            .get(&(q.premise.clone(), q.hypothesis.clone()))
            .copied()
            .or(self.default)
            .ok_or_else(|| ScorerError::MissingEntry {
                premise: q.premise.clone(),
                hypothesis: q.hypothesis.clone(),
            })
    }
}

impl Scorer for MockScorer {
    fn score_batch(&self, queries: &[NliQuery]) -> Result<Vec<f64>, ScorerError> {
        queries.iter().map(|q| self.score(q)).collect()
    }
}
