//! Prediction, the explicit abstention detector (EAD), and the heuristics
//! that combine the two.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::eval::{micro_f1, EvalError};
use crate::model::{DatasetSpec, Instance, LabelSpace, ModelError, Prediction, ScoreVector};
use crate::scorer::{score_parallel, Scorer, ScorerError, ToyScorerParams};
use crate::trainer::{train, Objective, TrainConfig, TrainError, TrainOutcome};
use crate::verbalizer::{
    ead_space, Hypotheses, TemplateBank, VerbalizeError, EAD_HAS_RELATION, EAD_NO_RELATION,
};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Verbalize(#[from] VerbalizeError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("instance {instance}: missing {what} scores")]
    MissingScores {
        instance: String,
        what: &'static str,
    },
    #[error("dev set is empty; cannot select a threshold")]
    EmptyDev,
    #[error("label space {0} has no abstention label")]
    NoAbstainLabel(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("unknown heuristic {0:?}")]
    UnknownHeuristic(String),
    #[error("predictions line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Index of the highest score; ties go to the earliest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Highest-scoring non-⊥ label; ties go to the earliest.
fn argmax_relation(space: &LabelSpace, scores: &[f64]) -> usize {
    let mut best: Option<usize> = None;
    for i in space.relation_indices() {
        if best.is_none_or(|b| scores[i] > scores[b]) {
            best = Some(i);
        }
    }
    best.unwrap_or_else(|| argmax(scores))
}

/// Scores every candidate of every instance. Rows align with `data`,
/// columns with `space`.
pub fn score_instances<S: Scorer + ?Sized>(
    scorer: &S,
    data: &[Instance],
    space: &LabelSpace,
    hyps: &Hypotheses,
    jobs: usize,
) -> Result<Vec<ScoreVector>, InferenceError> {
    let queries: Vec<_> = data.iter().flat_map(|i| hyps.queries(i, space)).collect();
    let flat = score_parallel(scorer, &queries, jobs)?;
    if flat.len() != queries.len() {
        return Err(InferenceError::LengthMismatch(format!(
            "{} scores for {} queries",
            flat.len(),
            queries.len()
        )));
    }
    data.iter()
        .zip(flat.chunks(space.len().max(1)))
        .map(|(inst, s)| Ok(ScoreVector::new(inst.id.clone(), space, s.to_vec())?))
        .collect()
}

pub fn prediction_from_scores(space: &LabelSpace, scores: ScoreVector) -> Prediction {
    let idx = argmax(scores.scores());
    Prediction {
        instance_id: scores.instance_id.clone(),
        predicted: space.label(idx).clone(),
        scores,
    }
}

/// Argmax prediction for each instance.
pub fn predict<S: Scorer + ?Sized>(
    scorer: &S,
    data: &[Instance],
    space: &LabelSpace,
    hyps: &Hypotheses,
    jobs: usize,
) -> Result<Vec<Prediction>, InferenceError> {
    Ok(score_instances(scorer, data, space, hyps, jobs)?
        .into_iter()
        .map(|s| prediction_from_scores(space, s))
        .collect())
}

/// Maps gold labels onto the detector space: ⊥ becomes no-relation,
/// every relation becomes has-relation.
pub fn ead_relabel(data: &[Instance], spec: &DatasetSpec) -> Result<Vec<Instance>, InferenceError> {
    if !spec.space.has_abstain() {
        return Err(InferenceError::NoAbstainLabel(spec.id().to_string()));
    }
    let space = ead_space(spec);
    Ok(data
        .iter()
        .map(|i| {
            let target = if i.gold.is_abstain {
                EAD_NO_RELATION
            } else {
                EAD_HAS_RELATION
            };
            Instance::new(
                i.id.clone(),
                i.premise.clone(),
                space.get(target).unwrap().clone(),
            )
        })
        .collect())
}

/// Trained detector with its binary space and hypotheses.
#[derive(Debug, Clone)]
pub struct Ead {
    pub space: LabelSpace,
    pub hypotheses: Hypotheses,
    pub outcome: TrainOutcome,
}

impl Ead {
    pub fn query_space(
        spec: &DatasetSpec,
        bank: &TemplateBank,
    ) -> Result<(LabelSpace, Hypotheses), InferenceError> {
        if !spec.space.has_abstain() {
            return Err(InferenceError::NoAbstainLabel(spec.id().to_string()));
        }
        let space = ead_space(spec);
        let ead_bank = bank.abstention_detector(spec)?;
        let hyps = Hypotheses::new(&space, &ead_bank, None)?;
        Ok((space, hyps))
    }

    pub fn params(&self) -> &ToyScorerParams {
        &self.outcome.params
    }

    /// `(s(no-relation), s(has-relation))` per instance.
    pub fn detector_scores<S: Scorer + ?Sized>(
        &self,
        scorer: &S,
        data: &[Instance],
        jobs: usize,
    ) -> Result<Vec<DetectorScores>, InferenceError> {
        detector_scores(scorer, data, &self.space, &self.hypotheses, jobs)
    }
}

pub fn detector_scores<S: Scorer + ?Sized>(
    scorer: &S,
    data: &[Instance],
    space: &LabelSpace,
    hyps: &Hypotheses,
    jobs: usize,
) -> Result<Vec<DetectorScores>, InferenceError> {
    let no = space.index_of(EAD_NO_RELATION).expect("detector space");
    let has = space.index_of(EAD_HAS_RELATION).expect("detector space");
    Ok(score_instances(scorer, data, space, hyps, jobs)?
        .iter()
        .map(|s| DetectorScores {
            no_relation: s.scores()[no],
            has_relation: s.scores()[has],
        })
        .collect())
}

/// Trains the detector with the pairwise rank objective only.
pub fn ead_train(
    train_data: &[Instance],
    dev: &[Instance],
    spec: &DatasetSpec,
    bank: &TemplateBank,
    params: ToyScorerParams,
    cfg: &TrainConfig,
) -> Result<Ead, InferenceError> {
    let (space, hypotheses) = Ead::query_space(spec, bank)?;
    let cfg = TrainConfig {
        objective: Objective::BinaryRank,
        ..cfg.clone()
    };
    let outcome = train(
        &ead_relabel(train_data, spec)?,
        &ead_relabel(dev, spec)?,
        &space,
        &hypotheses,
        params,
        &cfg,
    )?;
    Ok(Ead {
        space,
        hypotheses,
        outcome,
    })
}

/// Two-way detector output. The detector abstains when
/// `no_relation - has_relation` exceeds the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorScores {
    pub no_relation: f64,
    pub has_relation: f64,
}

impl DetectorScores {
    pub fn diff(&self) -> f64 {
        self.no_relation - self.has_relation
    }

    pub fn abstains(&self, threshold: f64) -> bool {
        self.diff() > threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Heuristic {
    Simple,
    Voting,
    Confident,
    SuperConfident,
    /// Simple, with the decision taken from an external binary
    /// classifier's logits instead of the NLI detector.
    Classification,
}

impl Heuristic {
    pub const ALL: [Heuristic; 5] = [
        Heuristic::Simple,
        Heuristic::Voting,
        Heuristic::Confident,
        Heuristic::SuperConfident,
        Heuristic::Classification,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Heuristic::Simple => "simple",
            Heuristic::Voting => "voting",
            Heuristic::Confident => "confident",
            Heuristic::SuperConfident => "super-confident",
            Heuristic::Classification => "classification",
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Heuristic {
    type Err = InferenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Heuristic::ALL
            .into_iter()
            .find(|h| h.as_str() == s)
            .ok_or_else(|| InferenceError::UnknownHeuristic(s.to_string()))
    }
}

/// Everything the heuristics may look at for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleInput<'a> {
    pub instance_id: &'a str,
    /// Main model scores, aligned with the label space.
    pub ranker: &'a [f64],
    pub ead: Option<DetectorScores>,
    pub classifier: Option<DetectorScores>,
}

impl EnsembleInput<'_> {
    fn detector(&self, heuristic: Heuristic) -> Result<DetectorScores, InferenceError> {
        let (d, what) = match heuristic {
            Heuristic::Classification => (self.classifier, "classifier"),
            _ => (self.ead, "detector"),
        };
        d.ok_or_else(|| InferenceError::MissingScores {
            instance: self.instance_id.to_string(),
            what,
        })
    }
}

/// Final label index for one instance.
pub fn ensemble(
    space: &LabelSpace,
    input: &EnsembleInput<'_>,
    threshold: f64,
    heuristic: Heuristic,
) -> Result<usize, InferenceError> {
    let abstain = space
        .abstain_index()
        .ok_or_else(|| InferenceError::NoAbstainLabel(space.dataset_id().to_string()))?;
    if input.ranker.len() != space.len() {
        return Err(InferenceError::LengthMismatch(format!(
            "instance {}: {} scores for {} labels",
            input.instance_id,
            input.ranker.len(),
            space.len()
        )));
    }
    let det = input.detector(heuristic)?;
    let abstains = det.abstains(threshold);
    let ranker_pred = argmax(input.ranker);
    let ranker_abstain = input.ranker[abstain];
    Ok(match heuristic {
        Heuristic::Simple | Heuristic::Classification => {
            if abstains {
                abstain
            } else {
                ranker_pred
            }
        }
        Heuristic::Voting => {
            if abstains && ranker_pred == abstain {
                abstain
            } else {
                argmax_relation(space, input.ranker)
            }
        }
        Heuristic::Confident => {
            if abstains && det.no_relation > ranker_abstain {
                abstain
            } else {
                ranker_pred
            }
        }
        Heuristic::SuperConfident => {
            if abstains {
                abstain
            } else if det.no_relation > ranker_abstain {
                argmax_relation(space, input.ranker)
            } else {
                ranker_pred
            }
        }
    })
}

pub fn ensemble_all(
    space: &LabelSpace,
    inputs: &[EnsembleInput<'_>],
    threshold: f64,
    heuristic: Heuristic,
) -> Result<Vec<usize>, InferenceError> {
    inputs
        .iter()
        .map(|i| ensemble(space, i, threshold, heuristic))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub threshold: f64,
    pub dev_f1: f64,
    /// Every candidate threshold with its dev micro-F1, ascending.
    pub curve: Vec<(f64, f64)>,
}

/// Picks the threshold among the observed dev differences that maximizes
/// dev micro-F1 of the ensemble. Ties go to the smallest threshold.
pub fn sweep_threshold(
    space: &LabelSpace,
    inputs: &[EnsembleInput<'_>],
    golds: &[usize],
    heuristic: Heuristic,
) -> Result<SweepResult, InferenceError> {
    if inputs.is_empty() {
        return Err(InferenceError::EmptyDev);
    }
    if inputs.len() != golds.len() {
        return Err(InferenceError::LengthMismatch(format!(
            "{} inputs for {} golds",
            inputs.len(),
            golds.len()
        )));
    }
    let mut candidates = inputs
        .iter()
        .map(|i| Ok(i.detector(heuristic)?.diff()))
        .collect::<Result<Vec<f64>, InferenceError>>()?;
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut curve = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, f64)> = None;
    for t in candidates {
        let preds = ensemble_all(space, inputs, t, heuristic)?;
        let f1 = micro_f1(golds, &preds, space)?.micro_f1;
        curve.push((t, f1));
        if best.is_none_or(|(_, b)| f1 > b) {
            best = Some((t, f1));
        }
    }
    let (threshold, dev_f1) = best.expect("non-empty candidates");
    Ok(SweepResult {
        threshold,
        dev_f1,
        curve,
    })
}

/// Writes `id TAB predicted TAB <score per label>` with a header naming
/// the labels.
pub fn write_predictions<W: Write>(
    mut w: W,
    space: &LabelSpace,
    preds: &[Prediction],
) -> std::io::Result<()> {
    write!(w, "id\tpredicted")?;
    for l in space.labels() {
        write!(w, "\t{}", l.label_id)?;
    }
    writeln!(w)?;
    for p in preds {
        write!(w, "{}\t{}", p.instance_id, p.predicted.label_id)?;
        for s in p.scores.scores() {
            write!(w, "\t{s}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Reads a file written by [`write_predictions`]. Score columns are matched
/// by header name, so their order need not follow the space.
pub fn read_predictions<R: BufRead>(
    reader: R,
    space: &LabelSpace,
) -> Result<Vec<Prediction>, InferenceError> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.ok_or(InferenceError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
    if cols.len() < 2 || cols[0] != "id" || cols[1] != "predicted" {
        return Err(InferenceError::Parse {
            line: 1,
            msg: "header must start with id\\tpredicted".into(),
        });
    }
    let labels: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != labels.len() + 2 {
            return Err(InferenceError::Parse {
                line: lineno,
                msg: format!("expected {} columns, found {}", labels.len() + 2, f.len()),
            });
        }
        let predicted = space
            .get(f[1])
            .ok_or_else(|| InferenceError::Parse {
                line: lineno,
                msg: format!("unknown label {:?}", f[1]),
            })?
            .clone();
        let mut pairs = Vec::with_capacity(labels.len());
        for (l, v) in labels.iter().zip(&f[2..]) {
            let v: f64 = v.parse().map_err(|_| InferenceError::Parse {
                line: lineno,
                msg: format!("bad score {v:?}"),
            })?;
            pairs.push((l.as_str(), v));
        }
        let scores = ScoreVector::from_pairs(f[0], space, pairs)?;
        out.push(Prediction {
            instance_id: f[0].to_string(),
            predicted,
            scores,
        });
    }
    Ok(out)
}
