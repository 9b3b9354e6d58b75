//! Gradient-descent training of the toy scorer with dev-based checkpoint
//! selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::eval::{micro_f1, EvalError};
use crate::loss::{combined_loss, rank_loss, select_negatives, LossError};
use crate::model::{Instance, LabelSpace, LossConfig};
use crate::scorer::{Features, ToyGrad, ToyScorerParams};
use crate::verbalizer::Hypotheses;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrain,
    #[error("loss diverged (non-finite) at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("instance {0}: gold label not in label space")]
    UnknownGold(String),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Which objective drives the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// InfoNCE plus λ-weighted abstention calibration.
    Combined,
    /// Pairwise hinge of the gold label over the other label, for
    /// two-label spaces (the abstention detector).
    BinaryRank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub eval_every: usize,
    pub step_size: f64,
    /// Instances per gradient step; each contributes all its candidates.
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            eval_every: 10,
            step_size: 1e-3,
            batch_size: 1,
            seed: 0,
            loss: LossConfig::default(),
            objective: Objective::Combined,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.eval_every == 0 {
            return Err(TrainError::BadConfig("eval_every must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(TrainError::BadConfig(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        self.loss
            .validate()
            .map_err(|e| TrainError::BadConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ToyScorerParams,
    /// Epoch whose parameters were kept (0 = initial parameters).
    pub best_epoch: usize,
    pub best_dev_f1: Option<f64>,
    pub history: Vec<EpochRecord>,
}

/// Pre-hashed candidate features for a set of instances.
pub(crate) struct Encoded {
    pub golds: Vec<usize>,
    pub features: Vec<Vec<Features>>,
}

pub(crate) fn encode(
    data: &[Instance],
    space: &LabelSpace,
    hyps: &Hypotheses,
    hash_dim: usize,
) -> Result<Encoded, TrainError> {
    let mut golds = Vec::with_capacity(data.len());
    let mut features = Vec::with_capacity(data.len());
    for inst in data {
        let g = space
            .index_of(&inst.gold.label_id)
            .ok_or_else(|| TrainError::UnknownGold(inst.id.clone()))?;
        golds.push(g);
        features.push(
            (0..space.len())
                .map(|i| crate::scorer::featurize(&inst.premise, hyps.get(i), hash_dim))
                .collect(),
        );
    }
    Ok(Encoded { golds, features })
}

/// Per-instance objective value and score gradient.
pub fn instance_loss(
    objective: Objective,
    scores: &[f64],
    gold: usize,
    negatives: &[usize],
    abstain: Option<usize>,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>), LossError> {
    match objective {
        Objective::Combined => {
            let lv = combined_loss(scores, gold, negatives, abstain, cfg)?;
            Ok((lv.total, lv.dscore))
        }
        Objective::BinaryRank => {
            let mut grad = vec![0.0; scores.len()];
            let mut value = 0.0;
            for &other in negatives {
                let (v, d1, d2) = rank_loss(scores[gold], scores[other], cfg.margin);
                value += v;
                grad[gold] += d1;
                grad[other] += d2;
            }
            Ok((value, grad))
        }
    }
}

pub(crate) fn predict_encoded(params: &ToyScorerParams, enc: &Encoded) -> Vec<usize> {
    enc.features
        .iter()
        .map(|cands| {
            let scores: Vec<f64> = cands
                .iter()
                .map(|f| params.forward_features(f.clone()).0)
                .collect();
            crate::inference::argmax(&scores)
        })
        .collect()
}

/// Trains `params` on `train`, evaluating dev micro-F1 every
/// `eval_every` epochs (and at the last epoch). Returns the parameters of
/// the best dev evaluation; ties keep the earlier epoch. With an empty
/// dev set the last epoch wins.
pub fn train(
    train: &[Instance],
    dev: &[Instance],
    space: &LabelSpace,
    hyps: &Hypotheses,
    params: ToyScorerParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            params,
            best_epoch: 0,
            best_dev_f1: None,
            history: Vec::new(),
        });
    }
    let enc_train = encode(train, space, hyps, params.hash_dim)?;
    let enc_dev = encode(dev, space, hyps, params.hash_dim)?;
    let abstain = space.abstain_index();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut params = params;
    let mut best: Option<(f64, usize, ToyScorerParams)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<ToyGrad> = Vec::with_capacity(batch.len() * space.len());
            for &i in batch {
                let gold = enc_train.golds[i];
                let (scores, caches): (Vec<f64>, Vec<_>) = enc_train.features[i]
                    .iter()
                    .map(|f| params.forward_features(f.clone()))
                    .unzip();
                let negatives = select_negatives(space.len(), gold, cfg.loss.negatives, &mut rng);
                let (value, dscore) =
                    instance_loss(cfg.objective, &scores, gold, &negatives, abstain, &cfg.loss)?;
                if !value.is_finite() {
                    return Err(TrainError::DivergedLoss { epoch });
                }
                loss_sum += value;
                for (cache, d) in caches.iter().zip(&dscore) {
                    if *d != 0.0 {
                        grads.push(params.backward(cache, *d));
                    }
                }
            }
            let step = cfg.step_size / batch.len() as f64;
            for g in &grads {
                params.apply(g, step);
            }
        }
        if !params.is_finite() {
            return Err(TrainError::DivergedLoss { epoch });
        }
        let evaluate = !dev.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        let dev_f1 = if evaluate {
            let preds = predict_encoded(&params, &enc_dev);
            let f1 = micro_f1(&enc_dev.golds, &preds, space)?.micro_f1;
            if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
                best = Some((f1, epoch, params.clone()));
            }
            Some(f1)
        } else {
            None
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            dev_f1,
        });
    }

    Ok(match best {
        Some((f1, epoch, p)) => TrainOutcome {
            params: p,
            best_epoch: epoch,
            best_dev_f1: Some(f1),
            history,
        },
        None => TrainOutcome {
            params,
            best_epoch: cfg.epochs,
            best_dev_f1: None,
            history,
        },
    })
}

/// Writes `epoch TAB train_loss TAB dev_f1` rows (dev_f1 blank when not
/// evaluated).
pub fn write_history<W: std::io::Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch\ttrain_loss\tdev_f1")?;
    for r in history {
        match r.dev_f1 {
            Some(f) => writeln!(w, "{}\t{}\t{}", r.epoch, r.train_loss, f)?,
            None => writeln!(w, "{}\t{}\t", r.epoch, r.train_loss)?,
        }
    }
    Ok(())
}
