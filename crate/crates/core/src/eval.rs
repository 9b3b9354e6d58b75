//! Micro-F1 over non-abstinent instances and report formatting.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::model::{Instance, LabelSpace, Prediction};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{golds} golds but {preds} predictions")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("label index {0} outside the label space")]
    IndexOutOfRange(usize),
    #[error("prediction {position}: id {found:?} does not match instance {expected:?}")]
    IdMismatch {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("instance {0}: label not in the label space")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelCounts {
    pub label: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_instances: usize,
    pub true_positives: usize,
    pub predicted_relations: usize,
    pub gold_relations: usize,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub per_label: Vec<LabelCounts>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro precision, recall and F1 counting only non-⊥ predictions and
/// non-⊥ golds. Labels are indices into `space`.
pub fn micro_f1(
    golds: &[usize],
    preds: &[usize],
    space: &LabelSpace,
) -> Result<EvalReport, EvalError> {
    if golds.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    let n = space.len();
    let abstain = space.abstain_index();
    let mut per_label: Vec<LabelCounts> = space
        .labels()
        .iter()
        .map(|l| LabelCounts {
            label: l.label_id.clone(),
            tp: 0,
            fp: 0,
            fn_: 0,
            support: 0,
        })
        .collect();
    let (mut tp, mut pred_rel, mut gold_rel) = (0, 0, 0);
    for (&g, &p) in golds.iter().zip(preds) {
        if g >= n {
            return Err(EvalError::IndexOutOfRange(g));
        }
        if p >= n {
            return Err(EvalError::IndexOutOfRange(p));
        }
        per_label[g].support += 1;
        if g == p {
            per_label[g].tp += 1;
        } else {
            per_label[p].fp += 1;
            per_label[g].fn_ += 1;
        }
        let g_rel = Some(g) != abstain;
        let p_rel = Some(p) != abstain;
        gold_rel += usize::from(g_rel);
        pred_rel += usize::from(p_rel);
        tp += usize::from(g_rel && g == p);
    }
    let precision = ratio(tp, pred_rel);
    let recall = ratio(tp, gold_rel);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(EvalReport {
        n_instances: golds.len(),
        true_positives: tp,
        predicted_relations: pred_rel,
        gold_relations: gold_rel,
        micro_precision: precision,
        micro_recall: recall,
        micro_f1: f1,
        per_label,
    })
}

/// Scores predictions against instances, matched by position; ids must
/// agree.
pub fn evaluate_predictions(
    data: &[Instance],
    preds: &[Prediction],
    space: &LabelSpace,
) -> Result<EvalReport, EvalError> {
    if data.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            golds: data.len(),
            preds: preds.len(),
        });
    }
    let mut golds = Vec::with_capacity(data.len());
    let mut pidx = Vec::with_capacity(data.len());
    for (i, (inst, p)) in data.iter().zip(preds).enumerate() {
        if inst.id != p.instance_id {
            return Err(EvalError::IdMismatch {
                position: i,
                expected: inst.id.clone(),
                found: p.instance_id.clone(),
            });
        }
        golds.push(
            space
                .index_of(&inst.gold.label_id)
                .ok_or_else(|| EvalError::UnknownLabel(inst.id.clone()))?,
        );
        pidx.push(
            space
                .index_of(&p.predicted.label_id)
                .ok_or_else(|| EvalError::UnknownLabel(p.instance_id.clone()))?,
        );
    }
    micro_f1(&golds, &pidx, space)
}

impl EvalReport {
    /// Flat `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_instances={}", self.n_instances);
        let _ = writeln!(s, "true_positives={}", self.true_positives);
        let _ = writeln!(s, "predicted_relations={}", self.predicted_relations);
        let _ = writeln!(s, "gold_relations={}", self.gold_relations);
        let _ = writeln!(s, "micro_precision={:.6}", self.micro_precision);
        let _ = writeln!(s, "micro_recall={:.6}", self.micro_recall);
        let _ = writeln!(s, "micro_f1={:.6}", self.micro_f1);
        for c in &self.per_label {
            let _ = writeln!(
                s,
                "label.{}.tp={}\nlabel.{}.fp={}\nlabel.{}.fn={}\nlabel.{}.support={}",
                c.label, c.tp, c.label, c.fp, c.label, c.fn_, c.label, c.support
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> LabelSpace {
        LabelSpace::new("t", &["none", "A", "B"], Some("none")).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let r = micro_f1(&[1, 2], &[1, 2], &space()).unwrap();
        assert_eq!(r.micro_f1, 1.0);
    }

    #[test]
    fn mixed_example() {
        // golds [A, ⊥, B], preds [A, A, ⊥]
        let r = micro_f1(&[1, 0, 2], &[1, 1, 0], &space()).unwrap();
        assert_eq!(
            (r.micro_precision, r.micro_recall, r.micro_f1),
            (0.5, 0.5, 0.5)
        );
        assert_eq!(r.per_label[1].tp, 1);
        assert_eq!(r.per_label[1].fp, 1);
        assert_eq!(r.per_label[2].fn_, 1);
    }

    #[test]
    fn all_abstain_predictions_score_zero() {
        let r = micro_f1(&[1, 2, 0], &[0, 0, 0], &space()).unwrap();
        assert_eq!(r.micro_f1, 0.0);
        assert_eq!(r.micro_precision, 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert_eq!(
            micro_f1(&[1], &[], &space()),
            Err(EvalError::LengthMismatch { golds: 1, preds: 0 })
        );
    }

    #[test]
    fn text_and_json_reports() {
        let r = micro_f1(&[1, 0, 2], &[1, 1, 0], &space()).unwrap();
        let t = r.to_text();
        assert!(t.contains("micro_f1=0.500000\n"));
        assert!(t.contains("label.A.fp=1\n"));
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["micro_f1"], 0.5);
        assert_eq!(v["per_label"][2]["fn"], 1);
    }
}
