//! Training objectives over per-candidate scores, with analytic
//! gradients.
//!
//! All functions take the full score slice of one instance (label-space
//! order) and return gradients aligned with it; labels that do not take
//! part get a zero gradient.

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::model::{LossConfig, Negatives};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("gold index {gold} outside {len} candidate scores")]
    EmptyCandidates { gold: usize, len: usize },
    #[error("invalid negative set: {0}")]
    BadNegatives(String),
    #[error("label space has no abstention label")]
    NoAbstainLabel,
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub nce: f64,
    pub ac: f64,
    /// d total / d score, aligned with the score slice.
    pub dscore: Vec<f64>,
}

fn check_candidates(scores: &[f64], gold: usize, negatives: &[usize]) -> Result<(), LossError> {
    if gold >= scores.len() {
        return Err(LossError::EmptyCandidates {
            gold,
            len: scores.len(),
        });
    }
    let mut seen = vec![false; scores.len()];
    seen[gold] = true;
    for &n in negatives {
        if n >= scores.len() {
            return Err(LossError::BadNegatives(format!("index {n} out of range")));
        }
        if std::mem::replace(&mut seen[n], true) {
            return Err(LossError::BadNegatives(format!(
                "index {n} repeated or equal to gold"
            )));
        }
    }
    Ok(())
}

/// Temperature-scaled InfoNCE of the gold candidate against `negatives`.
///
/// Evaluated as `ln Σ exp((s_i − s_gold)/τ)` shifted by its maximum, so
/// τ = 0.01 with scores of order 10 stays finite.
pub fn info_nce(
    scores: &[f64],
    gold: usize,
    negatives: &[usize],
    temperature: f64,
) -> Result<(f64, Vec<f64>), LossError> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(LossError::BadTemperature(temperature));
    }
    check_candidates(scores, gold, negatives)?;
    let sg = scores[gold];
    let rel: Vec<f64> = negatives
        .iter()
        .map(|&i| (scores[i] - sg) / temperature)
        .collect();
    let max = rel.iter().copied().fold(0.0f64, f64::max);
    let value = if max == 0.0 {
        // gold holds the maximum; the gold term contributes exactly 1
        rel.iter().map(|d| d.exp()).sum::<f64>().ln_1p()
    } else {
        let sum = (-max).exp() + rel.iter().map(|d| (d - max).exp()).sum::<f64>();
        max + sum.ln()
    };
    let mut grad = vec![0.0; scores.len()];
    // softmax weights: p_i = exp(rel_i − value), p_gold = exp(−value)
    let p_gold = (-value).exp();
    grad[gold] = (p_gold - 1.0) / temperature;
    for (&i, d) in negatives.iter().zip(&rel) {
        grad[i] = (d - value).exp() / temperature;
    }
    Ok((value, grad))
}

/// Hinge `max(0, γ − x1 + x2)`: wants `x1` above `x2` by `γ`. Returns
/// `(value, d/dx1, d/dx2)`; the boundary takes the zero subgradient.
pub fn rank_loss(x1: f64, x2: f64, margin: f64) -> (f64, f64, f64) {
    let slack = margin - x1 + x2;
    if slack > 0.0 {
        (slack, -1.0, 1.0)
    } else {
        (0.0, 0.0, 0.0)
    }
}

/// Margin regularizer on the abstention score: for abstinent gold, ⊥ must
/// beat every negative by γ; otherwise the gold relation must beat ⊥ by γ.
pub fn abstention_calibration(
    scores: &[f64],
    gold: usize,
    negatives: &[usize],
    abstain: Option<usize>,
    margin: f64,
) -> Result<(f64, Vec<f64>), LossError> {
    let abs = abstain.ok_or(LossError::NoAbstainLabel)?;
    check_candidates(scores, gold, negatives)?;
    if abs >= scores.len() {
        return Err(LossError::NoAbstainLabel);
    }
    let mut grad = vec![0.0; scores.len()];
    let mut value = 0.0;
    if gold == abs {
        for &n in negatives {
            let (v, d1, d2) = rank_loss(scores[abs], scores[n], margin);
            value += v;
            grad[abs] += d1;
            grad[n] += d2;
        }
    } else {
        let (v, d1, d2) = rank_loss(scores[gold], scores[abs], margin);
        value = v;
        grad[gold] += d1;
        grad[abs] += d2;
    }
    Ok((value, grad))
}

/// `nce + λ·ac`; the calibration term is zero when there is no ⊥ label.
pub fn combined_loss(
    scores: &[f64],
    gold: usize,
    negatives: &[usize],
    abstain: Option<usize>,
    cfg: &LossConfig,
) -> Result<LossValue, LossError> {
    let (nce, mut dscore) = info_nce(scores, gold, negatives, cfg.temperature)?;
    let mut ac = 0.0;
    if abstain.is_some() {
        let (v, g) = abstention_calibration(scores, gold, negatives, abstain, cfg.margin)?;
        ac = v;
        if cfg.lambda != 0.0 {
            for (d, gi) in dscore.iter_mut().zip(g) {
                *d += cfg.lambda * gi;
            }
        }
    }
    Ok(LossValue {
        total: nce + cfg.lambda * ac,
        nce,
        ac,
        dscore,
    })
}

/// Negative candidates for one instance: every other label, or `n` of
/// them drawn without replacement. Returned in ascending index order.
pub fn select_negatives<R: Rng + ?Sized>(
    n_labels: usize,
    gold: usize,
    negatives: Negatives,
    rng: &mut R,
) -> Vec<usize> {
    let others: Vec<usize> = (0..n_labels).filter(|&i| i != gold).collect();
    match negatives {
        Negatives::Sample(n) if n.get() < others.len() => {
            let mut picked: Vec<usize> = index::sample(rng, others.len(), n.get())
                .into_iter()
                .map(|i| others[i])
                .collect();
            picked.sort_unstable();
            picked
        }
        _ => others,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::num::NonZeroUsize;

    #[test]
    fn info_nce_reference_value() {
        let (v, _) = info_nce(&[2.0, 1.0, 0.0], 0, &[1, 2], 1.0).unwrap();
        // ln(1 + e^-1 + e^-2)
        assert!((v - 0.407_605_964_444_380_1).abs() < 1e-12, "{v}");
    }

    #[test]
    fn info_nce_no_negatives_is_zero() {
        let (v, g) = info_nce(&[3.0, -1.0], 0, &[], 0.01).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn info_nce_uniform_is_ln_n() {
        for tau in [0.01, 0.3, 5.0] {
            let (v, _) = info_nce(&[0.4; 5], 2, &[0, 1, 3, 4], tau).unwrap();
            assert!((v - 5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn info_nce_small_temperature_is_finite() {
        let (v, g) = info_nce(&[10.0, -10.0, 9.0], 1, &[0, 2], 0.01).unwrap();
        assert!((v - 2000.0).abs() < 1e-9);
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn info_nce_input_errors() {
        assert!(matches!(
            info_nce(&[1.0], 3, &[], 1.0),
            Err(LossError::EmptyCandidates { .. })
        ));
        assert!(info_nce(&[1.0, 2.0], 0, &[0], 1.0).is_err());
        assert!(info_nce(&[1.0, 2.0], 0, &[1, 1], 1.0).is_err());
        assert!(info_nce(&[1.0, 2.0], 0, &[1], 0.0).is_err());
    }

    #[test]
    fn rank_loss_cases() {
        assert_eq!(rank_loss(1.0, 0.0, 0.7), (0.0, 0.0, 0.0));
        assert_eq!(rank_loss(0.0, 0.0, 0.7), (0.7, -1.0, 1.0));
        let (v, ..) = rank_loss(0.2, 0.5, 0.7);
        assert!((v - 1.0).abs() < 1e-12);
        // exact boundary is inactive
        assert_eq!(rank_loss(0.5, 0.0, 0.5), (0.0, 0.0, 0.0));
    }

    #[test]
    fn calibration_cases() {
        // order: [⊥, A, B]
        let (v, _) = abstention_calibration(&[1.0, 0.0, 0.2], 0, &[1, 2], Some(0), 0.7).unwrap();
        assert_eq!(v, 0.0);
        let (v, g) = abstention_calibration(&[0.5, 0.5, 0.0], 1, &[0, 2], Some(0), 0.7).unwrap();
        assert!((v - 0.7).abs() < 1e-12);
        assert_eq!(g, vec![1.0, -1.0, 0.0]);
        let (v, g) = abstention_calibration(&[0.3, 0.0, 0.4], 0, &[1, 2], Some(0), 0.7).unwrap();
        assert!((v - 1.2).abs() < 1e-12);
        assert_eq!(g, vec![-2.0, 1.0, 1.0]);
        assert_eq!(
            abstention_calibration(&[0.0, 1.0], 0, &[1], None, 0.7),
            Err(LossError::NoAbstainLabel)
        );
    }

    #[test]
    fn combined_lambda_zero_is_nce() {
        let cfg = LossConfig {
            lambda: 0.0,
            ..LossConfig::default()
        };
        let s = [0.1, 0.3, -0.2];
        let lv = combined_loss(&s, 1, &[0, 2], Some(0), &cfg).unwrap();
        let (nce, g) = info_nce(&s, 1, &[0, 2], cfg.temperature).unwrap();
        assert_eq!(lv.total, nce);
        assert_eq!(lv.dscore, g);
    }

    #[test]
    fn combined_without_abstain_has_no_ac() {
        let cfg = LossConfig {
            lambda: 10.0,
            ..LossConfig::default()
        };
        let lv = combined_loss(&[0.0, 0.0], 0, &[1], None, &cfg).unwrap();
        assert_eq!(lv.ac, 0.0);
        assert_eq!(lv.total, lv.nce);
    }

    #[test]
    fn negatives_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            select_negatives(4, 2, Negatives::All, &mut rng),
            vec![0, 1, 3]
        );
        let two = Negatives::Sample(NonZeroUsize::new(2).unwrap());
        let picked = select_negatives(6, 0, two, &mut rng);
        assert_eq!(picked.len(), 2);
        assert!(!picked.contains(&0));
        let many = Negatives::Sample(NonZeroUsize::new(9).unwrap());
        assert_eq!(select_negatives(3, 1, many, &mut rng), vec![0, 2]);
    }
}
