//! Independent reference implementations checked against the library.

use entail_re::eval::micro_f1;
use entail_re::inference::{ensemble, DetectorScores, EnsembleInput, Heuristic};
use entail_re::loss::{combined_loss, info_nce, rank_loss};
use entail_re::{LabelSpace, LossConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Neumaier-compensated sum.
fn neumaier(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// -log softmax of the gold logit over gold plus negatives.
fn nll_oracle(scores: &[f64], gold: usize, negatives: &[usize], tau: f64) -> f64 {
    let logits: Vec<f64> = std::iter::once(gold)
        .chain(negatives.iter().copied())
        .map(|i| scores[i] / tau)
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // exp(l - m) <= 1 with at least one term equal to 1; log1p of the rest.
    let rest = neumaier(logits.iter().map(|l| (l - m).exp())) - 1.0;
    let lse = m + rest.ln_1p();
    lse - logits[0]
}

#[test]
fn info_nce_matches_log_softmax_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for case in 0..5000 {
        let n = rng.gen_range(2..10);
        let spread = [0.1, 1.0, 5.0][case % 3];
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-spread..spread)).collect();
        let gold = rng.gen_range(0..n);
        let negatives: Vec<usize> = (0..n).filter(|&i| i != gold).collect();
        let tau = [0.01, 0.07, 0.5, 1.0, 3.0][case % 5];
        let (v, _) = info_nce(&scores, gold, &negatives, tau).unwrap();
        let o = nll_oracle(&scores, gold, &negatives, tau);
        worst = worst.max((v - o).abs());
        assert!((v - o).abs() <= 1e-9, "case {case}: {v} vs {o}");
    }
    eprintln!("info_nce max abs deviation {worst:e}");
}

#[test]
fn info_nce_frozen_values() {
    // ln(1 + e^-1 + e^-2), from the oracle above.
    let (v, g) = info_nce(&[1.0, 0.0, -1.0], 0, &[1, 2], 1.0).unwrap();
    let want = nll_oracle(&[1.0, 0.0, -1.0], 0, &[1, 2], 1.0);
    assert!((v - want).abs() < 1e-15);
    assert!((v - 0.407_605_964_444_380_1).abs() < 1e-15);
    // Gradients of a softmax cross-entropy sum to zero.
    assert!(g.iter().sum::<f64>().abs() < 1e-12);
    // Equal scores: ln(n).
    let (v, _) = info_nce(&[0.3; 4], 2, &[0, 1, 3], 0.01).unwrap();
    assert!((v - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn combined_loss_frozen_example() {
    // Abstinent gold at index 0 with margin 0.7:
    // rank(0.5, 0.2) = 0.4, rank(0.5, -0.3) = 0.0.
    let cfg = LossConfig {
        temperature: 1.0,
        margin: 0.7,
        lambda: 1.0,
        ..LossConfig::default()
    };
    let s = [0.5, 0.2, -0.3];
    let lv = combined_loss(&s, 0, &[1, 2], Some(0), &cfg).unwrap();
    assert!((lv.ac - 0.4).abs() < 1e-12);
    assert!((lv.nce - nll_oracle(&s, 0, &[1, 2], 1.0)).abs() < 1e-12);
    assert!((lv.total - lv.nce - 0.4).abs() < 1e-12);
    assert_eq!(rank_loss(1.0, 0.3, 0.7), (0.0, 0.0, 0.0));
}

fn space3() -> LabelSpace {
    LabelSpace::new("t", &["none", "A", "B"], Some("none")).unwrap()
}

/// Counting by explicit case analysis over every (gold, pred) pair.
fn brute_f1(golds: &[usize], preds: &[usize]) -> (usize, usize, usize, f64, f64, f64) {
    let mut tp = 0;
    let mut pred_pos = 0;
    let mut gold_pos = 0;
    for i in 0..golds.len() {
        match (golds[i], preds[i]) {
            (0, 0) => {}
            (0, _) => pred_pos += 1,
            (_, 0) => gold_pos += 1,
            (g, p) => {
                pred_pos += 1;
                gold_pos += 1;
                if g == p {
                    tp += 1;
                }
            }
        }
    }
    let p = if pred_pos == 0 {
        0.0
    } else {
        tp as f64 / pred_pos as f64
    };
    let r = if gold_pos == 0 {
        0.0
    } else {
        tp as f64 / gold_pos as f64
    };
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (tp, pred_pos, gold_pos, p, r, f)
}

#[test]
fn micro_f1_matches_brute_force_counting() {
    let space = space3();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for draw in 0..1000 {
        let n = rng.gen_range(0..60);
        let bias = rng.gen_range(0.0..1.0);
        let pick = |rng: &mut ChaCha8Rng| {
            if rng.gen_bool(bias) {
                0
            } else {
                rng.gen_range(1..3)
            }
        };
        let golds: Vec<usize> = (0..n).map(|_| pick(&mut rng)).collect();
        let preds: Vec<usize> = (0..n).map(|_| pick(&mut rng)).collect();
        let r = micro_f1(&golds, &preds, &space).unwrap();
        let (tp, pp, gp, p, rc, f) = brute_f1(&golds, &preds);
        assert_eq!(
            (r.true_positives, r.predicted_relations, r.gold_relations),
            (tp, pp, gp),
            "draw {draw}"
        );
        assert_eq!(r.micro_precision, p, "draw {draw}");
        assert_eq!(r.micro_recall, rc, "draw {draw}");
        assert_eq!(r.micro_f1, f, "draw {draw}");
        assert_eq!(r.n_instances, n);
    }
}

#[test]
fn micro_f1_worked_example() {
    // golds [A, ⊥, B], preds [A, A, ⊥]: TP 1, two predicted, two gold.
    let r = micro_f1(&[1, 0, 2], &[1, 1, 0], &space3()).unwrap();
    assert_eq!(
        (r.micro_precision, r.micro_recall, r.micro_f1),
        (0.5, 0.5, 0.5)
    );
}

/// Straight transcription of the ensemble rules. Index 0 is ⊥; ties in
/// an argmax resolve to the lowest index.
fn reference(ranker: [f64; 3], det: (f64, f64), t: f64, h: Heuristic) -> usize {
    let first_max = |idx: &[usize]| {
        let mut best = idx[0];
        for &i in idx {
            if ranker[i] > ranker[best] {
                best = i;
            }
        }
        best
    };
    let ranker_pred = first_max(&[0, 1, 2]);
    let best_rel = first_max(&[1, 2]);
    let ead_says_none = det.0 - det.1 > t;
    match h {
        Heuristic::Simple | Heuristic::Classification => {
            if ead_says_none {
                0
            } else {
                ranker_pred
            }
        }
        Heuristic::Voting => {
            if ead_says_none && ranker_pred == 0 {
                0
            } else {
                best_rel
            }
        }
        Heuristic::Confident => {
            if ead_says_none && det.0 > ranker[0] {
                0
            } else {
                ranker_pred
            }
        }
        Heuristic::SuperConfident => {
            if ead_says_none {
                0
            } else if det.0 > ranker[0] {
                best_rel
            } else {
                ranker_pred
            }
        }
    }
}

#[test]
fn heuristics_match_reference_on_exhaustive_grid() {
    let space = space3();
    let vals = [-1.0, 0.0, 1.0];
    let thresholds = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];
    let mut checked = 0;
    for h in Heuristic::ALL {
        for &a in &vals {
            for &b in &vals {
                for &c in &vals {
                    for &no in &vals {
                        for &has in &vals {
                            for &t in &thresholds {
                                let ranker = [a, b, c];
                                let det = DetectorScores {
                                    no_relation: no,
                                    has_relation: has,
                                };
                                let input = EnsembleInput {
                                    instance_id: "g",
                                    ranker: &ranker,
                                    ead: (h != Heuristic::Classification).then_some(det),
                                    classifier: (h == Heuristic::Classification).then_some(det),
                                };
                                let got = ensemble(&space, &input, t, h).unwrap();
                                let want = reference(ranker, (no, has), t, h);
                                assert_eq!(
                                    got, want,
                                    "{h} ranker={ranker:?} det=({no},{has}) t={t}"
                                );
                                checked += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    assert_eq!(checked, 5 * 243 * 7);
}
