//! Central finite-difference checks of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::loss::{abstention_calibration, combined_loss, info_nce, rank_loss};
use crate::model::{LossConfig, Negatives};
use crate::scorer::{featurize, Features, ToyScorerParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub seeds: u64,
    pub first_seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seeds: 100,
            first_seed: 0,
            step: 1e-4,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckFailure {
    pub target: &'static str,
    pub seed: u64,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradcheckReport {
    /// Configurations checked per target, in [`TARGETS`] order.
    pub configs: Vec<(&'static str, usize)>,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub failures: Vec<GradcheckFailure>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub const TARGETS: [&str; 5] = [
    "info_nce",
    "rank_loss",
    "abstention_calibration",
    "combined_loss",
    "toy_scorer",
];

/// Temperatures cycled across seeds; every fourth seed uses the default.
const TEMPERATURES: [f64; 4] = [0.01, 0.05, 0.3, 1.0];

/// `|a - n| / max(1, |a|, |n|)`: relative for large gradients, absolute
/// near zero.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn central<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

struct Case {
    scores: Vec<f64>,
    gold: usize,
    negatives: Vec<usize>,
    abstain: Option<usize>,
    cfg: LossConfig,
}

/// Smallest distance of any hinge argument from its kink.
fn kink_distance(c: &Case) -> f64 {
    let m = c.cfg.margin;
    let mut d = f64::INFINITY;
    if let Some(a) = c.abstain {
        if c.gold == a {
            for &i in &c.negatives {
                d = d.min((m - c.scores[a] + c.scores[i]).abs());
            }
        } else {
            d = d.min((m - c.scores[c.gold] + c.scores[a]).abs());
        }
    }
    d
}

fn sample_case(rng: &mut ChaCha8Rng, seed: u64, spread: f64) -> Case {
    let n = rng.gen_range(2..=7);
    let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-spread..spread)).collect();
    let gold = rng.gen_range(0..n);
    let abstain = if rng.gen_bool(0.8) {
        Some(rng.gen_range(0..n))
    } else {
        None
    };
    let mut negatives: Vec<usize> = (0..n).filter(|&i| i != gold).collect();
    if negatives.len() > 1 && rng.gen_bool(0.3) {
        let keep = rng.gen_range(1..negatives.len());
        negatives.truncate(keep);
    }
    let cfg = LossConfig {
        temperature: TEMPERATURES[(seed % 4) as usize],
        margin: rng.gen_range(0.1..1.5),
        lambda: rng.gen_range(0.0..2.0),
        negatives: Negatives::All,
    };
    Case {
        scores,
        gold,
        negatives,
        abstain,
        cfg,
    }
}

/// Draws cases until every hinge is at least `gap` from its kink.
fn sample_smooth_case(rng: &mut ChaCha8Rng, seed: u64, spread: f64, gap: f64) -> Case {
    loop {
        let c = sample_case(rng, seed, spread);
        if kink_distance(&c) > gap {
            return c;
        }
    }
}

struct Checker<'a> {
    cfg: &'a GradcheckConfig,
    report: &'a mut GradcheckReport,
}

impl Checker<'_> {
    fn check(
        &mut self,
        target: &'static str,
        seed: u64,
        index: usize,
        analytic: f64,
        numeric: f64,
    ) {
        let rel = rel_error(analytic, numeric);
        self.report.coordinates += 1;
        self.report.max_rel_error = self.report.max_rel_error.max(rel);
        if rel.is_nan() || rel > self.cfg.tolerance {
            self.report.failures.push(GradcheckFailure {
                target,
                seed,
                index,
                analytic,
                numeric,
                rel_error: rel,
            });
        }
    }
}

fn param_mut(p: &mut ToyScorerParams, k: usize) -> &mut f64 {
    let (n1, nh) = (p.w1.len(), p.hidden_dim);
    if k < n1 {
        &mut p.w1[k]
    } else if k < n1 + nh {
        &mut p.b1[k - n1]
    } else if k < n1 + 2 * nh {
        &mut p.w2[k - n1 - nh]
    } else {
        &mut p.b2
    }
}

fn toy_loss(p: &ToyScorerParams, feats: &[Features], c: &Case) -> f64 {
    let scores: Vec<f64> = feats
        .iter()
        .map(|f| p.forward_features(f.clone()).0)
        .collect();
    combined_loss(&scores, c.gold, &c.negatives, c.abstain, &c.cfg)
        .expect("valid case")
        .total
}

const TOY_VOCAB: [&str; 12] = [
    "@HEAD$",
    "@TAIL$",
    "activates",
    "inhibits",
    "binds",
    "no",
    "relation",
    "of",
    "to",
    "the",
    "cell",
    "protein",
];

fn check_toy(rng: &mut ChaCha8Rng, seed: u64, ck: &mut Checker<'_>) {
    let hash_dim = 32;
    let hidden = 4;
    let h = ck.cfg.step;
    loop {
        let mut p = ToyScorerParams::new(hash_dim, hidden, seed).expect("dims");
        for k in 0..p.num_params() {
            *param_mut(&mut p, k) = rng.gen_range(-0.8..0.8);
        }
        let case = sample_case(rng, seed, 1.0);
        let n = case.scores.len();
        let sentence = |rng: &mut ChaCha8Rng| {
            (0..rng.gen_range(3..8))
                .map(|_| TOY_VOCAB[rng.gen_range(0..TOY_VOCAB.len())])
                .collect::<Vec<_>>()
                .join(" ")
        };
        let premise = sentence(rng);
        let feats: Vec<Features> = (0..n)
            .map(|_| featurize(&premise, &sentence(rng), hash_dim))
            .collect();
        let (scores, caches): (Vec<f64>, Vec<_>) =
            feats.iter().map(|f| p.forward_features(f.clone())).unzip();
        let c = Case { scores, ..case };
        // Each parameter moves a score by at most ~h * |ds/dθ| < 10h.
        if kink_distance(&c) < 1e-2 {
            continue;
        }
        let lv = combined_loss(&c.scores, c.gold, &c.negatives, c.abstain, &c.cfg).expect("valid");
        let mut grad = vec![0.0; p.num_params()];
        for (cache, &d) in caches.iter().zip(&lv.dscore) {
            let g = p.backward(cache, d);
            for &(row, _) in &g.features {
                for col in 0..hidden {
                    grad[row as usize * hidden + col] += g.dw1(row as usize, col);
                }
            }
            let off = p.w1.len();
            for j in 0..hidden {
                grad[off + j] += g.db1()[j];
                grad[off + hidden + j] += g.dw2[j];
            }
            grad[off + 2 * hidden] += g.db2;
        }
        for (k, &analytic) in grad.iter().enumerate() {
            let x = *param_mut(&mut p, k);
            let numeric = central(
                |v| {
                    let mut q = p.clone();
                    *param_mut(&mut q, k) = v;
                    toy_loss(&q, &feats, &c)
                },
                x,
                h,
            );
            ck.check("toy_scorer", seed, k, analytic, numeric);
        }
        return;
    }
}

/// Runs every target on `cfg.seeds` seeded configurations.
pub fn run(cfg: &GradcheckConfig) -> GradcheckReport {
    let mut report = GradcheckReport::default();
    let mut counts = [0usize; TARGETS.len()];
    let h = cfg.step;
    for seed in cfg.first_seed..cfg.first_seed + cfg.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ck = Checker {
            cfg,
            report: &mut report,
        };

        // info_nce
        let c = sample_case(&mut rng, seed, 1.0);
        let (_, g) = info_nce(&c.scores, c.gold, &c.negatives, c.cfg.temperature).expect("valid");
        for (i, &a) in g.iter().enumerate() {
            let mut s = c.scores.clone();
            let num = central(
                |v| {
                    s[i] = v;
                    info_nce(&s, c.gold, &c.negatives, c.cfg.temperature)
                        .unwrap()
                        .0
                },
                c.scores[i],
                h,
            );
            ck.check("info_nce", seed, i, a, num);
        }
        counts[0] += 1;

        // rank_loss, away from the kink
        let (x1, x2, m) = loop {
            let (x1, x2, m): (f64, f64, f64) = (
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.1..1.5),
            );
            if (m - x1 + x2).abs() > 10.0 * h {
                break (x1, x2, m);
            }
        };
        let (_, d1, d2) = rank_loss(x1, x2, m);
        ck.check(
            "rank_loss",
            seed,
            0,
            d1,
            central(|v| rank_loss(v, x2, m).0, x1, h),
        );
        ck.check(
            "rank_loss",
            seed,
            1,
            d2,
            central(|v| rank_loss(x1, v, m).0, x2, h),
        );
        counts[1] += 1;

        // abstention_calibration, always with an abstention label
        let mut c = sample_smooth_case(&mut rng, seed, 1.5, 10.0 * h);
        if c.abstain.is_none() {
            c.abstain = Some(0);
            while kink_distance(&c) <= 10.0 * h {
                c = sample_smooth_case(&mut rng, seed, 1.5, 10.0 * h);
                c.abstain = Some(0);
            }
        }
        let (_, g) =
            abstention_calibration(&c.scores, c.gold, &c.negatives, c.abstain, c.cfg.margin)
                .expect("valid");
        for (i, &a) in g.iter().enumerate() {
            let mut s = c.scores.clone();
            let num = central(
                |v| {
                    s[i] = v;
                    abstention_calibration(&s, c.gold, &c.negatives, c.abstain, c.cfg.margin)
                        .unwrap()
                        .0
                },
                c.scores[i],
                h,
            );
            ck.check("abstention_calibration", seed, i, a, num);
        }
        counts[2] += 1;

        // combined_loss
        let c = sample_smooth_case(&mut rng, seed, 1.5, 10.0 * h);
        let lv = combined_loss(&c.scores, c.gold, &c.negatives, c.abstain, &c.cfg).expect("valid");
        for (i, &a) in lv.dscore.iter().enumerate() {
            let mut s = c.scores.clone();
            let num = central(
                |v| {
                    s[i] = v;
                    combined_loss(&s, c.gold, &c.negatives, c.abstain, &c.cfg)
                        .unwrap()
                        .total
                },
                c.scores[i],
                h,
            );
            ck.check("combined_loss", seed, i, a, num);
        }
        counts[3] += 1;

        check_toy(&mut rng, seed, &mut ck);
        counts[4] += 1;
    }
    report.configs = TARGETS.iter().copied().zip(counts).collect();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_error_floor() {
        assert_eq!(rel_error(0.0, 1e-5), 1e-5);
        assert_eq!(rel_error(100.0, 101.0), 1.0 / 101.0);
    }

    #[test]
    fn small_run_passes() {
        let r = run(&GradcheckConfig {
            seeds: 8,
            ..GradcheckConfig::default()
        });
        assert!(r.passed(), "{:?}", r.failures.first());
        assert!(r.configs.iter().all(|&(_, n)| n == 8));
    }
}
