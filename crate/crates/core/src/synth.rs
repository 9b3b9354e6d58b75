//! Generated relation corpus for end-to-end checks with the toy scorer.
//!
//! Each premise is filler words around `@HEAD$` and `@TAIL$`. A related
//! instance carries one cue word of its relation. Abstinent instances
//! carry either no cue, or a cue cancelled by a negation word, so the
//! label is a linear function of token counts.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{DatasetSpec, Instance};

/// Cue words per relation, in `REL:1..REL:4` order.
pub const CUES: [[&str; 3]; 4] = [
    ["activates", "stimulates", "induces"],
    ["inhibits", "suppresses", "blocks"],
    ["binds", "attaches", "docks"],
    ["metabolizes", "processes", "converts"],
];

pub const NEGATIONS: [&str; 3] = ["not", "never", "without"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub abstain_fraction: f64,
    /// Share of abstinent instances that carry a negated cue.
    pub negated_fraction: f64,
    pub filler_vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_dev: 500,
            n_test: 500,
            abstain_fraction: 0.8,
            negated_fraction: 0.5,
            filler_vocab: 400,
            min_len: 6,
            max_len: 14,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<Instance>,
    pub dev: Vec<Instance>,
    pub test: Vec<Instance>,
}

fn filler_word(i: usize) -> String {
    const SYLLABLES: [&str; 10] = [
        "ka", "lo", "mi", "ter", "su", "van", "pe", "dor", "ix", "ul",
    ];
    let mut w = String::new();
    let mut n = i + 10;
    while n > 0 {
        w.push_str(SYLLABLES[n % 10]);
        n /= 10;
    }
    w
}

fn split(
    name: &str,
    n: usize,
    cfg: &SynthConfig,
    spec: &DatasetSpec,
    fillers: &[String],
    rng: &mut ChaCha8Rng,
) -> Vec<Instance> {
    let space = &spec.space;
    let n_abs = (n as f64 * cfg.abstain_fraction).round() as usize;
    let relations: Vec<usize> = space.relation_indices().collect();
    let mut labels: Vec<usize> = (0..n - n_abs)
        .map(|i| relations[i % relations.len()])
        .collect();
    labels.extend(std::iter::repeat_n(
        space.abstain_index().expect("synthetic ⊥"),
        n_abs,
    ));
    labels.shuffle(rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let len = rng.gen_range(cfg.min_len..=cfg.max_len);
            let mut words: Vec<String> = (0..len)
                .map(|_| fillers[rng.gen_range(0..fillers.len())].clone())
                .collect();
            let label = space.label(label).clone();
            let mut extra: Vec<String> = Vec::new();
            let cue = |rng: &mut ChaCha8Rng, r: usize| CUES[r][rng.gen_range(0..3)].to_string();
            if label.is_abstain {
                if rng.gen_bool(cfg.negated_fraction) {
                    let r = rng.gen_range(0..CUES.len());
                    extra.push(NEGATIONS[rng.gen_range(0..NEGATIONS.len())].to_string());
                    extra.push(cue(rng, r));
                }
            } else {
                let r = space.index_of(&label.label_id).unwrap() - 1;
                extra.push(cue(rng, r));
            }
            // Head, cue phrase and tail keep their order; fillers surround them.
            let head = rng.gen_range(0..=words.len());
            words.insert(head, spec.entity_masks[0].clone());
            let mid = rng.gen_range(head + 1..=words.len());
            let after = mid + extra.len();
            for (k, w) in extra.into_iter().enumerate() {
                words.insert(mid + k, w);
            }
            let tail = rng.gen_range(after..=words.len());
            words.insert(tail, spec.entity_masks[1].clone());
            Instance::new(format!("syn-{name}-{i:05}"), words.join(" "), label)
        })
        .collect()
}

/// Train/dev/test splits over [`DatasetSpec::synthetic`].
pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let spec = DatasetSpec::synthetic();
    let fillers: Vec<String> = (0..cfg.filler_vocab).map(filler_word).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    SynthCorpus {
        train: split("train", cfg.n_train, cfg, &spec, &fillers, &mut rng),
        dev: split("dev", cfg.n_dev, cfg, &spec, &fillers, &mut rng),
        test: split("test", cfg.n_test, cfg, &spec, &fillers, &mut rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_abstain_share() {
        let c = generate(&SynthConfig::default());
        assert_eq!((c.train.len(), c.dev.len(), c.test.len()), (2000, 500, 500));
        let abs = c.train.iter().filter(|i| i.gold.is_abstain).count();
        assert_eq!(abs, 1600);
        let spec = DatasetSpec::synthetic();
        for i in c.train.iter().chain(&c.dev).chain(&c.test) {
            spec.validate_instance(i).unwrap();
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&SynthConfig::default());
        assert_eq!(a, generate(&SynthConfig::default()));
        let b = generate(&SynthConfig {
            seed: 1,
            ..SynthConfig::default()
        });
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn fillers_never_collide_with_cues() {
        let fillers: Vec<String> = (0..400).map(filler_word).collect();
        let mut uniq = fillers.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), fillers.len());
        for c in CUES.iter().flatten().chain(&NEGATIONS) {
            assert!(!fillers.iter().any(|f| f == c));
        }
    }
}
