//! A one-hidden-layer scorer over hashed bag-of-words features of
//! `premise [SEP] hypothesis`:
//!
//! ```text
//! score = w2 · tanh(W1ᵀ φ + b1) + b2
//! ```
//!
//! `φ` holds whitespace-token counts bucketed by an FNV-1a hash folded
//! with a multiplicative (Fibonacci) hash. Collisions are accepted.
//! Gradients are sparse in `W1`: only rows of active buckets move.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Scorer, ScorerError};
use crate::verbalizer::NliQuery;

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"ENTRECKP";
const INIT_RANGE: f64 = 0.05;
const SEPARATOR: &str = "[SEP]";

/// Sparse `(bucket, count)` pairs, sorted by bucket, no duplicates.
pub type Features = Vec<(u32, f64)>;

fn token_bucket(token: &str, bits: u32) -> u32 {
    let h = token.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    });
    if bits == 0 {
        return 0;
    }
    (h.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> (64 - bits)) as u32
}

/// Hashed token counts of `premise [SEP] hypothesis`.
pub fn featurize(premise: &str, hypothesis: &str, hash_dim: usize) -> Features {
    let bits = hash_dim.trailing_zeros();
    let mut buckets: Vec<u32> = premise
        .split_whitespace()
        .chain(std::iter::once(SEPARATOR))
        .chain(hypothesis.split_whitespace())
        .map(|t| token_bucket(t, bits))
        .collect();
    buckets.sort_unstable();
    let mut out: Features = Vec::with_capacity(buckets.len());
    for b in buckets {
        match out.last_mut() {
            Some((last, c)) if *last == b => *c += 1.0,
            _ => out.push((b, 1.0)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyScorerParams {
    pub hash_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    /// Row-major `hash_dim × hidden_dim`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Forward state kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCache {
    pub features: Features,
    pub hidden: Vec<f64>,
}

/// Gradient of one score with respect to all parameters. The `W1` part
/// is the outer product `φ ⊗ dpre`, stored factored.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGrad {
    pub features: Features,
    pub dpre: Vec<f64>,
    pub dw2: Vec<f64>,
    pub db2: f64,
}

impl ToyGrad {
    pub fn db1(&self) -> &[f64] {
        &self.dpre
    }

    /// Entry `(row, col)` of dL/dW1.
    pub fn dw1(&self, row: usize, col: usize) -> f64 {
        self.features
            .binary_search_by_key(&(row as u32), |&(b, _)| b)
            .map_or(0.0, |i| self.features[i].1 * self.dpre[col])
    }

    pub fn is_zero(&self) -> bool {
        self.db2 == 0.0 && self.dpre.iter().all(|&x| x == 0.0) && self.dw2.iter().all(|&x| x == 0.0)
    }
}

impl ToyScorerParams {
    pub const DEFAULT_HASH_DIM: usize = 1 << 16;
    pub const DEFAULT_HIDDEN_DIM: usize = 64;

    fn check_dims(hash_dim: usize, hidden_dim: usize) -> Result<(), ScorerError> {
        if !hash_dim.is_power_of_two() || hash_dim > 1 << 31 {
            return Err(ScorerError::BadParams(format!(
                "hash_dim must be a power of two, got {hash_dim}"
            )));
        }
        if hidden_dim == 0 {
            return Err(ScorerError::BadParams("hidden_dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Seeded init, every parameter uniform in [-0.05, 0.05].
    pub fn new(hash_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self, ScorerError> {
        Self::check_dims(hash_dim, hidden_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE))
                .collect()
        };
        let w1 = draw(hash_dim * hidden_dim);
        let b1 = draw(hidden_dim);
        let w2 = draw(hidden_dim);
        let b2 = draw(1)[0];
        Ok(Self {
            hash_dim,
            hidden_dim,
            seed,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn zeros(hash_dim: usize, hidden_dim: usize) -> Result<Self, ScorerError> {
        Self::check_dims(hash_dim, hidden_dim)?;
        Ok(Self {
            hash_dim,
            hidden_dim,
            seed: 0,
            w1: vec![0.0; hash_dim * hidden_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim],
            b2: 0.0,
        })
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    pub fn featurize(&self, premise: &str, hypothesis: &str) -> Features {
        featurize(premise, hypothesis, self.hash_dim)
    }

    pub fn forward(&self, query: &NliQuery) -> (f64, ToyCache) {
        self.forward_features(self.featurize(&query.premise, &query.hypothesis))
    }

    pub fn forward_features(&self, features: Features) -> (f64, ToyCache) {
        let h = self.hidden_dim;
        let mut pre = self.b1.clone();
        for &(b, c) in &features {
            let row = &self.w1[b as usize * h..(b as usize + 1) * h];
            for (p, w) in pre.iter_mut().zip(row) {
                *p += c * w;
            }
        }
        let hidden: Vec<f64> = pre.iter().map(|x| x.tanh()).collect();
        let score = self.b2 + self.w2.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>();
        (score, ToyCache { features, hidden })
    }

    pub fn score(&self, query: &NliQuery) -> f64 {
        self.forward(query).0
    }

    pub fn backward(&self, cache: &ToyCache, dscore: f64) -> ToyGrad {
        let dpre = self
            .w2
            .iter()
            .zip(&cache.hidden)
            .map(|(w, a)| dscore * w * (1.0 - a * a))
            .collect();
        ToyGrad {
            features: cache.features.clone(),
            dpre,
            dw2: cache.hidden.iter().map(|a| dscore * a).collect(),
            db2: dscore,
        }
    }

    /// Plain gradient-descent update `θ ← θ − step·g`.
    pub fn apply(&mut self, grad: &ToyGrad, step: f64) {
        let h = self.hidden_dim;
        for &(b, c) in &grad.features {
            let row = &mut self.w1[b as usize * h..(b as usize + 1) * h];
            for (w, d) in row.iter_mut().zip(&grad.dpre) {
                *w -= step * c * d;
            }
        }
        for (b, d) in self.b1.iter_mut().zip(&grad.dpre) {
            *b -= step * d;
        }
        for (w, d) in self.w2.iter_mut().zip(&grad.dw2) {
            *w -= step * d;
        }
        self.b2 -= step * grad.db2;
    }

    pub fn is_finite(&self) -> bool {
        self.b2.is_finite()
            && self
                .w1
                .iter()
                .chain(&self.b1)
                .chain(&self.w2)
                .all(|x| x.is_finite())
    }

    /// Binary dump: magic, format version, dims, seed, then every
    /// parameter as little-endian f64 (`w1`, `b1`, `w2`, `b2`).
    pub fn write_to<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.hash_dim as u64).to_le_bytes())?;
        w.write_all(&(self.hidden_dim as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for x in self
            .w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain([&self.b2])
        {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, String> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != CHECKPOINT_MAGIC {
            return Err("not a toy scorer checkpoint".into());
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|e| e.to_string())?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let mut u64_field = || -> Result<u64, String> {
            let mut b8 = [0u8; 8];
            r.read_exact(&mut b8).map_err(|e| e.to_string())?;
            Ok(u64::from_le_bytes(b8))
        };
        let hash_dim = u64_field()? as usize;
        let hidden_dim = u64_field()? as usize;
        let seed = u64_field()?;
        Self::check_dims(hash_dim, hidden_dim).map_err(|e| e.to_string())?;
        let n = hash_dim * hidden_dim + 2 * hidden_dim + 1;
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| format!("truncated checkpoint: {e}"))?;
        if r.read(&mut [0u8; 1]).map_err(|e| e.to_string())? != 0 {
            return Err("trailing bytes after parameters".into());
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let (w1, rest) = vals.split_at(hash_dim * hidden_dim);
        let (b1, rest) = rest.split_at(hidden_dim);
        let (w2, rest) = rest.split_at(hidden_dim);
        Ok(Self {
            hash_dim,
            hidden_dim,
            seed,
            w1: w1.to_vec(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: rest[0],
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ScorerError> {
        let f = File::create(path)?;
        self.write_to(f)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ScorerError> {
        let f = File::open(path)?;
        Self::read_from(f).map_err(|msg| ScorerError::Checkpoint {
            path: path.to_path_buf(),
            msg,
        })
    }
}

impl Scorer for ToyScorerParams {
    fn score_batch(&self, queries: &[NliQuery]) -> Result<Vec<f64>, ScorerError> {
        Ok(queries.iter().map(|q| self.score(q)).collect())
    }
}
