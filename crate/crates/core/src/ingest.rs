//! Dataset loading, typed entity masking and low-resource subsampling.
//!
//! Two on-disk formats are understood:
//!
//! * `tsv-masked`: `id TAB sentence TAB label` (the id column may be
//!   omitted), sentences already carry the typed masks.
//! * `jsonl-spans`: one JSON object per line with raw text and two
//!   character-offset spans that get masked on load.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DatasetSpec, Instance, LabelSpace, ModelError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: ModelError,
    },
    #[error("span {start}..{end} out of bounds for sentence of {len} chars")]
    SpanOutOfBounds {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("entity spans {0:?} and {1:?} overlap")]
    OverlappingSpans((usize, usize), (usize, usize)),
    #[error("label {label}: need {need} instances, have {have}")]
    InsufficientData {
        label: String,
        need: usize,
        have: usize,
    },
    #[error("invalid subsample spec: {0}")]
    BadSpec(String),
    #[error("{dataset} {split}: expected {expected} rows, found {found}")]
    RowCount {
        dataset: String,
        split: Split,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    TsvMasked,
    JsonlSpans,
}

impl DataFormat {
    /// `.jsonl`/`.json` files are span-annotated; everything else is TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => DataFormat::JsonlSpans,
            _ => DataFormat::TsvMasked,
        }
    }
}

impl std::str::FromStr for DataFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv-masked" | "tsv" => Ok(DataFormat::TsvMasked),
            "jsonl-spans" | "jsonl" => Ok(DataFormat::JsonlSpans),
            _ => Err(format!("unknown data format {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

/// An entity mention as `[start, end)` character offsets plus its type
/// (`chemical`, `gene`, `drug`, `disease`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub entity_type: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, entity_type: &str) -> Self {
        Self {
            start,
            end,
            entity_type: entity_type.to_string(),
        }
    }

    pub fn mask_token(&self) -> String {
        format!("@{}$", self.entity_type.to_ascii_uppercase())
    }
}

/// Replaces both spans with their typed mask tokens, leaving every other
/// byte of the sentence untouched.
pub fn mask_entities(
    sentence: &str,
    span1: &EntitySpan,
    span2: &EntitySpan,
) -> Result<String, IngestError> {
    let n_chars = sentence.chars().count();
    for s in [span1, span2] {
        if s.start >= s.end || s.end > n_chars {
            return Err(IngestError::SpanOutOfBounds {
                start: s.start,
                end: s.end,
                len: n_chars,
            });
        }
    }
    if span1.start < span2.end && span2.start < span1.end {
        return Err(IngestError::OverlappingSpans(
            (span1.start, span1.end),
            (span2.start, span2.end),
        ));
    }
    let byte_at = |char_idx: usize| {
        sentence
            .char_indices()
            .nth(char_idx)
            .map_or(sentence.len(), |(b, _)| b)
    };
    let (first, second) = if span1.start < span2.start {
        (span1, span2)
    } else {
        (span2, span1)
    };
    let (a0, a1) = (byte_at(first.start), byte_at(first.end));
    let (b0, b1) = (byte_at(second.start), byte_at(second.end));
    let mut out = String::with_capacity(sentence.len() + 16);
    out.push_str(&sentence[..a0]);
    out.push_str(&first.mask_token());
    out.push_str(&sentence[a1..b0]);
    out.push_str(&second.mask_token());
    out.push_str(&sentence[b1..]);
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct SpanRecord {
    id: String,
    text: String,
    span1: EntitySpan,
    span2: EntitySpan,
    label: String,
}

pub fn load_dataset(
    path: &Path,
    format: DataFormat,
    spec: &DatasetSpec,
) -> Result<Vec<Instance>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    match format {
        DataFormat::TsvMasked => read_tsv(reader, spec),
        DataFormat::JsonlSpans => read_jsonl(reader, spec),
    }
    .map_err(|e| match e {
        IngestError::Io { source, .. } => IngestError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

fn io_err(source: io::Error) -> IngestError {
    IngestError::Io {
        path: PathBuf::new(),
        source,
    }
}

fn is_header(cols: &[&str]) -> bool {
    matches!(cols.last(), Some(&"label"))
        && matches!(
            cols.first(),
            Some(&"index") | Some(&"id") | Some(&"sentence")
        )
}

pub fn read_tsv<R: BufRead>(reader: R, spec: &DatasetSpec) -> Result<Vec<Instance>, IngestError> {
    let masks = spec.required_masks();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(io_err)?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if lineno == 1 && is_header(&cols) {
            continue;
        }
        let (id, sentence, raw_label) = match cols.as_slice() {
            [id, sentence, label] => (id.to_string(), *sentence, *label),
            [sentence, label] => (format!("L{lineno}"), *sentence, *label),
            _ => {
                return Err(IngestError::Parse {
                    line: lineno,
                    msg: format!(
                        "expected 2 or 3 tab-separated columns, found {}",
                        cols.len()
                    ),
                })
            }
        };
        out.push(make_instance(
            id,
            sentence.to_string(),
            raw_label,
            spec,
            &masks,
            lineno,
        )?);
    }
    Ok(out)
}

pub fn read_jsonl<R: BufRead>(reader: R, spec: &DatasetSpec) -> Result<Vec<Instance>, IngestError> {
    let masks = spec.required_masks();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SpanRecord = serde_json::from_str(&line).map_err(|e| IngestError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let premise =
            mask_entities(&rec.text, &rec.span1, &rec.span2).map_err(|e| IngestError::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
        out.push(make_instance(
            rec.id, premise, &rec.label, spec, &masks, lineno,
        )?);
    }
    Ok(out)
}

fn make_instance(
    id: String,
    premise: String,
    raw_label: &str,
    spec: &DatasetSpec,
    masks: &[&str],
    line: usize,
) -> Result<Instance, IngestError> {
    let gold = spec
        .resolve_label(raw_label)
        .cloned()
        .ok_or_else(|| IngestError::Invalid {
            line,
            source: ModelError::UnknownLabel {
                instance: id.clone(),
                label: raw_label.to_string(),
                dataset: spec.id().to_string(),
            },
        })?;
    let inst = Instance::new(id, premise, gold);
    crate::model::validate_instance(&inst, &spec.space, masks)
        .map_err(|source| IngestError::Invalid { line, source })?;
    Ok(inst)
}

/// Writes instances in the canonical three-column TSV form.
pub fn write_tsv<W: Write>(mut w: W, data: &[Instance]) -> io::Result<()> {
    for inst in data {
        writeln!(w, "{}\t{}\t{}", inst.id, inst.premise, inst.gold.label_id)?;
    }
    w.flush()
}

pub fn check_split_size(spec: &DatasetSpec, split: Split, found: usize) -> Result<(), IngestError> {
    let Some(sizes) = spec.split_sizes else {
        return Ok(());
    };
    let expected = match split {
        Split::Train => sizes.train,
        Split::Dev => sizes.dev,
        Split::Test => sizes.test,
    };
    if expected == found {
        Ok(())
    } else {
        Err(IngestError::RowCount {
            dataset: spec.id().to_string(),
            split,
            expected,
            found,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SubsampleMode {
    /// `k` instances per relation, plus abstinent instances at the source ratio.
    KShot(usize),
    /// A label-stratified fraction `p` in (0, 1].
    Percent(f64),
    ZeroShot,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsampleSpec {
    pub mode: SubsampleMode,
    pub seed: u64,
}

impl SubsampleSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        match self.mode {
            SubsampleMode::KShot(0) => Err(IngestError::BadSpec("k-shot requires k >= 1".into())),
            SubsampleMode::Percent(p) if !(p > 0.0 && p <= 1.0) => Err(IngestError::BadSpec(
                format!("percent requires 0 < p <= 1, got {p}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Number of abstinent instances that keeps `n_nonabs` relation instances
/// at the same abstinent fraction as the source (`src_abs` / `src_nonabs`),
/// rounded half up.
pub fn ratio_preserving_abstain_count(n_nonabs: usize, src_abs: usize, src_nonabs: usize) -> usize {
    if src_nonabs == 0 {
        return 0;
    }
    let num = 2 * src_abs as u128 * n_nonabs as u128 + src_nonabs as u128;
    (num / (2 * src_nonabs as u128)) as usize
}

/// Draws a low-resource subset. Output keeps the input order of the
/// selected rows and depends only on `(data, spec)`.
pub fn subsample(
    data: &[Instance],
    spec: &SubsampleSpec,
    space: &LabelSpace,
) -> Result<Vec<Instance>, IngestError> {
    spec.validate()?;
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); space.len()];
    for (i, inst) in data.iter().enumerate() {
        let idx = space
            .index_of(&inst.gold.label_id)
            .ok_or_else(|| IngestError::Invalid {
                line: i + 1,
                source: ModelError::UnknownLabel {
                    instance: inst.id.clone(),
                    label: inst.gold.label_id.clone(),
                    dataset: space.dataset_id().to_string(),
                },
            })?;
        by_label[idx].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut chosen: Vec<usize> = Vec::new();
    let draw = |pool: &[usize], n: usize, rng: &mut ChaCha8Rng| {
        let mut pool = pool.to_vec();
        pool.shuffle(rng);
        pool.truncate(n);
        pool
    };

    match spec.mode {
        SubsampleMode::ZeroShot => return Ok(Vec::new()),
        SubsampleMode::KShot(k) => {
            for idx in space.relation_indices() {
                let pool = &by_label[idx];
                if pool.len() < k {
                    return Err(IngestError::InsufficientData {
                        label: space.label(idx).label_id.clone(),
                        need: k,
                        have: pool.len(),
                    });
                }
                chosen.extend(draw(pool, k, &mut rng));
            }
            if let Some(abs) = space.abstain_index() {
                let src_abs = by_label[abs].len();
                let src_nonabs = data.len() - src_abs;
                let n = ratio_preserving_abstain_count(chosen.len(), src_abs, src_nonabs);
                chosen.extend(draw(&by_label[abs], n, &mut rng));
            }
        }
        SubsampleMode::Percent(p) => {
            let total = data.len();
            // Guard against p*N landing a hair above an integer.
            let target = ((p * total as f64) - 1e-9).ceil().max(0.0) as usize;
            let target = target.min(total);
            let quotas =
                largest_remainder(&by_label.iter().map(Vec::len).collect::<Vec<_>>(), target);
            for (pool, q) in by_label.iter().zip(quotas) {
                chosen.extend(draw(pool, q, &mut rng));
            }
        }
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| data[i].clone()).collect())
}

/// Splits `target` across strata proportionally to `counts`: floors
/// first, leftover units to the largest remainders (earlier stratum wins
/// ties).
pub fn largest_remainder(counts: &[usize], target: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut quotas = Vec::with_capacity(counts.len());
    let mut remainders = Vec::with_capacity(counts.len());
    for (i, &c) in counts.iter().enumerate() {
        let num = target as u128 * c as u128;
        quotas.push((num / total as u128) as usize);
        remainders.push((num % total as u128, i));
    }
    let mut leftover = target - quotas.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &remainders {
        if leftover == 0 {
            break;
        }
        if quotas[i] < counts[i] {
            quotas[i] += 1;
            leftover -= 1;
        }
    }
    quotas
}
