//! Domain types shared across the crate: labels, label spaces, dataset
//! descriptions, instances, score vectors and loss settings.

use std::collections::HashMap;
use std::fmt;
use std::num::NonZeroUsize;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("instance {instance}: premise is missing required mask {mask}")]
    MissingMask { instance: String, mask: String },
    #[error("instance {instance}: label {label:?} is not in the {dataset} label space")]
    UnknownLabel {
        instance: String,
        label: String,
        dataset: String,
    },
    #[error("duplicate label {0:?} in label space")]
    DuplicateLabel(String),
    #[error("label space {dataset} has {count} abstention labels")]
    AbstainCount { dataset: String, count: usize },
    #[error("score vector for {instance}: {reason}")]
    BadScores { instance: String, reason: String },
    #[error("invalid loss configuration: {0}")]
    BadLossConfig(String),
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
}

/// One relation (or the abstention label) of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RelationLabel {
    pub dataset_id: String,
    pub label_id: String,
    pub is_abstain: bool,
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label_id)
    }
}

/// Ordered, duplicate-free set of labels. Order matters: it is the query
/// order and the argmax tie-break order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSpace {
    dataset_id: String,
    labels: Vec<RelationLabel>,
    index: HashMap<String, usize>,
    abstain: Option<usize>,
}

impl LabelSpace {
    /// Builds a space from label ids in order. `abstain` names the label
    /// playing the role of ⊥, if any.
    pub fn new<S: AsRef<str>>(
        dataset_id: &str,
        label_ids: &[S],
        abstain: Option<&str>,
    ) -> Result<Self, ModelError> {
        let mut labels = Vec::with_capacity(label_ids.len());
        let mut index = HashMap::with_capacity(label_ids.len());
        for (i, id) in label_ids.iter().enumerate() {
            let id = id.as_ref();
            if index.insert(id.to_string(), i).is_some() {
                return Err(ModelError::DuplicateLabel(id.to_string()));
            }
            labels.push(RelationLabel {
                dataset_id: dataset_id.to_string(),
                label_id: id.to_string(),
                is_abstain: Some(id) == abstain,
            });
        }
        let abstain_idx = match abstain {
            Some(a) => Some(*index.get(a).ok_or_else(|| ModelError::AbstainCount {
                dataset: dataset_id.to_string(),
                count: 0,
            })?),
            None => None,
        };
        Ok(Self {
            dataset_id: dataset_id.to_string(),
            labels,
            index,
            abstain: abstain_idx,
        })
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn labels(&self) -> &[RelationLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn has_abstain(&self) -> bool {
        self.abstain.is_some()
    }

    pub fn abstain_index(&self) -> Option<usize> {
        self.abstain
    }

    /// Number of real relations, |Y|.
    pub fn num_relations(&self) -> usize {
        self.labels.len() - usize::from(self.has_abstain())
    }

    pub fn index_of(&self, label_id: &str) -> Option<usize> {
        self.index.get(label_id).copied()
    }

    pub fn label(&self, idx: usize) -> &RelationLabel {
        &self.labels[idx]
    }

    pub fn get(&self, label_id: &str) -> Option<&RelationLabel> {
        self.index_of(label_id).map(|i| &self.labels[i])
    }

    pub fn contains(&self, label: &RelationLabel) -> bool {
        label.dataset_id == self.dataset_id
            && self
                .get(&label.label_id)
                .is_some_and(|l| l.is_abstain == label.is_abstain)
    }

    /// Indices of the non-abstention labels, in space order.
    pub fn relation_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.labels.len()).filter(move |&i| Some(i) != self.abstain)
    }
}

/// Row counts of the published train/dev/test splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

/// Everything needed to read and verbalize one dataset: its label space,
/// the typed mask tokens its premises carry, and label aliases seen in
/// distributed files.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub space: LabelSpace,
    /// Mask tokens in entity order (head, tail). DDI repeats `@DRUG$`.
    pub entity_masks: [String; 2],
    pub aliases: HashMap<String, String>,
    pub split_sizes: Option<SplitSizes>,
    /// Fraction of abstinent instances in the published train split.
    pub train_abstain_fraction: Option<f64>,
}

pub const BUILTIN_DATASETS: [&str; 4] = ["chemprot", "ddi", "gad", "synthetic"];

impl DatasetSpec {
    pub fn builtin(name: &str) -> Result<Self, ModelError> {
        match name.to_ascii_lowercase().as_str() {
            "chemprot" => Ok(Self::chemprot()),
            "ddi" => Ok(Self::ddi()),
            "gad" => Ok(Self::gad()),
            "synthetic" => Ok(Self::synthetic()),
            _ => Err(ModelError::UnknownDataset(name.to_string())),
        }
    }

    pub fn chemprot() -> Self {
        let space = LabelSpace::new(
            "chemprot",
            &["false", "CPR:3", "CPR:4", "CPR:5", "CPR:6", "CPR:9"],
            Some("false"),
        )
        .expect("static label space");
        Self {
            space,
            entity_masks: ["@CHEMICAL$".into(), "@GENE$".into()],
            aliases: aliases(&[("0", "false"), ("none", "false")]),
            split_sizes: Some(SplitSizes {
                train: 18305,
                dev: 11268,
                test: 15745,
            }),
            train_abstain_fraction: Some(0.77),
        }
    }

    pub fn ddi() -> Self {
        let space = LabelSpace::new(
            "ddi",
            &[
                "DDI-false",
                "DDI-advise",
                "DDI-effect",
                "DDI-int",
                "DDI-mechanism",
            ],
            Some("DDI-false"),
        )
        .expect("static label space");
        Self {
            space,
            entity_masks: ["@DRUG$".into(), "@DRUG$".into()],
            aliases: aliases(&[
                ("0", "DDI-false"),
                ("false", "DDI-false"),
                ("none", "DDI-false"),
            ]),
            split_sizes: Some(SplitSizes {
                train: 25296,
                dev: 2496,
                test: 5716,
            }),
            train_abstain_fraction: Some(0.85),
        }
    }

    /// GAD has no abstinent instances; label "0" is an ordinary class.
    pub fn gad() -> Self {
        let space = LabelSpace::new("gad", &["0", "1"], None).expect("static label space");
        Self {
            space,
            entity_masks: ["@GENE$".into(), "@DISEASE$".into()],
            aliases: HashMap::new(),
            split_sizes: Some(SplitSizes {
                train: 4261,
                dev: 535,
                test: 534,
            }),
            train_abstain_fraction: None,
        }
    }

    /// Four relations plus abstention, used by the generated toy corpus.
    pub fn synthetic() -> Self {
        let space = LabelSpace::new(
            "synthetic",
            &["none", "REL:1", "REL:2", "REL:3", "REL:4"],
            Some("none"),
        )
        .expect("static label space");
        Self {
            space,
            entity_masks: ["@HEAD$".into(), "@TAIL$".into()],
            aliases: HashMap::new(),
            split_sizes: None,
            train_abstain_fraction: None,
        }
    }

    pub fn id(&self) -> &str {
        self.space.dataset_id()
    }

    /// Distinct mask tokens every premise must contain.
    pub fn required_masks(&self) -> Vec<&str> {
        let mut masks: Vec<&str> = Vec::with_capacity(2);
        for m in &self.entity_masks {
            if !masks.contains(&m.as_str()) {
                masks.push(m);
            }
        }
        masks
    }

    /// Resolves a label as written in a data file to a label of the space.
    pub fn resolve_label(&self, raw: &str) -> Option<&RelationLabel> {
        self.space
            .get(raw)
            .or_else(|| self.aliases.get(raw).and_then(|id| self.space.get(id)))
    }

    pub fn validate_instance(&self, inst: &Instance) -> Result<(), ModelError> {
        validate_instance(inst, &self.space, &self.required_masks())
    }
}

fn aliases(pairs: &[(&str, &str)]) -> HashMap<String, String> {
    pairs
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect()
}

/// A masked sentence and its gold relation.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub premise: String,
    pub gold: RelationLabel,
}

impl Instance {
    pub fn new(id: impl Into<String>, premise: impl Into<String>, gold: RelationLabel) -> Self {
        Self {
            id: id.into(),
            premise: premise.into(),
            gold,
        }
    }
}

/// Checks mask presence and label membership. Pure; returns nothing on
/// success so callers keep ownership of the instance.
pub fn validate_instance(
    inst: &Instance,
    space: &LabelSpace,
    required_masks: &[&str],
) -> Result<(), ModelError> {
    if let Some(mask) = required_masks.iter().find(|m| !inst.premise.contains(**m)) {
        return Err(ModelError::MissingMask {
            instance: inst.id.clone(),
            mask: mask.to_string(),
        });
    }
    if !space.contains(&inst.gold) {
        return Err(ModelError::UnknownLabel {
            instance: inst.id.clone(),
            label: inst.gold.label_id.clone(),
            dataset: space.dataset_id().to_string(),
        });
    }
    Ok(())
}

/// Per-candidate entailment logits for one instance, aligned with the
/// label space order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub instance_id: String,
    scores: Vec<f64>,
}

impl ScoreVector {
    pub fn new(
        instance_id: impl Into<String>,
        space: &LabelSpace,
        scores: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let instance_id = instance_id.into();
        if scores.len() != space.len() {
            return Err(ModelError::BadScores {
                instance: instance_id,
                reason: format!("{} scores for {} labels", scores.len(), space.len()),
            });
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(ModelError::BadScores {
                instance: instance_id,
                reason: format!("non-finite score for {}", space.label(i)),
            });
        }
        Ok(Self {
            instance_id,
            scores,
        })
    }

    /// Builds from `(label_id, score)` pairs; keys must equal the space.
    pub fn from_pairs<'a>(
        instance_id: impl Into<String>,
        space: &LabelSpace,
        pairs: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Result<Self, ModelError> {
        let instance_id = instance_id.into();
        let mut scores = vec![None; space.len()];
        for (label, score) in pairs {
            let idx = space.index_of(label).ok_or_else(|| ModelError::BadScores {
                instance: instance_id.clone(),
                reason: format!("unknown label {label:?}"),
            })?;
            if scores[idx].replace(score).is_some() {
                return Err(ModelError::BadScores {
                    instance: instance_id,
                    reason: format!("duplicate label {label:?}"),
                });
            }
        }
        let scores = scores
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| ModelError::BadScores {
                    instance: instance_id.clone(),
                    reason: format!("missing label {}", space.label(i)),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(instance_id, space, scores)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn get(&self, space: &LabelSpace, label_id: &str) -> Option<f64> {
        space.index_of(label_id).map(|i| self.scores[i])
    }
}

/// How many negatives enter the contrastive loss per instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Negatives {
    All,
    Sample(NonZeroUsize),
}

impl fmt::Display for Negatives {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Negatives::All => f.write_str("all"),
            Negatives::Sample(n) => write!(f, "{n}"),
        }
    }
}

impl std::str::FromStr for Negatives {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Negatives::All);
        }
        s.parse::<NonZeroUsize>()
            .map(Negatives::Sample)
            .map_err(|_| {
                ModelError::BadLossConfig(format!("negatives must be 'all' or >= 1, got {s:?}"))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub temperature: f64,
    pub margin: f64,
    pub lambda: f64,
    pub negatives: Negatives,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.01,
            margin: 0.7,
            lambda: 1.0,
            negatives: Negatives::All,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ModelError::BadLossConfig(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(ModelError::BadLossConfig(format!(
                "margin must be >= 0, got {}",
                self.margin
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ModelError::BadLossConfig(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub instance_id: String,
    pub predicted: RelationLabel,
    pub scores: ScoreVector,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(premise: &str, spec: &DatasetSpec, label: &str) -> Instance {
        let gold = spec.resolve_label(label).cloned().unwrap_or(RelationLabel {
            dataset_id: "chemprot".into(),
            label_id: label.into(),
            is_abstain: false,
        });
        Instance::new("i0", premise, gold)
    }

    #[test]
    fn builtin_space_sizes() {
        let sizes: Vec<_> = ["chemprot", "ddi", "gad"]
            .iter()
            .map(|d| {
                let spec = DatasetSpec::builtin(d).unwrap();
                (
                    spec.space.len(),
                    spec.space.num_relations(),
                    spec.space.has_abstain(),
                )
            })
            .collect();
        assert_eq!(sizes, vec![(6, 5, true), (5, 4, true), (2, 2, false)]);
    }

    #[test]
    fn validate_ok() {
        let spec = DatasetSpec::chemprot();
        let i = inst("@CHEMICAL$ inhibits @GENE$", &spec, "CPR:4");
        assert_eq!(spec.validate_instance(&i), Ok(()));
        // idempotent
        assert_eq!(spec.validate_instance(&i), Ok(()));
    }

    #[test]
    fn validate_missing_mask() {
        let spec = DatasetSpec::chemprot();
        let i = inst("aspirin inhibits cox2", &spec, "CPR:4");
        assert!(matches!(
            spec.validate_instance(&i),
            Err(ModelError::MissingMask { .. })
        ));
    }

    #[test]
    fn validate_cross_dataset_label() {
        let chem = DatasetSpec::chemprot();
        let ddi = DatasetSpec::ddi();
        let i = inst("@DRUG$ and @DRUG$ interact", &chem, "CPR:4");
        assert!(matches!(
            ddi.validate_instance(&i),
            Err(ModelError::UnknownLabel { .. })
        ));
    }

    #[test]
    fn aliases_resolve_to_abstain() {
        let spec = DatasetSpec::chemprot();
        assert!(spec.resolve_label("false").unwrap().is_abstain);
        assert!(spec.resolve_label("0").unwrap().is_abstain);
        assert!(
            DatasetSpec::ddi()
                .resolve_label("false")
                .unwrap()
                .is_abstain
        );
        assert!(!DatasetSpec::gad().resolve_label("0").unwrap().is_abstain);
    }

    #[test]
    fn duplicate_labels_rejected() {
        assert_eq!(
            LabelSpace::new("x", &["a", "a"], None),
            Err(ModelError::DuplicateLabel("a".into()))
        );
    }

    #[test]
    fn score_vector_keys_must_match() {
        let space = DatasetSpec::gad().space;
        assert!(ScoreVector::from_pairs("x", &space, [("0", 1.0)]).is_err());
        assert!(ScoreVector::from_pairs("x", &space, [("0", 1.0), ("2", 0.0)]).is_err());
        assert!(ScoreVector::new("x", &space, vec![0.0, f64::NAN]).is_err());
        let sv = ScoreVector::from_pairs("x", &space, [("1", 2.0), ("0", 1.0)]).unwrap();
        assert_eq!(sv.scores(), &[1.0, 2.0]);
    }

    #[test]
    fn loss_config_defaults_and_validation() {
        let cfg = LossConfig::default();
        assert_eq!((cfg.temperature, cfg.margin, cfg.lambda), (0.01, 0.7, 1.0));
        assert!(LossConfig {
            temperature: 0.0,
            ..cfg
        }
        .validate()
        .is_err());
        assert!(LossConfig {
            margin: -0.1,
            ..cfg
        }
        .validate()
        .is_err());
        assert_eq!("all".parse::<Negatives>().unwrap(), Negatives::All);
        assert!("0".parse::<Negatives>().is_err());
    }
}
