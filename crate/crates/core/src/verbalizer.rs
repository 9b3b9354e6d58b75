//! Relation verbalization: label → hypothesis sentence, and instance →
//! one NLI query per candidate label.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DatasetSpec, Instance, LabelSpace, RelationLabel};
use crate::templates;

/// Placeholder replaced by a train exemplar in demonstration templates.
pub const EXEMPLAR_SLOT: &str = "<example sentence>";

pub const EAD_HAS_RELATION: &str = "has-relation";
pub const EAD_NO_RELATION: &str = "no-relation";

#[derive(Debug, Error)]
pub enum VerbalizeError {
    #[error("no {family} template for label {label:?} in {dataset} bank")]
    MissingTemplate {
        dataset: String,
        family: TemplateFamily,
        label: String,
    },
    #[error("no exemplar available for demonstration template of label {0:?}")]
    MissingExemplar(String),
    #[error("{family} templates are not available for {dataset}")]
    FamilyUnavailable {
        dataset: String,
        family: TemplateFamily,
    },
    #[error("template for {label:?}: {reason}")]
    BadTemplate { label: String, reason: String },
    #[error("unknown template family {0:?}")]
    UnknownFamily(String),
    #[error("template file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TemplateFamily {
    Simple,
    Descriptive,
    Demonstration,
    DescriptiveDemonstration,
    LearnedPrompt,
}

impl TemplateFamily {
    pub const ALL: [TemplateFamily; 5] = [
        TemplateFamily::Simple,
        TemplateFamily::Descriptive,
        TemplateFamily::Demonstration,
        TemplateFamily::DescriptiveDemonstration,
        TemplateFamily::LearnedPrompt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateFamily::Simple => "simple",
            TemplateFamily::Descriptive => "descriptive",
            TemplateFamily::Demonstration => "demonstration",
            TemplateFamily::DescriptiveDemonstration => "descriptive+demonstration",
            TemplateFamily::LearnedPrompt => "learned-prompt",
        }
    }

    pub fn uses_exemplar(self) -> bool {
        matches!(
            self,
            TemplateFamily::Demonstration | TemplateFamily::DescriptiveDemonstration
        )
    }
}

impl fmt::Display for TemplateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TemplateFamily {
    type Err = VerbalizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| VerbalizeError::UnknownFamily(s.to_string()))
    }
}

impl TryFrom<String> for TemplateFamily {
    type Error = VerbalizeError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<TemplateFamily> for String {
    fn from(f: TemplateFamily) -> Self {
        f.as_str().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub label_id: String,
    pub family: TemplateFamily,
    pub pattern: String,
    /// Default filler for the exemplar slot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplar: Option<String>,
}

impl Template {
    pub fn has_slot(&self) -> bool {
        self.pattern.contains(EXEMPLAR_SLOT)
    }

    fn render(&self, exemplar: Option<&str>) -> Result<String, VerbalizeError> {
        if !self.has_slot() {
            return Ok(self.pattern.clone());
        }
        let ex = exemplar
            .or(self.exemplar.as_deref())
            .ok_or_else(|| VerbalizeError::MissingExemplar(self.label_id.clone()))?;
        Ok(self.pattern.replacen(EXEMPLAR_SLOT, ex, 1))
    }
}

/// One template per label for one family of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateBank {
    pub dataset_id: String,
    pub family: TemplateFamily,
    templates: HashMap<String, Template>,
}

impl TemplateBank {
    /// Builds a bank and checks coverage of `spec`'s label space and mask
    /// presence. Demonstration templates may take masks from the exemplar.
    pub fn new(
        spec: &DatasetSpec,
        family: TemplateFamily,
        templates: impl IntoIterator<Item = Template>,
    ) -> Result<Self, VerbalizeError> {
        Self::with_space(&spec.space, &spec.required_masks(), family, templates)
    }

    fn with_space(
        space: &LabelSpace,
        masks: &[&str],
        family: TemplateFamily,
        templates: impl IntoIterator<Item = Template>,
    ) -> Result<Self, VerbalizeError> {
        let mut map = HashMap::new();
        for t in templates {
            if t.family != family {
                continue;
            }
            if space.index_of(&t.label_id).is_none() {
                return Err(VerbalizeError::BadTemplate {
                    label: t.label_id.clone(),
                    reason: format!("label not in {} space", space.dataset_id()),
                });
            }
            check_masks(&t, masks)?;
            if map.insert(t.label_id.clone(), t.clone()).is_some() {
                return Err(VerbalizeError::BadTemplate {
                    label: t.label_id,
                    reason: "duplicate template".into(),
                });
            }
        }
        if let Some(missing) = space
            .labels()
            .iter()
            .find(|l| !map.contains_key(&l.label_id))
        {
            return Err(VerbalizeError::MissingTemplate {
                dataset: space.dataset_id().to_string(),
                family,
                label: missing.label_id.clone(),
            });
        }
        Ok(Self {
            dataset_id: space.dataset_id().to_string(),
            family,
            templates: map,
        })
    }

    /// The published bank for a builtin dataset.
    pub fn shipped(spec: &DatasetSpec, family: TemplateFamily) -> Result<Self, VerbalizeError> {
        let rows = templates::shipped_rows(spec.id(), family).ok_or_else(|| {
            VerbalizeError::FamilyUnavailable {
                dataset: spec.id().to_string(),
                family,
            }
        })?;
        let ts = rows.iter().map(|&(label, pattern, ex)| Template {
            label_id: label.to_string(),
            family,
            pattern: pattern.to_string(),
            exemplar: ex.map(str::to_string),
        });
        Self::new(spec, family, ts)
    }

    /// Families with a shipped bank for `dataset`.
    pub fn shipped_families(dataset: &str) -> Vec<TemplateFamily> {
        TemplateFamily::ALL
            .into_iter()
            .filter(|&f| templates::shipped_rows(dataset, f).is_some())
            .collect()
    }

    /// Reads a template file (TSV `label_id TAB family TAB pattern [TAB
    /// exemplar]`, or JSONL when the extension is `.jsonl`) and keeps the
    /// rows of `family`.
    pub fn load(
        path: &Path,
        spec: &DatasetSpec,
        family: TemplateFamily,
    ) -> Result<Self, VerbalizeError> {
        let text = fs::read_to_string(path)?;
        let jsonl = path.extension().is_some_and(|e| e == "jsonl");
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let t = if jsonl {
                serde_json::from_str::<Template>(line).map_err(|e| VerbalizeError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?
            } else {
                parse_tsv_row(line, i + 1)?
            };
            rows.push(t);
        }
        Self::new(spec, family, rows)
    }

    pub fn write_tsv<W: Write>(&self, space: &LabelSpace, mut w: W) -> std::io::Result<()> {
        for label in space.labels() {
            if let Some(t) = self.templates.get(&label.label_id) {
                write!(w, "{}\t{}\t{}", t.label_id, t.family, t.pattern)?;
                if let Some(ex) = &t.exemplar {
                    write!(w, "\t{ex}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn get(&self, label_id: &str) -> Option<&Template> {
        self.templates.get(label_id)
    }

    /// Binary bank for the abstention detector: the dataset's ⊥ template for
    /// "no-relation" and a generic existence phrase for "has-relation".
    pub fn abstention_detector(&self, spec: &DatasetSpec) -> Result<Self, VerbalizeError> {
        let abstain =
            spec.space
                .abstain_index()
                .ok_or_else(|| VerbalizeError::FamilyUnavailable {
                    dataset: spec.id().to_string(),
                    family: self.family,
                })?;
        let none = self.templates[&spec.space.label(abstain).label_id].clone();
        let [m1, m2] = &spec.entity_masks;
        let templates = [
            Template {
                label_id: EAD_NO_RELATION.to_string(),
                ..none
            },
            Template {
                label_id: EAD_HAS_RELATION.to_string(),
                family: self.family,
                pattern: format!("Relation exists between {m1} and {m2}."),
                exemplar: None,
            },
        ];
        let space = ead_space(spec);
        Self::with_space(&space, &spec.required_masks(), self.family, templates)
    }
}

/// Label space of the abstention detector: `[no-relation (⊥), has-relation]`.
pub fn ead_space(spec: &DatasetSpec) -> LabelSpace {
    LabelSpace::new(
        &format!("{}-ead", spec.id()),
        &[EAD_NO_RELATION, EAD_HAS_RELATION],
        Some(EAD_NO_RELATION),
    )
    .expect("static label space")
}

fn parse_tsv_row(line: &str, lineno: usize) -> Result<Template, VerbalizeError> {
    let cols: Vec<&str> = line.split('\t').collect();
    let (label, family, pattern, exemplar) = match cols.as_slice() {
        [l, f, p] => (l, f, p, None),
        [l, f, p, e] => (l, f, p, Some(e.to_string())),
        _ => {
            return Err(VerbalizeError::Parse {
                line: lineno,
                msg: format!("expected 3 or 4 columns, found {}", cols.len()),
            })
        }
    };
    Ok(Template {
        label_id: label.to_string(),
        family: family.parse()?,
        pattern: pattern.to_string(),
        exemplar,
    })
}

fn check_masks(t: &Template, masks: &[&str]) -> Result<(), VerbalizeError> {
    if t.family.uses_exemplar() && t.has_slot() {
        let rendered = t
            .pattern
            .replacen(EXEMPLAR_SLOT, t.exemplar.as_deref().unwrap_or(""), 1);
        // A slot without a default exemplar is filled from masked train
        // premises, which carry the masks themselves.
        if t.exemplar.is_none() || masks.iter().all(|m| rendered.contains(m)) {
            return Ok(());
        }
        return Err(VerbalizeError::BadTemplate {
            label: t.label_id.clone(),
            reason: "rendered hypothesis lacks a required mask".into(),
        });
    }
    if let Some(m) = masks.iter().find(|m| !t.pattern.contains(**m)) {
        return Err(VerbalizeError::BadTemplate {
            label: t.label_id.clone(),
            reason: format!("pattern lacks mask {m}"),
        });
    }
    Ok(())
}

/// Train exemplars for demonstration templates, drawn once per
/// `(label, seed)` so training and inference see identical hypotheses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExemplarCache {
    by_label: HashMap<String, String>,
}

impl ExemplarCache {
    pub fn sample(train: &[Instance], space: &LabelSpace, seed: u64) -> Self {
        let mut by_label = HashMap::new();
        for label in space.labels().iter().filter(|l| !l.is_abstain) {
            let pool: Vec<&Instance> = train
                .iter()
                .filter(|i| i.gold.label_id == label.label_id)
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(label.label_id.as_bytes()));
            if let Some(inst) = pool.choose(&mut rng) {
                by_label.insert(label.label_id.clone(), inst.premise.clone());
            }
        }
        Self { by_label }
    }

    pub fn get(&self, label_id: &str) -> Option<&str> {
        self.by_label.get(label_id).map(String::as_str)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Hypothesis for `label`. Demonstration families fill the exemplar slot
/// from `exemplars` when given, else from the template's own exemplar.
pub fn verbalize(
    label: &RelationLabel,
    bank: &TemplateBank,
    exemplars: Option<&ExemplarCache>,
) -> Result<String, VerbalizeError> {
    let t = bank
        .get(&label.label_id)
        .ok_or_else(|| VerbalizeError::MissingTemplate {
            dataset: bank.dataset_id.clone(),
            family: bank.family,
            label: label.label_id.clone(),
        })?;
    t.render(exemplars.and_then(|c| c.get(&label.label_id)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliQuery {
    pub instance_id: String,
    pub candidate: String,
    pub premise: String,
    pub hypothesis: String,
}

impl NliQuery {
    /// Wire id used by the batch scoring protocol.
    pub fn query_id(&self) -> String {
        format!("{}::{}", self.instance_id, self.candidate)
    }
}

/// Hypotheses for every label of a space, in space order. Computed once
/// and reused for every instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypotheses {
    texts: Vec<String>,
}

impl Hypotheses {
    pub fn new(
        space: &LabelSpace,
        bank: &TemplateBank,
        exemplars: Option<&ExemplarCache>,
    ) -> Result<Self, VerbalizeError> {
        let texts = space
            .labels()
            .iter()
            .map(|l| verbalize(l, bank, exemplars))
            .collect::<Result<_, _>>()?;
        Ok(Self { texts })
    }

    pub fn get(&self, idx: usize) -> &str {
        &self.texts[idx]
    }

    pub fn as_slice(&self) -> &[String] {
        &self.texts
    }

    pub fn queries(&self, inst: &Instance, space: &LabelSpace) -> Vec<NliQuery> {
        space
            .labels()
            .iter()
            .zip(&self.texts)
            .map(|(label, h)| NliQuery {
                instance_id: inst.id.clone(),
                candidate: label.label_id.clone(),
                premise: inst.premise.clone(),
                hypothesis: h.clone(),
            })
            .collect()
    }
}

/// One query per label (|Y| + 1 with abstention), in label-space order.
pub fn build_queries(
    inst: &Instance,
    space: &LabelSpace,
    bank: &TemplateBank,
    exemplars: Option<&ExemplarCache>,
) -> Result<Vec<NliQuery>, VerbalizeError> {
    Ok(Hypotheses::new(space, bank, exemplars)?.queries(inst, space))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(spec: &DatasetSpec, id: &str) -> RelationLabel {
        spec.space.get(id).unwrap().clone()
    }

    #[test]
    fn gad_descriptive() {
        let spec = DatasetSpec::gad();
        let bank = TemplateBank::shipped(&spec, TemplateFamily::Descriptive).unwrap();
        assert_eq!(
            verbalize(&label(&spec, "1"), &bank, None).unwrap(),
            "@GENE$ and @DISEASE$ are correlated."
        );
    }

    #[test]
    fn chemprot_descriptive() {
        let spec = DatasetSpec::chemprot();
        let bank = TemplateBank::shipped(&spec, TemplateFamily::Descriptive).unwrap();
        assert_eq!(
            verbalize(&label(&spec, "CPR:4"), &bank, None).unwrap(),
            "Downregulator @CHEMICAL$ is designed as an inhibitor of @GENE$."
        );
    }

    #[test]
    fn ddi_abstain_same_for_every_family() {
        let spec = DatasetSpec::ddi();
        for family in TemplateBank::shipped_families("ddi") {
            let bank = TemplateBank::shipped(&spec, family).unwrap();
            assert_eq!(
                verbalize(&label(&spec, "DDI-false"), &bank, None).unwrap(),
                "@DRUG$ and @DRUG$ are not interacting."
            );
        }
    }

    #[test]
    fn unavailable_families() {
        assert!(matches!(
            TemplateBank::shipped(&DatasetSpec::gad(), TemplateFamily::Simple),
            Err(VerbalizeError::FamilyUnavailable { .. })
        ));
        assert!(matches!(
            TemplateBank::shipped(&DatasetSpec::ddi(), TemplateFamily::LearnedPrompt),
            Err(VerbalizeError::FamilyUnavailable { .. })
        ));
    }

    #[test]
    fn missing_template_error() {
        let spec = DatasetSpec::gad();
        let bank = TemplateBank::shipped(&spec, TemplateFamily::Descriptive).unwrap();
        let foreign = label(&DatasetSpec::chemprot(), "CPR:4");
        assert!(matches!(
            verbalize(&foreign, &bank, None),
            Err(VerbalizeError::MissingTemplate { .. })
        ));
    }

    #[test]
    fn query_counts_and_premises() {
        let chem = DatasetSpec::chemprot();
        let bank = TemplateBank::shipped(&chem, TemplateFamily::Descriptive).unwrap();
        let inst = Instance::new("x", "@CHEMICAL$ blocks @GENE$", label(&chem, "CPR:4"));
        let qs = build_queries(&inst, &chem.space, &bank, None).unwrap();
        assert_eq!(qs.len(), 6);
        assert!(qs.iter().all(|q| q.premise == inst.premise));
        let order: Vec<_> = qs.iter().map(|q| q.candidate.as_str()).collect();
        assert_eq!(
            order,
            ["false", "CPR:3", "CPR:4", "CPR:5", "CPR:6", "CPR:9"]
        );

        let gad = DatasetSpec::gad();
        let bank = TemplateBank::shipped(&gad, TemplateFamily::Descriptive).unwrap();
        let inst = Instance::new("g", "@GENE$ in @DISEASE$", label(&gad, "1"));
        assert_eq!(
            build_queries(&inst, &gad.space, &bank, None).unwrap().len(),
            2
        );
    }

    #[test]
    fn demonstration_uses_sampled_exemplar() {
        let spec = DatasetSpec::chemprot();
        let bank = TemplateBank::shipped(&spec, TemplateFamily::Demonstration).unwrap();
        let train: Vec<Instance> = (0..5)
            .map(|i| {
                Instance::new(
                    format!("t{i}"),
                    format!("@CHEMICAL$ variant {i} of @GENE$"),
                    label(&spec, "CPR:4"),
                )
            })
            .collect();
        let a = ExemplarCache::sample(&train, &spec.space, 7);
        let b = ExemplarCache::sample(&train, &spec.space, 7);
        assert_eq!(a, b);
        let h = verbalize(&label(&spec, "CPR:4"), &bank, Some(&a)).unwrap();
        assert!(h.starts_with("Relation of @CHEMICAL$ to @GENE$ is similar to relation described in \"@CHEMICAL$ variant"));
        // labels without train instances fall back to the shipped exemplar
        let h3 = verbalize(&label(&spec, "CPR:3"), &bank, Some(&a)).unwrap();
        assert!(h3.contains("selectively induced"));
    }

    #[test]
    fn slot_without_exemplar_errors() {
        let spec = DatasetSpec::gad();
        let ts = [
            Template {
                label_id: "0".into(),
                family: TemplateFamily::Demonstration,
                pattern: "No link between @GENE$ and @DISEASE$.".into(),
                exemplar: None,
            },
            Template {
                label_id: "1".into(),
                family: TemplateFamily::Demonstration,
                pattern: "Like <example sentence>".into(),
                exemplar: None,
            },
        ];
        let bank = TemplateBank::new(&spec, TemplateFamily::Demonstration, ts).unwrap();
        assert!(matches!(
            verbalize(&label(&spec, "1"), &bank, None),
            Err(VerbalizeError::MissingExemplar(_))
        ));
    }

    #[test]
    fn custom_bank_rejects_missing_mask() {
        let spec = DatasetSpec::gad();
        let ts = [
            Template {
                label_id: "0".into(),
                family: TemplateFamily::Simple,
                pattern: "@GENE$ unrelated".into(),
                exemplar: None,
            },
            Template {
                label_id: "1".into(),
                family: TemplateFamily::Simple,
                pattern: "@GENE$ causes @DISEASE$".into(),
                exemplar: None,
            },
        ];
        assert!(matches!(
            TemplateBank::new(&spec, TemplateFamily::Simple, ts),
            Err(VerbalizeError::BadTemplate { .. })
        ));
    }

    #[test]
    fn ead_bank_uses_existence_phrase() {
        let spec = DatasetSpec::chemprot();
        let bank = TemplateBank::shipped(&spec, TemplateFamily::Descriptive).unwrap();
        let ead = bank.abstention_detector(&spec).unwrap();
        let space = ead_space(&spec);
        let hyps = Hypotheses::new(&space, &ead, None).unwrap();
        assert_eq!(
            hyps.as_slice(),
            &[
                "@CHEMICAL$ and @GENE$ have no relation.".to_string(),
                "Relation exists between @CHEMICAL$ and @GENE$.".to_string()
            ]
        );
    }

    #[test]
    fn family_names_round_trip() {
        for f in TemplateFamily::ALL {
            assert_eq!(f.as_str().parse::<TemplateFamily>().unwrap(), f);
        }
        assert!("fancy".parse::<TemplateFamily>().is_err());
    }
}
