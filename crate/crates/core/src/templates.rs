//! Shipped hypothesis templates for ChemProt, DDI and GAD.
//!
//! Strings are kept exactly as published, typos included
//! ("bewteen", "a upregulator", the missing `@` in the ChemProt CPR:9
//! descriptive+demonstration row). Typographic quotes are rendered as
//! ASCII `"`. Demonstration rows keep their published train exemplar as
//! the default filler of the `<example sentence>` slot.

use crate::verbalizer::TemplateFamily;

/// `(label_id, pattern, default exemplar)`.
pub(crate) type Row = (&'static str, &'static str, Option<&'static str>);

const CHEMPROT_NONE: &str = "@CHEMICAL$ and @GENE$ have no relation.";
const DDI_NONE: &str = "@DRUG$ and @DRUG$ are not interacting.";

const CP_EX_3: &str = "@CHEMICAL$ selectively induced @GENE$ in four studied HCC cell lines.";
const CP_EX_4: &str = "@CHEMICAL$, a new @GENE$ inhibitor for the management of obesity.";
const CP_EX_5: &str = "Pharmacology of @CHEMICAL$, a selective @GENE$/MT2 receptor agonist: a novel therapeutic drug for sleep disorders.";
const CP_EX_6: &str = "@CHEMICAL$ is an @GENE$ antagonist that is metabolized primarily by glucuronidation but also undergoes oxidative metabolism by CYP3A4.";
const CP_EX_9: &str =
    "For determination of [@GENE$+Pli]-activity, @CHEMICAL$ was added after this incubation.";

const DDI_EX_ADVISE: &str = "perhexiline hydrogen maleate or @DRUG$ (with hepatotoxic potential) must not be administered together with @DRUG$ or Bezalip retard.";
const DDI_EX_EFFECT: &str = "@DRUG$ administered concurrently with @DRUG$ reduced the urine volume in 4 healthy volunteers.";
const DDI_EX_INT: &str =
    "@DRUG$ may interact with @DRUG$, butyrophenones, and certain other agents.";
const DDI_EX_MECH: &str =
    "@DRUG$, enflurane, and halothane decrease the ED50 of @DRUG$ by 30% to 45%.";

static CHEMPROT_SIMPLE: [Row; 6] = [
    ("false", CHEMPROT_NONE, None),
    ("CPR:3", "@CHEMICAL$ is a upregulator to @GENE$.", None),
    ("CPR:4", "@CHEMICAL$ is a downregulator to @GENE$.", None),
    ("CPR:5", "@CHEMICAL$ is a agonist to @GENE$.", None),
    ("CPR:6", "@CHEMICAL$ is a antagonist to @GENE$.", None),
    ("CPR:9", "@CHEMICAL$ is a substrate to @GENE$.", None),
];

static CHEMPROT_DESCRIPTIVE: [Row; 6] = [
    ("false", CHEMPROT_NONE, None),
    (
        "CPR:3",
        "Upregulator @CHEMICAL$ is activated by @GENE$.",
        None,
    ),
    (
        "CPR:4",
        "Downregulator @CHEMICAL$ is designed as an inhibitor of @GENE$.",
        None,
    ),
    (
        "CPR:5",
        "Activity of agonist @CHEMICAL$ is mediated by @GENE$.",
        None,
    ),
    (
        "CPR:6",
        "@CHEMICAL$ is identified as an antagonist of @GENE$.",
        None,
    ),
    ("CPR:9", "@CHEMICAL$ is a substrate for @GENE$.", None),
];

const CP_DEMO: &str =
    "Relation of @CHEMICAL$ to @GENE$ is similar to relation described in \"<example sentence>\"";

static CHEMPROT_DEMONSTRATION: [Row; 6] = [
    ("false", CHEMPROT_NONE, None),
    ("CPR:3", CP_DEMO, Some(CP_EX_3)),
    ("CPR:4", CP_DEMO, Some(CP_EX_4)),
    ("CPR:5", CP_DEMO, Some(CP_EX_5)),
    ("CPR:6", CP_DEMO, Some(CP_EX_6)),
    ("CPR:9", CP_DEMO, Some(CP_EX_9)),
];

static CHEMPROT_DESCRIPTIVE_DEMONSTRATION: [Row; 6] = [
    ("false", CHEMPROT_NONE, None),
    (
        "CPR:3",
        "Upregulator @CHEMICAL$ is activated by @GENE$, similar to relation described in \"<example sentence>\"",
        Some(CP_EX_3),
    ),
    (
        "CPR:4",
        "Downregulator @CHEMICAL$ is designed as an inhibitor of @GENE$, similar to relation described in \"<example sentence>\"",
        Some(CP_EX_4),
    ),
    (
        "CPR:5",
        "Activity of agonist @CHEMICAL$ is mediated by @GENE$, similar to relation described in \"<example sentence>\"",
        Some(CP_EX_5),
    ),
    (
        "CPR:6",
        "@CHEMICAL$ is identified as an antagonist of @GENE$, similar to relation described in \"<example sentence>\"",
        Some(CP_EX_6),
    ),
    (
        "CPR:9",
        "CHEMICAL$ is a substrate for @GENE$, similar to relation described in \"<example sentence>\"",
        Some(CP_EX_9),
    ),
];

static CHEMPROT_LEARNED: [Row; 6] = [
    ("false", CHEMPROT_NONE, None),
    ("CPR:3", "@CHEMICAL$ is activated by @GENE$.", None),
    ("CPR:4", "@CHEMICAL$ activity inhibited by @GENE$.", None),
    ("CPR:5", "@CHEMICAL$ agonist actions of @GENE$.", None),
    (
        "CPR:6",
        "@CHEMICAL$ identified are antagonists @GENE$.",
        None,
    ),
    ("CPR:9", "@CHEMICAL$ is substrate for @GENE$.", None),
];

static DDI_SIMPLE: [Row; 5] = [
    ("DDI-false", DDI_NONE, None),
    (
        "DDI-advise",
        "Interaction described bewteen two @DRUG$ and @DRUG$ is about advise.",
        None,
    ),
    (
        "DDI-effect",
        "Interaction described bewteen two @DRUG$ and @DRUG$ is about effect.",
        None,
    ),
    (
        "DDI-int",
        "Interaction described bewteen two @DRUG$ and @DRUG$ might or maybe occur.",
        None,
    ),
    (
        "DDI-mechanism",
        "Interaction described bewteen two @DRUG$ and @DRUG$ is about mechanism.",
        None,
    ),
];

static DDI_DESCRIPTIVE: [Row; 5] = [
    ("DDI-false", DDI_NONE, None),
    (
        "DDI-advise",
        "A recommendation or advice regarding two @DRUG$ is described.",
        None,
    ),
    (
        "DDI-effect",
        "Medical effect regarding two @DRUG$ is described.",
        None,
    ),
    (
        "DDI-int",
        "Interaction regarding two @DRUG$ might or maybe occur.",
        None,
    ),
    (
        "DDI-mechanism",
        "Pharmacokinetic mechanism regarding two @DRUG$ is described.",
        None,
    ),
];

// The published int/mechanism rows lack the opening quote.
static DDI_DEMONSTRATION: [Row; 5] = [
    ("DDI-false", DDI_NONE, None),
    (
        "DDI-advise",
        "The interaction between two @DRUG$ is the same as \"<example sentence>\"",
        Some(DDI_EX_ADVISE),
    ),
    (
        "DDI-effect",
        "The interaction between two @DRUG$ is the same as \"<example sentence>\"",
        Some(DDI_EX_EFFECT),
    ),
    (
        "DDI-int",
        "Interaction between two @DRUG$ is the same as <example sentence>\"",
        Some(DDI_EX_INT),
    ),
    (
        "DDI-mechanism",
        "The interaction between two @DRUG$ is the same as <example sentence>\"",
        Some(DDI_EX_MECH),
    ),
];

static DDI_DESCRIPTIVE_DEMONSTRATION: [Row; 5] = [
    ("DDI-false", DDI_NONE, None),
    (
        "DDI-advise",
        "A recommendation or advice regarding two @DRUG$ is described, similar to \"<example sentence>\"",
        Some(DDI_EX_ADVISE),
    ),
    (
        "DDI-effect",
        "Medical effect regarding two @DRUG$ is described, similar to \"<example sentence>\"",
        Some(DDI_EX_EFFECT),
    ),
    (
        "DDI-int",
        "Interaction regarding two @DRUG$ might or maybe occur, similar to <example sentence>\"",
        Some(DDI_EX_INT),
    ),
    (
        "DDI-mechanism",
        "Pharmacokinetic mechanism regarding two @DRUG$ is described, similar to \"<example sentence>\"",
        Some(DDI_EX_MECH),
    ),
];

static GAD_DESCRIPTIVE: [Row; 2] = [
    (
        "0",
        "There is no relation between @GENE$ and @DISEASE$.",
        None,
    ),
    ("1", "@GENE$ and @DISEASE$ are correlated.", None),
];

static SYNTHETIC_DESCRIPTIVE: [Row; 5] = [
    ("none", "@HEAD$ and @TAIL$ have no relation.", None),
    ("REL:1", "@HEAD$ activates @TAIL$.", None),
    ("REL:2", "@HEAD$ inhibits @TAIL$.", None),
    ("REL:3", "@HEAD$ binds to @TAIL$.", None),
    ("REL:4", "@HEAD$ is a substrate of @TAIL$.", None),
];

pub(crate) fn shipped_rows(dataset: &str, family: TemplateFamily) -> Option<&'static [Row]> {
    use TemplateFamily::*;
    let rows: &'static [Row] = match (dataset, family) {
        ("chemprot", Simple) => &CHEMPROT_SIMPLE,
        ("chemprot", Descriptive) => &CHEMPROT_DESCRIPTIVE,
        ("chemprot", Demonstration) => &CHEMPROT_DEMONSTRATION,
        ("chemprot", DescriptiveDemonstration) => &CHEMPROT_DESCRIPTIVE_DEMONSTRATION,
        ("chemprot", LearnedPrompt) => &CHEMPROT_LEARNED,
        ("ddi", Simple) => &DDI_SIMPLE,
        ("ddi", Descriptive) => &DDI_DESCRIPTIVE,
        ("ddi", Demonstration) => &DDI_DEMONSTRATION,
        ("ddi", DescriptiveDemonstration) => &DDI_DESCRIPTIVE_DEMONSTRATION,
        ("gad", Descriptive) => &GAD_DESCRIPTIVE,
        ("synthetic", Descriptive) => &SYNTHETIC_DESCRIPTIVE,
        _ => return None,
    };
    Some(rows)
}
