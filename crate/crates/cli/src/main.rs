mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use entail_re::eval::evaluate_predictions;
use entail_re::experiment::{
    read_classifier_logits, run_experiment, Backend, ExperimentConfig, ExperimentPaths,
};
use entail_re::gradcheck::{self, GradcheckConfig};
use entail_re::inference::InferenceError;
use entail_re::inference::{
    detector_scores, ead_train, ensemble_all, predict, read_predictions, sweep_threshold,
    write_predictions, DetectorScores, Ead, EnsembleInput, Heuristic,
};
use entail_re::ingest::IngestError;
use entail_re::ingest::{
    load_dataset, subsample, write_tsv, DataFormat, SubsampleMode, SubsampleSpec,
};
use entail_re::scorer::{
    Endpoint, ExternalScorer, MockScorer, ScoreRequest, ScoreResponse, Scorer, ScorerError,
    ToyScorerParams,
};
use entail_re::synth::{generate, SynthConfig};
use entail_re::trainer::{train, write_history, TrainConfig};
use entail_re::verbalizer::{
    ExemplarCache, Hypotheses, TemplateBank, TemplateFamily, VerbalizeError,
};
use entail_re::{DatasetSpec, Instance, LossConfig, Negatives, Prediction};

use config::Resolver;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config: exit 2.
    Usage(String),
    /// Unreadable or unwritable files, unreachable adapters: exit 2.
    Io(String),
    /// Invalid data, failed checks, metric below target: exit 1.
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

fn scorer_is_io(e: &ScorerError) -> bool {
    matches!(e, ScorerError::Io(_) | ScorerError::Timeout(_))
}

fn is_io(e: &entail_re::Error) -> bool {
    use entail_re::Error as E;
    match e {
        E::Io(_) | E::Ingest(IngestError::Io { .. }) | E::Verbalize(VerbalizeError::Io(_)) => true,
        E::Scorer(s) | E::Inference(InferenceError::Scorer(s)) => scorer_is_io(s),
        E::Inference(InferenceError::Io(_))
        | E::Inference(InferenceError::Verbalize(VerbalizeError::Io(_))) => true,
        _ => false,
    }
}

impl<T: Into<entail_re::Error>> From<T> for CliError {
    fn from(e: T) -> Self {
        let e = e.into();
        if is_io(&e) {
            CliError::Io(e.to_string())
        } else {
            CliError::Failed(e.to_string())
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "entail-re",
    version,
    about = "Relation extraction as entailment ranking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write one NLI query per candidate label for every instance
    Verbalize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Source of demonstration exemplars; defaults to the input
        #[arg(long)]
        exemplars: Option<PathBuf>,
        /// Output file; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the toy scorer and write a checkpoint plus history
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Rank candidates and write predictions with their scores
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scoring: Scoring,
        #[arg(long)]
        input: PathBuf,
        /// Train split for demonstration exemplars
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a predictions file against gold labels
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Write the JSON report here
        #[arg(long)]
        json: Option<PathBuf>,
        /// Exit 1 when micro-F1 falls below this value
        #[arg(long)]
        min_f1: Option<f64>,
    },
    /// Ensemble ranker predictions with the abstention detector
    Ead {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        #[command(flatten)]
        scoring: Scoring,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        dev_predictions: PathBuf,
        #[arg(long)]
        test_predictions: PathBuf,
        /// `id TAB no_relation TAB has_relation` logits for the
        /// classification heuristic
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        heuristic: Option<Heuristic>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Draw a seeded few-shot or percentage subset
    Subsample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// `k-shot:K`, `percent:P` or `zero-shot`
        #[arg(long)]
        subsample: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check analytic gradients against central finite differences
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
    },
    /// Train, predict, optionally ensemble, and evaluate in one go
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        #[command(flatten)]
        scoring: Scoring,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        subsample: Option<String>,
        #[arg(long)]
        heuristic: Option<Heuristic>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write a synthetic corpus with separable cue phrases
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        n_train: usize,
        #[arg(long, default_value_t = 500)]
        n_dev: usize,
        #[arg(long, default_value_t = 500)]
        n_test: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Serve the scoring protocol on stdin/stdout from a mock table
    #[command(hide = true)]
    ServeMock {
        #[arg(long)]
        mock_table: PathBuf,
        #[arg(long)]
        mock_default: Option<f64>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// chemprot, ddi, gad or synthetic
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    family: Option<TemplateFamily>,
    /// Custom template file replacing the shipped bank
    #[arg(long)]
    templates: Option<String>,
    /// tsv or jsonl; inferred from the extension by default
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct Training {
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// `all` or a sample size
    #[arg(long)]
    negatives: Option<Negatives>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hash_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
}

#[derive(Args, Debug)]
struct Scoring {
    /// toy, mock or external
    #[arg(long)]
    scorer: Option<String>,
    /// Toy scorer checkpoint
    #[arg(long)]
    checkpoint: Option<String>,
    /// `premise TAB hypothesis TAB score` lookup table
    #[arg(long)]
    mock_table: Option<String>,
    /// Score for pairs missing from the mock table
    #[arg(long)]
    mock_default: Option<f64>,
    /// Adapter command line, or `tcp://host:port`
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
}

struct Ctx {
    spec: DatasetSpec,
    family: TemplateFamily,
    templates: Option<PathBuf>,
    format: Option<DataFormat>,
    seed: u64,
    jobs: usize,
}

impl Ctx {
    fn resolve(r: &mut Resolver, c: &Common) -> Result<Self> {
        let name: String = r.get("dataset", c.dataset.clone(), "chemprot".to_string())?;
        let spec = DatasetSpec::builtin(&name).map_err(|e| CliError::Usage(e.to_string()))?;
        let family = r.get("family", c.family, TemplateFamily::Descriptive)?;
        let templates = r
            .opt::<String>("templates", c.templates.clone())?
            .map(PathBuf::from);
        let format = r
            .opt::<String>("format", c.format.clone())?
            .map(|f| f.parse::<DataFormat>().map_err(CliError::Usage))
            .transpose()?;
        let seed = r.get("seed", c.seed, 0)?;
        let jobs = r.get("jobs", c.jobs, 1)?;
        if jobs == 0 {
            return Err(CliError::Usage("jobs must be >= 1".into()));
        }
        Ok(Self {
            spec,
            family,
            templates,
            format,
            seed,
            jobs,
        })
    }

    fn load(&self, path: &Path) -> Result<Vec<Instance>> {
        let format = self.format.unwrap_or_else(|| DataFormat::from_path(path));
        Ok(load_dataset(path, format, &self.spec)?)
    }

    fn bank(&self) -> Result<TemplateBank> {
        Ok(match &self.templates {
            Some(p) => TemplateBank::load(p, &self.spec, self.family)?,
            None => TemplateBank::shipped(&self.spec, self.family)
                .map_err(|e| CliError::Usage(e.to_string()))?,
        })
    }

    /// Hypotheses for the dataset space; demonstration families draw
    /// their exemplars from `pool`.
    fn hypotheses(&self, bank: &TemplateBank, pool: &[Instance]) -> Result<Hypotheses> {
        let ex = self
            .family
            .uses_exemplar()
            .then(|| ExemplarCache::sample(pool, &self.spec.space, self.seed));
        Ok(Hypotheses::new(&self.spec.space, bank, ex.as_ref())?)
    }
}

struct ToyDims {
    hash_dim: usize,
    hidden_dim: usize,
}

fn resolve_training(r: &mut Resolver, t: &Training, seed: u64) -> Result<(TrainConfig, ToyDims)> {
    let d = TrainConfig::default();
    let dl = LossConfig::default();
    let loss = LossConfig {
        temperature: r.get("temperature", t.temperature, dl.temperature)?,
        margin: r.get("margin", t.margin, dl.margin)?,
        lambda: r.get("lambda", t.lambda, dl.lambda)?,
        negatives: r.get("negatives", t.negatives, dl.negatives)?,
    };
    let cfg = TrainConfig {
        epochs: r.get("epochs", t.epochs, d.epochs)?,
        eval_every: r.get("eval-every", t.eval_every, d.eval_every)?,
        step_size: r.get("step-size", t.step_size, d.step_size)?,
        batch_size: r.get("batch-size", t.batch_size, d.batch_size)?,
        seed,
        loss,
        objective: d.objective,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let dims = ToyDims {
        hash_dim: r.get("hash-dim", t.hash_dim, 1 << 16)?,
        hidden_dim: r.get("hidden-dim", t.hidden_dim, 64)?,
    };
    Ok((cfg, dims))
}

/// `toy` yields a checkpoint backend when one is given, else a fresh toy
/// scorer of `dims`; without `dims` the checkpoint is mandatory.
fn resolve_backend(r: &mut Resolver, s: &Scoring, dims: Option<&ToyDims>) -> Result<Backend> {
    let kind: String = r.get("scorer", s.scorer.clone(), "toy".to_string())?;
    match kind.as_str() {
        "toy" => match r.opt::<String>("checkpoint", s.checkpoint.clone())? {
            Some(p) => Ok(Backend::ToyCheckpoint(PathBuf::from(p))),
            None => match dims {
                Some(d) => Ok(Backend::Toy {
                    hash_dim: d.hash_dim,
                    hidden_dim: d.hidden_dim,
                }),
                None => Err(CliError::Usage("the toy scorer needs --checkpoint".into())),
            },
        },
        "mock" => {
            let table = r
                .opt::<String>("mock-table", s.mock_table.clone())?
                .ok_or_else(|| CliError::Usage("the mock scorer needs --mock-table".into()))?;
            Ok(Backend::Mock {
                table: PathBuf::from(table),
                default: r.opt("mock-default", s.mock_default)?,
            })
        }
        "external" => {
            let ep: String = r
                .opt("endpoint", s.endpoint.clone())?
                .ok_or_else(|| CliError::Usage("the external scorer needs --endpoint".into()))?;
            let endpoint: Endpoint = ep.parse().map_err(CliError::Usage)?;
            let ms = r.get("timeout-ms", s.timeout_ms, 60_000)?;
            Ok(Backend::External {
                endpoint,
                timeout: Duration::from_millis(ms),
            })
        }
        other => Err(CliError::Usage(format!(
            "unknown scorer {other:?}; expected toy, mock or external"
        ))),
    }
}

fn open_scorer(backend: &Backend) -> Result<Box<dyn Scorer>> {
    Ok(match backend {
        Backend::ToyCheckpoint(p) => Box::new(ToyScorerParams::load(p)?),
        Backend::Mock { table, default } => Box::new(MockScorer::load(table, *default)?),
        Backend::External { endpoint, timeout } => {
            Box::new(ExternalScorer::new(endpoint.clone()).with_timeout(*timeout))
        }
        Backend::Toy { .. } => {
            return Err(CliError::Usage(
                "a trained checkpoint is required here".into(),
            ))
        }
    })
}

fn parse_subsample(s: &str, seed: u64) -> Result<SubsampleSpec> {
    let bad = || {
        CliError::Usage(format!(
            "bad subsample {s:?}; expected k-shot:K, percent:P or zero-shot"
        ))
    };
    let mode = match s.split_once(':') {
        Some(("k-shot", k)) => SubsampleMode::KShot(k.parse().map_err(|_| bad())?),
        Some(("percent", p)) => SubsampleMode::Percent(p.parse().map_err(|_| bad())?),
        None if s == "zero-shot" => SubsampleMode::ZeroShot,
        _ => return Err(bad()),
    };
    let spec = SubsampleSpec { mode, seed };
    spec.validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(io_at(path))
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn cmd_verbalize(
    common: &Common,
    input: &Path,
    exemplars: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let mut r = Resolver::new(common.config.as_deref())?;
    let ctx = Ctx::resolve(&mut r, common)?;
    r.note("input", input.display());
    r.log("verbalize");
    let bank = ctx.bank()?;
    let data = ctx.load(input)?;
    let pool = match exemplars {
        Some(p) => ctx.load(p)?,
        None => data.clone(),
    };
    let hyps = ctx.hypotheses(&bank, &pool)?;
    let mut w = output(out)?;
    for inst in &data {
        for q in hyps.queries(inst, &ctx.spec.space) {
            writeln!(w, "{}\t{}\t{}", q.query_id(), q.premise, q.hypothesis)
                .map_err(CliError::from)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_train(
    common: &Common,
    training: &Training,
    train_path: &Path,
    dev: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    let mut r = Resolver::new(common.config.as_deref())?;
    let ctx = Ctx::resolve(&mut r, common)?;
    let (cfg, dims) = resolve_training(&mut r, training, ctx.seed)?;
    r.note("train", train_path.display());
    if let Some(d) = dev {
        r.note("dev", d.display());
    }
    r.log("train");
    let bank = ctx.bank()?;
    let train_set = ctx.load(train_path)?;
    let dev_set = match dev {
        Some(p) => ctx.load(p)?,
        None => Vec::new(),
    };
    let hyps = ctx.hypotheses(&bank, &train_set)?;
    let init = ToyScorerParams::new(dims.hash_dim, dims.hidden_dim, ctx.seed)?;
    let outcome = if cfg.epochs == 0 {
        entail_re::trainer::TrainOutcome {
            params: init,
            best_epoch: 0,
            best_dev_f1: None,
            history: Vec::new(),
        }
    } else {
        train(&train_set, &dev_set, &ctx.spec.space, &hyps, init, &cfg)?
    };
    fs::create_dir_all(out_dir).map_err(io_at(out_dir))?;
    let ckpt = out_dir.join("checkpoint.bin");
    outcome.params.save(&ckpt)?;
    let mut h = create(&out_dir.join("history.tsv"))?;
    write_history(&mut h, &outcome.history)?;
    h.flush()?;
    println!("checkpoint={}", ckpt.display());
    println!("checkpoint_sha256={}", sha256_hex(&ckpt)?);
    println!("best_epoch={}", outcome.best_epoch);
    if let Some(f) = outcome.best_dev_f1 {
        println!("best_dev_f1={f:.6}");
    }
    Ok(())
}

fn cmd_predict(
    common: &Common,
    scoring: &Scoring,
    input: &Path,
    train_path: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let mut r = Resolver::new(common.config.as_deref())?;
    let ctx = Ctx::resolve(&mut r, common)?;
    let backend = resolve_backend(&mut r, scoring, None)?;
    r.note("input", input.display());
    r.log("predict");
    let bank = ctx.bank()?;
    let data = ctx.load(input)?;
    let pool = match train_path {
        Some(p) => ctx.load(p)?,
        None if ctx.family.uses_exemplar() => {
            return Err(CliError::Usage(format!(
                "family {} needs --train for its exemplars",
                ctx.family
            )))
        }
        None => Vec::new(),
    };
    let hyps = ctx.hypotheses(&bank, &pool)?;
    let scorer = open_scorer(&backend)?;
    let preds = predict(&scorer, &data, &ctx.spec.space, &hyps, ctx.jobs)?;
    let mut w = output(out)?;
    write_predictions(&mut w, &ctx.spec.space, &preds)?;
    w.flush()?;
    Ok(())
}

fn read_preds(path: &Path, ctx: &Ctx) -> Result<Vec<Prediction>> {
    Ok(read_predictions(open(path)?, &ctx.spec.space)?)
}

fn cmd_eval(
    common: &Common,
    gold: &Path,
    predictions: &Path,
    json: Option<&Path>,
    min_f1: Option<f64>,
) -> Result<()> {
    let mut r = Resolver::new(common.config.as_deref())?;
    let ctx = Ctx::resolve(&mut r, common)?;
    r.note("gold", gold.display());
    r.note("predictions", predictions.display());
    r.log("eval");
    let data = ctx.load(gold)?;
    let preds = read_preds(predictions, &ctx)?;
    let report = evaluate_predictions(&data, &preds, &ctx.spec.space)?;
    print!("{}", report.to_text());
    if let Some(p) = json {
        fs::write(p, report.to_json() + "\n").map_err(io_at(p))?;
    }
    match min_f1 {
        Some(m) if report.micro_f1 < m => Err(CliError::Failed(format!(
            "micro_f1 {:.6} below required {m}",
            report.micro_f1
        ))),
        _ => Ok(()),
    }
}

type EadRow = (String, Vec<f64>, DetectorScores);

fn as_inputs(rows: &[EadRow], heuristic: Heuristic) -> Vec<EnsembleInput<'_>> {
    let classify = heuristic == Heuristic::Classification;
    rows.iter()
        .map(|(id, s, d)| EnsembleInput {
            instance_id: id,
            ranker: s,
            ead: (!classify).then_some(*d),
            classifier: classify.then_some(*d),
        })
        .collect()
}

struct EadArgs<'a> {
    train: Option<&'a Path>,
    dev: &'a Path,
    test: &'a Path,
    dev_predictions: &'a Path,
    test_predictions: &'a Path,
    classifier: Option<&'a Path>,
    heuristic: Option<Heuristic>,
    out_dir: &'a Path,
}

fn cmd_ead(common: &Common, training: &Training, scoring: &Scoring, a: EadArgs<'_>) -> Result<()> {
    let mut r = Resolver::new(common.config.as_deref())?;
    let ctx = Ctx::resolve(&mut r, common)?;
    let (cfg, dims) = resolve_training(&mut r, training, ctx.seed)?;
    let heuristic = r.get("heuristic", a.heuristic, Heuristic::Simple)?;
    let backend = resolve_backend(&mut r, scoring, Some(&dims))?;
    r.log("ead");
    let space = &ctx.spec.space;
    let dev = ctx.load(a.dev)?;
    let test = ctx.load(a.test)?;
    let dev_preds = read_preds(a.dev_predictions, &ctx)?;
    let test_preds = read_preds(a.test_predictions, &ctx)?;
    for (data, preds, what) in [(&dev, &dev_preds, "dev"), (&test, &test_preds, "test")] {
        let ids_match = data.len() == preds.len()
            && data
                .iter()
                .zip(preds.iter())
                .all(|(i, p)| i.id == p.instance_id);
        if !ids_match {
            return Err(CliError::Failed(format!(
                "{what} predictions do not line up with the {what} split"
            )));
        }
    }

    let (dev_det, test_det): (Vec<DetectorScores>, Vec<DetectorScores>) = if heuristic
        == Heuristic::Classification
    {
        let path = a.classifier.ok_or_else(|| {
            CliError::Usage("the classification heuristic needs --classifier".into())
        })?;
        let table = read_classifier_logits(open(path)?)?;
        let look = |d: &[Instance]| {
            d.iter()
                .map(|i| {
                    table.get(&i.id).copied().ok_or_else(|| {
                        CliError::Failed(format!("no classifier logits for instance {}", i.id))
                    })
                })
                .collect::<Result<Vec<_>>>()
        };
        (look(&dev)?, look(&test)?)
    } else {
        let bank = ctx.bank()?;
        match &backend {
            Backend::Toy {
                hash_dim,
                hidden_dim,
            } => {
                let train_path = a
                    .train
                    .ok_or_else(|| CliError::Usage("training the detector needs --train".into()))?;
                let train_set = ctx.load(train_path)?;
                let init = ToyScorerParams::new(*hash_dim, *hidden_dim, ctx.seed.wrapping_add(1))?;
                let ead = ead_train(&train_set, &dev, &ctx.spec, &bank, init, &cfg)?;
                fs::create_dir_all(a.out_dir).map_err(io_at(a.out_dir))?;
                ead.params().save(&a.out_dir.join("detector.bin"))?;
                (
                    ead.detector_scores(ead.params(), &dev, ctx.jobs)?,
                    ead.detector_scores(ead.params(), &test, ctx.jobs)?,
                )
            }
            other => {
                let scorer = open_scorer(other)?;
                let (dspace, dhyps) = Ead::query_space(&ctx.spec, &bank)?;
                (
                    detector_scores(&scorer, &dev, &dspace, &dhyps, ctx.jobs)?,
                    detector_scores(&scorer, &test, &dspace, &dhyps, ctx.jobs)?,
                )
            }
        }
    };

    let inputs = |preds: &'_ [Prediction], det: &[DetectorScores]| -> Vec<EadRow> {
        preds
            .iter()
            .zip(det)
            .map(|(p, d)| (p.instance_id.clone(), p.scores.scores().to_vec(), *d))
            .collect()
    };
    let dev_rows = inputs(&dev_preds, &dev_det);
    let test_rows = inputs(&test_preds, &test_det);
    let dev_golds: Vec<usize> = dev
        .iter()
        .map(|i| space.index_of(&i.gold.label_id).expect("validated on load"))
        .collect();
    let sweep = sweep_threshold(
        space,
        &as_inputs(&dev_rows, heuristic),
        &dev_golds,
        heuristic,
    )?;
    let chosen = ensemble_all(
        space,
        &as_inputs(&test_rows, heuristic),
        sweep.threshold,
        heuristic,
    )?;
    let final_preds: Vec<Prediction> = test_preds
        .iter()
        .zip(chosen)
        .map(|(p, c)| Prediction {
            predicted: space.label(c).clone(),
            ..p.clone()
        })
        .collect();

    fs::create_dir_all(a.out_dir).map_err(io_at(a.out_dir))?;
    let mut w = create(&a.out_dir.join("predictions.tsv"))?;
    write_predictions(&mut w, space, &final_preds)?;
    w.flush()?;
    let mut c = create(&a.out_dir.join("sweep.tsv"))?;
    writeln!(c, "threshold\tdev_f1")?;
    for (t, f) in &sweep.curve {
        writeln!(c, "{t}\t{f}")?;
    }
    c.flush()?;
    let standalone = evaluate_predictions(&test, &test_preds, space)?;
    let report = evaluate_predictions(&test, &final_preds, space)?;
    let mut text = report.to_text();
    text.push_str(&format!(
        "standalone_micro_f1={:.6}\nheuristic={heuristic}\nthreshold={}\ndev_f1={:.6}\n",
        standalone.micro_f1, sweep.threshold, sweep.dev_f1
    ));
    fs::write(a.out_dir.join("report.txt"), &text).map_err(io_at(a.out_dir))?;
    fs::write(a.out_dir.join("report.json"), report.to_json() + "\n").map_err(io_at(a.out_dir))?;
    print!("{text}");
    Ok(())
}

fn cmd_subsample(common: &Common, input: &Path, sub: Option<&str>, out: &Path) -> Result<()> {
    let mut r = Resolver::new(common.config.as_deref())?;
    let ctx = Ctx::resolve(&mut r, common)?;
    let s: String = r
        .opt("subsample", sub.map(str::to_string))?
        .ok_or_else(|| CliError::Usage("--subsample is required".into()))?;
    let spec = parse_subsample(&s, ctx.seed)?;
    r.log("subsample");
    let data = ctx.load(input)?;
    let picked = subsample(&data, &spec, &ctx.spec.space)?;
    let mut w = create(out)?;
    write_tsv(&mut w, &picked)?;
    w.flush()?;
    let mut counts: BTreeMap<&str, usize> = ctx
        .spec
        .space
        .labels()
        .iter()
        .map(|l| (l.label_id.as_str(), 0))
        .collect();
    for i in &picked {
        *counts.entry(i.gold.label_id.as_str()).or_default() += 1;
    }
    for l in ctx.spec.space.labels() {
        println!("{}\t{}", l.label_id, counts[l.label_id.as_str()]);
    }
    println!("total\t{}", picked.len());
    Ok(())
}

fn cmd_gradcheck(seeds: u64, first_seed: u64) -> Result<()> {
    let cfg = GradcheckConfig {
        seeds,
        first_seed,
        ..GradcheckConfig::default()
    };
    eprintln!(
        "# gradcheck\nseeds = {seeds}\nfirst-seed = {first_seed}\nstep = {}\ntolerance = {}",
        cfg.step, cfg.tolerance
    );
    let report = gradcheck::run(&cfg);
    for (target, n) in &report.configs {
        println!("{target}\t{n}");
    }
    println!("coordinates={}", report.coordinates);
    println!("max_rel_error={:e}", report.max_rel_error);
    for f in report.failures.iter().take(20) {
        println!(
            "FAIL {} seed={} index={} analytic={} numeric={} rel_error={:e}",
            f.target, f.seed, f.index, f.analytic, f.numeric, f.rel_error
        );
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "{} gradient checks failed",
            report.failures.len()
        )))
    }
}

struct RunArgs<'a> {
    train: Option<&'a Path>,
    dev: Option<&'a Path>,
    test: &'a Path,
    classifier: Option<&'a Path>,
    subsample: Option<&'a str>,
    heuristic: Option<Heuristic>,
    out_dir: &'a Path,
}

fn cmd_run(common: &Common, training: &Training, scoring: &Scoring, a: RunArgs<'_>) -> Result<()> {
    let mut r = Resolver::new(common.config.as_deref())?;
    let ctx = Ctx::resolve(&mut r, common)?;
    let (cfg, dims) = resolve_training(&mut r, training, ctx.seed)?;
    let backend = resolve_backend(&mut r, scoring, Some(&dims))?;
    let subsample = r
        .opt::<String>("subsample", a.subsample.map(str::to_string))?
        .map(|s| parse_subsample(&s, ctx.seed))
        .transpose()?;
    let heuristic = r.opt("heuristic", a.heuristic)?;
    r.note("out-dir", a.out_dir.display());
    r.log("run");
    let exp = ExperimentConfig {
        dataset: ctx.spec.clone(),
        family: ctx.family,
        templates: ctx.templates.clone(),
        subsample,
        backend,
        train: cfg,
        heuristic,
        jobs: ctx.jobs,
    };
    let paths = ExperimentPaths {
        train: a.train.map(Path::to_path_buf),
        dev: a.dev.map(Path::to_path_buf),
        test: a.test.to_path_buf(),
        classifier: a.classifier.map(Path::to_path_buf),
        out_dir: a.out_dir.to_path_buf(),
    };
    let result = run_experiment(&exp, &paths)?;
    if let Some(ranker) = &result.ranker {
        let ckpt = a.out_dir.join("checkpoint.bin");
        ranker.params.save(&ckpt)?;
        let mut h = create(&a.out_dir.join("history.tsv"))?;
        write_history(&mut h, &ranker.history)?;
        h.flush()?;
    }
    let text = fs::read_to_string(a.out_dir.join("report.txt")).map_err(io_at(a.out_dir))?;
    print!("{text}");
    Ok(())
}

fn cmd_generate(
    seed: u64,
    n_train: usize,
    n_dev: usize,
    n_test: usize,
    out_dir: &Path,
) -> Result<()> {
    let corpus = generate(&SynthConfig {
        n_train,
        n_dev,
        n_test,
        seed,
        ..SynthConfig::default()
    });
    for (name, split) in [
        ("train", &corpus.train),
        ("dev", &corpus.dev),
        ("test", &corpus.test),
    ] {
        let path = out_dir.join(format!("{name}.tsv"));
        let mut w = create(&path)?;
        write_tsv(&mut w, split)?;
        w.flush()?;
        println!("{}\t{}", path.display(), split.len());
    }
    Ok(())
}

/// Answers protocol requests from a mock table; malformed lines get an
/// error record and the stream continues.
fn cmd_serve_mock(table: &Path, default: Option<f64>) -> Result<()> {
    let mock = MockScorer::load(table, default)?;
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for (n, line) in stdin.lock().lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<ScoreRequest>(&line) {
            Ok(req) => {
                let q = entail_re::verbalizer::NliQuery {
                    instance_id: req.id.clone(),
                    candidate: String::new(),
                    premise: req.premise,
                    hypothesis: req.hypothesis,
                };
                match mock.score(&q) {
                    Ok(s) => ScoreResponse {
                        id: req.id,
                        entailment: Some(s),
                        error: None,
                    },
                    Err(e) => ScoreResponse {
                        id: req.id,
                        entailment: None,
                        error: Some(e.to_string()),
                    },
                }
            }
            Err(e) => ScoreResponse {
                id: format!("line:{}", n + 1),
                entailment: None,
                error: Some(e.to_string()),
            },
        };
        writeln!(
            out,
            "{}",
            serde_json::to_string(&resp).expect("response serializes")
        )?;
        out.flush()?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Verbalize {
            common,
            input,
            exemplars,
            out,
        } => cmd_verbalize(common, input, exemplars.as_deref(), out.as_deref()),
        Command::Train {
            common,
            training,
            train,
            dev,
            out_dir,
        } => cmd_train(common, training, train, dev.as_deref(), out_dir),
        Command::Predict {
            common,
            scoring,
            input,
            train,
            out,
        } => cmd_predict(common, scoring, input, train.as_deref(), out.as_deref()),
        Command::Eval {
            common,
            gold,
            predictions,
            json,
            min_f1,
        } => cmd_eval(common, gold, predictions, json.as_deref(), *min_f1),
        Command::Ead {
            common,
            training,
            scoring,
            train,
            dev,
            test,
            dev_predictions,
            test_predictions,
            classifier,
            heuristic,
            out_dir,
        } => cmd_ead(
            common,
            training,
            scoring,
            EadArgs {
                train: train.as_deref(),
                dev,
                test,
                dev_predictions,
                test_predictions,
                classifier: classifier.as_deref(),
                heuristic: *heuristic,
                out_dir,
            },
        ),
        Command::Subsample {
            common,
            input,
            subsample,
            out,
        } => cmd_subsample(common, input, subsample.as_deref(), out),
        Command::Gradcheck { seeds, first_seed } => cmd_gradcheck(*seeds, *first_seed),
        Command::Run {
            common,
            training,
            scoring,
            train,
            dev,
            test,
            classifier,
            subsample,
            heuristic,
            out_dir,
        } => cmd_run(
            common,
            training,
            scoring,
            RunArgs {
                train: train.as_deref(),
                dev: dev.as_deref(),
                test,
                classifier: classifier.as_deref(),
                subsample: subsample.as_deref(),
                heuristic: *heuristic,
                out_dir,
            },
        ),
        Command::Generate {
            seed,
            n_train,
            n_dev,
            n_test,
            out_dir,
        } => cmd_generate(*seed, *n_train, *n_dev, *n_test, out_dir),
        Command::ServeMock {
            mock_table,
            mock_default,
        } => cmd_serve_mock(mock_table, *mock_default),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("entail-re: {e}");
            ExitCode::from(e.code())
        }
    }
}
