//! End-to-end runs: ingest, subsample, verbalize, train or load a scorer,
//! predict, optionally ensemble with the abstention detector, evaluate.

use std::collections::HashMap;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::eval::{evaluate_predictions, micro_f1, EvalReport};
use crate::inference::{
    detector_scores, ead_train, ensemble_all, prediction_from_scores, score_instances,
    sweep_threshold, write_predictions, DetectorScores, EnsembleInput, Heuristic, SweepResult,
};
use crate::ingest::{load_dataset, subsample, DataFormat, SubsampleSpec};
use crate::model::{DatasetSpec, Instance, Prediction};
use crate::scorer::{Endpoint, ExternalScorer, MockScorer, Scorer, ToyScorerParams};
use crate::trainer::{train, TrainConfig, TrainOutcome};
use crate::verbalizer::{ExemplarCache, Hypotheses, TemplateBank, TemplateFamily};
use crate::Error;

/// Where entailment scores come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    /// Train a fresh toy scorer on the (subsampled) train split.
    Toy { hash_dim: usize, hidden_dim: usize },
    /// Load a trained toy checkpoint.
    ToyCheckpoint(PathBuf),
    Mock {
        table: PathBuf,
        default: Option<f64>,
    },
    External {
        endpoint: Endpoint,
        timeout: Duration,
    },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub family: TemplateFamily,
    /// Custom template file; the shipped bank is used otherwise.
    pub templates: Option<PathBuf>,
    pub subsample: Option<SubsampleSpec>,
    pub backend: Backend,
    pub train: TrainConfig,
    /// Ensemble heuristic; `None` runs the ranker alone.
    pub heuristic: Option<Heuristic>,
    pub jobs: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentData {
    pub train: Vec<Instance>,
    pub dev: Vec<Instance>,
    pub test: Vec<Instance>,
    /// External binary classifier logits by instance id, for the
    /// classification heuristic.
    pub classifier: Option<HashMap<String, DetectorScores>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// Test report of the final predictions (ensembled when a heuristic
    /// is set).
    pub report: EvalReport,
    /// Test report of the ranker alone.
    pub standalone: EvalReport,
    pub sweep: Option<SweepResult>,
    pub ranker: Option<TrainOutcome>,
    pub detector: Option<TrainOutcome>,
    pub predictions: Vec<Prediction>,
    /// Argmax predictions of the ranker alone.
    pub standalone_predictions: Vec<Prediction>,
    pub train_size: usize,
}

/// Paths for [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentPaths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: PathBuf,
    /// `id TAB no_relation TAB has_relation` logits covering dev and test.
    pub classifier: Option<PathBuf>,
    pub out_dir: PathBuf,
}

fn load_opt(path: &Option<PathBuf>, spec: &DatasetSpec) -> Result<Vec<Instance>, Error> {
    match path {
        Some(p) => Ok(load_dataset(p, DataFormat::from_path(p), spec)?),
        None => Ok(Vec::new()),
    }
}

/// Reads `id TAB no_relation TAB has_relation` rows.
pub fn read_classifier_logits<R: BufRead>(
    reader: R,
) -> Result<HashMap<String, DetectorScores>, Error> {
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let parsed = match f.as_slice() {
            [id, no, has] => no
                .parse::<f64>()
                .ok()
                .zip(has.parse::<f64>().ok())
                .map(|(n, h)| (id.to_string(), n, h)),
            _ => None,
        };
        match parsed {
            Some((id, no_relation, has_relation)) => {
                out.insert(
                    id,
                    DetectorScores {
                        no_relation,
                        has_relation,
                    },
                );
            }
            // A header row is allowed on the first line only.
            None if i == 0 => {}
            None => {
                return Err(Error::Invalid(format!(
                    "classifier logits line {}: expected id, no_relation, has_relation",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Loads the splits, runs [`run_pipeline`], and writes
/// `predictions.tsv`, `report.txt` and `report.json` into `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    paths: &ExperimentPaths,
) -> Result<ExperimentResult, Error> {
    let spec = &cfg.dataset;
    let classifier = match &paths.classifier {
        Some(p) => Some(read_classifier_logits(std::io::BufReader::new(
            fs::File::open(p)?,
        ))?),
        None => None,
    };
    let data = ExperimentData {
        train: load_opt(&paths.train, spec)?,
        dev: load_opt(&paths.dev, spec)?,
        test: load_opt(&Some(paths.test.clone()), spec)?,
        classifier,
    };
    let result = run_pipeline(cfg, &data)?;
    write_artifacts(&paths.out_dir, cfg, &result)?;
    Ok(result)
}

pub fn write_artifacts(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    r: &ExperimentResult,
) -> Result<(), Error> {
    fs::create_dir_all(out_dir)?;
    let mut preds = Vec::new();
    write_predictions(&mut preds, &cfg.dataset.space, &r.predictions)?;
    fs::write(out_dir.join("predictions.tsv"), preds)?;
    let mut text = r.report.to_text();
    text.push_str(&format!("train_size={}\n", r.train_size));
    text.push_str(&format!(
        "standalone_micro_f1={:.6}\n",
        r.standalone.micro_f1
    ));
    if let (Some(h), Some(s)) = (cfg.heuristic, &r.sweep) {
        text.push_str(&format!(
            "heuristic={h}\nthreshold={}\ndev_f1={:.6}\n",
            s.threshold, s.dev_f1
        ));
    }
    fs::write(out_dir.join("report.txt"), text)?;
    let json = serde_json::json!({
        "report": r.report,
        "standalone": r.standalone,
        "train_size": r.train_size,
        "heuristic": cfg.heuristic.map(|h| h.to_string()),
        "threshold": r.sweep.as_ref().map(|s| s.threshold),
        "dev_f1": r.sweep.as_ref().map(|s| s.dev_f1),
    });
    fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&json).expect("json") + "\n",
    )?;
    Ok(())
}

fn bank_for(cfg: &ExperimentConfig) -> Result<TemplateBank, Error> {
    Ok(match &cfg.templates {
        Some(p) => TemplateBank::load(p, &cfg.dataset, cfg.family)?,
        None => TemplateBank::shipped(&cfg.dataset, cfg.family)?,
    })
}

type Row = (
    String,
    Vec<f64>,
    Option<DetectorScores>,
    Option<DetectorScores>,
);

fn as_inputs(rows: &[Row]) -> Vec<EnsembleInput<'_>> {
    rows.iter()
        .map(|(id, s, e, c)| EnsembleInput {
            instance_id: id,
            ranker: s,
            ead: *e,
            classifier: *c,
        })
        .collect()
}

/// In-memory pipeline shared by the CLI and the tests.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<ExperimentResult, Error> {
    let spec = &cfg.dataset;
    let space = &spec.space;
    for inst in data.train.iter().chain(&data.dev).chain(&data.test) {
        spec.validate_instance(inst)?;
    }
    let train_set = match &cfg.subsample {
        Some(s) => subsample(&data.train, s, space)?,
        None => data.train.clone(),
    };
    let bank = bank_for(cfg)?;
    let exemplars = (cfg.family.uses_exemplar() && !train_set.is_empty())
        .then(|| ExemplarCache::sample(&train_set, space, cfg.train.seed));
    let hyps = Hypotheses::new(space, &bank, exemplars.as_ref())?;

    let mut ranker = None;
    let mut detector = None;
    let scorer: Box<dyn Scorer> = match &cfg.backend {
        Backend::Toy {
            hash_dim,
            hidden_dim,
        } => {
            let init = ToyScorerParams::new(*hash_dim, *hidden_dim, cfg.train.seed)?;
            let params = if train_set.is_empty() {
                init
            } else {
                let out = train(&train_set, &data.dev, space, &hyps, init, &cfg.train)?;
                let p = out.params.clone();
                ranker = Some(out);
                p
            };
            Box::new(params)
        }
        Backend::ToyCheckpoint(p) => Box::new(ToyScorerParams::load(p)?),
        Backend::Mock { table, default } => Box::new(MockScorer::load(table, *default)?),
        Backend::External { endpoint, timeout } => {
            Box::new(ExternalScorer::new(endpoint.clone()).with_timeout(*timeout))
        }
    };

    let test_scores = score_instances(&scorer, &data.test, space, &hyps, cfg.jobs)?;
    let standalone_preds: Vec<Prediction> = test_scores
        .into_iter()
        .map(|s| prediction_from_scores(space, s))
        .collect();
    let standalone = evaluate_predictions(&data.test, &standalone_preds, space)?;

    let Some(heuristic) = cfg.heuristic else {
        return Ok(ExperimentResult {
            report: standalone.clone(),
            standalone,
            sweep: None,
            ranker,
            detector,
            predictions: standalone_preds.clone(),
            standalone_predictions: standalone_preds,
            train_size: train_set.len(),
        });
    };

    // Detector scores on dev and test.
    let (dev_det, test_det): (Vec<Option<DetectorScores>>, Vec<Option<DetectorScores>>) =
        if heuristic == Heuristic::Classification {
            let table = data.classifier.as_ref();
            let look = |d: &[Instance]| -> Vec<Option<DetectorScores>> {
                d.iter()
                    .map(|i| table.and_then(|t| t.get(&i.id).copied()))
                    .collect()
            };
            (look(&data.dev), look(&data.test))
        } else {
            let det: (Vec<DetectorScores>, Vec<DetectorScores>) = match &cfg.backend {
                Backend::Toy {
                    hash_dim,
                    hidden_dim,
                } => {
                    let init = ToyScorerParams::new(
                        *hash_dim,
                        *hidden_dim,
                        cfg.train.seed.wrapping_add(1),
                    )?;
                    let ead = ead_train(&train_set, &data.dev, spec, &bank, init, &cfg.train)?;
                    let d = (
                        ead.detector_scores(ead.params(), &data.dev, cfg.jobs)?,
                        ead.detector_scores(ead.params(), &data.test, cfg.jobs)?,
                    );
                    detector = Some(ead.outcome);
                    d
                }
                _ => {
                    let (dspace, dhyps) = crate::inference::Ead::query_space(spec, &bank)?;
                    (
                        detector_scores(&scorer, &data.dev, &dspace, &dhyps, cfg.jobs)?,
                        detector_scores(&scorer, &data.test, &dspace, &dhyps, cfg.jobs)?,
                    )
                }
            };
            (
                det.0.into_iter().map(Some).collect(),
                det.1.into_iter().map(Some).collect(),
            )
        };

    let dev_scores = score_instances(&scorer, &data.dev, space, &hyps, cfg.jobs)?;
    let inputs = |insts: &[Instance], scores: &[&[f64]], det: &[Option<DetectorScores>]| {
        let mut v = Vec::with_capacity(insts.len());
        for ((inst, s), d) in insts.iter().zip(scores).zip(det) {
            let (ead, classifier) = if heuristic == Heuristic::Classification {
                (None, *d)
            } else {
                (*d, None)
            };
            v.push((inst.id.clone(), s.to_vec(), ead, classifier));
        }
        v
    };
    let dev_rows = inputs(
        &data.dev,
        &dev_scores.iter().map(|s| s.scores()).collect::<Vec<_>>(),
        &dev_det,
    );
    let test_rows = inputs(
        &data.test,
        &standalone_preds
            .iter()
            .map(|p| p.scores.scores())
            .collect::<Vec<_>>(),
        &test_det,
    );
    let dev_inputs = as_inputs(&dev_rows);
    let test_inputs = as_inputs(&test_rows);
    let dev_golds: Vec<usize> = data
        .dev
        .iter()
        .map(|i| space.index_of(&i.gold.label_id).expect("validated"))
        .collect();
    let sweep = sweep_threshold(space, &dev_inputs, &dev_golds, heuristic)?;
    let final_idx = ensemble_all(space, &test_inputs, sweep.threshold, heuristic)?;
    let predictions: Vec<Prediction> = standalone_preds
        .iter()
        .zip(&final_idx)
        .map(|(p, &i)| Prediction {
            predicted: space.label(i).clone(),
            ..p.clone()
        })
        .collect();
    let test_golds: Vec<usize> = data
        .test
        .iter()
        .map(|i| space.index_of(&i.gold.label_id).expect("validated"))
        .collect();
    let report = micro_f1(&test_golds, &final_idx, space)?;
    Ok(ExperimentResult {
        report,
        standalone,
        sweep: Some(sweep),
        ranker,
        detector,
        predictions,
        standalone_predictions: standalone_preds,
        train_size: train_set.len(),
    })
}
