//! Config-driven experiment runner: select examples, query the backend,
//! log predictions, and score them.
//!
//! Reports are always computed from the predictions log, so scoring a saved
//! `predictions.jsonl` again reproduces the run's report exactly.

mod config;
mod predictions;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{DatasetConfig, PoolConfig, PoolSource, RunConfig, Setting};
pub use predictions::{read_predictions, write_predictions, PredictionRecord};

use crate::corpus::{
    ground_truth_answers, load_dataset, load_vqa_manifest, read_binary_mask, Answer, Corpus, CorpusError,
    ImageRecord, Label,
};
use crate::embedding::{load_store, EmbeddingError, EmbeddingStore};
use crate::gateway::{connect, default_defect_box, GatewayError, MockOracle, VlmBackend};
use crate::metrics::{
    aggregate, mean_defined, AurocScope, BinaryMask, ImageOutcome, MetricReport, MetricValue, MetricsError,
    RankAccumulator, ScoreMap,
};
use crate::overlay::{write_prediction_overlays, OverlayError, OverlaySummary};
use crate::prompting::assemble;
use crate::selector::{select, ExamplePool, PoolCandidate, SelectError, SelectionResult, ShotPlan, Strategy};
use crate::verdict::{classify_for_metrics, normalize_boxes, parse, Classification, ErrorPolicy};

/// Share of failed rows above which a run is flagged as degraded.
pub const DEGRADED_FAILURE_RATE: f64 = 0.10;

const CHUNK: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("io error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Predictions { path: PathBuf, line: usize, message: String },
    #[error("image {0} is not in the corpus")]
    UnknownImage(String),
    #[error("predictions mix runs: {0}")]
    MixedRuns(String),
    #[error("no predictions to score")]
    EmptyPredictions,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Select(#[from] SelectError),
}

/// Everything a run needs besides the backend.
pub struct Prepared {
    pub corpus: Corpus,
    pub store: Option<EmbeddingStore>,
    /// Reference answers by image id, used for the pool and by the mock.
    pub answers: BTreeMap<String, Answer>,
    /// Defective images with no usable mask.
    pub unannotated: Vec<String>,
}

pub fn load_corpus(dataset: &DatasetConfig) -> Result<Corpus, RunError> {
    Ok(Corpus::new(load_dataset(dataset.kind, &dataset.root)?)?)
}

pub fn prepare(config: &RunConfig) -> Result<Prepared, RunError> {
    let corpus = load_corpus(&config.dataset)?;
    let store = match (&config.embeddings_path, config.setting.strategy()) {
        (Some(p), Some(_)) => Some(load_store(p, &corpus)?),
        _ => None,
    };
    let (answers, unannotated) = ground_truth_answers(corpus.records())?;
    if !unannotated.is_empty() {
        warn!("{} defective images have no mask and are left out of the example pool", unannotated.len());
    }
    Ok(Prepared {
        corpus,
        store,
        answers,
        unannotated,
    })
}

/// Mock oracle answering from the reference answers; unannotated defects get
/// their defect type with the default box.
pub fn mock_oracle(config: &RunConfig, prepared: &Prepared) -> Option<MockOracle> {
    let oracle_cfg = config.oracle.clone()?;
    let mut truth: HashMap<String, Answer> = prepared.answers.clone().into_iter().collect();
    for id in &prepared.unannotated {
        let rec = prepared.corpus.get(id).expect("unannotated ids come from the corpus");
        truth.insert(
            id.clone(),
            Answer::Defect {
                mode: rec.defect_type.clone().unwrap_or_else(|| "defect".into()),
                bbox: default_defect_box(),
            },
        );
    }
    Some(MockOracle {
        config: oracle_cfg,
        ground_truth: truth,
    })
}

/// Run summary written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub setting: Setting,
    pub shot_plan: ShotPlan,
    pub model: String,
    pub error_policy: ErrorPolicy,
    pub images: usize,
    pub failures: usize,
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auroc_scope: Option<AurocScope>,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayOptions {
    pub policy: ErrorPolicy,
    /// Compute pixel AUROC from masks; `None` skips it.
    pub pixel_auroc: Option<AurocScope>,
}

impl ReplayOptions {
    pub fn from_config(config: &RunConfig) -> Self {
        Self {
            policy: config.error_policy,
            pixel_auroc: config.pixel_auroc.then_some(config.auroc_scope),
        }
    }
}

pub struct RunOutcome {
    pub report: RunReport,
    pub predictions: Vec<PredictionRecord>,
    pub overlays: Option<OverlaySummary>,
}

fn pool_candidates(config: &RunConfig, prepared: &Prepared) -> Result<BTreeMap<String, Vec<PoolCandidate>>, RunError> {
    let mut pools: BTreeMap<String, Vec<PoolCandidate>> = BTreeMap::new();
    let mut push = |rec: &ImageRecord, answer: Answer| {
        pools.entry(rec.category.clone()).or_default().push(PoolCandidate {
            image_id: rec.id.clone(),
            label: rec.label,
            answer,
        });
    };
    match config.pool.source {
        PoolSource::Dataset => {
            for (id, answer) in &prepared.answers {
                push(prepared.corpus.get(id).expect("answers come from the corpus"), answer.clone());
            }
        }
        PoolSource::Manifest => {
            let path = config.pool.manifest.as_ref().expect("validated");
            for vqa in load_vqa_manifest(path)? {
                let rec = prepared
                    .corpus
                    .get(&vqa.image_id)
                    .ok_or_else(|| RunError::UnknownImage(vqa.image_id.clone()))?;
                if vqa.answer.is_defect() != rec.label.is_defective() {
                    return Err(RunError::Config(format!(
                        "pool answer for {} disagrees with its {} label",
                        rec.id, rec.label
                    )));
                }
                push(rec, vqa.answer);
            }
        }
    }
    if let Some(store) = &prepared.store {
        for (cat, cands) in pools.iter_mut() {
            let before = cands.len();
            cands.retain(|c| store.contains(&c.image_id));
            if cands.len() < before {
                warn!("{cat}: {} pool images have no embedding and are skipped", before - cands.len());
            }
        }
    }
    Ok(pools)
}

struct Job<'a> {
    config: &'a RunConfig,
    prepared: &'a Prepared,
    pools: BTreeMap<String, Vec<PoolCandidate>>,
    backend: &'a dyn VlmBackend,
}

fn select_for(
    config: &RunConfig,
    prepared: &Prepared,
    pools: &BTreeMap<String, Vec<PoolCandidate>>,
    rec: &ImageRecord,
) -> Result<SelectionResult, RunError> {
    let Some(strategy) = config.setting.strategy() else {
        return Ok(SelectionResult::empty(Strategy::Ours));
    };
    let cands = pools.get(&rec.category).cloned().unwrap_or_default();
    let pool = ExamplePool::new(rec.category.clone(), cands, &rec.id);
    Ok(select(
        strategy,
        &rec.id,
        &pool,
        prepared.store.as_ref(),
        &config.shot_plan,
        config.seed,
    )?)
}

/// Examples the run would show for `query_id`.
pub fn select_examples(config: &RunConfig, prepared: &Prepared, query_id: &str) -> Result<SelectionResult, RunError> {
    let rec = prepared
        .corpus
        .get(query_id)
        .ok_or_else(|| RunError::UnknownImage(query_id.to_string()))?;
    select_for(config, prepared, &pool_candidates(config, prepared)?, rec)
}

impl Job<'_> {
    fn predict(&self, rec: &ImageRecord) -> PredictionRecord {
        let mut row = PredictionRecord {
            image_id: rec.id.clone(),
            category: rec.category.clone(),
            setting: self.config.setting,
            shot_plan: self.config.shot_plan.clone(),
            model: self.config.model_name().to_string(),
            example_ids: vec![],
            example_scores: vec![],
            raw_text: None,
            verdict: None,
            binary_prediction: None,
            latency_ms: 0,
            usage: None,
            failure: None,
            image_path: rec.image_path.clone(),
            mask_path: rec.mask_path.clone(),
            width: rec.width,
            height: rec.height,
        };
        let selection = match select_for(self.config, self.prepared, &self.pools, rec) {
            Ok(s) => s,
            Err(e) => {
                row.failure = Some(format!("selection: {e}"));
                return row;
            }
        };
        row.example_ids = selection.ids();
        row.example_scores = selection.scores.clone();
        let bundle = match assemble(&selection, rec, &self.prepared.corpus, self.config.answer_layout) {
            Ok(b) => b,
            Err(e) => {
                row.failure = Some(format!("prompt: {e}"));
                return row;
            }
        };
        match self.backend.infer(&bundle) {
            Ok(out) => {
                let verdict = normalize_boxes(&parse(&out.text), rec.width, rec.height);
                row.binary_prediction = Some(classify_for_metrics(&verdict, self.config.error_policy));
                row.verdict = Some(verdict);
                row.raw_text = Some(out.text);
                row.latency_ms = out.latency_ms;
                row.usage = out.usage;
            }
            Err(e) => row.failure = Some(format!("inference: {e}")),
        }
        row
    }
}

fn query_records<'a>(config: &RunConfig, corpus: &'a Corpus) -> Vec<&'a ImageRecord> {
    let wanted: Option<HashSet<&str>> =
        config.dataset.categories.as_ref().map(|c| c.iter().map(String::as_str).collect());
    corpus
        .test_records()
        .filter(|r| wanted.as_ref().is_none_or(|w| w.contains(r.category.as_str())))
        .collect()
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |e| RunError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Earlier successful rows of the same run, by image id.
fn resumable_rows(config: &RunConfig) -> Result<HashMap<String, PredictionRecord>, RunError> {
    let path = config.predictions_path();
    if !config.resume || !path.is_file() {
        return Ok(HashMap::new());
    }
    let rows = read_predictions(&path)?;
    Ok(rows
        .into_iter()
        .filter(|r| {
            r.failure.is_none()
                && r.setting == config.setting
                && r.shot_plan == config.shot_plan
                && r.model == config.model_name()
        })
        .map(|r| (r.image_id.clone(), r))
        .collect())
}

/// Run with an explicit backend. Rows are appended to the predictions log as
/// they complete; the finished log is rewritten in corpus order.
pub fn run_with_backend(
    config: &RunConfig,
    prepared: &Prepared,
    backend: &dyn VlmBackend,
) -> Result<RunOutcome, RunError> {
    fs::create_dir_all(&config.output_dir).map_err(io_err(&config.output_dir))?;
    let job = Job {
        config,
        prepared,
        pools: pool_candidates(config, prepared)?,
        backend,
    };
    let queries = query_records(config, &prepared.corpus);
    let mut done = resumable_rows(config)?;
    if !done.is_empty() {
        info!("resuming: {} of {} images already predicted", done.len(), queries.len());
    }

    let log_path = config.predictions_path();
    let mut log = {
        let mut kept: Vec<&PredictionRecord> = queries.iter().filter_map(|r| done.get(&r.id)).collect();
        kept.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let file = fs::File::create(&log_path).map_err(io_err(&log_path))?;
        let mut w = BufWriter::new(file);
        let kept: Vec<PredictionRecord> = kept.into_iter().cloned().collect();
        predictions::append_predictions(&mut w, &kept).map_err(io_err(&log_path))?;
        drop(w);
        BufWriter::new(
            OpenOptions::new()
                .append(true)
                .open(&log_path)
                .map_err(io_err(&log_path))?,
        )
    };

    let threads = rayon::ThreadPoolBuilder::new()
        .num_threads(config.gateway.request_parallelism.max(1))
        .build()
        .map_err(|e| RunError::Config(e.to_string()))?;
    let todo: Vec<&ImageRecord> = queries.iter().copied().filter(|r| !done.contains_key(&r.id)).collect();
    for chunk in todo.chunks(CHUNK) {
        let rows: Vec<PredictionRecord> = threads.install(|| chunk.par_iter().map(|r| job.predict(r)).collect());
        predictions::append_predictions(&mut log, &rows).map_err(io_err(&log_path))?;
        for row in rows {
            if let Some(f) = &row.failure {
                warn!("{}: {f}", row.image_id);
            }
            done.insert(row.image_id.clone(), row);
        }
        info!("{} / {} images", done.len(), queries.len());
    }
    drop(log);

    let rows: Vec<PredictionRecord> = queries
        .iter()
        .map(|r| done.remove(&r.id).expect("every query has a row"))
        .collect();
    write_predictions(&log_path, &rows)?;
    let report = replay(&rows, &prepared.corpus, &ReplayOptions::from_config(config))?;
    write_report(&config.output_dir, &report)?;
    let overlays = if config.overlays {
        Some(write_prediction_overlays(&rows, &config.output_dir.join("overlays"))?)
    } else {
        None
    };
    Ok(RunOutcome {
        report,
        predictions: rows,
        overlays,
    })
}

pub fn run(config: &RunConfig) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let prepared = prepare(config)?;
    let mut gateway = config.gateway.clone();
    gateway.model_name = config.model_name().to_string();
    let backend = connect(&gateway, mock_oracle(config, &prepared))?;
    run_with_backend(config, &prepared, backend.as_ref())
}

/// `report.json` (pretty JSON) and `report.md` in `dir`.
pub fn write_report(dir: &Path, report: &RunReport) -> Result<(), RunError> {
    let json_path = dir.join("report.json");
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    fs::write(&json_path, json).map_err(io_err(&json_path))?;
    let md_path = dir.join("report.md");
    fs::write(&md_path, crate::report::render_run_report(report)).map_err(io_err(&md_path))
}

pub fn read_report(path: &Path) -> Result<RunReport, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| RunError::Predictions {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn image_rank(row: &PredictionRecord, rec: &ImageRecord) -> Result<Option<RankAccumulator>, RunError> {
    let Some(verdict) = &row.verdict else {
        return Ok(None);
    };
    let mask = match (rec.label, &rec.mask_path) {
        (_, Some(p)) => read_binary_mask(p, rec.width, rec.height)?,
        (Label::Good, None) => BinaryMask::empty(rec.width, rec.height),
        (Label::Defective, None) => return Ok(None),
    };
    let scores = ScoreMap::from_boxes(&verdict.bboxes(), rec.width, rec.height);
    let mut acc = RankAccumulator::default();
    acc.push_map(&scores, &mask)?;
    Ok(Some(acc))
}

/// Pixel AUROC per category and over all categories.
fn pixel_aurocs(
    rows: &[(&PredictionRecord, &ImageRecord)],
    scope: AurocScope,
) -> Result<(BTreeMap<String, MetricValue>, MetricValue), RunError> {
    let ranks: Vec<Option<RankAccumulator>> =
        rows.par_iter().map(|(row, rec)| image_rank(row, rec)).collect::<Result<_, _>>()?;
    let mut by_cat: BTreeMap<String, Vec<&RankAccumulator>> = BTreeMap::new();
    for ((_, rec), acc) in rows.iter().zip(&ranks) {
        if let Some(acc) = acc {
            by_cat.entry(rec.category.clone()).or_default().push(acc);
        }
    }
    let score = |accs: &mut dyn Iterator<Item = &RankAccumulator>| match scope {
        AurocScope::MicroPooled => {
            let mut all = RankAccumulator::default();
            accs.for_each(|a| all.merge(a));
            all.auroc()
        }
        AurocScope::PerImageMean => mean_defined(accs.map(RankAccumulator::auroc)),
    };
    let per_cat = by_cat
        .iter()
        .map(|(c, accs)| (c.clone(), score(&mut accs.iter().copied())))
        .collect();
    let all = score(&mut by_cat.values().flatten().copied());
    Ok((per_cat, all))
}

/// Score a predictions log against `corpus`.
///
/// Binary predictions are re-derived from the stored verdicts under
/// `options.policy`; rows with a failure are counted but not scored.
pub fn replay(rows: &[PredictionRecord], corpus: &Corpus, options: &ReplayOptions) -> Result<RunReport, RunError> {
    let first = rows.first().ok_or(RunError::EmptyPredictions)?;
    let mut seen = HashSet::new();
    let mut joined = Vec::with_capacity(rows.len());
    let mut outcomes = Vec::with_capacity(rows.len());
    let mut failures = 0usize;
    for row in rows {
        if (row.setting, &row.shot_plan, &row.model) != (first.setting, &first.shot_plan, &first.model) {
            return Err(RunError::MixedRuns(format!(
                "{} is {} {} {}, expected {} {} {}",
                row.image_id, row.setting, row.shot_plan, row.model, first.setting, first.shot_plan, first.model
            )));
        }
        if !seen.insert(row.image_id.as_str()) {
            return Err(RunError::MixedRuns(format!("{} appears twice", row.image_id)));
        }
        let rec = corpus.get(&row.image_id).ok_or_else(|| RunError::UnknownImage(row.image_id.clone()))?;
        let Some(verdict) = &row.verdict else {
            failures += 1;
            continue;
        };
        outcomes.push(ImageOutcome {
            category: rec.category.clone(),
            truth: rec.label,
            prediction: classify_for_metrics(verdict, options.policy),
            format_error: verdict.classification == Classification::FormatError,
        });
        joined.push((row, rec));
    }
    let mut metrics = aggregate(&outcomes, &corpus.categories())?;
    if let Some(scope) = options.pixel_auroc {
        let (per_cat, all) = pixel_aurocs(&joined, scope)?;
        for (cat, m) in metrics.per_category.iter_mut() {
            m.pixel_auroc = Some(per_cat.get(cat).copied().unwrap_or(MetricValue::NotAvailable));
        }
        metrics.all_category.pixel_auroc = Some(all);
    }
    let degraded = failures as f64 > DEGRADED_FAILURE_RATE * rows.len() as f64;
    if degraded {
        warn!("{failures} of {} rows failed; run is degraded", rows.len());
    }
    Ok(RunReport {
        setting: first.setting,
        shot_plan: first.shot_plan.clone(),
        model: first.model.clone(),
        error_policy: options.policy,
        images: rows.len(),
        failures,
        degraded,
        auroc_scope: options.pixel_auroc,
        metrics,
    })
}

