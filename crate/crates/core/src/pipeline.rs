//! Dataset-level commands behind the CLI: extract, evaluate, stats,
//! bundle validation and toy encoder training.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alias::PredicateDictionary;
use crate::bundle::{
    load_bundle_with, Dataset, LoadOptions, SentenceBundle, TaskKind, ATTENTION_FILE,
    DATASET_FILE, EMBEDDINGS_FILE, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::eval::{
    self, hit_set_predictions, parse_label_gold, parse_oie_gold, GoldFormat, MatchPolicy, Prf,
    PositionStats, ScoredTriple,
};
use crate::par::{self, Parallelism};
use crate::rank::{
    negative_pair_accuracy, train_toy_encoder, Batch, ProviderSpec, RankMode, ToyEncoder,
};
use crate::search::{SearchConstraint, DEFAULT_MAX_STEPS};
use crate::tasks::{run_task, Predictions, TaskConfig, TaskPrediction, TACRED_NULL_LABEL};
use crate::triple::PositionMode;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Vectors stored in each bundle.
    #[default]
    Precomputed,
    /// A model written by `rank-toy-train`.
    Toy,
}

/// Settings as read from a TOML file or collected from flags. Every field is
/// optional so layers can be merged.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub task: Option<String>,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub beam_size: Option<usize>,
    pub max_steps: Option<usize>,
    pub top_n: Option<usize>,
    pub pair_cap: Option<usize>,
    pub include_terminal: Option<bool>,
    pub between_only: Option<bool>,
    pub no_ranking: Option<bool>,
    pub provider: Option<ProviderKind>,
    pub toy_model: Option<PathBuf>,
    pub dict: Option<PathBuf>,
    pub task_map: Option<String>,
    pub null_label: Option<String>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

macro_rules! overlay {
    ($top:expr, $base:expr, $($f:ident),*) => {
        ConfigLayer { $($f: $top.$f.or($base.$f)),* }
    };
}

impl ConfigLayer {
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `self` win over `base`.
    pub fn over(self, base: ConfigLayer) -> ConfigLayer {
        overlay!(
            self, base, task, dataset, output, beam_size, max_steps, top_n, pair_cap,
            include_terminal, between_only, no_ranking, provider, toy_model, dict, task_map,
            null_label, workers, seed
        )
    }
}

/// Fully resolved settings for one extraction run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub task: TaskConfig,
    pub between_only: bool,
    pub no_ranking: bool,
    pub provider: ProviderKind,
    pub toy_model: Option<PathBuf>,
    pub dict: Option<PathBuf>,
    /// 0 picks the thread count automatically, 1 runs sequentially.
    pub workers: usize,
    pub seed: u64,
}

impl EngineConfig {
    /// Resolves `layer` against the dataset's own metadata. Precedence is
    /// flag, then config file (both already merged into `layer`), then
    /// dataset metadata, then built-in defaults.
    pub fn resolve(layer: ConfigLayer, dataset: &Dataset) -> Result<Self> {
        let meta = &dataset.meta;
        let task = match &layer.task {
            Some(t) => {
                let t = TaskKind::parse(t).ok_or_else(|| Error::UnknownTask(t.clone()))?;
                if t != meta.task {
                    return Err(Error::Config(format!(
                        "task `{}` does not match dataset task `{}`",
                        t.name(),
                        meta.task.name()
                    )));
                }
                t
            }
            None => meta.task,
        };
        let mut tc = TaskConfig::new(task);
        if let Some(k) = layer.beam_size {
            tc.beam.beam_size = k;
        }
        tc.beam.max_steps = layer.max_steps.unwrap_or(DEFAULT_MAX_STEPS);
        tc.beam.pair_cap = layer.pair_cap;
        tc.beam.include_terminal = layer.include_terminal.unwrap_or(true);
        let between_only = layer.between_only.unwrap_or(false);
        if between_only {
            tc.beam.position_modes = [PositionMode::Between].into();
        }
        let no_ranking = layer.no_ranking.unwrap_or(false);
        if no_ranking {
            tc.rank_mode = RankMode::RawSearchScore;
        }
        if let Some(n) = layer.top_n {
            tc.top_n = n;
        }
        tc.task_map = layer.task_map.or_else(|| meta.task_map.clone());
        tc.null_label = layer.null_label.or_else(|| meta.null_label.clone()).or_else(|| {
            (tc.task_map.as_deref() == Some("tacred")).then(|| TACRED_NULL_LABEL.to_string())
        });
        if task == TaskKind::RelationClassification && tc.task_map.is_none() {
            return Err(Error::Config(
                "relation classification needs a task map (--task-map or dataset.json)".into(),
            ));
        }
        tc.check()?;

        let dict = layer
            .dict
            .or_else(|| meta.dictionary.as_deref().map(|d| dataset.resolve(d)));
        let provider = layer.provider.unwrap_or_default();
        if provider == ProviderKind::Toy && layer.toy_model.is_none() {
            return Err(Error::Config("--provider toy needs --toy-model".into()));
        }
        Ok(EngineConfig {
            dataset: dataset.root.clone(),
            output: layer
                .output
                .ok_or_else(|| Error::Config("an output path is required".into()))?,
            task: tc,
            between_only,
            no_ranking,
            provider,
            toy_model: layer.toy_model,
            dict,
            workers: layer.workers.unwrap_or(0),
            seed: layer.seed.unwrap_or(0),
        })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Checksum over a bundle's files, in a fixed order.
pub fn bundle_checksum(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for name in [MANIFEST_FILE, ATTENTION_FILE, EMBEDDINGS_FILE] {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub config: EngineConfig,
    /// Bundle directory name to checksum.
    pub bundles: BTreeMap<String, String>,
    pub predictions: usize,
    /// Wall time per stage in milliseconds.
    pub timings_ms: BTreeMap<String, f64>,
}

/// Post-conditions every prediction must meet before it is written.
fn check_prediction(p: &TaskPrediction, bundle: &SentenceBundle) -> Result<()> {
    let fail = |m: String| Err(Error::Invariant(format!("{}: {m}", p.sentence_id)));
    if p.confidences.len() != p.provenance.len() {
        return fail("confidences and provenance differ in length".into());
    }
    if p.confidences.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return fail("confidence outside [0, 1]".into());
    }
    if !p.abstained && p.provenance.is_empty() && !matches!(p.predictions, Predictions::Triples(_)) {
        return fail("non-abstaining prediction without provenance".into());
    }
    for c in &p.provenance {
        if !c.triple.is_well_formed() {
            return fail(format!("malformed triple `{}`", c.triple.surface()));
        }
        if !c.path.windows(2).all(|w| w[0] < w[1]) || c.path.iter().any(|&t| t >= bundle.len()) {
            return fail(format!("bad path {:?}", c.path));
        }
        if c.path.iter().any(|&t| c.pair.start.contains(t) || c.pair.end.contains(t)) {
            return fail(format!("path {:?} enters an anchor", c.path));
        }
        if p.task == TaskKind::FactualProbe {
            let tail = c.triple.tail.span.expect("probe tails carry spans");
            if tail.overlaps(&c.pair.start) || !SearchConstraint::CandidateNp(vec![tail]).admits(&c.path) {
                return fail(format!("tail {tail} breaks the candidate constraint"));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ExtractOutcome {
    pub predictions: Vec<TaskPrediction>,
    pub manifest: RunManifest,
}

fn load_dictionary(config: &EngineConfig) -> Result<Option<PredicateDictionary>> {
    config.dict.as_ref().map(PredicateDictionary::load).transpose()
}

fn load_provider(config: &EngineConfig) -> Result<ProviderSpec> {
    if config.no_ranking {
        return Ok(ProviderSpec::Disabled);
    }
    Ok(match config.provider {
        ProviderKind::Precomputed => ProviderSpec::Precomputed,
        ProviderKind::Toy => {
            let path = config.toy_model.as_ref().expect("checked in resolve");
            ProviderSpec::Toy(Arc::new(ToyEncoder::load(path)?))
        }
    })
}

/// Runs the task over every bundle and returns predictions ordered by
/// sentence id. Nothing is written.
pub fn run_extract(config: &EngineConfig) -> Result<ExtractOutcome> {
    let dataset = Dataset::open(&config.dataset)?;
    let dict = load_dictionary(config)?;
    let provider = load_provider(config)?;
    let mode = Parallelism::from_workers(config.workers);
    let opts = LoadOptions::default();
    let mut timings = BTreeMap::new();

    let t = Instant::now();
    let (bundles, checksums) = par::with_workers(config.workers, || {
        let loaded = par::map(&dataset.bundle_dirs, mode, |dir| {
            Ok((load_bundle_with(dir, &opts)?, bundle_checksum(dir)?))
        });
        loaded.into_iter().collect::<Result<(Vec<_>, Vec<_>)>>()
    })?;
    timings.insert("load".to_string(), t.elapsed().as_secs_f64() * 1e3);

    let t = Instant::now();
    let mut predictions = par::with_workers(config.workers, || {
        par::map(&bundles, mode, |b| {
            let p = run_task(b, &config.task, provider.for_bundle(b)?.as_ref(), dict.as_ref())?;
            check_prediction(&p, b)?;
            Ok(p)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()
    })?;
    predictions.sort_by(|a, b| a.sentence_id.cmp(&b.sentence_id));
    if let Some(w) = predictions.windows(2).find(|w| w[0].sentence_id == w[1].sentence_id) {
        return Err(Error::bundle(&w[0].sentence_id, "sentence_id", "duplicated in dataset"));
    }
    timings.insert("search_rank".to_string(), t.elapsed().as_secs_f64() * 1e3);

    let bundles = dataset
        .bundle_dirs
        .iter()
        .zip(checksums)
        .map(|(d, c)| (d.file_name().unwrap().to_string_lossy().into_owned(), c))
        .collect();
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        config: config.clone(),
        bundles,
        predictions: predictions.len(),
        timings_ms: timings,
    };
    Ok(ExtractOutcome {
        predictions,
        manifest,
    })
}

pub fn predictions_to_jsonl(predictions: &[TaskPrediction]) -> String {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&serde_json::to_string(p).expect("predictions serialize"));
        out.push('\n');
    }
    out
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<TaskPrediction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Json {
                context: format!("{}:{}", path.display(), i + 1),
                source: e,
            })
        })
        .collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Extracts and writes the prediction file plus `<output>.manifest.json`.
pub fn cmd_extract(config: &EngineConfig) -> Result<RunManifest> {
    let ExtractOutcome {
        predictions,
        mut manifest,
    } = run_extract(config)?;
    let t = Instant::now();
    write(&config.output, predictions_to_jsonl(&predictions).as_bytes())?;
    manifest
        .timings_ms
        .insert("write".to_string(), t.elapsed().as_secs_f64() * 1e3);
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write(&manifest_path(&config.output), &json)?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub task: TaskKind,
    pub policy: MatchPolicy,
    pub gold_format: GoldFormat,
    /// OIE: report P/R/F1 here instead of at the best-F1 threshold.
    pub threshold: Option<f64>,
    /// OIE: where to write the PR curve CSV.
    pub pr_csv: Option<PathBuf>,
    /// RC: label that counts as no relation.
    pub null_label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum EvalReport {
    Oie {
        threshold: f64,
        precision: f64,
        recall: f64,
        f1: f64,
        auc: f64,
        predictions: usize,
        gold: usize,
    },
    RelationClassification {
        top1: Prf,
        top_n: Prf,
        samples: usize,
    },
    FactualProbe {
        p_at_1: f64,
        facts: usize,
        abstained: usize,
    },
}

fn align<'a>(
    predictions: &'a [TaskPrediction],
    gold: &BTreeMap<String, String>,
) -> Result<BTreeMap<&'a str, &'a TaskPrediction>> {
    let by_id: BTreeMap<&str, &TaskPrediction> =
        predictions.iter().map(|p| (p.sentence_id.as_str(), p)).collect();
    if let Some(id) = gold.keys().find(|id| !by_id.contains_key(id.as_str())) {
        return Err(Error::Eval(format!("no prediction for gold id `{id}`")));
    }
    if let Some(id) = by_id.keys().find(|id| !gold.contains_key(**id)) {
        return Err(Error::Eval(format!("prediction `{id}` has no gold entry")));
    }
    Ok(by_id)
}

/// Scores a prediction file against gold. The PR CSV is written for OIE
/// when a path is given.
pub fn cmd_evaluate(predictions: &Path, gold: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    let preds = read_predictions(predictions)?;
    if let Some(p) = preds.iter().find(|p| p.task != opts.task) {
        return Err(Error::Config(format!(
            "prediction `{}` is for task `{}`, not `{}`",
            p.sentence_id,
            p.task.name(),
            opts.task.name()
        )));
    }
    let gold_text = fs::read_to_string(gold).map_err(|e| Error::io(gold, e))?;
    match opts.task {
        TaskKind::Oie => {
            let gold = parse_oie_gold(&gold_text, opts.gold_format)?;
            let mut scored = Vec::new();
            for p in &preds {
                let Predictions::Triples(ts) = &p.predictions else {
                    return Err(Error::Eval(format!("`{}` holds no triples", p.sentence_id)));
                };
                for (t, &c) in ts.iter().zip(&p.confidences) {
                    scored.push(ScoredTriple {
                        sentence: p.sentence.clone(),
                        triple: t.clone(),
                        confidence: c,
                    });
                }
            }
            let curve = eval::pr_curve_and_auc(&scored, &gold, &opts.policy);
            if let Some(path) = &opts.pr_csv {
                write(path, curve.to_csv().as_bytes())?;
            }
            let threshold = opts
                .threshold
                .or_else(|| curve.best_f1().map(|p| p.threshold))
                .unwrap_or(0.0);
            let prf = eval::prf_at_threshold(&scored, &gold, &opts.policy, threshold);
            Ok(EvalReport::Oie {
                threshold,
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
                auc: curve.auc,
                predictions: scored.len(),
                gold: gold.len(),
            })
        }
        TaskKind::RelationClassification => {
            let gold = parse_label_gold(&gold_text)?;
            let by_id = align(&preds, &gold)?;
            let mut top1 = Vec::new();
            let mut hits = Vec::new();
            let mut labels = Vec::new();
            for (id, g) in &gold {
                let Predictions::Relation { label, hit_set } = &by_id[id.as_str()].predictions else {
                    return Err(Error::Eval(format!("`{id}` holds no relation label")));
                };
                top1.push(label.clone());
                hits.push(hit_set.clone());
                labels.push(g.clone());
            }
            let null = opts.null_label.as_deref();
            let top_n = hit_set_predictions(&top1, &hits, &labels);
            Ok(EvalReport::RelationClassification {
                top1: eval::rc_f1(&top1, &labels, null, None)?,
                top_n: eval::rc_f1(&top_n, &labels, null, None)?,
                samples: labels.len(),
            })
        }
        TaskKind::FactualProbe => {
            let gold = parse_label_gold(&gold_text)?;
            let by_id = align(&preds, &gold)?;
            let mut tails = BTreeMap::new();
            for (id, p) in by_id {
                let Predictions::Tail { tail } = &p.predictions else {
                    return Err(Error::Eval(format!("`{id}` holds no tail")));
                };
                tails.insert(id.to_string(), tail.clone());
            }
            let abstained = tails.values().filter(|t| t.is_none()).count();
            Ok(EvalReport::FactualProbe {
                p_at_1: eval::p_at_1(&tails, &gold)?,
                facts: gold.len(),
                abstained,
            })
        }
    }
}

/// Relation-position counts of an OIE gold file.
pub fn cmd_stats(gold: &Path, format: GoldFormat) -> Result<PositionStats> {
    let text = fs::read_to_string(gold).map_err(|e| Error::io(gold, e))?;
    Ok(eval::relation_position_stats(&parse_oie_gold(&text, format)?))
}

/// Validation result for one bundle directory.
#[derive(Clone, Debug, PartialEq)]
pub struct BundleCheck {
    pub path: PathBuf,
    pub error: Option<String>,
}

/// Checks a single bundle, or every bundle of a dataset directory.
pub fn cmd_validate_bundle(path: &Path, opts: &LoadOptions) -> Result<Vec<BundleCheck>> {
    let dirs = if path.join(DATASET_FILE).is_file() {
        Dataset::open(path)?.bundle_dirs
    } else {
        vec![path.to_path_buf()]
    };
    Ok(dirs
        .into_iter()
        .map(|d| BundleCheck {
            error: load_bundle_with(&d, opts).err().map(|e| e.to_string()),
            path: d,
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct ToyTrainOptions {
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for ToyTrainOptions {
    fn default() -> Self {
        ToyTrainOptions {
            dim: 16,
            epochs: 200,
            batch_size: 8,
            step_size: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ToyTrainSummary {
    pub pairs: usize,
    pub batches: usize,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Own triple versus the next pair's triple, before and after training.
    pub negative_pair_accuracy_before: f64,
    pub negative_pair_accuracy_after: f64,
}

/// Reads `sentence<TAB>triple` lines.
pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (s, t) = line
            .split_once('\t')
            .ok_or_else(|| Error::Eval(format!("{}:{}: expected sentence<TAB>triple", path.display(), i + 1)))?;
        pairs.push((s.trim().to_string(), t.trim().to_string()));
    }
    Ok(pairs)
}

fn foreign_items(pairs: &[(String, String)]) -> Vec<(String, String, String)> {
    let n = pairs.len();
    (0..n)
        .map(|i| {
            let (s, t) = &pairs[i];
            (s.clone(), t.clone(), pairs[(i + 1) % n].1.clone())
        })
        .collect()
}

/// Trains the toy encoder on aligned pairs; batches are drawn from a
/// seeded shuffle.
pub fn cmd_rank_toy_train(
    pairs: &[(String, String)],
    opts: &ToyTrainOptions,
) -> Result<(ToyEncoder, ToyTrainSummary)> {
    if pairs.len() < 2 {
        return Err(Error::Precondition("need at least 2 training pairs".into()));
    }
    let encoder = ToyEncoder::from_texts(
        pairs.iter().flat_map(|(s, t)| [s.as_str(), t.as_str()]),
        opts.dim,
        opts.seed,
    );
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let mut batches: Vec<Batch> = order
        .chunks(opts.batch_size.max(2))
        .map(|idx| {
            let chunk: Vec<(String, String)> = idx.iter().map(|&i| pairs[i].clone()).collect();
            encoder.batch_from_texts(&chunk)
        })
        .collect();
    // a trailing singleton cannot be contrasted; fold it into the previous batch
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    let items = foreign_items(pairs);
    let before = negative_pair_accuracy(&items, &encoder)?;
    let report = train_toy_encoder(encoder, &batches, opts.epochs, opts.step_size)?;
    let after = negative_pair_accuracy(&items, &report.encoder)?;
    let summary = ToyTrainSummary {
        pairs: pairs.len(),
        batches: batches.len(),
        steps: report.losses.len(),
        initial_loss: report.initial_loss().unwrap_or(f64::NAN),
        final_loss: report.final_loss().unwrap_or(f64::NAN),
        negative_pair_accuracy_before: before,
        negative_pair_accuracy_after: after,
    };
    Ok((report.encoder, summary))
}
