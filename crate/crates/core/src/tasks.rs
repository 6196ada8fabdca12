//! Task adapters: turn a bundle into search anchors and a constraint, run
//! generate-then-rank, and decode the winning triples into predictions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::alias::PredicateDictionary;
use crate::bundle::{AnnotationKind, SentenceBundle, TaskKind};
use crate::error::{Error, Result};
use crate::rank::{rank_candidates, EncoderProvider, RankMode};
use crate::search::{
    beam_search, enumerate_argument_pairs, BeamParams, PathCandidate, SearchConstraint,
    FACTUAL_PROBE_BEAM_SIZE,
};
use crate::triple::{Argument, Relation, TokenSpan, Triple, TripleCandidate};

pub const TACRED_NULL_LABEL: &str = "no_relation";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task: TaskKind,
    /// Number of ranked triples kept per sentence.
    pub top_n: usize,
    pub beam: BeamParams,
    pub rank_mode: RankMode,
    /// Task map inside the dictionary used to decode predicates (RC).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_map: Option<String>,
    /// Label predicted when nothing decodes. `None` means the sample is a miss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_label: Option<String>,
}

impl TaskConfig {
    /// Defaults: top-1 everywhere, beam 6, beam 20 for the factual probe.
    pub fn new(task: TaskKind) -> Self {
        let beam = match task {
            TaskKind::FactualProbe => BeamParams::default().with_beam_size(FACTUAL_PROBE_BEAM_SIZE),
            _ => BeamParams::default(),
        };
        TaskConfig {
            task,
            top_n: 1,
            beam,
            rank_mode: RankMode::Ranked,
            task_map: None,
            null_label: None,
        }
    }

    pub fn with_top_n(mut self, n: usize) -> Self {
        self.top_n = n;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.top_n == 0 {
            return Err(Error::Config("top_n must be at least 1".into()));
        }
        self.beam.check()
    }
}

/// Text form of a triple as written to prediction files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleText {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl From<&Triple> for TripleText {
    fn from(t: &Triple) -> Self {
        TripleText {
            head: t.head.text.clone(),
            relation: t.relation.text.clone(),
            tail: t.tail.text.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Predictions {
    Triples(Vec<TripleText>),
    Relation {
        /// Top-1 label, the null label on abstention, or `None` for a miss.
        label: Option<String>,
        /// Labels decoded from the top-n triples, best first, deduplicated.
        hit_set: Vec<String>,
    },
    Tail { tail: Option<String> },
}

/// One record of the prediction file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskPrediction {
    pub sentence_id: String,
    pub task: TaskKind,
    /// Sentence text, used to align OIE predictions with gold rows.
    pub sentence: String,
    pub predictions: Predictions,
    /// One per emitted triple, in [0, 1].
    pub confidences: Vec<f64>,
    pub abstained: bool,
    /// The candidates that produced the predictions, best first.
    pub provenance: Vec<TripleCandidate>,
}

/// Maps a rank score (cosine) or a raw search score to [0, 1].
pub fn confidence(candidate: &TripleCandidate) -> f64 {
    match candidate.rank_score {
        Some(cos) => ((1.0 + cos) / 2.0).clamp(0.0, 1.0),
        None => candidate.search_score.clamp(0.0, 1.0),
    }
}

/// Keeps the best-scoring candidate per surface form. Input must already be
/// in search order.
fn dedup_surfaces(candidates: Vec<TripleCandidate>) -> Vec<TripleCandidate> {
    let mut seen = BTreeSet::new();
    candidates
        .into_iter()
        .filter(|c| seen.insert(c.triple.surface()))
        .collect()
}

fn sort_by_search(candidates: &mut [TripleCandidate]) {
    candidates.sort_by(|a, b| {
        crate::search::candidate_order(a.search_score, &a.path, b.search_score, &b.path)
            .then_with(|| a.pair.cmp(&b.pair))
            .then_with(|| a.triple.relation.text.cmp(&b.triple.relation.text))
    });
}

fn search_pairs(
    bundle: &SentenceBundle,
    config: &TaskConfig,
    constraint: &SearchConstraint,
) -> Result<Vec<PathCandidate>> {
    let pairs = enumerate_argument_pairs(bundle, config.task)?;
    Ok(pairs
        .iter()
        .flat_map(|pair| beam_search(&bundle.attention, pair, &config.beam, constraint))
        .collect())
}

/// Open extraction. Every ordered noun-phrase pair is searched without
/// constraint; the pooled candidates are ranked and the best `top_n` for
/// the whole sentence are kept.
pub fn run_oie(
    bundle: &SentenceBundle,
    config: &TaskConfig,
    provider: &dyn EncoderProvider,
) -> Result<TaskPrediction> {
    let mut candidates: Vec<TripleCandidate> = search_pairs(bundle, config, &SearchConstraint::Open)?
        .into_iter()
        .map(|c| c.into_oie_candidate(bundle))
        .filter(|c| c.triple.is_well_formed())
        .collect();
    sort_by_search(&mut candidates);
    let ranked = rank_candidates(
        &bundle.text(),
        dedup_surfaces(candidates),
        provider,
        config.top_n,
        config.rank_mode,
    )?;
    Ok(TaskPrediction {
        sentence_id: bundle.sentence_id.clone(),
        sentence: bundle.text(),
        task: TaskKind::Oie,
        predictions: Predictions::Triples(ranked.iter().map(|c| (&c.triple).into()).collect()),
        confidences: ranked.iter().map(confidence).collect(),
        abstained: false,
        provenance: ranked,
    })
}

/// Relation spans and their predicates: the bundle's own links plus
/// whatever the dictionary finds in the tokens.
fn collect_links(
    bundle: &SentenceBundle,
    dict: Option<&PredicateDictionary>,
) -> BTreeMap<TokenSpan, BTreeSet<String>> {
    let mut links: BTreeMap<TokenSpan, BTreeSet<String>> = BTreeMap::new();
    for a in bundle.annotations_of(AnnotationKind::RelationLink) {
        if let Some(p) = &a.predicate_id {
            links.entry(a.span).or_default().insert(p.clone());
        }
    }
    if let Some(dict) = dict {
        let words: Vec<&str> = bundle.tokens.iter().map(|t| t.text.as_str()).collect();
        for l in dict.link(&words) {
            links.entry(l.span).or_default().insert(l.predicate_id);
        }
    }
    links
}

fn with_predicate(
    bundle: &SentenceBundle,
    c: &PathCandidate,
    predicate: &str,
    tail: Argument,
) -> TripleCandidate {
    TripleCandidate {
        triple: Triple {
            head: Argument {
                text: bundle.span_text(c.pair.start),
                span: Some(c.pair.start),
            },
            relation: Relation {
                text: predicate.to_string(),
                predicate_id: Some(predicate.to_string()),
                path: Some(c.path.clone()),
            },
            tail,
        },
        pair: c.pair,
        path: c.path.clone(),
        search_score: c.score,
        rank_score: None,
        position_mode: c.mode,
    }
}

/// Relation classification. The search runs between the gold head and tail
/// and may only emit tokens of one linked relation phrase; each finished
/// path becomes `(head; predicate; tail)` for every predicate on its span.
/// Candidates whose predicate falls outside the task's category are dropped
/// before ranking.
pub fn run_relation_classification(
    bundle: &SentenceBundle,
    config: &TaskConfig,
    provider: &dyn EncoderProvider,
    dict: Option<&PredicateDictionary>,
) -> Result<TaskPrediction> {
    let task_map = config
        .task_map
        .as_deref()
        .ok_or_else(|| Error::Config("relation classification needs a task map".into()))?;
    let links = collect_links(bundle, dict);
    let spans: Vec<TokenSpan> = links.keys().copied().collect();
    let paths = if spans.is_empty() {
        // still validates the gold annotations
        enumerate_argument_pairs(bundle, config.task)?;
        Vec::new()
    } else {
        search_pairs(bundle, config, &SearchConstraint::RelationLinked(spans.clone()))?
    };

    let decode = |predicate: &str| -> Result<Option<String>> {
        match dict {
            Some(d) => d.task_relation(predicate, task_map),
            // without a dictionary the predicate ids are the labels
            None => Ok(Some(predicate.to_string())),
        }
    };

    let mut candidates = Vec::new();
    let mut labels: BTreeMap<String, String> = BTreeMap::new();
    for c in &paths {
        let span = spans
            .iter()
            .find(|s| c.path.iter().all(|&t| s.contains(t)))
            .expect("constrained path lies in one linked span");
        for predicate in &links[span] {
            let Some(label) = decode(predicate)? else {
                continue;
            };
            let tail = Argument {
                text: bundle.span_text(c.pair.end),
                span: Some(c.pair.end),
            };
            let cand = with_predicate(bundle, c, predicate, tail);
            labels.insert(cand.triple.surface(), label);
            candidates.push(cand);
        }
    }
    sort_by_search(&mut candidates);
    let ranked = rank_candidates(
        &bundle.text(),
        dedup_surfaces(candidates),
        provider,
        config.top_n,
        config.rank_mode,
    )?;

    let mut hit_set: Vec<String> = Vec::new();
    for c in &ranked {
        let l = &labels[&c.triple.surface()];
        if !hit_set.contains(l) {
            hit_set.push(l.clone());
        }
    }
    let abstained = ranked.is_empty();
    let label = match hit_set.first() {
        Some(l) => Some(l.clone()),
        None => config.null_label.clone(),
    };
    Ok(TaskPrediction {
        sentence_id: bundle.sentence_id.clone(),
        sentence: bundle.text(),
        task: TaskKind::RelationClassification,
        predictions: Predictions::Relation { label, hit_set },
        confidences: ranked.iter().map(confidence).collect(),
        abstained,
        provenance: ranked,
    })
}

/// Factual probe. Each gold-head noun phrase is paired with each relation
/// link; the search may only emit tokens of one candidate noun phrase (any
/// noun phrase clear of the gold heads). The tail is the whole noun phrase
/// containing the winning path.
pub fn run_factual_probe(
    bundle: &SentenceBundle,
    config: &TaskConfig,
    provider: &dyn EncoderProvider,
) -> Result<TaskPrediction> {
    let heads: Vec<TokenSpan> = bundle
        .annotations_of(AnnotationKind::GoldNp)
        .map(|a| a.span)
        .collect();
    let links = collect_links(bundle, None);
    let abstain = |bundle: &SentenceBundle| TaskPrediction {
        sentence_id: bundle.sentence_id.clone(),
        sentence: bundle.text(),
        task: TaskKind::FactualProbe,
        predictions: Predictions::Tail { tail: None },
        confidences: Vec::new(),
        abstained: true,
        provenance: Vec::new(),
    };
    if links.is_empty() {
        return Ok(abstain(bundle));
    }
    let tails: Vec<TokenSpan> = bundle
        .noun_phrases()
        .into_iter()
        .filter(|np| !heads.iter().any(|h| h.overlaps(np)))
        .collect();
    if tails.is_empty() {
        enumerate_argument_pairs(bundle, config.task)?;
        return Ok(abstain(bundle));
    }
    let paths = search_pairs(bundle, config, &SearchConstraint::CandidateNp(tails.clone()))?;

    let mut candidates = Vec::new();
    for c in &paths {
        let np = *tails
            .iter()
            .find(|s| c.path.iter().all(|&t| s.contains(t)))
            .expect("constrained path lies in one candidate noun phrase");
        let Some(predicates) = links.get(&c.pair.end) else {
            continue;
        };
        for predicate in predicates {
            let tail = Argument {
                text: bundle.span_text(np),
                span: Some(np),
            };
            candidates.push(with_predicate(bundle, c, predicate, tail));
        }
    }
    sort_by_search(&mut candidates);
    let ranked = rank_candidates(
        &bundle.text(),
        dedup_surfaces(candidates),
        provider,
        config.top_n,
        config.rank_mode,
    )?;
    if ranked.is_empty() {
        return Ok(abstain(bundle));
    }
    Ok(TaskPrediction {
        sentence_id: bundle.sentence_id.clone(),
        sentence: bundle.text(),
        task: TaskKind::FactualProbe,
        predictions: Predictions::Tail {
            tail: Some(ranked[0].triple.tail.text.clone()),
        },
        confidences: ranked.iter().map(confidence).collect(),
        abstained: false,
        provenance: ranked,
    })
}

/// Dispatches on `config.task`.
pub fn run_task(
    bundle: &SentenceBundle,
    config: &TaskConfig,
    provider: &dyn EncoderProvider,
    dict: Option<&PredicateDictionary>,
) -> Result<TaskPrediction> {
    match config.task {
        TaskKind::Oie => run_oie(bundle, config, provider),
        TaskKind::RelationClassification => {
            run_relation_classification(bundle, config, provider, dict)
        }
        TaskKind::FactualProbe => run_factual_probe(bundle, config, provider),
    }
}
