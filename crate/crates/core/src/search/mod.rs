//! Triple-oriented beam search over an attention matrix.
//!
//! A search runs between two anchor spans: it starts at [S], emits a
//! strictly increasing sequence of tokens from one region of the sentence and
//! completes when it steps into [E]. Regions are the gap between the anchors
//! or the stretch left/right of both. Each position mode gets its own beam;
//! the results are merged by score.

mod score;

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use score::{enter_weight, exit_weight, geometric_mean, sequence_score, step_weight, step_weights};

use crate::bundle::{AnnotationKind, ArgRole, AttentionMatrix, SentenceBundle, TaskKind};
use crate::error::{Error, Result};
use crate::triple::{Argument, ArgumentPair, PositionMode, Relation, TokenSpan, Triple, TripleCandidate};

pub const DEFAULT_BEAM_SIZE: usize = 6;
pub const FACTUAL_PROBE_BEAM_SIZE: usize = 20;
pub const DEFAULT_MAX_STEPS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    pub beam_size: usize,
    pub max_steps: usize,
    pub position_modes: BTreeSet<PositionMode>,
    /// Keep at most this many candidates per argument pair after merging modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_cap: Option<usize>,
    /// Whether the step into [E] counts toward the score.
    #[serde(default = "yes")]
    pub include_terminal: bool,
}

fn yes() -> bool {
    true
}

impl Default for BeamParams {
    fn default() -> Self {
        BeamParams {
            beam_size: DEFAULT_BEAM_SIZE,
            max_steps: DEFAULT_MAX_STEPS,
            position_modes: PositionMode::ALL.into_iter().collect(),
            pair_cap: None,
            include_terminal: true,
        }
    }
}

impl BeamParams {
    pub fn with_beam_size(mut self, k: usize) -> Self {
        self.beam_size = k;
        self
    }

    pub fn with_max_steps(mut self, steps: usize) -> Self {
        self.max_steps = steps;
        self
    }

    pub fn with_modes(mut self, modes: impl IntoIterator<Item = PositionMode>) -> Self {
        self.position_modes = modes.into_iter().collect();
        self
    }

    /// Restricts the search to the gap between the anchors.
    pub fn between_only(self) -> Self {
        self.with_modes([PositionMode::Between])
    }

    pub fn check(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam size must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if self.position_modes.is_empty() {
            return Err(Error::Config("at least one position mode is required".into()));
        }
        Ok(())
    }
}

/// Which tokens a search may emit.
///
/// Under the constrained variants all emitted tokens must fall inside one
/// and the same allowed span, so a finished path always decodes to a single
/// relation link or a single candidate noun phrase.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant", content = "spans")]
pub enum SearchConstraint {
    Open,
    RelationLinked(Vec<TokenSpan>),
    CandidateNp(Vec<TokenSpan>),
}

impl SearchConstraint {
    pub fn allowed_spans(&self) -> Option<&[TokenSpan]> {
        match self {
            SearchConstraint::Open => None,
            SearchConstraint::RelationLinked(s) | SearchConstraint::CandidateNp(s) => Some(s),
        }
    }

    /// Indices of the allowed spans holding `token`, `None` when there are
    /// none. Open search puts every token in a single group 0.
    fn groups_of(&self, token: usize) -> Option<Vec<usize>> {
        match self.allowed_spans() {
            None => Some(vec![0]),
            Some(spans) => {
                let groups: Vec<usize> = (0..spans.len()).filter(|&i| spans[i].contains(token)).collect();
                (!groups.is_empty()).then_some(groups)
            }
        }
    }

    /// Whether `path` satisfies the constraint on its own.
    pub fn admits(&self, path: &[usize]) -> bool {
        match self.allowed_spans() {
            None => true,
            Some(spans) => spans
                .iter()
                .any(|s| !path.is_empty() && path.iter().all(|&t| s.contains(t))),
        }
    }
}

/// Tokens a path may use under `mode`, as a half-open range. Empty when infeasible.
pub fn mode_region(pair: &ArgumentPair, mode: PositionMode, len: usize) -> std::ops::Range<usize> {
    let (s, e) = (pair.start, pair.end);
    match mode {
        PositionMode::Between => {
            let (lo, hi) = if s.end <= e.start {
                (s.end, e.start)
            } else if e.end <= s.start {
                (e.end, s.start)
            } else {
                (0, 0)
            };
            lo..hi.max(lo)
        }
        PositionMode::LeftOfBoth => 0..s.start.min(e.start),
        PositionMode::RightOfBoth => s.end.max(e.end).min(len)..len,
    }
}

/// A finished search path before it is turned into a task-specific triple.
#[derive(Clone, Debug, PartialEq)]
pub struct PathCandidate {
    pub pair: ArgumentPair,
    pub path: Vec<usize>,
    pub score: f64,
    pub mode: PositionMode,
}

impl PathCandidate {
    /// OIE reading: anchors are head and tail, the path is the relation.
    pub fn into_oie_candidate(self, bundle: &SentenceBundle) -> TripleCandidate {
        let triple = Triple {
            head: Argument {
                text: bundle.span_text(self.pair.start),
                span: Some(self.pair.start),
            },
            relation: Relation {
                text: bundle.join_tokens(self.path.iter().copied()),
                predicate_id: None,
                path: Some(self.path.clone()),
            },
            tail: Argument {
                text: bundle.span_text(self.pair.end),
                span: Some(self.pair.end),
            },
        };
        TripleCandidate {
            triple,
            pair: self.pair,
            path: self.path,
            search_score: self.score,
            rank_score: None,
            position_mode: self.mode,
        }
    }
}

/// Total order used for pruning and for final ordering: higher score, then
/// shorter path, then smaller last token, then lexicographically smaller path.
pub fn candidate_order(a_score: f64, a_path: &[usize], b_score: f64, b_path: &[usize]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then(a_path.len().cmp(&b_path.len()))
        .then(a_path.last().cmp(&b_path.last()))
        .then_with(|| a_path.cmp(b_path))
}

#[derive(Clone, Debug)]
struct Partial {
    path: Vec<usize>,
    log_sum: f64,
    /// Allowed spans that still contain every path token; never empty.
    groups: Vec<usize>,
}

impl Partial {
    fn frontier(&self) -> usize {
        *self.path.last().unwrap()
    }

    /// Length-normalized log score over the steps taken so far.
    fn mean_log(&self) -> f64 {
        self.log_sum / self.path.len() as f64
    }
}

impl PartialEq for Partial {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Partial {}

impl PartialOrd for Partial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Partial {
    /// Greater means better, so a max-heap pops the best partial first.
    fn cmp(&self, other: &Self) -> Ordering {
        candidate_order(other.mean_log(), &other.path, self.mean_log(), &self.path)
    }
}

/// One search step's beams for every width `1..=k`.
///
/// The width-`j` beam is always the prefix `members[..widths[j - 1]]`: it is
/// the width-`j - 1` beam topped up with the best not-yet-kept extensions of
/// the previous step's width-`j` beam. Wider beams therefore hold a superset
/// of the prefixes of narrower ones at every step, which makes the best
/// finished score non-decreasing in `k`.
struct NestedBeam {
    members: Vec<Partial>,
    widths: Vec<usize>,
}

impl NestedBeam {
    fn first(mut pool: Vec<Partial>, k: usize) -> Self {
        pool.sort_by(|a, b| b.cmp(a));
        pool.truncate(k);
        let widths = (1..=k).map(|j| j.min(pool.len())).collect();
        NestedBeam {
            members: pool,
            widths,
        }
    }

    fn next(&self, k: usize, mut children: impl FnMut(&Partial) -> Vec<Partial>) -> Self {
        let mut available = std::collections::BinaryHeap::new();
        let mut members: Vec<Partial> = Vec::with_capacity(k);
        let mut widths = Vec::with_capacity(k);
        let mut expanded = 0;
        for j in 1..=k {
            let parent_width = self.widths[j - 1];
            for parent in &self.members[expanded..parent_width] {
                available.extend(children(parent));
            }
            expanded = expanded.max(parent_width);
            while members.len() < j {
                match available.pop() {
                    Some(p) => members.push(p),
                    None => break,
                }
            }
            widths.push(members.len());
        }
        NestedBeam { members, widths }
    }

    fn beam(&self, k: usize) -> &[Partial] {
        &self.members[..self.widths[k - 1]]
    }
}

/// Beam search for a single position mode. Returns at most `beam_size`
/// completed paths, best first.
pub fn beam_search_mode(
    attention: &AttentionMatrix,
    pair: &ArgumentPair,
    mode: PositionMode,
    params: &BeamParams,
    constraint: &SearchConstraint,
) -> Vec<PathCandidate> {
    let k = params.beam_size.max(1);
    let region = mode_region(pair, mode, attention.size());
    let eligible: Vec<(usize, Vec<usize>)> = region
        .filter(|&t| !pair.start.contains(t) && !pair.end.contains(t))
        .filter_map(|t| constraint.groups_of(t).map(|g| (t, g)))
        .collect();
    if eligible.is_empty() {
        return Vec::new();
    }

    let starts: Vec<Partial> = eligible
        .iter()
        .filter_map(|(t, groups)| {
            let w = enter_weight(attention, pair.start, *t);
            (w > 0.0).then(|| Partial {
                path: vec![*t],
                log_sum: w.ln(),
                groups: groups.clone(),
            })
        })
        .collect();

    let extend = |p: &Partial| -> Vec<Partial> {
        let frontier = p.frontier();
        eligible
            .iter()
            .filter(|(t, _)| *t > frontier)
            .filter_map(|(t, groups)| {
                let shared: Vec<usize> = p.groups.iter().copied().filter(|g| groups.contains(g)).collect();
                if shared.is_empty() {
                    return None;
                }
                let w = step_weight(attention, frontier, *t);
                (w > 0.0).then(|| {
                    let mut path = p.path.clone();
                    path.push(*t);
                    Partial {
                        path,
                        log_sum: p.log_sum + w.ln(),
                        groups: shared,
                    }
                })
            })
            .collect()
    };

    let mut nested = NestedBeam::first(starts, k);
    let mut finished: Vec<PathCandidate> = Vec::new();
    for step in 1..=params.max_steps {
        let beam = nested.beam(k);
        if beam.is_empty() {
            break;
        }
        for p in beam {
            let score = sequence_score(&p.path, attention, pair, params.include_terminal);
            if score > 0.0 {
                finished.push(PathCandidate {
                    pair: *pair,
                    path: p.path.clone(),
                    score,
                    mode,
                });
            }
        }
        if step < params.max_steps {
            nested = nested.next(k, extend);
        }
    }

    finished.sort_by(|a, b| candidate_order(a.score, &a.path, b.score, &b.path));
    finished.truncate(k);
    finished
}

/// Runs one beam per enabled position mode and merges the results by score.
pub fn beam_search(
    attention: &AttentionMatrix,
    pair: &ArgumentPair,
    params: &BeamParams,
    constraint: &SearchConstraint,
) -> Vec<PathCandidate> {
    let mut merged: Vec<PathCandidate> = params
        .position_modes
        .iter()
        .flat_map(|&mode| beam_search_mode(attention, pair, mode, params, constraint))
        .collect();
    merged.sort_by(|a, b| {
        candidate_order(a.score, &a.path, b.score, &b.path).then(a.mode.cmp(&b.mode))
    });
    if let Some(cap) = params.pair_cap {
        merged.truncate(cap);
    }
    merged
}

fn gold_head_tail(bundle: &SentenceBundle) -> Result<(TokenSpan, TokenSpan)> {
    let gold: Vec<_> = bundle.annotations_of(AnnotationKind::Gold).collect();
    if gold.len() != 2 {
        return Err(Error::Precondition(format!(
            "bundle {}: relation classification needs exactly 2 GOLD spans, found {}",
            bundle.sentence_id,
            gold.len()
        )));
    }
    let head = gold
        .iter()
        .position(|a| a.role == Some(ArgRole::Head))
        .or_else(|| gold.iter().position(|a| a.role != Some(ArgRole::Tail)))
        .unwrap_or(0);
    Ok((gold[head].span, gold[1 - head].span))
}

/// Anchor pairs the task searches between.
///
/// * OIE: every ordered pair of distinct, non-overlapping noun phrases, so
///   each argument serves as both [S] and [E].
/// * Relation classification: the single (gold head, gold tail) pair.
/// * Factual probe: every (gold-head noun phrase, relation link) pair.
pub fn enumerate_argument_pairs(bundle: &SentenceBundle, task: TaskKind) -> Result<Vec<ArgumentPair>> {
    match task {
        TaskKind::Oie => {
            let nps = bundle.noun_phrases();
            let mut pairs = Vec::new();
            for &a in &nps {
                for &b in &nps {
                    if a != b && !a.overlaps(&b) {
                        pairs.push(ArgumentPair::new(a, b));
                    }
                }
            }
            Ok(pairs)
        }
        TaskKind::RelationClassification => {
            let (head, tail) = gold_head_tail(bundle)?;
            if head.overlaps(&tail) {
                return Err(Error::Precondition(format!(
                    "bundle {}: gold head {head} and tail {tail} overlap",
                    bundle.sentence_id
                )));
            }
            Ok(vec![ArgumentPair::new(head, tail)])
        }
        TaskKind::FactualProbe => {
            let heads: Vec<TokenSpan> = bundle
                .annotations_of(AnnotationKind::GoldNp)
                .map(|a| a.span)
                .collect();
            if heads.is_empty() {
                return Err(Error::Precondition(format!(
                    "bundle {}: factual probe needs a GOLD_NP head candidate",
                    bundle.sentence_id
                )));
            }
            let links: BTreeSet<TokenSpan> = bundle
                .annotations_of(AnnotationKind::RelationLink)
                .map(|a| a.span)
                .collect();
            let mut pairs = Vec::new();
            for &h in &heads {
                for &l in &links {
                    if !h.overlaps(&l) {
                        pairs.push(ArgumentPair::new(h, l));
                    }
                }
            }
            Ok(pairs)
        }
    }
}
