//! Metrics: OIE matching with P/R/F1 and PR-curve AUC, relation
//! classification micro-F1, factual-probe P@1, and relation-position counts.

mod gold;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::TripleText;

pub use gold::{parse_label_gold, parse_oie_gold, GoldFormat};

/// Sentence identity for alignment: lowercased with all whitespace removed,
/// so tokenization differences do not matter.
pub fn sentence_key(sentence: &str) -> String {
    sentence
        .chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Lowercased tokens with surrounding punctuation trimmed; tokens that are
/// pure punctuation disappear.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// When a predicted element counts as matching a gold element.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchPolicy {
    /// Required share of the shorter element's tokens found in the longer one.
    pub min_overlap: f64,
    /// Also require the gold element's last token to appear in the prediction.
    pub require_head: bool,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy {
            min_overlap: 0.5,
            require_head: true,
        }
    }
}

impl MatchPolicy {
    pub fn element_matches(&self, predicted: &str, gold: &str) -> bool {
        let p = normalize_tokens(predicted);
        let g = normalize_tokens(gold);
        if p.is_empty() || g.is_empty() {
            return p.is_empty() && g.is_empty();
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in &g {
            *counts.entry(t).or_default() += 1;
        }
        let mut common = 0usize;
        for t in &p {
            if let Some(c) = counts.get_mut(t.as_str()) {
                if *c > 0 {
                    *c -= 1;
                    common += 1;
                }
            }
        }
        let overlap = common as f64 / p.len().min(g.len()) as f64;
        if overlap < self.min_overlap {
            return false;
        }
        !self.require_head || p.contains(g.last().unwrap())
    }

    pub fn triple_matches(&self, predicted: &TripleText, gold: &TripleText) -> bool {
        self.element_matches(&predicted.head, &gold.head)
            && self.element_matches(&predicted.relation, &gold.relation)
            && self.element_matches(&predicted.tail, &gold.tail)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriple {
    pub sentence: String,
    pub triple: TripleText,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldTriple {
    pub sentence: String,
    pub triple: TripleText,
}

/// Prediction indices in descending confidence; ties keep input order.
fn confidence_order(predicted: &[ScoredTriple]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..predicted.len()).collect();
    order.sort_by(|&a, &b| predicted[b].confidence.total_cmp(&predicted[a].confidence));
    order
}

/// Greedy one-to-one matching in descending confidence, within sentences.
/// Returns `(prediction index, gold index)` pairs in matching order.
pub fn match_extractions(
    predicted: &[ScoredTriple],
    gold: &[GoldTriple],
    policy: &MatchPolicy,
) -> Vec<(usize, usize)> {
    let mut by_sentence: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, g) in gold.iter().enumerate() {
        by_sentence.entry(sentence_key(&g.sentence)).or_default().push(i);
    }
    let mut used = vec![false; gold.len()];
    let mut matches = Vec::new();
    for p in confidence_order(predicted) {
        let Some(candidates) = by_sentence.get(&sentence_key(&predicted[p].sentence)) else {
            continue;
        };
        if let Some(&g) = candidates
            .iter()
            .find(|&&g| !used[g] && policy.triple_matches(&predicted[p].triple, &gold[g].triple))
        {
            used[g] = true;
            matches.push((p, g));
        }
    }
    matches
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(correct: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

/// P/R/F1 over the predictions with confidence at or above `threshold`.
pub fn prf_at_threshold(
    predicted: &[ScoredTriple],
    gold: &[GoldTriple],
    policy: &MatchPolicy,
    threshold: f64,
) -> Prf {
    let kept: Vec<ScoredTriple> = predicted
        .iter()
        .filter(|p| p.confidence >= threshold)
        .cloned()
        .collect();
    let correct = match_extractions(&kept, gold, policy).len();
    Prf::from_counts(correct, kept.len(), gold.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

impl PrPoint {
    pub fn f1(&self) -> f64 {
        if self.precision + self.recall == 0.0 {
            0.0
        } else {
            2.0 * self.precision * self.recall / (self.precision + self.recall)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Descending threshold, so recall is non-decreasing.
    pub points: Vec<PrPoint>,
    pub auc: f64,
}

/// Area under `points` (in descending-threshold order): a rectangle from
/// recall 0 to the first point at its precision, then trapezoids.
pub fn area_under(points: &[PrPoint]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let mut auc = first.recall * first.precision;
    for w in points.windows(2) {
        auc += (w[1].recall - w[0].recall) * (w[0].precision + w[1].precision) / 2.0;
    }
    auc
}

impl PrCurve {
    pub fn best_f1(&self) -> Option<&PrPoint> {
        self.points
            .iter()
            .max_by(|a, b| a.f1().total_cmp(&b.f1()).then(a.threshold.total_cmp(&b.threshold)))
    }

    /// `threshold,precision,recall` rows and a trailing summary comment.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.precision, p.recall);
        }
        let (best_f1, best_t) = self
            .best_f1()
            .map(|p| (p.f1(), p.threshold))
            .unwrap_or((0.0, 0.0));
        let _ = writeln!(out, "# auc={} best_f1={} best_threshold={}", self.auc, best_f1, best_t);
        out
    }
}

/// One point per distinct confidence value. Greedy matching over a
/// confidence prefix is a prefix of the full matching, so one pass suffices.
pub fn pr_curve_and_auc(
    predicted: &[ScoredTriple],
    gold: &[GoldTriple],
    policy: &MatchPolicy,
) -> PrCurve {
    if predicted.is_empty() {
        return PrCurve::default();
    }
    let mut correct = vec![false; predicted.len()];
    for (p, _) in match_extractions(predicted, gold, policy) {
        correct[p] = true;
    }
    let order = confidence_order(predicted);
    let mut points = Vec::new();
    let (mut seen, mut hits) = (0usize, 0usize);
    for (pos, &i) in order.iter().enumerate() {
        seen += 1;
        hits += correct[i] as usize;
        let c = predicted[i].confidence;
        let last_of_group = order
            .get(pos + 1)
            .is_none_or(|&j| predicted[j].confidence != c);
        if last_of_group {
            let prf = Prf::from_counts(hits, seen, gold.len());
            points.push(PrPoint {
                threshold: c,
                precision: prf.precision,
                recall: prf.recall,
            });
        }
    }
    let auc = area_under(&points);
    PrCurve { points, auc }
}

/// Share of facts whose predicted tail equals the gold tail, ignoring case
/// and whitespace. `None` predictions (abstentions) are misses.
pub fn p_at_1(
    predictions: &BTreeMap<String, Option<String>>,
    gold: &BTreeMap<String, String>,
) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Eval("P@1 over an empty fact set is undefined".into()));
    }
    if let Some(id) = predictions.keys().find(|id| !gold.contains_key(*id)) {
        return Err(Error::Eval(format!("prediction for unknown fact `{id}`")));
    }
    let norm = |s: &str| sentence_key(s);
    let mut hits = 0usize;
    for (id, g) in gold {
        let p = predictions
            .get(id)
            .ok_or_else(|| Error::Eval(format!("no prediction for fact `{id}`")))?;
        if p.as_deref().is_some_and(|p| norm(p) == norm(g)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / gold.len() as f64)
}

/// Micro P/R/F1 for relation classification. The null label, when given,
/// is neither a predicted nor a gold positive. `None` predictions are
/// misses. With `categories`, any label outside it is an error.
pub fn rc_f1(
    predictions: &[Option<String>],
    gold: &[String],
    null_label: Option<&str>,
    categories: Option<&BTreeSet<String>>,
) -> Result<Prf> {
    if predictions.len() != gold.len() {
        return Err(Error::Eval(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    if let Some(cats) = categories {
        let outside = predictions
            .iter()
            .flatten()
            .chain(gold)
            .find(|l| Some(l.as_str()) != null_label && !cats.contains(*l));
        if let Some(l) = outside {
            return Err(Error::Eval(format!("label `{l}` is outside the task category")));
        }
    }
    let is_pos = |l: &str| Some(l) != null_label;
    let mut correct = 0;
    let mut pred_pos = 0;
    let mut gold_pos = 0;
    for (p, g) in predictions.iter().zip(gold) {
        let p_pos = p.as_deref().is_some_and(is_pos);
        pred_pos += p_pos as usize;
        gold_pos += is_pos(g) as usize;
        if p_pos && p.as_deref() == Some(g.as_str()) {
            correct += 1;
        }
    }
    if pred_pos == 0 && gold_pos == 0 {
        log::warn!("relation F1 has no positive predictions or gold labels; reporting 0");
    }
    Ok(Prf::from_counts(correct, pred_pos, gold_pos))
}

/// Hit-set reading of top-n: a sample predicts its gold label when the
/// label is among the decoded top-n labels, otherwise its top-1 label.
pub fn hit_set_predictions(
    top1: &[Option<String>],
    hit_sets: &[Vec<String>],
    gold: &[String],
) -> Vec<Option<String>> {
    top1.iter()
        .zip(hit_sets)
        .zip(gold)
        .map(|((t, hits), g)| if hits.contains(g) { Some(g.clone()) } else { t.clone() })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionStats {
    pub left: usize,
    pub right: usize,
    pub middle: usize,
    /// Triples whose elements cannot be found in the sentence; not in `total`.
    pub unlocatable: usize,
    pub total: usize,
}

impl PositionStats {
    /// Share of located relations that are not between their arguments.
    pub fn outside_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            (self.left + self.right) as f64 / self.total as f64
        }
    }
}

fn find_all(haystack: &[String], needle: &[String]) -> Vec<(usize, usize)> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    (0..=haystack.len() - needle.len())
        .filter(|&i| haystack[i..i + needle.len()] == *needle)
        .map(|i| (i, i + needle.len()))
        .collect()
}

/// Where a gold relation sits relative to its arguments, matching elements
/// as lowercased whitespace-token sequences. The first occurrence of each
/// argument is used, and the first relation occurrence overlapping neither.
pub fn relation_position(gold: &GoldTriple) -> Option<crate::triple::PositionMode> {
    use crate::triple::PositionMode;
    let lower = |s: &str| -> Vec<String> { s.split_whitespace().map(str::to_lowercase).collect() };
    let sent = lower(&gold.sentence);
    let head = *find_all(&sent, &lower(&gold.triple.head)).first()?;
    let tail = *find_all(&sent, &lower(&gold.triple.tail)).first()?;
    let disjoint = |a: (usize, usize), b: (usize, usize)| a.1 <= b.0 || b.1 <= a.0;
    let rel = find_all(&sent, &lower(&gold.triple.relation))
        .into_iter()
        .find(|&r| disjoint(r, head) && disjoint(r, tail))?;
    Some(if rel.1 <= head.0.min(tail.0) {
        PositionMode::LeftOfBoth
    } else if rel.0 >= head.1.max(tail.1) {
        PositionMode::RightOfBoth
    } else {
        PositionMode::Between
    })
}

pub fn relation_position_stats(gold: &[GoldTriple]) -> PositionStats {
    use crate::triple::PositionMode;
    let mut stats = PositionStats::default();
    for g in gold {
        match relation_position(g) {
            Some(PositionMode::LeftOfBoth) => stats.left += 1,
            Some(PositionMode::RightOfBoth) => stats.right += 1,
            Some(PositionMode::Between) => stats.middle += 1,
            None => {
                stats.unlocatable += 1;
                continue;
            }
        }
        stats.total += 1;
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tt(h: &str, r: &str, t: &str) -> TripleText {
        TripleText {
            head: h.into(),
            relation: r.into(),
            tail: t.into(),
        }
    }

    fn scored(s: &str, t: TripleText, c: f64) -> ScoredTriple {
        ScoredTriple {
            sentence: s.into(),
            triple: t,
            confidence: c,
        }
    }

    fn gold(s: &str, t: TripleText) -> GoldTriple {
        GoldTriple {
            sentence: s.into(),
            triple: t,
        }
    }

    #[test]
    fn trailing_punctuation_still_matches() {
        let p = MatchPolicy::default();
        assert!(p.triple_matches(
            &tt("Fisher", "Born in", "Glasgow"),
            &tt("Fisher", "Born in", "Glasgow ,")
        ));
        assert!(!p.element_matches("the London", "London Opera Centre"));
        assert!(p.element_matches("London Opera Centre", "the London Opera Centre"));
    }

    #[test]
    fn matching_is_per_sentence() {
        let pred = [scored("a b", tt("x", "y", "z"), 0.9)];
        let g = [gold("c d", tt("x", "y", "z"))];
        assert!(match_extractions(&pred, &g, &MatchPolicy::default()).is_empty());
        let g = [gold("A  B", tt("x", "y", "z"))];
        assert_eq!(match_extractions(&pred, &g, &MatchPolicy::default()), vec![(0, 0)]);
    }

    #[test]
    fn auc_with_anchor_rectangle() {
        let pts = [
            PrPoint { threshold: 0.9, precision: 1.0, recall: 0.5 },
            PrPoint { threshold: 0.1, precision: 0.5, recall: 1.0 },
        ];
        assert!((area_under(&pts) - 0.875).abs() < 1e-12);
    }

    #[test]
    fn rc_f1_closed_form() {
        let null = "no_relation";
        let mut pred = Vec::new();
        let mut g = Vec::new();
        for _ in 0..6 {
            pred.push(Some("r1".to_string()));
            g.push("r1".to_string());
        }
        for _ in 0..2 {
            pred.push(Some("r2".to_string()));
            g.push(null.to_string());
        }
        for _ in 0..2 {
            pred.push(Some(null.to_string()));
            g.push("r1".to_string());
        }
        let prf = rc_f1(&pred, &g, Some(null), None).unwrap();
        assert!((prf.f1 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rc_f1_rejects_unknown_label() {
        let cats: BTreeSet<String> = ["a".to_string()].into();
        let err = rc_f1(&[Some("b".into())], &["a".into()], None, Some(&cats));
        assert!(err.is_err());
    }

    #[test]
    fn position_of_running_example() {
        let s = "Born in Glasgow , Fisher is a graduate of the London Opera Centre .";
        let left = gold(s, tt("Fisher", "Born in", "Glasgow"));
        let mid = gold(s, tt("Fisher", "is a graduate of", "London Opera Centre"));
        let lost = gold(s, tt("Fisher", "studied at", "London Opera Centre"));
        let stats = relation_position_stats(&[left, mid, lost]);
        assert_eq!(
            stats,
            PositionStats { left: 1, right: 0, middle: 1, unlocatable: 1, total: 2 }
        );
    }
}
