//! Independent oracles and random instance generators shared by the
//! integration tests. Nothing here calls the search code under test.

#![allow(dead_code)]

use attnex::bundle::AttentionMatrix;
use attnex::search::SearchConstraint;
use attnex::{ArgumentPair, PositionMode, TokenSpan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A search problem: matrix, anchors, one position mode and a constraint.
#[derive(Clone, Debug)]
pub struct Instance {
    pub attention: AttentionMatrix,
    pub pair: ArgumentPair,
    pub mode: PositionMode,
    pub constraint: SearchConstraint,
}

/// Tokens the mode allows, computed from first principles.
pub fn region(pair: &ArgumentPair, mode: PositionMode, n: usize) -> Vec<usize> {
    let (s, e) = (pair.start, pair.end);
    (0..n)
        .filter(|&t| !s.contains(t) && !e.contains(t))
        .filter(|&t| match mode {
            PositionMode::Between => {
                let lo = s.end.min(e.end);
                let hi = s.start.max(e.start);
                t >= lo && t < hi
            }
            PositionMode::LeftOfBoth => t < s.start && t < e.start,
            PositionMode::RightOfBoth => t >= s.end && t >= e.end,
        })
        .collect()
}

fn a(m: &AttentionMatrix, q: usize, k: usize) -> f64 {
    m.row(q)[k] as f64
}

/// Step weights of `path`: enter from the best [S] token, then each token
/// attending back to its predecessor, then the best [E] token attending to
/// the last one.
pub fn oracle_weights(m: &AttentionMatrix, pair: &ArgumentPair, path: &[usize], terminal: bool) -> Vec<f64> {
    let mut w = Vec::new();
    let first = path[0];
    w.push(pair.start.indices().map(|s| a(m, first, s)).fold(0.0, f64::max));
    for step in path.windows(2) {
        w.push(a(m, step[1], step[0]));
    }
    if terminal {
        let last = *path.last().unwrap();
        w.push(pair.end.indices().map(|e| a(m, e, last)).fold(0.0, f64::max));
    }
    w
}

pub fn oracle_score(m: &AttentionMatrix, pair: &ArgumentPair, path: &[usize], terminal: bool) -> f64 {
    let w = oracle_weights(m, pair, path, terminal);
    if w.iter().any(|&x| x <= 0.0) {
        return 0.0;
    }
    (w.iter().map(|x| x.ln()).sum::<f64>() / w.len() as f64).exp()
}

/// Whether `path` obeys the constraint: all tokens inside one allowed span.
pub fn oracle_admits(constraint: &SearchConstraint, path: &[usize]) -> bool {
    match constraint {
        SearchConstraint::Open => true,
        SearchConstraint::RelationLinked(spans) | SearchConstraint::CandidateNp(spans) => spans
            .iter()
            .any(|s| path.iter().all(|&t| t >= s.start && t < s.end)),
    }
}

/// `true` when `(sa, pa)` ranks before `(sb, pb)` under the documented
/// tie-break: score, then shorter, then smaller last index, then lexicographic.
pub fn ranks_before(sa: f64, pa: &[usize], sb: f64, pb: &[usize]) -> bool {
    if sa != sb {
        return sa > sb;
    }
    if pa.len() != pb.len() {
        return pa.len() < pb.len();
    }
    if pa.last() != pb.last() {
        return pa.last() < pb.last();
    }
    pa < pb
}

/// Every feasible path: strictly increasing, within the mode's region,
/// at most `max_steps` long, admitted by the constraint, positive score.
pub fn enumerate(inst: &Instance, max_steps: usize, terminal: bool) -> Vec<(f64, Vec<usize>)> {
    let tokens = region(&inst.pair, inst.mode, inst.attention.size());
    let mut out = Vec::new();
    let n = tokens.len();
    for mask in 1u32..(1u32 << n) {
        if mask.count_ones() as usize > max_steps {
            continue;
        }
        let path: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| tokens[i]).collect();
        if !oracle_admits(&inst.constraint, &path) {
            continue;
        }
        let s = oracle_score(&inst.attention, &inst.pair, &path, terminal);
        if s > 0.0 {
            out.push((s, path));
        }
    }
    out
}

pub fn oracle_best(inst: &Instance, max_steps: usize, terminal: bool) -> Option<(f64, Vec<usize>)> {
    enumerate(inst, max_steps, terminal)
        .into_iter()
        .reduce(|best, c| if ranks_before(c.0, &c.1, best.0, &best.1) { c } else { best })
}

/// Row-stochastic matrix. With `sparsity` > 0 that share of off-diagonal
/// entries is zeroed first, the way real attention concentrates mass.
pub fn random_matrix(n: usize, sparsity: f64, rng: &mut impl Rng) -> AttentionMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|q| {
            let raw: Vec<f64> = (0..n)
                .map(|k| {
                    if k != q && rng.gen_bool(sparsity) {
                        0.0
                    } else {
                        rng.gen::<f64>() + 1e-3
                    }
                })
                .collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        })
        .collect();
    AttentionMatrix::from_rows(&rows).unwrap()
}

fn random_span(n: usize, max_len: usize, rng: &mut impl Rng) -> TokenSpan {
    let len = rng.gen_range(1..=max_len.min(n));
    let start = rng.gen_range(0..=n - len);
    TokenSpan::new(start, start + len)
}

/// Disjoint anchor pair in a sentence of `n` tokens.
pub fn random_pair(n: usize, rng: &mut impl Rng) -> ArgumentPair {
    loop {
        let s = random_span(n, 2, rng);
        let e = random_span(n, 2, rng);
        if !s.overlaps(&e) {
            return ArgumentPair::new(s, e);
        }
    }
}

pub fn random_constraint(n: usize, rng: &mut impl Rng) -> SearchConstraint {
    let kind = rng.gen_range(0..3);
    let count = rng.gen_range(0..=3);
    let spans: Vec<TokenSpan> = (0..count).map(|_| random_span(n, 4, rng)).collect();
    match kind {
        0 => SearchConstraint::Open,
        1 => SearchConstraint::RelationLinked(spans),
        _ => SearchConstraint::CandidateNp(spans),
    }
}

pub fn random_mode(rng: &mut impl Rng) -> PositionMode {
    PositionMode::ALL[rng.gen_range(0..3)]
}

/// Random instance with `min_len..=max_len` tokens.
pub fn random_instance(min_len: usize, max_len: usize, sparsity: f64, rng: &mut impl Rng) -> Instance {
    let n = rng.gen_range(min_len..=max_len);
    Instance {
        attention: random_matrix(n, sparsity, rng),
        pair: random_pair(n, rng),
        mode: random_mode(rng),
        constraint: random_constraint(n, rng),
    }
}

/// Dense reference: full similarity matrix, explicit log-softmax per row
/// and per column, averaged as in the objective.
pub fn dense_oracle(u: &[Vec<f64>], v: &[Vec<f64>]) -> f64 {
    let n = u.len();
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let s: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|k| cos(&u[i], &v[k])).collect()).collect();
    let mut total = 0.0;
    for (i, row_i) in s.iter().enumerate() {
        let row: f64 = row_i.iter().map(|x| x.exp()).sum();
        let col: f64 = s.iter().map(|r| r[i].exp()).sum();
        let l_sentence = -(row_i[i].exp() / row).ln();
        let l_triple = -(row_i[i].exp() / col).ln();
        total += 0.5 * (l_sentence + l_triple);
    }
    total / n as f64
}

/// 100 sentences, each with private tokens shared by its own triple.
pub fn separable_pairs() -> Vec<(String, String)> {
    (0..100)
        .map(|i| {
            (
                format!("the w{i}a of w{i}b was seen near w{i}c yesterday"),
                format!("w{i}a ; seen near ; w{i}c"),
            )
        })
        .collect()
}

/// Each sentence with its own triple and one drawn from another sentence.
pub fn negative_items(pairs: &[(String, String)], seed: u64) -> Vec<(String, String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs.len())
        .map(|i| {
            let mut j = rng.gen_range(0..pairs.len() - 1);
            if j >= i {
                j += 1;
            }
            (pairs[i].0.clone(), pairs[i].1.clone(), pairs[j].1.clone())
        })
        .collect()
}

