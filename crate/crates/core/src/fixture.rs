//! Synthetic bundles with hand-built attention, used by tests, benches and
//! the `make-fixture` command.
//!
//! Attention is specified as sparse `(query, key, weight)` edges; whatever a
//! row does not spend goes to the diagonal, which no search step reads, so
//! every row stays stochastic without adding paths.

use std::path::Path;

use rand::Rng;

use crate::bundle::{
    AnnotationKind, ArgRole, AttentionMatrix, Dataset, DatasetMeta, Embeddings, SentenceBundle,
    SpanAnnotation, TaskKind, Token, write_bundle,
};
use crate::error::Result;
use crate::search::{beam_search, enumerate_argument_pairs, BeamParams, SearchConstraint};
use crate::triple::{Argument, Relation, TokenSpan, Triple};

/// Builds a bundle from whitespace-separated words.
pub struct BundleBuilder {
    id: String,
    tokens: Vec<Token>,
    edges: Vec<(usize, usize, f64)>,
    annotations: Vec<SpanAnnotation>,
    gold: Vec<Triple>,
}

impl BundleBuilder {
    pub fn new(id: impl Into<String>, sentence: &str) -> Self {
        let mut tokens = Vec::new();
        let mut offset = 0;
        for word in sentence.split_whitespace() {
            let start = offset + sentence[offset..].find(word).unwrap();
            let start_chars = sentence[..start].chars().count();
            let len = word.chars().count();
            tokens.push(Token {
                text: word.to_string(),
                start: start_chars,
                end: start_chars + len,
            });
            offset = start + word.len();
        }
        BundleBuilder {
            id: id.into(),
            tokens,
            edges: Vec::new(),
            annotations: Vec::new(),
            gold: Vec::new(),
        }
    }

    /// Query `q` attends to key `k` with weight `w`.
    pub fn attend(mut self, q: usize, k: usize, w: f64) -> Self {
        self.edges.push((q, k, w));
        self
    }

    pub fn annotate(mut self, kind: AnnotationKind, start: usize, end: usize) -> Self {
        self.annotations
            .push(SpanAnnotation::new(kind, TokenSpan::new(start, end)));
        self
    }

    pub fn gold_arg(mut self, role: ArgRole, start: usize, end: usize) -> Self {
        self.annotations.push(
            SpanAnnotation::new(AnnotationKind::Gold, TokenSpan::new(start, end)).with_role(role),
        );
        self
    }

    pub fn link(mut self, start: usize, end: usize, predicate: &str) -> Self {
        self.annotations
            .push(SpanAnnotation::relation_link(TokenSpan::new(start, end), predicate));
        self
    }

    pub fn gold_triple(mut self, head: (usize, usize), relation: (usize, usize), tail: (usize, usize)) -> Self {
        let text = |(s, e): (usize, usize)| {
            self.tokens[s..e]
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let triple = Triple {
            head: Argument {
                text: text(head),
                span: Some(TokenSpan::new(head.0, head.1)),
            },
            relation: Relation {
                text: text(relation),
                predicate_id: None,
                path: Some((relation.0..relation.1).collect()),
            },
            tail: Argument {
                text: text(tail),
                span: Some(TokenSpan::new(tail.0, tail.1)),
            },
        };
        self.gold.push(triple);
        self
    }

    pub fn build(self) -> SentenceBundle {
        let n = self.tokens.len();
        let mut rows = vec![vec![0.0f64; n]; n];
        for &(q, k, w) in &self.edges {
            assert!(q != k, "diagonal is reserved for leftover mass");
            rows[q][k] += w;
        }
        for (q, row) in rows.iter_mut().enumerate() {
            let spent: f64 = row.iter().sum();
            assert!(spent <= 1.0 + 1e-12, "row {q} spends {spent}");
            row[q] = 1.0 - spent;
        }
        SentenceBundle {
            sentence_id: self.id,
            tokens: self.tokens,
            annotations: self.annotations,
            attention: AttentionMatrix::from_rows(&rows).expect("square by construction"),
            embeddings: None,
            gold_triples: (!self.gold.is_empty()).then_some(self.gold),
            truncated: false,
        }
    }
}

pub const RUNNING_EXAMPLE: &str =
    "Born in Glasgow , Fisher is a graduate of the London Opera Centre .";

/// Attention of the running example. Token indices:
/// `0 Born 1 in 2 Glasgow 3 , 4 Fisher 5 is 6 a 7 graduate 8 of 9 the
/// 10 London 11 Opera 12 Centre 13 .`
fn running_example_builder(id: &str) -> BundleBuilder {
    BundleBuilder::new(id, RUNNING_EXAMPLE)
        // Fisher -> Born -> in -> Glasgow
        .attend(0, 4, 0.5)
        .attend(1, 0, 0.5)
        .attend(2, 1, 0.5)
        // Fisher -> is -> a -> graduate -> of -> London Opera Centre
        .attend(5, 4, 0.4)
        .attend(6, 5, 0.4)
        .attend(7, 6, 0.4)
        .attend(8, 7, 0.4)
        .attend(10, 8, 0.4)
        // weaker distractors
        .attend(9, 8, 0.3)
        .attend(10, 9, 0.3)
        .attend(3, 2, 0.2)
        .attend(4, 3, 0.2)
        // Glasgow <-> Fisher / in, used by the factual probe
        .attend(2, 4, 0.2)
        .attend(1, 2, 0.3)
}

/// Running example prepared for open extraction, with precomputed
/// embeddings for every triple the search can produce. The two reference
/// triples rank first, with `is a graduate of` ahead of `Born in`, while
/// `Born in` has the higher search score.
pub fn running_example() -> SentenceBundle {
    let mut bundle = running_example_builder("running-example")
        .annotate(AnnotationKind::Np, 2, 3)
        .annotate(AnnotationKind::Np, 4, 5)
        .annotate(AnnotationKind::Np, 10, 13)
        .gold_triple((4, 5), (0, 2), (2, 3))
        .gold_triple((4, 5), (5, 9), (10, 13))
        .build();
    let surfaces = reachable_oie_surfaces(&bundle);
    bundle.embeddings = Some(embeddings_favoring(
        &surfaces,
        &[
            "Fisher ; is a graduate of ; London Opera Centre",
            "Fisher ; Born in ; Glasgow",
        ],
    ));
    bundle
}

/// Running example with gold head/tail and a linked relation phrase.
pub fn running_example_rc() -> SentenceBundle {
    running_example_builder("running-example-rc")
        .gold_arg(ArgRole::Head, 4, 5)
        .gold_arg(ArgRole::Tail, 2, 3)
        .link(0, 2, "place_of_birth")
        .build()
}

/// Running example as a factual probe: Fisher is the gold head candidate.
pub fn running_example_fp() -> SentenceBundle {
    running_example_builder("running-example-fp")
        .annotate(AnnotationKind::Np, 2, 3)
        .annotate(AnnotationKind::GoldNp, 4, 5)
        .annotate(AnnotationKind::Np, 10, 13)
        .link(0, 2, "place_of_birth")
        .build()
}

/// Every distinct OIE triple surface reachable by an unpruned search.
pub fn reachable_oie_surfaces(bundle: &SentenceBundle) -> Vec<String> {
    let params = BeamParams::default().with_beam_size(4096);
    let mut surfaces: Vec<String> = enumerate_argument_pairs(bundle, TaskKind::Oie)
        .unwrap_or_default()
        .iter()
        .flat_map(|pair| beam_search(&bundle.attention, pair, &params, &SearchConstraint::Open))
        .map(|c| c.into_oie_candidate(bundle).triple.surface())
        .collect();
    surfaces.sort();
    surfaces.dedup();
    surfaces
}

/// 4-d table where the sentence vector is `e0`, the `favored` triples come
/// first in similarity (in the given order) and all others sit far away.
pub fn embeddings_favoring(surfaces: &[String], favored: &[&str]) -> Embeddings {
    let mut triples = Vec::new();
    let mut others = 0usize;
    for s in surfaces {
        let v = match favored.iter().position(|f| f == s) {
            Some(rank) => {
                let cos = 0.98 - 0.03 * rank as f32;
                vec![cos, (1.0 - cos * cos).sqrt(), 0.0, 0.0]
            }
            None => {
                others += 1;
                vec![0.2, 0.0, 0.9, 0.1 * others as f32]
            }
        };
        triples.push((s.clone(), v));
    }
    for f in favored {
        assert!(
            surfaces.iter().any(|s| s == f),
            "favored triple `{f}` is not reachable"
        );
    }
    Embeddings {
        pooling: "mean".into(),
        sentence: vec![1.0, 0.0, 0.0, 0.0],
        triples,
    }
}

/// Writes the running example as a one-sentence OIE dataset.
pub fn write_running_example_dataset(root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    Dataset::write_meta(
        root,
        &DatasetMeta {
            task: TaskKind::Oie,
            dictionary: None,
            task_map: None,
            null_label: None,
        },
    )?;
    write_bundle(&running_example(), root.join("running-example"))
}

/// Gold OIE rows (sentence, head, relation, tail) for the running example.
pub fn running_example_gold_tsv() -> String {
    format!(
        "{s}\tFisher\tBorn in\tGlasgow\n{s}\tFisher\tis a graduate of\tLondon Opera Centre\n",
        s = RUNNING_EXAMPLE
    )
}

/// Random row-stochastic matrix; entries are cubed uniforms so that rows
/// are peaked like real attention.
pub fn random_attention(n: usize, rng: &mut impl Rng) -> AttentionMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(3) + 1e-9).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        })
        .collect();
    AttentionMatrix::from_rows(&rows).expect("square")
}

/// Random sentence of `n` tokens with `nps` non-overlapping single- or
/// two-token noun phrases.
pub fn random_bundle(id: &str, n: usize, nps: usize, rng: &mut impl Rng) -> SentenceBundle {
    let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
    let mut bundle = BundleBuilder::new(id, &words.join(" ")).build();
    bundle.attention = random_attention(n, rng);
    let mut taken = vec![false; n];
    let mut placed = 0;
    for _ in 0..nps * 8 {
        if placed == nps {
            break;
        }
        let len = rng.gen_range(1..=2usize).min(n);
        let start = rng.gen_range(0..=n - len);
        if taken[start..start + len].iter().any(|&t| t) {
            continue;
        }
        taken[start..start + len].iter_mut().for_each(|t| *t = true);
        bundle
            .annotations
            .push(SpanAnnotation::new(AnnotationKind::Np, TokenSpan::new(start, start + len)));
        placed += 1;
    }
    bundle
}
