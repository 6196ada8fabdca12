//! Ranking stage: cosine similarity between sentence and triple embeddings,
//! the symmetric in-batch contrastive loss used to train encoders, and top-n
//! candidate selection.

pub mod toy;

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use toy::{gradient_check, train_toy_encoder, Batch, ToyEncoder, TrainReport};

use crate::bundle::{Embeddings, SentenceBundle};
use crate::error::{Error, Result};
use crate::triple::TripleCandidate;

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Embedding(self.0.iter().map(|x| x * factor).collect())
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(v: Vec<f64>) -> Self {
        Embedding(v)
    }
}

impl From<&[f32]> for Embedding {
    fn from(v: &[f32]) -> Self {
        Embedding(v.iter().map(|&x| x as f64).collect())
    }
}

pub fn cosine_similarity(u: &Embedding, v: &Embedding) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            got: v.dim(),
        });
    }
    if u.dim() == 0 {
        return Err(Error::ZeroVector);
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Pairwise similarity matrix, `sim[i][k] = cos(u_i, v_k)`.
pub fn similarity_matrix(us: &[Embedding], vs: &[Embedding]) -> Result<Vec<Vec<f64>>> {
    us.iter()
        .map(|u| vs.iter().map(|v| cosine_similarity(u, v)).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveLoss {
    /// Mean over the batch of `(sentence_term + triple_term) / 2`.
    pub loss: f64,
    /// `-log softmax_k sim(u_i, v_k)` at `k = i`.
    pub sentence_terms: Vec<f64>,
    /// `-log softmax_k sim(u_k, v_i)` at `k = i`.
    pub triple_terms: Vec<f64>,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Loss and its gradient with respect to each entry of the similarity matrix.
pub fn loss_from_similarities(sim: &[Vec<f64>]) -> (ContrastiveLoss, Vec<Vec<f64>>) {
    let n = sim.len();
    let row_lse: Vec<f64> = (0..n).map(|i| log_sum_exp(sim[i].iter().copied())).collect();
    let col_lse: Vec<f64> = (0..n)
        .map(|k| log_sum_exp((0..n).map(|i| sim[i][k])))
        .collect();
    let sentence_terms: Vec<f64> = (0..n).map(|i| row_lse[i] - sim[i][i]).collect();
    let triple_terms: Vec<f64> = (0..n).map(|i| col_lse[i] - sim[i][i]).collect();
    let loss = sentence_terms
        .iter()
        .zip(&triple_terms)
        .map(|(a, b)| 0.5 * (a + b))
        .sum::<f64>()
        / n as f64;

    let scale = 0.5 / n as f64;
    let grad = (0..n)
        .map(|i| {
            (0..n)
                .map(|k| {
                    let row = (sim[i][k] - row_lse[i]).exp();
                    let col = (sim[i][k] - col_lse[k]).exp();
                    let diag = if i == k { 2.0 } else { 0.0 };
                    scale * (row + col - diag)
                })
                .collect()
        })
        .collect();
    (
        ContrastiveLoss {
            loss,
            sentence_terms,
            triple_terms,
        },
        grad,
    )
}

/// Symmetric in-batch contrastive loss over `N` aligned (sentence, triple)
/// embedding pairs; every off-diagonal pairing is a negative. No temperature.
pub fn contrastive_loss(us: &[Embedding], vs: &[Embedding]) -> Result<ContrastiveLoss> {
    if us.is_empty() {
        return Err(Error::Precondition("contrastive loss needs N >= 1".into()));
    }
    if us.len() != vs.len() {
        return Err(Error::DimensionMismatch {
            expected: us.len(),
            got: vs.len(),
        });
    }
    let sim = similarity_matrix(us, vs)?;
    Ok(loss_from_similarities(&sim).0)
}

/// Source of sentence and triple embeddings.
pub trait EncoderProvider: Sync {
    fn embed_sentence(&self, text: &str) -> Result<Embedding>;
    /// `surface` is the `head ; relation ; tail` linearization.
    fn embed_triple(&self, surface: &str) -> Result<Embedding>;
}

impl<T: EncoderProvider + ?Sized> EncoderProvider for &T {
    fn embed_sentence(&self, text: &str) -> Result<Embedding> {
        (**self).embed_sentence(text)
    }

    fn embed_triple(&self, surface: &str) -> Result<Embedding> {
        (**self).embed_triple(surface)
    }
}

/// Serves the vectors stored alongside a bundle.
pub struct PrecomputedProvider<'a> {
    sentence_id: &'a str,
    table: &'a Embeddings,
}

impl<'a> PrecomputedProvider<'a> {
    pub fn for_bundle(bundle: &'a SentenceBundle) -> Result<Self> {
        let table = bundle.embeddings.as_ref().ok_or_else(|| {
            Error::MissingEmbedding(format!("bundle {} has no embeddings", bundle.sentence_id))
        })?;
        Ok(PrecomputedProvider {
            sentence_id: &bundle.sentence_id,
            table,
        })
    }
}

impl EncoderProvider for PrecomputedProvider<'_> {
    fn embed_sentence(&self, _text: &str) -> Result<Embedding> {
        Ok(Embedding::from(self.table.sentence.as_slice()))
    }

    fn embed_triple(&self, surface: &str) -> Result<Embedding> {
        self.table
            .triple(surface)
            .map(Embedding::from)
            .ok_or_else(|| {
                Error::MissingEmbedding(format!("`{surface}` in bundle {}", self.sentence_id))
            })
    }
}

impl EncoderProvider for ToyEncoder {
    fn embed_sentence(&self, text: &str) -> Result<Embedding> {
        Ok(self.embed_text(text))
    }

    fn embed_triple(&self, surface: &str) -> Result<Embedding> {
        Ok(self.embed_text(surface))
    }
}

/// Provider choice made in the engine config.
#[derive(Clone, Debug)]
pub enum ProviderSpec {
    Precomputed,
    Toy(Arc<ToyEncoder>),
    /// Raw-score runs; bundles need no embeddings.
    Disabled,
}

/// Stands in for an encoder when ranking is off. Any call is a bug.
struct NoEncoder;

impl EncoderProvider for NoEncoder {
    fn embed_sentence(&self, _: &str) -> Result<Embedding> {
        Err(Error::Invariant("encoder consulted while ranking is disabled".into()))
    }

    fn embed_triple(&self, _: &str) -> Result<Embedding> {
        Err(Error::Invariant("encoder consulted while ranking is disabled".into()))
    }
}

impl ProviderSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProviderSpec::Precomputed => "precomputed",
            ProviderSpec::Toy(_) => "toy",
            ProviderSpec::Disabled => "none",
        }
    }

    pub fn for_bundle<'a>(
        &'a self,
        bundle: &'a SentenceBundle,
    ) -> Result<Box<dyn EncoderProvider + 'a>> {
        Ok(match self {
            ProviderSpec::Precomputed => Box::new(PrecomputedProvider::for_bundle(bundle)?),
            ProviderSpec::Toy(enc) => Box::new(enc.as_ref()),
            ProviderSpec::Disabled => Box::new(NoEncoder),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    #[default]
    Ranked,
    /// Ablation: keep the search score ordering, never consult the encoder.
    RawSearchScore,
}

fn by_search_then_text(a: &TripleCandidate, b: &TripleCandidate) -> Ordering {
    b.search_score
        .total_cmp(&a.search_score)
        .then_with(|| a.triple.surface().cmp(&b.triple.surface()))
}

/// Scores every candidate and returns the best `n`.
///
/// `Ranked` sets `rank_score` to the cosine between the sentence and triple
/// embeddings and sorts by it; ties fall back to search score, then surface text.
pub fn rank_candidates(
    sentence: &str,
    mut candidates: Vec<TripleCandidate>,
    provider: &dyn EncoderProvider,
    n: usize,
    mode: RankMode,
) -> Result<Vec<TripleCandidate>> {
    match mode {
        RankMode::RawSearchScore => {
            candidates.sort_by(by_search_then_text);
        }
        RankMode::Ranked => {
            if !candidates.is_empty() {
                let s = provider.embed_sentence(sentence)?;
                for c in &mut candidates {
                    let t = provider.embed_triple(&c.triple.surface())?;
                    c.rank_score = Some(cosine_similarity(&s, &t)?);
                }
            }
            candidates.sort_by(|a, b| {
                let (ra, rb) = (a.rank_score.unwrap(), b.rank_score.unwrap());
                rb.total_cmp(&ra).then_with(|| by_search_then_text(a, b))
            });
        }
    }
    candidates.truncate(n);
    Ok(candidates)
}

/// Top-1 accuracy of telling each sentence's own triple from a foreign one.
///
/// Each item is `(sentence, own triple, foreign triple)`; an item counts
/// as correct when the own triple is strictly more similar.
pub fn negative_pair_accuracy(
    items: &[(String, String, String)],
    provider: &dyn EncoderProvider,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Precondition("empty negative-pair set".into()));
    }
    let mut hits = 0usize;
    for (sentence, own, foreign) in items {
        let s = provider.embed_sentence(sentence)?;
        let pos = cosine_similarity(&s, &provider.embed_triple(own)?)?;
        let neg = cosine_similarity(&s, &provider.embed_triple(foreign)?)?;
        if pos > neg {
            hits += 1;
        }
    }
    Ok(hits as f64 / items.len() as f64)
}
