//! A small trainable encoder: a linear map from bag-of-tokens counts to a
//! dense embedding, shared between sentences and triples. It stands in for a
//! pretrained encoder when checking the contrastive objective end to end.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss_from_similarities, Embedding};
use crate::error::{Error, Result};

/// Aligned (sentence features, triple features) rows; row `i` is a positive pair.
pub type Batch = Vec<(Vec<f64>, Vec<f64>)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    vocab: BTreeMap<String, usize>,
    dim: usize,
    /// Row-major `dim x features`; feature 0 is a constant bias.
    weights: Vec<f64>,
}

pub fn text_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
}

impl ToyEncoder {
    pub fn new(vocab: impl IntoIterator<Item = String>, dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let mut words: Vec<String> = vocab.into_iter().collect();
        words.sort();
        words.dedup();
        let vocab: BTreeMap<String, usize> =
            words.into_iter().enumerate().map(|(i, w)| (w, i + 1)).collect();
        let features = vocab.len() + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (3.0 / features as f64).sqrt();
        let weights = (0..dim * features)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        ToyEncoder {
            vocab,
            dim,
            weights,
        }
    }

    /// Builds the vocabulary from every token seen in `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>, dim: usize, seed: u64) -> Self {
        let vocab: Vec<String> = texts.into_iter().flat_map(text_tokens).collect();
        Self::new(vocab, dim, seed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_features(&self) -> usize {
        self.vocab.len() + 1
    }

    pub fn params(&self) -> &[f64] {
        &self.weights
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Token counts plus the bias feature; unknown tokens are ignored.
    pub fn featurize(&self, text: &str) -> Vec<f64> {
        let mut x = vec![0.0; self.num_features()];
        x[0] = 1.0;
        for tok in text_tokens(text) {
            if let Some(&i) = self.vocab.get(&tok) {
                x[i] += 1.0;
            }
        }
        x
    }

    pub fn embed_features(&self, x: &[f64]) -> Embedding {
        let f = self.num_features();
        debug_assert_eq!(x.len(), f);
        Embedding(
            self.weights
                .chunks_exact(f)
                .map(|row| row.iter().zip(x).map(|(w, xi)| w * xi).sum())
                .collect(),
        )
    }

    pub fn embed_text(&self, text: &str) -> Embedding {
        self.embed_features(&self.featurize(text))
    }

    pub fn batch_from_texts(&self, pairs: &[(String, String)]) -> Batch {
        pairs
            .iter()
            .map(|(s, t)| (self.featurize(s), self.featurize(t)))
            .collect()
    }

    pub fn batch_loss(&self, batch: &Batch) -> Result<f64> {
        Ok(self.loss_and_gradient(batch)?.0)
    }

    /// Batch loss and its analytic gradient with respect to the weights.
    pub fn loss_and_gradient(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::Precondition("empty batch".into()));
        }
        let f = self.num_features();
        if let Some((x, _)) = batch.iter().find(|(x, y)| x.len() != f || y.len() != f) {
            return Err(Error::DimensionMismatch {
                expected: f,
                got: x.len(),
            });
        }
        let us: Vec<Embedding> = batch.iter().map(|(x, _)| self.embed_features(x)).collect();
        let vs: Vec<Embedding> = batch.iter().map(|(_, y)| self.embed_features(y)).collect();
        let un: Vec<f64> = us.iter().map(Embedding::norm).collect();
        let vn: Vec<f64> = vs.iter().map(Embedding::norm).collect();
        if un.iter().chain(&vn).any(|&x| x == 0.0) {
            return Err(Error::ZeroVector);
        }
        let dot = |a: &Embedding, b: &Embedding| a.0.iter().zip(&b.0).map(|(p, q)| p * q).sum::<f64>();
        let sim: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|k| dot(&us[i], &vs[k]) / (un[i] * vn[k])).collect())
            .collect();
        let (loss, g) = loss_from_similarities(&sim);

        let d = self.dim;
        let mut du = vec![vec![0.0; d]; n];
        let mut dv = vec![vec![0.0; d]; n];
        for i in 0..n {
            for k in 0..n {
                let gik = g[i][k];
                if gik == 0.0 {
                    continue;
                }
                let inv = 1.0 / (un[i] * vn[k]);
                let (su, sv) = (sim[i][k] / (un[i] * un[i]), sim[i][k] / (vn[k] * vn[k]));
                for r in 0..d {
                    du[i][r] += gik * (vs[k].0[r] * inv - su * us[i].0[r]);
                    dv[k][r] += gik * (us[i].0[r] * inv - sv * vs[k].0[r]);
                }
            }
        }
        let mut grad = vec![0.0; d * f];
        for (i, (x, y)) in batch.iter().enumerate() {
            for r in 0..d {
                let row = &mut grad[r * f..(r + 1) * f];
                let (a, b) = (du[i][r], dv[i][r]);
                for c in 0..f {
                    row[c] += a * x[c] + b * y[c];
                }
            }
        }
        Ok((loss.loss, grad))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec(self).map_err(|e| Error::Json {
            context: "toy encoder".into(),
            source: e,
        })?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let enc: ToyEncoder = serde_json::from_slice(&bytes).map_err(|e| Error::Json {
            context: path.display().to_string(),
            source: e,
        })?;
        if enc.dim == 0 || enc.weights.len() != enc.dim * enc.num_features() {
            return Err(Error::Config(format!(
                "{}: weight table does not match vocabulary and dimension",
                path.display()
            )));
        }
        Ok(enc)
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub encoder: ToyEncoder,
    /// Batch loss before each update, in step order.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Plain gradient descent, cycling through `batches` for `epochs` passes.
pub fn train_toy_encoder(
    mut encoder: ToyEncoder,
    batches: &[Batch],
    epochs: usize,
    step_size: f64,
) -> Result<TrainReport> {
    if let Some(b) = batches.iter().find(|b| b.len() < 2) {
        return Err(Error::Precondition(format!(
            "training batches need at least 2 pairs, got {}",
            b.len()
        )));
    }
    let mut losses = Vec::with_capacity(epochs * batches.len());
    for _ in 0..epochs {
        for batch in batches {
            let (loss, grad) = encoder.loss_and_gradient(batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    step: losses.len(),
                    loss,
                });
            }
            losses.push(loss);
            for (w, g) in encoder.weights.iter_mut().zip(&grad) {
                *w -= step_size * g;
            }
            if encoder.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    step: losses.len(),
                    loss: f64::NAN,
                });
            }
        }
    }
    Ok(TrainReport { encoder, losses })
}

/// Largest relative error between the analytic gradient and central finite
/// differences with step `eps`, over every weight.
pub fn gradient_check(encoder: &ToyEncoder, batch: &Batch, eps: f64) -> Result<f64> {
    let (_, analytic) = encoder.loss_and_gradient(batch)?;
    let mut probe = encoder.clone();
    let mut worst = 0.0f64;
    for (j, &exact) in analytic.iter().enumerate() {
        let orig = probe.weights[j];
        probe.weights[j] = orig + eps;
        let plus = probe.batch_loss(batch)?;
        probe.weights[j] = orig - eps;
        let minus = probe.batch_loss(batch)?;
        probe.weights[j] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let scale = exact.abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((exact - numeric).abs() / scale);
    }
    Ok(worst)
}
