//! Sentence bundles: tokens, span annotations, the head-averaged attention
//! matrix and optional embeddings, plus their on-disk directory format.
//!
//! A bundle directory holds:
//!
//! * `manifest.json` with the sentence id, tokens, annotations, optional gold
//!   triples and the embedding table layout;
//! * `attention.f32`: the 8-byte header `DXAT` + `T` (u32 LE) followed by
//!   `T * T` little-endian f32 weights in row-major order;
//! * optionally `embeddings.f32`: `(1 + triples) * dim` little-endian f32,
//!   the sentence vector first, then one vector per named triple.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::triple::{TokenSpan, Triple};

pub const ATTENTION_MAGIC: &[u8; 4] = b"DXAT";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ATTENTION_FILE: &str = "attention.f32";
pub const EMBEDDINGS_FILE: &str = "embeddings.f32";
pub const DATASET_FILE: &str = "dataset.json";

pub const DEFAULT_ROW_SUM_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_MAX_SEQ_LEN: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Character offsets into the original sentence, display only.
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnnotationKind {
    Np,
    Gold,
    GoldNp,
    RelationLink,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgRole {
    Head,
    Tail,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanAnnotation {
    #[serde(flatten)]
    pub span: TokenSpan,
    pub kind: AnnotationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate_id: Option<String>,
    /// Distinguishes head from tail on `GOLD` annotations; when absent the
    /// first gold span in listing order is the head.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<ArgRole>,
}

impl SpanAnnotation {
    pub fn new(kind: AnnotationKind, span: TokenSpan) -> Self {
        SpanAnnotation {
            span,
            kind,
            predicate_id: None,
            role: None,
        }
    }

    pub fn relation_link(span: TokenSpan, predicate_id: impl Into<String>) -> Self {
        SpanAnnotation {
            span,
            kind: AnnotationKind::RelationLink,
            predicate_id: Some(predicate_id.into()),
            role: None,
        }
    }

    pub fn with_role(mut self, role: ArgRole) -> Self {
        self.role = Some(role);
        self
    }
}

/// Row-major `T x T` weights; entry `[q][k]` is what query token `q` assigns to key `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMatrix {
    size: usize,
    weights: Vec<f32>,
}

impl AttentionMatrix {
    pub fn new(size: usize, weights: Vec<f32>) -> Result<Self> {
        if weights.len() != size * size {
            return Err(Error::DimensionMismatch {
                expected: size * size,
                got: weights.len(),
            });
        }
        Ok(AttentionMatrix { size, weights })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        let mut weights = Vec::with_capacity(size * size);
        for row in rows {
            if row.len() != size {
                return Err(Error::DimensionMismatch {
                    expected: size,
                    got: row.len(),
                });
            }
            weights.extend(row.iter().map(|&w| w as f32));
        }
        Ok(AttentionMatrix { size, weights })
    }

    pub fn identity(size: usize) -> Self {
        let mut weights = vec![0.0; size * size];
        for i in 0..size {
            weights[i * size + i] = 1.0;
        }
        AttentionMatrix { size, weights }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Weight query `q` puts on key `k`.
    #[inline]
    pub fn get(&self, q: usize, k: usize) -> f64 {
        self.weights[q * self.size + k] as f64
    }

    pub fn row(&self, q: usize) -> &[f32] {
        &self.weights[q * self.size..(q + 1) * self.size]
    }

    pub fn raw(&self) -> &[f32] {
        &self.weights
    }

    pub fn validate(&self) -> ValidationReport {
        self.validate_with(DEFAULT_ROW_SUM_TOLERANCE)
    }

    pub fn validate_with(&self, tolerance: f64) -> ValidationReport {
        let mut report = ValidationReport::default();
        for q in 0..self.size {
            let row = self.row(q);
            let mut sum = 0.0f64;
            for (k, &w) in row.iter().enumerate() {
                if !w.is_finite() {
                    report.non_finite.push((q, k));
                } else if w < 0.0 {
                    report.negative_entries.push((q, k, w as f64));
                }
                sum += w as f64;
            }
            if !sum.is_finite() || (sum - 1.0).abs() > tolerance {
                report.bad_rows.push(RowDeviation { row: q, sum });
            }
        }
        report
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.weights.len());
        out.extend_from_slice(ATTENTION_MAGIC);
        out.extend_from_slice(&(self.size as u32).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 8 {
            return Err(format!("file too short ({} bytes)", bytes.len()));
        }
        if &bytes[..4] != ATTENTION_MAGIC {
            return Err("bad magic, expected DXAT".into());
        }
        let size = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() != size * size * 4 {
            return Err(format!(
                "header declares {size}x{size} but body holds {} floats",
                body.len() / 4
            ));
        }
        Ok(AttentionMatrix {
            size,
            weights: decode_f32s(body),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RowDeviation {
    pub row: usize,
    pub sum: f64,
}

/// Findings of [`AttentionMatrix::validate`]; empty means valid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub bad_rows: Vec<RowDeviation>,
    pub negative_entries: Vec<(usize, usize, f64)>,
    pub non_finite: Vec<(usize, usize)>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.bad_rows.is_empty() && self.negative_entries.is_empty() && self.non_finite.is_empty()
    }

    pub fn summary(&self) -> String {
        let mut parts = Vec::new();
        for r in &self.bad_rows {
            parts.push(format!("row {} sums to {:.6}", r.row, r.sum));
        }
        for (q, k, w) in &self.negative_entries {
            parts.push(format!("negative entry [{q}][{k}] = {w}"));
        }
        for (q, k) in &self.non_finite {
            parts.push(format!("non-finite entry [{q}][{k}]"));
        }
        if parts.is_empty() {
            "valid".into()
        } else {
            parts.join("; ")
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub pooling: String,
    pub sentence: Vec<f32>,
    /// Triple surface forms and their vectors, in manifest order.
    pub triples: Vec<(String, Vec<f32>)>,
}

impl Embeddings {
    pub fn dim(&self) -> usize {
        self.sentence.len()
    }

    pub fn triple(&self, surface: &str) -> Option<&[f32]> {
        self.triples
            .iter()
            .find(|(name, _)| name == surface)
            .map(|(_, v)| v.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceBundle {
    pub sentence_id: String,
    pub tokens: Vec<Token>,
    pub annotations: Vec<SpanAnnotation>,
    pub attention: AttentionMatrix,
    pub embeddings: Option<Embeddings>,
    pub gold_triples: Option<Vec<Triple>>,
    pub truncated: bool,
}

impl SentenceBundle {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Token texts at `indices`, space-joined in the given order.
    pub fn join_tokens(&self, indices: impl IntoIterator<Item = usize>) -> String {
        indices
            .into_iter()
            .map(|i| self.tokens[i].text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn span_text(&self, span: TokenSpan) -> String {
        self.join_tokens(span.indices())
    }

    pub fn annotations_of(&self, kind: AnnotationKind) -> impl Iterator<Item = &SpanAnnotation> {
        self.annotations.iter().filter(move |a| a.kind == kind)
    }

    /// Noun phrases including the ones marked as gold head candidates, in sentence order.
    pub fn noun_phrases(&self) -> Vec<TokenSpan> {
        let mut spans: Vec<TokenSpan> = self
            .annotations
            .iter()
            .filter(|a| matches!(a.kind, AnnotationKind::Np | AnnotationKind::GoldNp))
            .map(|a| a.span)
            .collect();
        spans.sort();
        spans.dedup();
        spans
    }

    /// Checks every invariant that loading guarantees.
    pub fn validate(&self, opts: &LoadOptions) -> Result<()> {
        let id = &self.sentence_id;
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::bundle(id, "tokens", "empty token list"));
        }
        if self.attention.size() != n {
            return Err(Error::bundle(
                id,
                "attention",
                format!("matrix is {0}x{0} but sentence has {n} tokens", self.attention.size()),
            ));
        }
        if opts.check_attention {
            let report = self.attention.validate_with(opts.row_sum_tolerance);
            if !report.is_valid() {
                return Err(Error::bundle(id, "attention", report.summary()));
            }
        }
        for (i, ann) in self.annotations.iter().enumerate() {
            let field = format!("annotations[{i}]");
            if TokenSpan::checked(ann.span.start, ann.span.end, n).is_none() {
                return Err(Error::bundle(
                    id,
                    field,
                    format!("span {} out of bounds for {n} tokens", ann.span),
                ));
            }
            let is_link = ann.kind == AnnotationKind::RelationLink;
            match (&ann.predicate_id, is_link) {
                (None, true) => {
                    return Err(Error::bundle(id, field, "RELATION_LINK without predicate_id"))
                }
                (Some(_), false) => {
                    return Err(Error::bundle(
                        id,
                        field,
                        "predicate_id only allowed on RELATION_LINK",
                    ))
                }
                (Some(p), true) if p.is_empty() => {
                    return Err(Error::bundle(id, field, "empty predicate_id"))
                }
                _ => {}
            }
        }
        // Same-kind spans must not overlap. Relation links may repeat an
        // identical span under different predicates (ambiguous aliases).
        for (i, a) in self.annotations.iter().enumerate() {
            for b in &self.annotations[i + 1..] {
                if a.kind != b.kind || !a.span.overlaps(&b.span) {
                    continue;
                }
                let ambiguous_link = a.kind == AnnotationKind::RelationLink
                    && a.span == b.span
                    && a.predicate_id != b.predicate_id;
                if !ambiguous_link {
                    return Err(Error::bundle(
                        id,
                        "annotations",
                        format!("{:?} spans {} and {} overlap", a.kind, a.span, b.span),
                    ));
                }
            }
        }
        if let Some(emb) = &self.embeddings {
            let dim = emb.dim();
            if dim == 0 {
                return Err(Error::bundle(id, "embedding.dim", "dimension must be positive"));
            }
            if let Some((name, _)) = emb.triples.iter().find(|(_, v)| v.len() != dim) {
                return Err(Error::bundle(
                    id,
                    "embedding.triples",
                    format!("vector for `{name}` has wrong dimension"),
                ));
            }
        }
        if let Some(gold) = &self.gold_triples {
            for (i, t) in gold.iter().enumerate() {
                if !t.is_well_formed() {
                    return Err(Error::bundle(
                        id,
                        format!("gold_triples[{i}]"),
                        "empty surface text",
                    ));
                }
                for span in [t.head.span, t.tail.span].into_iter().flatten() {
                    if span.end > n {
                        return Err(Error::bundle(
                            id,
                            format!("gold_triples[{i}]"),
                            format!("span {span} out of bounds"),
                        ));
                    }
                }
            }
        }
        if n > opts.max_seq_len {
            log::warn!(
                "bundle {id}: {n} tokens exceeds the expected maximum of {}",
                opts.max_seq_len
            );
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub row_sum_tolerance: f64,
    pub check_attention: bool,
    pub max_seq_len: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            row_sum_tolerance: DEFAULT_ROW_SUM_TOLERANCE,
            check_attention: true,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    sentence_id: String,
    tokens: Vec<Token>,
    #[serde(default)]
    annotations: Vec<SpanAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_triples: Option<Vec<Triple>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<EmbeddingLayout>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    truncated: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingLayout {
    dim: usize,
    #[serde(default = "default_pooling")]
    pooling: String,
    #[serde(default)]
    triples: Vec<String>,
}

fn default_pooling() -> String {
    "mean".into()
}

fn decode_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<SentenceBundle> {
    load_bundle_with(dir, &LoadOptions::default())
}

pub fn load_bundle_with(dir: impl AsRef<Path>, opts: &LoadOptions) -> Result<SentenceBundle> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = read(&manifest_path)?;
    let manifest: Manifest = serde_json::from_slice(&raw).map_err(|e| Error::Json {
        context: manifest_path.display().to_string(),
        source: e,
    })?;
    let id = manifest.sentence_id.clone();

    let attention = AttentionMatrix::from_bytes(&read(&dir.join(ATTENTION_FILE))?)
        .map_err(|m| Error::bundle(&id, "attention", m))?;

    let embeddings = match manifest.embedding {
        None => None,
        Some(layout) => {
            let floats = decode_f32s(&read(&dir.join(EMBEDDINGS_FILE))?);
            let expected = (1 + layout.triples.len()) * layout.dim;
            if floats.len() != expected || layout.dim == 0 {
                return Err(Error::bundle(
                    &id,
                    "embedding",
                    format!("expected {expected} floats, file holds {}", floats.len()),
                ));
            }
            let mut chunks = floats.chunks_exact(layout.dim).map(<[f32]>::to_vec);
            let sentence = chunks.next().unwrap();
            let triples = layout.triples.into_iter().zip(chunks).collect();
            Some(Embeddings {
                pooling: layout.pooling,
                sentence,
                triples,
            })
        }
    };

    let bundle = SentenceBundle {
        sentence_id: manifest.sentence_id,
        tokens: manifest.tokens,
        annotations: manifest.annotations,
        attention,
        embeddings,
        gold_triples: manifest.gold_triples,
        truncated: manifest.truncated,
    };
    bundle.validate(opts)?;
    Ok(bundle)
}

/// Writes `bundle` into `dir` (created if missing) in the format read by [`load_bundle`].
pub fn write_bundle(bundle: &SentenceBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        sentence_id: bundle.sentence_id.clone(),
        tokens: bundle.tokens.clone(),
        annotations: bundle.annotations.clone(),
        gold_triples: bundle.gold_triples.clone(),
        embedding: bundle.embeddings.as_ref().map(|e| EmbeddingLayout {
            dim: e.dim(),
            pooling: e.pooling.clone(),
            triples: e.triples.iter().map(|(n, _)| n.clone()).collect(),
        }),
        truncated: bundle.truncated,
    };
    let mut json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Json {
        context: "manifest".into(),
        source: e,
    })?;
    json.push(b'\n');
    write_file(&dir.join(MANIFEST_FILE), &json)?;
    write_file(&dir.join(ATTENTION_FILE), &bundle.attention.to_bytes())?;
    if let Some(emb) = &bundle.embeddings {
        let mut out = Vec::new();
        for v in std::iter::once(&emb.sentence).chain(emb.triples.iter().map(|(_, v)| v)) {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        write_file(&dir.join(EMBEDDINGS_FILE), &out)?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Task a dataset was exported for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Oie,
    RelationClassification,
    FactualProbe,
}

impl TaskKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "oie" => Some(TaskKind::Oie),
            "rc" | "relation_classification" => Some(TaskKind::RelationClassification),
            "fp" | "factual_probe" => Some(TaskKind::FactualProbe),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Oie => "oie",
            TaskKind::RelationClassification => "relation_classification",
            TaskKind::FactualProbe => "factual_probe",
        }
    }
}

/// Contents of `dataset.json`. Paths are relative to the dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<String>,
    /// Name of the task map inside the dictionary (e.g. `tacred`, `fewrel`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_map: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_label: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub meta: DatasetMeta,
    /// Bundle directories sorted by name.
    pub bundle_dirs: Vec<PathBuf>,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let meta_path = root.join(DATASET_FILE);
        let meta: DatasetMeta =
            serde_json::from_slice(&read(&meta_path)?).map_err(|e| Error::Json {
                context: meta_path.display().to_string(),
                source: e,
            })?;
        let mut bundle_dirs = Vec::new();
        for entry in fs::read_dir(&root).map_err(|e| Error::io(&root, e))? {
            let path = entry.map_err(|e| Error::io(&root, e))?.path();
            if path.join(MANIFEST_FILE).is_file() {
                bundle_dirs.push(path);
            }
        }
        bundle_dirs.sort();
        Ok(Dataset {
            root,
            meta,
            bundle_dirs,
        })
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn write_meta(root: impl AsRef<Path>, meta: &DatasetMeta) -> Result<()> {
        let root = root.as_ref();
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let mut json = serde_json::to_vec_pretty(meta).map_err(|e| Error::Json {
            context: "dataset".into(),
            source: e,
        })?;
        json.push(b'\n');
        write_file(&root.join(DATASET_FILE), &json)
    }
}
