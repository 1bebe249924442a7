//! Encoder contract: question vectors, contextual per-sentence passage
//! vectors, the inner-product similarity, the softmax contrastive loss and
//! its closed-form gradient, and checkpoint persistence.
//!
//! The bundled encoder is deliberately small: hashed character-trigram bag
//! features with two learned linear projections (question tower, context
//! tower). Contextuality comes from an alpha-blend of sentence-local and
//! whole-passage features, so sibling sentence vectors are correlated but
//! not identical.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::corpus::{normalize_text, Passage};
use crate::scalar::{dot, softmax};
use crate::{Error, Result, Scalar, TrainFloat};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCSR";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Sparse L2-normalized feature vector, sorted by feature index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures(pub Vec<(u32, TrainFloat)>);

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Hashed character-trigram counts of the normalized text, L2-normalized.
pub fn trigram_features(text: &str, feature_space: u32) -> Result<SparseFeatures> {
    let norm = normalize_text(text);
    if norm.is_empty() {
        return Err(Error::EmptyText);
    }
    let chars: Vec<char> = norm.chars().collect();
    let mut counts: std::collections::BTreeMap<u32, TrainFloat> = std::collections::BTreeMap::new();
    if chars.len() < 3 {
        let idx = (fnv1a(norm.as_bytes()) % feature_space as u64) as u32;
        counts.insert(idx, 1.0);
    } else {
        for window in chars.windows(3) {
            let tri: String = window.iter().collect();
            let idx = (fnv1a(tri.as_bytes()) % feature_space as u64) as u32;
            *counts.entry(idx).or_insert(0.0) += 1.0;
        }
    }
    let norm2: TrainFloat = counts.values().map(|v| v * v).sum::<TrainFloat>().sqrt();
    Ok(SparseFeatures(
        counts.into_iter().map(|(i, v)| (i, v / norm2)).collect(),
    ))
}

/// Weighted merge of two sparse vectors: `wa * a + wb * b`.
pub fn blend(a: &SparseFeatures, wa: TrainFloat, b: &SparseFeatures, wb: TrainFloat) -> SparseFeatures {
    let mut out = Vec::with_capacity(a.0.len() + b.0.len());
    let (mut i, mut j) = (0, 0);
    while i < a.0.len() || j < b.0.len() {
        match (a.0.get(i), b.0.get(j)) {
            (Some(&(ia, va)), Some(&(ib, vb))) if ia == ib => {
                out.push((ia, wa * va + wb * vb));
                i += 1;
                j += 1;
            }
            (Some(&(ia, va)), Some(&(ib, _))) if ia < ib => {
                out.push((ia, wa * va));
                i += 1;
            }
            (Some(_), Some(&(ib, vb))) => {
                out.push((ib, wb * vb));
                j += 1;
            }
            (Some(&(ia, va)), None) => {
                out.push((ia, wa * va));
                i += 1;
            }
            (None, Some(&(ib, vb))) => {
                out.push((ib, wb * vb));
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    SparseFeatures(out)
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<TrainFloat>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// `self * features` where features index columns.
    pub fn mul_sparse(&self, features: &SparseFeatures) -> Vec<TrainFloat> {
        let mut out = vec![0.0; self.rows];
        for &(col, value) in &features.0 {
            let col = col as usize;
            for (row, slot) in out.iter_mut().enumerate() {
                *slot += self.data[row * self.cols + col] * value;
            }
        }
        out
    }

    /// `self += scale * vec ⊗ features` (rank-one update on feature columns).
    pub fn add_scaled_outer(&mut self, vec: &[TrainFloat], features: &SparseFeatures, scale: TrainFloat) {
        for &(col, value) in &features.0 {
            let col = col as usize;
            for (row, &v) in vec.iter().enumerate() {
                self.data[row * self.cols + col] += scale * v * value;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &Matrix, scale: TrainFloat) {
        for (slot, &v) in self.data.iter_mut().zip(&other.data) {
            *slot += scale * v;
        }
    }
}

/// The trainable state of the bi-encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub question_projection: Matrix,
    pub context_projection: Matrix,
    /// Blend weight of sentence-local features vs. whole-passage features.
    pub context_blend: TrainFloat,
    pub feature_space: u32,
    pub seed: u64,
}

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_FEATURE_SPACE: u32 = 1 << 15;
pub const DEFAULT_CONTEXT_BLEND: TrainFloat = 0.7;

impl EncoderParams {
    pub fn new(dim: usize, feature_space: u32, context_blend: TrainFloat, seed: u64) -> Result<EncoderParams> {
        if !(0.0..=1.0).contains(&context_blend) {
            return Err(Error::Range(format!(
                "context_blend must be in [0,1], got {context_blend}"
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let scale = 0.1;
        let mut init = |rows: usize, cols: usize| Matrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect(),
        };
        Ok(EncoderParams {
            question_projection: init(dim, feature_space as usize),
            context_projection: init(dim, feature_space as usize),
            context_blend,
            feature_space,
            seed,
        })
    }

    pub fn with_defaults(seed: u64) -> EncoderParams {
        EncoderParams::new(DEFAULT_DIM, DEFAULT_FEATURE_SPACE, DEFAULT_CONTEXT_BLEND, seed).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.question_projection.rows
    }
}

/// Question-tower encoding: projection of the question's trigram features.
pub fn encode_question(question: &str, params: &EncoderParams) -> Result<Vec<TrainFloat>> {
    let feats = trigram_features(question, params.feature_space)?;
    Ok(params.question_projection.mul_sparse(&feats))
}

/// Blended per-sentence feature vectors for a passage.
pub fn passage_features(passage: &Passage, params: &EncoderParams) -> Result<Vec<SparseFeatures>> {
    let ctx = trigram_features(&passage.source_text, params.feature_space)?;
    passage
        .sentences
        .iter()
        .map(|s| {
            let local = trigram_features(&s.text, params.feature_space)?;
            Ok(blend(&local, params.context_blend, &ctx, 1.0 - params.context_blend))
        })
        .collect()
}

/// Context-tower encoding: one vector per sentence of the passage.
pub fn encode_passage(passage: &Passage, params: &EncoderParams) -> Result<Vec<Vec<TrainFloat>>> {
    Ok(passage_features(passage, params)?
        .iter()
        .map(|f| params.context_projection.mul_sparse(f))
        .collect())
}

/// Feature vector for one specific sentence of a passage.
pub fn sentence_features(
    sentence_text: &str,
    passage_text: &str,
    params: &EncoderParams,
) -> Result<SparseFeatures> {
    let local = trigram_features(sentence_text, params.feature_space)?;
    let ctx = trigram_features(passage_text, params.feature_space)?;
    Ok(blend(&local, params.context_blend, &ctx, 1.0 - params.context_blend))
}

/// Inner-product similarity.
pub fn sim<S: Scalar>(a: &[S], b: &[S]) -> Result<S> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(dot(a, b))
}

/// Where a candidate sentence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateOrigin {
    InBatchGold,
    Bm25Negative,
    InPassageNegative,
}

/// Aligned question and candidate vectors with one gold index per question.
///
/// Candidates are shared: every candidate participates in every question's
/// softmax denominator.
#[derive(Debug, Clone)]
pub struct LossBatch {
    pub question_vecs: Vec<Vec<TrainFloat>>,
    pub candidate_vecs: Vec<Vec<TrainFloat>>,
    pub gold_index: Vec<usize>,
    pub candidate_origin: Vec<CandidateOrigin>,
    /// How many batch golds share a positive passage with another gold.
    pub duplicate_gold_passages: usize,
}

impl LossBatch {
    pub fn validate(&self) -> Result<()> {
        let n = self.question_vecs.len();
        let m = self.candidate_vecs.len();
        if n == 0 || m < n {
            return Err(Error::Range(format!("invalid batch arity n={n} m={m}")));
        }
        let mut seen = std::collections::HashSet::new();
        for &g in &self.gold_index {
            if g >= m || !seen.insert(g) || self.candidate_origin[g] != CandidateOrigin::InBatchGold {
                return Err(Error::Range(format!("bad gold index {g}")));
            }
        }
        Ok(())
    }
}

/// Per-question mean of `-log softmax(sim(q_i, gold_i))` over gold and all
/// candidates; scalar-generic kernel on a precomputed similarity matrix.
pub fn contrastive_loss<S: Scalar>(sims: &[Vec<S>], gold: &[usize]) -> Result<S> {
    let mut total = S::zero();
    for (row, &g) in sims.iter().zip(gold) {
        if row.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numerical {
                context: "similarity matrix".into(),
            });
        }
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let lse = max
            + row
                .iter()
                .map(|&s| (s - max).exp())
                .sum::<S>()
                .ln();
        total = total + (lse - row[g]);
    }
    Ok(total / S::from_usize(gold.len()).unwrap())
}

fn similarity_matrix(batch: &LossBatch) -> Result<Vec<Vec<TrainFloat>>> {
    batch
        .question_vecs
        .iter()
        .map(|q| {
            batch
                .candidate_vecs
                .iter()
                .map(|c| sim(q, c))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Mean contrastive loss of a batch. Always finite and non-negative.
pub fn loss(batch: &LossBatch) -> Result<TrainFloat> {
    batch.validate()?;
    contrastive_loss(&similarity_matrix(batch)?, &batch.gold_index)
}

/// A batch in feature space; vectors are recomputed from the current
/// parameters on every gradient step.
#[derive(Debug, Clone)]
pub struct FeatureBatch {
    pub question_feats: Vec<SparseFeatures>,
    pub candidate_feats: Vec<SparseFeatures>,
    pub gold_index: Vec<usize>,
    pub candidate_origin: Vec<CandidateOrigin>,
    pub duplicate_gold_passages: usize,
}

impl FeatureBatch {
    pub fn to_loss_batch(&self, params: &EncoderParams) -> LossBatch {
        LossBatch {
            question_vecs: self
                .question_feats
                .iter()
                .map(|f| params.question_projection.mul_sparse(f))
                .collect(),
            candidate_vecs: self
                .candidate_feats
                .iter()
                .map(|f| params.context_projection.mul_sparse(f))
                .collect(),
            gold_index: self.gold_index.clone(),
            candidate_origin: self.candidate_origin.clone(),
            duplicate_gold_passages: self.duplicate_gold_passages,
        }
    }
}

/// Gradient of the loss with respect to both projection matrices.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub question_projection: Matrix,
    pub context_projection: Matrix,
}

/// Loss and its exact analytic gradient.
///
/// The encoder is linear, so the gradient is a sum of softmax-weighted
/// outer products: with residuals `g_ij = (p_ij - [j = gold_i]) / n`,
/// `dQ = Σ_i (Σ_j g_ij c_j) ⊗ f_qi` and `dC = Σ_j (Σ_i g_ij q_i) ⊗ f_cj`.
pub fn loss_gradient(batch: &FeatureBatch, params: &EncoderParams) -> Result<(TrainFloat, Gradients)> {
    let lb = batch.to_loss_batch(params);
    lb.validate()?;
    let sims = similarity_matrix(&lb)?;
    let n = lb.question_vecs.len();
    let m = lb.candidate_vecs.len();
    let dim = params.dim();

    let loss_value = contrastive_loss(&sims, &lb.gold_index)?;

    // residuals g_ij
    let mut residuals = vec![vec![0.0; m]; n];
    for (i, row) in sims.iter().enumerate() {
        let probs = softmax(row)?;
        for (j, &p) in probs.iter().enumerate() {
            let indicator = if j == lb.gold_index[i] { 1.0 } else { 0.0 };
            residuals[i][j] = (p - indicator) / n as TrainFloat;
        }
    }

    let mut dq = Matrix::zeros(dim, params.feature_space as usize);
    for i in 0..n {
        let mut weighted = vec![0.0; dim];
        for (j, cand) in lb.candidate_vecs.iter().enumerate() {
            let g = residuals[i][j];
            for (slot, &c) in weighted.iter_mut().zip(cand) {
                *slot += g * c;
            }
        }
        dq.add_scaled_outer(&weighted, &batch.question_feats[i], 1.0);
    }

    let mut dc = Matrix::zeros(dim, params.feature_space as usize);
    for j in 0..m {
        let mut weighted = vec![0.0; dim];
        for (i, quest) in lb.question_vecs.iter().enumerate() {
            let g = residuals[i][j];
            for (slot, &q) in weighted.iter_mut().zip(quest) {
                *slot += g * q;
            }
        }
        dc.add_scaled_outer(&weighted, &batch.candidate_feats[j], 1.0);
    }

    Ok((
        loss_value,
        Gradients {
            question_projection: dq,
            context_projection: dc,
        },
    ))
}

fn write_matrix<W: Write>(writer: &mut W, matrix: &Matrix) -> Result<()> {
    for &v in &matrix.data {
        writer.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

/// Write a checkpoint: magic, version, dim, feature space, blend, matrices.
pub fn save_params<P: AsRef<Path>>(params: &EncoderParams, path: P) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    file.write_u32::<LittleEndian>(params.dim() as u32)?;
    file.write_u32::<LittleEndian>(params.feature_space)?;
    file.write_f64::<LittleEndian>(params.context_blend)?;
    write_matrix(&mut file, &params.question_projection)?;
    write_matrix(&mut file, &params.context_projection)?;
    Ok(())
}

fn read_matrix<R: Read>(reader: &mut R, rows: usize, cols: usize) -> Result<Matrix> {
    let mut data = vec![0.0; rows * cols];
    for slot in &mut data {
        *slot = reader
            .read_f64::<LittleEndian>()
            .map_err(|_| Error::IncompatibleCheckpoint("truncated matrix data".into()))?;
    }
    Ok(Matrix { rows, cols, data })
}

pub fn load_params<P: AsRef<Path>>(path: P) -> Result<EncoderParams> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| Error::IncompatibleCheckpoint("file too short for header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::IncompatibleCheckpoint(format!(
            "bad magic {magic:?}"
        )));
    }
    let version = file
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::IncompatibleCheckpoint("missing version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::IncompatibleCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let dim = file
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::IncompatibleCheckpoint("missing dim".into()))? as usize;
    let feature_space = file
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::IncompatibleCheckpoint("missing feature space".into()))?;
    let context_blend = file
        .read_f64::<LittleEndian>()
        .map_err(|_| Error::IncompatibleCheckpoint("missing blend".into()))?;
    let question_projection = read_matrix(&mut file, dim, feature_space as usize)?;
    let context_projection = read_matrix(&mut file, dim, feature_space as usize)?;
    let mut rest = Vec::new();
    file.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{} trailing bytes",
            rest.len()
        )));
    }
    Ok(EncoderParams {
        question_projection,
        context_projection,
        context_blend,
        feature_space,
        seed: 0,
    })
}
