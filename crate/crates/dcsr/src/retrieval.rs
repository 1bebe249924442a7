//! Question-time pipeline: sentence search, score normalization, noisy-OR
//! passage ranking, answer-containment evaluation, and checkpoint-based
//! hard-negative mining.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{label_answers, normalize_text, Passage, QAExample};
use crate::encoder::{encode_question, EncoderParams};
use crate::index::{SentenceIndex, SentenceKey};
use crate::scalar::softmax;
use crate::{Error, IndexFloat, Result, Scalar};

/// Softmax over retrieved sentence scores. Order-preserving, sums to 1.
pub fn normalize_scores<S: Scalar>(scores: &[S]) -> Result<Vec<S>> {
    softmax(scores)
}

/// Probability that a passage contains the answer, given per-sentence
/// probabilities: `1 - Π(1 - p_i)`.
pub fn has_ans<S: Scalar>(sentence_probs: &[S]) -> Result<S> {
    for &p in sentence_probs {
        if !(S::zero()..=S::one()).contains(&p) {
            return Err(Error::Range(format!("probability {p} outside [0,1]")));
        }
    }
    // single-term product reduces to the probability itself; returning it
    // directly keeps the identity exact in floating point
    if let [p] = sentence_probs {
        return Ok(*p);
    }
    let mut survival = S::one();
    for &p in sentence_probs {
        survival = survival * (S::one() - p);
    }
    Ok(S::one() - survival)
}

/// One ranked passage with its per-sentence probability breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPassage {
    pub passage_id: String,
    pub has_ans_probability: f64,
    /// (ordinal, probability) of every retrieved sentence of this passage.
    pub sentences: Vec<(u32, f64)>,
}

/// Passages ordered by `HasAns` probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPassageList {
    pub question_id: Option<String>,
    pub entries: Vec<RankedPassage>,
}

/// Retrieve `top_m` sentences, softmax their scores, group by passage and
/// rank by the noisy-OR aggregate.
///
/// Only retrieved sentences contribute: unretrieved siblings of a partially
/// retrieved passage count as probability zero.
pub fn rank_passages(
    index: &SentenceIndex,
    query: &[IndexFloat],
    top_m: usize,
) -> Result<RankedPassageList> {
    if index.is_empty() {
        return Err(Error::Range("cannot rank against an empty index".into()));
    }
    let hits = index.search(query, top_m)?;
    let scores: Vec<f64> = hits.iter().map(|(_, s)| *s as f64).collect();
    let probs = normalize_scores(&scores)?;

    let mut grouped: BTreeMap<&str, Vec<(u32, f64)>> = BTreeMap::new();
    for ((key, _), &p) in hits.iter().zip(&probs) {
        grouped
            .entry(key.passage_id.as_str())
            .or_default()
            .push((key.ordinal, p));
    }
    let mut entries: Vec<RankedPassage> = grouped
        .into_iter()
        .map(|(id, sentences)| {
            let ps: Vec<f64> = sentences.iter().map(|&(_, p)| p).collect();
            Ok(RankedPassage {
                passage_id: id.to_string(),
                has_ans_probability: has_ans(&ps)?,
                sentences,
            })
        })
        .collect::<Result<_>>()?;
    entries.sort_by(|a, b| {
        b.has_ans_probability
            .partial_cmp(&a.has_ans_probability)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.passage_id.cmp(&b.passage_id))
    });
    Ok(RankedPassageList {
        question_id: None,
        entries,
    })
}

/// Top-k retrieval accuracy report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub top_k_accuracy: BTreeMap<usize, f64>,
    pub questions: usize,
    pub corpus_sentences: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> serde_json::Value {
        let ks: serde_json::Map<String, serde_json::Value> = self
            .top_k_accuracy
            .iter()
            .map(|(k, a)| (k.to_string(), serde_json::json!(a)))
            .collect();
        serde_json::json!({
            "k": ks,
            "questions": self.questions,
            "corpus_sentences": self.corpus_sentences,
        })
    }
}

fn passage_contains_answer(text: &str, answers: &std::collections::BTreeSet<String>) -> bool {
    let norm = normalize_text(text);
    answers
        .iter()
        .map(|a| normalize_text(a))
        .any(|a| !a.is_empty() && norm.contains(a.as_str()))
}

/// Fraction of questions for which one of the top-k ranked passages
/// contains a gold answer, for each requested k.
pub fn evaluate(
    dataset: &[QAExample],
    index: &SentenceIndex,
    passages: &[Passage],
    params: &EncoderParams,
    ks: &[usize],
    top_m: Option<usize>,
) -> Result<EvalReport> {
    let by_id: HashMap<&str, &Passage> = passages.iter().map(|p| (p.id.as_str(), p)).collect();
    let top_m = top_m.unwrap_or_else(|| index.default_retrieval_depth());
    let mut hits_at: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    for example in dataset {
        let query: Vec<IndexFloat> = encode_question(&example.question, params)?
            .into_iter()
            .map(|v| v as IndexFloat)
            .collect();
        let ranked = rank_passages(index, &query, top_m)?;
        let answer_ranks: Vec<usize> = ranked
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                by_id
                    .get(e.passage_id.as_str())
                    .is_some_and(|p| passage_contains_answer(&p.source_text, &example.answers))
            })
            .map(|(rank, _)| rank)
            .collect();
        if let Some(&best) = answer_ranks.first() {
            for (&k, hits) in hits_at.iter_mut() {
                if best < k {
                    *hits += 1;
                }
            }
        }
    }
    let n = dataset.len();
    Ok(EvalReport {
        top_k_accuracy: hits_at
            .into_iter()
            .map(|(k, h)| (k, if n == 0 { 0.0 } else { h as f64 / n as f64 }))
            .collect(),
        questions: n,
        corpus_sentences: index.len(),
    })
}

/// Result of checkpoint-based hard-negative mining.
#[derive(Debug)]
pub struct MinedDataset {
    pub examples: Vec<QAExample>,
    /// Questions for which no non-gold sentence was retrieved; their
    /// original negatives were kept.
    pub unmined: usize,
}

/// Replace each question's negatives with sentence-specific hard negatives
/// retrieved by the given checkpoint.
///
/// A retrieved sentence is skipped whenever its whole passage contains a
/// gold answer, so mined negatives can never be false negatives.
pub fn mine_hard_negatives(
    dataset: &[QAExample],
    index: &SentenceIndex,
    passages: &[Passage],
    params: &EncoderParams,
    per_question: usize,
) -> Result<MinedDataset> {
    let by_id: HashMap<&str, &Passage> = passages.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut examples = Vec::with_capacity(dataset.len());
    let mut unmined = 0usize;
    for example in dataset {
        let mut out = example.clone();
        if per_question > 0 {
            let query: Vec<IndexFloat> = encode_question(&example.question, params)?
                .into_iter()
                .map(|v| v as IndexFloat)
                .collect();
            let hits = index.search(&query, index.default_retrieval_depth())?;
            let mut mined: Vec<Passage> = Vec::new();
            for (key, _) in &hits {
                if mined.len() >= per_question {
                    break;
                }
                let Some(source) = by_id.get(key.passage_id.as_str()) else {
                    continue;
                };
                if passage_contains_answer(&source.source_text, &example.answers) {
                    continue;
                }
                let Some(sentence) = source.sentences.get(key.ordinal as usize) else {
                    continue;
                };
                let negative = label_answers(
                    Passage::from_text(&source.title, &sentence.text)?,
                    &example.answers,
                );
                mined.push(negative);
            }
            if mined.is_empty() {
                unmined += 1;
            } else {
                out.bm25_negatives = mined;
            }
        }
        examples.push(out);
    }
    Ok(MinedDataset { examples, unmined })
}

/// Corpus subsetting modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Subsample {
    /// Deterministic prefix.
    FirstN(usize),
    /// Seeded uniform sample of `round(fraction * N)` passages, in
    /// original order.
    Fraction(f64),
}

pub fn subsample_corpus(passages: &[Passage], mode: Subsample, seed: u64) -> Result<Vec<Passage>> {
    match mode {
        Subsample::FirstN(n) => {
            if n == 0 || n > passages.len() {
                return Err(Error::Range(format!(
                    "first_n {n} out of range for {} passages",
                    passages.len()
                )));
            }
            Ok(passages[..n].to_vec())
        }
        Subsample::Fraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Range(format!("fraction {f} outside (0,1]")));
            }
            let count = ((f * passages.len() as f64).round() as usize).max(1);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut indices: Vec<usize> = (0..passages.len()).collect();
            indices.shuffle(&mut rng);
            let mut chosen: Vec<usize> = indices.into_iter().take(count).collect();
            chosen.sort_unstable();
            Ok(chosen.into_iter().map(|i| passages[i].clone()).collect())
        }
    }
}

/// Sentence-level brute-force rank used as an independence check by tests
/// and by the DPR-degenerate comparison.
pub fn raw_similarity_order(index: &SentenceIndex, query: &[IndexFloat]) -> Result<Vec<SentenceKey>> {
    Ok(index
        .search(query, index.len())?
        .into_iter()
        .map(|(k, _)| k)
        .collect())
}
