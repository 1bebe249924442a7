//! Batch construction: positive, easy-negative, in-passage-negative and
//! in-batch-negative policies, with the three ablation strategies.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::corpus::{Passage, QAExample};
use crate::encoder::{
    sentence_features, trigram_features, CandidateOrigin, EncoderParams, FeatureBatch,
};
use crate::{Error, Result};

/// Negative-sampling ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingStrategy {
    /// Positive + 1 random BM25 sentence.
    OneBm25Random,
    /// Positive + 2 random BM25 sentences.
    TwoBm25Random,
    /// Positive + 1 in-passage negative + 1 random BM25 sentence.
    InPassagePlusBm25,
}

impl SamplingStrategy {
    /// Hard negatives contributed per question.
    pub fn hard_negatives(&self) -> usize {
        match self {
            SamplingStrategy::OneBm25Random => 1,
            SamplingStrategy::TwoBm25Random => 2,
            SamplingStrategy::InPassagePlusBm25 => 2,
        }
    }

    pub fn parse(s: &str) -> Result<SamplingStrategy> {
        match s {
            "bm25x1" => Ok(SamplingStrategy::OneBm25Random),
            "bm25x2" => Ok(SamplingStrategy::TwoBm25Random),
            "inpassage+bm25" => Ok(SamplingStrategy::InPassagePlusBm25),
            other => Err(Error::Range(format!(
                "unknown strategy `{other}` (expected bm25x1, bm25x2 or inpassage+bm25)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplingStrategy::OneBm25Random => "bm25x1",
            SamplingStrategy::TwoBm25Random => "bm25x2",
            SamplingStrategy::InPassagePlusBm25 => "inpassage+bm25",
        }
    }
}

/// A concrete sentence picked from a passage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrawnSentence {
    pub passage_id: String,
    pub ordinal: usize,
    pub sentence_text: String,
    pub passage_text: String,
}

impl DrawnSentence {
    fn from_passage(passage: &Passage, ordinal: usize) -> DrawnSentence {
        DrawnSentence {
            passage_id: passage.id.clone(),
            ordinal,
            sentence_text: passage.sentences[ordinal].text.clone(),
            passage_text: passage.source_text.clone(),
        }
    }

    fn same_ref(&self, other: &DrawnSentence) -> bool {
        self.passage_id == other.passage_id && self.ordinal == other.ordinal
    }
}

/// One sampled training instance for one question.
#[derive(Debug, Clone)]
pub struct DrawnSample {
    pub positive: DrawnSentence,
    pub hard_negatives: Vec<(DrawnSentence, CandidateOrigin)>,
    /// True iff the in-passage negative had to be substituted by an extra
    /// BM25 sentence because the positive passage has no non-answer sentence.
    pub fallback_used: bool,
}

fn draw_bm25_sentence(
    example: &QAExample,
    avoid: &DrawnSentence,
    rng: &mut ChaCha12Rng,
) -> Result<DrawnSentence> {
    if example.bm25_negatives.is_empty() {
        return Err(Error::InsufficientNegatives);
    }
    for _ in 0..16 {
        let passage = &example.bm25_negatives[rng.gen_range(0..example.bm25_negatives.len())];
        let ordinal = rng.gen_range(0..passage.sentences.len());
        let drawn = DrawnSentence::from_passage(passage, ordinal);
        if !drawn.same_ref(avoid) {
            return Ok(drawn);
        }
    }
    // the negative pool may collapse to the positive sentence itself
    for passage in &example.bm25_negatives {
        for ordinal in 0..passage.sentences.len() {
            let drawn = DrawnSentence::from_passage(passage, ordinal);
            if !drawn.same_ref(avoid) {
                return Ok(drawn);
            }
        }
    }
    Err(Error::InsufficientNegatives)
}

/// Sample a positive sentence and the strategy's hard negatives.
///
/// The positive is a uniformly random answer-bearing sentence of a uniformly
/// random positive passage. The in-passage negative, when requested, is a
/// uniformly random non-answer sentence of that same passage; if none exists
/// it is substituted by an extra BM25 sentence and `fallback_used` is set.
pub fn draw(
    example: &QAExample,
    strategy: SamplingStrategy,
    rng: &mut ChaCha12Rng,
) -> Result<DrawnSample> {
    let eligible: Vec<&Passage> = example
        .positives
        .iter()
        .filter(|p| p.has_answer_sentence())
        .collect();
    if eligible.is_empty() {
        return Err(Error::Range("example has no answer-bearing positive".into()));
    }
    let positive_passage = eligible[rng.gen_range(0..eligible.len())];
    let gold_candidates: Vec<usize> = positive_passage
        .sentences
        .iter()
        .filter(|s| s.contains_answer)
        .map(|s| s.ordinal)
        .collect();
    let gold_ordinal = gold_candidates[rng.gen_range(0..gold_candidates.len())];
    let positive = DrawnSentence::from_passage(positive_passage, gold_ordinal);

    let mut hard_negatives = Vec::new();
    let mut fallback_used = false;
    match strategy {
        SamplingStrategy::OneBm25Random => {
            hard_negatives.push((
                draw_bm25_sentence(example, &positive, rng)?,
                CandidateOrigin::Bm25Negative,
            ));
        }
        SamplingStrategy::TwoBm25Random => {
            for _ in 0..2 {
                hard_negatives.push((
                    draw_bm25_sentence(example, &positive, rng)?,
                    CandidateOrigin::Bm25Negative,
                ));
            }
        }
        SamplingStrategy::InPassagePlusBm25 => {
            let non_answer: Vec<usize> = positive_passage
                .sentences
                .iter()
                .filter(|s| !s.contains_answer)
                .map(|s| s.ordinal)
                .collect();
            if non_answer.is_empty() {
                fallback_used = true;
                hard_negatives.push((
                    draw_bm25_sentence(example, &positive, rng)?,
                    CandidateOrigin::Bm25Negative,
                ));
            } else {
                let ordinal = non_answer[rng.gen_range(0..non_answer.len())];
                hard_negatives.push((
                    DrawnSentence::from_passage(positive_passage, ordinal),
                    CandidateOrigin::InPassageNegative,
                ));
            }
            hard_negatives.push((
                draw_bm25_sentence(example, &positive, rng)?,
                CandidateOrigin::Bm25Negative,
            ));
        }
    }
    Ok(DrawnSample {
        positive,
        hard_negatives,
        fallback_used,
    })
}

/// Assemble a shared-candidate batch: the n positives in example order
/// followed by all hard negatives; `gold_index(i) = i`.
pub fn build_batch(
    examples: &[QAExample],
    strategy: SamplingStrategy,
    params: &EncoderParams,
    rng: &mut ChaCha12Rng,
) -> Result<FeatureBatch> {
    if examples.is_empty() {
        return Err(Error::Range("empty batch".into()));
    }
    let samples: Vec<DrawnSample> = examples
        .iter()
        .map(|ex| draw(ex, strategy, rng))
        .collect::<Result<_>>()?;

    let mut question_feats = Vec::with_capacity(examples.len());
    for ex in examples {
        question_feats.push(trigram_features(&ex.question, params.feature_space)?);
    }

    let mut candidate_feats = Vec::new();
    let mut candidate_origin = Vec::new();
    for sample in &samples {
        candidate_feats.push(sentence_features(
            &sample.positive.sentence_text,
            &sample.positive.passage_text,
            params,
        )?);
        candidate_origin.push(CandidateOrigin::InBatchGold);
    }
    for sample in &samples {
        for (negative, origin) in &sample.hard_negatives {
            candidate_feats.push(sentence_features(
                &negative.sentence_text,
                &negative.passage_text,
                params,
            )?);
            candidate_origin.push(*origin);
        }
    }

    let mut id_counts: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for sample in &samples {
        *id_counts.entry(sample.positive.passage_id.as_str()).or_insert(0) += 1;
    }
    let duplicate_gold_passages = samples
        .iter()
        .filter(|s| id_counts[s.positive.passage_id.as_str()] > 1)
        .count();

    Ok(FeatureBatch {
        question_feats,
        candidate_feats,
        gold_index: (0..examples.len()).collect(),
        candidate_origin,
        duplicate_gold_passages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{label_answers, Passage};
    use rand::SeedableRng;
    use std::collections::BTreeSet;

    fn answers(strs: &[&str]) -> BTreeSet<String> {
        strs.iter().map(|s| s.to_string()).collect()
    }

    fn labeled(title: &str, text: &str, ans: &[&str]) -> Passage {
        label_answers(Passage::from_text(title, text).unwrap(), &answers(ans))
    }

    fn example(positive_text: &str, answer: &str, negatives: &[&str]) -> QAExample {
        QAExample {
            question: "what is the answer".into(),
            answers: answers(&[answer]),
            positives: vec![labeled("pos", positive_text, &[answer])],
            bm25_negatives: negatives
                .iter()
                .map(|t| labeled("neg", t, &[answer]))
                .collect(),
            gold_sentence: None,
        }
    }

    #[test]
    fn fallback_when_positive_has_only_answer_sentence() {
        let ex = example("The answer is here.", "answer", &["Nothing related. More noise."]);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let s = draw(&ex, SamplingStrategy::InPassagePlusBm25, &mut rng).unwrap();
        assert!(s.fallback_used);
        assert_eq!(s.hard_negatives.len(), 2);
        assert!(s
            .hard_negatives
            .iter()
            .all(|(_, o)| *o == CandidateOrigin::Bm25Negative));
    }

    #[test]
    fn single_in_passage_candidate_is_forced() {
        let ex = example(
            "The answer is here. Unrelated filler follows.",
            "answer",
            &["Some negative text."],
        );
        for seed in 0..20 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let s = draw(&ex, SamplingStrategy::InPassagePlusBm25, &mut rng).unwrap();
            assert!(!s.fallback_used);
            let (neg, origin) = &s.hard_negatives[0];
            assert_eq!(*origin, CandidateOrigin::InPassageNegative);
            assert_eq!(neg.passage_id, s.positive.passage_id);
            assert_eq!(neg.ordinal, 1);
        }
    }

    #[test]
    fn in_passage_negative_never_equals_positive() {
        let ex = example(
            "The answer is here. Filler one follows. Filler two follows. Filler three follows.",
            "answer",
            &["Some negative text."],
        );
        for seed in 0..200 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let s = draw(&ex, SamplingStrategy::InPassagePlusBm25, &mut rng).unwrap();
            for (neg, _) in &s.hard_negatives {
                assert!(!(neg.passage_id == s.positive.passage_id && neg.ordinal == s.positive.ordinal));
            }
        }
    }

    #[test]
    fn missing_bm25_negatives_is_an_error() {
        let ex = example("The answer is here.", "answer", &[]);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(matches!(
            draw(&ex, SamplingStrategy::OneBm25Random, &mut rng),
            Err(Error::InsufficientNegatives)
        ));
    }

    #[test]
    fn in_passage_draws_roughly_uniform() {
        let ex = example(
            "The answer is here. Filler one follows. Filler two follows. Filler three follows.",
            "answer",
            &["Some negative text."],
        );
        let mut counts = [0usize; 4];
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let draws = 9000;
        for _ in 0..draws {
            let s = draw(&ex, SamplingStrategy::InPassagePlusBm25, &mut rng).unwrap();
            counts[s.hard_negatives[0].0.ordinal] += 1;
        }
        assert_eq!(counts[0], 0);
        // 3 eligible ordinals, expected 3000 each; ±3σ with σ = sqrt(n·p(1-p)) ≈ 44.7
        for &c in &counts[1..] {
            assert!((c as f64 - 3000.0).abs() < 3.0 * 44.8, "count {c}");
        }
    }

    fn four_examples() -> Vec<QAExample> {
        (0..4)
            .map(|i| {
                example(
                    &format!("Fact {i} holds the answer. Extra context sentence {i} here."),
                    "answer",
                    &[&format!("Unrelated negative text {i}. Second negative clause {i}.")],
                )
            })
            .collect()
    }

    #[test]
    fn batch_arity() {
        let examples = four_examples();
        let params = EncoderParams::new(8, 64, 0.7, 0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let batch = build_batch(&examples, SamplingStrategy::InPassagePlusBm25, &params, &mut rng).unwrap();
        assert_eq!(batch.question_feats.len(), 4);
        assert_eq!(batch.candidate_feats.len(), 12);
        assert_eq!(batch.gold_index, vec![0, 1, 2, 3]);
        assert_eq!(batch.candidate_origin[0], CandidateOrigin::InBatchGold);
    }

    #[test]
    fn single_example_batch() {
        let examples = vec![example(
            "Only the answer lives here.",
            "answer",
            &["A negative sentence."],
        )];
        let params = EncoderParams::new(8, 64, 0.7, 0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let batch = build_batch(&examples, SamplingStrategy::OneBm25Random, &params, &mut rng).unwrap();
        assert_eq!(batch.candidate_feats.len(), 2);
        assert_eq!(batch.gold_index, vec![0]);
    }

    #[test]
    fn batch_reproducible() {
        let examples = four_examples();
        let params = EncoderParams::new(8, 64, 0.7, 0).unwrap();
        let a = build_batch(
            &examples,
            SamplingStrategy::TwoBm25Random,
            &params,
            &mut ChaCha12Rng::seed_from_u64(123),
        )
        .unwrap();
        let b = build_batch(
            &examples,
            SamplingStrategy::TwoBm25Random,
            &params,
            &mut ChaCha12Rng::seed_from_u64(123),
        )
        .unwrap();
        assert_eq!(a.question_feats, b.question_feats);
        assert_eq!(a.candidate_feats, b.candidate_feats);
        assert_eq!(a.gold_index, b.gold_index);
    }

    #[test]
    fn duplicate_positive_passages_are_kept_and_counted() {
        let shared = "The shared answer lives here. Context tail sentence.";
        let mut examples = vec![
            example(shared, "answer", &["Negative one text."]),
            example(shared, "answer", &["Negative two text."]),
            example("A different answer home. Another tail.", "answer", &["Negative three text."]),
        ];
        examples[1].question = "second question wording".into();
        let params = EncoderParams::new(8, 64, 0.7, 0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let batch = build_batch(&examples, SamplingStrategy::OneBm25Random, &params, &mut rng).unwrap();
        assert_eq!(batch.gold_index.len(), 3);
        assert_eq!(batch.duplicate_gold_passages, 2);
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!(SamplingStrategy::parse("bm25x1").unwrap(), SamplingStrategy::OneBm25Random);
        assert_eq!(SamplingStrategy::parse("bm25x2").unwrap(), SamplingStrategy::TwoBm25Random);
        assert_eq!(
            SamplingStrategy::parse("inpassage+bm25").unwrap(),
            SamplingStrategy::InPassagePlusBm25
        );
        assert!(SamplingStrategy::parse("nope").is_err());
        assert_eq!(SamplingStrategy::InPassagePlusBm25.hard_negatives(), 2);
    }
}
