//! Synthetic corpus generator for conflict-controlled experiments.
//!
//! Each passage is built from topic-specific vocabularies, one topic per
//! sentence where the topic count allows it, so one passage serves several
//! semantically distant questions. Every sentence carries a unique answer
//! token and every question paraphrases exactly one sentence.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::corpus::{label_answers, write_dataset, write_passages, Passage, QAExample};
use crate::{Error, Result};

/// Shape of a generated corpus.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub passages: usize,
    pub sentences_per_passage: usize,
    pub topics: usize,
    /// Distribution over questions-per-passage counts; must sum to 1.
    pub questions_per_passage: BTreeMap<usize, f64>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> SynthSpec {
        SynthSpec {
            passages: 500,
            sentences_per_passage: 3,
            topics: 3,
            questions_per_passage: [(3, 1.0)].into_iter().collect(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.passages == 0 || self.sentences_per_passage == 0 || self.topics == 0 {
            return Err(Error::Spec("all counts must be >= 1".into()));
        }
        if self.questions_per_passage.is_empty() {
            return Err(Error::Spec("questions_per_passage distribution is empty".into()));
        }
        let sum: f64 = self.questions_per_passage.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Spec(format!(
                "questions_per_passage distribution sums to {sum}, not 1"
            )));
        }
        if self.questions_per_passage.values().any(|&p| p < 0.0) {
            return Err(Error::Spec("negative probability in distribution".into()));
        }
        Ok(())
    }
}

/// A generated corpus with its question set.
#[derive(Debug)]
pub struct SynthCorpus {
    pub passages: Vec<Passage>,
    pub dataset: Vec<QAExample>,
}

const CONSONANTS: &[char] = &[
    'b', 'd', 'f', 'g', 'h', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'w', 'z',
];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];
const WORDS_PER_TOPIC: usize = 40;
const CONTENT_WORDS_PER_SENTENCE: usize = 5;

fn topic_vocabulary(topic: usize, topics: usize, rng: &mut ChaCha12Rng) -> Result<Vec<String>> {
    // partition syllables across topics so vocabularies stay disjoint
    let all: Vec<String> = CONSONANTS
        .iter()
        .flat_map(|&c| VOWELS.iter().map(move |&v| format!("{c}{v}")))
        .collect();
    let per_topic = all.len() / topics;
    if per_topic < 2 {
        return Err(Error::Spec(format!(
            "too many topics ({topics}) for the syllable inventory"
        )));
    }
    let pool: Vec<&String> = all.iter().skip(topic * per_topic).take(per_topic).collect();
    let mut words = std::collections::BTreeSet::new();
    while words.len() < WORDS_PER_TOPIC {
        let word = format!(
            "{}{}{}",
            pool[rng.gen_range(0..pool.len())],
            pool[rng.gen_range(0..pool.len())],
            pool[rng.gen_range(0..pool.len())]
        );
        words.insert(word);
    }
    Ok(words.into_iter().collect())
}

fn sample_count(dist: &BTreeMap<usize, f64>, rng: &mut ChaCha12Rng) -> usize {
    let roll: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (&count, &p) in dist {
        cumulative += p;
        if roll < cumulative {
            return count;
        }
    }
    *dist.keys().last().unwrap()
}

/// Generate a corpus and its question set in memory.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let vocabularies: Vec<Vec<String>> = (0..spec.topics)
        .map(|t| topic_vocabulary(t, spec.topics, &mut rng))
        .collect::<Result<_>>()?;

    // per passage: the topic of each sentence and the content words of
    // each sentence (the answer token is appended at render time)
    let mut passages = Vec::with_capacity(spec.passages);
    let mut sentence_words: Vec<Vec<Vec<String>>> = Vec::with_capacity(spec.passages);
    let mut sentence_topics: Vec<Vec<usize>> = Vec::with_capacity(spec.passages);
    for p in 0..spec.passages {
        let mut topic_order: Vec<usize> = (0..spec.topics).collect();
        topic_order.shuffle(&mut rng);
        let topics: Vec<usize> = (0..spec.sentences_per_passage)
            .map(|s| topic_order[s % spec.topics])
            .collect();
        let mut words_by_sentence = Vec::with_capacity(spec.sentences_per_passage);
        let mut rendered = Vec::with_capacity(spec.sentences_per_passage);
        for (s, &topic) in topics.iter().enumerate() {
            let vocab = &vocabularies[topic];
            let words: Vec<String> = (0..CONTENT_WORDS_PER_SENTENCE)
                .map(|_| vocab[rng.gen_range(0..vocab.len())].clone())
                .collect();
            let mut text = words.join(" ");
            text.push_str(&format!(" ans{p}x{s}."));
            let mut chars = text.chars();
            let first = chars.next().unwrap().to_uppercase().to_string();
            rendered.push(format!("{first}{}", chars.as_str()));
            words_by_sentence.push(words);
        }
        passages.push(Passage::from_text(&format!("synth-{p}"), &rendered.join(" "))?);
        sentence_words.push(words_by_sentence);
        sentence_topics.push(topics);
    }

    let mut dataset = Vec::new();
    for p in 0..spec.passages {
        let question_count = sample_count(&spec.questions_per_passage, &mut rng);
        for q in 0..question_count {
            let s = q % spec.sentences_per_passage;
            let words = &sentence_words[p][s];
            let mut picks: Vec<&String> = words.iter().collect();
            picks.shuffle(&mut rng);
            let asked: Vec<&str> = picks.iter().take(3).map(|w| w.as_str()).collect();
            let question = format!("Which passage mentions {}?", asked.join(" and "));
            let answer = format!("ans{p}x{s}");
            let answers: std::collections::BTreeSet<String> = [answer].into_iter().collect();

            // prefer a negative whose topics avoid the gold sentence's topic
            let gold_topic = sentence_topics[p][s];
            let negative_index = (0..32)
                .map(|_| rng.gen_range(0..spec.passages))
                .find(|&i| i != p && !sentence_topics[i].contains(&gold_topic))
                .or_else(|| (0..spec.passages).find(|&i| i != p));
            let bm25_negatives = match negative_index {
                Some(i) => vec![label_answers(passages[i].clone(), &answers)],
                None => Vec::new(),
            };
            dataset.push(QAExample {
                question,
                answers: answers.clone(),
                positives: vec![label_answers(passages[p].clone(), &answers)],
                bm25_negatives,
                gold_sentence: None,
            });
        }
    }
    Ok(SynthCorpus { passages, dataset })
}

/// Generate and write the passages file and the dataset file.
pub fn synth<P: AsRef<Path>>(spec: &SynthSpec, passages_path: P, dataset_path: P) -> Result<SynthCorpus> {
    let corpus = generate(spec)?;
    write_passages(&corpus.passages, passages_path)?;
    write_dataset(&corpus.dataset, dataset_path)?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{conflict_stats, load_dataset, load_passages};

    fn small_spec() -> SynthSpec {
        SynthSpec {
            passages: 20,
            sentences_per_passage: 3,
            topics: 3,
            questions_per_passage: [(3, 1.0)].into_iter().collect(),
            seed: 11,
        }
    }

    #[test]
    fn forced_distribution_fixes_conflict_average() {
        let corpus = generate(&small_spec()).unwrap();
        let stats = conflict_stats(&corpus.dataset);
        assert_eq!(stats.average, 3.0);
        assert_eq!(stats.histogram["3"], 20);
    }

    #[test]
    fn single_topic_is_legal() {
        let spec = SynthSpec {
            topics: 1,
            ..small_spec()
        };
        let corpus = generate(&spec).unwrap();
        assert_eq!(corpus.passages.len(), 20);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_spec()).unwrap();
        let b = generate(&small_spec()).unwrap();
        assert_eq!(a.passages, b.passages);
        assert_eq!(a.dataset, b.dataset);
    }

    #[test]
    fn every_question_has_a_labeled_gold_sentence() {
        let corpus = generate(&small_spec()).unwrap();
        for example in &corpus.dataset {
            assert_eq!(example.positives.len(), 1);
            let flagged: Vec<_> = example.positives[0]
                .sentences
                .iter()
                .filter(|s| s.contains_answer)
                .collect();
            assert_eq!(flagged.len(), 1);
            assert!(!example.bm25_negatives.is_empty());
            assert!(example.bm25_negatives[0].sentences.iter().all(|s| !s.contains_answer));
        }
    }

    #[test]
    fn passages_segment_to_requested_shape() {
        let corpus = generate(&small_spec()).unwrap();
        for p in &corpus.passages {
            assert_eq!(p.sentences.len(), 3, "passage {}", p.source_text);
        }
    }

    #[test]
    fn files_round_trip_through_loaders() {
        let dir = tempfile::tempdir().unwrap();
        let ppath = dir.path().join("passages.jsonl");
        let dpath = dir.path().join("dataset.jsonl");
        let corpus = synth(&small_spec(), &ppath, &dpath).unwrap();
        let passages = load_passages(&ppath).unwrap();
        assert_eq!(passages, corpus.passages);
        let loaded = load_dataset(&dpath).unwrap();
        assert_eq!(loaded.dropped, 0);
        assert_eq!(loaded.examples.len(), corpus.dataset.len());
        assert_eq!(loaded.examples, corpus.dataset);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = small_spec();
        spec.questions_per_passage = [(2, 0.5)].into_iter().collect();
        assert!(matches!(generate(&spec), Err(Error::Spec(_))));
        let mut spec = small_spec();
        spec.passages = 0;
        assert!(matches!(generate(&spec), Err(Error::Spec(_))));
    }
}
