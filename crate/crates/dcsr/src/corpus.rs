//! Data model, dataset ingestion, sentence segmentation, and dataset
//! diagnostics (conflict and overlap statistics).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// One sentence of a passage, positioned by its 0-based ordinal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub ordinal: usize,
    pub text: String,
    pub contains_answer: bool,
}

/// A text unit with ordered sentences, a stable ID, and a title.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub title: String,
    pub sentences: Vec<Sentence>,
    pub source_text: String,
}

impl Passage {
    /// Segment `text` and derive the stable id from its normalized content.
    pub fn from_text(title: &str, text: &str) -> Result<Passage> {
        let sentences = segment(text)?;
        Ok(Passage {
            id: passage_id(text),
            title: title.to_string(),
            sentences,
            source_text: text.to_string(),
        })
    }

    pub fn has_answer_sentence(&self) -> bool {
        self.sentences.iter().any(|s| s.contains_answer)
    }
}

/// A question with its answer strings, positive passages and BM25 negatives.
///
/// `gold_sentence` is chosen per sampling policy at batch time, not at load
/// time, so it is `None` straight after ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub question: String,
    pub answers: BTreeSet<String>,
    pub positives: Vec<Passage>,
    pub bm25_negatives: Vec<Passage>,
    pub gold_sentence: Option<(String, usize)>,
}

/// One-to-many statistics: how many questions share each positive passage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictStats {
    pub histogram: BTreeMap<String, usize>,
    pub average: f64,
}

/// Result of ingesting a dataset file.
#[derive(Debug)]
pub struct LoadedDataset {
    pub examples: Vec<QAExample>,
    /// Examples dropped because no positive passage contained an answer.
    pub dropped: usize,
}

/// Lowercase, Unicode NFC, collapse internal whitespace, trim.
pub fn normalize_text(text: &str) -> String {
    use unicode_normalization::UnicodeNormalization;
    let nfc: String = text.nfc().collect();
    nfc.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Stable passage identity: hash of the normalized text.
pub fn passage_id(text: &str) -> String {
    let digest = Sha256::digest(normalize_text(text).as_bytes());
    let mut id = String::with_capacity(16);
    for byte in &digest[..8] {
        id.push_str(&format!("{byte:02x}"));
    }
    id
}

// Tokens that end with a terminator but never end a sentence.
const ABBREVIATIONS: &[&str] = &["dr.", "mr.", "mrs.", "st.", "u.s.", "e.g.", "i.e.", "etc."];

fn is_abbreviation(token: &str) -> bool {
    let lowered = token.to_lowercase();
    ABBREVIATIONS.contains(&lowered.as_str())
}

/// Deterministic rule-based sentence splitter.
///
/// Splits after `.`, `!` or `?` followed by whitespace and an uppercase
/// letter or digit, unless the terminated token is a known abbreviation.
/// Text without any terminator comes back as a single sentence.
pub fn segment(text: &str) -> Result<Vec<Sentence>> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    let chars: Vec<char> = text.chars().collect();
    let mut pieces = Vec::new();
    let mut start = 0usize;
    let mut word_start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            word_start = i + 1;
            i += 1;
            continue;
        }
        if matches!(c, '.' | '!' | '?') {
            let token: String = chars[word_start..=i].iter().collect();
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_whitespace() {
                j += 1;
            }
            let boundary = j > i + 1
                && j < chars.len()
                && (chars[j].is_uppercase() || chars[j].is_ascii_digit())
                && !is_abbreviation(&token);
            if boundary {
                pieces.push(chars[start..=i].iter().collect::<String>());
                start = j;
                word_start = j;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        pieces.push(chars[start..].iter().collect::<String>());
    }
    let sentences: Vec<Sentence> = pieces
        .into_iter()
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .enumerate()
        .map(|(ordinal, text)| Sentence {
            ordinal,
            text,
            contains_answer: false,
        })
        .collect();
    if sentences.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(sentences)
}

/// Flag every sentence whose normalized text contains a normalized answer
/// string as a substring. Zero matches is a legal outcome.
pub fn label_answers(mut passage: Passage, answers: &BTreeSet<String>) -> Passage {
    let normalized_answers: Vec<String> = answers.iter().map(|a| normalize_text(a)).collect();
    for sentence in &mut passage.sentences {
        let norm = normalize_text(&sentence.text);
        sentence.contains_answer = normalized_answers
            .iter()
            .any(|a| !a.is_empty() && norm.contains(a.as_str()));
    }
    passage
}

#[derive(Debug, Serialize, Deserialize)]
struct RawContext {
    title: String,
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawExample {
    question: String,
    answers: Vec<String>,
    positive_ctxs: Vec<RawContext>,
    negative_ctxs: Vec<RawContext>,
}

fn parse_line(line: &str, line_no: usize) -> Result<RawExample> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|source| Error::Parse {
        line: line_no,
        source,
    })?;
    let object = value.as_object().ok_or_else(|| Error::Schema {
        line: line_no,
        field: "<object>".into(),
    })?;
    for field in ["question", "answers", "positive_ctxs", "negative_ctxs"] {
        if !object.contains_key(field) {
            return Err(Error::Schema {
                line: line_no,
                field: field.into(),
            });
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Schema {
        line: line_no,
        field: e.to_string(),
    })
}

/// Load a line-delimited JSON dataset file.
///
/// Passages are segmented and answer-labeled here. Positive contexts without
/// any answer-bearing sentence are discarded; examples left with no usable
/// positive are dropped and counted.
pub fn load_dataset<P: AsRef<Path>>(path: P) -> Result<LoadedDataset> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    let mut dropped = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw = parse_line(&line, idx + 1)?;
        let answers: BTreeSet<String> = raw.answers.into_iter().collect();
        let mut positives = Vec::new();
        for ctx in &raw.positive_ctxs {
            let Ok(p) = Passage::from_text(&ctx.title, &ctx.text) else {
                continue;
            };
            let p = label_answers(p, &answers);
            if p.has_answer_sentence() {
                positives.push(p);
            }
        }
        if positives.is_empty() {
            dropped += 1;
            log::warn!("line {}: no positive passage contains an answer, example dropped", idx + 1);
            continue;
        }
        let mut bm25_negatives = Vec::new();
        for ctx in &raw.negative_ctxs {
            if let Ok(p) = Passage::from_text(&ctx.title, &ctx.text) {
                bm25_negatives.push(label_answers(p, &answers));
            }
        }
        examples.push(QAExample {
            question: raw.question,
            answers,
            positives,
            bm25_negatives,
            gold_sentence: None,
        });
    }
    Ok(LoadedDataset { examples, dropped })
}

/// Serialize examples back to the line-delimited JSON dataset format.
pub fn write_dataset<P: AsRef<Path>>(examples: &[QAExample], path: P) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for example in examples {
        let raw = RawExample {
            question: example.question.clone(),
            answers: example.answers.iter().cloned().collect(),
            positive_ctxs: example
                .positives
                .iter()
                .map(|p| RawContext {
                    title: p.title.clone(),
                    text: p.source_text.clone(),
                })
                .collect(),
            negative_ctxs: example
                .bm25_negatives
                .iter()
                .map(|p| RawContext {
                    title: p.title.clone(),
                    text: p.source_text.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut file, &raw).map_err(std::io::Error::other)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct RawPassage {
    title: String,
    text: String,
}

/// Load a corpus file: one JSON object {"title", "text"} per line.
pub fn load_passages<P: AsRef<Path>>(path: P) -> Result<Vec<Passage>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut passages = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPassage = serde_json::from_str(&line).map_err(|source| Error::Parse {
            line: idx + 1,
            source,
        })?;
        passages.push(Passage::from_text(&raw.title, &raw.text)?);
    }
    Ok(passages)
}

/// Serialize passages to the line-delimited corpus format.
pub fn write_passages<P: AsRef<Path>>(passages: &[Passage], path: P) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for passage in passages {
        let raw = RawPassage {
            title: passage.title.clone(),
            text: passage.source_text.clone(),
        };
        serde_json::to_writer(&mut file, &raw).map_err(std::io::Error::other)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Count how many questions share each positive passage (Table 1 machinery).
pub fn conflict_stats(dataset: &[QAExample]) -> ConflictStats {
    let mut per_passage: HashMap<&str, usize> = HashMap::new();
    let mut questions_with_positives = 0usize;
    for example in dataset {
        if example.positives.is_empty() {
            continue;
        }
        questions_with_positives += 1;
        let mut seen: HashSet<&str> = HashSet::new();
        for passage in &example.positives {
            if seen.insert(&passage.id) {
                *per_passage.entry(&passage.id).or_insert(0) += 1;
            }
        }
    }
    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    for key in ["1", "2", "3", "4plus"] {
        histogram.insert(key.to_string(), 0);
    }
    for &count in per_passage.values() {
        let bucket = match count {
            1 => "1",
            2 => "2",
            3 => "3",
            _ => "4plus",
        };
        *histogram.get_mut(bucket).unwrap() += 1;
    }
    let distinct = per_passage.len();
    let average = if distinct == 0 {
        0.0
    } else {
        questions_with_positives as f64 / distinct as f64
    };
    ConflictStats { histogram, average }
}

/// Fraction of dev questions whose positive-passage title / exact text also
/// appears among train positives.
pub fn overlap_stats(train: &[QAExample], dev: &[QAExample]) -> (f64, f64) {
    let mut train_titles: HashSet<String> = HashSet::new();
    let mut train_texts: HashSet<String> = HashSet::new();
    for example in train {
        for p in &example.positives {
            train_titles.insert(normalize_text(&p.title));
            train_texts.insert(normalize_text(&p.source_text));
        }
    }
    let mut considered = 0usize;
    let mut title_hits = 0usize;
    let mut text_hits = 0usize;
    for example in dev {
        if example.positives.is_empty() {
            continue;
        }
        considered += 1;
        if example
            .positives
            .iter()
            .any(|p| train_titles.contains(&normalize_text(&p.title)))
        {
            title_hits += 1;
        }
        if example
            .positives
            .iter()
            .any(|p| train_texts.contains(&normalize_text(&p.source_text)))
        {
            text_hits += 1;
        }
    }
    if considered == 0 {
        return (0.0, 0.0);
    }
    (
        title_hits as f64 / considered as f64,
        text_hits as f64 / considered as f64,
    )
}
