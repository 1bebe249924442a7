//! Sentence-level vector store with exact maximum-inner-product top-k
//! search and on-disk persistence.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use crate::corpus::Passage;
use crate::encoder::{encode_passage, EncoderParams};
use crate::{Error, IndexFloat, Result};

pub const INDEX_MAGIC: &[u8; 4] = b"DIDX";
pub const IMPORT_MAGIC: &[u8; 4] = b"DVEC";
pub const INDEX_VERSION: u32 = 1;

/// Identity of one indexed sentence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SentenceKey {
    pub passage_id: String,
    pub ordinal: u32,
}

/// Flat store of sentence vectors, searchable by inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceIndex {
    keys: Vec<SentenceKey>,
    vectors: Vec<IndexFloat>,
    dim: usize,
}

impl SentenceIndex {
    pub fn from_rows(keys: Vec<SentenceKey>, vectors: Vec<IndexFloat>, dim: usize) -> Result<SentenceIndex> {
        if dim == 0 || keys.len() * dim != vectors.len() {
            return Err(Error::IndexFormat(format!(
                "row count {} does not match vector data length {} at dim {dim}",
                keys.len(),
                vectors.len()
            )));
        }
        let mut seen = HashSet::new();
        for key in &keys {
            if !seen.insert(key) {
                return Err(Error::IndexFormat(format!(
                    "duplicate key ({}, {})",
                    key.passage_id, key.ordinal
                )));
            }
        }
        Ok(SentenceIndex { keys, vectors, dim })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn keys(&self) -> &[SentenceKey] {
        &self.keys
    }

    pub fn row(&self, i: usize) -> &[IndexFloat] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Mean number of indexed sentences per distinct passage.
    pub fn avg_sentences_per_passage(&self) -> f64 {
        let distinct: HashSet<&str> = self.keys.iter().map(|k| k.passage_id.as_str()).collect();
        if distinct.is_empty() {
            return 0.0;
        }
        self.keys.len() as f64 / distinct.len() as f64
    }

    /// Default retrieval depth: ceil(100 × avg sentences per passage).
    pub fn default_retrieval_depth(&self) -> usize {
        (100.0 * self.avg_sentences_per_passage()).ceil() as usize
    }

    /// One vector per sentence, in passage order then ordinal order.
    pub fn build(passages: &[Passage], params: &EncoderParams) -> Result<SentenceIndex> {
        if passages.is_empty() {
            return Err(Error::Range("cannot index an empty passage list".into()));
        }
        let dim = params.dim();
        let mut keys = Vec::new();
        let mut vectors = Vec::new();
        for passage in passages {
            let vecs = encode_passage(passage, params).map_err(|e| {
                Error::Range(format!("failed to encode passage {}: {e}", passage.id))
            })?;
            for (ordinal, vec) in vecs.iter().enumerate() {
                keys.push(SentenceKey {
                    passage_id: passage.id.clone(),
                    ordinal: ordinal as u32,
                });
                vectors.extend(vec.iter().map(|&v| v as IndexFloat));
            }
        }
        SentenceIndex::from_rows(keys, vectors, dim)
    }

    /// Exact inner-product scan. Ties broken by (passage_id, ordinal)
    /// ascending; returns `min(top_m, N)` results sorted descending.
    pub fn search(&self, query: &[IndexFloat], top_m: usize) -> Result<Vec<(SentenceKey, IndexFloat)>> {
        if query.len() != self.dim {
            return Err(Error::Dimension {
                left: query.len(),
                right: self.dim,
            });
        }
        if top_m == 0 {
            return Err(Error::Range("top_m must be at least 1".into()));
        }
        // scores land in row order regardless of worker scheduling
        let scores: Vec<IndexFloat> = (0..self.len())
            .into_par_iter()
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(query)
                    .map(|(&r, &q)| r * q)
                    .sum::<IndexFloat>()
            })
            .collect();
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| self.keys[a].cmp(&self.keys[b]))
        });
        Ok(order
            .into_iter()
            .take(top_m)
            .map(|i| (self.keys[i].clone(), scores[i]))
            .collect())
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(INDEX_MAGIC)?;
        file.write_u32::<LittleEndian>(INDEX_VERSION)?;
        file.write_u32::<LittleEndian>(self.dim as u32)?;
        file.write_u64::<LittleEndian>(self.keys.len() as u64)?;
        for (i, key) in self.keys.iter().enumerate() {
            let id_bytes = key.passage_id.as_bytes();
            if id_bytes.len() > u16::MAX as usize {
                return Err(Error::IndexFormat("passage id longer than 65535 bytes".into()));
            }
            file.write_u16::<LittleEndian>(id_bytes.len() as u16)?;
            file.write_all(id_bytes)?;
            file.write_u32::<LittleEndian>(key.ordinal)?;
            for &v in self.row(i) {
                file.write_f32::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<SentenceIndex> {
        read_index_file(path, INDEX_MAGIC)
    }

    /// Import vectors produced by an external embedding pipeline
    /// (same row layout, "DVEC" magic).
    pub fn import_vectors<P: AsRef<Path>>(path: P) -> Result<SentenceIndex> {
        read_index_file(path, IMPORT_MAGIC)
    }
}

fn read_index_file<P: AsRef<Path>>(path: P, expected_magic: &[u8; 4]) -> Result<SentenceIndex> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| Error::IndexFormat("file too short for header".into()))?;
    if &magic != expected_magic {
        return Err(Error::IndexFormat(format!(
            "bad magic {:?}, expected {:?}",
            magic, expected_magic
        )));
    }
    let version = file
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::IndexFormat("missing version".into()))?;
    if version != INDEX_VERSION {
        return Err(Error::IndexFormat(format!("unsupported version {version}")));
    }
    let dim = file
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::IndexFormat("missing dim".into()))? as usize;
    let n = file
        .read_u64::<LittleEndian>()
        .map_err(|_| Error::IndexFormat("missing row count".into()))? as usize;
    let mut keys = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n * dim);
    for row in 0..n {
        let id_len = file
            .read_u16::<LittleEndian>()
            .map_err(|_| Error::IndexFormat(format!("truncated at row {row}")))? as usize;
        let mut id_bytes = vec![0u8; id_len];
        file.read_exact(&mut id_bytes)
            .map_err(|_| Error::IndexFormat(format!("truncated id at row {row}")))?;
        let passage_id = String::from_utf8(id_bytes)
            .map_err(|_| Error::IndexFormat(format!("invalid UTF-8 id at row {row}")))?;
        let ordinal = file
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::IndexFormat(format!("truncated ordinal at row {row}")))?;
        for _ in 0..dim {
            vectors.push(
                file.read_f32::<LittleEndian>()
                    .map_err(|_| Error::IndexFormat(format!("truncated vector at row {row}")))?,
            );
        }
        keys.push(SentenceKey { passage_id, ordinal });
    }
    let mut rest = Vec::new();
    file.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::IndexFormat(format!("{} trailing bytes", rest.len())));
    }
    SentenceIndex::from_rows(keys, vectors, dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn passage(title: &str, text: &str) -> Passage {
        Passage::from_text(title, text).unwrap()
    }

    fn params() -> EncoderParams {
        EncoderParams::new(8, 64, 0.7, 3).unwrap()
    }

    #[test]
    fn build_counts_rows_and_average() {
        let passages = vec![
            passage("a", "One here. Two here. Three here."),
            passage("b", "Alpha beta. Gamma delta. Epsilon zeta."),
        ];
        let index = SentenceIndex::build(&passages, &params()).unwrap();
        assert_eq!(index.len(), 6);
        assert!((index.avg_sentences_per_passage() - 3.0).abs() < 1e-9);
        assert_eq!(index.default_retrieval_depth(), 300);
    }

    #[test]
    fn build_is_deterministic() {
        let passages = vec![passage("a", "One here. Two here.")];
        let p = params();
        let a = SentenceIndex::build(&passages, &p).unwrap();
        let b = SentenceIndex::build(&passages, &p).unwrap();
        assert_eq!(a, b);
    }

    fn orthonormal_index(n: usize) -> SentenceIndex {
        let mut vectors = vec![0.0; n * n];
        let mut keys = Vec::new();
        for i in 0..n {
            vectors[i * n + i] = 1.0;
            keys.push(SentenceKey {
                passage_id: format!("p{i}"),
                ordinal: 0,
            });
        }
        SentenceIndex::from_rows(keys, vectors, n).unwrap()
    }

    #[test]
    fn search_orthonormal_rows() {
        let index = orthonormal_index(4);
        let mut query = vec![0.0; 4];
        query[2] = 1.0;
        let hits = index.search(&query, 1).unwrap();
        assert_eq!(hits[0].0.passage_id, "p2");
        assert_eq!(hits[0].1, 1.0);
    }

    #[test]
    fn search_top_m_clamped_to_n() {
        let index = orthonormal_index(3);
        let hits = index.search(&[1.0, 0.0, 0.0], 100).unwrap();
        assert_eq!(hits.len(), 3);
    }

    #[test]
    fn search_dim_mismatch() {
        let index = orthonormal_index(3);
        assert!(matches!(
            index.search(&[1.0, 0.0], 1),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn search_ties_broken_by_key() {
        let keys = vec![
            SentenceKey { passage_id: "b".into(), ordinal: 1 },
            SentenceKey { passage_id: "a".into(), ordinal: 0 },
            SentenceKey { passage_id: "a".into(), ordinal: 2 },
        ];
        let vectors = vec![1.0, 1.0, 1.0];
        let index = SentenceIndex::from_rows(keys, vectors, 1).unwrap();
        let hits = index.search(&[1.0], 3).unwrap();
        let order: Vec<(String, u32)> = hits
            .iter()
            .map(|(k, _)| (k.passage_id.clone(), k.ordinal))
            .collect();
        assert_eq!(order, vec![("a".into(), 0), ("a".into(), 2), ("b".into(), 1)]);
    }

    fn random_index(rng: &mut ChaCha12Rng, n: usize, dim: usize) -> SentenceIndex {
        let keys: Vec<SentenceKey> = (0..n)
            .map(|i| SentenceKey {
                passage_id: format!("p{:05}", i / 3),
                ordinal: (i % 3) as u32,
            })
            .collect();
        let vectors: Vec<f32> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SentenceIndex::from_rows(keys, vectors, dim).unwrap()
    }

    #[test]
    fn search_matches_brute_force_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let index = random_index(&mut rng, 10_000, 64);
        let query: Vec<f32> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hits = index.search(&query, 50).unwrap();

        // naive full sort oracle
        let mut oracle: Vec<(SentenceKey, f32)> = (0..index.len())
            .map(|i| {
                let mut s = 0.0f32;
                for d in 0..64 {
                    s += index.row(i)[d] * query[d];
                }
                (index.keys()[i].clone(), s)
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        oracle.truncate(50);
        assert_eq!(hits, oracle);
    }

    #[test]
    fn save_load_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let index = random_index(&mut rng, 500, 16);
        let f = tempfile::NamedTempFile::new().unwrap();
        index.save(f.path()).unwrap();
        let loaded = SentenceIndex::load(f.path()).unwrap();
        assert_eq!(index, loaded);
        for _ in 0..20 {
            let query: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert_eq!(index.search(&query, 10).unwrap(), loaded.search(&query, 10).unwrap());
        }
    }

    #[test]
    fn load_rejects_truncation_and_bad_magic() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let index = random_index(&mut rng, 20, 4);
        let f = tempfile::NamedTempFile::new().unwrap();
        index.save(f.path()).unwrap();
        let bytes = std::fs::read(f.path()).unwrap();
        std::fs::write(f.path(), &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(SentenceIndex::load(f.path()), Err(Error::IndexFormat(_))));
        let mut corrupted = bytes.clone();
        corrupted[0] = b'X';
        std::fs::write(f.path(), &corrupted).unwrap();
        assert!(matches!(SentenceIndex::load(f.path()), Err(Error::IndexFormat(_))));
    }

    #[test]
    fn import_external_vectors() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let index = random_index(&mut rng, 5, 4);
        let f = tempfile::NamedTempFile::new().unwrap();
        index.save(f.path()).unwrap();
        let mut bytes = std::fs::read(f.path()).unwrap();
        bytes[..4].copy_from_slice(IMPORT_MAGIC);
        std::fs::write(f.path(), &bytes).unwrap();
        let imported = SentenceIndex::import_vectors(f.path()).unwrap();
        assert_eq!(imported.len(), 5);
        assert_eq!(imported, index);
        // a DVEC file must not load as a DIDX index
        assert!(SentenceIndex::load(f.path()).is_err());
    }

    #[test]
    fn duplicate_keys_rejected() {
        let keys = vec![
            SentenceKey { passage_id: "a".into(), ordinal: 0 },
            SentenceKey { passage_id: "a".into(), ordinal: 0 },
        ];
        assert!(SentenceIndex::from_rows(keys, vec![1.0, 2.0], 1).is_err());
    }
}
