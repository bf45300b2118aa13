//! Okapi BM25 retrieval over an in-memory inverted index.
//!
//! Scores use the Lucene idf variant,
//! `idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1)`,
//! and the usual saturated term frequency
//! `tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))`.
//! Defaults are `k1 = 1.2`, `b = 0.75`.
//!
//! The module also reads and writes TREC-format run files
//! (`qid Q0 docid rank score tag`) and persists indexes as a versioned binary
//! snapshot.

use crate::corpus::{tokenize, Corpus};
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

const SNAPSHOT_MAGIC: &[u8; 8] = b"UR3INDEX";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }
}

/// One retrieved document: 1-based rank and retriever score.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: bad run record: {message}")]
    RunParse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("run file references doc id {doc_id:?} (query {query_id:?}) not present in the corpus")]
    UnknownDocId { query_id: String, doc_id: String },
    #[error("{path}: bad index snapshot: {message}")]
    Snapshot { path: String, message: String },
    #[error("{path}: index snapshot version {found} unsupported (expected {expected})")]
    SnapshotVersion {
        path: String,
        found: u32,
        expected: u32,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> RetrievalError {
    RetrievalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// BM25 inverted index. Postings map each term to `(doc ordinal, term
/// frequency)` pairs in ascending ordinal order.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    params: Bm25Params,
}

/// Builds an index over `corpus` (document text only; titles are not
/// indexed). The corpus is non-empty by construction.
pub fn build_index(corpus: &Corpus, params: Bm25Params) -> InvertedIndex {
    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    let mut doc_ids = Vec::with_capacity(corpus.len());
    let mut doc_lengths = Vec::with_capacity(corpus.len());
    for (ord, doc) in corpus.docs().iter().enumerate() {
        let tokens = tokenize(&doc.text);
        doc_lengths.push(tokens.len() as u32);
        doc_ids.push(doc.id.clone());
        let mut counts: HashMap<String, u32> = HashMap::new();
        for token in tokens {
            *counts.entry(token).or_insert(0) += 1;
        }
        // BTreeMap keeps term order sorted; pushing in ascending ordinal order
        // keeps each posting list sorted without a later pass.
        for (term, tf) in counts {
            postings.entry(term).or_default().push((ord as u32, tf));
        }
    }
    for list in postings.values_mut() {
        list.sort_unstable_by_key(|&(ord, _)| ord);
    }
    let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
    let avg_doc_length = total as f64 / doc_lengths.len() as f64;
    InvertedIndex {
        postings,
        doc_ids,
        doc_lengths,
        avg_doc_length,
        params,
    }
}

impl InvertedIndex {
    /// Top-k search. Only documents with score > 0 are returned, ranked
    /// 1..=k' by descending score with ties broken by ascending document
    /// ordinal.
    pub fn search(&self, query: &str, k: usize) -> Vec<Candidate> {
        let n = self.doc_ids.len() as f64;
        let Bm25Params { k1, b } = self.params;
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in tokenize(query) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let df = list.len() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            for &(ord, tf) in list {
                let tf = tf as f64;
                let dl = self.doc_lengths[ord as usize] as f64;
                let norm = k1 * (1.0 - b + b * dl / self.avg_doc_length);
                let contribution = idf * tf * (k1 + 1.0) / (tf + norm);
                *scores.entry(ord).or_insert(0.0) += contribution;
            }
        }
        let mut scored: Vec<(u32, f64)> =
            scores.into_iter().filter(|&(_, s)| s > 0.0).collect();
        scored.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
            .into_iter()
            .enumerate()
            .map(|(i, (ord, score))| Candidate {
                doc_id: self.doc_ids[ord as usize].clone(),
                rank: i + 1,
                score,
            })
            .collect()
    }

    pub fn postings(&self, term: &str) -> Option<&[(u32, u32)]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }
}

// ─── Index snapshot ───

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

struct SnapshotReader<R> {
    inner: R,
    path: String,
}

impl<R: Read> SnapshotReader<R> {
    fn bad(&self, message: impl Into<String>) -> RetrievalError {
        RetrievalError::Snapshot {
            path: self.path.clone(),
            message: message.into(),
        }
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], RetrievalError> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| self.bad("truncated snapshot"))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32, RetrievalError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64, RetrievalError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64, RetrievalError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn string(&mut self) -> Result<String, RetrievalError> {
        let len = self.u32()? as usize;
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| self.bad("truncated snapshot"))?;
        String::from_utf8(buf).map_err(|_| self.bad("non-UTF-8 string in snapshot"))
    }
}

/// Writes a versioned binary snapshot of the index.
pub fn save_index<P: AsRef<Path>>(path: P, index: &InvertedIndex) -> Result<(), RetrievalError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    write_snapshot(&mut w, index).map_err(|e| io_err(path, e))
}

fn write_snapshot<W: Write>(w: &mut W, index: &InvertedIndex) -> std::io::Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    write_u32(w, SNAPSHOT_VERSION)?;
    write_f64(w, index.params.k1)?;
    write_f64(w, index.params.b)?;
    write_f64(w, index.avg_doc_length)?;
    write_u64(w, index.doc_ids.len() as u64)?;
    for (id, &len) in index.doc_ids.iter().zip(&index.doc_lengths) {
        write_str(w, id)?;
        write_u32(w, len)?;
    }
    write_u64(w, index.postings.len() as u64)?;
    for (term, list) in &index.postings {
        write_str(w, term)?;
        write_u64(w, list.len() as u64)?;
        for &(ord, tf) in list {
            write_u32(w, ord)?;
            write_u32(w, tf)?;
        }
    }
    w.flush()
}

/// Loads a snapshot written by [`save_index`]. Rejects unknown magic bytes
/// and snapshot versions other than the current one.
pub fn load_index<P: AsRef<Path>>(path: P) -> Result<InvertedIndex, RetrievalError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = SnapshotReader {
        inner: BufReader::new(file),
        path: path.display().to_string(),
    };
    let magic: [u8; 8] = r.bytes()?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(r.bad("not an index snapshot (bad magic)"));
    }
    let version = r.u32()?;
    if version != SNAPSHOT_VERSION {
        return Err(RetrievalError::SnapshotVersion {
            path: r.path,
            found: version,
            expected: SNAPSHOT_VERSION,
        });
    }
    let k1 = r.f64()?;
    let b = r.f64()?;
    let avg_doc_length = r.f64()?;
    let doc_count = r.u64()? as usize;
    let mut doc_ids = Vec::with_capacity(doc_count);
    let mut doc_lengths = Vec::with_capacity(doc_count);
    for _ in 0..doc_count {
        doc_ids.push(r.string()?);
        doc_lengths.push(r.u32()?);
    }
    let term_count = r.u64()? as usize;
    let mut postings = BTreeMap::new();
    for _ in 0..term_count {
        let term = r.string()?;
        let len = r.u64()? as usize;
        let mut list = Vec::with_capacity(len);
        for _ in 0..len {
            let ord = r.u32()?;
            let tf = r.u32()?;
            if ord as usize >= doc_count {
                return Err(r.bad(format!("posting ordinal {ord} out of range")));
            }
            list.push((ord, tf));
        }
        postings.insert(term, list);
    }
    Ok(InvertedIndex {
        postings,
        doc_ids,
        doc_lengths,
        avg_doc_length,
        params: Bm25Params { k1, b },
    })
}

// ─── TREC run files ───

/// A set of per-query rankings keyed by query id, as read from or written to
/// a TREC run file. `tag` is the run tag of the first record.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub rankings: BTreeMap<String, Vec<Candidate>>,
    pub tag: String,
}

impl RunFile {
    pub fn new(rankings: BTreeMap<String, Vec<Candidate>>, tag: impl Into<String>) -> Self {
        RunFile {
            rankings,
            tag: tag.into(),
        }
    }

    /// Strict cross-check: every doc id in the run must exist in `corpus`.
    pub fn check_doc_ids(&self, corpus: &Corpus) -> Result<(), RetrievalError> {
        for (qid, candidates) in &self.rankings {
            for c in candidates {
                if corpus.get(&c.doc_id).is_none() {
                    return Err(RetrievalError::UnknownDocId {
                        query_id: qid.clone(),
                        doc_id: c.doc_id.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Parses a TREC run file (`qid Q0 docid rank score tag`, whitespace
/// separated).
///
/// Rankings whose ranks are not exactly 1..=n in file order with
/// non-increasing scores are re-sorted by descending score (ties keep file
/// order) and re-ranked, with a warning.
pub fn load_run_file<P: AsRef<Path>>(path: P) -> Result<RunFile, RetrievalError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let display = path.display().to_string();
    let parse_err = |line: usize, message: String| RetrievalError::RunParse {
        path: display.clone(),
        line,
        message,
    };
    let mut rankings: BTreeMap<String, Vec<Candidate>> = BTreeMap::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    let mut tag = String::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(parse_err(
                idx + 1,
                format!("expected 6 fields, found {}", fields.len()),
            ));
        }
        let rank: usize = fields[3]
            .parse()
            .map_err(|_| parse_err(idx + 1, format!("bad rank {:?}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| parse_err(idx + 1, format!("bad score {:?}", fields[4])))?;
        if !score.is_finite() {
            return Err(parse_err(idx + 1, format!("non-finite score {score}")));
        }
        let key = (fields[0].to_string(), fields[2].to_string());
        if let Some(prev) = seen.insert(key, idx + 1) {
            return Err(parse_err(
                idx + 1,
                format!(
                    "duplicate document {:?} for query {:?} (first on line {prev})",
                    fields[2], fields[0]
                ),
            ));
        }
        if tag.is_empty() {
            tag = fields[5].to_string();
        }
        rankings.entry(fields[0].to_string()).or_default().push(Candidate {
            doc_id: fields[2].to_string(),
            rank,
            score,
        });
    }
    if rankings.is_empty() {
        return Err(parse_err(0, "no records".into()));
    }
    for (qid, candidates) in &mut rankings {
        let consistent = candidates
            .iter()
            .enumerate()
            .all(|(i, c)| c.rank == i + 1)
            && candidates.windows(2).all(|w| w[0].score >= w[1].score);
        if !consistent {
            log::warn!("run file {display}: query {qid}: ranks inconsistent with scores, re-sorting");
            candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
            for (i, c) in candidates.iter_mut().enumerate() {
                c.rank = i + 1;
            }
        }
    }
    Ok(RunFile { rankings, tag })
}

/// Writes a TREC run file. Queries are emitted in key order; candidates in
/// list order with their stored ranks. Scores use the shortest
/// round-trippable decimal form.
pub fn write_run_file<P: AsRef<Path>>(
    path: P,
    rankings: &BTreeMap<String, Vec<Candidate>>,
    tag: &str,
) -> Result<(), RetrievalError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for (qid, candidates) in rankings {
        for c in candidates {
            writeln!(w, "{} Q0 {} {} {} {}", qid, c.doc_id, c.rank, c.score, tag)
                .map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}
