//! Document collections and question/answer datasets.
//!
//! Corpora are JSONL files with one document object per line
//! (`{"id": ..., "title": ..., "text": ...}`); datasets are JSONL files with
//! one `{"question": ..., "answers": [...]}` object per line. This module also
//! owns the two text canonicalizers shared by the rest of the crate: the
//! retrieval tokenizer and the answer normalizer used for relevance judging
//! and EM/F1.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

/// A retrievable passage. `title` may be empty; `id` is unique within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

/// One evaluation question with its gold answer strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryExample {
    pub query_id: String,
    pub question: String,
    pub answers: Vec<String>,
}

/// An in-memory document collection with O(1) lookup by id.
#[derive(Debug, Clone)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("{path}: no records")]
    Empty { path: String },
}

impl Corpus {
    /// Builds a corpus from documents, checking id uniqueness.
    pub fn from_docs(docs: Vec<Document>) -> Result<Self, CorpusError> {
        if docs.is_empty() {
            return Err(CorpusError::Empty {
                path: "<memory>".into(),
            });
        }
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    path: "<memory>".into(),
                    line: i + 1,
                    id: doc.id.clone(),
                });
            }
        }
        Ok(Corpus { docs, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Loads a JSONL corpus, preserving file order. Blank lines are skipped.
///
/// Fails on the first malformed record (reporting its 1-based line number),
/// on duplicate ids, and on files with no records.
pub fn load_corpus<P: AsRef<Path>>(path: P) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let display = path.display().to_string();
    let mut docs = Vec::new();
    let mut by_id = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                path: display.clone(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        if by_id.insert(doc.id.clone(), docs.len()).is_some() {
            return Err(CorpusError::DuplicateId {
                path: display,
                line: idx + 1,
                id: doc.id,
            });
        }
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(CorpusError::Empty { path: display });
    }
    Ok(Corpus { docs, by_id })
}

/// Writes a corpus as canonical JSONL (field order id, title, text; one
/// document per line; trailing newline).
pub fn write_corpus<P: AsRef<Path>>(path: P, corpus: &Corpus) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for doc in &corpus.docs {
        // Document serialization cannot fail; only the underlying writer can.
        serde_json::to_writer(&mut w, doc).map_err(|e| io_err(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Deserialize)]
struct RawQuery {
    #[serde(default)]
    id: Option<String>,
    question: String,
    answers: Vec<String>,
}

/// Loads a JSONL question/answer dataset, preserving file order.
///
/// Query ids come from the optional `id` field, otherwise from the 0-based
/// record index. Every record must have a non-empty question and at least one
/// answer that survives [`normalize_answer`].
pub fn load_dataset<P: AsRef<Path>>(path: P) -> Result<Vec<QueryExample>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let display = path.display().to_string();
    let malformed = |line: usize, message: String| CorpusError::Malformed {
        path: display.clone(),
        line,
        message,
    };
    let mut queries: Vec<QueryExample> = Vec::new();
    let mut seen = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawQuery =
            serde_json::from_str(&line).map_err(|e| malformed(idx + 1, e.to_string()))?;
        if raw.question.trim().is_empty() {
            return Err(malformed(idx + 1, "empty question".into()));
        }
        if raw.answers.is_empty() {
            return Err(malformed(idx + 1, "empty answers list".into()));
        }
        for ans in &raw.answers {
            if normalize_answer(ans).is_empty() {
                return Err(malformed(
                    idx + 1,
                    format!("answer {ans:?} is empty after normalization"),
                ));
            }
        }
        let query_id = raw.id.unwrap_or_else(|| queries.len().to_string());
        if let Some(prev) = seen.insert(query_id.clone(), idx + 1) {
            return Err(malformed(
                idx + 1,
                format!("duplicate query id {query_id:?} (first seen on line {prev})"),
            ));
        }
        queries.push(QueryExample {
            query_id,
            question: raw.question,
            answers: raw.answers,
        });
    }
    if queries.is_empty() {
        return Err(CorpusError::Empty { path: display });
    }
    Ok(queries)
}

/// Writes a dataset as JSONL with explicit ids, mirroring [`load_dataset`].
pub fn write_dataset<P: AsRef<Path>>(
    path: P,
    queries: &[QueryExample],
) -> Result<(), CorpusError> {
    #[derive(Serialize)]
    struct RawOut<'a> {
        id: &'a str,
        question: &'a str,
        answers: &'a [String],
    }
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for q in queries {
        let raw = RawOut {
            id: &q.query_id,
            question: &q.question,
            answers: &q.answers,
        };
        serde_json::to_writer(&mut w, &raw).map_err(|e| io_err(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Splits text into lowercased maximal alphanumeric runs.
///
/// Alphanumeric means Unicode alphabetic or numeric, so `"The Quick
/// brown-fox!"` becomes `["the", "quick", "brown", "fox"]`. Characters that
/// lowercase to sequences containing non-alphanumerics (dotted capital I, for
/// instance) keep only the alphanumeric part, which keeps the output stable
/// under repeated tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut run = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            run.push(ch);
        } else {
            push_token(&mut tokens, &mut run);
        }
    }
    push_token(&mut tokens, &mut run);
    tokens
}

fn push_token(tokens: &mut Vec<String>, run: &mut String) {
    if run.is_empty() {
        return;
    }
    let token: String = run
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric())
        .collect();
    if !token.is_empty() {
        tokens.push(token);
    }
    run.clear();
}

/// Canonicalizes an answer string for relevance judging and EM/F1.
///
/// Lowercases, drops ASCII punctuation, removes the articles `a`, `an`,
/// `the`, and collapses whitespace to single spaces.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}
