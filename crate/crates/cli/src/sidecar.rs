//! The score sidecar: one JSON line per (query, candidate) carrying the raw
//! NLL terms behind a rerank run. The alpha sweep re-derives whole rankings
//! from this file without touching a backend.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use ur3_core::analysis::CandidateRecord;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SidecarRecord {
    pub query_id: String,
    pub doc_id: String,
    pub old_rank: usize,
    pub new_rank: usize,
    pub alpha: f64,
    pub query_nll: f64,
    pub doc_nll: f64,
    pub risk: f64,
    pub query_tokens: usize,
    pub doc_tokens: usize,
    pub truncated: bool,
}

/// Writes records in their given order, one JSON object per line.
pub fn write_sidecar(path: &Path, records: &[SidecarRecord]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut w, record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_sidecar(path: &Path) -> Result<Vec<SidecarRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (number, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SidecarRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", path.display(), number + 1))?;
        records.push(record);
    }
    Ok(records)
}

pub fn candidate_records(records: &[SidecarRecord]) -> Vec<CandidateRecord> {
    records
        .iter()
        .map(|r| CandidateRecord {
            query_id: r.query_id.clone(),
            doc_id: r.doc_id.clone(),
            old_rank: r.old_rank,
            query_nll: r.query_nll,
            doc_nll: r.doc_nll,
        })
        .collect()
}
