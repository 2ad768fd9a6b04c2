//! Labeled examples stored as line-delimited JSON.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusExample {
    pub id: String,
    pub text: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_explanation: Option<String>,
}

/// Sorted distinct labels.
pub fn label_set(corpus: &[CorpusExample]) -> Vec<String> {
    corpus.iter().map(|e| e.label.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

pub fn validate_corpus(corpus: &[CorpusExample]) -> Result<()> {
    let mut seen = HashSet::new();
    for ex in corpus {
        if !seen.insert(ex.id.as_str()) {
            return Err(Error::Data(format!("duplicate example id {:?}", ex.id)));
        }
        if ex.text.trim().is_empty() {
            return Err(Error::Data(format!("example {:?} has empty text", ex.id)));
        }
    }
    Ok(())
}

pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<CorpusExample>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: CorpusExample =
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("corpus line {}: {e}", i + 1)))?;
        if ex.text.trim().is_empty() {
            return Err(Error::Data(format!("corpus line {}: empty text", i + 1)));
        }
        if !seen.insert(ex.id.clone()) {
            return Err(Error::Data(format!("corpus line {}: duplicate id {:?}", i + 1, ex.id)));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusExample>> {
    let file = File::open(path).map_err(|e| Error::Data(format!("cannot open corpus {}: {e}", path.display())))?;
    parse_corpus(BufReader::new(file))
}

pub fn save_corpus(path: &Path, corpus: &[CorpusExample]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for ex in corpus {
        serde_json::to_writer(&mut out, ex).map_err(|e| Error::Data(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
