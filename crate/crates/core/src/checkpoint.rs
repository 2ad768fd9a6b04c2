//! Line-delimited JSON checkpoints: a header, one line per parameter, then the
//! vocabulary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numeric::{Matrix, ParamStore};
use crate::text::Vocabulary;

pub const FORMAT_VERSION: &str = "KALM1";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    d_model: usize,
    heads: usize,
    labels: Vec<String>,
    config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamLine {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabLine {
    vocab: Vec<String>,
}

fn json_line<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Data(format!("cannot serialize checkpoint: {e}")))
}

pub fn checkpoint_to_string(model: &Model) -> Result<String> {
    let header = Header {
        format: FORMAT_VERSION.to_string(),
        d_model: model.config.d_model,
        heads: model.config.heads,
        labels: model.labels.clone(),
        config: model.config.clone(),
    };
    let mut out = json_line(&header)?;
    out.push('\n');
    for p in model.params.iter() {
        out.push_str(&json_line(&ParamLine {
            name: p.name.clone(),
            rows: p.value.rows(),
            cols: p.value.cols(),
            values: p.value.values().to_vec(),
        })?);
        out.push('\n');
    }
    out.push_str(&json_line(&VocabLine { vocab: model.vocab.tokens().to_vec() })?);
    out.push('\n');
    Ok(out)
}

pub fn checkpoint_from_str(text: &str) -> Result<Model> {
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let last = lines.len().saturating_sub(1);
    let parse_line = |i: usize| -> Result<serde_json::Value> {
        let line = lines.get(i).ok_or_else(|| Error::Truncated(format!("checkpoint ends before line {}", i + 1)))?;
        serde_json::from_str(line).map_err(|e| {
            if i == last && !complete {
                Error::Truncated(format!("checkpoint line {} is incomplete", i + 1))
            } else {
                Error::Data(format!("checkpoint line {}: {e}", i + 1))
            }
        })
    };
    fn decode<T: serde::de::DeserializeOwned>(i: usize, v: serde_json::Value) -> Result<T> {
        serde_json::from_value(v).map_err(|e| Error::Data(format!("checkpoint line {}: {e}", i + 1)))
    }

    let raw_header = parse_line(0)?;
    let found = raw_header.get("format").and_then(|f| f.as_str()).unwrap_or("").to_string();
    if found != FORMAT_VERSION {
        return Err(Error::Version { expected: FORMAT_VERSION.to_string(), found });
    }
    let header: Header = decode(0, raw_header)?;
    if header.d_model != header.config.d_model || header.heads != header.config.heads {
        return Err(Error::Data("checkpoint header disagrees with its config".into()));
    }
    header.config.validate()?;

    let expected_params = 7 + 3 * header.heads;
    let mut params = ParamStore::new();
    for i in 1..=expected_params {
        let line: ParamLine = decode(i, parse_line(i)?)?;
        if line.values.len() != line.rows * line.cols {
            return Err(Error::Data(format!(
                "parameter {} declares {}x{} but holds {} values",
                line.name,
                line.rows,
                line.cols,
                line.values.len()
            )));
        }
        params.add(line.name, Matrix::from_vec(line.rows, line.cols, line.values)?);
    }
    let vocab_line: VocabLine = decode(expected_params + 1, parse_line(expected_params + 1)?)?;
    if !complete {
        return Err(Error::Truncated("checkpoint lacks its final newline".into()));
    }
    if lines.len() > expected_params + 2 {
        return Err(Error::Data(format!("checkpoint has {} unexpected trailing lines", lines.len() - expected_params - 2)));
    }
    Model::from_parts(header.config, Vocabulary::from(vocab_line.vocab), header.labels, params)
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    checkpoint_from_str(&text)
}
