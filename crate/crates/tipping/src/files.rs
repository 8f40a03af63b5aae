//! On-disk formats.
//!
//! * Basin file: JSON `{"dimension", "basins": {label: {"centroid", "phrases"?}}}`
//!   with optional `"metadata"` (free-form) and `"model"` (toy transformer
//!   parameters) sections.
//! * Rollout trace: JSON lines `{"step", "context", "scores", "chosen"}`.
//! * Token stream: JSON lines `{"t", "embedding"}` in, `{"t", "level",
//!   "n_star", "delta_hat"}` out.
//! * Sentence labels: JSON lines `{"index", "text"?, "label"}`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tipping_core::multilayer::{MultilayerError, ToyTransformer};
use tipping_core::stats::SentenceLabel;
use tipping_core::{AlertLevel, BasinSet, GeometryError, Label, NStar, RolloutStep, RolloutTrace};

pub const BASIN_SCHEMA: &str = r#"{"dimension": int, "basins": {"<label>": {"centroid": [float...], "phrases": [{"text": str, "embedding": [float...]}...]}}}"#;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed basin file at line {line}, column {column}: {message}\n  expected schema: {schema}")]
    MalformedBasin {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
        schema: &'static str,
    },
    #[error("{path}: invalid basin set: {source}\n  expected schema: {BASIN_SCHEMA}")]
    InvalidBasin { path: PathBuf, source: GeometryError },
    #[error("{path}: declared dimension {declared} but basin {label} has {found} components")]
    DeclaredDimension {
        path: PathBuf,
        declared: usize,
        label: String,
        found: usize,
    },
    #[error("{path}: no \"model\" section")]
    MissingModel { path: PathBuf },
    #[error("{path}: invalid model: {source}")]
    InvalidModel { path: PathBuf, source: MultilayerError },
    #[error("{path}:{line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
}

/// A basin file with its optional sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinDocument {
    #[serde(flatten)]
    pub basins: BasinSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ToyTransformer>,
}

impl BasinDocument {
    pub fn new(basins: BasinSet) -> Self {
        BasinDocument {
            basins,
            metadata: None,
            model: None,
        }
    }
}

fn read_string(path: &Path) -> Result<String, FileError> {
    fs::read_to_string(path).map_err(|source| FileError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write_string(path: &Path, text: &str) -> Result<(), FileError> {
    fs::write(path, text).map_err(|source| FileError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses and validates a basin document held in memory.
pub fn parse_basin_document(text: &str, path: &Path) -> Result<BasinDocument, FileError> {
    // Parse loosely first so the declared dimension can be reported against
    // the offending basin before the stricter typed pass.
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| malformed(path, &e))?;
    if let (Some(declared), Some(basins)) = (
        raw.get("dimension").and_then(|d| d.as_u64()),
        raw.get("basins").and_then(|b| b.as_object()),
    ) {
        for (label, basin) in basins {
            if let Some(found) = basin.get("centroid").and_then(|c| c.as_array()).map(|c| c.len()) {
                if found as u64 != declared {
                    return Err(FileError::DeclaredDimension {
                        path: path.to_path_buf(),
                        declared: declared as usize,
                        label: label.clone(),
                        found,
                    });
                }
            }
        }
    }
    let doc: BasinDocument = serde_json::from_str(text).map_err(|e| malformed(path, &e))?;
    doc.basins.validate().map_err(|source| FileError::InvalidBasin {
        path: path.to_path_buf(),
        source,
    })?;
    if let Some(model) = &doc.model {
        model.validate().map_err(|source| FileError::InvalidModel {
            path: path.to_path_buf(),
            source,
        })?;
        if model.dimension != doc.basins.dimension {
            return Err(FileError::InvalidModel {
                path: path.to_path_buf(),
                source: MultilayerError::Invalid("model dimension differs from basin dimension"),
            });
        }
    }
    Ok(doc)
}

fn malformed(path: &Path, e: &serde_json::Error) -> FileError {
    FileError::MalformedBasin {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
        schema: BASIN_SCHEMA,
    }
}

pub fn load_basin_document(path: &Path) -> Result<BasinDocument, FileError> {
    parse_basin_document(&read_string(path)?, path)
}

/// Loads and validates a basin file; `B` and `D` must be present.
pub fn load_basin_file(path: &Path) -> Result<BasinSet, FileError> {
    Ok(load_basin_document(path)?.basins)
}

pub fn store_basin_document(doc: &BasinDocument, path: &Path) -> Result<(), FileError> {
    let text = serde_json::to_string_pretty(doc).map_err(|e| FileError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_string(path, &text)
}

pub fn store_basin_file(basins: &BasinSet, path: &Path) -> Result<(), FileError> {
    store_basin_document(&BasinDocument::new(basins.clone()), path)
}

/// Basins plus the required `"model"` section.
pub fn load_model_file(path: &Path) -> Result<(BasinSet, ToyTransformer), FileError> {
    let doc = load_basin_document(path)?;
    let model = doc.model.ok_or_else(|| FileError::MissingModel {
        path: path.to_path_buf(),
    })?;
    Ok((doc.basins, model))
}

pub fn store_model_file(basins: &BasinSet, model: &ToyTransformer, path: &Path) -> Result<(), FileError> {
    let doc = BasinDocument {
        basins: basins.clone(),
        metadata: None,
        model: Some(model.clone()),
    };
    store_basin_document(&doc, path)
}

/// Reads JSON lines, skipping blank lines.
pub fn read_json_lines<T: DeserializeOwned, R: Read>(reader: R, path: &Path) -> Result<Vec<T>, FileError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|source| FileError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| FileError::Line {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_json_lines_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FileError> {
    let file = fs::File::open(path).map_err(|source| FileError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    read_json_lines(file, path)
}

pub fn write_json_lines<T: Serialize>(items: &[T], path: &Path) -> Result<(), FileError> {
    let file = fs::File::create(path).map_err(|source| FileError::Write {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let werr = |source| FileError::Write {
        path: path.to_path_buf(),
        source,
    };
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| FileError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(werr)?;
    }
    w.flush().map_err(werr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub step: usize,
    pub context: Vec<f64>,
    pub scores: BTreeMap<Label, f64>,
    pub chosen: Label,
}

impl TraceLine {
    pub fn from_step(step: usize, s: &RolloutStep) -> Self {
        TraceLine {
            step,
            context: s.context.as_slice().to_vec(),
            scores: s.scores.clone(),
            chosen: s.chosen.clone(),
        }
    }
}

pub fn trace_lines(trace: &RolloutTrace) -> Vec<TraceLine> {
    trace
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| TraceLine::from_step(i, s))
        .collect()
}

pub fn write_trace(trace: &RolloutTrace, path: &Path) -> Result<(), FileError> {
    write_json_lines(&trace_lines(trace), path)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceLine>, FileError> {
    read_json_lines_file(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamToken {
    pub t: u64,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamStatus {
    pub t: u64,
    pub level: AlertLevel,
    pub n_star: Option<NStar>,
    pub delta_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub label: SentenceLabel,
}

/// Sentence labels ordered by `index`.
pub fn read_sentence_labels(path: &Path) -> Result<Vec<SentenceLabel>, FileError> {
    let mut records: Vec<SentenceRecord> = read_json_lines_file(path)?;
    records.sort_by_key(|r| r.index);
    for pair in records.windows(2) {
        if pair[0].index == pair[1].index {
            return Err(FileError::Json {
                path: path.to_path_buf(),
                message: format!("duplicate sentence index {}", pair[0].index),
            });
        }
    }
    Ok(records.into_iter().map(|r| r.label).collect())
}
