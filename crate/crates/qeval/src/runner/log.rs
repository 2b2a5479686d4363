//! Append-only run log: JSON lines, one self-describing header line followed
//! by shot-sampling notes and one record per evaluation. Records are flushed
//! as they are written so a killed run leaves a valid, resumable log.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::PairCode;
use crate::error::RunError;
use crate::parsing::ParseOutcome;
use crate::prompts::{ShotSubstitution, TemplateId};

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub version: u32,
    pub config_hash: String,
    pub pairs: Vec<PairCode>,
    pub templates: Vec<TemplateId>,
    pub backend_id: String,
    pub split: String,
    pub shots_seed: Option<u64>,
    pub created_unix_ms: u64,
}

/// The exemplars drawn for one (pair, T8) cell, including any bucket
/// fallbacks that happened during sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotsLine {
    pub pair: PairCode,
    pub shot_ids: Vec<String>,
    pub substitutions: Vec<ShotSubstitution>,
}

/// One instance's evaluation: raw model output per stage plus the parsed
/// outcome. T7 records carry two stage outputs, the rest one; a record
/// dropped on backend failure keeps whatever stages completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub instance_id: String,
    pub pair: PairCode,
    pub template: TemplateId,
    pub backend_id: String,
    pub stage_outputs: Vec<String>,
    pub outcome: ParseOutcome,
    #[serde(default)]
    pub truncated_input: bool,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Header(LogHeader),
    Shots(ShotsLine),
    Record(EvalRecord),
}

/// A parsed run log.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub path: PathBuf,
    pub header: LogHeader,
    pub shots: Vec<ShotsLine>,
    pub records: Vec<EvalRecord>,
}

pub fn read_log(path: &Path) -> Result<RunLog, RunError> {
    let raw = std::fs::read_to_string(path).map_err(|e| RunError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut header = None;
    let mut shots = Vec::new();
    let mut records = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(line).map_err(|e| RunError::BadLog {
            path: path.display().to_string(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        match parsed {
            LogLine::Header(h) => {
                if header.is_some() {
                    return Err(RunError::BadLog {
                        path: path.display().to_string(),
                        line: idx + 1,
                        reason: "duplicate header line".to_string(),
                    });
                }
                header = Some(h);
            }
            LogLine::Shots(s) => shots.push(s),
            LogLine::Record(r) => records.push(r),
        }
    }
    let header = header.ok_or_else(|| RunError::BadLog {
        path: path.display().to_string(),
        line: 1,
        reason: "missing header line".to_string(),
    })?;
    if header.version != LOG_VERSION {
        return Err(RunError::BadLog {
            path: path.display().to_string(),
            line: 1,
            reason: format!("unsupported log version {}", header.version),
        });
    }
    Ok(RunLog {
        path: path.to_path_buf(),
        header,
        shots,
        records,
    })
}

/// Append-only writer; every line is flushed as soon as it is written.
pub struct LogWriter {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self, RunError> {
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(path)
            .map_err(|e| RunError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        Ok(LogWriter {
            path: path.to_path_buf(),
            writer: BufWriter::new(file),
        })
    }

    pub fn append_existing(path: &Path) -> Result<Self, RunError> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| RunError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        Ok(LogWriter {
            path: path.to_path_buf(),
            writer: BufWriter::new(file),
        })
    }

    pub fn write_line(&mut self, line: &LogLine) -> Result<(), RunError> {
        let json = serde_json::to_string(line)?;
        writeln!(self.writer, "{json}").map_err(|e| RunError::Io {
            path: self.path.display().to_string(),
            source: e,
        })?;
        self.writer.flush().map_err(|e| RunError::Io {
            path: self.path.display().to_string(),
            source: e,
        })
    }
}
