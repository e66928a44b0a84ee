use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GenerationError, GenerationParams};

/// One backend call that produced a response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawGeneration {
    pub source_id: String,
    pub target_attribute: String,
    pub template_id: String,
    pub rendered_prompt: String,
    pub response_text: String,
    pub params: GenerationParams,
    pub backend_id: String,
    pub seed: u64,
    pub variant: usize,
    pub timestamp_ms: u64,
}

/// One backend call that failed. Kept so that retries are auditable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedAttempt {
    pub source_id: String,
    pub target_attribute: String,
    pub template_id: String,
    pub rendered_prompt: String,
    pub backend_id: String,
    pub seed: u64,
    pub attempt: u32,
    pub error: String,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArchiveRecord {
    Generation(RawGeneration),
    Failure(FailedAttempt),
}

impl ArchiveRecord {
    pub fn source_id(&self) -> &str {
        match self {
            ArchiveRecord::Generation(g) => &g.source_id,
            ArchiveRecord::Failure(f) => &f.source_id,
        }
    }
}

/// Append-only archive file. Every append is flushed before returning.
#[derive(Debug)]
pub struct ArchiveWriter {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl ArchiveWriter {
    pub fn open(path: &Path) -> Result<Self, GenerationError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ArchiveWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &ArchiveRecord) -> Result<(), GenerationError> {
        serde_json::to_writer(&mut self.out, record).map_err(std::io::Error::other)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_archive(path: &Path) -> Result<Vec<ArchiveRecord>, GenerationError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| GenerationError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Successful generations only.
pub fn read_generations(path: &Path) -> Result<Vec<RawGeneration>, GenerationError> {
    Ok(read_archive(path)?
        .into_iter()
        .filter_map(|r| match r {
            ArchiveRecord::Generation(g) => Some(g),
            ArchiveRecord::Failure(_) => None,
        })
        .collect())
}

/// Write `record` to a fresh archive at `path` and read it back.
pub fn archive_roundtrip(path: &Path, record: &RawGeneration) -> Result<RawGeneration, GenerationError> {
    let mut w = ArchiveWriter::open(path)?;
    w.append(&ArchiveRecord::Generation(record.clone()))?;
    drop(w);
    read_generations(path)?
        .pop()
        .ok_or_else(|| GenerationError::Parse {
            path: path.display().to_string(),
            line: 0,
            reason: "archive is empty after write".into(),
        })
}
