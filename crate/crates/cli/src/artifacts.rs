//! Output directory handling: atomic writes and the hashed manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    entries: Vec<ArtifactEntry>,
}

fn is_non_empty_dir(path: &Path) -> CliResult<bool> {
    match fs::read_dir(path) {
        Ok(mut it) => Ok(it.next().is_some()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(CliError::io(format!("cannot list {}", path.display()))(e)),
    }
}

impl OutputDir {
    /// Refuses an existing non-empty directory unless `force` is set.
    pub fn prepare(root: &Path, force: bool) -> CliResult<Self> {
        if root.exists() && !root.is_dir() {
            return Err(CliError::Usage(format!("{} exists and is not a directory", root.display())));
        }
        if !force && is_non_empty_dir(root)? {
            return Err(CliError::OutputNotEmpty(root.to_path_buf()));
        }
        fs::create_dir_all(root).map_err(CliError::io(format!("cannot create {}", root.display())))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ArtifactEntry] {
        &self.entries
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let target = self.root.join(name);
        let context = format!("cannot write {}", target.display());
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(CliError::io(&context))?;
        tmp.write_all(bytes).map_err(CliError::io(&context))?;
        tmp.as_file().sync_all().map_err(CliError::io(&context))?;
        tmp.persist(&target).map_err(|e| CliError::io(&context)(e.error))?;
        Ok(())
    }

    /// Writes `name` atomically and records it in the manifest.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        self.write_atomic(name, bytes)?;
        self.entries.retain(|e| e.file != name);
        self.entries.push(ArtifactEntry {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes the manifest listing every artifact with its hash. The manifest
    /// itself is not listed.
    pub fn finish(self, command: &str, results: Value) -> CliResult<PathBuf> {
        let mut entries = self.entries.clone();
        entries.sort_by(|a, b| a.file.cmp(&b.file));
        let summary = serde_json::json!({
            "command": command,
            "artifacts": entries,
            "results": results,
        });
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        text.push('\n');
        self.write_atomic(SUMMARY_FILE, text.as_bytes())?;
        Ok(self.root.join(SUMMARY_FILE))
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        ryu::Buffer::new().format_finite(v).to_string()
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// RFC 4180 CSV with a header row, built in memory.
pub struct CsvTable {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        writer
            .write_record(header.iter().map(|h| h.as_ref()))
            .expect("in-memory write");
        CsvTable { writer }
    }

    pub fn row<S: AsRef<[u8]>>(&mut self, fields: impl IntoIterator<Item = S>) {
        self.writer.write_record(fields).expect("in-memory write");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("in-memory flush")
    }
}

/// Column names for a flattened `n x n` upper triangle: `p1_1, p1_2, p2_2, p1_3, ...`.
pub fn upper_triangle_columns(n: usize) -> Vec<String> {
    (1..=n).flat_map(|c| (1..=c).map(move |r| format!("p{r}_{c}"))).collect()
}
