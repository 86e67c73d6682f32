//! Append-only JSON-lines metrics stream.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trainer::StepMetrics;

pub struct MetricsWriter {
    path: PathBuf,
    file: File,
    last_step: Option<u64>,
}

impl MetricsWriter {
    /// Opens (creating if needed) for appending; fails immediately if the
    /// sink is not writable.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            last_step: None,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn log(&mut self, record: &StepMetrics) -> Result<()> {
        log_metrics(record, self)
    }
}

/// Writes one self-contained line and flushes it. Steps must increase
/// strictly within one writer.
pub fn log_metrics(record: &StepMetrics, sink: &mut MetricsWriter) -> Result<()> {
    if let Some(prev) = sink.last_step {
        if record.step <= prev {
            return Err(Error::Metrics(format!(
                "step {} logged after step {prev}; records must increase",
                record.step
            )));
        }
    }
    let mut line = serde_json::to_string(record).map_err(|e| Error::Metrics(e.to_string()))?;
    line.push('\n');
    sink.file
        .write_all(line.as_bytes())
        .and_then(|_| sink.file.flush())
        .map_err(|e| Error::io(&sink.path, e))?;
    sink.last_step = Some(record.step);
    Ok(())
}

/// Reads every complete record. A malformed final line (a write torn by a
/// crash) is skipped; malformed lines elsewhere are errors.
pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<StepMetrics>(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => log::warn!("{}: skipping torn final line", path.display()),
            Err(e) => return Err(Error::Metrics(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}
