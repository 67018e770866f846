//! CSV emission. Every file opens with a comment line carrying the config
//! hash and seed, then a header row; numbers are written with 17
//! significant digits and UNIX newlines.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

pub struct Emitter {
    dir: PathBuf,
    stamp: String,
}

impl Emitter {
    pub fn new(dir: &Path, hash: &str, seed: u64) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|source| io(dir, source))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            stamp: format!("# config_hash={hash} seed={seed}\n"),
        })
    }

    pub fn write(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(self.stamp.clone().into_bytes());
        let fail = |e: csv::Error| CliError::Io {
            path: path.display().to_string(),
            source: e.into(),
        };
        w.write_record(header).map_err(fail)?;
        for row in rows {
            w.write_record(row).map_err(fail)?;
        }
        let bytes = w.into_inner().map_err(|e| io(&path, e.into_error()))?;
        fs::write(&path, bytes).map_err(|source| io(&path, source))?;
        Ok(path)
    }
}

fn io(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Empty field for a missing value.
pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
