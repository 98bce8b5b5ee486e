use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use repgan_core::{io, Result};

pub const RESOLVED_CONFIG: &str = "resolved-config.json";
pub const RUN_LOG: &str = "run.log";

/// Output directory, run log and progress switch of one invocation.
pub struct Run {
    pub out: PathBuf,
    progress: bool,
    log: Vec<String>,
}

impl Run {
    pub fn new(out: PathBuf, progress: bool) -> Self {
        Run {
            out,
            progress,
            log: Vec::new(),
        }
    }

    /// Appends to the run log and echoes to stderr under `--progress`.
    pub fn note(&mut self, line: &str) {
        if self.progress {
            eprintln!("{line}");
        }
        self.log.push(line.to_string());
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write_resolved<T: Serialize>(&mut self, cfg: &T) -> Result<()> {
        let path = self.path(RESOLVED_CONFIG);
        io::write_json_pretty(&path, cfg)?;
        self.note(&format!("resolved config written to {}", path.display()));
        Ok(())
    }

    pub fn write_log(&self) -> Result<()> {
        let mut text = self.log.join("\n");
        text.push('\n');
        io::write_atomic(&self.path(RUN_LOG), text.as_bytes())
    }
}

/// The document at `path`, or the defaults when no path is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => io::read_json(p),
        None => Ok(T::default()),
    }
}

/// One compact JSON line on stdout.
pub fn emit<T: Serialize>(summary: &T) -> Result<()> {
    println!("{}", serde_json::to_string(summary)?);
    Ok(())
}
