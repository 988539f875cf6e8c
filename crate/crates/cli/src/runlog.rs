use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::error::{CliError, CliResult};

pub const LOG_NAME: &str = "run.log";

/// Appends timestamped lines to `run.log` and echoes them to stderr.
pub struct RunLog {
    file: File,
    start: Instant,
    quiet: bool,
}

impl RunLog {
    pub fn open(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(LOG_NAME);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        let quiet = std::env::var_os("FLUOROSYNTH_QUIET").is_some();
        Ok(Self {
            file,
            start: Instant::now(),
            quiet,
        })
    }

    pub fn line(&mut self, msg: impl AsRef<str>) {
        let text = format!(
            "[{:>9.3}s] {}",
            self.start.elapsed().as_secs_f64(),
            msg.as_ref()
        );
        let _ = writeln!(self.file, "{text}");
        if !self.quiet {
            eprintln!("{text}");
        }
    }

    pub fn elapsed_s(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }
}
