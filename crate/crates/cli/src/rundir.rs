use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::CliError;

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Engine(leaflite::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Output directory of one command invocation: resolved configuration,
/// log and artifacts.
pub struct RunDir {
    path: PathBuf,
    log: File,
}

impl RunDir {
    /// Uses `exact` when given, otherwise `<root>/<timestamp>-<command>`.
    pub fn create(root: &Path, exact: Option<&Path>, command: &str) -> Result<Self, CliError> {
        let path = match exact {
            Some(p) => p.to_path_buf(),
            None => {
                let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S-%3f");
                let base = root.join(format!("{stamp}-{command}"));
                let mut path = base.clone();
                let mut n = 1;
                while path.exists() {
                    path = PathBuf::from(format!("{}-{n}", base.display()));
                    n += 1;
                }
                path
            }
        };
        fs::create_dir_all(&path).map_err(|e| io(&path, e))?;
        let log_path = path.join("log.txt");
        let log = File::create(&log_path).map_err(|e| io(&log_path, e))?;
        Ok(RunDir { path, log })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Prints to stderr and appends to `log.txt`.
    pub fn log(&mut self, line: impl AsRef<str>) {
        let line = line.as_ref();
        eprintln!("{line}");
        let _ = writeln!(self.log, "{line}");
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let p = self.join(name);
        fs::write(&p, contents).map_err(|e| io(&p, e))?;
        Ok(p)
    }
}
