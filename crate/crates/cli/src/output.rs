//! Atomic file output.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Creates `dir` if needed and checks that files can be created in it.
pub fn prepare_output_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create output directory {}: {e}", dir.display())))?;
    tempfile::NamedTempFile::new_in(dir)
        .map(drop)
        .map_err(|e| CliError::Data(format!("output directory {} is not writable: {e}", dir.display())))
}

/// Writes `contents` to a temporary file beside `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let fail = |e: &dyn std::fmt::Display| CliError::Data(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| fail(&e))?;
    tmp.as_file().sync_all().map_err(|e| fail(&e))?;
    tmp.persist(path).map_err(|e| fail(&e.error))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Files written by one command, in write order.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Written {
    pub files: Vec<PathBuf>,
}

impl Written {
    pub fn write(&mut self, path: PathBuf, contents: &str) -> Result<(), CliError> {
        write_atomic(&path, contents)?;
        self.files.push(path);
        Ok(())
    }
}

/// Fails with a data error naming `path` when it does not exist.
pub fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{what} file not found: {}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn missing_file_names_path() {
        let err = require_file(Path::new("/nonexistent/cal.toml"), "calibration").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/cal.toml"));
        assert_eq!(err.exit_code(), crate::error::EXIT_DATA);
    }
}
