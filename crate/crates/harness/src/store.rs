//! File access with the offending path attached to every error.

use std::fs;
use std::path::Path;

use crate::error::{HarnessError, Result};

pub fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| HarnessError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Attaches `path` to a parse error from one of the CSV readers.
pub fn in_file<T>(path: &Path, r: retsync::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        retsync::Error::Io(source) => HarnessError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => HarnessError::Invalid(format!("{}: {other}", path.display())),
    })
}
