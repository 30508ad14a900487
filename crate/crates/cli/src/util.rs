//! Exit-code mapping, atomic output directories, thread-pool setup.

use std::fs;
use std::path::{Path, PathBuf};

use onhgdl_core::Error;

/// Exit codes: 2 for bad configuration or input data, 3 for I/O failures.
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => 3,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: 3,
            message: message.into(),
        }
    }
}

pub type CliResult = Result<(), CliError>;

pub fn init_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("ONHGDL_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Run `work` against a temp directory, then atomically rename it to `out`.
/// A failure leaves no partial artifact directory behind.
pub fn with_output_dir(
    out: &Path,
    work: impl FnOnce(&Path) -> Result<(), CliError>,
) -> CliResult {
    if out.exists() {
        return Err(CliError::usage(format!(
            "output directory {} already exists",
            out.display()
        )));
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::io(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    let mut tmp: PathBuf = out.to_path_buf();
    let name = tmp
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "out".into());
    tmp.set_file_name(format!(".{name}.partial"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)
            .map_err(|e| CliError::io(format!("cannot clear {}: {e}", tmp.display())))?;
    }
    fs::create_dir_all(&tmp)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", tmp.display())))?;
    match work(&tmp) {
        Ok(()) => fs::rename(&tmp, out)
            .map_err(|e| CliError::io(format!("cannot finalize {}: {e}", out.display()))),
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}

/// Sorted list of files with the given extension.
pub fn files_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::usage(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == ext).unwrap_or(false))
        .collect();
    files.sort();
    Ok(files)
}
