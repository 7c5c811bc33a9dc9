use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tempfile::NamedTempFile;

/// Writes `bytes` to a temp file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    let mut tmp =
        NamedTempFile::new_in(parent).with_context(|| format!("creating temp file in {}", parent.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Fails with a hint naming the subcommand that produces a missing input.
pub fn require(path: &Path, what: &str, producer: Option<&str>) -> Result<()> {
    if path.exists() {
        return Ok(());
    }
    match producer {
        Some(cmd) => bail!("{what} file {} not found: run {cmd} first", path.display()),
        None => bail!("{what} file {} not found", path.display()),
    }
}

/// `report.txt` -> `report.csv`.
pub fn csv_twin(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
