use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use tempfile::TempDir;

/// Output directory that only appears at its final path once every file has
/// been written. Dropping it without `commit` removes everything.
pub struct Staging {
    dir: TempDir,
    target: PathBuf,
}

impl Staging {
    pub fn new(target: &Path) -> Result<Self> {
        if target.exists() {
            let is_previous_run =
                target.join("manifest.json").is_file() || target.join(".customgnn").is_file();
            let is_empty_dir = target.is_dir() && std::fs::read_dir(target)?.next().is_none();
            if !is_previous_run && !is_empty_dir {
                bail!(
                    "refusing to overwrite {}: not a previous customgnn output directory",
                    target.display()
                );
            }
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent)
            .with_context(|| format!("creating {}", parent.display()))?;
        let dir = tempfile::Builder::new()
            .prefix(".customgnn-staging-")
            .tempdir_in(&parent)
            .with_context(|| format!("creating a staging directory in {}", parent.display()))?;
        Ok(Self {
            dir,
            target: target.to_path_buf(),
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.path().join(file)
    }

    pub fn write(&self, file: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(file);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    /// Moves the staged files into place, replacing a previous output directory.
    pub fn commit(self) -> Result<PathBuf> {
        std::fs::write(self.path(".customgnn"), b"")?;
        if self.target.exists() {
            std::fs::remove_dir_all(&self.target)
                .with_context(|| format!("removing old {}", self.target.display()))?;
        }
        let staged = self.dir.keep();
        std::fs::rename(&staged, &self.target)
            .with_context(|| format!("moving output to {}", self.target.display()))?;
        Ok(self.target)
    }
}
