//! Output directories that only receive complete runs. Files are written to
//! a staging directory first; a failed run is moved under `quarantine/`.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};

pub struct Staging {
    out_dir: PathBuf,
    stage: PathBuf,
    written: Vec<String>,
}

impl Staging {
    pub fn new(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let stage = out_dir.join(format!(".staging-{}", std::process::id()));
        if stage.exists() {
            std::fs::remove_dir_all(&stage)?;
        }
        std::fs::create_dir_all(&stage)?;
        Ok(Self { out_dir: out_dir.to_path_buf(), stage, written: Vec::new() })
    }

    /// Where a staged file lives until commit. Nested names create their
    /// parent directories.
    pub fn path(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.stage.join(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(p)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name)?;
        std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    pub fn names(&self) -> &[String] {
        &self.written
    }

    /// Moves every staged file into the output directory.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for name in &self.written {
            let from = self.stage.join(name);
            if !from.exists() {
                continue;
            }
            let to = self.out_dir.join(name);
            if let Some(parent) = to.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::rename(&from, &to).with_context(|| format!("moving {}", to.display()))?;
            out.push(to);
        }
        std::fs::remove_dir_all(&self.stage)?;
        Ok(out)
    }

    /// Keeps whatever was written under `quarantine/` for inspection.
    pub fn quarantine(self, command: &str) -> Option<PathBuf> {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let dir = self.out_dir.join("quarantine");
        let to = dir.join(format!("{command}-{secs}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).ok()?;
        std::fs::rename(&self.stage, &to).ok()?;
        Some(to)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_and_quarantine() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Staging::new(dir.path()).unwrap();
        s.write("a.json", "{}").unwrap();
        s.write("seed-1/b.txt", "x").unwrap();
        assert!(!dir.path().join("a.json").exists());
        s.commit().unwrap();
        assert!(dir.path().join("a.json").exists());
        assert!(dir.path().join("seed-1/b.txt").exists());

        let mut s = Staging::new(dir.path()).unwrap();
        s.write("half.json", "{").unwrap();
        let q = s.quarantine("train").unwrap();
        assert!(q.join("half.json").exists());
        assert!(!dir.path().join("half.json").exists());
    }
}
