//! Output directory with all-or-nothing semantics: everything written through
//! an [`OutputDir`] is removed again unless the run calls [`OutputDir::commit`].

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use tpn_core::{ImageFrame, ModelContainer};

#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl OutputDir {
    /// Nothing is created on disk until the first write.
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into(), files: Vec::new(), dirs: Vec::new(), committed: false }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn ensure_parent(&mut self, path: &Path) -> Result<()> {
        let Some(parent) = path.parent() else { return Ok(()) };
        let mut missing = Vec::new();
        let mut cur = parent;
        while !cur.as_os_str().is_empty() && !cur.exists() {
            missing.push(cur.to_path_buf());
            match cur.parent() {
                Some(p) => cur = p,
                None => break,
            }
        }
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        // outermost first, so cleanup can walk them in reverse
        self.dirs.extend(missing.into_iter().rev());
        Ok(())
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        self.ensure_parent(&path)?;
        if !self.files.contains(&path) {
            self.files.push(path.clone());
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_container(&mut self, name: &str, c: &ModelContainer) -> Result<PathBuf> {
        self.write_bytes(name, &c.to_bytes()?)
    }

    /// Values already in `[0, 1]` are written as they are; anything else is
    /// rescaled to the full gray range.
    pub fn write_pgm(&mut self, name: &str, frame: &ImageFrame) -> Result<PathBuf> {
        let in_range = frame.data().iter().all(|v| (0.0..=1.0).contains(v));
        let bytes = if in_range { frame.to_pgm_bytes() } else { frame.to_pgm_bytes_scaled() };
        self.write_bytes(name, &bytes)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.files
    }

    /// Keeps everything written so far.
    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.files)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            // only removes directories that ended up empty
            let _ = fs::remove_dir(d);
        }
    }
}
