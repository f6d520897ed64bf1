//! All-or-nothing artifact writing. Files go to a hidden staging folder in
//! the output directory and are moved into place only on `commit`; dropping
//! an uncommitted stage removes everything it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub struct Stage {
    out: PathBuf,
    dir: PathBuf,
    created_out: bool,
    files: Vec<String>,
    committed: bool,
}

impl Stage {
    pub fn new(out: &Path, command: &str) -> Result<Self> {
        let created_out = !out.exists();
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let dir = out.join(format!(".partial-{command}-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            out: out.to_path_buf(),
            dir,
            created_out,
            files: Vec::new(),
            committed: false,
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Final location of an artifact once committed.
    pub fn final_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for name in &self.files {
            let to = self.out.join(name);
            fs::rename(self.dir.join(name), &to).with_context(|| format!("moving {} into place", to.display()))?;
            written.push(to);
        }
        fs::remove_dir_all(&self.dir)?;
        self.committed = true;
        Ok(written)
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        let _ = fs::remove_dir_all(&self.dir);
        if self.created_out {
            // only removes the folder if nothing else landed in it
            let _ = fs::remove_dir(&self.out);
        }
    }
}
