//! File names inside the output directory.

use std::path::{Path, PathBuf};

pub struct Layout {
    pub out: PathBuf,
    pub ckpt: PathBuf,
}

impl Layout {
    pub fn new(out: &Path, ckpt: Option<&Path>) -> Self {
        Self {
            out: out.to_path_buf(),
            ckpt: ckpt.unwrap_or(out).to_path_buf(),
        }
    }

    pub fn dataset(&self, explicit: Option<&Path>) -> PathBuf {
        explicit.map_or_else(|| self.out.join("dataset"), Path::to_path_buf)
    }

    /// Checkpoint and JSON sidecar of a model.
    pub fn model(&self, name: &str) -> (PathBuf, PathBuf) {
        (
            self.ckpt.join(format!("{name}.ckpt")),
            self.ckpt.join(format!("{name}.json")),
        )
    }

    pub fn saved_model(&self, name: &str) -> (PathBuf, PathBuf) {
        (
            self.out.join(format!("{name}.ckpt")),
            self.out.join(format!("{name}.json")),
        )
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}
