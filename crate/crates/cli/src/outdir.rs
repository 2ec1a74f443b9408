//! Output-directory bookkeeping.
//!
//! Every file a subcommand writes is registered here before it is created,
//! so a failed run can remove whatever it produced instead of leaving
//! corrupt partial outputs behind.

use std::cell::RefCell;
use std::fs;
use std::path::{Path, PathBuf};

use sprig_core::{CoreError, Result};

pub struct OutDir {
    root: PathBuf,
    tracked: RefCell<Vec<PathBuf>>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| CoreError::io(root.display().to_string(), e))?;
        Ok(OutDir { root: root.to_path_buf(), tracked: RefCell::new(Vec::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Registers `name` as an output of this run and returns its full path.
    pub fn file(&self, name: &str) -> PathBuf {
        let path = self.root.join(name);
        self.tracked.borrow_mut().push(path.clone());
        path
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.file(name);
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| CoreError::numeric(format!("serialising {name}: {e}")))?;
        fs::write(&path, text + "\n").map_err(|e| CoreError::io(path.display().to_string(), e))?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.file(name);
        fs::write(&path, text).map_err(|e| CoreError::io(path.display().to_string(), e))?;
        Ok(path)
    }

    /// Removes every tracked file that exists. Called when a command fails.
    pub fn cleanup(&self) {
        for path in self.tracked.borrow().iter() {
            let _ = fs::remove_file(path);
        }
    }
}
