//! Staged report files, written only once a command has succeeded.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliResult, ResultExt};

#[derive(Debug, Default)]
pub struct Staged {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, name: impl Into<PathBuf>, data: Vec<u8>) {
        self.files.push((name.into(), data));
    }

    pub fn json<T: Serialize>(&mut self, name: impl Into<PathBuf>, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).internal("serializing report")?;
        text.push('\n');
        self.bytes(name, text.into_bytes());
        Ok(())
    }

    /// Stages whatever `write` produces into a buffer.
    pub fn with<E>(&mut self, name: impl Into<PathBuf>, write: impl FnOnce(&mut Vec<u8>) -> Result<(), E>) -> CliResult<()>
    where
        E: Into<anyhow::Error>,
    {
        let name = name.into();
        let mut buf = Vec::new();
        write(&mut buf).internal(format!("rendering {}", name.display()))?;
        self.bytes(name, buf);
        Ok(())
    }

    /// Writes every staged file under `dir` through a temporary sibling and
    /// a rename, so readers never see half-written files.
    pub fn commit(self, dir: &Path) -> CliResult<()> {
        for (name, data) in self.files {
            let path = dir.join(&name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).internal(format!("creating {}", parent.display()))?;
            }
            let mut tmp = path.clone().into_os_string();
            tmp.push(".partial");
            let tmp = PathBuf::from(tmp);
            std::fs::write(&tmp, &data).internal(format!("writing {}", tmp.display()))?;
            std::fs::rename(&tmp, &path).internal(format!("renaming to {}", path.display()))?;
            log::info!("wrote {}", path.display());
        }
        Ok(())
    }
}
