//! CSV files and the per-experiment manifest.

use std::path::{Path, PathBuf};

use ickan::networks::content_hash;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Files written by one experiment, hashed for the manifest.
#[derive(Debug)]
pub struct Outputs {
    pub dir: PathBuf,
    pub artifacts: Vec<Artifact>,
    pub checkpoints: Vec<Artifact>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, String> {
        std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
        Ok(Outputs { dir: dir.to_path_buf(), artifacts: Vec::new(), checkpoints: Vec::new() })
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<PathBuf, String> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        for r in rows {
            w.serialize(r).map_err(|e| format!("{}: {e}", path.display()))?;
        }
        w.flush().map_err(|e| format!("{}: {e}", path.display()))?;
        drop(w);
        self.record(&path, false)?;
        Ok(path)
    }

    pub fn checkpoint(&mut self, name: &str, model: &ickan::networks::Model) -> Result<(), String> {
        let path = self.dir.join(name);
        ickan::networks::Checkpoint::save(model, &path).map_err(|e| e.to_string())?;
        self.record(&path, true)
    }

    fn record(&mut self, path: &Path, checkpoint: bool) -> Result<(), String> {
        let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let a = Artifact {
            path: path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            sha256: content_hash(&bytes),
        };
        if checkpoint {
            self.checkpoints.push(a);
        } else {
            self.artifacts.push(a);
        }
        Ok(())
    }

    /// Writes `manifest.json` with the configuration echo and every hash.
    pub fn manifest<C: Serialize>(&self, experiment: &str, config: &C) -> Result<(), String> {
        let doc = serde_json::json!({
            "experiment": experiment,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "artifacts": self.artifacts,
            "checkpoints": self.checkpoints,
        });
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&doc).map_err(|e| e.to_string())?;
        std::fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
