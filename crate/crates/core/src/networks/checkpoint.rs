//! Text checkpoints: the network architecture followed by one flat array
//! per named parameter.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::Model;
use super::spec::NetworkSpec;
use crate::{Error, Result};

const FORMAT: &str = "ickan-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: NetworkSpec,
    pub params: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Checkpoint {
        let params = model.store.iter().map(|p| (p.name.clone(), p.value.data().to_vec())).collect();
        Checkpoint { format: FORMAT.to_string(), spec: model.spec.clone(), params }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{}`", ck.format)));
        }
        Ok(ck)
    }

    /// Rebuilds the model; every parameter must be present with the right
    /// length and no unknown names are accepted.
    pub fn into_model(self) -> Result<Model> {
        let mut model = Model::new(self.spec, &mut ChaCha8Rng::seed_from_u64(0))?;
        let mut params = self.params;
        for id in model.store.ids().collect::<Vec<_>>() {
            let name = model.store.get(id).name.clone();
            let values = params
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            let want = model.store.get(id).value.numel();
            if values.len() != want {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has {} values, expected {want}",
                    values.len()
                )));
            }
            model.store.set_value(id, &values);
        }
        if let Some(extra) = params.keys().next() {
            return Err(Error::Checkpoint(format!("unknown parameter `{extra}`")));
        }
        model.refresh_boxes();
        Ok(model)
    }

    /// Writes the checkpoint and returns its content hash.
    pub fn save(model: &Model, path: &Path) -> Result<String> {
        let text = Checkpoint::from_model(model).to_json();
        std::fs::write(path, &text)?;
        Ok(content_hash(text.as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = std::fs::read_to_string(path)?;
        Checkpoint::from_json(&text)?.into_model()
    }
}

/// Hex SHA-256 of `"blob <len>\0" + content`, the object id git assigns
/// under its SHA-256 object format.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
