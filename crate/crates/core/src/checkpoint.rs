//! JSON container for frozen networks: a spec, flat parameter arrays, and a
//! content hash over the parameters.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diffcore::{hash_parameters, Parameter};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint<S> {
    pub kind: String,
    pub spec: S,
    pub params: Vec<Parameter>,
    pub hash: String,
}

impl<S: Serialize + DeserializeOwned> Checkpoint<S> {
    pub fn new(kind: &str, spec: S, params: Vec<Parameter>) -> Self {
        let hash = hash_parameters(&params);
        Self {
            kind: kind.into(),
            spec,
            params,
            hash,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Reads a checkpoint and rejects it if the kind or hash does not match.
    pub fn load(path: &Path, kind: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.kind != kind {
            return Err(Error::Config(format!(
                "{}: expected a `{kind}` checkpoint, found `{}`",
                path.display(),
                ck.kind
            )));
        }
        let actual = hash_parameters(&ck.params);
        if actual != ck.hash {
            return Err(Error::Config(format!(
                "{}: parameter hash {actual} does not match recorded {}",
                path.display(),
                ck.hash
            )));
        }
        Ok(ck)
    }
}
