//! Versioned policy checkpoints: config hash, parameters and optimizer state.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PolicyConfig;
use crate::error::{PolicyError, Result};
use crate::model::ActorCritic;
use crate::optim::Adam;
use crate::tape::ParamStore;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub config_hash: String,
    pub config: PolicyConfig,
    pub params: ParamStore,
    pub optimizer: Option<Adam>,
}

impl PolicyCheckpoint {
    pub fn new(model: &ActorCritic, optimizer: Option<&Adam>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config_hash: model.config().hash(),
            config: model.config().clone(),
            params: model.params.clone(),
            optimizer: optimizer.cloned(),
        }
    }

    /// Checks version, hash integrity and, when given, that the stored
    /// config equals `expected`.
    pub fn verify(&self, expected: Option<&PolicyConfig>) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Version(self.version));
        }
        let actual = self.config.hash();
        if actual != self.config_hash {
            return Err(PolicyError::Corrupt(format!(
                "stored hash {} does not match stored config ({actual})",
                self.config_hash
            )));
        }
        if let Some(cfg) = expected {
            let want = cfg.hash();
            if want != self.config_hash {
                return Err(PolicyError::ConfigMismatch {
                    expected: want,
                    found: self.config_hash.clone(),
                });
            }
        }
        if let Some(opt) = &self.optimizer {
            if !opt.matches(&self.params) {
                return Err(PolicyError::Corrupt("optimizer state does not match parameters".into()));
            }
        }
        Ok(())
    }

    pub fn into_model(self) -> Result<(ActorCritic, Option<Adam>)> {
        let model = ActorCritic::from_params(self.config, self.params)?;
        Ok((model, self.optimizer))
    }

    /// Writes through a temporary file so an interrupted save never leaves a
    /// truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec(self)?)
    }

    pub fn load(path: &Path, expected: Option<&PolicyConfig>) -> Result<Self> {
        let bytes = fs::read(path)?;
        let ckpt: Self = serde_json::from_slice(&bytes).map_err(|e| PolicyError::Corrupt(e.to_string()))?;
        ckpt.verify(expected)?;
        Ok(ckpt)
    }
}

/// Hex SHA-256 digest.
pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;

    fn model() -> ActorCritic {
        ActorCritic::init(PolicyConfig::profile(Profile::Tiny, 64, 4), 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        let m = model();
        let opt = Adam::new(&m.params, 3e-4, Some(0.5));
        PolicyCheckpoint::new(&m, Some(&opt)).save(&path).unwrap();
        let loaded = PolicyCheckpoint::load(&path, Some(m.config())).unwrap();
        let (m2, opt2) = loaded.into_model().unwrap();
        assert_eq!(m2.params, m.params);
        assert_eq!(opt2.unwrap(), opt);
    }

    #[test]
    fn config_mismatch_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        let m = model();
        PolicyCheckpoint::new(&m, None).save(&path).unwrap();
        let mut other = m.config().clone();
        other.memory_len += 1;
        assert!(matches!(
            PolicyCheckpoint::load(&path, Some(&other)),
            Err(PolicyError::ConfigMismatch { .. })
        ));
    }

    #[test]
    fn corrupt_files_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        fs::write(&path, b"{\"version\": 1").unwrap();
        assert!(matches!(PolicyCheckpoint::load(&path, None), Err(PolicyError::Corrupt(_))));
        let m = model();
        let mut ck = PolicyCheckpoint::new(&m, None);
        ck.config.n_heads = 1;
        assert!(matches!(ck.verify(None), Err(PolicyError::Corrupt(_))));
        let mut ck = PolicyCheckpoint::new(&m, None);
        ck.params.params.pop();
        assert!(matches!(ck.into_model(), Err(PolicyError::Corrupt(_))));
    }
}
