//! Run configuration and output provenance.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use smokesal_core::augment::{HideParams, SynthParams};
use smokesal_core::net::NetConfig;
use smokesal_core::objectness::ObjectnessParams;
use smokesal_core::superpixel::SlicParams;
use smokesal_core::train::TrainConfig;
use smokesal_core::{Error, Result};

/// Everything that drives a run. Missing fields take their defaults, so
/// `{}` is a valid config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub objectness: ObjectnessParams,
    pub slic: SlicParams,
    pub hide: HideParams,
    pub synth: SynthParams,
    /// Master seed; copied into every seeded component by [`RunConfig::with_seed`].
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Sets the master seed and the seeds derived from it: network
    /// initialization, batch order and synthetic data.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.net.init_seed = seed;
        self.train.seed = seed;
        self.synth.seed = seed;
        self
    }

    /// Loads `path` if given, then applies `seed` if given. Without an
    /// explicit seed the config's own `seed` field is propagated.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let cfg = match path {
            Some(p) => Self::load(p)?,
            None => RunConfig::default(),
        };
        let seed = seed.unwrap_or(cfg.seed);
        Ok(cfg.with_seed(seed))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn provenance(&self) -> Provenance {
        let digest = Sha256::digest(self.to_json().as_bytes());
        Provenance {
            config_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Attached to every artifact: a JSON field, a `# provenance:` line in
/// CSV files or a `provenance` text chunk in PNG files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the effective config serialized as compact JSON.
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Provenance {
    /// One-line form used in CSV comments and PNG text chunks.
    pub fn line(&self) -> String {
        format!("config_hash={} seed={} version={}", self.config_hash, self.seed, self.version)
    }
}
