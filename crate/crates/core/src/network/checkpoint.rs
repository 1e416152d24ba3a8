//! JSON checkpoints of a trained network.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::model::{BnMoments, FaeNetwork};
use crate::error::{FaeError, Result};
use crate::fdata::BasisSpec;

pub const CHECKPOINT_FORMAT: &str = "faeclust-network";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: NetworkConfig,
    pub dims: usize,
    pub data_basis: BasisSpec,
    /// Segment names in storage order, checked on load.
    pub segments: Vec<String>,
    pub params: Vec<f64>,
    pub moments: Vec<BnMoments>,
}

impl Checkpoint {
    pub fn from_network(net: &FaeNetwork) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: net.config.clone(),
            dims: net.p,
            data_basis: *net.data_spec(),
            segments: net.layout().segments.iter().map(|s| s.name.clone()).collect(),
            params: net.params.clone(),
            moments: net.moments.clone(),
        }
    }

    pub fn into_network(self) -> Result<FaeNetwork> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(FaeError::Parse(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        let mut net = FaeNetwork::skeleton(&self.config, &self.data_basis, self.dims)?;
        let names: Vec<&str> = net.layout().segments.iter().map(|s| s.name.as_str()).collect();
        if names != self.segments.iter().map(String::as_str).collect::<Vec<_>>() || self.params.len() != net.params.len() {
            return Err(FaeError::Parse("checkpoint layout does not match its config".into()));
        }
        if self.moments.len() != net.moments.len()
            || self.moments.iter().zip(&net.moments).any(|(a, b)| a.mean.len() != b.mean.len() || a.var.len() != b.var.len())
        {
            return Err(FaeError::Parse("checkpoint batch-norm moments have the wrong shape".into()));
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(FaeError::Parse("checkpoint holds non-finite parameters".into()));
        }
        net.params = self.params;
        net.moments = self.moments;
        net.set_version(1);
        Ok(net)
    }
}

pub fn save_checkpoint(net: &FaeNetwork, path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(f, &Checkpoint::from_network(net))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<FaeNetwork> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let ck: Checkpoint = serde_json::from_reader(f)?;
    ck.into_network()
}
