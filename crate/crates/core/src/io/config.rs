//! JSON run configuration. Every field is optional; command-line flags
//! override values from the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guidance_beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voxel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chunk: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_edge_len: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_depth: Option<f64>,
    /// Length `T` of the diffusion chain.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cond_dropout: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(&self, over: &RunConfig) -> RunConfig {
        macro_rules! pick {
            ($($f:ident),*) => { RunConfig { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            seed,
            steps,
            eta,
            guidance_beta,
            depth_max,
            voxel,
            chunk,
            max_edge_len,
            min_depth,
            diffusion_steps,
            train_steps,
            batch_size,
            lr_initial,
            lr_final,
            cond_dropout
        )
    }
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let bytes = super::read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::MalformedFile(format!("{} is not UTF-8", path.display())))?;
    RunConfig::parse(text)
}
