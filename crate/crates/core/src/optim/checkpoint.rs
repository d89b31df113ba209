//! Optimizer checkpoints as versioned JSON.
//!
//! ```json
//! {"format_version":1,"algorithm":"lionar","config_hash":"3f1c...","t":12,
//!  "groups":[{"name":"layer0.weight","momentum":[...],"second_moment":null,"grad_power":null}]}
//! ```
//!
//! Buffers are stored as `f64`, which round-trips exactly for both `f32` and
//! `f64` runs.

use super::Algorithm;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupCheckpoint {
    pub name: String,
    pub momentum: Vec<f64>,
    pub second_moment: Option<Vec<f64>>,
    pub grad_power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub algorithm: Algorithm,
    pub config_hash: String,
    pub t: u64,
    pub groups: Vec<GroupCheckpoint>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
