//! JSON checkpoints of variational parameters.
//!
//! Layout: `{format_version, arch, mu, rho, hyperparams, seed, config}` where
//! `mu` and `rho` hold one row-major array per learnable tensor in the order
//! `W1, b1, W2, b2, ...`. Numbers are written in their shortest form that
//! parses back to the identical double.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::objective::Hyperparams;
use crate::scalar::Scalar;
use crate::variational_net::{NetworkArch, VariationalParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub arch: NetworkArch,
    pub mu: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
    pub hyperparams: Hyperparams,
    pub seed: u64,
    /// Resolved configuration of the run that produced the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(params: &VariationalParams<T>, hyperparams: &Hyperparams) -> Self {
        let flat = |ts: &[Tensor<T>]| -> Vec<Vec<f64>> {
            ts.iter()
                .map(|t| t.data().iter().map(|v| v.to_f64_lossy()).collect())
                .collect()
        };
        Checkpoint {
            format_version: FORMAT_VERSION,
            arch: params.arch.clone(),
            mu: flat(&params.mu),
            rho: flat(&params.rho),
            hyperparams: hyperparams.clone(),
            seed: hyperparams.seed,
            config: None,
        }
    }

    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = Some(config);
        self
    }

    pub fn params<T: Scalar>(&self) -> Result<VariationalParams<T>> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::contract(format!(
                "unsupported checkpoint format_version {}",
                self.format_version
            )));
        }
        self.arch.validate()?;
        let shapes = self.arch.param_shapes();
        let tensors = |name: &str, arrays: &[Vec<f64>]| -> Result<Vec<Tensor<T>>> {
            if arrays.len() != shapes.len() {
                return Err(Error::contract(format!(
                    "checkpoint `{name}` has {} tensors, architecture needs {}",
                    arrays.len(),
                    shapes.len()
                )));
            }
            shapes
                .iter()
                .zip(arrays)
                .map(|(s, a)| Tensor::new(s.clone(), a.iter().map(|&v| T::lit(v)).collect()))
                .collect()
        };
        let params = VariationalParams {
            arch: self.arch.clone(),
            mu: tensors("mu", &self.mu)?,
            rho: tensors("rho", &self.rho)?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}
