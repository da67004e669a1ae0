//! JSON adapter checkpoints. Factors are embedded as strings in the plain
//! text matrix form, so a save/load cycle is bit-exact.

use serde::{Deserialize, Serialize};

use super::{AdapterConfig, AdapterKind, AdapterState};
use crate::error::{BhraError, Result};
use crate::matrix::{format_matrix, parse_matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedFactor {
    pub name: String,
    pub matrix: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: AdapterKind,
    pub m: usize,
    pub n: usize,
    pub r_tot: usize,
    pub b: usize,
    pub alpha: f64,
    pub factors: Vec<NamedFactor>,
}

impl Checkpoint {
    pub fn capture(cfg: &AdapterConfig, state: &AdapterState) -> Result<Self> {
        if cfg.kind != state.kind() {
            return Err(BhraError::KindMismatch {
                expected: cfg.kind,
                found: state.kind(),
            });
        }
        let (m, n) = state.update_shape();
        let factors = state
            .param_names()
            .into_iter()
            .zip(state.params())
            .map(|(name, p)| NamedFactor {
                name,
                matrix: format_matrix(p),
            })
            .collect();
        Ok(Checkpoint {
            kind: cfg.kind,
            m,
            n,
            r_tot: cfg.r_tot,
            b: cfg.b,
            alpha: cfg.alpha,
            factors,
        })
    }

    pub fn config(&self) -> AdapterConfig {
        AdapterConfig {
            kind: self.kind,
            r_tot: self.r_tot,
            b: self.b,
            alpha: self.alpha,
        }
    }

    /// Rebuilds the config and state, checking names and shapes against the
    /// layout implied by the header fields.
    pub fn restore(&self) -> Result<(AdapterConfig, AdapterState)> {
        let cfg = self.config();
        cfg.validate(self.m, self.n)?;
        let template = super::init_adapter(&cfg, self.m, self.n, 0)?;
        let names = template.param_names();
        if names.len() != self.factors.len() {
            return Err(BhraError::config(format!(
                "checkpoint has {} factors, {} expects {}",
                self.factors.len(),
                self.kind,
                names.len()
            )));
        }
        let mut params = Vec::with_capacity(names.len());
        for (want, got) in names.iter().zip(&self.factors) {
            if *want != got.name {
                return Err(BhraError::config(format!(
                    "factor {:?} found where {want:?} was expected",
                    got.name
                )));
            }
            params.push(parse_matrix(&got.matrix)?);
        }
        let state = template.with_params(params)?;
        Ok((cfg, state))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
