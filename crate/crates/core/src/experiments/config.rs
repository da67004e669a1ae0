use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{quadrant_profile, ToyTaskSpec};
use crate::adapters::{AdapterConfig, AdapterKind};
use crate::error::{BhraError, Result};

/// Experiment file: a `[task]` table plus one optional table per probe.
/// Every field has a desk-scale default, so an empty file is valid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: ToyTaskSpec,
    pub train: TrainSection,
    pub sweep: SweepSection,
    pub figure1: Figure1Section,
    pub gini: GiniSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub kind: AdapterKind,
    pub r_tot: usize,
    pub b: usize,
    /// Defaults to `r_tot`.
    pub alpha: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            kind: AdapterKind::Bhra,
            r_tot: 8,
            b: 4,
            alpha: None,
        }
    }
}

impl TrainSection {
    pub fn adapter(&self) -> AdapterConfig {
        let b = if self.kind == AdapterKind::Bhra {
            self.b
        } else {
            1
        };
        let cfg = AdapterConfig {
            b,
            ..AdapterConfig::new(self.kind, self.r_tot)
        };
        match self.alpha {
            Some(a) => cfg.with_alpha(a),
            None => cfg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub r_tot: usize,
    pub b_values: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            r_tot: 8,
            b_values: vec![1, 2, 4, 8],
        }
    }
}

impl SweepSection {
    pub fn adapters(&self) -> Vec<AdapterConfig> {
        self.b_values
            .iter()
            .map(|&b| AdapterConfig::bhra(self.r_tot, b))
            .collect()
    }
}

/// The stable-rank probe runs on its own teacher: `[task]` with the fields
/// set in `[figure1.teacher]` replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Figure1Section {
    pub budgets: Vec<usize>,
    pub bhra_b: usize,
    pub teacher: TeacherOverrides,
}

impl Default for Figure1Section {
    fn default() -> Self {
        Figure1Section {
            budgets: vec![4, 8, 16],
            bhra_b: 4,
            teacher: TeacherOverrides {
                w0_decay: Some(0.3),
                teacher_block_profile: Some(quadrant_profile(4, 4.0)),
                mask_rank: Some(2),
                mask_mean: Some(1.0),
            },
        }
    }
}

impl Figure1Section {
    pub fn task(&self, base: &ToyTaskSpec) -> Result<ToyTaskSpec> {
        self.teacher.apply(base)
    }
}

/// Teacher fields that a probe may replace; unset fields keep the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherOverrides {
    pub w0_decay: Option<f64>,
    pub teacher_block_profile: Option<Vec<Vec<f64>>>,
    pub mask_rank: Option<usize>,
    pub mask_mean: Option<f64>,
}

impl TeacherOverrides {
    pub fn apply(&self, base: &ToyTaskSpec) -> Result<ToyTaskSpec> {
        let mut spec = base.clone();
        if let Some(d) = self.w0_decay {
            spec.w0_decay = d;
        }
        if let Some(p) = &self.teacher_block_profile {
            spec.teacher_block_profile = p.clone();
        }
        if let Some(k) = self.mask_rank {
            spec.mask_rank = k;
        }
        if let Some(mu) = self.mask_mean {
            spec.mask_mean = mu;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GiniSection {
    pub r_tot: usize,
    pub bhra_b: usize,
    /// Grid used for the Gini statistic.
    pub grid_b: usize,
    /// Seeds that must agree for each claim to pass.
    pub min_seeds: usize,
}

impl Default for GiniSection {
    fn default() -> Self {
        GiniSection {
            r_tot: 8,
            bhra_b: 4,
            grid_b: 4,
            min_seeds: 4,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| BhraError::config(e.to_string()))?;
        cfg.task.validate()?;
        cfg.figure1.task(&cfg.task)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
