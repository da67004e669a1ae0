//! Desk-scale teacher–student harness.
//!
//! A frozen low-rank `W0` and a planted, blockwise-heterogeneous update `Δ*`
//! define the target `W0 + Δ*`. Each run trains one adapter on fresh
//! standard-normal batches with Adam and records its loss curve and the
//! spectral profile of the learned update. Loss is the quality proxy; no
//! accuracy figure is produced anywhere in this module.

mod config;
mod output;
mod probes;

pub use config::{
    ExperimentConfig, Figure1Section, GiniSection, SweepSection, TeacherOverrides, TrainSection,
};
pub use output::{aggregate_csv, records_jsonl, write_outputs, OutputPaths};
pub use probes::{
    aggregate, check_b_sweep, check_figure1, check_gini, figure1_configs, figure1_probe,
    figure1_rows, gini_configs, gini_probe, run_many, sweep, AggregateRow, Claim, Figure1Row,
    GiniRow, RunOutcome,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adapters::{
    delta, forward, init_adapter, AdapterConfig, AdapterKind, BlockGrid, FrozenWeight,
};
use crate::error::{BhraError, Result};
use crate::grad::{gradients, AdamConfig, AdamState, BackpropContext};
use crate::matrix::{numeric_rank, Matrix, DEFAULT_RANK_TOL};
use crate::spectral::SpectralReport;

/// Seeds used by every multi-seed probe unless a config overrides them.
pub const DEFAULT_SEEDS: [u64; 5] = [42, 2025, 2024, 2023, 2022];

const TEACHER_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const MAX_TEACHER_DRAWS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyTaskSpec {
    pub m: usize,
    pub n: usize,
    pub r0_target: usize,
    /// Ratio between consecutive rank-1 weights of `W0`; 1 gives a flat
    /// spectrum.
    pub w0_decay: f64,
    /// Square grid of per-block multipliers for `Δ*`.
    pub teacher_block_profile: Vec<Vec<f64>>,
    /// Rank of the random mask drawn inside each teacher block.
    pub mask_rank: usize,
    /// Mean of the Gaussian mask factors; 0 gives zero-mean masks.
    pub mask_mean: f64,
    pub train_steps: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub batch: usize,
    pub seeds: Vec<u64>,
}

impl Default for ToyTaskSpec {
    fn default() -> Self {
        ToyTaskSpec {
            m: 64,
            n: 64,
            r0_target: 8,
            w0_decay: 0.5,
            teacher_block_profile: quadrant_profile(2, 4.0),
            mask_rank: 2,
            mask_mean: 1.0,
            train_steps: 2000,
            learning_rate: 1e-2,
            warmup_steps: 100,
            batch: 8,
            seeds: DEFAULT_SEEDS.to_vec(),
        }
    }
}

/// `p × p` multipliers with the top-left quadrant at `heavy` and the rest
/// at 1. `p` is expected to be even.
pub fn quadrant_profile(p: usize, heavy: f64) -> Vec<Vec<f64>> {
    (0..p)
        .map(|i| {
            (0..p)
                .map(|j| if i < p / 2 && j < p / 2 { heavy } else { 1.0 })
                .collect()
        })
        .collect()
}

impl ToyTaskSpec {
    pub fn profile_grid(&self) -> Result<BlockGrid> {
        BlockGrid::square(self.teacher_block_profile.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(BhraError::config("task dimensions must be positive"));
        }
        if self.r0_target == 0 || self.r0_target > self.m.min(self.n) {
            return Err(BhraError::config(format!(
                "r0_target must lie in 1..={}, got {}",
                self.m.min(self.n),
                self.r0_target
            )));
        }
        if !(self.w0_decay > 0.0 && self.w0_decay.is_finite()) {
            return Err(BhraError::config("w0_decay must be positive and finite"));
        }
        let p = self.teacher_block_profile.len();
        if p == 0 || self.teacher_block_profile.iter().any(|row| row.len() != p) {
            return Err(BhraError::config(
                "teacher_block_profile must be a non-empty square grid",
            ));
        }
        let flat = self.teacher_block_profile.iter().flatten();
        if flat.clone().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(BhraError::config(
                "teacher multipliers must be nonnegative and finite",
            ));
        }
        if flat.clone().all(|&v| v == 0.0) {
            return Err(BhraError::config("teacher multipliers are all zero"));
        }
        self.profile_grid()?.block_shape(self.m, self.n)?;
        if !self.mask_mean.is_finite() {
            return Err(BhraError::config("mask_mean must be finite"));
        }
        if self.mask_rank == 0 {
            return Err(BhraError::config("mask_rank must be positive"));
        }
        if self.batch == 0 {
            return Err(BhraError::config("batch must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(BhraError::config(
                "learning_rate must be positive and finite",
            ));
        }
        if self.seeds.is_empty() {
            return Err(BhraError::config("seed list is empty"));
        }
        Ok(())
    }

    /// Linear warmup to `learning_rate` over `warmup_steps`; step 0 runs at
    /// `learning_rate / warmup_steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        self.learning_rate * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
    }
}

/// Frozen weight, planted update and target for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub w0: FrozenWeight,
    pub planted: Matrix,
    pub target: Matrix,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

fn random_w0(spec: &ToyTaskSpec, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let (m, n, r0) = (spec.m, spec.n, spec.r0_target);
    // Normalized so that the largest term has unit spectral scale.
    let u = gaussian(rng, m, r0, 1.0 / (m as f64).sqrt());
    let v = gaussian(rng, r0, n, 1.0 / (n as f64).sqrt());
    let weights: Vec<f64> = (0..r0).map(|k| spec.w0_decay.powi(k as i32)).collect();
    u.matmul(&Matrix::diag(&weights))?.matmul(&v)
}

/// Builds `W0` with numeric rank exactly `r0_target` (redrawing a bounded
/// number of times) and `Δ*` whose block `(i, j)` is
/// `multiplier_ij · (W0_ij ⊙ M_ij)` for a fresh rank-`mask_rank` mask
/// `M_ij`.
pub fn build_teacher(spec: &ToyTaskSpec, seed: u64) -> Result<Teacher> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TEACHER_STREAM);

    let mut w0 = None;
    for _ in 0..MAX_TEACHER_DRAWS {
        let candidate = random_w0(spec, &mut rng)?;
        if numeric_rank(&candidate, DEFAULT_RANK_TOL)? == spec.r0_target {
            w0 = Some(candidate);
            break;
        }
    }
    let w0 = w0.ok_or_else(|| {
        BhraError::config(format!(
            "no rank-{} frozen weight after {MAX_TEACHER_DRAWS} draws",
            spec.r0_target
        ))
    })?;

    let grid = spec.profile_grid()?;
    let (br, bc) = grid.block_shape(spec.m, spec.n)?;
    let k = spec.mask_rank;
    let mask_scale = 1.0 / (k as f64).sqrt().sqrt();
    let mut planted = Matrix::zeros(spec.m, spec.n);
    for i in 0..grid.row_parts {
        for j in 0..grid.col_parts {
            let mult = spec.teacher_block_profile[i][j];
            // Drawn unconditionally so a zero multiplier does not shift the stream.
            let shift = spec.mask_mean * mask_scale;
            let left = gaussian(&mut rng, br, k, mask_scale).map(|v| v + shift)?;
            let right = gaussian(&mut rng, k, bc, mask_scale).map(|v| v + shift)?;
            let mask = left.matmul(&right)?;
            if mult == 0.0 {
                continue;
            }
            let block = w0
                .submatrix(i * br, j * bc, br, bc)
                .hadamard(&mask)?
                .scale(mult);
            planted.write_submatrix(i * br, j * bc, &block);
        }
    }
    let target = w0.add(&planted)?;
    Ok(Teacher {
        w0: FrozenWeight::new(w0)?,
        planted,
        target,
    })
}

/// One trained adapter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub config: AdapterConfig,
    pub seed: u64,
    pub steps: usize,
    /// Minibatch loss `(1/2T)‖(W0 + sΔW)X − W_target X‖²_F` at every step,
    /// evaluated before that step's update.
    pub losses: Vec<f64>,
    /// Population loss `½‖sΔW − Δ*‖²_F` at initialization.
    pub initial_loss: f64,
    /// Population loss after the last update.
    pub final_loss: f64,
    /// Spectral profile of the trained `sΔW`, block Gini on the teacher grid.
    pub report: SpectralReport,
    /// The trained, scaled update `sΔW`.
    #[serde(skip)]
    pub delta: Matrix,
}

impl RunRecord {
    /// `1 − final / initial`; 0 when the initial loss is already 0.
    pub fn improvement(&self) -> f64 {
        if self.initial_loss > 0.0 {
            1.0 - self.final_loss / self.initial_loss
        } else {
            0.0
        }
    }
}

/// Trains `cfg` on the teacher for `seed`.
pub fn run_training(spec: &ToyTaskSpec, cfg: &AdapterConfig, seed: u64) -> Result<RunRecord> {
    let teacher = build_teacher(spec, seed)?;
    train_on(spec, &teacher, cfg, seed, spec.train_steps)
}

/// Training loop against an explicit teacher; exposed for probes that
/// reuse one teacher or vary the step budget.
pub fn train_on(
    spec: &ToyTaskSpec,
    teacher: &Teacher,
    cfg: &AdapterConfig,
    seed: u64,
    steps: usize,
) -> Result<RunRecord> {
    let (m, n) = teacher.w0.shape();
    cfg.validate(m, n)?;
    let w0 = &teacher.w0;
    let mut state = init_adapter(cfg, m, n, seed)?;
    let mut adam = AdamState::new(
        AdamConfig {
            lr: spec.learning_rate,
            ..AdamConfig::default()
        },
        state.params(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(BATCH_STREAM);
    let t = spec.batch;
    let population = |state: &_| -> Result<f64> {
        let err = delta(w0, state)?.scale(cfg.scale()).sub(&teacher.planted)?;
        Ok(0.5 * err.sum_squares())
    };
    let initial_loss = population(&state)?;

    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let x = gaussian(&mut rng, n, t, 1.0);
        let residual = forward(w0, &state, cfg, &x)?.sub(&teacher.target.matmul(&x)?)?;
        let loss = residual.sum_squares() / (2.0 * t as f64);
        if !loss.is_finite() {
            return Err(BhraError::Diverged { step, value: loss });
        }
        losses.push(loss);
        let ctx = BackpropContext::new(residual.scale(1.0 / t as f64), x)?;
        let grads = gradients(&ctx, w0, &state, cfg)?;
        adam.step_with_lr(&mut state.params_mut(), &grads, spec.lr_at(step))?;
    }

    let scaled = delta(w0, &state)?.scale(cfg.scale());
    let final_loss = 0.5 * scaled.sub(&teacher.planted)?.sum_squares();
    if !final_loss.is_finite() {
        return Err(BhraError::Diverged {
            step: steps,
            value: final_loss,
        });
    }
    let report = SpectralReport::compute(&scaled, Some(spec.profile_grid()?))?;
    Ok(RunRecord {
        config: *cfg,
        seed,
        steps,
        losses,
        initial_loss,
        final_loss,
        report,
        delta: scaled,
    })
}

/// Adapter configs of one kind family at a shared budget, BHRA at `b`.
pub fn budget_config(kind: AdapterKind, r_tot: usize, bhra_b: usize) -> AdapterConfig {
    match kind {
        AdapterKind::Bhra => AdapterConfig::bhra(r_tot, bhra_b),
        other => AdapterConfig::new(other, r_tot),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyTaskSpec {
        ToyTaskSpec {
            m: 16,
            n: 16,
            r0_target: 3,
            train_steps: 60,
            teacher_block_profile: quadrant_profile(2, 4.0),
            ..ToyTaskSpec::default()
        }
    }

    #[test]
    fn teacher_is_deterministic_and_rank_exact() {
        let spec = small();
        let a = build_teacher(&spec, 9).unwrap();
        assert_eq!(a, build_teacher(&spec, 9).unwrap());
        assert_eq!(a.w0.rank(), 3);
        assert_ne!(a.planted, build_teacher(&spec, 10).unwrap().planted);
    }

    #[test]
    fn full_rank_w0() {
        let spec = ToyTaskSpec {
            r0_target: 16,
            ..small()
        };
        assert_eq!(build_teacher(&spec, 1).unwrap().w0.rank(), 16);
    }

    #[test]
    fn single_block_support() {
        let spec = ToyTaskSpec {
            teacher_block_profile: vec![vec![0.0, 0.0], vec![0.0, 2.0]],
            ..small()
        };
        let t = build_teacher(&spec, 3).unwrap();
        for (i, j) in [(0, 0), (0, 8), (8, 0)] {
            assert!(t.planted.submatrix(i, j, 8, 8).is_zero());
        }
        assert!(!t.planted.submatrix(8, 8, 8, 8).is_zero());
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = [
            ToyTaskSpec {
                r0_target: 17,
                ..small()
            },
            ToyTaskSpec {
                teacher_block_profile: vec![vec![0.0; 2]; 2],
                ..small()
            },
            ToyTaskSpec {
                teacher_block_profile: vec![vec![1.0, -1.0], vec![1.0, 1.0]],
                ..small()
            },
            ToyTaskSpec {
                teacher_block_profile: quadrant_profile(3, 2.0),
                ..small()
            },
            ToyTaskSpec {
                seeds: vec![],
                ..small()
            },
        ];
        for spec in bad {
            assert!(build_teacher(&spec, 0).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn warmup_schedule() {
        let spec = ToyTaskSpec {
            learning_rate: 1.0,
            warmup_steps: 4,
            ..small()
        };
        assert_eq!(spec.lr_at(0), 0.25);
        assert_eq!(spec.lr_at(3), 1.0);
        assert_eq!(spec.lr_at(100), 1.0);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let spec = small();
        for kind in AdapterKind::ALL {
            let cfg = budget_config(kind, 4, 2);
            let rec = run_training(&spec, &cfg, 5).unwrap();
            assert_eq!(rec.losses.len(), 60);
            assert!(rec.final_loss < rec.initial_loss, "{kind}");
            assert_eq!(rec, run_training(&spec, &cfg, 5).unwrap());
        }
    }

    #[test]
    fn zero_teacher_stays_put() {
        let spec = ToyTaskSpec {
            teacher_block_profile: vec![vec![0.0, 0.0], vec![0.0, 1.0]],
            ..small()
        };
        let mut teacher = build_teacher(&spec, 2).unwrap();
        teacher.planted = Matrix::zeros(16, 16);
        teacher.target = teacher.w0.matrix().clone();
        let rec = train_on(&spec, &teacher, &AdapterConfig::bhra(4, 2), 2, 30).unwrap();
        assert_eq!(rec.initial_loss, 0.0);
        assert_eq!(rec.losses[0], 0.0);
        assert!(rec.final_loss < 1e-20);
    }
}
