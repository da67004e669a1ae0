//! Randomized self-checks behind the `grad-check` and `rank-bounds`
//! commands: analytic gradients against central differences, and update
//! ranks against their closed-form bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adapters::{
    bhra_rank_witness, delta, init_adapter, rank_bound, AdapterConfig, AdapterKind, AdapterState,
    FrozenWeight,
};
use crate::error::Result;
use crate::grad::{
    compare_gradients, fd_gradient, gradients, squared_loss, BackpropContext, FD_EPS,
};
use crate::matrix::{numeric_rank, Matrix, DEFAULT_RANK_TOL};

/// Relative tolerance of the gradient check.
pub const GRAD_REL_TOL: f64 = 1e-6;
/// Absolute floor of the gradient check.
pub const GRAD_ABS_TOL: f64 = 1e-9;

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..=scale))
}

/// A random instance: config, frozen weight of random rank, and a state
/// whose factors are all nonzero.
struct Instance {
    cfg: AdapterConfig,
    w0: FrozenWeight,
    state: AdapterState,
}

fn random_instance(
    rng: &mut ChaCha8Rng,
    kind: AdapterKind,
    max_dim: usize,
    max_r0: usize,
) -> Result<Instance> {
    let b = if kind == AdapterKind::Bhra {
        [1, 2, 4][rng.random_range(0..3)]
    } else {
        1
    };
    let m = b * rng.random_range(1..=max_dim / b);
    let n = b * rng.random_range(1..=max_dim / b);
    let r_tot = match kind {
        AdapterKind::Abba => 2 * rng.random_range(1..=3),
        AdapterKind::Bhra => b * rng.random_range(1..=2),
        _ => rng.random_range(1..=4),
    };
    let cfg = AdapterConfig {
        b,
        ..AdapterConfig::new(kind, r_tot)
    }
    .with_alpha(rng.random_range(0.5..2.0) * r_tot as f64);
    let r0 = rng.random_range(1..=m.min(n).min(max_r0));
    let w0 = uniform(rng, m, r0, 1.0).matmul(&uniform(rng, r0, n, 1.0))?;
    let template = init_adapter(&cfg, m, n, rng.random())?;
    let params = template
        .params()
        .iter()
        .map(|p| uniform(rng, p.rows(), p.cols(), 0.5))
        .collect();
    Ok(Instance {
        cfg,
        w0: FrozenWeight::new(w0)?,
        state: template.with_params(params)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckSummary {
    pub kind: AdapterKind,
    pub trials: usize,
    pub coordinates: usize,
    /// Largest `|a − n| / max(|a|, |n|, abs/rel)` over all coordinates.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
}

/// Compares analytic gradients with central differences on `trials`
/// random instances (`m, n ≤ 16`, `T ≤ 4`, BHRA `b ∈ {1, 2, 4}`).
pub fn grad_check(kind: AdapterKind, trials: usize, seed: u64) -> Result<GradCheckSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_rel: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut coordinates = 0;
    for _ in 0..trials {
        let Instance { cfg, w0, state } = random_instance(&mut rng, kind, 16, 4)?;
        let (m, n) = w0.shape();
        let t = rng.random_range(1..=4);
        let x = uniform(&mut rng, n, t, 1.0);
        let y = uniform(&mut rng, m, t, 1.0);
        let ctx = BackpropContext::for_squared_loss(&w0, &state, &cfg, &x, &y)?;
        let analytic = gradients(&ctx, &w0, &state, &cfg)?;
        let params: Vec<Matrix> = state.params().into_iter().cloned().collect();
        let loss = |p: &[Matrix]| {
            state
                .with_params(p.to_vec())
                .and_then(|s| squared_loss(&w0, &s, &cfg, &x, &y))
                .unwrap_or(f64::NAN)
        };
        let numeric = fd_gradient(loss, &params, FD_EPS)?;
        let cmp = compare_gradients(&analytic, &numeric, GRAD_REL_TOL, GRAD_ABS_TOL)?;
        worst_rel = worst_rel.max(cmp.max_normalized_err);
        worst_abs = worst_abs.max(cmp.max_abs_err);
        coordinates += cmp.coordinates;
    }
    Ok(GradCheckSummary {
        kind,
        trials,
        coordinates,
        max_rel_err: worst_rel,
        max_abs_err: worst_abs,
        passed: worst_rel <= GRAD_REL_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankCheckSummary {
    pub kind: AdapterKind,
    pub trials: usize,
    pub violations: usize,
    /// Instances whose update reached its bound exactly.
    pub at_bound: usize,
    pub passed: bool,
}

/// Checks `numeric_rank(ΔW) ≤ rank_bound` with the measured `rank(W0)`.
pub fn rank_check(kind: AdapterKind, trials: usize, seed: u64) -> Result<RankCheckSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut at_bound = 0;
    for _ in 0..trials {
        let Instance { cfg, w0, state } = random_instance(&mut rng, kind, 12, 3)?;
        let (m, n) = w0.shape();
        let bound = rank_bound(kind, m, n, cfg.r_tot, cfg.b, w0.rank());
        let rank = numeric_rank(&delta(&w0, &state)?, DEFAULT_RANK_TOL)?;
        violations += usize::from(rank > bound);
        at_bound += usize::from(rank == bound);
    }
    Ok(RankCheckSummary {
        kind,
        trials,
        violations,
        at_bound,
        passed: violations == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessSummary {
    pub rank: usize,
    pub r0: usize,
    pub r_tot: usize,
    pub b: usize,
    pub hira_bound: usize,
    pub bhra_bound: usize,
    /// `rank > r0 · r_tot` and `rank ≤ b · r0 · r_tot`.
    pub passed: bool,
}

pub fn rank_witness() -> Result<WitnessSummary> {
    let (w0, cfg, state) = bhra_rank_witness();
    let (m, n) = w0.shape();
    let rank = numeric_rank(&delta(&w0, &state)?, DEFAULT_RANK_TOL)?;
    let hira_bound = rank_bound(AdapterKind::Hira, m, n, cfg.r_tot, 1, w0.rank());
    let bhra_bound = rank_bound(AdapterKind::Bhra, m, n, cfg.r_tot, cfg.b, w0.rank());
    Ok(WitnessSummary {
        rank,
        r0: w0.rank(),
        r_tot: cfg.r_tot,
        b: cfg.b,
        hira_bound,
        bhra_bound,
        passed: rank > hira_bound && rank <= bhra_bound,
    })
}
