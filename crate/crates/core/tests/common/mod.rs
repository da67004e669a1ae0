//! Shared generators and independent oracles for the integration tests.
#![allow(dead_code)]

use bhra_core::adapters::init_adapter;
use bhra_core::{AdapterConfig, AdapterKind, AdapterState, FrozenWeight, Matrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..=scale))
}

/// Product of two uniform factors; rank `r0` with probability one.
pub fn low_rank(rng: &mut ChaCha8Rng, m: usize, n: usize, r0: usize) -> Matrix {
    let u = uniform(rng, m, r0, 1.0);
    let v = uniform(rng, r0, n, 1.0);
    u.matmul(&v).unwrap()
}

/// An adapter state of the right layout with every factor random, so no
/// gradient vanishes by construction.
pub fn random_state(
    rng: &mut ChaCha8Rng,
    cfg: &AdapterConfig,
    m: usize,
    n: usize,
    scale: f64,
) -> AdapterState {
    let template = init_adapter(cfg, m, n, rng.random()).unwrap();
    let params = template
        .params()
        .iter()
        .map(|p| uniform(rng, p.rows(), p.cols(), scale))
        .collect();
    template.with_params(params).unwrap()
}

/// Random valid configuration with `m, n ≤ max_dim`; BHRA draws
/// `b ∈ {1, 2, 4}` and picks dimensions divisible by it.
pub fn random_config(
    rng: &mut ChaCha8Rng,
    kind: AdapterKind,
    max_dim: usize,
) -> (AdapterConfig, usize, usize) {
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
    let alpha = rng.random_range(0.5..2.0) * r_tot as f64;
    let cfg = AdapterConfig {
        kind,
        r_tot,
        b,
        alpha,
    };
    (cfg, m, n)
}

pub fn frozen(rng: &mut ChaCha8Rng, m: usize, n: usize, r0: usize) -> FrozenWeight {
    FrozenWeight::new(low_rank(rng, m, n, r0)).unwrap()
}

fn to_nalgebra(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Singular values from nalgebra's bidiagonalization SVD, descending.
pub fn oracle_singular_values(m: &Matrix) -> Vec<f64> {
    let mut sv: Vec<f64> = to_nalgebra(m).singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Count of oracle singular values above `tol · σ₁`.
pub fn oracle_rank(m: &Matrix, tol: f64) -> usize {
    let sv = oracle_singular_values(m);
    match sv.first() {
        Some(&top) if top > 0.0 => sv.iter().filter(|&&s| s > tol * top).count(),
        _ => 0,
    }
}

/// Direct triple-loop product, independent of the crate's matmul.
pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), b.cols(), |i, j| {
        (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
    })
}
