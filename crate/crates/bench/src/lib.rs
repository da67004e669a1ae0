//! Fixed workloads shared by the criterion benches.

use bhra_core::adapters::{init_adapter, AdapterConfig, AdapterKind, AdapterState, FrozenWeight};
use bhra_core::Matrix;

/// Deterministic entries in [-1, 1] without pulling an RNG into the bench
/// crate; the values only need to be dense and non-degenerate.
pub fn dense(rows: usize, cols: usize, salt: u64) -> Matrix {
    Matrix::from_fn(rows, cols, |i, j| {
        let k = (i * cols + j) as u64 ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        ((k as f64 * 0.618_033_988_75).sin() * 43_758.545_3).fract()
    })
}

pub struct Workload {
    pub cfg: AdapterConfig,
    pub w0: FrozenWeight,
    pub state: AdapterState,
    pub x: Matrix,
    pub target: Matrix,
}

impl Workload {
    /// Square `dim x dim` layer with every adapter factor filled, so no
    /// product short-circuits on zeros.
    pub fn new(kind: AdapterKind, dim: usize, r_tot: usize, b: usize, tokens: usize) -> Workload {
        let cfg = AdapterConfig {
            b: if kind == AdapterKind::Bhra { b } else { 1 },
            ..AdapterConfig::new(kind, r_tot)
        };
        let w0 = dense(dim, 8, 1)
            .matmul(&dense(8, dim, 2))
            .expect("shapes agree");
        let template = init_adapter(&cfg, dim, dim, 3).expect("valid config");
        let params = template
            .params()
            .iter()
            .enumerate()
            .map(|(i, p)| dense(p.rows(), p.cols(), 10 + i as u64).scale(0.1))
            .collect();
        Workload {
            cfg,
            w0: FrozenWeight::new(w0).expect("finite"),
            state: template.with_params(params).expect("same layout"),
            x: dense(dim, tokens, 4),
            target: dense(dim, tokens, 5),
        }
    }
}
