//! Operation counting for the instrumented forward paths.
//!
//! Convention: every scalar multiply and every scalar add is one FLOP, so a
//! length-`k` dot product costs `k` multiplies and `k - 1` adds.

use crate::matrix::Matrix;

pub trait OpCounter {
    fn muls(&mut self, n: u64);
    fn adds(&mut self, n: u64);
}

/// Counter that discards everything; the default for uninstrumented calls.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoCount;

impl OpCounter for NoCount {
    #[inline]
    fn muls(&mut self, _: u64) {}
    #[inline]
    fn adds(&mut self, _: u64) {}
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FlopTally {
    pub muls: u64,
    pub adds: u64,
}

impl FlopTally {
    pub fn total(&self) -> u64 {
        self.muls + self.adds
    }
}

impl OpCounter for FlopTally {
    #[inline]
    fn muls(&mut self, n: u64) {
        self.muls += n;
    }
    #[inline]
    fn adds(&mut self, n: u64) {
        self.adds += n;
    }
}

/// Dense product computed one dot product at a time, with its operations
/// reported to `counter`. Callers guarantee conforming shapes.
pub(crate) fn gemm<C: OpCounter>(a: &Matrix, b: &Matrix, counter: &mut C) -> Matrix {
    debug_assert_eq!(a.cols(), b.rows());
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(m, n);
    if k == 0 {
        return out;
    }
    {
        let dst = out.as_mut_slice();
        let (a, b) = (a.as_slice(), b.as_slice());
        for i in 0..m {
            for j in 0..n {
                let mut acc = a[i * k] * b[j];
                for p in 1..k {
                    acc += a[i * k + p] * b[p * n + j];
                }
                dst[i * n + j] = acc;
            }
        }
    }
    counter.muls((m * n * k) as u64);
    counter.adds((m * n * (k - 1)) as u64);
    out
}

pub(crate) fn hadamard_counted<C: OpCounter>(a: &Matrix, b: &Matrix, counter: &mut C) -> Matrix {
    debug_assert_eq!(a.shape(), b.shape());
    let out = Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) * b.get(i, j));
    counter.muls(a.len() as u64);
    out
}

/// `acc += block` in place.
pub(crate) fn accumulate<C: OpCounter>(acc: &mut Matrix, block: &Matrix, counter: &mut C) {
    debug_assert_eq!(acc.shape(), block.shape());
    for (d, s) in acc.as_mut_slice().iter_mut().zip(block.as_slice()) {
        *d += s;
    }
    counter.adds(block.len() as u64);
}
