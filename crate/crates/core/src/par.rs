//! Path-parallel map. Output order is always the index order, so anything
//! reduced from it afterwards does not depend on the worker count.

use alloc::vec::Vec;

#[cfg(feature = "std")]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "std"))]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Runs `f` on every index and returns the first error in index order.
pub(crate) fn try_map_indexed<T, F>(n: usize, f: F) -> crate::Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> crate::Result<T> + Sync + Send,
{
    map_indexed(n, f).into_iter().collect()
}

const SUM_CHUNK: usize = 1024;

/// `Σ_i f(i)` for vector-valued `f` writing into a zeroed accumulator of
/// length `len`. Partial sums are formed over fixed index chunks and added
/// in chunk order, so the result does not depend on the worker count.
pub(crate) fn sum_indexed<F>(n: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let parts = map_indexed(n.div_ceil(SUM_CHUNK), |c| {
        let mut acc = alloc::vec![0.0; len];
        for i in c * SUM_CHUNK..((c + 1) * SUM_CHUNK).min(n) {
            f(i, &mut acc);
        }
        acc
    });
    let mut total = alloc::vec![0.0; len];
    for part in parts {
        for (t, v) in total.iter_mut().zip(&part) {
            *t += v;
        }
    }
    total
}
