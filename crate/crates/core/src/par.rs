//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers fan out over rayon's pool;
//! without it they run the very same chunked loops on the calling thread.
//! Chunk boundaries depend only on the problem size, and per-chunk results
//! are always combined in chunk order, so both backends produce identical
//! bits.

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows per work item in matrix products and row-wise maps.
pub const ROW_CHUNK: usize = 64;

/// Name of the compiled-in backend.
pub fn backend() -> &'static str {
    if cfg!(feature = "parallel") {
        "rayon"
    } else {
        "sequential"
    }
}

fn chunk_range(index: usize, chunk: usize, n: usize) -> Range<usize> {
    let start = index * chunk;
    start..(start + chunk).min(n)
}

/// Maps `f` over the chunks of `0..n` and returns the results in chunk order.
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, Range<usize>) -> T + Send + Sync,
{
    assert!(chunk > 0);
    let count = n.div_ceil(chunk);
    #[cfg(feature = "parallel")]
    {
        (0..count).into_par_iter().map(|c| f(c, chunk_range(c, chunk, n))).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(|c| f(c, chunk_range(c, chunk, n))).collect()
    }
}

/// Maps `f` over `0..n`, one work item per index, preserving order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Calls `f(first_row, block)` for consecutive row blocks of `a`.
pub fn for_each_row_chunk_mut<F>(a: &mut Array2<f64>, chunk: usize, f: F)
where
    F: Fn(usize, ArrayViewMut2<'_, f64>) + Send + Sync,
{
    assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    {
        a.axis_chunks_iter_mut(Axis(0), chunk).into_par_iter().enumerate().for_each(|(c, block)| f(c * chunk, block));
    }
    #[cfg(not(feature = "parallel"))]
    {
        a.axis_chunks_iter_mut(Axis(0), chunk).enumerate().for_each(|(c, block)| f(c * chunk, block));
    }
}

/// `a · b`, computed over row blocks of the output.
pub fn matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.nrows(), "inner dimensions differ");
    let mut out = Array2::<f64>::zeros((a.nrows(), b.ncols()));
    for_each_row_chunk_mut(&mut out, ROW_CHUNK, |r0, mut block| {
        let rows = block.nrows();
        general_mat_mul(1.0, &a.slice(s![r0..r0 + rows, ..]), &b, 0.0, &mut block);
    });
    out
}
