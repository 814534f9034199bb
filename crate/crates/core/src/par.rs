//! Order-preserving data-parallel helpers.
//!
//! Every helper returns results in input order and reductions are performed
//! over fixed-size chunks in a fixed order, so floating point results do not
//! depend on the number of worker threads or on whether the `parallel`
//! feature is enabled.

/// Number of items folded sequentially before chunk partials are combined.
pub const REDUCE_CHUNK: usize = 32;

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Applies `f` to each element of `items` mutably along with its index.
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
    }
}

/// Folds `items` into dense accumulators of length `dim`.
///
/// `fold` adds one item into an accumulator. Items are folded sequentially
/// within chunks of [`REDUCE_CHUNK`]; chunk partials are then summed in chunk
/// order.
pub fn fold_sum<T, F>(items: &[T], dim: usize, fold: F) -> Vec<f64>
where
    T: Sync,
    F: Fn(&mut [f64], &T) + Sync + Send,
{
    let chunks: Vec<&[T]> = items.chunks(REDUCE_CHUNK).collect();
    let partials = map(&chunks, |chunk| {
        let mut acc = vec![0.0; dim];
        for item in chunk.iter() {
            fold(&mut acc, item);
        }
        acc
    });
    let mut total = vec![0.0; dim];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}
