//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it they
//! run the same closures in order. Reductions always combine fixed-size
//! chunks in index order, so results are bit-identical across thread counts
//! and across the two builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by every reduction.
pub const REDUCE_CHUNK: usize = 4096;

/// Deterministic sum of `term(i)` for `i in 0..n`.
pub fn sum<F>(n: usize, term: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partial = |c: usize| {
        let lo = c * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(n);
        let mut s = 0.0;
        for i in lo..hi {
            s += term(i);
        }
        s
    };
    #[cfg(feature = "parallel")]
    let partials: Vec<f64> = (0..chunks).into_par_iter().map(partial).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<f64> = (0..chunks).map(partial).collect();
    partials.iter().sum()
}

/// Build a vector from `f(i)`.
pub fn collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
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

/// Overwrite `out[i] = f(i)`.
pub fn fill<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    out.par_iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
    #[cfg(not(feature = "parallel"))]
    out.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
}

/// Run `op(chunk_index, chunk, scratch)` over consecutive chunks of `data`.
/// Every worker owns one scratch value produced by `init`.
pub fn chunks_with_scratch<T, S, I, F>(data: &mut [T], chunk: usize, init: I, op: F)
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(usize, &mut [T], &mut S) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each_init(init, |s, (i, c)| op(i, c, s));
    #[cfg(not(feature = "parallel"))]
    {
        let mut s = init();
        data.chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| op(i, c, &mut s));
    }
}

/// Run `op(i, scratch)` for `i in 0..n` with per-worker scratch.
pub fn for_each_with_scratch<S, I, F>(n: usize, init: I, op: F)
where
    I: Fn() -> S + Sync + Send,
    F: Fn(usize, &mut S) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    (0..n).into_par_iter().for_each_init(init, |s, i| op(i, s));
    #[cfg(not(feature = "parallel"))]
    {
        let mut s = init();
        (0..n).for_each(|i| op(i, &mut s));
    }
}

/// Map over a slice, preserving order.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Size the global pool; a no-op without the `parallel` feature or once
/// the pool already exists.
pub fn set_threads(n: usize) {
    #[cfg(feature = "parallel")]
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::warn!("thread pool already initialized: {e}");
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
}

/// Run `op` on a dedicated pool of `n` workers; inline without the `parallel` feature.
pub fn with_threads<R, F>(n: usize, op: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
        Ok(pool) => pool.install(op),
        Err(e) => {
            log::warn!("cannot build a {n}-thread pool: {e}");
            op()
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        op()
    }
}

/// Whether the crate was built with rayon support.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
