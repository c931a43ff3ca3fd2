//! Data-parallel helpers.
//!
//! With the `parallel` feature the helpers run on the current rayon pool;
//! without it they fall back to plain sequential iteration. Results are
//! always returned in input order, so any reduction done by the caller over
//! the returned vector has a fixed summation order regardless of thread count.

#[cfg(feature = "parallel")]
thread_local! {
    static POOL: std::cell::RefCell<Option<std::sync::Arc<rayon::ThreadPool>>> =
        const { std::cell::RefCell::new(None) };
}

/// Runs `op` inside the pool selected by [`with_threads`], if any.
#[cfg(feature = "parallel")]
fn in_pool<R: Send>(op: impl FnOnce() -> R + Send) -> R {
    match POOL.with(|p| p.borrow().clone()) {
        Some(pool) => pool.install(op),
        None => op(),
    }
}

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
        in_pool(|| items.par_iter().map(f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Maps `f` over fixed-size chunks of `items`, preserving chunk order.
///
/// Chunk boundaries depend only on `chunk_size`, never on the thread count.
pub fn map_chunks<T, R, F>(items: &[T], chunk_size: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    let chunk_size = chunk_size.max(1);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        in_pool(|| items.par_chunks(chunk_size).map(f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.chunks(chunk_size).map(f).collect()
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
        in_pool(|| (0..n).into_par_iter().map(f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Runs `op` on the calling thread with the helpers in this module limited
/// to `threads` workers. `threads == 0` uses rayon's global pool. Without
/// the `parallel` feature this simply calls `op`.
pub fn with_threads<R, F>(threads: usize, op: F) -> R
where
    F: FnOnce() -> R,
{
    #[cfg(feature = "parallel")]
    {
        let pool = if threads == 0 {
            None
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .ok()
                .map(std::sync::Arc::new)
        };
        let prev = POOL.with(|p| p.replace(pool));
        let out = op();
        POOL.with(|p| *p.borrow_mut() = prev);
        out
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        op()
    }
}

/// Whether the parallel backend is compiled in.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
