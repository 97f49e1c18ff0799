//! Ordered data-parallel maps. With the `parallel` feature the work is spread
//! over the rayon pool; without it the same closures run sequentially. Results
//! are always returned in index order, and every reduction downstream is done
//! sequentially over that order, so outputs do not depend on the worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows per task below which splitting is not worth it.
const MIN_CHUNK: usize = 256;

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().with_min_len(MIN_CHUNK).map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let _ = MIN_CHUNK;
    (0..n).map(f).collect()
}

/// Like [`map_indexed`] with one task per index, for coarse work items.
#[cfg(feature = "parallel")]
pub fn map_tasks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().with_max_len(1).map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_tasks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Runs `f` with at most `threads` workers. A no-op wrapper without the
/// `parallel` feature.
#[cfg(feature = "parallel")]
pub fn with_threads<T: Send, F: FnOnce() -> T + Send>(threads: Option<usize>, f: F) -> T {
    match threads {
        Some(t) if t > 0 => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<T: Send, F: FnOnce() -> T + Send>(_threads: Option<usize>, f: F) -> T {
    f()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
