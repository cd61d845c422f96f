//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the helpers fan work out over the
//! global rayon pool; without it they run plain loops. Results are collected
//! in input order and reduced sequentially either way, so both builds produce
//! bit-identical numbers.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Cap the worker pool from the `SITGRU_THREADS` environment variable.
/// Call once at process start; later calls are no-ops.
pub fn init_thread_cap() {
    #[cfg(feature = "parallel")]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        ONCE.call_once(|| {
            if let Ok(v) = std::env::var("SITGRU_THREADS") {
                if let Ok(n) = v.trim().parse::<usize>() {
                    if n >= 1 {
                        // Ignore failure: a pool may already exist.
                        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                    }
                }
            }
        });
    }
}

/// Map `f` over `items`, preserving input order in the output.
#[cfg(feature = "parallel")]
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Map `f` over indices `0..n`, preserving index order in the output.
#[cfg(feature = "parallel")]
pub fn par_map_indices<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map_indices<R>(n: usize, f: impl Fn(usize) -> R) -> Vec<R> {
    (0..n).map(f).collect()
}

/// Sequential map sharing the `par_map` signature; used where a caller needs
/// the serial path unconditionally (e.g. timing comparisons).
pub fn seq_map<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_preserves_order() {
        let items: Vec<usize> = (0..1000).collect();
        let out = par_map(&items, |&i| i * 2);
        assert_eq!(out, seq_map(&items, |&i| i * 2));
    }
}
