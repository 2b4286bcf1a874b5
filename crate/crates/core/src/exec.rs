//! Data-parallel loop helpers.
//!
//! With the `parallel` feature (default) the indexed map runs on the rayon
//! pool; without it the build is fully sequential. The sequential variant is
//! always available so benchmarks can compare both on one build.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indexed_seq(n, f)
}

/// Pin the size of the global worker pool. A no-op without the
/// `parallel` feature, or once any parallel work has already run.
#[cfg(feature = "parallel")]
pub fn configure_threads(n: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

/// Pin the size of the global worker pool (no-op in sequential builds).
#[cfg(not(feature = "parallel"))]
pub fn configure_threads(_n: usize) {}

/// Sequential fallback, kept available regardless of features.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Index of the maximum value under `key`, ties to the lowest index.
pub fn argmax_by_key<T, F>(items: &[T], key: F) -> Option<usize>
where
    F: Fn(&T) -> f64,
{
    let mut best: Option<(usize, f64)> = None;
    for (i, item) in items.iter().enumerate() {
        let v = key(item);
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |i: usize| (i * i) as u64;
        assert_eq!(map_indexed(100, f), map_indexed_seq(100, f));
    }

    #[test]
    fn argmax_ties_to_lowest_index() {
        let xs = [1.0, 3.0, 3.0, 2.0];
        assert_eq!(argmax_by_key(&xs, |&x| x), Some(1));
    }
}
