//! Execution policy for the data-parallel inner loops.
//!
//! Every helper here preserves input order in its output, and reductions are
//! always formed by folding fixed-size chunks and then combining the chunk
//! partials left to right. Results are therefore bit-identical between
//! [`Exec::Sequential`] and [`Exec::Parallel`], and across thread counts.
//!
//! Without the `parallel` feature, [`Exec::Parallel`] runs sequentially.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows per reduction chunk.
pub const CHUNK_ROWS: usize = 2048;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Ordered map over `0..n`.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Ordered fallible map over `0..n`; the first error in index order wins.
    pub fn try_map<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        let results = self.map(n, f);
        results.into_iter().collect()
    }

    /// Fold `0..n_rows` in chunks of [`CHUNK_ROWS`] and combine the partials in
    /// chunk order. `fold` receives the row range of one chunk.
    pub fn chunked_reduce<A, F, C>(self, n_rows: usize, fold: F, mut combine: C) -> Option<A>
    where
        A: Send,
        F: Fn(std::ops::Range<usize>) -> A + Sync + Send,
        C: FnMut(&mut A, A),
    {
        let n_chunks = n_rows.div_ceil(CHUNK_ROWS);
        let partials = self.map(n_chunks, |i| {
            let lo = i * CHUNK_ROWS;
            fold(lo..(lo + CHUNK_ROWS).min(n_rows))
        });
        let mut it = partials.into_iter();
        let mut acc = it.next()?;
        for p in it {
            combine(&mut acc, p);
        }
        Some(acc)
    }

    /// Apply `f` to consecutive mutable chunks of `data`, each `width * CHUNK_ROWS`
    /// long. The closure gets the index of the first row in the chunk.
    pub fn for_each_row_chunk<T, F>(self, data: &mut [T], width: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let step = (width * CHUNK_ROWS).max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            data.par_chunks_mut(step)
                .enumerate()
                .for_each(|(i, chunk)| f(i * CHUNK_ROWS, chunk));
            return;
        }
        data.chunks_mut(step)
            .enumerate()
            .for_each(|(i, chunk)| f(i * CHUNK_ROWS, chunk));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        for exec in [Exec::Sequential, Exec::Parallel] {
            let v = exec.map(100, |i| i * 2);
            assert_eq!(v, (0..100).map(|i| i * 2).collect::<Vec<_>>());
        }
    }

    #[test]
    fn chunked_sum_is_mode_independent() {
        let xs: Vec<f64> = (0..10_000).map(|i| (i as f64).sin() * 1e-3 + 1.0 / (i + 1) as f64).collect();
        let sum = |exec: Exec| {
            exec.chunked_reduce(xs.len(), |r| xs[r].iter().sum::<f64>(), |a, b| *a += b)
                .unwrap()
        };
        assert_eq!(sum(Exec::Sequential).to_bits(), sum(Exec::Parallel).to_bits());
    }

    #[test]
    fn empty_reduce_is_none() {
        assert!(Exec::Sequential
            .chunked_reduce(0, |_| 0.0, |a: &mut f64, b| *a += b)
            .is_none());
    }

    #[test]
    fn try_map_reports_first_error() {
        let r: Result<Vec<usize>, usize> =
            Exec::Parallel.try_map(10, |i| if i % 4 == 3 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(3));
    }
}
