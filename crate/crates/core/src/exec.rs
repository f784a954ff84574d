//! Data-parallel execution over particle indices.
//!
//! Every parallel loop in the crate writes disjoint outputs, and every
//! reduction runs sequentially inside one output element, so results do not
//! depend on scheduling. The only thread-count dependent choice is how row
//! blocks of the Gram product are cut; deterministic mode pins that to a
//! fixed block size so results are also identical across thread counts.
//!
//! Without the `parallel` feature everything runs on the calling thread.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Row-block size used in deterministic mode.
pub const DETERMINISTIC_BLOCK: usize = 64;

/// Execution policy threaded through the numerical kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Exec {
    parallel: bool,
    deterministic: bool,
}

impl Default for Exec {
    fn default() -> Self {
        Self {
            parallel: cfg!(feature = "parallel"),
            deterministic: false,
        }
    }
}

impl Exec {
    pub fn sequential() -> Self {
        Self {
            parallel: false,
            deterministic: false,
        }
    }

    /// Parallel execution; identical to [`Exec::sequential`] when the crate is
    /// built without the `parallel` feature.
    pub fn parallel() -> Self {
        Self {
            parallel: cfg!(feature = "parallel"),
            deterministic: false,
        }
    }

    pub fn with_deterministic(mut self, deterministic: bool) -> Self {
        self.deterministic = deterministic;
        self
    }

    pub fn is_parallel(&self) -> bool {
        self.parallel
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    /// Block length used when splitting `n` rows of work.
    pub fn block_len(&self, n: usize) -> usize {
        if self.deterministic {
            DETERMINISTIC_BLOCK
        } else if self.parallel {
            n.div_ceil(current_threads()).max(1)
        } else {
            n.max(1)
        }
    }

    /// Evaluates `f` on `0..n`, returning results in index order.
    pub fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Runs `f(first_index, chunk)` over consecutive chunks of `chunk` elements.
    pub fn for_each_chunk<T, F>(&self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self.parallel {
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(c, slice)| f(c * chunk, slice));
            return;
        }
        data.chunks_mut(chunk)
            .enumerate()
            .for_each(|(c, slice)| f(c * chunk, slice));
    }
}

fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
