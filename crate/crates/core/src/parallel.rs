//! Index-parallel map used by the bootstrap and leave-one-out refits.
//!
//! With the `parallel` feature and `cores > 1` the work runs on a rayon
//! pool of that size; otherwise it runs in order on the calling thread.
//! Results are always returned in index order.

use std::sync::atomic::{AtomicUsize, Ordering};

/// Callback receiving the number of completed tasks.
pub type Progress<'a> = &'a (dyn Fn(usize) + Sync);

pub fn map_indices<T, F>(n: usize, cores: usize, progress: Option<Progress<'_>>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let done = AtomicUsize::new(0);
    let task = |i: usize| {
        let out = f(i);
        let d = done.fetch_add(1, Ordering::Relaxed) + 1;
        if let Some(p) = progress {
            p(d);
        }
        out
    };
    #[cfg(feature = "parallel")]
    if cores > 1 {
        use rayon::prelude::*;
        match rayon::ThreadPoolBuilder::new().num_threads(cores).build() {
            Ok(pool) => return pool.install(|| (0..n).into_par_iter().map(task).collect()),
            Err(e) => log::warn!("could not start a thread pool ({e}); running serially"),
        }
    }
    #[cfg(not(feature = "parallel"))]
    if cores > 1 {
        log::debug!("built without the parallel feature; running serially");
    }
    (0..n).map(task).collect()
}
