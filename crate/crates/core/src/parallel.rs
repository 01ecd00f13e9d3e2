//! Thread-pool sizing. `OSCOPE_THREADS` caps the number of worker threads.

use rayon::ThreadPool;

pub const THREADS_ENV: &str = "OSCOPE_THREADS";

pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n: &usize| *n > 0)
}

/// Build a pool honoring `OSCOPE_THREADS` (or `threads` when given).
pub fn pool(threads: Option<usize>) -> ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads.or_else(thread_cap) {
        builder = builder.num_threads(n);
    }
    builder.build().expect("thread pool")
}
