//! Two-way fork/join for the mixed methods' independent gradients.

use std::thread;

use perturbopt_core::optim::Executor;

pub const THREADS_ENV: &str = "PERTURBOPT_THREADS";

/// Worker cap from `PERTURBOPT_THREADS`; unset, unparsable or 0 means the
/// machine's available parallelism.
pub fn worker_count() -> usize {
    let auto = || thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(0) | None => auto(),
        Some(n) => n,
    }
}

/// Runs the second closure on a scoped thread when at least two workers are
/// allowed. Results do not depend on the worker count: each closure computes
/// the same values either way and the caller combines them in a fixed order.
#[derive(Debug, Clone, Copy)]
pub struct Threaded {
    workers: usize,
}

impl Threaded {
    pub fn new(workers: usize) -> Self {
        Self { workers: workers.max(1) }
    }

    pub fn from_env() -> Self {
        Self::new(worker_count())
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

impl Executor for Threaded {
    fn join<RA, RB, FA, FB>(&self, a: FA, b: FB) -> (RA, RB)
    where
        FA: FnOnce() -> RA + Send,
        FB: FnOnce() -> RB + Send,
        RA: Send,
        RB: Send,
    {
        if self.workers < 2 {
            let ra = a();
            return (ra, b());
        }
        thread::scope(|s| {
            let hb = s.spawn(b);
            let ra = a();
            let rb = hb.join().unwrap_or_else(|e| std::panic::resume_unwind(e));
            (ra, rb)
        })
    }
}
