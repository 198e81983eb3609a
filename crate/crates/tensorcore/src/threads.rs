//! Bounded data parallelism over independent items.
//!
//! Work is split into contiguous chunks and results are reassembled in item
//! order, so the output is identical for any thread count. `MCDM_THREADS`
//! caps the worker count and defaults to 1.

pub const THREADS_ENV: &str = "MCDM_THREADS";

/// Worker cap from `MCDM_THREADS`; unset, empty, or invalid means 1.
pub fn configured_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Map `f` over `0..n`, preserving index order in the result.
pub fn parallel_map<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync,
{
    let workers = configured_threads().min(n.max(1));
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(workers);
    let mut pieces: Vec<Vec<U>> = Vec::with_capacity(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                let start = w * chunk;
                let end = ((w + 1) * chunk).min(n);
                scope.spawn(move || (start..end).map(f).collect::<Vec<U>>())
            })
            .collect();
        for h in handles {
            pieces.push(h.join().expect("worker panicked"));
        }
    });
    let mut out = Vec::with_capacity(n);
    for piece in pieces {
        out.extend(piece);
    }
    out
}
