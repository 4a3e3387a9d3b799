//! Intra-step parallelism helpers.
//!
//! `ABSDE_THREADS` caps the number of worker threads (0 or unset = auto).
//! All helpers partition work into blocks whose boundaries do not depend on
//! the thread count, and every parallel region writes disjoint output slices
//! or produces per-block partials that are combined in block order, so
//! results are identical for any thread count.

use std::sync::OnceLock;

/// Worker thread cap from `ABSDE_THREADS` (0 or unset means auto).
pub fn thread_cap() -> usize {
    static CAP: OnceLock<usize> = OnceLock::new();
    *CAP.get_or_init(|| {
        let requested = std::env::var("ABSDE_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(0);
        if requested > 0 {
            requested
        } else {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
                .min(8)
        }
    })
}

/// Fill `out_a[i], out_b[i] = f(offset + i)` for all i, splitting the index
/// range across threads. `f` must be pure.
pub fn par_fill_pair<F>(out_a: &mut [f64], out_b: &mut [f64], offset: usize, f: F)
where
    F: Fn(usize) -> (f64, f64) + Sync,
{
    assert_eq!(out_a.len(), out_b.len());
    let n = out_a.len();
    let threads = thread_cap().min(n.max(1));
    if threads <= 1 || n < 256 {
        for i in 0..n {
            let (a, b) = f(offset + i);
            out_a[i] = a;
            out_b[i] = b;
        }
        return;
    }
    let chunk = n.div_ceil(threads);
    std::thread::scope(|scope| {
        let mut rest_a = &mut *out_a;
        let mut rest_b = &mut *out_b;
        let mut start = 0usize;
        while !rest_a.is_empty() {
            let take = chunk.min(rest_a.len());
            let (head_a, tail_a) = rest_a.split_at_mut(take);
            let (head_b, tail_b) = rest_b.split_at_mut(take);
            rest_a = tail_a;
            rest_b = tail_b;
            let base = offset + start;
            let f = &f;
            scope.spawn(move || {
                for (i, (slot_a, slot_b)) in head_a.iter_mut().zip(head_b.iter_mut()).enumerate() {
                    let (a, b) = f(base + i);
                    *slot_a = a;
                    *slot_b = b;
                }
            });
            start += take;
        }
    });
}

/// Fill `out[i] = f(i)` across threads. `f` must be pure.
pub fn par_fill<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync,
{
    let n = out.len();
    let threads = thread_cap().min(n.max(1));
    if threads <= 1 || n < 1024 {
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = f(i);
        }
        return;
    }
    let chunk = n.div_ceil(threads);
    std::thread::scope(|scope| {
        let mut rest = &mut *out;
        let mut start = 0usize;
        while !rest.is_empty() {
            let take = chunk.min(rest.len());
            let (head, tail) = rest.split_at_mut(take);
            rest = tail;
            let base = start;
            let f = &f;
            scope.spawn(move || {
                for (i, slot) in head.iter_mut().enumerate() {
                    *slot = f(base + i);
                }
            });
            start += take;
        }
    });
}

/// Block size for reductions. Fixed so that partial sums are independent of
/// the thread count.
pub const REDUCTION_BLOCK: usize = 8192;

/// Map each fixed-size index block through `f` (in parallel) and fold the
/// block results in block order (sequentially).
pub fn blocked_reduce<T, F, G>(n: usize, f: F, mut fold: G)
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync,
    G: FnMut(T),
{
    if n == 0 {
        return;
    }
    let blocks: Vec<std::ops::Range<usize>> = (0..n.div_ceil(REDUCTION_BLOCK))
        .map(|b| (b * REDUCTION_BLOCK)..((b + 1) * REDUCTION_BLOCK).min(n))
        .collect();
    let threads = thread_cap();
    if threads <= 1 || blocks.len() == 1 {
        for r in blocks {
            fold(f(r));
        }
        return;
    }
    let mut partials: Vec<Option<T>> = Vec::with_capacity(blocks.len());
    partials.resize_with(blocks.len(), || None);
    std::thread::scope(|scope| {
        let mut rest = &mut partials[..];
        let per_thread = blocks.len().div_ceil(threads);
        let mut next_block = 0usize;
        while !rest.is_empty() {
            let take = per_thread.min(rest.len());
            let (head, tail) = rest.split_at_mut(take);
            rest = tail;
            let my_blocks = &blocks[next_block..next_block + take];
            let f = &f;
            scope.spawn(move || {
                for (slot, r) in head.iter_mut().zip(my_blocks.iter()) {
                    *slot = Some(f(r.clone()));
                }
            });
            next_block += take;
        }
    });
    for p in partials {
        fold(p.expect("block partial missing"));
    }
}
