//! Contiguous sharding over scoped threads with in-order results.

use crate::error::Result;

/// Split `0..n` into at most `threads` contiguous ranges whose boundaries are
/// multiples of `align`, run `f` on each (concurrently when more than one)
/// and return the results in range order.
///
/// Aligning shard boundaries to the caller's batch size keeps batch
/// composition, and therefore floating point results, independent of the
/// thread count.
pub fn map_ranges<R, F>(n: usize, align: usize, threads: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(std::ops::Range<usize>) -> Result<R> + Sync,
{
    let align = align.max(1);
    let blocks = n.div_ceil(align);
    let threads = threads.max(1).min(blocks.max(1));
    let per = blocks.div_ceil(threads).max(1) * align;
    let ranges: Vec<_> = (0..threads)
        .map(|t| (t * per).min(n)..((t + 1) * per).min(n))
        .filter(|r| !r.is_empty())
        .collect();
    if ranges.len() <= 1 {
        return Ok(vec![f(0..n)?]);
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = ranges.into_iter().map(|r| s.spawn(|| f(r))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}
