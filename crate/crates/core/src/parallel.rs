//! Deterministic fan-out for batch stages. Items are split into contiguous
//! chunks, one per worker, and the per-chunk outputs are concatenated in
//! input order, so results are identical for any worker count.

/// Maps `f` over `items` using up to `jobs` scoped threads. Output order
/// matches input order.
pub fn map_ordered<T, R, F>(jobs: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let chunk_len = items.len().div_ceil(jobs);
    let mut results: Vec<Vec<R>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk_len)
            .map(|chunk| scope.spawn(|| chunk.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        results = handles.into_iter().map(|h| h.join().unwrap()).collect();
    });
    results.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_stable_across_job_counts() {
        let items: Vec<u64> = (0..103).collect();
        let expected: Vec<u64> = items.iter().map(|x| x * x).collect();
        for jobs in [1, 2, 3, 8, 200] {
            assert_eq!(map_ordered(jobs, &items, |x| x * x), expected);
        }
    }

    #[test]
    fn empty_input() {
        let out: Vec<u32> = map_ordered(4, &[] as &[u32], |x| *x);
        assert!(out.is_empty());
    }
}
