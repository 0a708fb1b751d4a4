use rayon::prelude::*;

/// Maps `f` over `items` on at most `width` threads, preserving input order.
/// A width of one runs inline on the calling thread.
pub fn parallel_map<T, R, F>(width: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if width <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(width).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(e) => {
            tracing::warn!(error = %e, "thread pool unavailable, running sequentially");
            items.iter().map(f).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u32> = (0..100).collect();
        assert_eq!(parallel_map(8, &xs, |x| x * 2), parallel_map(1, &xs, |x| x * 2));
    }
}
