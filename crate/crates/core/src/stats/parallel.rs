use rayon::prelude::*;

use super::rng::{RngStream, StreamRng};

/// Runs `f(index, rng)` for every work item in `0..items` on the current rayon
/// pool. Item `i` always receives `stream.child(i)`, and results come back in
/// item order, so the output does not depend on the number of threads.
pub fn par_items<T, F>(stream: RngStream, items: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut StreamRng) -> T + Sync,
{
    (0..items)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.child(i).rng();
            f(i, &mut rng)
        })
        .collect()
}

/// Splits `total` trials into chunks of at most `chunk` and runs
/// `f(chunk_len, rng)` on each, in chunk order.
pub fn par_chunks<T, F>(stream: RngStream, total: u64, chunk: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut StreamRng) -> T + Sync,
{
    let chunk = chunk.max(1);
    let items = total.div_ceil(chunk);
    par_items(stream, items, |i, rng| {
        let len = chunk.min(total - i * chunk);
        f(len, rng)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn independent_of_pool_size() {
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                par_chunks(RngStream::new(3, 1), 10_007, 100, |len, rng| {
                    (0..len).map(|_| rng.random::<u32>() as u64).sum::<u64>()
                })
            })
        };
        let one = run(1);
        assert_eq!(one.len(), 101);
        assert_eq!(one, run(3));
    }
}
