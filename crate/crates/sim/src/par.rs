use rayon::prelude::*;

const CHUNK: usize = 1024;

/// Sums `f(i)` for `i in 0..n` into a fixed-width accumulator. Chunk
/// boundaries are fixed and chunk totals are added in index order, so the
/// floating-point result does not depend on the thread count.
pub(crate) fn ordered_sum<const K: usize>(n: usize, f: impl Fn(usize) -> [f64; K] + Sync) -> [f64; K] {
    let chunks: Vec<[f64; K]> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = [0.0; K];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let v = f(i);
                for k in 0..K {
                    acc[k] += v[k];
                }
            }
            acc
        })
        .collect();
    chunks.iter().fold([0.0; K], |mut acc, v| {
        for k in 0..K {
            acc[k] += v[k];
        }
        acc
    })
}
