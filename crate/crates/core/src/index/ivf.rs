//! Inverted-file clustering for approximate search.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const KMEANS_ITERS: usize = 25;

/// k-means centroids and the record positions assigned to each.
#[derive(Debug, Clone, PartialEq)]
pub struct Clusters {
    dim: usize,
    centroids: Vec<f64>,
    lists: Vec<Vec<usize>>,
}

fn sq_dist(a: &[f32], c: &[f64]) -> f64 {
    a.iter()
        .zip(c)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

impl Clusters {
    /// Lloyd's algorithm with round(sqrt(n)) centroids seeded from distinct records.
    pub fn fit(vectors: &[f32], dim: usize, seed: u64) -> Self {
        let n = vectors.len() / dim;
        let k = ((n as f64).sqrt().round() as usize).clamp(1, n.max(1));
        let row = |i: usize| &vectors[i * dim..(i + 1) * dim];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = sample(&mut rng, n, k).into_vec();
        picks.sort_unstable();
        let mut centroids: Vec<f64> = picks.iter().flat_map(|&i| row(i).iter().map(|&v| v as f64)).collect();
        let mut assign = vec![0usize; n];
        for _ in 0..KMEANS_ITERS {
            for (i, a) in assign.iter_mut().enumerate() {
                *a = nearest(row(i), &centroids, dim);
            }
            let mut sums = vec![0.0f64; k * dim];
            let mut counts = vec![0usize; k];
            for (i, &a) in assign.iter().enumerate() {
                counts[a] += 1;
                for (s, &v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(row(i)) {
                    *s += v as f64;
                }
            }
            for c in 0..k {
                // an empty cluster keeps its previous centroid
                if counts[c] > 0 {
                    for d in 0..dim {
                        centroids[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                    }
                }
            }
        }
        let mut lists = vec![Vec::new(); k];
        for i in 0..n {
            lists[nearest(row(i), &centroids, dim)].push(i);
        }
        Self { dim, centroids, lists }
    }

    pub fn n_clusters(&self) -> usize {
        self.lists.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.lists.iter().map(Vec::len).collect()
    }

    /// Record positions in the `n_probe` clusters nearest to `q`.
    pub fn probe(&self, q: &[f32], n_probe: usize) -> Vec<usize> {
        let mut order: Vec<(f64, usize)> = self
            .centroids
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(c, centroid)| (sq_dist(q, centroid), c))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order
            .iter()
            .take(n_probe)
            .flat_map(|&(_, c)| self.lists[c].iter().copied())
            .collect()
    }
}

fn nearest(v: &[f32], centroids: &[f64], dim: usize) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(v, centroid);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}
