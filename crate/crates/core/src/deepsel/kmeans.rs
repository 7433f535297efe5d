//! Seeded k-means (k-means++ init, Lloyd iterations to an assignment
//! fixpoint). "Ordinal" clustering is realized as plain k-means whose
//! clusters are ordered afterwards by measured ΔAUC.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_for;

const MAX_LLOYD_ITERS: usize = 100;

#[derive(Clone, Debug)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Sample index → cluster index.
    pub assignment: Vec<usize>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dist2(centroid, x);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

/// Within-cluster sum of squared distances.
pub fn sse(latents: &[Vec<f64>], centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    latents
        .iter()
        .zip(assignment)
        .map(|(x, &c)| dist2(x, &centroids[c]))
        .sum()
}

/// k-means++ seeded Lloyd clustering. Empty clusters are re-seeded from the
/// point farthest from its assigned centroid.
pub fn ordinal_cluster(latents: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterModel> {
    ordinal_cluster_with_trace(latents, k, seed).map(|(model, _)| model)
}

/// Like [`ordinal_cluster`], additionally returning the within-cluster SSE
/// after every Lloyd update step (non-increasing by construction).
pub fn ordinal_cluster_with_trace(
    latents: &[Vec<f64>],
    k: usize,
    seed: u64,
) -> Result<(ClusterModel, Vec<f64>)> {
    if k == 0 {
        return Err(Error::invalid("k", "must be positive"));
    }
    if latents.len() < k {
        return Err(Error::invalid(
            "latents",
            format!("need at least k = {k} samples, got {}", latents.len()),
        ));
    }
    let mut rng = rng_for(seed, "kmeans", 0);
    let n = latents.len();

    // k-means++ initialization.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(latents[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = latents.iter().map(|x| dist2(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All points coincide with chosen centroids; pick uniformly.
            rng.random_range(0..n)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        centroids.push(latents[next].clone());
        for (i, x) in latents.iter().enumerate() {
            let d = dist2(x, centroids.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }

    let dim = latents[0].len();
    let mut assignment: Vec<usize> = latents.iter().map(|x| nearest(&centroids, x).0).collect();
    let mut sse_trace = vec![sse(latents, &centroids, &assignment)];
    for _ in 0..MAX_LLOYD_ITERS {
        // Update step.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &c) in latents.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut reseeded = false;
        for c in 0..k {
            if counts[c] > 0 {
                for s in &mut sums[c] {
                    *s /= counts[c] as f64;
                }
                centroids[c] = sums[c].clone();
            } else {
                // Re-seed from the point farthest from its centroid (the one
                // step that may lift SSE before the next assignment).
                let far = latents
                    .iter()
                    .enumerate()
                    .map(|(i, x)| (i, dist2(x, &centroids[assignment[i]])))
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                centroids[c] = latents[far].clone();
                reseeded = true;
            }
        }
        // Assignment step.
        let new_assignment: Vec<usize> =
            latents.iter().map(|x| nearest(&centroids, x).0).collect();
        let converged = new_assignment == assignment;
        assignment = new_assignment;
        if !reseeded {
            sse_trace.push(sse(latents, &centroids, &assignment));
        }
        if converged {
            break;
        }
    }
    Ok((
        ClusterModel {
            k,
            centroids,
            assignment,
        },
        sse_trace,
    ))
}

/// Per cluster, the sample closest to its centroid in L2 (ties to the lowest
/// index). Clusters left empty after Lloyd still resolve to the globally
/// nearest sample so every cluster has exactly one representative.
pub fn representatives(model: &ClusterModel, latents: &[Vec<f64>]) -> Vec<usize> {
    (0..model.k)
        .map(|c| {
            let mut best: Option<(usize, f64)> = None;
            for (i, x) in latents.iter().enumerate() {
                if model.assignment[i] != c {
                    continue;
                }
                let d = dist2(x, &model.centroids[c]);
                let better = match best {
                    None => true,
                    Some((_, bd)) => d < bd,
                };
                if better {
                    best = Some((i, d));
                }
            }
            match best {
                Some((i, _)) => i,
                // Empty cluster: nearest sample overall.
                None => {
                    latents
                        .iter()
                        .enumerate()
                        .map(|(i, x)| (i, dist2(x, &model.centroids[c])))
                        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                        .map(|(i, _)| i)
                        .unwrap()
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(k: usize, per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = rng_for(seed, "blobs", 0);
        let normal = Normal::new(0.0, 0.15).unwrap();
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..8).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let mut xs = Vec::new();
        let mut truth = Vec::new();
        for (ci, c) in centers.iter().enumerate() {
            for _ in 0..per {
                xs.push(c.iter().map(|v| v + normal.sample(&mut rng)).collect());
                truth.push(ci);
            }
        }
        (xs, truth)
    }

    fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
        let ka = a.iter().max().unwrap() + 1;
        let kb = b.iter().max().unwrap() + 1;
        let mut table = vec![vec![0u64; kb]; ka];
        for (&x, &y) in a.iter().zip(b) {
            table[x][y] += 1;
        }
        let comb2 = |n: u64| (n * n.saturating_sub(1)) / 2;
        let sum_ij: u64 = table.iter().flatten().map(|&n| comb2(n)).sum();
        let sum_a: u64 = table.iter().map(|row| comb2(row.iter().sum())).sum();
        let sum_b: u64 = (0..kb)
            .map(|j| comb2(table.iter().map(|row| row[j]).sum()))
            .sum();
        let total = comb2(a.len() as u64) as f64;
        let expected = sum_a as f64 * sum_b as f64 / total;
        let max = (sum_a + sum_b) as f64 / 2.0;
        (sum_ij as f64 - expected) / (max - expected)
    }

    #[test]
    fn separated_blobs_ari_one() {
        let (xs, truth) = blobs(5, 20, 3);
        let model = ordinal_cluster(&xs, 5, 7).unwrap();
        let ari = adjusted_rand_index(&truth, &model.assignment);
        assert!((ari - 1.0).abs() < 1e-12, "ARI {ari}");
    }

    #[test]
    fn k_one_centroid_is_mean() {
        let (xs, _) = blobs(3, 10, 4);
        let model = ordinal_cluster(&xs, 1, 1).unwrap();
        assert!(model.assignment.iter().all(|&c| c == 0));
        let dim = xs[0].len();
        for d in 0..dim {
            let mean = xs.iter().map(|x| x[d]).sum::<f64>() / xs.len() as f64;
            assert!((model.centroids[0][d] - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let (xs, _) = blobs(4, 15, 5);
        let a = ordinal_cluster(&xs, 4, 9).unwrap();
        let b = ordinal_cluster(&xs, 4, 9).unwrap();
        assert_eq!(a.assignment, b.assignment);
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn fewer_samples_than_k_errors() {
        let (xs, _) = blobs(2, 2, 6);
        assert!(ordinal_cluster(&xs, 5, 1).is_err());
    }

    #[test]
    fn lloyd_sse_monotone() {
        // Re-run Lloyd manually and check SSE never increases step to step.
        let (xs, _) = blobs(6, 12, 8);
        let k = 6;
        let mut rng = rng_for(2, "kmeans", 0);
        let mut centroids: Vec<Vec<f64>> = (0..k)
            .map(|_| xs[rng.random_range(0..xs.len())].clone())
            .collect();
        let mut assignment: Vec<usize> = xs.iter().map(|x| nearest(&centroids, x).0).collect();
        let mut prev = sse(&xs, &centroids, &assignment);
        for _ in 0..20 {
            let dim = xs[0].len();
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (x, &c) in xs.iter().zip(&assignment) {
                counts[c] += 1;
                for (s, v) in sums[c].iter_mut().zip(x) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    for s in &mut sums[c] {
                        *s /= counts[c] as f64;
                    }
                    centroids[c] = sums[c].clone();
                }
            }
            let after_update = sse(&xs, &centroids, &assignment);
            assert!(after_update <= prev + 1e-9);
            assignment = xs.iter().map(|x| nearest(&centroids, x).0).collect();
            let after_assign = sse(&xs, &centroids, &assignment);
            assert!(after_assign <= after_update + 1e-9);
            prev = after_assign;
        }
    }

    #[test]
    fn representative_is_closest_tie_to_lowest_index() {
        // Singleton cluster: its only member. Symmetric pair: lowest index.
        let xs = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![-2.0, 0.0], vec![10.0, 0.0]];
        let model = ClusterModel {
            k: 2,
            centroids: vec![vec![0.0, 0.0], vec![10.0, 0.0]],
            assignment: vec![0, 0, 0, 1],
        };
        let reps = representatives(&model, &xs);
        assert_eq!(reps[0], 0);
        assert_eq!(reps[1], 3);
        // Equidistant pair around the centroid: indices 1 and 2 both at
        // distance 2 once index 0 is removed.
        let model2 = ClusterModel {
            k: 1,
            centroids: vec![vec![0.0, 0.0]],
            assignment: vec![0, 0],
        };
        let xs2 = vec![vec![2.0, 0.0], vec![-2.0, 0.0]];
        assert_eq!(representatives(&model2, &xs2)[0], 0);
    }

    #[test]
    fn representatives_match_exhaustive_scan() {
        let (xs, _) = blobs(4, 9, 10);
        let model = ordinal_cluster(&xs, 4, 3).unwrap();
        let reps = representatives(&model, &xs);
        for (c, &rep) in reps.iter().enumerate() {
            let best = xs
                .iter()
                .enumerate()
                .filter(|(i, _)| model.assignment[*i] == c)
                .map(|(i, x)| (i, dist2(x, &model.centroids[c])))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                .unwrap()
                .0;
            assert_eq!(rep, best);
        }
    }
}
