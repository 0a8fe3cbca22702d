//! Lloyd's k-means with k-means++ seeding and restarts. Used to bootstrap
//! pseudo-labels from the frozen original-view embeddings.

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AeclError, Result};

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cluster labels from the best of [`DEFAULT_RESTARTS`] runs.
pub fn kmeans(points: &Array2<f64>, m: usize, seed: u64) -> Result<Vec<usize>> {
    Ok(kmeans_fit(points, m, seed, DEFAULT_RESTARTS, DEFAULT_MAX_ITER, DEFAULT_TOLERANCE)?.labels)
}

/// Runs `restarts` seeded k-means++ initialisations and keeps the lowest
/// within-cluster sum of squares (earliest restart wins ties).
pub fn kmeans_fit(
    points: &Array2<f64>,
    m: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
    tolerance: f64,
) -> Result<KMeansFit> {
    let n = points.nrows();
    if m < 1 {
        return Err(AeclError::Config("k-means needs at least one cluster".into()));
    }
    if n < m {
        return Err(AeclError::FewerPointsThanClusters {
            points: n,
            clusters: m,
        });
    }
    let mut best: Option<KMeansFit> = None;
    for restart in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let fit = lloyd(points, plus_plus(points, m, &mut rng), max_iter, tolerance);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus(points: &Array2<f64>, m: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((m, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points
        .axis_iter(Axis(0))
        .map(|p| sq_dist(p, centroids.row(0)))
        .collect();
    for c in 1..m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // Rounding can run past the end; fall back to the last
            // point with positive weight.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.axis_iter(Axis(0)).enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.row(c)));
        }
    }
    centroids
}

fn assign(points: &Array2<f64>, centroids: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    points
        .axis_iter(Axis(0))
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (c, centre) in centroids.axis_iter(Axis(0)).enumerate() {
                let d = sq_dist(p, centre);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

fn lloyd(
    points: &Array2<f64>,
    mut centroids: Array2<f64>,
    max_iter: usize,
    tolerance: f64,
) -> KMeansFit {
    let (m, dim) = centroids.dim();
    let (mut labels, mut dists) = assign(points, &centroids);
    for _ in 0..max_iter {
        let mut sums = Array2::<f64>::zeros((m, dim));
        let mut counts = vec![0usize; m];
        for (p, &l) in points.axis_iter(Axis(0)).zip(&labels) {
            sums.row_mut(l).scaled_add(1.0, &p);
            counts[l] += 1;
        }
        // Empty clusters take the point farthest from its centroid.
        for c in 0..m {
            if counts[c] == 0 {
                let far = dists
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &d)| if d > dists[best] { i } else { best });
                let old = labels[far];
                sums.row_mut(old).scaled_add(-1.0, &points.row(far));
                counts[old] -= 1;
                sums.row_mut(c).assign(&points.row(far));
                counts[c] = 1;
                labels[far] = c;
                dists[far] = 0.0;
            }
        }
        let mut shift: f64 = 0.0;
        for (c, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let new = sums.row(c).mapv(|x| x / count as f64);
            shift = shift.max(sq_dist(new.view(), centroids.row(c)).sqrt());
            centroids.row_mut(c).assign(&new);
        }
        let (l, d) = assign(points, &centroids);
        labels = l;
        dists = d;
        if shift < tolerance {
            break;
        }
    }
    let inertia = dists.iter().sum();
    KMeansFit {
        labels,
        centroids,
        inertia,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separated_pairs_are_recovered() {
        let pts = array![[0.0, 0.0], [0.001, 0.0], [100.0, 0.0], [100.0, 0.001]];
        let labels = kmeans(&pts, 2, 3).unwrap();
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[2], labels[3]);
        assert_ne!(labels[0], labels[2]);
    }

    #[test]
    fn one_cluster_per_point() {
        let pts = array![[0.0, 1.0], [2.0, 0.0], [5.0, 5.0], [-1.0, 3.0]];
        let fit = kmeans_fit(&pts, 4, 1, 10, 100, 1e-6).unwrap();
        let mut labels = fit.labels.clone();
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 1, 2, 3]);
        assert_eq!(fit.inertia, 0.0);
    }

    #[test]
    fn deterministic_and_in_range() {
        let ds = crate::embeddings_io::generate_synthetic(3, 30, 5, 4.0, 1.0, 9).unwrap();
        let a = kmeans(&ds.view0, 3, 17).unwrap();
        assert_eq!(a, kmeans(&ds.view0, 3, 17).unwrap());
        assert!(a.iter().all(|&l| l < 3));
    }

    #[test]
    fn too_few_points() {
        let pts = array![[0.0], [1.0]];
        let err = kmeans(&pts, 3, 0).unwrap_err();
        assert!(err.to_string().contains("fewer points than clusters"));
    }

    #[test]
    fn duplicate_points_do_not_break_seeding() {
        let pts = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [2.0, 2.0]];
        let fit = kmeans_fit(&pts, 3, 0, 3, 100, 1e-6).unwrap();
        assert!(fit.labels.iter().all(|&l| l < 3));
        assert_eq!(fit.inertia, 0.0);
    }
}
