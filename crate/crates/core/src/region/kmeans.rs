//! Lloyd's k-means on pixel coordinates with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOutcome {
    /// Cluster index for every input point.
    pub assignment: Vec<usize>,
    pub centroids: Vec<[f64; 2]>,
    /// Effective cluster count; lower than requested when there are fewer points.
    pub k: usize,
    pub reduced: bool,
    pub iterations: usize,
    /// Objective after each completed iteration (sum of squared distances).
    pub objective_trace: Vec<f64>,
}

impl KMeansOutcome {
    pub fn clusters<T: Copy>(&self, points: &[T]) -> Vec<Vec<T>> {
        let mut out = vec![Vec::new(); self.k];
        for (p, &c) in points.iter().zip(&self.assignment) {
            out[c].push(*p);
        }
        out
    }

    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }
}

fn dist2(p: [f64; 2], c: [f64; 2]) -> f64 {
    let dx = p[0] - c[0];
    let dy = p[1] - c[1];
    dx * dx + dy * dy
}

pub fn objective(points: &[[f64; 2]], assignment: &[usize], centroids: &[[f64; 2]]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(&p, &c)| dist2(p, centroids[c]))
        .sum()
}

fn seed_plus_plus(points: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|&p| dist2(p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next];
        centroids.push(c);
        for (d, &p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, c));
        }
    }
    centroids
}

fn nearest(p: [f64; 2], centroids: &[[f64; 2]], current: usize) -> usize {
    // Stay put on ties so assignments cannot oscillate.
    let mut best = current;
    let mut best_d = dist2(p, centroids[current]);
    for (j, &c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn update_centroids(points: &[[f64; 2]], assignment: &[usize], centroids: &mut [[f64; 2]]) -> Vec<usize> {
    let k = centroids.len();
    let mut sums = vec![[0.0f64; 2]; k];
    let mut counts = vec![0usize; k];
    for (&p, &c) in points.iter().zip(assignment) {
        sums[c][0] += p[0];
        sums[c][1] += p[1];
        counts[c] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            let n = counts[j] as f64;
            centroids[j] = [sums[j][0] / n, sums[j][1] / n];
        }
    }
    counts
}

/// Gives each empty cluster the point farthest from its current centroid.
fn repair_empty(points: &[[f64; 2]], assignment: &mut [usize], centroids: &mut [[f64; 2]]) {
    loop {
        let counts = update_centroids(points, assignment, centroids);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let donor = (0..points.len())
            .filter(|&i| counts[assignment[i]] > 1)
            .max_by(|&a, &b| {
                let da = dist2(points[a], centroids[assignment[a]]);
                let db = dist2(points[b], centroids[assignment[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("at least k points");
        assignment[donor] = empty;
        centroids[empty] = points[donor];
    }
}

/// Partitions `points` into `k` non-empty clusters. When there are fewer
/// points than `k`, `k` is reduced to the number of points and
/// [`KMeansOutcome::reduced`] is set.
pub fn kmeans(points: &[[f64; 2]], k: usize, seed: u64) -> KMeansOutcome {
    assert!(k >= 1, "k must be at least 1");
    assert!(!points.is_empty(), "k-means needs at least one point");
    let reduced = points.len() < k;
    let k = k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(points, k, &mut rng);

    let mut assignment: Vec<usize> = points.iter().map(|&p| nearest(p, &centroids, 0)).collect();
    repair_empty(points, &mut assignment, &mut centroids);
    let mut trace = vec![objective(points, &assignment, &centroids)];

    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        for (i, &p) in points.iter().enumerate() {
            let j = nearest(p, &centroids, assignment[i]);
            if j != assignment[i] {
                assignment[i] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        repair_empty(points, &mut assignment, &mut centroids);
        trace.push(objective(points, &assignment, &centroids));
    }

    KMeansOutcome {
        assignment,
        centroids,
        k,
        reduced,
        iterations,
        objective_trace: trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_single_cluster() {
        let pts = vec![[3.0, 4.0]; 10];
        let out = kmeans(&pts, 1, 1);
        assert_eq!(out.k, 1);
        assert!(out.assignment.iter().all(|&c| c == 0));
        assert_eq!(out.objective(), 0.0);
    }

    #[test]
    fn identical_points_more_clusters_stay_non_empty() {
        let pts = vec![[1.0, 1.0]; 5];
        let out = kmeans(&pts, 3, 9);
        let sizes = out.clusters(&pts).iter().map(Vec::len).collect::<Vec<_>>();
        assert!(sizes.iter().all(|&s| s > 0), "{sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), 5);
    }

    #[test]
    fn separates_two_blobs() {
        let mut pts = Vec::new();
        for dx in 0..3 {
            for dy in 0..3 {
                pts.push([dx as f64, dy as f64]);
                pts.push([100.0 + dx as f64, 100.0 + dy as f64]);
            }
        }
        for seed in 0..10 {
            let out = kmeans(&pts, 2, seed);
            for (p, &c) in pts.iter().zip(&out.assignment) {
                let other = pts
                    .iter()
                    .zip(&out.assignment)
                    .find(|(q, _)| (q[0] < 50.0) == (p[0] < 50.0));
                assert_eq!(other.unwrap().1, &c);
            }
            assert_ne!(out.assignment[0], out.assignment[1]);
        }
    }

    #[test]
    fn fewer_points_than_k_is_reduced() {
        let pts = [[0.0, 0.0], [5.0, 5.0]];
        let out = kmeans(&pts, 4, 3);
        assert!(out.reduced);
        assert_eq!(out.k, 2);
        assert_ne!(out.assignment[0], out.assignment[1]);
    }

    #[test]
    fn beats_random_assignments() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pts: Vec<[f64; 2]> = (0..200)
            .map(|_| [rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)])
            .collect();
        let out = kmeans(&pts, 3, 5);
        // Oracle: objective of a random assignment with its own optimal centroids.
        for _ in 0..1000 {
            let asg: Vec<usize> = (0..pts.len()).map(|_| rng.random_range(0..3)).collect();
            let mut cents = [[0.0; 2]; 3];
            let mut n = [0.0; 3];
            for (p, &c) in pts.iter().zip(&asg) {
                cents[c][0] += p[0];
                cents[c][1] += p[1];
                n[c] += 1.0;
            }
            for c in 0..3 {
                cents[c] = [cents[c][0] / n[c], cents[c][1] / n[c]];
            }
            let random_obj: f64 = pts.iter().zip(&asg).map(|(p, &c)| dist2(*p, cents[c])).sum();
            assert!(out.objective() <= random_obj);
        }
    }

    #[test]
    fn objective_never_increases_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<[f64; 2]> = (0..300)
            .map(|_| [rng.random_range(0.0..50.0), rng.random_range(0.0..80.0)])
            .collect();
        for k in 1..=6 {
            let a = kmeans(&pts, k, 11);
            for w in a.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", a.objective_trace);
            }
            assert_eq!(a, kmeans(&pts, k, 11));
        }
    }
}
