use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{sq_dist, Labelling};
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Array2<f64>,
    pub labelling: Labelling,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` is reached. A cluster that empties is reseeded at
/// the point farthest from its current centroid.
pub fn kmeans_fit(latents: ArrayView2<f64>, n_clusters: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    let (n, dim) = latents.dim();
    if n_clusters == 0 || n < n_clusters {
        return Err(Error::invalid("k-means", format!("{n} points cannot fill {n_clusters} clusters")));
    }
    if latents.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input"));
    }
    let contiguous = latents.as_standard_layout();
    let rows: Vec<&[f64]> = contiguous
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("standard layout"))
        .collect();

    let mut centroids = plus_plus_init(&rows, n_clusters, dim, seed);
    let mut assignment = vec![usize::MAX; n];
    let mut distances = vec![0.0; n];
    let mut inertia_trace = Vec::new();
    let mut iterations = 0;

    loop {
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, row) in rows.iter().enumerate() {
            let (best, dist) = nearest(row, &centroids);
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
            distances[i] = dist;
            inertia += dist;
        }
        inertia_trace.push(inertia);
        if !changed || iterations >= max_iters {
            break;
        }
        iterations += 1;
        update_centroids(&rows, &mut assignment, &mut distances, &mut centroids);
    }

    let inertia = *inertia_trace.last().expect("at least one assignment");
    Ok(KMeansResult {
        centroids,
        labelling: Labelling::new(assignment, n_clusters)?,
        inertia,
        inertia_trace,
        iterations,
    })
}

fn nearest(row: &[f64], centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(row, c.as_slice().expect("owned centroids"));
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_init(rows: &[&[f64]], k: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from(seed, &[0x4B4D]);
    let n = rows.len();
    let mut centroids = Array2::zeros((k, dim));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&ndarray::ArrayView1::from(rows[first]));
    let mut closest: Vec<f64> = rows.iter().map(|r| sq_dist(r, rows[first])).collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in closest.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&ndarray::ArrayView1::from(rows[pick]));
        for (d, r) in closest.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, rows[pick]));
        }
    }
    centroids
}

fn update_centroids(rows: &[&[f64]], assignment: &mut [usize], distances: &mut [f64], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    let mut counts = vec![0usize; k];
    for &a in assignment.iter() {
        counts[a] += 1;
    }

    for empty in (0..k).filter(|&c| counts[c] == 0).collect::<Vec<_>>() {
        // Farthest point from its centroid among clusters that can spare one.
        let donor = (0..rows.len())
            .filter(|&i| counts[assignment[i]] > 1)
            .max_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(b.cmp(&a)));
        if let Some(i) = donor {
            counts[assignment[i]] -= 1;
            counts[empty] += 1;
            assignment[i] = empty;
            distances[i] = 0.0;
        }
    }

    centroids.fill(0.0);
    for (row, &a) in rows.iter().zip(assignment.iter()) {
        let mut c = centroids.row_mut(a);
        for (cv, &v) in c.iter_mut().zip(row.iter()) {
            *cv += v;
        }
    }
    for (mut c, &count) in centroids.rows_mut().into_iter().zip(&counts) {
        if count > 0 {
            c /= count as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::accuracy;
    use crate::data::{make_blobs, BlobSpec};

    #[test]
    fn as_many_points_as_clusters() {
        let x = ndarray::array![[0.0, 0.0], [5.0, 1.0], [-3.0, 2.0]];
        let r = kmeans_fit(x.view(), 3, 1, 50).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut l = r.labelling.labels().to_vec();
        l.sort();
        assert_eq!(l, vec![0, 1, 2]);
    }

    #[test]
    fn too_few_points() {
        let x = ndarray::array![[0.0], [1.0]];
        assert!(kmeans_fit(x.view(), 3, 1, 10).is_err());
    }

    #[test]
    fn recovers_separated_blobs_with_monotone_inertia() {
        let d = make_blobs(&BlobSpec {
            n_clusters: 2,
            points_per_cluster: 60,
            ambient_dim: 3,
            centroid_separation: 10.0,
            within_cluster_stddev: 0.1,
            seed: 4,
        })
        .unwrap();
        let r = kmeans_fit(d.points().view(), 2, 9, 100).unwrap();
        let truth = Labelling::new(d.labels().unwrap().to_vec(), 2).unwrap();
        assert_eq!(accuracy(&r.labelling, &truth).unwrap(), 1.0);
        for w in r.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn beats_random_assignments() {
        let d = make_blobs(&BlobSpec {
            n_clusters: 4,
            points_per_cluster: 25,
            ambient_dim: 5,
            centroid_separation: 3.0,
            within_cluster_stddev: 1.0,
            seed: 2,
        })
        .unwrap();
        let x = d.points();
        let r = kmeans_fit(x.view(), 4, 3, 100).unwrap();
        // Oracle: inertia of a random assignment around its own cluster means.
        let mut rng = rng_from(5, &[]);
        for _ in 0..50 {
            let assign: Vec<usize> = (0..x.nrows()).map(|_| rng.random_range(0..4)).collect();
            let mut inertia = 0.0;
            for k in 0..4 {
                let members: Vec<usize> = (0..x.nrows()).filter(|&i| assign[i] == k).collect();
                if members.is_empty() {
                    continue;
                }
                let mean: Vec<f64> = (0..x.ncols())
                    .map(|j| members.iter().map(|&i| x[[i, j]]).sum::<f64>() / members.len() as f64)
                    .collect();
                for &i in &members {
                    inertia += (0..x.ncols()).map(|j| (x[[i, j]] - mean[j]).powi(2)).sum::<f64>();
                }
            }
            assert!(r.inertia <= inertia);
        }
    }

    #[test]
    fn empty_cluster_is_reseeded_at_farthest_point() {
        let data = [[0.0], [1.0], [2.0], [9.0]];
        let rows: Vec<&[f64]> = data.iter().map(|r| &r[..]).collect();
        let mut centroids = ndarray::array![[1.0], [50.0]];
        let mut assignment = vec![0; 4];
        let mut distances: Vec<f64> = data.iter().map(|r| (r[0] - 1.0) * (r[0] - 1.0)).collect();
        update_centroids(&rows, &mut assignment, &mut distances, &mut centroids);
        assert_eq!(assignment, vec![0, 0, 0, 1]);
        assert_eq!(centroids, ndarray::array![[1.0], [9.0]]);
    }

    #[test]
    fn deterministic_in_seed() {
        let d = make_blobs(&BlobSpec {
            n_clusters: 3,
            points_per_cluster: 20,
            ambient_dim: 4,
            centroid_separation: 2.0,
            within_cluster_stddev: 1.0,
            seed: 1,
        })
        .unwrap();
        let a = kmeans_fit(d.points().view(), 3, 5, 100).unwrap();
        let b = kmeans_fit(d.points().view(), 3, 5, 100).unwrap();
        assert_eq!(a, b);
    }
}
