//! Fixtures shared by the criterion benches.

use ndarray::Array2;
use spc_core::data::make_blobs;
use spc_core::{BlobSpec, Dataset, Labelling};

/// Deterministic dense cost matrix with many distinct values.
pub fn cost_matrix(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| ((i * 7919 + j * 104_729) % 1009) as f64 / 1009.0).collect())
        .collect()
}

pub fn blobs(n_clusters: usize, per_cluster: usize, dim: usize) -> Dataset {
    make_blobs(&BlobSpec {
        n_clusters,
        points_per_cluster: per_cluster,
        ambient_dim: dim,
        centroid_separation: 6.0,
        within_cluster_stddev: 1.0,
        seed: 7,
    })
    .expect("valid blob spec")
}

pub fn points(data: &Dataset) -> Array2<f64> {
    data.points().clone()
}

/// `members` noisy copies of the ground truth, each relabelled by a rotation
/// and with every `flip_every`-th point moved to the next cluster.
pub fn noisy_labellings(truth: &[usize], n_clusters: usize, members: usize, flip_every: usize) -> Vec<Labelling> {
    (0..members)
        .map(|m| {
            let labels = truth
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let t = if (i + m) % flip_every == 0 { (t + 1) % n_clusters } else { t };
                    (t + m) % n_clusters
                })
                .collect();
            Labelling::new(labels, n_clusters).expect("labels in range")
        })
        .collect()
}
