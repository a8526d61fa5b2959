use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linear::{chunked, Estimate, LinearModel, MIN_SAMPLES};
use crate::data::{column_means, make_blobs, BlobSpec};
use crate::error::{Error, Result};

/// Labelled points with column means removed and equally sized clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryDataset {
    points: Array2<f64>,
    labels: Vec<usize>,
    n_clusters: usize,
}

impl TheoryDataset {
    /// Validates the labels and recentres `points` so every column has mean 0.
    pub fn new(points: Array2<f64>, labels: Vec<usize>, n_clusters: usize) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::invalid("theory dataset", "no points"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("theory dataset"));
        }
        if labels.len() != points.nrows() {
            return Err(Error::shape("theory labels", &[points.nrows()], &[labels.len()]));
        }
        if n_clusters < 2 {
            return Err(Error::invalid("theory dataset", "need at least 2 clusters"));
        }
        let mut sizes = vec![0usize; n_clusters];
        for &l in &labels {
            if l >= n_clusters {
                return Err(Error::invalid("theory dataset", format!("label {l} >= C = {n_clusters}")));
            }
            sizes[l] += 1;
        }
        if sizes.iter().any(|&s| s != sizes[0]) {
            return Err(Error::invalid("theory dataset", format!("clusters must be equally sized, got {sizes:?}")));
        }
        let mean = column_means(&points);
        let points = points - &mean;
        Ok(TheoryDataset { points, labels, n_clusters })
    }

    pub fn from_blobs(spec: &BlobSpec) -> Result<Self> {
        let data = make_blobs(spec)?;
        let labels = data.labels().expect("blobs are labelled").to_vec();
        Self::new(data.points().clone(), labels, data.n_clusters())
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    fn cluster_means(&self, points: &Array2<f64>) -> Array2<f64> {
        let per = (self.len() / self.n_clusters) as f64;
        let mut means = Array2::zeros((self.n_clusters, points.ncols()));
        for (row, &l) in points.rows().into_iter().zip(&self.labels) {
            let mut m = means.row_mut(l);
            m += &row;
        }
        means / per
    }

    /// `S_b - S_w`: between-cluster minus mean within-cluster covariance,
    /// both population-normalized. `w^T M w` is the separation `d` of the
    /// scalar encoder `w`.
    pub fn separation_matrix(&self) -> Array2<f64> {
        let means = self.cluster_means(&self.points);
        let c = self.n_clusters as f64;
        let between = means.t().dot(&means) / c;
        let mut centred = self.points.clone();
        for (mut row, &l) in centred.rows_mut().into_iter().zip(&self.labels) {
            row -= &means.row(l);
        }
        let within = centred.t().dot(&centred) / self.len() as f64;
        between - within
    }
}

/// Rows are output coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEncoder {
    pub weights: Array2<f64>,
}

impl LinearEncoder {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear encoder"));
        }
        Ok(LinearEncoder { weights })
    }

    pub fn from_row(w: ArrayView1<f64>) -> Self {
        LinearEncoder {
            weights: w.to_owned().insert_axis(Axis(0)),
        }
    }

    fn encode(&self, data: &TheoryDataset) -> Result<Array2<f64>> {
        if self.weights.ncols() != data.dim() {
            return Err(Error::shape("linear encoder input", &[data.dim()], &[self.weights.ncols()]));
        }
        Ok(data.points.dot(&self.weights.t()))
    }
}

/// Both sides of the separation identity on one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Check {
    /// Between-cluster minus expected within-cluster variance of the codes,
    /// summed over coordinates.
    pub d: f64,
    /// `lambda1 * r - lambda2 * s`.
    pub rhs: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Mean squared code distance over ordered different-cluster pairs.
    pub r: f64,
    /// Mean squared code distance over ordered same-cluster pairs, `(i, i)` included.
    pub s: f64,
}

impl Lemma3Check {
    pub fn residual(&self) -> f64 {
        (self.d - self.rhs).abs()
    }
}

pub fn lambdas(c: usize) -> (f64, f64) {
    let c = c as f64;
    ((c - 1.0) / (2.0 * c), (2.0 * c - 1.0) / (2.0 * c))
}

/// `d` from the variance decomposition of the codes; `r` and `s` from every
/// ordered pair of points.
pub fn lemma3_check(data: &TheoryDataset, encoder: &LinearEncoder) -> Result<Lemma3Check> {
    let codes = encoder.encode(data)?;
    let means = data.cluster_means(&codes);
    let c = data.n_clusters as f64;
    let overall = column_means(&codes);
    let between: f64 = means
        .rows()
        .into_iter()
        .map(|m| (&m - &overall).mapv(|v| v * v).sum())
        .sum::<f64>()
        / c;
    let within: f64 = codes
        .rows()
        .into_iter()
        .zip(&data.labels)
        .map(|(row, &l)| (&row - &means.row(l)).mapv(|v| v * v).sum())
        .sum::<f64>()
        / data.len() as f64;

    let (mut same, mut diff) = ((0.0, 0usize), (0.0, 0usize));
    for (i, a) in codes.rows().into_iter().enumerate() {
        for (j, b) in codes.rows().into_iter().enumerate() {
            let dist: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            let slot = if data.labels[i] == data.labels[j] { &mut same } else { &mut diff };
            slot.0 += dist;
            slot.1 += 1;
        }
    }
    let (r, s) = (diff.0 / diff.1 as f64, same.0 / same.1 as f64);
    let (lambda1, lambda2) = lambdas(data.n_clusters);
    Ok(Lemma3Check {
        d: between - within,
        rhs: lambda1 * r - lambda2 * s,
        lambda1,
        lambda2,
        r,
        s,
    })
}

/// Separation after one training step on a correctly labelled pair versus an
/// incorrectly labelled one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub d_true: Estimate,
    pub d_false: Estimate,
    /// Paired estimate of `d_T - d_F`.
    pub difference: Estimate,
    /// Fraction of trials whose pair came from one cluster.
    pub same_cluster_fraction: f64,
}

impl TheoremReport {
    pub fn sign_holds(&self) -> bool {
        self.difference.mean > 3.0 * self.difference.stderr
    }
}

fn quad(m: &Array2<f64>, w: &Array1<f64>) -> f64 {
    w.dot(&m.dot(w))
}

/// `(d_T, d_F)` for the ordered pair `(i, j)`.
fn pair_outcome(data: &TheoryDataset, sep: &Array2<f64>, model: &LinearModel, i: usize, j: usize) -> (f64, f64) {
    let (x, x2) = (data.points.row(i), data.points.row(j));
    let same = model.gd_update_same(x, x2).expect("dimensions checked").w;
    let diff = model.gd_update_diff(x, x2).expect("dimensions checked").w;
    let (t, f) = if data.labels[i] == data.labels[j] { (same, diff) } else { (diff, same) };
    (quad(sep, &t), quad(sep, &f))
}

/// Draw `n_trials` ordered pairs with replacement; update once with the
/// true pair relation and once with the opposite one.
pub fn theorem_experiment(data: &TheoryDataset, model: &LinearModel, n_trials: usize, seed: u64) -> Result<TheoremReport> {
    if data.n_clusters != 2 {
        return Err(Error::invalid("theorem experiment", format!("requires C = 2, got {}", data.n_clusters)));
    }
    if model.dim() != data.dim() {
        return Err(Error::shape("theorem model", &[data.dim()], &[model.dim()]));
    }
    if n_trials < MIN_SAMPLES {
        return Err(Error::invalid("theorem experiment", format!("need at least {MIN_SAMPLES} trials, got {n_trials}")));
    }
    let sep = data.separation_matrix();
    let n = data.len();
    let [t, f, d, same] = chunked(n_trials, seed, |rng| {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        let (dt, df) = pair_outcome(data, &sep, model, i, j);
        [dt, df, dt - df, (data.labels[i] == data.labels[j]) as u8 as f64]
    });
    Ok(TheoremReport {
        d_true: t.estimate(),
        d_false: f.estimate(),
        difference: d.estimate(),
        same_cluster_fraction: same.estimate().mean,
    })
}
