//! Datasets: IDX image files, synthetic Gaussian blobs, and range normalization.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const MAX_CENTROID_ATTEMPTS: usize = 10_000;

/// `N` points of dimension `n` with an optional ground truth over `C` clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Array2<f64>,
    labels: Option<Vec<usize>>,
    n_clusters: usize,
}

impl Dataset {
    pub fn new(points: Array2<f64>, labels: Option<Vec<usize>>, n_clusters: usize) -> Result<Self> {
        let (n_points, dim) = points.dim();
        if dim == 0 {
            return Err(Error::invalid("dataset", "points have dimension 0"));
        }
        if n_clusters < 2 {
            return Err(Error::invalid("dataset", format!("need at least 2 clusters, got {n_clusters}")));
        }
        if n_points < n_clusters {
            return Err(Error::invalid(
                "dataset",
                format!("{n_points} points cannot fill {n_clusters} clusters"),
            ));
        }
        if let Some(labels) = &labels {
            if labels.len() != n_points {
                return Err(Error::shape("dataset labels", &[n_points], &[labels.len()]));
            }
            let mut seen = vec![false; n_clusters];
            for &l in labels {
                if l >= n_clusters {
                    return Err(Error::invalid("dataset", format!("label {l} out of range 0..{n_clusters}")));
                }
                seen[l] = true;
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(Error::invalid("dataset", format!("cluster {missing} has no points")));
            }
        }
        Ok(Dataset {
            points,
            labels,
            n_clusters,
        })
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Smallest and largest entry.
    pub fn value_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// First `n` points. Fails if the prefix no longer covers every cluster.
    pub fn take(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        let points = self.points.slice(ndarray::s![..n, ..]).to_owned();
        let labels = self.labels.as_ref().map(|l| l[..n].to_vec());
        Dataset::new(points, labels, self.n_clusters)
    }

    /// Affine map of the global min/max onto [-1, 1]. Constant data maps to zeros.
    pub fn normalize(&self) -> Result<Dataset> {
        if self.points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset points"));
        }
        let (lo, hi) = self.value_range();
        let points = if hi > lo {
            // (2v - (hi + lo)) / (hi - lo) is exactly the identity when lo = -1, hi = 1.
            let (mid2, width) = (hi + lo, hi - lo);
            self.points.mapv(|v| match v {
                v if v == lo => -1.0,
                v if v == hi => 1.0,
                v => ((2.0 * v - mid2) / width).clamp(-1.0, 1.0),
            })
        } else {
            Array2::zeros(self.points.raw_dim())
        };
        Ok(Dataset {
            points,
            labels: self.labels.clone(),
            n_clusters: self.n_clusters,
        })
    }
}

/// Parameters for [`make_blobs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub n_clusters: usize,
    pub points_per_cluster: usize,
    pub ambient_dim: usize,
    pub centroid_separation: f64,
    pub within_cluster_stddev: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters < 2 || self.points_per_cluster == 0 || self.ambient_dim == 0 {
            return Err(Error::invalid(
                "blob spec",
                "n_clusters must be >= 2 and point counts and dimension positive",
            ));
        }
        if !(self.centroid_separation > 0.0 && self.within_cluster_stddev > 0.0) {
            return Err(Error::invalid("blob spec", "separation and stddev must be strictly positive"));
        }
        Ok(())
    }
}

/// Isotropic Gaussian clusters around centroids that are pairwise at least
/// `centroid_separation` apart.
///
/// Centroid candidates are drawn from `N(0, (sep / sqrt(dim))^2 I)`, so their
/// typical pairwise distance is about `sqrt(2) * sep`, and rejected while too
/// close to an accepted centroid. Points are emitted cluster by cluster.
pub fn make_blobs(spec: &BlobSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng_from(spec.seed, &[0xB10B]);
    let dim = spec.ambient_dim;
    let spread = spec.centroid_separation / (dim as f64).sqrt();
    let min_sq = spec.centroid_separation * spec.centroid_separation;

    let mut centroids: Vec<Array1<f64>> = Vec::with_capacity(spec.n_clusters);
    let mut attempts = 0;
    while centroids.len() < spec.n_clusters {
        attempts += 1;
        if attempts > MAX_CENTROID_ATTEMPTS {
            return Err(Error::invalid(
                "blob spec",
                format!("could not place {} separated centroids in {MAX_CENTROID_ATTEMPTS} attempts", spec.n_clusters),
            ));
        }
        let candidate: Array1<f64> = (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                spread * z
            })
            .collect();
        let far_enough = centroids
            .iter()
            .all(|c| (c - &candidate).mapv(|v| v * v).sum() >= min_sq);
        if far_enough {
            centroids.push(candidate);
        }
    }

    let n_points = spec.n_clusters * spec.points_per_cluster;
    let mut points = Array2::zeros((n_points, dim));
    let mut labels = Vec::with_capacity(n_points);
    for (k, centroid) in centroids.iter().enumerate() {
        for p in 0..spec.points_per_cluster {
            let mut row = points.row_mut(k * spec.points_per_cluster + p);
            for (d, v) in row.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = centroid[d] + spec.within_cluster_stddev * z;
            }
            labels.push(k);
        }
    }
    Dataset::new(points, Some(labels), spec.n_clusters)
}

/// Raw contents of an IDX image file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: u32,
    pub rows: u32,
    pub cols: u32,
    /// Row-major pixels, `count * rows * cols` bytes.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut reader = ByteReader::new(bytes, path);
        let magic = reader.u32()?;
        if magic != IDX_IMAGES_MAGIC {
            return Err(reader.error_at(0, format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")));
        }
        let count = reader.u32()?;
        let rows = reader.u32()?;
        let cols = reader.u32()?;
        let expected = count as usize * rows as usize * cols as usize;
        let pixels = reader.payload(expected)?.to_vec();
        Ok(IdxImages {
            count,
            rows,
            cols,
            pixels,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        out.extend_from_slice(&self.count.to_be_bytes());
        out.extend_from_slice(&self.rows.to_be_bytes());
        out.extend_from_slice(&self.cols.to_be_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Raw contents of an IDX label file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxLabels {
    pub labels: Vec<u8>,
}

impl IdxLabels {
    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut reader = ByteReader::new(bytes, path);
        let magic = reader.u32()?;
        if magic != IDX_LABELS_MAGIC {
            return Err(reader.error_at(0, format!("bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")));
        }
        let count = reader.u32()? as usize;
        let labels = reader.payload(count)?.to_vec();
        Ok(IdxLabels { labels })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.labels.len());
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.labels.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.labels);
        out
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8], path: &Path) -> Self {
        ByteReader {
            bytes,
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    fn error_at(&self, offset: usize, message: String) -> Error {
        Error::Idx {
            path: self.path.clone(),
            offset: offset as u64,
            message,
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let Some(chunk) = self.bytes.get(self.pos..end) else {
            return Err(self.error_at(self.bytes.len(), "truncated header".into()));
        };
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(self.error_at(
                self.bytes.len(),
                format!("truncated payload: header declares {len} bytes, {available} present"),
            ));
        }
        if available > len {
            return Err(self.error_at(
                self.pos + len,
                format!("count mismatch: header declares {len} payload bytes, {available} present"),
            ));
        }
        let out = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        Ok(out)
    }
}

/// Load an IDX image file (and optionally its label file) as raw pixel values
/// in [0, 255], one flattened `rows * cols` row per image.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let images = IdxImages::parse(&fs::read(images_path)?, images_path)?;
    let n = images.count as usize;
    let dim = images.rows as usize * images.cols as usize;
    let points = Array2::from_shape_vec((n, dim), images.pixels.iter().map(|&b| f64::from(b)).collect())
        .map_err(|e| Error::invalid("idx images", e.to_string()))?;

    let (labels, n_clusters) = match labels_path {
        Some(path) => {
            let parsed = IdxLabels::parse(&fs::read(path)?, path)?;
            if parsed.labels.len() != n {
                return Err(Error::Idx {
                    path: path.to_path_buf(),
                    offset: 4,
                    message: format!("count mismatch: {} labels for {n} images", parsed.labels.len()),
                });
            }
            let labels: Vec<usize> = parsed.labels.iter().map(|&l| l as usize).collect();
            let c = labels.iter().max().map_or(0, |m| m + 1);
            (Some(labels), c)
        }
        None => (None, 2),
    };
    Dataset::new(points, labels, n_clusters)
}

/// Load IDX images without labels, with the cluster count supplied externally.
pub fn load_idx_unlabelled(images_path: &Path, n_clusters: usize) -> Result<Dataset> {
    let d = load_idx(images_path, None)?;
    Dataset::new(d.points, None, n_clusters)
}

/// Column means, used by callers that need to recentre.
pub(crate) fn column_means(points: &Array2<f64>) -> Array1<f64> {
    points
        .mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(points.ncols()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny_idx() -> (Vec<u8>, Vec<u8>) {
        // 4 images of 2x2 pixels: 16-byte header + 16 pixel bytes.
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 2];
        images.extend_from_slice(&[0, 255, 10, 20, 1, 2, 3, 4, 9, 9, 9, 9, 200, 100, 50, 0]);
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 4, 0, 1, 1, 0];
        (images, labels)
    }

    #[test]
    fn parses_hand_written_idx() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = tiny_idx();
        assert_eq!(images.len(), 32);
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        fs::write(&ip, &images).unwrap();
        fs::write(&lp, &labels).unwrap();
        let d = load_idx(&ip, Some(&lp)).unwrap();
        assert_eq!((d.len(), d.dim()), (4, 4));
        assert_eq!(d.labels().unwrap(), &[0, 1, 1, 0]);
        assert_eq!(d.points()[[0, 1]], 255.0);
        assert_eq!(d.points()[[3, 0]], 200.0);
    }

    #[test]
    fn rejects_label_magic_in_image_file() {
        let (mut images, _) = tiny_idx();
        images[3] = 0x01;
        let err = IdxImages::parse(&images, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
        assert!(matches!(err, Error::Idx { offset: 0, .. }));
    }

    #[test]
    fn truncated_and_oversized_payloads_report_offsets() {
        let (images, _) = tiny_idx();
        let err = IdxImages::parse(&images[..30], Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Idx { offset: 30, .. }), "{err}");
        let mut long = images.clone();
        long.push(7);
        let err = IdxImages::parse(&long, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Idx { offset: 32, .. }), "{err}");
        let err = IdxImages::parse(&images[..6], Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("truncated header"));
    }

    #[test]
    fn label_count_must_match_images() {
        let dir = tempfile::tempdir().unwrap();
        let (images, _) = tiny_idx();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        fs::write(&ip, &images).unwrap();
        fs::write(&lp, IdxLabels { labels: vec![0, 1, 1] }.to_bytes()).unwrap();
        let err = load_idx(&ip, Some(&lp)).unwrap_err();
        assert!(err.to_string().contains("count mismatch"), "{err}");
    }

    /// Public MNIST test files, when present under `$SPC_MNIST_DIR`.
    #[test]
    fn mnist_t10k_header_if_available() {
        let Ok(dir) = std::env::var("SPC_MNIST_DIR") else {
            return;
        };
        let dir = PathBuf::from(dir);
        let d = load_idx(
            &dir.join("t10k-images-idx3-ubyte"),
            Some(&dir.join("t10k-labels-idx1-ubyte")),
        )
        .unwrap();
        assert_eq!((d.len(), d.dim(), d.n_clusters()), (10_000, 784, 10));
    }

    fn blob_spec() -> BlobSpec {
        BlobSpec {
            n_clusters: 2,
            points_per_cluster: 50,
            ambient_dim: 10,
            centroid_separation: 10.0,
            within_cluster_stddev: 0.5,
            seed: 7,
        }
    }

    #[test]
    fn blobs_counts_and_determinism() {
        let a = make_blobs(&blob_spec()).unwrap();
        let b = make_blobs(&blob_spec()).unwrap();
        assert_eq!(a.len(), 100);
        let labels = a.labels().unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 50);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 50);
        assert_eq!(a, b);
        let bits = |d: &Dataset| d.points().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn well_separated_blobs_are_nearest_centroid_separable() {
        let spec = BlobSpec {
            n_clusters: 5,
            centroid_separation: 20.0,
            within_cluster_stddev: 0.1,
            ..blob_spec()
        };
        let d = make_blobs(&spec).unwrap();
        let labels = d.labels().unwrap();
        // Oracle: empirical centroids, brute-force nearest assignment.
        let mut centroids = Array2::<f64>::zeros((5, d.dim()));
        for (i, &l) in labels.iter().enumerate() {
            let mut row = centroids.row_mut(l);
            row += &d.points().row(i);
        }
        centroids /= spec.points_per_cluster as f64;
        let mut correct = 0;
        for (i, &l) in labels.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for k in 0..5 {
                let dist: f64 = d
                    .points()
                    .row(i)
                    .iter()
                    .zip(centroids.row(k))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                if dist < best.0 {
                    best = (dist, k);
                }
            }
            correct += usize::from(best.1 == l);
        }
        assert_eq!(correct, d.len());
    }

    #[test]
    fn impossible_separation_is_reported() {
        let spec = BlobSpec {
            n_clusters: 50,
            ambient_dim: 1,
            ..blob_spec()
        };
        assert!(make_blobs(&spec).is_err());
    }

    #[test]
    fn normalize_endpoints_constant_and_idempotent() {
        let points = Array2::from_shape_vec((3, 2), vec![0.0, 255.0, 127.5, 10.0, 255.0, 0.0]).unwrap();
        let d = Dataset::new(points, None, 2).unwrap();
        let n = d.normalize().unwrap();
        assert_eq!(n.points()[[0, 0]], -1.0);
        assert_eq!(n.points()[[0, 1]], 1.0);
        assert_eq!(n.points()[[1, 0]], 0.0);
        assert_eq!(n.normalize().unwrap(), n);

        let constant = Dataset::new(Array2::from_elem((4, 3), 5.0), None, 2).unwrap();
        assert!(constant.normalize().unwrap().points().iter().all(|&v| v == 0.0));

        let bad = Dataset::new(Array2::from_elem((2, 1), f64::NAN), None, 2).unwrap();
        assert!(matches!(bad.normalize(), Err(Error::NonFinite(_))));
    }

    #[test]
    fn dataset_rejects_missing_cluster() {
        let p = Array2::zeros((3, 1));
        assert!(Dataset::new(p.clone(), Some(vec![0, 0, 2]), 3).is_err());
        assert!(Dataset::new(p, Some(vec![0, 1, 2]), 3).is_ok());
    }

    proptest! {
        #[test]
        fn idx_round_trips_bytewise(rows in 0u32..5, cols in 1u32..5, count in 0u32..6, seed in any::<u64>()) {
            let mut rng = rng_from(seed, &[]);
            let pixels: Vec<u8> = (0..(count * rows * cols) as usize).map(|_| rng.random()).collect();
            let bytes = IdxImages { count, rows, cols, pixels }.to_bytes();
            let parsed = IdxImages::parse(&bytes, Path::new("p")).unwrap();
            prop_assert_eq!(parsed.to_bytes(), bytes);

            let labels: Vec<u8> = (0..count as usize).map(|_| rng.random_range(0..10)).collect();
            let lbytes = IdxLabels { labels }.to_bytes();
            prop_assert_eq!(IdxLabels::parse(&lbytes, Path::new("l")).unwrap().to_bytes(), lbytes);
        }

        #[test]
        fn normalized_range_is_unit(values in proptest::collection::vec(-1e6f64..1e6, 4..40)) {
            let n = values.len() / 2 * 2;
            let points = Array2::from_shape_vec((n / 2, 2), values[..n].to_vec()).unwrap();
            let d = Dataset::new(points, None, 2).unwrap().normalize().unwrap();
            let (lo, hi) = d.value_range();
            prop_assert!(lo >= -1.0 && hi <= 1.0);
            if d.points().iter().any(|&v| v != 0.0) {
                prop_assert_eq!((lo, hi), (-1.0, 1.0));
            }
        }
    }
}
