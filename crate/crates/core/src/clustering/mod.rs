//! Cluster models fit on latent vectors.

mod gmm;
mod kmeans;

pub use gmm::{gmm_fit, gmm_predict, GmmModel, GmmOptions};
pub use kmeans::{kmeans_fit, KMeansResult};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One cluster id in `0..n_clusters` per point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labelling {
    labels: Vec<usize>,
    n_clusters: usize,
}

impl Labelling {
    pub fn new(labels: Vec<usize>, n_clusters: usize) -> Result<Self> {
        if n_clusters == 0 {
            return Err(Error::invalid("labelling", "n_clusters must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_clusters) {
            return Err(Error::invalid("labelling", format!("label {bad} out of range 0..{n_clusters}")));
        }
        Ok(Labelling { labels, n_clusters })
    }

    /// Labelling with `n_clusters` inferred as `max + 1` (at least 1).
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let n_clusters = labels.iter().max().map_or(1, |m| m + 1);
        Labelling { labels, n_clusters }
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

    /// CSV with header `index,label`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "label"])?;
        for (i, l) in self.labels.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read an `index,label` CSV. Indices must run `0..N` in order.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Degenerate(format!("{}: missing column {name:?}", path.display())))
        };
        let (ic, lc) = (col("index")?, col("label")?);
        let mut labels = Vec::new();
        for (row, record) in r.records().enumerate() {
            let record = record?;
            let parse = |c: usize| -> Result<usize> {
                record
                    .get(c)
                    .and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| Error::Degenerate(format!("{}: bad value on data row {row}", path.display())))
            };
            if parse(ic)? != row {
                return Err(Error::Degenerate(format!("{}: index out of order on data row {row}", path.display())));
            }
            labels.push(parse(lc)?);
        }
        Ok(Labelling::from_labels(labels))
    }

    pub fn write_csv_to(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "index,label")?;
        for (i, l) in self.labels.iter().enumerate() {
            writeln!(out, "{i},{l}")?;
        }
        Ok(())
    }
}

/// Squared Euclidean distance.
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
