//! Label alignment, the unanimity vote across an ensemble, and evaluation
//! metrics.

mod hungarian;
mod metrics;

pub use hungarian::hungarian;
pub use metrics::{accuracy, best_matching, cluster_size_report, contingency, evaluate, nmi, rand_index, Metrics};

use serde::{Deserialize, Serialize};

use crate::clustering::Labelling;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    /// Most common aligned label per point, ties to the lowest id.
    pub consensus_labels: Vec<usize>,
    /// True where every aligned labelling gives the same label.
    pub agreement: Vec<bool>,
    /// Every input labelling after alignment to the first one.
    pub aligned_labellings: Vec<Labelling>,
    pub n_agreed: usize,
    pub n_clusters: usize,
}

impl ConsensusResult {
    pub fn len(&self) -> usize {
        self.consensus_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.consensus_labels.is_empty()
    }

    pub fn labelling(&self) -> Labelling {
        Labelling::new(self.consensus_labels.clone(), self.n_clusters).expect("consensus labels are in range")
    }
}

fn check_compatible(a: &Labelling, b: &Labelling) -> Result<()> {
    if a.len() != b.len() || a.n_clusters() != b.n_clusters() {
        return Err(Error::shape(
            "labelling alignment",
            &[a.len(), a.n_clusters()],
            &[b.len(), b.n_clusters()],
        ));
    }
    Ok(())
}

/// Relabel `other` so that it agrees with `reference` on as many points as
/// possible.
pub fn align(reference: &Labelling, other: &Labelling) -> Result<Labelling> {
    check_compatible(reference, other)?;
    let table = contingency(other, reference)?;
    let cost: Vec<Vec<f64>> = table.iter().map(|r| r.iter().map(|&c| -(c as f64)).collect()).collect();
    let perm = hungarian(&cost)?;
    Labelling::new(other.labels().iter().map(|&l| perm[l]).collect(), other.n_clusters())
}

/// Align every labelling to the first and take a per-point vote.
pub fn consensus(labellings: &[Labelling]) -> Result<ConsensusResult> {
    let reference = labellings.first().ok_or(Error::EmptyEnsemble)?;
    let n_clusters = reference.n_clusters();
    let mut aligned = Vec::with_capacity(labellings.len());
    aligned.push(reference.clone());
    for other in &labellings[1..] {
        aligned.push(align(reference, other)?);
    }

    let n = reference.len();
    let mut consensus_labels = Vec::with_capacity(n);
    let mut agreement = Vec::with_capacity(n);
    let mut votes = vec![0usize; n_clusters];
    for i in 0..n {
        votes.fill(0);
        for l in &aligned {
            votes[l.labels()[i]] += 1;
        }
        let mut mode = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[mode] {
                mode = c;
            }
        }
        consensus_labels.push(mode);
        agreement.push(votes[mode] == aligned.len());
    }
    let n_agreed = agreement.iter().filter(|&&a| a).count();
    Ok(ConsensusResult {
        consensus_labels,
        agreement,
        aligned_labellings: aligned,
        n_agreed,
        n_clusters,
    })
}
