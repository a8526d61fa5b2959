use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::hungarian;
use crate::clustering::Labelling;
use crate::error::{Error, Result};

/// Evaluation of a predicted labelling against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub nmi: f64,
    pub rand_index: f64,
    pub cluster_sizes: BTreeMap<usize, usize>,
}

pub fn evaluate(predicted: &Labelling, truth: &Labelling) -> Result<Metrics> {
    Ok(Metrics {
        accuracy: accuracy(predicted, truth)?,
        nmi: nmi(predicted, truth)?,
        rand_index: rand_index(predicted, truth)?,
        cluster_sizes: cluster_size_report(predicted),
    })
}

/// `table[p][t]` = number of points with predicted `p` and true `t`.
pub fn contingency(predicted: &Labelling, truth: &Labelling) -> Result<Vec<Vec<usize>>> {
    if predicted.len() != truth.len() {
        return Err(Error::shape("labellings", &[truth.len()], &[predicted.len()]));
    }
    let mut table = vec![vec![0usize; truth.n_clusters()]; predicted.n_clusters()];
    for (&p, &t) in predicted.labels().iter().zip(truth.labels()) {
        table[p][t] += 1;
    }
    Ok(table)
}

/// Best one-to-one map from predicted ids to true ids, as `map[p] = t`. The
/// map covers `max(C_pred, C_true)` ids so that unmatched ids still receive a
/// (never correct) target.
pub fn best_matching(predicted: &Labelling, truth: &Labelling) -> Result<Vec<usize>> {
    let table = contingency(predicted, truth)?;
    let size = predicted.n_clusters().max(truth.n_clusters());
    let cost: Vec<Vec<f64>> = (0..size)
        .map(|p| {
            (0..size)
                .map(|t| -(table.get(p).and_then(|row| row.get(t)).copied().unwrap_or(0) as f64))
                .collect()
        })
        .collect();
    hungarian(&cost)
}

/// Fraction of points labelled correctly under the best one-to-one matching
/// of predicted ids to true ids.
pub fn accuracy(predicted: &Labelling, truth: &Labelling) -> Result<f64> {
    let map = best_matching(predicted, truth)?;
    if predicted.is_empty() {
        return Err(Error::invalid("accuracy", "empty labelling"));
    }
    let correct = predicted
        .labels()
        .iter()
        .zip(truth.labels())
        .filter(|(&p, &t)| map[p] == t)
        .count();
    Ok(correct as f64 / predicted.len() as f64)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `2 I / (H_pred + H_true)` with natural logarithms; 1 when both entropies vanish.
pub fn nmi(predicted: &Labelling, truth: &Labelling) -> Result<f64> {
    let table = contingency(predicted, truth)?;
    if predicted.is_empty() {
        return Err(Error::invalid("nmi", "empty labelling"));
    }
    let n = predicted.len() as f64;
    let rows: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<usize> = (0..truth.n_clusters()).map(|t| table.iter().map(|r| r[t]).sum()).collect();
    let (hp, ht) = (entropy(rows.iter().copied(), n), entropy(cols.iter().copied(), n));
    if hp + ht == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (p, row) in table.iter().enumerate() {
        for (t, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (rows[p] as f64 * cols[t] as f64)).ln();
            }
        }
    }
    Ok((2.0 * mi / (hp + ht)).clamp(0.0, 1.0))
}

fn pairs(k: usize) -> u128 {
    let k = k as u128;
    k * k.saturating_sub(1) / 2
}

/// Fraction of unordered pairs on which the two labellings agree about
/// same-cluster versus different-cluster membership.
pub fn rand_index(predicted: &Labelling, truth: &Labelling) -> Result<f64> {
    let table = contingency(predicted, truth)?;
    let n = predicted.len();
    if n < 2 {
        return Err(Error::invalid("rand index", format!("need at least 2 points, got {n}")));
    }
    let both: u128 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let same_pred: u128 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let same_true: u128 = (0..truth.n_clusters())
        .map(|t| pairs(table.iter().map(|r| r[t]).sum()))
        .sum();
    let total = pairs(n);
    let agree = total + 2 * both - same_pred - same_true;
    Ok(agree as f64 / total as f64)
}

/// Count of points per cluster id, including empty clusters.
pub fn cluster_size_report(labelling: &Labelling) -> BTreeMap<usize, usize> {
    let mut sizes: BTreeMap<usize, usize> = (0..labelling.n_clusters()).map(|c| (c, 0)).collect();
    for &l in labelling.labels() {
        *sizes.entry(l).or_default() += 1;
    }
    sizes
}
