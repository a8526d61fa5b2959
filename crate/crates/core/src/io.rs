//! Diffable text artifacts: flat metrics JSON, iteration history CSV, and
//! consensus CSV.

use std::collections::BTreeMap;
use std::io::Write;

use crate::consensus::{ConsensusResult, Metrics};
use crate::error::{Error, Result};
use crate::spc::IterationRecord;

/// Scalar value in a flat JSON object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlatValue {
    Int(u64),
    Float(f64),
}

/// Ten significant digits in exponent form, e.g. `9.876543210e-1`.
pub fn format_float(v: f64) -> String {
    if v == 0.0 {
        // Avoid "-0" so that diffs do not depend on the sign of zero.
        return "0.000000000e0".to_string();
    }
    format!("{v:.9e}")
}

pub fn metrics_entries(metrics: &Metrics) -> BTreeMap<String, FlatValue> {
    let mut map = BTreeMap::new();
    map.insert("accuracy".to_string(), FlatValue::Float(metrics.accuracy));
    map.insert("nmi".to_string(), FlatValue::Float(metrics.nmi));
    map.insert("rand_index".to_string(), FlatValue::Float(metrics.rand_index));
    for (&c, &n) in &metrics.cluster_sizes {
        map.insert(format!("cluster_size_{c}"), FlatValue::Int(n as u64));
    }
    map
}

/// One JSON object, keys in sorted order, one key per line.
pub fn flat_json(entries: &BTreeMap<String, FlatValue>) -> Result<String> {
    let mut out = String::from("{\n");
    for (i, (k, v)) in entries.iter().enumerate() {
        let value = match *v {
            FlatValue::Int(n) => n.to_string(),
            FlatValue::Float(f) if f.is_finite() => format_float(f),
            FlatValue::Float(_) => return Err(Error::NonFinite("metrics json")),
        };
        let sep = if i + 1 == entries.len() { "" } else { "," };
        out.push_str(&format!("  {}: {value}{sep}\n", serde_json::to_string(k)?));
    }
    out.push_str("}\n");
    Ok(out)
}

pub fn metrics_json(metrics: &Metrics) -> Result<String> {
    flat_json(&metrics_entries(metrics))
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

/// Columns `iteration,n_agreed,agreed_acc,overall_acc,loss,members_used`;
/// accuracies are empty without ground truth.
pub fn write_history_csv(records: &[IterationRecord], mut out: impl Write) -> Result<()> {
    writeln!(out, "iteration,n_agreed,agreed_acc,overall_acc,loss,members_used")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration,
            r.n_agreed,
            opt(r.agreed_accuracy),
            opt(r.overall_accuracy),
            format_float(r.loss),
            r.members_used
        )?;
    }
    Ok(())
}

/// Columns `index,consensus_label,agreed` with `agreed` as 0/1.
pub fn write_consensus_csv(result: &ConsensusResult, mut out: impl Write) -> Result<()> {
    writeln!(out, "index,consensus_label,agreed")?;
    for (i, (l, a)) in result.consensus_labels.iter().zip(&result.agreement).enumerate() {
        writeln!(out, "{i},{l},{}", *a as u8)?;
    }
    Ok(())
}
