//! Dense autoencoder members with a softmax classifier head, exact
//! backpropagation, and the selective pseudo-label loss.

mod member;
mod mlp;

pub use member::{
    init_member, AutoencoderMember, GradientUpdate, Gradients, MemberArchitecture, MemberTrace, NoiseMode,
    PointTarget,
};
pub use mlp::{softmax_rows, Activation, Dense, Mlp, MlpSpec, MlpTrace};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Probabilities are clamped to this before taking the log.
pub const CE_FLOOR: f64 = 1e-12;

pub(crate) const CHECKPOINT_FORMAT: &str = "spc-member/1";

/// `-ln(probs[target])`, with the probability floored at [`CE_FLOOR`].
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    let p = probs
        .get(target)
        .ok_or_else(|| Error::invalid("target", format!("{target} out of range 0..{}", probs.len())))?;
    Ok(-p.max(CE_FLOOR).ln())
}

/// Mean absolute elementwise difference.
pub fn l1_loss(reconstruction: ArrayView2<f64>, original: ArrayView2<f64>) -> Result<f64> {
    if reconstruction.dim() != original.dim() || reconstruction.is_empty() {
        let (a, b) = reconstruction.dim();
        let (c, d) = original.dim();
        return Err(Error::shape("l1 loss", &[c, d], &[a, b]));
    }
    let total: f64 = reconstruction
        .iter()
        .zip(original.iter())
        .map(|(r, o)| (r - o).abs())
        .sum();
    Ok(total / reconstruction.len() as f64)
}

/// Per-point loss selection from a consensus: agreed points classify against
/// their consensus label, the rest reconstruct.
pub fn targets_from_consensus(labels: &[usize], agreement: &[bool]) -> Result<Vec<PointTarget>> {
    if labels.len() != agreement.len() {
        return Err(Error::shape("consensus targets", &[labels.len()], &[agreement.len()]));
    }
    Ok(labels
        .iter()
        .zip(agreement)
        .map(|(&c, &a)| {
            if a {
                PointTarget::Classify(c)
            } else {
                PointTarget::Reconstruct
            }
        })
        .collect())
}

/// The ensemble objective: `(1/N) sum_i sum_j` of cross-entropy for agreed
/// points and weighted l1 reconstruction for the rest, evaluated without
/// latent noise.
pub fn combined_loss(
    members: &[AutoencoderMember],
    batch: ArrayView2<f64>,
    consensus_labels: &[usize],
    agreement: &[bool],
    recon_weight: f64,
) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if consensus_labels.len() != batch.nrows() {
        return Err(Error::shape("combined loss labels", &[batch.nrows()], &[consensus_labels.len()]));
    }
    let targets = targets_from_consensus(consensus_labels, agreement)?;
    members.iter().try_fold(0.0, |acc, m| {
        let trace = m.forward(batch, NoiseMode::Eval)?;
        Ok(acc + m.loss(&trace, &targets, recon_weight)?)
    })
}

/// Element-wise view over all parameters.
#[cfg(test)]
pub(crate) fn flatten_params(member: &AutoencoderMember) -> Vec<f64> {
    [&member.encoder, &member.decoder, &member.classifier]
        .iter()
        .flat_map(|net| net.layers().iter())
        .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
        .collect()
}

/// Mutable access to parameter `index`, counting weights then biases layer by layer.
pub(crate) fn param_mut(member: &mut AutoencoderMember, mut index: usize) -> &mut f64 {
    for net in [&mut member.encoder, &mut member.decoder, &mut member.classifier] {
        for layer in net.layers_mut() {
            let nw = layer.weights.len();
            if index < nw {
                return layer.weights.iter_mut().nth(index).expect("in range");
            }
            index -= nw;
            let nb = layer.bias.len();
            if index < nb {
                return &mut layer.bias[index];
            }
            index -= nb;
        }
    }
    panic!("parameter index out of range")
}

pub(crate) fn flatten_grads(g: &Gradients) -> Vec<f64> {
    g.iter()
        .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
        .collect()
}

/// Matrix of `rows x cols` filled from a closure, for tests and benches.
pub fn matrix_from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| f(i, j))
}

/// Largest relative discrepancy between analytic and central-difference
/// gradients of `member.loss` over every parameter. The relative error uses
/// `max(|a|, |n|, 1e-6)` as its denominator.
pub fn max_gradient_error(
    member: &AutoencoderMember,
    batch: ArrayView2<f64>,
    targets: &[PointTarget],
    mode: NoiseMode,
    recon_weight: f64,
    step: f64,
) -> Result<f64> {
    let trace = member.forward(batch, mode)?;
    let (_, grads) = member.backward(&trace, targets, recon_weight)?;
    let analytic = flatten_grads(&grads);
    let mut probe = member.clone();
    let mut worst = 0.0f64;
    for (idx, &a) in analytic.iter().enumerate() {
        let original = *param_mut(&mut probe, idx);
        *param_mut(&mut probe, idx) = original + step;
        let plus = probe.loss(&probe.forward(batch, mode)?, targets, recon_weight)?;
        *param_mut(&mut probe, idx) = original - step;
        let minus = probe.loss(&probe.forward(batch, mode)?, targets, recon_weight)?;
        *param_mut(&mut probe, idx) = original;
        let numeric = (plus - minus) / (2.0 * step);
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
