use crate::backend::Real;
use crate::error::{invalid, Result};
use crate::tensor::Blob;

// Normalizes over the C·H·W elements of each batch item. Vectors are stored
// as (N,1,1,W), so for them this is the W axis.
pub(super) fn forward(bottom: &Blob, top: &Blob) -> Result<()> {
    let shape = bottom.shape();
    bottom
        .backend()
        .softmax_forward(shape.num(), shape.item_count(), bottom.data(), top.data())
}

pub(super) fn backward(top: &Blob, bottom: &Blob) -> Result<()> {
    let shape = bottom.shape();
    bottom.backend().softmax_backward(
        shape.num(),
        shape.item_count(),
        top.diff(),
        top.data(),
        bottom.diff(),
    )
}

/// Gradient of softmax cross-entropy with respect to the logits: `probs − target`.
///
/// `probs` must sum to 1 (±1e-6) and `target` must be one-hot.
pub fn softmax_xent_gradient(probs: &[Real], target: &[Real]) -> Result<Vec<Real>> {
    if probs.len() != target.len() {
        return invalid(format!(
            "probability vector has {} entries, target has {}",
            probs.len(),
            target.len()
        ));
    }
    let total: Real = probs.iter().sum();
    if probs.is_empty() || (total - 1.0).abs() > 1e-6 || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return invalid(format!("probabilities must form a distribution (sum {total})"));
    }
    let ones = target.iter().filter(|&&t| t == 1.0).count();
    let zeros = target.iter().filter(|&&t| t == 0.0).count();
    if ones != 1 || ones + zeros != target.len() {
        return invalid("target must be one-hot");
    }
    Ok(probs.iter().zip(target).map(|(p, t)| p - t).collect())
}
