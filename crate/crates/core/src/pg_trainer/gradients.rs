//! Action selection and the per-step policy-gradient arithmetic.

use rand::Rng;

use crate::backend::Real;
use crate::error::{invalid, Result};
use crate::layers::softmax_xent_gradient;
use crate::pg_trainer::Variant;

/// Picks action 0 with probability `aprob`: returns 0 iff a uniform draw in
/// [0, 1) falls below `aprob`.
pub fn select_action_sigmoid<R: Rng + ?Sized>(aprob: Real, rng: &mut R) -> Result<usize> {
    if !(0.0..=1.0).contains(&aprob) {
        return invalid(format!("action probability must lie in [0, 1], got {aprob}"));
    }
    let draw: f64 = rng.gen();
    Ok(if draw < aprob as f64 { 0 } else { 1 })
}

fn check_distribution(probs: &[Real]) -> Result<()> {
    let total: f64 = probs.iter().map(|&p| p as f64).sum();
    if probs.is_empty() || (total - 1.0).abs() > 1e-6 || probs.iter().any(|&p| !(p >= 0.0)) {
        return invalid(format!("not a probability distribution (sum {total})"));
    }
    Ok(())
}

/// Inverse-CDF sampling: the smallest index whose cumulative probability
/// exceeds a uniform draw.
pub fn select_action_softmax<R: Rng + ?Sized>(probs: &[Real], rng: &mut R) -> Result<usize> {
    check_distribution(probs)?;
    let draw: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        cumulative += p as f64;
        if cumulative > draw {
            return Ok(k);
        }
    }
    // Rounding left the total just under the draw.
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1))
}

/// `(action == 0) ? 1 − aprob : 0 − aprob`, the gradient of the chosen
/// action's log-probability with respect to the logit.
pub fn dlogps_sigmoid(action: usize, aprob: Real) -> Real {
    if action == 0 {
        1.0 - aprob
    } else {
        0.0 - aprob
    }
}

/// `softmax − onehot(action)`.
pub fn dlogps_softmax(probs: &[Real], action: usize) -> Result<Vec<Real>> {
    if action >= probs.len() {
        return invalid(format!("action {action} out of range for {} actions", probs.len()));
    }
    let mut target = vec![0.0; probs.len()];
    target[action] = 1.0;
    softmax_xent_gradient(probs, &target)
}

/// Discounted returns R_t = r_t + γ·R_{t+1}, accumulated from the last step
/// backward. With `normalize`, the result is standardized to zero mean and
/// unit (population) standard deviation; the division is skipped when the
/// deviation is below 1e-10.
pub fn discount_rewards(rewards: &[Real], gamma: Real, normalize: bool) -> Result<Vec<Real>> {
    if rewards.is_empty() {
        return invalid("no rewards to discount");
    }
    if !(0.0..1.0).contains(&gamma) {
        return invalid(format!("gamma must lie in [0, 1), got {gamma}"));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for (o, &r) in out.iter_mut().zip(rewards).rev() {
        running = r + gamma * running;
        *o = running;
    }
    if normalize {
        let n = out.len() as Real;
        let mean = out.iter().sum::<Real>() / n;
        out.iter_mut().for_each(|v| *v -= mean);
        let std = (out.iter().map(|v| v * v).sum::<Real>() / n).sqrt();
        if std >= 1e-10 {
            out.iter_mut().for_each(|v| *v /= std);
        }
    }
    Ok(out)
}

/// Scales each step's gradient by its return.
///
/// Sigmoid gradients are negated (diff = −Dlogps·R) because the solver
/// subtracts diffs while Dlogps points uphill; softmax gradients
/// (softmax − target) already point downhill and are used as is.
pub fn modulate_gradients(dlogps: &[Vec<Real>], returns: &[Real], variant: Variant) -> Result<Vec<Vec<Real>>> {
    if dlogps.len() != returns.len() {
        return invalid(format!(
            "{} gradients but {} returns",
            dlogps.len(),
            returns.len()
        ));
    }
    let sign = match variant {
        Variant::Sigmoid => -1.0,
        Variant::Softmax => 1.0,
    };
    Ok(dlogps
        .iter()
        .zip(returns)
        .map(|(g, &r)| g.iter().map(|v| sign * v * r).collect())
        .collect())
}
