use std::sync::Arc;

use parking_lot::Mutex;

use crate::backend::Real;
use crate::error::{invalid, model, Result};
use crate::layers::LayerType;
use crate::net::Net;
use crate::pg_trainer::Variant;

/// A policy network: MemoryData → … → logits → Sigmoid|Softmax → MemoryLoss.
///
/// Installs a MemoryLoss hook that writes whatever diff was staged with
/// [`PolicyNet::accumulate`] onto the logit blob.
pub struct PolicyNet {
    net: Net,
    variant: Variant,
    input: String,
    logits: String,
    probs: String,
    staged: Arc<Mutex<Vec<Real>>>,
}

impl std::fmt::Debug for PolicyNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PolicyNet")
            .field("variant", &self.variant)
            .field("input", &self.input)
            .field("logits", &self.logits)
            .field("probs", &self.probs)
            .finish_non_exhaustive()
    }
}

fn only_one(net: &Net, kind: LayerType) -> Result<&crate::layers::LayerState> {
    let mut found = net.layers().iter().filter(|l| l.kind() == kind);
    match (found.next(), found.next()) {
        (Some(l), None) => Ok(l),
        (None, _) => model(format!("policy model needs a {} layer", kind.as_str())),
        _ => model(format!("policy model has more than one {} layer", kind.as_str())),
    }
}

impl PolicyNet {
    pub fn new(mut net: Net, variant: Variant) -> Result<Self> {
        let data = only_one(&net, LayerType::MemoryData)?;
        let input = data.name().to_string();
        let batch = net.blob(&data.spec().tops[0]).map(|b| b.shape().num()).unwrap_or(0);
        if batch != 1 {
            return model(format!("policy input layer '{input}' must have batch_size 1, has {batch}"));
        }

        let loss = only_one(&net, LayerType::MemoryLoss)?;
        let loss_name = loss.name().to_string();
        let probs = loss.spec().bottoms[0].clone();
        let width = net.blob(&probs).map(|b| b.shape().item_count()).unwrap_or(0);
        match variant {
            Variant::Sigmoid if width != 1 => {
                return model(format!("sigmoid variant needs model output width 1, model has {width}"))
            }
            Variant::Softmax if width < 2 => {
                return model(format!("softmax variant needs model output width >= 2, model has {width}"))
            }
            _ => {}
        }

        let head = net
            .producer_of(&probs)
            .ok_or_else(|| crate::Error::Model(format!("blob '{probs}' has no producer")))?;
        let expected = match variant {
            Variant::Sigmoid => LayerType::Sigmoid,
            Variant::Softmax => LayerType::Softmax,
        };
        if head.kind() != expected {
            return model(format!(
                "{} variant needs a {} layer before MemoryLoss, found {} ('{}')",
                variant.as_str(),
                expected.as_str(),
                head.kind().as_str(),
                head.name()
            ));
        }
        let logits = head.spec().bottoms[0].clone();

        let staged = Arc::new(Mutex::new(Vec::new()));
        let hook_buf = Arc::clone(&staged);
        net.set_loss_hook(
            &loss_name,
            Box::new(move |blob| {
                let diff = hook_buf.lock();
                if diff.len() != blob.count() {
                    return invalid(format!(
                        "staged gradient has {} values, blob '{}' holds {}",
                        diff.len(),
                        blob.name(),
                        blob.count()
                    ));
                }
                blob.write_diff(&diff)
            }),
        )?;

        Ok(PolicyNet {
            net,
            variant,
            input,
            logits,
            probs,
            staged,
        })
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn into_net(self) -> Net {
        self.net
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Width of the probability output.
    pub fn width(&self) -> usize {
        self.net.blob(&self.probs).map_or(0, |b| b.count())
    }

    pub fn logits_blob(&self) -> &str {
        &self.logits
    }

    pub fn probs_blob(&self) -> &str {
        &self.probs
    }

    fn forward(&mut self, observation: &[Real]) -> Result<()> {
        self.net.enqueue(&self.input, observation)?;
        self.net.forward()?;
        Ok(())
    }

    /// Action probabilities for one observation.
    pub fn probabilities(&mut self, observation: &[Real]) -> Result<Vec<Real>> {
        self.forward(observation)?;
        self.net.blob(&self.probs).expect("checked in new").read_data()
    }

    /// Re-runs the forward pass for `observation`, puts `diff` on the logit
    /// blob and back-propagates. Parameter diffs accumulate.
    pub fn accumulate(&mut self, observation: &[Real], diff: &[Real]) -> Result<()> {
        self.forward(observation)?;
        {
            let mut staged = self.staged.lock();
            staged.clear();
            staged.extend_from_slice(diff);
        }
        self.net.backward_with_loss_hook(&self.logits)
    }
}
