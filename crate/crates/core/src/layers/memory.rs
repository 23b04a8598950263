use std::collections::VecDeque;

use crate::backend::Real;
use crate::error::{invalid, Error, Result};
use crate::layers::LayerSpec;
use crate::tensor::{Blob, Shape};

/// Callback a MemoryLoss layer runs during backward to fill a blob's diff.
pub type LossHook = Box<dyn FnMut(&Blob) -> Result<()> + Send>;

/// Source layer fed from an in-memory FIFO.
pub(super) struct MemoryData {
    shape: Shape,
    queue: VecDeque<Vec<Real>>,
}

impl MemoryData {
    pub(super) fn setup(spec: &LayerSpec) -> Result<(Self, Shape)> {
        let param = match &spec.memory_data {
            Some(p) => p,
            None => return spec.err("memory_data_param is required"),
        };
        let shape = param.shape();
        if shape.0.contains(&0) {
            return spec.err(format!("memory_data_param shape {shape} has a zero dimension"));
        }
        Ok((
            MemoryData {
                shape,
                queue: VecDeque::new(),
            },
            shape,
        ))
    }

    pub(super) fn enqueue(&mut self, input: &[Real]) -> Result<()> {
        let expected = self.shape.item_count();
        if input.len() != expected {
            return invalid(format!(
                "MemoryData expects {expected} values per item, got {}",
                input.len()
            ));
        }
        self.queue.push_back(input.to_vec());
        Ok(())
    }

    pub(super) fn queued(&self) -> usize {
        self.queue.len()
    }

    pub(super) fn clear(&mut self) {
        self.queue.clear();
    }

    /// Moves the next `batch_size` items into the top blob.
    pub(super) fn forward(&mut self, spec: &LayerSpec, top: &Blob) -> Result<()> {
        let batch = self.shape.num();
        if self.queue.len() < batch {
            return Err(Error::DataStarvation(format!(
                "layer '{}' needs {batch} queued item(s), has {}",
                spec.name,
                self.queue.len()
            )));
        }
        let item = self.shape.item_count();
        let be = top.backend();
        be.with_buffer_mut(top.data(), |dst| {
            for chunk in dst.chunks_mut(item).take(batch) {
                let src = self.queue.pop_front().expect("length checked");
                chunk.copy_from_slice(&src);
            }
        })
    }
}

/// Sink layer whose gradient comes from an external hook.
#[derive(Default)]
pub(super) struct MemoryLoss {
    pub(super) hook: Option<LossHook>,
}

impl MemoryLoss {
    pub(super) fn backward(&mut self, bottom: &Blob) -> Result<()> {
        match &mut self.hook {
            Some(hook) => hook(bottom),
            None => bottom.zero_diff(),
        }
    }

    pub(super) fn run_hook(&mut self, target: &Blob) -> Result<()> {
        match &mut self.hook {
            Some(hook) => hook(target),
            None => Err(Error::InvalidState("MemoryLoss layer has no hook installed".into())),
        }
    }
}
