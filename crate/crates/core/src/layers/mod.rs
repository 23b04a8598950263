//! The layer contract and the concrete layers used by the policy models.
//!
//! A layer is described by a [`LayerSpec`] (usually parsed from prototxt),
//! turned into a [`LayerState`] by [`LayerState::setup`], and then driven by
//! the net through `forward` and `backward`. Inter-layer data travels only in
//! [`Blob`]s.

mod inner_product;
mod memory;
mod softmax;

use std::fmt;

use rand::RngCore;

pub use memory::LossHook;
pub use softmax::softmax_xent_gradient;

use crate::backend::{Backend, Real};
use crate::error::{invalid, model, Result};
use crate::prototxt::ProtoNode;
use crate::tensor::{Blob, Shape};

use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerType {
    InnerProduct,
    ReLU,
    Sigmoid,
    Softmax,
    MemoryData,
    MemoryLoss,
}

impl LayerType {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "InnerProduct" => LayerType::InnerProduct,
            "ReLU" => LayerType::ReLU,
            "Sigmoid" => LayerType::Sigmoid,
            "Softmax" => LayerType::Softmax,
            "MemoryData" => LayerType::MemoryData,
            "MemoryLoss" => LayerType::MemoryLoss,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LayerType::InnerProduct => "InnerProduct",
            LayerType::ReLU => "ReLU",
            LayerType::Sigmoid => "Sigmoid",
            LayerType::Softmax => "Softmax",
            LayerType::MemoryData => "MemoryData",
            LayerType::MemoryLoss => "MemoryLoss",
        }
    }

    /// (bottom count, top count)
    pub fn arity(&self) -> (usize, usize) {
        match self {
            LayerType::MemoryData => (0, 1),
            LayerType::MemoryLoss => (1, 0),
            _ => (1, 1),
        }
    }
}

impl fmt::Display for LayerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InnerProductParam {
    pub num_output: Option<usize>,
    pub bias_term: Option<bool>,
    /// Unrecognized fields, kept for printing.
    pub extra: Vec<ProtoNode>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryDataParam {
    pub batch_size: Option<usize>,
    pub channels: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub extra: Vec<ProtoNode>,
}

impl MemoryDataParam {
    /// Output shape; absent dimensions default to 1.
    pub fn shape(&self) -> Shape {
        let d = |v: Option<usize>| v.unwrap_or(1);
        Shape::new(d(self.batch_size), d(self.channels), d(self.height), d(self.width))
    }
}

/// One layer of a model description.
///
/// `layer_type` stays a raw string so descriptions naming unknown types still
/// parse and print; it is resolved when the layer is set up.
#[derive(Debug, Clone, Default)]
pub struct LayerSpec {
    pub name: String,
    pub layer_type: String,
    pub bottoms: Vec<String>,
    pub tops: Vec<String>,
    pub inner_product: Option<InnerProductParam>,
    pub memory_data: Option<MemoryDataParam>,
    pub extra: Vec<ProtoNode>,
    /// 1-based line of the `layer` block in its source, 0 when built in code.
    pub line: usize,
}

impl PartialEq for LayerSpec {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.layer_type == other.layer_type
            && self.bottoms == other.bottoms
            && self.tops == other.tops
            && self.inner_product == other.inner_product
            && self.memory_data == other.memory_data
            && self.extra == other.extra
    }
}

impl LayerSpec {
    pub fn new(name: &str, layer_type: LayerType, bottoms: &[&str], tops: &[&str]) -> Self {
        LayerSpec {
            name: name.to_string(),
            layer_type: layer_type.as_str().to_string(),
            bottoms: bottoms.iter().map(|s| s.to_string()).collect(),
            tops: tops.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn inner_product(name: &str, bottom: &str, top: &str, num_output: usize) -> Self {
        LayerSpec {
            inner_product: Some(InnerProductParam {
                num_output: Some(num_output),
                ..Default::default()
            }),
            ..Self::new(name, LayerType::InnerProduct, &[bottom], &[top])
        }
    }

    pub fn memory_data(name: &str, top: &str, shape: Shape) -> Self {
        let [n, c, h, w] = shape.0;
        LayerSpec {
            memory_data: Some(MemoryDataParam {
                batch_size: Some(n),
                channels: Some(c),
                height: Some(h),
                width: Some(w),
                extra: Vec::new(),
            }),
            ..Self::new(name, LayerType::MemoryData, &[], &[top])
        }
    }

    pub fn resolve_type(&self) -> Result<LayerType> {
        LayerType::from_name(&self.layer_type).ok_or_else(|| {
            crate::Error::Model(format!(
                "layer '{}'{}: unknown layer type '{}'",
                self.name,
                line_suffix(self.line),
                self.layer_type
            ))
        })
    }

    pub(crate) fn err<T>(&self, msg: impl fmt::Display) -> Result<T> {
        model(format!("layer '{}'{}: {msg}", self.name, line_suffix(self.line)))
    }
}

fn line_suffix(line: usize) -> String {
    if line > 0 {
        format!(" (line {line})")
    } else {
        String::new()
    }
}

enum LayerImpl {
    InnerProduct(inner_product::InnerProduct),
    ReLU,
    Sigmoid,
    Softmax,
    MemoryData(memory::MemoryData),
    MemoryLoss(memory::MemoryLoss),
}

/// A set-up layer: its spec, its learnable parameters and any private state.
pub struct LayerState {
    spec: LayerSpec,
    kind: LayerType,
    params: Vec<Blob>,
    imp: LayerImpl,
}

impl fmt::Debug for LayerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LayerState")
            .field("name", &self.spec.name)
            .field("kind", &self.kind)
            .field("params", &self.params)
            .finish()
    }
}

impl LayerState {
    /// Validates the spec against its inputs, infers output shapes and
    /// initializes parameters from `rng`.
    pub fn setup(
        spec: &LayerSpec,
        bottom_shapes: &[Shape],
        backend: &Arc<Backend>,
        rng: &mut dyn RngCore,
    ) -> Result<(LayerState, Vec<Shape>)> {
        let kind = spec.resolve_type()?;
        let (n_bottom, n_top) = kind.arity();
        if spec.bottoms.len() != n_bottom || spec.tops.len() != n_top {
            return spec.err(format!(
                "{kind} takes {n_bottom} bottom(s) and {n_top} top(s), got {} and {}",
                spec.bottoms.len(),
                spec.tops.len()
            ));
        }
        if bottom_shapes.len() != n_bottom {
            return spec.err(format!(
                "expected {n_bottom} bottom shape(s), got {}",
                bottom_shapes.len()
            ));
        }
        let mut params = Vec::new();
        let (imp, tops) = match kind {
            LayerType::InnerProduct => {
                let (ip, top) =
                    inner_product::InnerProduct::setup(spec, bottom_shapes[0], backend, rng, &mut params)?;
                (LayerImpl::InnerProduct(ip), vec![top])
            }
            LayerType::ReLU => (LayerImpl::ReLU, vec![bottom_shapes[0]]),
            LayerType::Sigmoid => (LayerImpl::Sigmoid, vec![bottom_shapes[0]]),
            LayerType::Softmax => (LayerImpl::Softmax, vec![bottom_shapes[0]]),
            LayerType::MemoryData => {
                let (md, top) = memory::MemoryData::setup(spec)?;
                (LayerImpl::MemoryData(md), vec![top])
            }
            LayerType::MemoryLoss => (LayerImpl::MemoryLoss(memory::MemoryLoss::default()), vec![]),
        };
        Ok((
            LayerState {
                spec: spec.clone(),
                kind,
                params,
                imp,
            },
            tops,
        ))
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn kind(&self) -> LayerType {
        self.kind
    }

    /// Learnable parameters (InnerProduct: weight, then bias if enabled).
    pub fn params(&self) -> &[Blob] {
        &self.params
    }

    pub fn forward(&mut self, bottoms: &[&Blob], tops: &[&Blob]) -> Result<()> {
        match &mut self.imp {
            LayerImpl::InnerProduct(ip) => ip.forward(&self.params, bottoms[0], tops[0]),
            LayerImpl::ReLU => {
                let (b, t) = (bottoms[0], tops[0]);
                b.backend().relu_forward(b.count(), b.data(), t.data())
            }
            LayerImpl::Sigmoid => {
                let (b, t) = (bottoms[0], tops[0]);
                b.backend().sigmoid_forward(b.count(), b.data(), t.data())
            }
            LayerImpl::Softmax => softmax::forward(bottoms[0], tops[0]),
            LayerImpl::MemoryData(md) => md.forward(&self.spec, tops[0]),
            LayerImpl::MemoryLoss(_) => Ok(()),
        }
    }

    /// Writes bottom diffs from top diffs. Parameter diffs accumulate.
    pub fn backward(&mut self, tops: &[&Blob], bottoms: &[&Blob]) -> Result<()> {
        match &mut self.imp {
            LayerImpl::InnerProduct(ip) => ip.backward(&self.params, tops[0], bottoms[0]),
            LayerImpl::ReLU => {
                let (t, b) = (tops[0], bottoms[0]);
                b.backend().relu_backward(b.count(), t.diff(), b.data(), b.diff())
            }
            LayerImpl::Sigmoid => {
                let (t, b) = (tops[0], bottoms[0]);
                b.backend().sigmoid_backward(b.count(), t.diff(), t.data(), b.diff())
            }
            LayerImpl::Softmax => softmax::backward(tops[0], bottoms[0]),
            LayerImpl::MemoryData(_) => Ok(()),
            LayerImpl::MemoryLoss(ml) => ml.backward(bottoms[0]),
        }
    }

    /// Queues one input item for a MemoryData layer.
    pub fn enqueue(&mut self, input: &[Real]) -> Result<()> {
        match &mut self.imp {
            LayerImpl::MemoryData(md) => md.enqueue(input),
            _ => invalid(format!("layer '{}' is not a MemoryData layer", self.spec.name)),
        }
    }

    /// Number of items waiting in a MemoryData queue (0 for other layers).
    pub fn queued(&self) -> usize {
        match &self.imp {
            LayerImpl::MemoryData(md) => md.queued(),
            _ => 0,
        }
    }

    pub fn clear_queue(&mut self) {
        if let LayerImpl::MemoryData(md) = &mut self.imp {
            md.clear();
        }
    }

    /// Installs the gradient callback of a MemoryLoss layer.
    pub fn set_loss_hook(&mut self, hook: LossHook) -> Result<()> {
        match &mut self.imp {
            LayerImpl::MemoryLoss(ml) => {
                ml.hook = Some(hook);
                Ok(())
            }
            _ => self.spec.err(format!("{} layer cannot take a loss hook", self.kind)),
        }
    }

    /// Invokes the MemoryLoss hook on an arbitrary blob.
    pub(crate) fn run_loss_hook(&mut self, target: &Blob) -> Result<()> {
        match &mut self.imp {
            LayerImpl::MemoryLoss(ml) => ml.run_hook(target),
            _ => self.spec.err("not a MemoryLoss layer"),
        }
    }

    pub(crate) fn has_loss_hook(&self) -> bool {
        matches!(&self.imp, LayerImpl::MemoryLoss(ml) if ml.hook.is_some())
    }
}
