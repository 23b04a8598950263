//! Network assembly, forward/backward execution and weight snapshots.

use std::collections::{HashMap, HashSet};
use std::io::{Cursor, Read};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::RngCore;

use crate::backend::{Backend, Real};
use crate::error::{Error, Result};
use crate::layers::{LayerSpec, LayerState, LayerType, LossHook};
use crate::prototxt::ProtoNode;
use crate::tensor::{Blob, Shape};

/// Parsed model description.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetDef {
    pub name: Option<String>,
    pub layers: Vec<LayerSpec>,
    /// Top-level fields other than `name` and `layer`.
    pub extra: Vec<ProtoNode>,
}

/// Magic bytes at the start of a weight snapshot.
pub const SNAPSHOT_MAGIC: &[u8; 4] = b"MCWT";
pub const SNAPSHOT_VERSION: u32 = 1;

/// An executable network.
///
/// Layers run in definition order. Each blob has exactly one producer and at
/// most one consumer.
pub struct Net {
    name: String,
    backend: Arc<Backend>,
    layers: Vec<LayerState>,
    bottoms: Vec<Vec<usize>>,
    tops: Vec<Vec<usize>>,
    blobs: Vec<Blob>,
    blob_index: HashMap<String, usize>,
    producer: Vec<usize>,
    consumer: Vec<Option<usize>>,
}

impl std::fmt::Debug for Net {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Net")
            .field("name", &self.name)
            .field("layers", &self.layers)
            .finish_non_exhaustive()
    }
}

impl Net {
    /// Sets up every layer and allocates every blob.
    pub fn build(def: &NetDef, backend: &Arc<Backend>, rng: &mut dyn RngCore) -> Result<Net> {
        let mut net = Net {
            name: def.name.clone().unwrap_or_default(),
            backend: Arc::clone(backend),
            layers: Vec::with_capacity(def.layers.len()),
            bottoms: Vec::new(),
            tops: Vec::new(),
            blobs: Vec::new(),
            blob_index: HashMap::new(),
            producer: Vec::new(),
            consumer: Vec::new(),
        };
        let mut names = HashSet::new();
        for spec in &def.layers {
            if !spec.name.is_empty() && !names.insert(spec.name.as_str()) {
                return spec.err("duplicate layer name");
            }
            let layer_idx = net.layers.len();
            let mut bottom_ids = Vec::with_capacity(spec.bottoms.len());
            for b in &spec.bottoms {
                let id = match net.blob_index.get(b) {
                    Some(&id) => id,
                    None => return spec.err(format!("bottom '{b}' is not produced by an earlier layer")),
                };
                if let Some(other) = net.consumer[id] {
                    return spec.err(format!(
                        "blob '{b}' is already consumed by layer '{}'",
                        net.layers[other].name()
                    ));
                }
                bottom_ids.push(id);
            }
            let shapes: Vec<Shape> = bottom_ids.iter().map(|&i| net.blobs[i].shape()).collect();
            let (state, top_shapes) = LayerState::setup(spec, &shapes, backend, rng)?;
            for &id in &bottom_ids {
                net.consumer[id] = Some(layer_idx);
            }
            let mut top_ids = Vec::with_capacity(spec.tops.len());
            for (t, shape) in spec.tops.iter().zip(top_shapes) {
                if net.blob_index.contains_key(t) {
                    return spec.err(format!("top '{t}' is already produced by another layer"));
                }
                let id = net.blobs.len();
                net.blobs.push(Blob::new(backend, t.clone(), shape)?);
                net.blob_index.insert(t.clone(), id);
                net.producer.push(layer_idx);
                net.consumer.push(None);
                top_ids.push(id);
            }
            net.layers.push(state);
            net.bottoms.push(bottom_ids);
            net.tops.push(top_ids);
        }
        Ok(net)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn backend(&self) -> &Arc<Backend> {
        &self.backend
    }

    pub fn layers(&self) -> &[LayerState] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerState> {
        self.layers.iter().find(|l| l.name() == name)
    }

    fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name() == name)
            .ok_or_else(|| Error::Model(format!("no layer named '{name}'")))
    }

    pub fn blob(&self, name: &str) -> Option<&Blob> {
        self.blob_index.get(name).map(|&i| &self.blobs[i])
    }

    fn blob_id(&self, name: &str) -> Result<usize> {
        self.blob_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Model(format!("no blob named '{name}'")))
    }

    /// All blobs in creation order.
    pub fn blobs(&self) -> &[Blob] {
        &self.blobs
    }

    /// Name of the layer that produces `blob`.
    pub fn producer_of(&self, blob: &str) -> Option<&LayerState> {
        self.blob_index.get(blob).map(|&i| &self.layers[self.producer[i]])
    }

    /// Names of a layer's bottom blobs.
    pub fn bottom_names(&self, layer: &str) -> Result<Vec<&str>> {
        let i = self.layer_index(layer)?;
        Ok(self.bottoms[i].iter().map(|&b| self.blobs[b].name()).collect())
    }

    /// Every learnable parameter blob, in layer order.
    pub fn params(&self) -> impl Iterator<Item = &Blob> {
        self.layers.iter().flat_map(|l| l.params().iter())
    }

    /// Blobs not consumed by any layer other than a MemoryLoss.
    pub fn output_blobs(&self) -> Vec<&Blob> {
        (0..self.blobs.len())
            .filter(|&i| match self.consumer[i] {
                None => true,
                Some(l) => self.layers[l].kind() == LayerType::MemoryLoss,
            })
            .map(|i| &self.blobs[i])
            .collect()
    }

    /// Queues one input item on the named MemoryData layer.
    pub fn enqueue(&mut self, layer: &str, input: &[Real]) -> Result<()> {
        let i = self.layer_index(layer)?;
        self.layers[i].enqueue(input)
    }

    /// Installs a gradient hook on the named MemoryLoss layer.
    pub fn set_loss_hook(&mut self, layer: &str, hook: LossHook) -> Result<()> {
        let i = self.layer_index(layer)?;
        self.layers[i].set_loss_hook(hook)
    }

    fn run_layer_forward(&mut self, i: usize) -> Result<()> {
        let bottoms: Vec<&Blob> = self.bottoms[i].iter().map(|&b| &self.blobs[b]).collect();
        let tops: Vec<&Blob> = self.tops[i].iter().map(|&t| &self.blobs[t]).collect();
        self.layers[i].forward(&bottoms, &tops)
    }

    fn run_layer_backward(&mut self, i: usize) -> Result<()> {
        let bottoms: Vec<&Blob> = self.bottoms[i].iter().map(|&b| &self.blobs[b]).collect();
        let tops: Vec<&Blob> = self.tops[i].iter().map(|&t| &self.blobs[t]).collect();
        self.layers[i].backward(&tops, &bottoms)
    }

    /// Runs every layer's forward pass in order and returns the output blobs.
    pub fn forward(&mut self) -> Result<Vec<&Blob>> {
        for i in 0..self.layers.len() {
            self.run_layer_forward(i)?;
        }
        Ok(self.output_blobs())
    }

    /// Full backward pass, starting from the last layer.
    pub fn backward(&mut self) -> Result<()> {
        for i in (0..self.layers.len()).rev() {
            self.run_layer_backward(i)?;
        }
        Ok(())
    }

    /// Backward pass over the producer of `blob_name` and everything upstream
    /// of it. Layers downstream of the blob are skipped, so whatever diff the
    /// caller placed on the blob is what propagates.
    pub fn backward_from(&mut self, blob_name: &str) -> Result<()> {
        let start = self.producer[self.blob_id(blob_name)?];
        let mut needed = vec![false; self.layers.len()];
        let mut stack = vec![start];
        while let Some(l) = stack.pop() {
            if std::mem::replace(&mut needed[l], true) {
                continue;
            }
            stack.extend(self.bottoms[l].iter().map(|&b| self.producer[b]));
        }
        for i in (0..=start).rev() {
            if needed[i] {
                self.run_layer_backward(i)?;
            }
        }
        Ok(())
    }

    /// Lets the MemoryLoss layer's hook write the diff of `blob_name`, then
    /// back-propagates from that blob.
    pub fn backward_with_loss_hook(&mut self, blob_name: &str) -> Result<()> {
        let id = self.blob_id(blob_name)?;
        let loss = self
            .layers
            .iter()
            .position(|l| l.kind() == LayerType::MemoryLoss && l.has_loss_hook())
            .ok_or_else(|| Error::InvalidState("no MemoryLoss layer with a hook".into()))?;
        self.layers[loss].run_loss_hook(&self.blobs[id])?;
        self.backward_from(blob_name)
    }

    /// Zeroes every parameter diff.
    pub fn clear_param_diffs(&self) -> Result<()> {
        self.params().try_for_each(Blob::zero_diff)
    }

    /// Serializes every parameter blob.
    ///
    /// Layout (all little-endian): magic `MCWT`, version u32, blob count u32,
    /// then per blob a u32 name length, the UTF-8 name, four u32 dims and
    /// `count` f64 values.
    pub fn snapshot_weights(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.write_u32::<LittleEndian>(SNAPSHOT_VERSION)?;
        let params: Vec<&Blob> = self.params().collect();
        out.write_u32::<LittleEndian>(params.len() as u32)?;
        for blob in params {
            let name = blob.name().as_bytes();
            out.write_u32::<LittleEndian>(name.len() as u32)?;
            out.extend_from_slice(name);
            for d in blob.shape().0 {
                out.write_u32::<LittleEndian>(d as u32)?;
            }
            for v in blob.read_data()? {
                out.write_f64::<LittleEndian>(v as f64)?;
            }
        }
        Ok(out)
    }

    /// Loads parameters written by [`Net::snapshot_weights`]. The snapshot
    /// must match this net's parameter count and shapes exactly.
    pub fn restore_weights(&mut self, bytes: &[u8]) -> Result<()> {
        let fmt = |m: String| Error::Format(m);
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic).map_err(|_| fmt("truncated header".into()))?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(fmt("bad magic".into()));
        }
        let rd = |c: &mut Cursor<&[u8]>| c.read_u32::<LittleEndian>().map_err(|_| fmt("truncated snapshot".into()));
        let version = rd(&mut cur)?;
        if version != SNAPSHOT_VERSION {
            return Err(fmt(format!("unsupported version {version}")));
        }
        let count = rd(&mut cur)? as usize;
        let params: Vec<&Blob> = self.params().collect();
        if count != params.len() {
            return Err(fmt(format!(
                "snapshot has {count} parameter blobs, net has {}",
                params.len()
            )));
        }
        let mut staged = Vec::with_capacity(count);
        for blob in &params {
            let len = rd(&mut cur)? as usize;
            let mut name = vec![0u8; len];
            cur.read_exact(&mut name).map_err(|_| fmt("truncated name".into()))?;
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = rd(&mut cur)? as usize;
            }
            if Shape(dims) != blob.shape() {
                return Err(fmt(format!(
                    "blob '{}' has shape {}, snapshot has {}",
                    blob.name(),
                    blob.shape(),
                    Shape(dims)
                )));
            }
            let mut values = Vec::with_capacity(blob.count());
            for _ in 0..blob.count() {
                let v = cur
                    .read_f64::<LittleEndian>()
                    .map_err(|_| fmt("truncated values".into()))?;
                values.push(v as Real);
            }
            staged.push(values);
        }
        if (cur.position() as usize) != bytes.len() {
            return Err(fmt("trailing bytes after snapshot".into()));
        }
        for (blob, values) in params.iter().zip(staged) {
            blob.write_data(&values)?;
        }
        Ok(())
    }

    /// Drops anything left in MemoryData queues.
    pub fn clear_queues(&mut self) {
        self.layers.iter_mut().for_each(LayerState::clear_queue);
    }
}
