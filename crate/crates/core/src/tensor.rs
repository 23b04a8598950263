//! Blobs: NCHW-shaped views over a pair of backend buffers.

use std::fmt;
use std::sync::Arc;

use crate::backend::{Backend, Handle, Real};
use crate::error::{invalid, Result};

/// Four-dimensional NCHW shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    /// A vector of `w` elements, stored as (1,1,1,w).
    pub fn vector(w: usize) -> Self {
        Shape([1, 1, 1, w])
    }

    pub fn count(&self) -> usize {
        self.0.iter().product()
    }

    pub fn num(&self) -> usize {
        self.0[0]
    }

    /// Elements per item of the batch (C·H·W).
    pub fn item_count(&self) -> usize {
        self.0[1] * self.0[2] * self.0[3]
    }

    fn validate(&self) -> Result<()> {
        if self.0.contains(&0) {
            return invalid(format!("shape {self} has a zero dimension"));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "({n},{c},{h},{w})")
    }
}

/// Shaped tensor with a data buffer and a parallel diff (gradient) buffer.
///
/// Both buffers are released back to the backend when the blob drops.
pub struct Blob {
    name: String,
    shape: Shape,
    data: Handle,
    diff: Handle,
    backend: Arc<Backend>,
}

impl fmt::Debug for Blob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Blob")
            .field("name", &self.name)
            .field("shape", &self.shape)
            .field("data", &self.data.id())
            .field("diff", &self.diff.id())
            .finish()
    }
}

impl Blob {
    pub fn new(backend: &Arc<Backend>, name: impl Into<String>, shape: Shape) -> Result<Self> {
        shape.validate()?;
        let data = backend.alloc_buffer(shape.count())?;
        let diff = match backend.alloc_buffer(shape.count()) {
            Ok(h) => h,
            Err(e) => {
                let _ = backend.free_buffer(data);
                return Err(e);
            }
        };
        Ok(Blob {
            name: name.into(),
            shape,
            data,
            diff,
            backend: Arc::clone(backend),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn count(&self) -> usize {
        self.shape.count()
    }

    pub fn data(&self) -> Handle {
        self.data
    }

    pub fn diff(&self) -> Handle {
        self.diff
    }

    pub fn backend(&self) -> &Arc<Backend> {
        &self.backend
    }

    /// Changes the shape. Same-count reshapes keep both buffers; otherwise
    /// fresh zeroed buffers replace them.
    pub fn reshape(&mut self, shape: Shape) -> Result<()> {
        shape.validate()?;
        if shape.count() != self.count() {
            let data = self.backend.alloc_buffer(shape.count())?;
            let diff = self.backend.alloc_buffer(shape.count())?;
            self.backend.free_buffer(self.data)?;
            self.backend.free_buffer(self.diff)?;
            self.data = data;
            self.diff = diff;
        }
        self.shape = shape;
        Ok(())
    }

    pub fn read_data(&self) -> Result<Vec<Real>> {
        self.backend.read(self.data)
    }

    pub fn read_diff(&self) -> Result<Vec<Real>> {
        self.backend.read(self.diff)
    }

    pub fn write_data(&self, values: &[Real]) -> Result<()> {
        self.backend.write(self.data, values)
    }

    pub fn write_diff(&self, values: &[Real]) -> Result<()> {
        self.backend.write(self.diff, values)
    }

    pub fn zero_diff(&self) -> Result<()> {
        self.backend.set(self.count(), 0.0, self.diff)
    }

    pub fn zero_data(&self) -> Result<()> {
        self.backend.set(self.count(), 0.0, self.data)
    }
}

impl Drop for Blob {
    fn drop(&mut self) {
        let _ = self.backend.free_buffer(self.data);
        let _ = self.backend.free_buffer(self.diff);
    }
}
