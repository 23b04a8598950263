//! Handle-based math backend.
//!
//! Every buffer and subsystem object lives in a [`Backend`]'s lookup table and
//! is addressed by an opaque [`Handle`]. Callers never hold raw memory; they
//! pass handles to the kernels, either directly through the typed methods or
//! through [`Backend::dispatch`], which takes a numeric function index plus a
//! flat parameter list and routes to the same kernel code.
//!
//! Handle ids come from a monotone counter and are never recycled, so any use
//! of a freed handle is reported as [`Error::DanglingHandle`].

use std::num::NonZeroU64;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

/// Element type of every buffer.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
/// Element type of every buffer.
#[cfg(feature = "f32")]
pub type Real = f32;

/// Tolerance for results that are exact up to rounding.
#[cfg(test)]
pub(crate) const EXACT_TOL: Real = if cfg!(feature = "f32") { 1e-5 } else { 1e-12 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HandleKind {
    Buffer,
    Subsystem,
}

/// Opaque key into a backend's lookup table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Handle {
    id: u64,
    kind: HandleKind,
}

impl Handle {
    /// The reserved null handle. Never issued by a registry.
    pub const NULL: Handle = Handle {
        id: 0,
        kind: HandleKind::Buffer,
    };

    fn issued(id: NonZeroU64, kind: HandleKind) -> Self {
        Handle { id: id.get(), kind }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn kind(&self) -> HandleKind {
        self.kind
    }

    /// Encoding used inside dispatch parameter lists.
    pub fn as_param(&self) -> f64 {
        self.id as f64
    }
}

enum Slot {
    Buffer(Vec<Real>),
    Rng(Box<ChaCha8Rng>),
}

impl Slot {
    fn kind(&self) -> HandleKind {
        match self {
            Slot::Buffer(_) => HandleKind::Buffer,
            Slot::Rng(_) => HandleKind::Subsystem,
        }
    }
}

/// The lookup table. Slot `i` holds the resource for id `i + 1`; freed slots
/// stay `None` forever so ids are never reissued.
#[derive(Default)]
struct Registry {
    slots: Vec<Option<Slot>>,
    live: usize,
}

impl Registry {
    fn insert(&mut self, slot: Slot) -> Handle {
        let kind = slot.kind();
        self.slots.push(Some(slot));
        self.live += 1;
        let id = NonZeroU64::new(self.slots.len() as u64).expect("slot ids start at 1");
        Handle::issued(id, kind)
    }

    fn slot(&self, id: u64) -> Result<&Slot> {
        if id == 0 {
            return Err(Error::DanglingHandle(0));
        }
        self.slots
            .get((id - 1) as usize)
            .and_then(Option::as_ref)
            .ok_or(Error::DanglingHandle(id))
    }

    fn slot_mut(&mut self, id: u64) -> Result<&mut Slot> {
        if id == 0 {
            return Err(Error::DanglingHandle(0));
        }
        self.slots
            .get_mut((id - 1) as usize)
            .and_then(Option::as_mut)
            .ok_or(Error::DanglingHandle(id))
    }

    fn remove(&mut self, h: Handle) -> Result<Slot> {
        let idx = match h.id {
            0 => return Err(Error::DanglingHandle(0)),
            id => (id - 1) as usize,
        };
        match self.slots.get_mut(idx) {
            Some(entry @ Some(_)) => {
                self.live -= 1;
                Ok(entry.take().expect("checked live"))
            }
            _ => Err(Error::DanglingHandle(h.id)),
        }
    }

    fn buf(&self, h: Handle) -> Result<&[Real]> {
        match self.slot(h.id)? {
            Slot::Buffer(v) => Ok(v),
            Slot::Rng(_) => invalid(format!("handle {} is not a buffer", h.id)),
        }
    }

    fn buf_mut(&mut self, h: Handle) -> Result<&mut Vec<Real>> {
        match self.slot_mut(h.id)? {
            Slot::Buffer(v) => Ok(v),
            Slot::Rng(_) => invalid(format!("handle {} is not a buffer", h.id)),
        }
    }

    /// Temporarily moves an output buffer out of its slot so inputs can be
    /// borrowed alongside it. Must be paired with `restore`.
    fn take(&mut self, h: Handle) -> Result<Vec<Real>> {
        Ok(std::mem::take(self.buf_mut(h)?))
    }

    fn restore(&mut self, h: Handle, v: Vec<Real>) {
        if let Ok(slot) = self.buf_mut(h) {
            *slot = v;
        }
    }

    fn handle_for(&self, id: u64) -> Result<Handle> {
        let kind = self.slot(id)?.kind();
        Ok(Handle { id, kind })
    }
}

/// Stable function indices for [`Backend::dispatch`].
///
/// | index | kernel            | parameters                                         | result  |
/// |-------|-------------------|----------------------------------------------------|---------|
/// | 1     | `set`             | n, alpha, x                                        | –       |
/// | 2     | `copy`            | n, x, y                                            | –       |
/// | 3     | `scal`            | n, alpha, x                                        | –       |
/// | 4     | `axpy`            | n, alpha, x, y                                     | –       |
/// | 5     | `gemm`            | trans_a, trans_b, m, n, k, alpha, a, b, beta, c    | –       |
/// | 6     | `dot`             | n, x, y                                            | [x·y]   |
/// | 7     | `amax`            | n, x                                               | [max|x|]|
/// | 20    | `relu_forward`    | n, x, y                                            | –       |
/// | 21    | `relu_backward`   | n, top_diff, bottom_data, bottom_diff              | –       |
/// | 22    | `sigmoid_forward` | n, x, y                                            | –       |
/// | 23    | `sigmoid_backward`| n, top_diff, top_data, bottom_diff                 | –       |
/// | 24    | `softmax_forward` | outer, channels, x, y                              | –       |
/// | 25    | `softmax_backward`| outer, channels, top_diff, top_data, bottom_diff   | –       |
/// | 40    | `rmsprop_update`  | n, lr, decay, eps, diff, cache, data               | –       |
/// | 50    | `rng_uniform`     | rng, n, lo, hi, x                                  | –       |
///
/// Handles are passed as their numeric id; flags as 0/1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Kernel {
    Set = 1,
    Copy = 2,
    Scal = 3,
    Axpy = 4,
    Gemm = 5,
    Dot = 6,
    Amax = 7,
    ReluForward = 20,
    ReluBackward = 21,
    SigmoidForward = 22,
    SigmoidBackward = 23,
    SoftmaxForward = 24,
    SoftmaxBackward = 25,
    RmspropUpdate = 40,
    RngUniform = 50,
}

impl Kernel {
    pub const ALL: [Kernel; 15] = [
        Kernel::Set,
        Kernel::Copy,
        Kernel::Scal,
        Kernel::Axpy,
        Kernel::Gemm,
        Kernel::Dot,
        Kernel::Amax,
        Kernel::ReluForward,
        Kernel::ReluBackward,
        Kernel::SigmoidForward,
        Kernel::SigmoidBackward,
        Kernel::SoftmaxForward,
        Kernel::SoftmaxBackward,
        Kernel::RmspropUpdate,
        Kernel::RngUniform,
    ];

    pub fn index(self) -> u32 {
        self as u32
    }

    pub fn from_index(index: u32) -> Option<Kernel> {
        Kernel::ALL.iter().copied().find(|k| k.index() == index)
    }

    pub fn arity(self) -> usize {
        match self {
            Kernel::Amax => 2,
            Kernel::Set | Kernel::Copy | Kernel::Scal | Kernel::Dot => 3,
            Kernel::ReluForward | Kernel::SigmoidForward => 3,
            Kernel::Axpy | Kernel::SoftmaxForward => 4,
            Kernel::ReluBackward | Kernel::SigmoidBackward => 4,
            Kernel::SoftmaxBackward | Kernel::RngUniform => 5,
            Kernel::RmspropUpdate => 7,
            Kernel::Gemm => 10,
        }
    }
}

/// CPU math backend owning the handle registry.
///
/// Registry mutations are serialized behind a mutex, so a `Backend` can be
/// shared between threads (usually through an `Arc`). Buffer contents have no
/// finer-grained locking: concurrent writers to one handle race logically.
#[derive(Default)]
pub struct Backend {
    registry: Mutex<Registry>,
}

fn check_len(what: &str, have: usize, need: usize) -> Result<()> {
    if have < need {
        return invalid(format!("{what}: buffer holds {have} elements, need {need}"));
    }
    Ok(())
}

impl Backend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of live handles (buffers and subsystems).
    pub fn live_count(&self) -> usize {
        self.registry.lock().live
    }

    /// Allocates a zero-filled buffer of `length` elements.
    pub fn alloc_buffer(&self, length: usize) -> Result<Handle> {
        if length == 0 {
            return invalid("buffer length must be at least 1");
        }
        Ok(self.registry.lock().insert(Slot::Buffer(vec![0.0; length])))
    }

    pub fn free_buffer(&self, h: Handle) -> Result<()> {
        let mut reg = self.registry.lock();
        reg.buf(h)?;
        reg.remove(h).map(drop)
    }

    /// Creates a seeded random generator subsystem object.
    pub fn create_rng(&self, seed: u64) -> Handle {
        self.registry
            .lock()
            .insert(Slot::Rng(Box::new(ChaCha8Rng::seed_from_u64(seed))))
    }

    /// Releases any live handle, buffer or subsystem.
    pub fn free(&self, h: Handle) -> Result<()> {
        self.registry.lock().remove(h).map(drop)
    }

    pub fn len(&self, h: Handle) -> Result<usize> {
        Ok(self.registry.lock().buf(h)?.len())
    }

    /// Copies `values` into the buffer starting at offset 0.
    pub fn write(&self, h: Handle, values: &[Real]) -> Result<()> {
        let mut reg = self.registry.lock();
        let buf = reg.buf_mut(h)?;
        check_len("write", buf.len(), values.len())?;
        buf[..values.len()].copy_from_slice(values);
        Ok(())
    }

    /// Returns the full contents of the buffer.
    pub fn read(&self, h: Handle) -> Result<Vec<Real>> {
        Ok(self.registry.lock().buf(h)?.to_vec())
    }

    /// Runs `f` over a borrowed view of the buffer without copying it out.
    pub fn with_buffer<T>(&self, h: Handle, f: impl FnOnce(&[Real]) -> T) -> Result<T> {
        Ok(f(self.registry.lock().buf(h)?))
    }

    pub fn with_buffer_mut<T>(&self, h: Handle, f: impl FnOnce(&mut [Real]) -> T) -> Result<T> {
        Ok(f(self.registry.lock().buf_mut(h)?))
    }

    /// Runs an elementwise kernel that reads `inputs` and writes `out`.
    /// An input aliasing the output sees the output's pre-kernel contents.
    fn map_into<const N: usize>(
        &self,
        what: &str,
        n: usize,
        inputs: [Handle; N],
        out: Handle,
        f: impl FnOnce([&[Real]; N], &mut [Real]),
    ) -> Result<()> {
        let mut reg = self.registry.lock();
        let mut dst = reg.take(out)?;
        let result = (|| {
            check_len(what, dst.len(), n)?;
            let aliased: Vec<Option<Vec<Real>>> = inputs
                .iter()
                .map(|h| (h.id == out.id).then(|| dst[..n].to_vec()))
                .collect();
            let mut views: [&[Real]; N] = [&[]; N];
            for (i, h) in inputs.iter().enumerate() {
                views[i] = match &aliased[i] {
                    Some(copy) => copy.as_slice(),
                    None => {
                        let b = reg.buf(*h)?;
                        check_len(what, b.len(), n)?;
                        &b[..n]
                    }
                };
            }
            f(views, &mut dst[..n]);
            Ok(())
        })();
        reg.restore(out, dst);
        result
    }

    pub fn set(&self, n: usize, alpha: Real, x: Handle) -> Result<()> {
        self.map_into("set", n, [], x, |[], x| x.fill(alpha))
    }

    pub fn copy(&self, n: usize, x: Handle, y: Handle) -> Result<()> {
        self.map_into("copy", n, [x], y, |[x], y| y.copy_from_slice(x))
    }

    pub fn scal(&self, n: usize, alpha: Real, x: Handle) -> Result<()> {
        self.map_into("scal", n, [], x, |[], x| x.iter_mut().for_each(|v| *v *= alpha))
    }

    /// y ← alpha·x + y
    pub fn axpy(&self, n: usize, alpha: Real, x: Handle, y: Handle) -> Result<()> {
        self.map_into("axpy", n, [x], y, |[x], y| {
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi += alpha * xi;
            }
        })
    }

    /// C ← alpha·op(A)·op(B) + beta·C, all row-major. op(A) is m×k, op(B)
    /// is k×n and C is m×n. C may not alias A or B.
    #[allow(clippy::too_many_arguments)]
    pub fn gemm(
        &self,
        trans_a: bool,
        trans_b: bool,
        m: usize,
        n: usize,
        k: usize,
        alpha: Real,
        a: Handle,
        b: Handle,
        beta: Real,
        c: Handle,
    ) -> Result<()> {
        if c.id == a.id || c.id == b.id {
            return invalid("gemm: output aliases an input");
        }
        let mut reg = self.registry.lock();
        let mut dst = reg.take(c)?;
        let result = (|| {
            let a = reg.buf(a)?;
            let b = reg.buf(b)?;
            check_len("gemm A", a.len(), m * k)?;
            check_len("gemm B", b.len(), k * n)?;
            check_len("gemm C", dst.len(), m * n)?;
            gemm_kernel(trans_a, trans_b, m, n, k, alpha, a, b, beta, &mut dst[..m * n]);
            Ok(())
        })();
        reg.restore(c, dst);
        result
    }

    pub fn dot(&self, n: usize, x: Handle, y: Handle) -> Result<Real> {
        let reg = self.registry.lock();
        let (x, y) = (reg.buf(x)?, reg.buf(y)?);
        check_len("dot", x.len(), n)?;
        check_len("dot", y.len(), n)?;
        Ok(x[..n].iter().zip(&y[..n]).map(|(a, b)| a * b).sum())
    }

    /// Largest absolute value among the first `n` elements (0 when n = 0).
    pub fn amax(&self, n: usize, x: Handle) -> Result<Real> {
        let reg = self.registry.lock();
        let x = reg.buf(x)?;
        check_len("amax", x.len(), n)?;
        Ok(x[..n].iter().fold(0.0, |m: Real, v| m.max(v.abs())))
    }

    pub fn relu_forward(&self, n: usize, x: Handle, y: Handle) -> Result<()> {
        self.map_into("relu_forward", n, [x], y, |[x], y| {
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi = xi.max(0.0);
            }
        })
    }

    pub fn relu_backward(
        &self,
        n: usize,
        top_diff: Handle,
        bottom_data: Handle,
        bottom_diff: Handle,
    ) -> Result<()> {
        self.map_into(
            "relu_backward",
            n,
            [top_diff, bottom_data],
            bottom_diff,
            |[td, bd], out| {
                for i in 0..out.len() {
                    out[i] = if bd[i] > 0.0 { td[i] } else { 0.0 };
                }
            },
        )
    }

    pub fn sigmoid_forward(&self, n: usize, x: Handle, y: Handle) -> Result<()> {
        self.map_into("sigmoid_forward", n, [x], y, |[x], y| {
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi = 1.0 / (1.0 + (-xi).exp());
            }
        })
    }

    pub fn sigmoid_backward(
        &self,
        n: usize,
        top_diff: Handle,
        top_data: Handle,
        bottom_diff: Handle,
    ) -> Result<()> {
        self.map_into(
            "sigmoid_backward",
            n,
            [top_diff, top_data],
            bottom_diff,
            |[td, y], out| {
                for i in 0..out.len() {
                    out[i] = td[i] * y[i] * (1.0 - y[i]);
                }
            },
        )
    }

    /// Max-shifted softmax over `outer` rows of `channels` values each.
    pub fn softmax_forward(&self, outer: usize, channels: usize, x: Handle, y: Handle) -> Result<()> {
        self.map_into("softmax_forward", outer * channels, [x], y, |[x], y| {
            if channels == 0 {
                return;
            }
            for (row_in, row_out) in x.chunks(channels).zip(y.chunks_mut(channels)) {
                let max = row_in.iter().copied().fold(Real::NEG_INFINITY, Real::max);
                let mut sum = 0.0;
                for (o, &v) in row_out.iter_mut().zip(row_in) {
                    *o = (v - max).exp();
                    sum += *o;
                }
                row_out.iter_mut().for_each(|o| *o /= sum);
            }
        })
    }

    /// Jacobian-vector product of softmax: dx_i = y_i·(dy_i − Σ_j dy_j·y_j).
    pub fn softmax_backward(
        &self,
        outer: usize,
        channels: usize,
        top_diff: Handle,
        top_data: Handle,
        bottom_diff: Handle,
    ) -> Result<()> {
        self.map_into(
            "softmax_backward",
            outer * channels,
            [top_diff, top_data],
            bottom_diff,
            |[td, y], out| {
                if channels == 0 {
                    return;
                }
                for ((dy, yr), dx) in td
                    .chunks(channels)
                    .zip(y.chunks(channels))
                    .zip(out.chunks_mut(channels))
                {
                    let inner: Real = dy.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for i in 0..channels {
                        dx[i] = yr[i] * (dy[i] - inner);
                    }
                }
            },
        )
    }

    /// cache ← decay·cache + (1−decay)·diff²; data ← data − lr·diff/(√cache + eps)
    #[allow(clippy::too_many_arguments)]
    pub fn rmsprop_update(
        &self,
        n: usize,
        lr: Real,
        decay: Real,
        eps: Real,
        diff: Handle,
        cache: Handle,
        data: Handle,
    ) -> Result<()> {
        if cache.id == data.id || cache.id == diff.id || data.id == diff.id {
            return invalid("rmsprop_update: buffers must be distinct");
        }
        let mut reg = self.registry.lock();
        let mut cache_buf = reg.take(cache)?;
        let mut data_buf = match reg.take(data) {
            Ok(v) => v,
            Err(e) => {
                reg.restore(cache, cache_buf);
                return Err(e);
            }
        };
        let result = (|| {
            let g = reg.buf(diff)?;
            check_len("rmsprop diff", g.len(), n)?;
            check_len("rmsprop cache", cache_buf.len(), n)?;
            check_len("rmsprop data", data_buf.len(), n)?;
            for i in 0..n {
                let c = decay * cache_buf[i] + (1.0 - decay) * g[i] * g[i];
                cache_buf[i] = c;
                data_buf[i] -= lr * g[i] / (c.sqrt() + eps);
            }
            Ok(())
        })();
        reg.restore(cache, cache_buf);
        reg.restore(data, data_buf);
        result
    }

    /// Fills the first `n` elements of `x` with uniform draws in [lo, hi)
    /// from the generator subsystem `rng`.
    pub fn rng_uniform(&self, rng: Handle, n: usize, lo: Real, hi: Real, x: Handle) -> Result<()> {
        if !(lo <= hi) {
            return invalid(format!("rng_uniform: empty range [{lo}, {hi})"));
        }
        let mut reg = self.registry.lock();
        let mut dst = reg.take(x)?;
        let result = (|| {
            check_len("rng_uniform", dst.len(), n)?;
            let gen = match reg.slot_mut(rng.id)? {
                Slot::Rng(g) => g,
                Slot::Buffer(_) => return invalid("rng_uniform: handle is not a generator"),
            };
            for v in &mut dst[..n] {
                let u: f64 = gen.gen();
                *v = lo + (hi - lo) * u as Real;
            }
            Ok(())
        })();
        reg.restore(x, dst);
        result
    }

    /// Calls a kernel by function index with a flat parameter list.
    /// Returns the kernel's scalar results (empty for in-place kernels).
    pub fn dispatch(&self, index: u32, params: &[f64]) -> Result<Vec<f64>> {
        let kernel = Kernel::from_index(index).ok_or(Error::UnknownFunction(index))?;
        if params.len() != kernel.arity() {
            return invalid(format!(
                "{kernel:?} takes {} parameters, got {}",
                kernel.arity(),
                params.len()
            ));
        }
        let p = Params { raw: params, backend: self };
        match kernel {
            Kernel::Set => self.set(p.count(0)?, p.real(1), p.handle(2)?)?,
            Kernel::Copy => self.copy(p.count(0)?, p.handle(1)?, p.handle(2)?)?,
            Kernel::Scal => self.scal(p.count(0)?, p.real(1), p.handle(2)?)?,
            Kernel::Axpy => self.axpy(p.count(0)?, p.real(1), p.handle(2)?, p.handle(3)?)?,
            Kernel::Gemm => self.gemm(
                p.flag(0)?,
                p.flag(1)?,
                p.count(2)?,
                p.count(3)?,
                p.count(4)?,
                p.real(5),
                p.handle(6)?,
                p.handle(7)?,
                p.real(8),
                p.handle(9)?,
            )?,
            Kernel::Dot => {
                return Ok(vec![self.dot(p.count(0)?, p.handle(1)?, p.handle(2)?)? as f64]);
            }
            Kernel::Amax => return Ok(vec![self.amax(p.count(0)?, p.handle(1)?)? as f64]),
            Kernel::ReluForward => self.relu_forward(p.count(0)?, p.handle(1)?, p.handle(2)?)?,
            Kernel::ReluBackward => {
                self.relu_backward(p.count(0)?, p.handle(1)?, p.handle(2)?, p.handle(3)?)?
            }
            Kernel::SigmoidForward => {
                self.sigmoid_forward(p.count(0)?, p.handle(1)?, p.handle(2)?)?
            }
            Kernel::SigmoidBackward => {
                self.sigmoid_backward(p.count(0)?, p.handle(1)?, p.handle(2)?, p.handle(3)?)?
            }
            Kernel::SoftmaxForward => {
                self.softmax_forward(p.count(0)?, p.count(1)?, p.handle(2)?, p.handle(3)?)?
            }
            Kernel::SoftmaxBackward => self.softmax_backward(
                p.count(0)?,
                p.count(1)?,
                p.handle(2)?,
                p.handle(3)?,
                p.handle(4)?,
            )?,
            Kernel::RmspropUpdate => self.rmsprop_update(
                p.count(0)?,
                p.real(1),
                p.real(2),
                p.real(3),
                p.handle(4)?,
                p.handle(5)?,
                p.handle(6)?,
            )?,
            Kernel::RngUniform => self.rng_uniform(
                p.handle(0)?,
                p.count(1)?,
                p.real(2),
                p.real(3),
                p.handle(4)?,
            )?,
        }
        Ok(Vec::new())
    }
}

struct Params<'a> {
    raw: &'a [f64],
    backend: &'a Backend,
}

impl Params<'_> {
    fn count(&self, i: usize) -> Result<usize> {
        let v = self.raw[i];
        if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
            return invalid(format!("parameter {i} must be a non-negative integer, got {v}"));
        }
        Ok(v as usize)
    }

    fn flag(&self, i: usize) -> Result<bool> {
        match self.raw[i] {
            0.0 => Ok(false),
            1.0 => Ok(true),
            v => invalid(format!("parameter {i} must be 0 or 1, got {v}")),
        }
    }

    fn real(&self, i: usize) -> Real {
        self.raw[i] as Real
    }

    fn handle(&self, i: usize) -> Result<Handle> {
        let id = self.count(i)? as u64;
        self.backend.registry.lock().handle_for(id)
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm_kernel(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: Real,
    a: &[Real],
    b: &[Real],
    beta: Real,
    c: &mut [Real],
) {
    if beta == 0.0 {
        c.fill(0.0);
    } else if beta != 1.0 {
        c.iter_mut().for_each(|v| *v *= beta);
    }
    if alpha == 0.0 {
        return;
    }
    let a_at = |i: usize, p: usize| if trans_a { a[p * m + i] } else { a[i * k + p] };
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let s = alpha * a_at(i, p);
            if trans_b {
                for (j, cv) in row.iter_mut().enumerate() {
                    *cv += s * b[j * k + p];
                }
            } else {
                for (cv, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *cv += s * bv;
                }
            }
        }
    }
}
