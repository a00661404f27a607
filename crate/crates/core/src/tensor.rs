//! Dense rank-4 tensors and the naive convolution oracle.
//!
//! Activations use NHWC layout, weights use RSCK (kernel-row, kernel-col,
//! input-channel, filter). Channel slices of a filter are therefore
//! contiguous, which keeps channel-tile handling in the plan builder cheap.
//! All tensor arithmetic is 32-bit floating point.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic bytes of the flat tensor container.
pub const TENSOR_MAGIC: &[u8; 4] = b"PLT4";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f32>,
}

impl Tensor4 {
    pub fn zeros(dims: [usize; 4]) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; len],
        }
    }

    pub fn from_data(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if data.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "dims {:?} need {} elements, got {}",
                dims,
                expect,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Tensor4::from_data"));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, i0: usize, i1: usize, i2: usize, i3: usize) -> usize {
        ((i0 * self.dims[1] + i1) * self.dims[2] + i2) * self.dims[3] + i3
    }

    #[inline]
    pub fn get(&self, i0: usize, i1: usize, i2: usize, i3: usize) -> f32 {
        self.data[self.idx(i0, i1, i2, i3)]
    }

    #[inline]
    pub fn set(&mut self, i0: usize, i1: usize, i2: usize, i3: usize, v: f32) {
        let i = self.idx(i0, i1, i2, i3);
        self.data[i] = v;
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Writes the flat little-endian container: magic, 4 u32 dims, raw f32s.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::CorruptFile("bad tensor magic".into()));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            data.push(f32::from_le_bytes(b));
        }
        Self::from_data(dims, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

/// Static description of a 2D convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    /// Kernel height.
    pub r: usize,
    /// Kernel width.
    pub s: usize,
    /// Input channels.
    pub c: usize,
    /// Filters (output channels).
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(r: usize, s: usize, c: usize, k: usize, stride: usize, padding: usize) -> Result<Self> {
        if r == 0 || s == 0 || c == 0 || k == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "conv spec dimensions and stride must be positive".into(),
            ));
        }
        Ok(Self { r, s, c, k, stride, padding })
    }

    /// Output spatial extent for an input extent, or an error when the
    /// kernel does not fit.
    pub fn out_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if padded < kernel {
            return Err(Error::ShapeMismatch(format!(
                "kernel {} larger than padded input {}",
                kernel, padded
            )));
        }
        Ok((padded - kernel) / self.stride + 1)
    }

    pub fn out_dims(&self, in_dims: [usize; 4]) -> Result<[usize; 4]> {
        let [n, h, w, c] = in_dims;
        if c != self.c {
            return Err(Error::ShapeMismatch(format!(
                "input has {} channels, spec expects {}",
                c, self.c
            )));
        }
        Ok([n, self.out_extent(h, self.r)?, self.out_extent(w, self.s)?, self.k])
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.r, self.s, self.c, self.k]
    }
}

/// Exact arithmetic-operation tally for a convolution execution strategy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub additions: u64,
    pub subtractions: u64,
    pub multiplies: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.additions + self.subtractions + self.multiplies
    }
}

/// Reference convolution: a direct seven-loop implementation. Every plan
/// execution is checked against this.
pub fn naive_conv2d(input: &Tensor4, weights: &Tensor4, spec: &ConvSpec) -> Result<Tensor4> {
    let [n, h, w, c_in] = input.dims();
    if weights.dims() != spec.weight_dims() {
        return Err(Error::ShapeMismatch(format!(
            "weights {:?} do not match spec {:?}",
            weights.dims(),
            spec.weight_dims()
        )));
    }
    let out_dims = spec.out_dims(input.dims())?;
    let [_, oh, ow, k_out] = out_dims;
    let mut out = Tensor4::zeros(out_dims);
    let pad = spec.padding as isize;
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for r in 0..spec.r {
                    let iy = (oy * spec.stride + r) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for s in 0..spec.s {
                        let ix = (ox * spec.stride + s) as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        for ci in 0..c_in {
                            let a = input.get(ni, iy as usize, ix as usize, ci);
                            if a == 0.0 {
                                continue;
                            }
                            let wbase = weights.idx(r, s, ci, 0);
                            let obase = out.idx(ni, oy, ox, 0);
                            for ki in 0..k_out {
                                out.data_mut()[obase + ki] += a * weights.data()[wbase + ki];
                            }
                        }
                    }
                }
            }
        }
    }
    if !out.data().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("naive_conv2d"));
    }
    Ok(out)
}

/// Operation count of the dense computation that is unaware of repetition
/// and sparsity: one multiply per weight-activation pair, and a sum of
/// R*S*C products per output element.
pub fn count_naive_ops(spec: &ConvSpec, out_dims: [usize; 4]) -> OpCounts {
    let [n, oh, ow, _] = out_dims;
    let pixels = (n * oh * ow) as u64;
    let taps = (spec.r * spec.s * spec.c) as u64;
    let k = spec.k as u64;
    OpCounts {
        additions: (taps - 1) * k * pixels,
        subtractions: 0,
        multiplies: taps * k * pixels,
    }
}
