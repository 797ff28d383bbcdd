//! Rank-4 NHWC tensors: storage, layout permutation, dtype casting, and
//! padding/cropping primitives.
//!
//! Storage is always NHWC row-major (channels fastest); NCHW exists only at
//! import/export boundaries via [`Tensor4::permute_layout`]. FP16 tensors
//! keep their payload as `f32` values that are exactly representable in IEEE
//! binary16, so arithmetic can accumulate in f32 while serialization stays
//! bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Element type of a tensor. F16 payloads are stored widened to f32 but every
/// value is exactly representable in IEEE binary16.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F16,
}

impl Dtype {
    /// Serialized size of one element in bytes.
    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 => 2,
        }
    }

    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F16 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F16),
            c => Err(Error::Format(format!("unknown dtype code {c}"))),
        }
    }
}

/// Memory layout tag for rank-4 tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutTag {
    Nchw,
    Nhwc,
}

/// Padding mode for [`Tensor4::pad`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample: `[1,2,3]` padded by 2 on
    /// each side becomes `[3,2,1,2,3,2,1]`.
    Reflect,
}

const F16_MAX: f32 = 65504.0;
// Smallest magnitude that rounds to binary16 infinity under round-to-nearest-even.
const F16_OVERFLOW_BITS: u32 = 0x477f_f000; // 65520.0f32

/// Round an f32 to the nearest IEEE binary16 value (ties to even), returning
/// the bit pattern. Values that would round to infinity saturate to ±65504
/// and set the flag. NaN maps to a canonical quiet NaN.
pub fn f32_to_f16_bits(x: f32) -> (u16, bool) {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let abs = bits & 0x7fff_ffff;
    if abs > 0x7f80_0000 {
        return (sign | 0x7e00, false); // NaN
    }
    if abs >= F16_OVERFLOW_BITS {
        return (sign | 0x7bff, true); // saturate to ±65504
    }
    if abs < 0x3880_0000 {
        // Below 2^-14: binary16 subnormal range. Value = k * 2^-24 with
        // integer k in [0, 1024); round k to nearest even.
        let k = f64::from(f32::from_bits(abs)) * (1u64 << 24) as f64;
        let r = k.round_ties_even() as u16;
        return (sign | r, false);
    }
    let exp = ((abs >> 23) as i32 - 127 + 15) as u32;
    let mant = abs & 0x007f_ffff;
    let base = (exp << 10) | (mant >> 13);
    let round = mant & 0x1fff;
    let mut h = base;
    // Round to nearest, ties to even. A carry into the exponent is correct;
    // the overflow guard above keeps it from reaching the infinity encoding.
    if round > 0x1000 || (round == 0x1000 && (base & 1) == 1) {
        h += 1;
    }
    (sign | h as u16, false)
}

/// Exact widening of a binary16 bit pattern to f32.
pub fn f16_bits_to_f32(h: u16) -> f32 {
    let sign = u32::from(h & 0x8000) << 16;
    let exp = (h >> 10) & 0x1f;
    let mant = u32::from(h & 0x3ff);
    match exp {
        0 => {
            let mag = mant as f32 * (-24f32).exp2();
            if sign != 0 {
                -mag
            } else {
                mag
            }
        }
        31 => {
            if mant == 0 {
                f32::from_bits(sign | 0x7f80_0000)
            } else {
                f32::from_bits(sign | 0x7fc0_0000)
            }
        }
        _ => f32::from_bits(sign | ((u32::from(exp) + 112) << 23) | (mant << 13)),
    }
}

/// Round an f32 onto the binary16 grid, staying in f32. Returns the rounded
/// value and whether saturation occurred.
pub fn f16_round(x: f32) -> (f32, bool) {
    let (bits, sat) = f32_to_f16_bits(x);
    (f16_bits_to_f32(bits), sat)
}

fn is_f16_exact(x: f32) -> bool {
    let (r, sat) = f16_round(x);
    !sat && (r.to_bits() == x.to_bits() || (r.is_nan() && x.is_nan()))
}

/// Rank-4 numeric array in NHWC row-major order (channels fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    dtype: Dtype,
    data: Vec<f32>,
}

impl Tensor4 {
    /// All-zero F32 tensor with dims `(n, h, w, c)`.
    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 {
            dims,
            dtype: Dtype::F32,
            data: vec![0.0; dims.iter().product()],
        }
    }

    /// Constant-filled F32 tensor.
    pub fn filled(dims: [usize; 4], value: f32) -> Self {
        Tensor4 {
            dims,
            dtype: Dtype::F32,
            data: vec![value; dims.iter().product()],
        }
    }

    /// F32 tensor from an NHWC-ordered buffer. The buffer length must equal
    /// the product of the dims.
    pub fn from_vec(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let want: usize = dims.iter().product();
        if data.len() != want {
            return Err(Error::DimMismatch(format!(
                "buffer length {} does not match dims {:?} (need {})",
                data.len(),
                dims,
                want
            )));
        }
        Ok(Tensor4 {
            dims,
            dtype: Dtype::F32,
            data,
        })
    }

    /// F16 tensor from f32 values. Every value must already sit exactly on
    /// the binary16 grid; use [`Tensor4::cast`] to round arbitrary values.
    pub fn from_vec_f16(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let mut t = Self::from_vec(dims, data)?;
        if let Some(v) = t.data.iter().find(|v| !is_f16_exact(**v)) {
            return Err(Error::Format(format!(
                "value {v} is not exactly representable in binary16"
            )));
        }
        t.dtype = Dtype::F16;
        Ok(t)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn n(&self) -> usize {
        self.dims[0]
    }

    pub fn h(&self) -> usize {
        self.dims[1]
    }

    pub fn w(&self) -> usize {
        self.dims[2]
    }

    pub fn c(&self) -> usize {
        self.dims[3]
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
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

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub(crate) fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Flat NHWC index of `(n, h, w, c)`.
    #[inline]
    pub fn idx(&self, n: usize, h: usize, w: usize, c: usize) -> usize {
        ((n * self.dims[1] + h) * self.dims[2] + w) * self.dims[3] + c
    }

    #[inline]
    pub fn at(&self, n: usize, h: usize, w: usize, c: usize) -> f32 {
        self.data[self.idx(n, h, w, c)]
    }

    /// Reinterpret this tensor's dims under `from` and produce the logically
    /// identical tensor stored under `to`. No values change.
    pub fn permute_layout(&self, from: LayoutTag, to: LayoutTag) -> Result<Tensor4> {
        if from == to {
            return Err(Error::Layout(format!(
                "permute requires distinct layouts, got {from:?} -> {to:?}"
            )));
        }
        // Only the NCHW<->NHWC pair exists; `from != to` pins the direction.
        let out = match from {
            LayoutTag::Nchw => {
                let [n, c, h, w] = self.dims;
                let mut data = vec![0.0f32; self.data.len()];
                for ni in 0..n {
                    for ci in 0..c {
                        for hi in 0..h {
                            for wi in 0..w {
                                let src = ((ni * c + ci) * h + hi) * w + wi;
                                let dst = ((ni * h + hi) * w + wi) * c + ci;
                                data[dst] = self.data[src];
                            }
                        }
                    }
                }
                Tensor4 {
                    dims: [n, h, w, c],
                    dtype: self.dtype,
                    data,
                }
            }
            LayoutTag::Nhwc => {
                let [n, h, w, c] = self.dims;
                let mut data = vec![0.0f32; self.data.len()];
                for ni in 0..n {
                    for hi in 0..h {
                        for wi in 0..w {
                            for ci in 0..c {
                                let src = ((ni * h + hi) * w + wi) * c + ci;
                                let dst = ((ni * c + ci) * h + hi) * w + wi;
                                data[dst] = self.data[src];
                            }
                        }
                    }
                }
                Tensor4 {
                    dims: [n, c, h, w],
                    dtype: self.dtype,
                    data,
                }
            }
        };
        Ok(out)
    }

    /// Cast to `to`. F32->F16 rounds to nearest even and saturates overflow
    /// to ±65504; the second return value counts saturated elements.
    /// F16->F32 is exact.
    pub fn cast(&self, to: Dtype) -> (Tensor4, usize) {
        match (self.dtype, to) {
            (Dtype::F32, Dtype::F16) => {
                let mut saturated = 0usize;
                let data = self
                    .data
                    .iter()
                    .map(|&v| {
                        let (r, sat) = f16_round(v);
                        if sat {
                            saturated += 1;
                        }
                        r
                    })
                    .collect();
                (
                    Tensor4 {
                        dims: self.dims,
                        dtype: Dtype::F16,
                        data,
                    },
                    saturated,
                )
            }
            (Dtype::F16, Dtype::F32) => (
                Tensor4 {
                    dims: self.dims,
                    dtype: Dtype::F32,
                    data: self.data.clone(),
                },
                0,
            ),
            _ => (self.clone(), 0),
        }
    }

    /// Pad the spatial dims by `[[top, bottom], [left, right]]`.
    pub fn pad(&self, amounts: [[usize; 2]; 2], mode: PadMode) -> Result<Tensor4> {
        let [n, h, w, c] = self.dims;
        let [[top, bottom], [left, right]] = amounts;
        if mode == PadMode::Reflect {
            let max_y = top.max(bottom);
            let max_x = left.max(right);
            if max_y >= h || max_x >= w {
                return Err(Error::Pad(format!(
                    "reflect pad {amounts:?} must be smaller than extents ({h}, {w})"
                )));
            }
        }
        let oh = h + top + bottom;
        let ow = w + left + right;
        let mut out = Tensor4::zeros([n, oh, ow, c]);
        out.dtype = self.dtype;
        let reflect = |i: isize, extent: usize| -> usize {
            if i < 0 {
                (-i) as usize
            } else if i as usize >= extent {
                2 * (extent - 1) - i as usize
            } else {
                i as usize
            }
        };
        for ni in 0..n {
            for oy in 0..oh {
                let sy = oy as isize - top as isize;
                for ox in 0..ow {
                    let sx = ox as isize - left as isize;
                    let dst = out.idx(ni, oy, ox, 0);
                    let in_bounds =
                        sy >= 0 && (sy as usize) < h && sx >= 0 && (sx as usize) < w;
                    match mode {
                        PadMode::Zero if !in_bounds => continue, // already zero
                        _ => {
                            let (ry, rx) = if in_bounds {
                                (sy as usize, sx as usize)
                            } else {
                                (reflect(sy, h), reflect(sx, w))
                            };
                            let src = self.idx(ni, ry, rx, 0);
                            out.data[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Extract the spatial window starting at `origin = (y, x)` with extents
    /// `size = (h, w)`. Channels and batch are preserved.
    pub fn crop(&self, origin: (usize, usize), size: (usize, usize)) -> Result<Tensor4> {
        let [n, h, w, c] = self.dims;
        let (y0, x0) = origin;
        let (ch, cw) = size;
        if y0 + ch > h || x0 + cw > w {
            return Err(Error::Bounds(format!(
                "crop origin {origin:?} size {size:?} exceeds extents ({h}, {w})"
            )));
        }
        let mut out = Tensor4::zeros([n, ch, cw, c]);
        out.dtype = self.dtype;
        for ni in 0..n {
            for y in 0..ch {
                let src = self.idx(ni, y0 + y, x0, 0);
                let dst = out.idx(ni, y, 0, 0);
                out.data[dst..dst + cw * c].copy_from_slice(&self.data[src..src + cw * c]);
            }
        }
        Ok(out)
    }

    /// Write the `.t4` fixture format: magic "T4RW", u8 dtype code, four
    /// little-endian u32 dims (NHWC), then the raw little-endian payload.
    pub fn write_t4<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"T4RW")?;
        w.write_all(&[self.dtype.code()])?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        match self.dtype {
            Dtype::F32 => {
                for v in &self.data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            Dtype::F16 => {
                for v in &self.data {
                    let (bits, _) = f32_to_f16_bits(*v);
                    w.write_all(&bits.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_t4<R: Read>(mut r: R) -> Result<Tensor4> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"T4RW" {
            return Err(Error::Format(format!("bad .t4 magic {magic:?}")));
        }
        let mut code = [0u8; 1];
        r.read_exact(&mut code)?;
        let dtype = Dtype::from_code(code[0])?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let count: usize = dims.iter().product();
        let mut data = Vec::with_capacity(count);
        match dtype {
            Dtype::F32 => {
                for _ in 0..count {
                    let mut b = [0u8; 4];
                    r.read_exact(&mut b)?;
                    data.push(f32::from_le_bytes(b));
                }
            }
            Dtype::F16 => {
                for _ in 0..count {
                    let mut b = [0u8; 2];
                    r.read_exact(&mut b)?;
                    data.push(f16_bits_to_f32(u16::from_le_bytes(b)));
                }
            }
        }
        Ok(Tensor4 { dims, dtype, data })
    }

    pub fn save_t4<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_t4(std::io::BufWriter::new(f))
    }

    pub fn load_t4<P: AsRef<Path>>(path: P) -> Result<Tensor4> {
        let f = std::fs::File::open(path)?;
        Self::read_t4(std::io::BufReader::new(f))
    }

    /// Largest absolute elementwise difference. Dims must match.
    pub fn max_abs_diff(&self, other: &Tensor4) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (f64::from(*a) - f64::from(*b)).abs())
            .fold(0.0, f64::max))
    }
}

/// Largest finite binary16 value.
pub const F16_MAX_VALUE: f32 = F16_MAX;
