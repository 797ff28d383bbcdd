//! The complete operator set of both networks: forward passes, reverse-mode
//! vector-Jacobian products, and MAC accounting.
//!
//! Every op accumulates per output element in a fixed order (bias, then
//! kh -> kw -> cin). The optimized convolution only reorders work *across*
//! output elements, so it is bit-identical to the reference path, and tiled
//! execution is bit-identical to whole-image execution.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Spatial padding behaviour of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadSpec {
    /// Zero padding of (k-1)/2 on each side; output extent is ceil(in/s).
    SameZero,
    /// No padding; output extent is floor((in-k)/s)+1.
    Valid,
}

/// Shape contract of a convolution layer. Bias is always present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: PadSpec,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl ConvSpec {
    pub fn new(
        kh: usize,
        kw: usize,
        stride: usize,
        padding: PadSpec,
        in_ch: usize,
        out_ch: usize,
    ) -> Result<Self> {
        let spec = ConvSpec {
            kh,
            kw,
            stride,
            padding,
            in_ch,
            out_ch,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.kh) || !(1..=3).contains(&self.kw) {
            return Err(Error::Config(format!(
                "kernel extents must be in 1..=3, got {}x{}",
                self.kh, self.kw
            )));
        }
        if !(1..=2).contains(&self.stride) {
            return Err(Error::Config(format!("stride must be 1 or 2, got {}", self.stride)));
        }
        if self.in_ch == 0 || self.out_ch == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        // An even kernel with same padding only keeps the ceil(in/s) extent
        // law when the stride equals the kernel extent.
        if self.padding == PadSpec::SameZero {
            if self.kh % 2 == 0 && self.stride != self.kh {
                return Err(Error::Config(format!(
                    "same-zero padding with kernel height {} requires stride {}",
                    self.kh, self.kh
                )));
            }
            if self.kw % 2 == 0 && self.stride != self.kw {
                return Err(Error::Config(format!(
                    "same-zero padding with kernel width {} requires stride {}",
                    self.kw, self.kw
                )));
            }
        }
        Ok(())
    }

    /// Zero padding applied on each side of an axis.
    pub fn pad_amounts(&self) -> (usize, usize) {
        match self.padding {
            PadSpec::SameZero => ((self.kh - 1) / 2, (self.kw - 1) / 2),
            PadSpec::Valid => (0, 0),
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = self.pad_amounts();
        let eh = h + 2 * ph;
        let ew = w + 2 * pw;
        if eh < self.kh || ew < self.kw {
            return Err(Error::DimMismatch(format!(
                "input {h}x{w} too small for {}x{} kernel",
                self.kh, self.kw
            )));
        }
        Ok((
            (eh - self.kh) / self.stride + 1,
            (ew - self.kw) / self.stride + 1,
        ))
    }

    pub fn weight_len(&self) -> usize {
        self.kh * self.kw * self.in_ch * self.out_ch
    }
}

/// Which convolution kernel to run. Both produce bit-identical outputs; the
/// reference path exists as the plain-loop ground truth for parity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvImpl {
    Reference,
    #[default]
    Optimized,
}

fn check_conv_args(x: &Tensor4, spec: &ConvSpec, weights: &[f32], bias: &[f32]) -> Result<()> {
    spec.validate()?;
    if x.c() != spec.in_ch {
        return Err(Error::Channels(format!(
            "input has {} channels, spec expects {}",
            x.c(),
            spec.in_ch
        )));
    }
    if weights.len() != spec.weight_len() {
        return Err(Error::DimMismatch(format!(
            "weight buffer {} != {}x{}x{}x{}",
            weights.len(),
            spec.kh,
            spec.kw,
            spec.in_ch,
            spec.out_ch
        )));
    }
    if bias.len() != spec.out_ch {
        return Err(Error::DimMismatch(format!(
            "bias length {} != out channels {}",
            bias.len(),
            spec.out_ch
        )));
    }
    Ok(())
}

/// Direct 2-D convolution over an NHWC tensor. Weights are laid out
/// `(kh, kw, cin, cout)` with cout fastest.
pub fn conv2d(
    x: &Tensor4,
    spec: &ConvSpec,
    weights: &[f32],
    bias: &[f32],
    imp: ConvImpl,
) -> Result<Tensor4> {
    check_conv_args(x, spec, weights, bias)?;
    let [n, h, w, cin] = x.dims();
    let (oh, ow) = spec.out_dims(h, w)?;
    let (ph, pw) = spec.pad_amounts();
    let (kh, kw, s, cout) = (spec.kh, spec.kw, spec.stride, spec.out_ch);
    let xd = x.data();
    let mut out = Tensor4::zeros([n, oh, ow, cout]);
    let od = out.data_mut();

    match imp {
        ConvImpl::Optimized => {
            od.par_chunks_mut(ow * cout).enumerate().for_each(|(row, orow)| {
                let ni = row / oh;
                let oy = row % oh;
                let mut acc = vec![0.0f32; cout];
                for ox in 0..ow {
                    acc.copy_from_slice(bias);
                    for ky in 0..kh {
                        let iy = (oy * s + ky) as isize - ph as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * s + kx) as isize - pw as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            let xoff = ((ni * h + iy as usize) * w + ix as usize) * cin;
                            let woff = ((ky * kw + kx) * cin) * cout;
                            for ci in 0..cin {
                                let xv = xd[xoff + ci];
                                let wrow = &weights[woff + ci * cout..woff + (ci + 1) * cout];
                                for (a, &wv) in acc.iter_mut().zip(wrow) {
                                    *a += xv * wv;
                                }
                            }
                        }
                    }
                    orow[ox * cout..(ox + 1) * cout].copy_from_slice(&acc);
                }
            });
        }
        ConvImpl::Reference => {
            for ni in 0..n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        for oc in 0..cout {
                            let mut acc = bias[oc];
                            for ky in 0..kh {
                                let iy = (oy * s + ky) as isize - ph as isize;
                                if iy < 0 || iy as usize >= h {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * s + kx) as isize - pw as isize;
                                    if ix < 0 || ix as usize >= w {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        let xv = xd
                                            [((ni * h + iy as usize) * w + ix as usize) * cin + ci];
                                        let wv =
                                            weights[((ky * kw + kx) * cin + ci) * cout + oc];
                                        acc += xv * wv;
                                    }
                                }
                            }
                            od[((ni * oh + oy) * ow + ox) * cout + oc] = acc;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its input, weights, and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor4,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// VJP of [`conv2d`]. Per-sample partials are computed independently and
/// reduced in batch order so the result is deterministic under any thread
/// count.
pub fn conv2d_vjp(
    x: &Tensor4,
    spec: &ConvSpec,
    weights: &[f32],
    upstream: &Tensor4,
) -> Result<ConvGrads> {
    check_conv_args(x, spec, weights, &vec![0.0; spec.out_ch])?;
    let [n, h, w, cin] = x.dims();
    let (oh, ow) = spec.out_dims(h, w)?;
    if upstream.dims() != [n, oh, ow, spec.out_ch] {
        return Err(Error::DimMismatch(format!(
            "upstream dims {:?} != output dims {:?}",
            upstream.dims(),
            [n, oh, ow, spec.out_ch]
        )));
    }
    let (ph, pw) = spec.pad_amounts();
    let (kh, kw, s, cout) = (spec.kh, spec.kw, spec.stride, spec.out_ch);
    let xd = x.data();
    let gd = upstream.data();

    let mut gx = Tensor4::zeros([n, h, w, cin]);
    let gx_chunk = h * w * cin;
    let per_sample: Vec<(Vec<f32>, Vec<f32>)> = gx
        .data_mut()
        .par_chunks_mut(gx_chunk)
        .enumerate()
        .map(|(ni, gx_s)| {
            let mut gw = vec![0.0f32; weights.len()];
            let mut gb = vec![0.0f32; cout];
            for oy in 0..oh {
                for ox in 0..ow {
                    let grow = &gd[((ni * oh + oy) * ow + ox) * cout..][..cout];
                    for (b, g) in gb.iter_mut().zip(grow) {
                        *b += g;
                    }
                    for ky in 0..kh {
                        let iy = (oy * s + ky) as isize - ph as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * s + kx) as isize - pw as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            let xoff = ((ni * h + iy as usize) * w + ix as usize) * cin;
                            let gxoff = ((iy as usize * w) + ix as usize) * cin;
                            let woff = ((ky * kw + kx) * cin) * cout;
                            for ci in 0..cin {
                                let xv = xd[xoff + ci];
                                let wrow = &weights[woff + ci * cout..][..cout];
                                let gwrow = &mut gw[woff + ci * cout..][..cout];
                                let mut dot = 0.0f32;
                                for oc in 0..cout {
                                    dot += grow[oc] * wrow[oc];
                                    gwrow[oc] += xv * grow[oc];
                                }
                                gx_s[gxoff + ci] += dot;
                            }
                        }
                    }
                }
            }
            (gw, gb)
        })
        .collect();

    let mut gw = vec![0.0f32; weights.len()];
    let mut gb = vec![0.0f32; cout];
    for (gw_s, gb_s) in per_sample {
        for (a, b) in gw.iter_mut().zip(&gw_s) {
            *a += b;
        }
        for (a, b) in gb.iter_mut().zip(&gb_s) {
            *a += b;
        }
    }
    Ok(ConvGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

/// 2x2 stride-2 transposed convolution: each input pixel stamps a weighted
/// 2x2 block, exactly doubling the spatial extents. Weights are laid out
/// `(2, 2, cin, cout)`.
pub fn tconv2d_2x2_s2(x: &Tensor4, weights: &[f32], bias: &[f32]) -> Result<Tensor4> {
    let [n, h, w, cin] = x.dims();
    let cout = bias.len();
    if weights.len() != 4 * cin * cout {
        return Err(Error::Channels(format!(
            "tconv weight buffer {} != 2x2x{cin}x{cout}",
            weights.len()
        )));
    }
    let xd = x.data();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor4::zeros([n, oh, ow, cout]);
    let od = out.data_mut();
    od.par_chunks_mut(ow * cout).enumerate().for_each(|(row, orow)| {
        let ni = row / oh;
        let oy = row % oh;
        let iy = oy / 2;
        let di = oy % 2;
        let mut acc = vec![0.0f32; cout];
        for ix in 0..w {
            let xoff = ((ni * h + iy) * w + ix) * cin;
            for dj in 0..2 {
                acc.copy_from_slice(bias);
                let woff = (di * 2 + dj) * cin * cout;
                for ci in 0..cin {
                    let xv = xd[xoff + ci];
                    let wrow = &weights[woff + ci * cout..][..cout];
                    for (a, &wv) in acc.iter_mut().zip(wrow) {
                        *a += xv * wv;
                    }
                }
                let ox = 2 * ix + dj;
                orow[ox * cout..(ox + 1) * cout].copy_from_slice(&acc);
            }
        }
    });
    Ok(out)
}

/// VJP of [`tconv2d_2x2_s2`].
pub fn tconv2d_2x2_s2_vjp(
    x: &Tensor4,
    weights: &[f32],
    upstream: &Tensor4,
) -> Result<ConvGrads> {
    let [n, h, w, cin] = x.dims();
    let cout = weights.len() / (4 * cin);
    if weights.len() != 4 * cin * cout || cout == 0 {
        return Err(Error::Channels("tconv weight buffer shape mismatch".into()));
    }
    if upstream.dims() != [n, 2 * h, 2 * w, cout] {
        return Err(Error::DimMismatch(format!(
            "upstream dims {:?} != {:?}",
            upstream.dims(),
            [n, 2 * h, 2 * w, cout]
        )));
    }
    let xd = x.data();
    let gd = upstream.data();
    let (oh, ow) = (2 * h, 2 * w);

    let mut gx = Tensor4::zeros([n, h, w, cin]);
    let gx_chunk = h * w * cin;
    let per_sample: Vec<(Vec<f32>, Vec<f32>)> = gx
        .data_mut()
        .par_chunks_mut(gx_chunk)
        .enumerate()
        .map(|(ni, gx_s)| {
            let mut gw = vec![0.0f32; weights.len()];
            let mut gb = vec![0.0f32; cout];
            for iy in 0..h {
                for ix in 0..w {
                    let xoff = ((ni * h + iy) * w + ix) * cin;
                    let gxoff = (iy * w + ix) * cin;
                    for di in 0..2 {
                        for dj in 0..2 {
                            let grow = &gd
                                [((ni * oh + 2 * iy + di) * ow + 2 * ix + dj) * cout..][..cout];
                            for (b, g) in gb.iter_mut().zip(grow) {
                                *b += g;
                            }
                            let woff = (di * 2 + dj) * cin * cout;
                            for ci in 0..cin {
                                let xv = xd[xoff + ci];
                                let wrow = &weights[woff + ci * cout..][..cout];
                                let gwrow = &mut gw[woff + ci * cout..][..cout];
                                let mut dot = 0.0f32;
                                for oc in 0..cout {
                                    dot += grow[oc] * wrow[oc];
                                    gwrow[oc] += xv * grow[oc];
                                }
                                gx_s[gxoff + ci] += dot;
                            }
                        }
                    }
                }
            }
            (gw, gb)
        })
        .collect();

    let mut gw = vec![0.0f32; weights.len()];
    let mut gb = vec![0.0f32; cout];
    for (gw_s, gb_s) in per_sample {
        for (a, b) in gw.iter_mut().zip(&gw_s) {
            *a += b;
        }
        for (a, b) in gb.iter_mut().zip(&gb_s) {
            *a += b;
        }
    }
    Ok(ConvGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// VJP of ReLU; the subgradient at exactly 0 is 0.
pub fn relu_vjp(x: &Tensor4, upstream: &Tensor4) -> Result<Tensor4> {
    if x.dims() != upstream.dims() {
        return Err(Error::DimMismatch("relu upstream dims".into()));
    }
    let mut g = upstream.clone();
    for (gv, xv) in g.data_mut().iter_mut().zip(x.data()) {
        if *xv <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

pub fn prelu(x: &Tensor4, alpha: &[f32]) -> Result<Tensor4> {
    let c = x.c();
    if alpha.len() != c {
        return Err(Error::Channels(format!(
            "prelu alpha length {} != channels {c}",
            alpha.len()
        )));
    }
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if *v < 0.0 {
            *v *= alpha[i % c];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PreluGrads {
    pub input: Tensor4,
    pub alpha: Vec<f32>,
}

pub fn prelu_vjp(x: &Tensor4, alpha: &[f32], upstream: &Tensor4) -> Result<PreluGrads> {
    let c = x.c();
    if alpha.len() != c {
        return Err(Error::Channels("prelu alpha length".into()));
    }
    if x.dims() != upstream.dims() {
        return Err(Error::DimMismatch("prelu upstream dims".into()));
    }
    let mut gx = upstream.clone();
    let mut ga = vec![0.0f32; c];
    for (i, (gv, xv)) in gx.data_mut().iter_mut().zip(x.data()).enumerate() {
        if *xv <= 0.0 {
            ga[i % c] += *gv * *xv;
            *gv *= alpha[i % c];
        }
    }
    Ok(PreluGrads { input: gx, alpha: ga })
}

/// Replicate every pixel into a 2x2 block; spatial dims double.
pub fn nearest_up2(x: &Tensor4) -> Tensor4 {
    let [n, h, w, c] = x.dims();
    let mut out = Tensor4::zeros([n, 2 * h, 2 * w, c]);
    let xd = x.data();
    let od = out.data_mut();
    let ow = 2 * w;
    for ni in 0..n {
        for oy in 0..2 * h {
            let iy = oy / 2;
            for ox in 0..ow {
                let ix = ox / 2;
                let src = ((ni * h + iy) * w + ix) * c;
                let dst = ((ni * 2 * h + oy) * ow + ox) * c;
                od[dst..dst + c].copy_from_slice(&xd[src..src + c]);
            }
        }
    }
    out
}

/// VJP of [`nearest_up2`]: sums each 2x2 block of the upstream gradient.
pub fn nearest_up2_vjp(x: &Tensor4, upstream: &Tensor4) -> Result<Tensor4> {
    let [n, h, w, c] = x.dims();
    if upstream.dims() != [n, 2 * h, 2 * w, c] {
        return Err(Error::DimMismatch("nearest_up2 upstream dims".into()));
    }
    let gd = upstream.data();
    let mut gx = Tensor4::zeros([n, h, w, c]);
    let gxd = gx.data_mut();
    let ow = 2 * w;
    for ni in 0..n {
        for iy in 0..h {
            for ix in 0..w {
                let dst = ((ni * h + iy) * w + ix) * c;
                for di in 0..2 {
                    for dj in 0..2 {
                        let src = ((ni * 2 * h + 2 * iy + di) * ow + 2 * ix + dj) * c;
                        for ci in 0..c {
                            gxd[dst + ci] += gd[src + ci];
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// Concatenate along channels; `a` occupies the first `a.c()` channels.
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    let [n, h, w, ca] = a.dims();
    let [nb, hb, wb, cb] = b.dims();
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::DimMismatch(format!(
            "concat spatial dims {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = Tensor4::zeros([n, h, w, ca + cb]);
    let od = out.data_mut();
    let (ad, bd) = (a.data(), b.data());
    for p in 0..n * h * w {
        od[p * (ca + cb)..p * (ca + cb) + ca].copy_from_slice(&ad[p * ca..(p + 1) * ca]);
        od[p * (ca + cb) + ca..(p + 1) * (ca + cb)].copy_from_slice(&bd[p * cb..(p + 1) * cb]);
    }
    Ok(out)
}

/// VJP of [`concat_channels`]: splits the upstream gradient at channel `ca`.
pub fn concat_channels_vjp(ca: usize, cb: usize, upstream: &Tensor4) -> Result<(Tensor4, Tensor4)> {
    let [n, h, w, c] = upstream.dims();
    if c != ca + cb {
        return Err(Error::Channels(format!(
            "upstream channels {c} != {ca}+{cb}"
        )));
    }
    let mut ga = Tensor4::zeros([n, h, w, ca]);
    let mut gb = Tensor4::zeros([n, h, w, cb]);
    let gd = upstream.data();
    for p in 0..n * h * w {
        ga.data_mut()[p * ca..(p + 1) * ca].copy_from_slice(&gd[p * c..p * c + ca]);
        gb.data_mut()[p * cb..(p + 1) * cb].copy_from_slice(&gd[p * c + ca..(p + 1) * c]);
    }
    Ok((ga, gb))
}

pub fn add(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch(format!(
            "add dims {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = a.clone();
    for (o, bv) in out.data_mut().iter_mut().zip(b.data()) {
        *o += bv;
    }
    Ok(out)
}

pub fn clip01(x: &Tensor4) -> Tensor4 {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

/// VJP of [`clip01`]: passes the gradient only where 0 < x < 1 (open
/// interval; the boundary gets zero gradient).
pub fn clip01_vjp(x: &Tensor4, upstream: &Tensor4) -> Result<Tensor4> {
    if x.dims() != upstream.dims() {
        return Err(Error::DimMismatch("clip01 upstream dims".into()));
    }
    let mut g = upstream.clone();
    for (gv, xv) in g.data_mut().iter_mut().zip(x.data()) {
        if !(*xv > 0.0 && *xv < 1.0) {
            *gv = 0.0;
        }
    }
    Ok(g)
}

/// Multiply-accumulate count of a convolution at the given output extents.
pub fn mac_count(spec: &ConvSpec, out_h: usize, out_w: usize) -> u64 {
    (spec.kh * spec.kw * spec.in_ch * spec.out_ch) as u64 * out_h as u64 * out_w as u64
}

/// MAC count of a 2x2 stride-2 transposed convolution at the given *input*
/// extents (each input pixel drives one 2x2 stamp).
pub fn tconv2x2_macs(cin: usize, cout: usize, in_h: usize, in_w: usize) -> u64 {
    (4 * cin * cout) as u64 * in_h as u64 * in_w as u64
}
