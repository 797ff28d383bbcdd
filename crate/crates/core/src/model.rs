//! Teacher and student network builders, parameter initialization and
//! counting, and the `LDNW` weight file format.
//!
//! The student is an encoder-decoder over `level_widths` with one stride-2
//! 3x3 downsample per level, LiteDenoisingBlocks (f -> f/2 -> f with ReLU and
//! a local residual), nearest-neighbor upsampling with a 3x3 refinement conv,
//! and global residual learning: `out = clip01(body(x) + x)`.
//!
//! The teacher is a U-Net with an InputBlock (two 3x3 convs + PReLU),
//! DenoisingBlocks (three f/2-wide feature groups densely concatenated to the
//! running tensor, final conv back to f, PReLU everywhere, residual add),
//! 2x2 stride-2 downsampling convs, 2x2 transposed-conv upsampling with a
//! skip concat and 3x3 fusion conv + PReLU, and an OutputBlock of two 3x3
//! convs (no activation after the last).

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, LayerGraph, NodeId, ParamKind};
use crate::ops::PadSpec;
use crate::tensor::{f32_to_f16_bits, Dtype, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Teacher,
    Student,
}

/// Declarative description of a network: level widths, bottleneck width, and
/// blocks per stage. The base width f0 is `level_widths[0]`; alignment is
/// `2^level_widths.len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchConfig {
    pub kind: ModelKind,
    pub input_channels: usize,
    pub level_widths: Vec<usize>,
    pub bottleneck_width: usize,
    pub enc_blocks: usize,
    pub bottleneck_blocks: usize,
    pub dec_blocks: usize,
}

impl ArchConfig {
    /// Deployment student: f0 = 16 scaling across four downsampling stages,
    /// bottleneck 256, one block per stage. Totals 1,963,411 parameters.
    pub fn student_default() -> Self {
        ArchConfig {
            kind: ModelKind::Student,
            input_channels: 3,
            level_widths: vec![16, 32, 64, 128],
            bottleneck_width: 256,
            enc_blocks: 1,
            bottleneck_blocks: 1,
            dec_blocks: 1,
        }
    }

    /// High-capacity teacher: three levels 64/128/256, bottleneck 512, two
    /// DenoisingBlocks per stage. Totals 40,140,483 parameters.
    pub fn teacher_default() -> Self {
        ArchConfig {
            kind: ModelKind::Teacher,
            input_channels: 3,
            level_widths: vec![64, 128, 256],
            bottleneck_width: 512,
            enc_blocks: 2,
            bottleneck_blocks: 2,
            dec_blocks: 2,
        }
    }

    /// Same-shaped config with different widths, keeping the kind's block
    /// structure.
    pub fn with_widths(kind: ModelKind, widths: Vec<usize>, bottleneck: usize) -> Self {
        let mut cfg = match kind {
            ModelKind::Student => Self::student_default(),
            ModelKind::Teacher => Self::teacher_default(),
        };
        cfg.level_widths = widths;
        cfg.bottleneck_width = bottleneck;
        cfg
    }

    pub fn base_width(&self) -> usize {
        self.level_widths.first().copied().unwrap_or(0)
    }

    /// Required divisor of input extents: one factor of 2 per level.
    pub fn alignment(&self) -> usize {
        1 << self.level_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be positive".into()));
        }
        if self.level_widths.is_empty() {
            return Err(Error::Config("at least one encoder level required".into()));
        }
        if self.enc_blocks == 0 || self.bottleneck_blocks == 0 || self.dec_blocks == 0 {
            return Err(Error::Config("block counts must be at least 1".into()));
        }
        for &w in self.level_widths.iter().chain([&self.bottleneck_width]) {
            if w < 2 || w % 2 != 0 {
                // Both block kinds split features into f/2 groups.
                return Err(Error::Config(format!(
                    "widths must be even and >= 2, got {w}"
                )));
            }
        }
        Ok(())
    }

    /// Build the layer graph for this config.
    pub fn build_graph(&self) -> Result<LayerGraph> {
        self.validate()?;
        match self.kind {
            ModelKind::Student => Ok(build_student(self)),
            ModelKind::Teacher => Ok(build_teacher(self)),
        }
    }
}

/// LiteDenoisingBlock: 3x3 conv f -> f/2, ReLU, 3x3 conv f/2 -> f, residual
/// add with no activation after the add.
fn lite_block(g: &mut GraphBuilder, x: NodeId, f: usize, name: &str) -> NodeId {
    let c1 = g
        .conv(x, 3, 1, PadSpec::SameZero, f, f / 2, &format!("{name}.reduce"))
        .expect("validated config");
    let r = g.relu(c1, &format!("{name}.reduce"));
    let c2 = g
        .conv(r, 3, 1, PadSpec::SameZero, f / 2, f, &format!("{name}.expand"))
        .expect("validated config");
    g.add(x, c2, &format!("{name}.residual"))
}

/// DenoisingBlock: running tensor grows f -> 3f/2 -> 2f -> 5f/2 through three
/// f/2-wide groups, final conv maps back to f, PReLU after every conv,
/// residual add with the block input.
fn denoising_block(g: &mut GraphBuilder, x0: NodeId, f: usize, name: &str) -> NodeId {
    let half = f / 2;
    let c1 = g
        .conv(x0, 3, 1, PadSpec::SameZero, f, half, &format!("{name}.conv1"))
        .expect("validated config");
    let g1 = g.prelu(c1, half, &format!("{name}.conv1"));
    let cat1 = g.concat(x0, g1, &format!("{name}.cat1"));
    let c2 = g
        .conv(cat1, 3, 1, PadSpec::SameZero, f + half, half, &format!("{name}.conv2"))
        .expect("validated config");
    let g2 = g.prelu(c2, half, &format!("{name}.conv2"));
    let cat2 = g.concat(cat1, g2, &format!("{name}.cat2"));
    let c3 = g
        .conv(cat2, 3, 1, PadSpec::SameZero, 2 * f, half, &format!("{name}.conv3"))
        .expect("validated config");
    let g3 = g.prelu(c3, half, &format!("{name}.conv3"));
    let cat3 = g.concat(cat2, g3, &format!("{name}.cat3"));
    let c4 = g
        .conv(cat3, 3, 1, PadSpec::SameZero, 2 * f + half, f, &format!("{name}.conv4"))
        .expect("validated config");
    let g4 = g.prelu(c4, f, &format!("{name}.conv4"));
    g.add(x0, g4, &format!("{name}.residual"))
}

fn build_student(cfg: &ArchConfig) -> LayerGraph {
    let widths = &cfg.level_widths;
    let levels = widths.len();
    let (mut g, input) = GraphBuilder::new(cfg.input_channels);

    let stem = g
        .conv(input, 3, 1, PadSpec::SameZero, cfg.input_channels, widths[0], "stem")
        .expect("validated config");
    let mut cur = g.relu(stem, "stem");

    let mut skips: Vec<NodeId> = Vec::with_capacity(levels);
    for (i, &w) in widths.iter().enumerate() {
        for b in 0..cfg.enc_blocks {
            cur = lite_block(&mut g, cur, w, &format!("enc{}.block{}", i + 1, b + 1));
        }
        skips.push(cur);
        let next = if i + 1 < levels {
            widths[i + 1]
        } else {
            cfg.bottleneck_width
        };
        cur = g
            .conv(cur, 3, 2, PadSpec::SameZero, w, next, &format!("enc{}.down", i + 1))
            .expect("validated config");
    }

    for b in 0..cfg.bottleneck_blocks {
        cur = lite_block(
            &mut g,
            cur,
            cfg.bottleneck_width,
            &format!("bottleneck.block{}", b + 1),
        );
    }

    for i in (0..levels).rev() {
        let w = widths[i];
        let upper = if i + 1 < levels {
            widths[i + 1]
        } else {
            cfg.bottleneck_width
        };
        let up = g.nearest_up2(cur, &format!("dec{}.up", i + 1));
        let cat = g.concat(up, skips[i], &format!("dec{}.cat", i + 1));
        let refine = g
            .conv(cat, 3, 1, PadSpec::SameZero, upper + w, w, &format!("dec{}.refine", i + 1))
            .expect("validated config");
        cur = g.relu(refine, &format!("dec{}.refine", i + 1));
        for b in 0..cfg.dec_blocks {
            cur = lite_block(&mut g, cur, w, &format!("dec{}.block{}", i + 1, b + 1));
        }
    }

    let out = g
        .conv(cur, 3, 1, PadSpec::SameZero, widths[0], cfg.input_channels, "output")
        .expect("validated config");
    let residual = g.add(out, input, "global_residual");
    let clipped = g.clip01(residual, "clip01");
    g.finish(clipped, cfg.alignment())
}

fn build_teacher(cfg: &ArchConfig) -> LayerGraph {
    let widths = &cfg.level_widths;
    let levels = widths.len();
    let w0 = widths[0];
    let (mut g, input) = GraphBuilder::new(cfg.input_channels);

    let c1 = g
        .conv(input, 3, 1, PadSpec::SameZero, cfg.input_channels, w0, "input.conv1")
        .expect("validated config");
    let a1 = g.prelu(c1, w0, "input.conv1");
    let c2 = g
        .conv(a1, 3, 1, PadSpec::SameZero, w0, w0, "input.conv2")
        .expect("validated config");
    let mut cur = g.prelu(c2, w0, "input.conv2");

    let mut skips: Vec<NodeId> = Vec::with_capacity(levels);
    for (i, &w) in widths.iter().enumerate() {
        for b in 0..cfg.enc_blocks {
            cur = denoising_block(&mut g, cur, w, &format!("enc{}.block{}", i + 1, b + 1));
        }
        skips.push(cur);
        let next = if i + 1 < levels {
            widths[i + 1]
        } else {
            cfg.bottleneck_width
        };
        cur = g
            .conv(cur, 2, 2, PadSpec::SameZero, w, next, &format!("enc{}.down", i + 1))
            .expect("validated config");
    }

    for b in 0..cfg.bottleneck_blocks {
        cur = denoising_block(
            &mut g,
            cur,
            cfg.bottleneck_width,
            &format!("bottleneck.block{}", b + 1),
        );
    }

    for i in (0..levels).rev() {
        let w = widths[i];
        let upper = if i + 1 < levels {
            widths[i + 1]
        } else {
            cfg.bottleneck_width
        };
        let up = g.tconv2x2(cur, upper, w, &format!("dec{}.up", i + 1));
        let cat = g.concat(up, skips[i], &format!("dec{}.cat", i + 1));
        let fuse = g
            .conv(cat, 3, 1, PadSpec::SameZero, 2 * w, w, &format!("dec{}.fuse", i + 1))
            .expect("validated config");
        cur = g.prelu(fuse, w, &format!("dec{}.fuse", i + 1));
        for b in 0..cfg.dec_blocks {
            cur = denoising_block(&mut g, cur, w, &format!("dec{}.block{}", i + 1, b + 1));
        }
    }

    let o1 = g
        .conv(cur, 3, 1, PadSpec::SameZero, w0, w0, "output.conv1")
        .expect("validated config");
    let oa = g.prelu(o1, w0, "output.conv1");
    let o2 = g
        .conv(oa, 3, 1, PadSpec::SameZero, w0, cfg.input_channels, "output.conv2")
        .expect("validated config");
    g.finish(o2, cfg.alignment())
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
    pub dtype: Dtype,
}

impl Param {
    pub fn value_count(&self) -> usize {
        self.data.len()
    }
}

/// Ordered, named parameter tensors matching a graph's parameter table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    params: Vec<Param>,
}

impl ModelParams {
    /// He-style initialization: conv weights ~ Normal(0, sqrt(2/(kh*kw*cin))),
    /// biases zero, PReLU alphas 0.25. Deterministic for a given seed.
    pub fn init_he(graph: &LayerGraph, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = graph
            .params()
            .iter()
            .map(|spec| {
                let count = spec.value_count();
                let data = match spec.kind {
                    ParamKind::ConvWeight | ParamKind::TConvWeight => {
                        let fan_in = spec.dims[0] * spec.dims[1] * spec.dims[2];
                        let std = (2.0 / fan_in as f64).sqrt();
                        let dist = Normal::new(0.0f64, std).expect("std > 0");
                        (0..count).map(|_| dist.sample(&mut rng) as f32).collect()
                    }
                    ParamKind::Bias => vec![0.0f32; count],
                    ParamKind::PreluAlpha => vec![0.25f32; count],
                };
                Param {
                    name: spec.name.clone(),
                    dims: spec.dims.clone(),
                    data,
                    dtype: Dtype::F32,
                }
            })
            .collect();
        ModelParams { params }
    }

    /// All-zero parameters. For the student this is the identity denoiser.
    pub fn zeros(graph: &LayerGraph) -> ModelParams {
        let params = graph
            .params()
            .iter()
            .map(|spec| Param {
                name: spec.name.clone(),
                dims: spec.dims.clone(),
                data: vec![0.0f32; spec.value_count()],
                dtype: Dtype::F32,
            })
            .collect();
        ModelParams { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn data(&self, id: usize) -> &[f32] {
        &self.params[id].data
    }

    pub fn param(&self, id: usize) -> &Param {
        &self.params[id]
    }

    pub fn param_mut(&mut self, id: usize) -> &mut Param {
        &mut self.params[id]
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total number of scalar values across all tensors.
    pub fn total_values(&self) -> u64 {
        self.params.iter().map(|p| p.data.len() as u64).sum()
    }

    /// Cast every tensor; returns the new params and the total saturation
    /// count (F32 -> F16 only).
    pub fn cast(&self, dtype: Dtype) -> (ModelParams, usize) {
        let mut saturated = 0usize;
        let params = self
            .params
            .iter()
            .map(|p| {
                let t = Tensor4::from_vec([1, 1, 1, p.data.len()], p.data.clone())
                    .expect("flat tensor");
                let src = if p.dtype == Dtype::F16 {
                    // Stored values are already on the f16 grid.
                    Tensor4::from_vec_f16([1, 1, 1, p.data.len()], p.data.clone())
                        .expect("f16 invariant")
                } else {
                    t
                };
                let (cast, sat) = src.cast(dtype);
                saturated += sat;
                Param {
                    name: p.name.clone(),
                    dims: p.dims.clone(),
                    data: cast.into_data(),
                    dtype,
                }
            })
            .collect();
        (ModelParams { params }, saturated)
    }

    /// Write the `LDNW` container: magic, u32 version = 1, u32 tensor count;
    /// per tensor u16 name length, UTF-8 name, u8 dtype, u8 rank, rank u32
    /// dims, little-endian payload.
    pub fn write_ldnw<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"LDNW")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            let code = match p.dtype {
                Dtype::F32 => 0u8,
                Dtype::F16 => 1u8,
            };
            w.write_all(&[code, p.dims.len() as u8])?;
            for d in &p.dims {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            match p.dtype {
                Dtype::F32 => {
                    for v in &p.data {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                Dtype::F16 => {
                    for v in &p.data {
                        let (bits, _) = f32_to_f16_bits(*v);
                        w.write_all(&bits.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_ldnw<R: Read>(mut r: R) -> Result<ModelParams> {
        fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        }
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"LDNW" {
            return Err(Error::Format(format!("bad LDNW magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(Error::Format(format!("unsupported LDNW version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut params = Vec::with_capacity(count);
        let mut seen = HashSet::new();
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2)?;
            let name_len = u16::from_le_bytes(b2) as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|e| Error::Format(format!("bad tensor name: {e}")))?;
            if !seen.insert(name.clone()) {
                return Err(Error::Format(format!("duplicate tensor name '{name}'")));
            }
            let mut hdr = [0u8; 2];
            r.read_exact(&mut hdr)?;
            let dtype = match hdr[0] {
                0 => Dtype::F32,
                1 => Dtype::F16,
                c => return Err(Error::Format(format!("unknown dtype code {c}"))),
            };
            let rank = hdr[1] as usize;
            if rank == 0 || rank > 4 {
                return Err(Error::Format(format!("unsupported rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u32(&mut r)? as usize);
            }
            let n: usize = dims.iter().product();
            let mut data = Vec::with_capacity(n);
            match dtype {
                Dtype::F32 => {
                    for _ in 0..n {
                        let mut b = [0u8; 4];
                        r.read_exact(&mut b)?;
                        data.push(f32::from_le_bytes(b));
                    }
                }
                Dtype::F16 => {
                    for _ in 0..n {
                        let mut b = [0u8; 2];
                        r.read_exact(&mut b)?;
                        data.push(crate::tensor::f16_bits_to_f32(u16::from_le_bytes(b)));
                    }
                }
            }
            params.push(Param {
                name,
                dims,
                data,
                dtype,
            });
        }
        Ok(ModelParams { params })
    }

    pub fn save_ldnw<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_ldnw(std::io::BufWriter::new(f))
    }

    pub fn load_ldnw<P: AsRef<Path>>(path: P) -> Result<ModelParams> {
        let f = std::fs::File::open(path)?;
        Self::read_ldnw(std::io::BufReader::new(f))
    }
}

fn lite_block_params(f: u64) -> u64 {
    // reduce conv + bias, expand conv + bias
    9 * f * (f / 2) + f / 2 + 9 * (f / 2) * f + f
}

fn denoising_block_params(f: u64) -> u64 {
    let h = f / 2;
    let convs = 9 * f * h + 9 * (f + h) * h + 9 * (2 * f) * h + 9 * (2 * f + h) * f;
    let biases = 3 * h + f;
    let alphas = 3 * h + f;
    convs + biases + alphas
}

/// Closed-form parameter count; equals enumeration of built [`ModelParams`]
/// exactly.
pub fn param_count(cfg: &ArchConfig) -> Result<u64> {
    cfg.validate()?;
    let cin = cfg.input_channels as u64;
    let widths: Vec<u64> = cfg.level_widths.iter().map(|w| *w as u64).collect();
    let bw = cfg.bottleneck_width as u64;
    let levels = widths.len();
    let upper = |i: usize| if i + 1 < levels { widths[i + 1] } else { bw };
    let mut total = 0u64;
    match cfg.kind {
        ModelKind::Student => {
            total += 9 * cin * widths[0] + widths[0]; // stem
            for i in 0..levels {
                total += cfg.enc_blocks as u64 * lite_block_params(widths[i]);
                total += 9 * widths[i] * upper(i) + upper(i); // stride-2 down
            }
            total += cfg.bottleneck_blocks as u64 * lite_block_params(bw);
            for i in 0..levels {
                total += 9 * (upper(i) + widths[i]) * widths[i] + widths[i]; // refine
                total += cfg.dec_blocks as u64 * lite_block_params(widths[i]);
            }
            total += 9 * widths[0] * cin + cin; // output conv
        }
        ModelKind::Teacher => {
            let w0 = widths[0];
            total += 9 * cin * w0 + w0 + w0; // input.conv1 + prelu
            total += 9 * w0 * w0 + w0 + w0; // input.conv2 + prelu
            for i in 0..levels {
                total += cfg.enc_blocks as u64 * denoising_block_params(widths[i]);
                total += 4 * widths[i] * upper(i) + upper(i); // 2x2 s2 down
            }
            total += cfg.bottleneck_blocks as u64 * denoising_block_params(bw);
            for i in 0..levels {
                total += 4 * upper(i) * widths[i] + widths[i]; // tconv up
                total += 9 * (2 * widths[i]) * widths[i] + widths[i] + widths[i]; // fuse + prelu
                total += cfg.dec_blocks as u64 * denoising_block_params(widths[i]);
            }
            total += 9 * w0 * w0 + w0 + w0; // output.conv1 + prelu
            total += 9 * w0 * cin + cin; // output.conv2
        }
    }
    Ok(total)
}

fn lite_block_macs(f: u64, px: u64) -> u64 {
    (9 * f * (f / 2) + 9 * (f / 2) * f) * px
}

fn denoising_block_macs(f: u64, px: u64) -> u64 {
    let h = f / 2;
    (9 * f * h + 9 * (f + h) * h + 9 * (2 * f) * h + 9 * (2 * f + h) * f) * px
}

/// Closed-form multiply-accumulate count for one forward pass at `(h, w)`.
/// Transposed convs are counted at their input extents; upsampling itself is
/// MAC-free.
pub fn model_macs(cfg: &ArchConfig, h: usize, w: usize) -> Result<u64> {
    cfg.validate()?;
    if h % cfg.alignment() != 0 || w % cfg.alignment() != 0 {
        return Err(Error::Alignment(format!(
            "extents {h}x{w} must be multiples of {}",
            cfg.alignment()
        )));
    }
    let cin = cfg.input_channels as u64;
    let widths: Vec<u64> = cfg.level_widths.iter().map(|v| *v as u64).collect();
    let bw = cfg.bottleneck_width as u64;
    let levels = widths.len();
    let upper = |i: usize| if i + 1 < levels { widths[i + 1] } else { bw };
    // Pixels at each scale: level i runs at h/2^i x w/2^i.
    let px = |i: usize| (h as u64 >> i) * (w as u64 >> i);
    let mut total = 0u64;
    match cfg.kind {
        ModelKind::Student => {
            total += 9 * cin * widths[0] * px(0);
            for i in 0..levels {
                total += cfg.enc_blocks as u64 * lite_block_macs(widths[i], px(i));
                total += 9 * widths[i] * upper(i) * px(i + 1);
            }
            total += cfg.bottleneck_blocks as u64 * lite_block_macs(bw, px(levels));
            for i in 0..levels {
                total += 9 * (upper(i) + widths[i]) * widths[i] * px(i);
                total += cfg.dec_blocks as u64 * lite_block_macs(widths[i], px(i));
            }
            total += 9 * widths[0] * cin * px(0);
        }
        ModelKind::Teacher => {
            let w0 = widths[0];
            total += (9 * cin * w0 + 9 * w0 * w0) * px(0);
            for i in 0..levels {
                total += cfg.enc_blocks as u64 * denoising_block_macs(widths[i], px(i));
                total += 4 * widths[i] * upper(i) * px(i + 1);
            }
            total += cfg.bottleneck_blocks as u64 * denoising_block_macs(bw, px(levels));
            for i in 0..levels {
                total += 4 * upper(i) * widths[i] * px(i + 1); // tconv at input extents
                total += 9 * (2 * widths[i]) * widths[i] * px(i);
                total += cfg.dec_blocks as u64 * denoising_block_macs(widths[i], px(i));
            }
            total += (9 * w0 * w0 + 9 * w0 * cin) * px(0);
        }
    }
    Ok(total)
}
