//! Deployment toolkit: receptive-field computation, halo-based tiled
//! inference, activation-memory budgeting, FP16 export, and numerical parity
//! checking between execution paths.
//!
//! Tiling equality is exact: direct convolution with a fixed per-element
//! accumulation order makes each tile's interior bit-identical to the
//! whole-image forward whenever the halo covers the receptive radius.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{LayerGraph, NodeOp};
use crate::model::{ArchConfig, ModelParams};
use crate::ops::ConvImpl;
use crate::tensor::{Dtype, Tensor4};

/// Default tolerance for FP16-weight parity against the F32 reference,
/// an empirical bound on desk-scale models. F32-vs-F32 paths use the much
/// tighter 1e-4 contract.
pub const FP16_PARITY_TOLERANCE: f64 = 5e-3;

/// Input-coverage interval of one output pixel, per axis: output pixel `o`
/// reads input pixels in `[jump*o + lo, jump*o + hi]`.
#[derive(Debug, Clone, Copy)]
struct Reach {
    lo: i64,
    hi: i64,
    jump: i64,
}

fn graph_reach(graph: &LayerGraph) -> Result<Reach> {
    let mut reaches: Vec<Reach> = Vec::with_capacity(graph.nodes().len());
    for node in graph.nodes() {
        let r = match &node.op {
            NodeOp::Input => Reach { lo: 0, hi: 0, jump: 1 },
            NodeOp::Conv { spec, .. } => {
                let c = reaches[node.inputs[0]];
                let (pad, _) = spec.pad_amounts();
                Reach {
                    lo: c.lo - c.jump * pad as i64,
                    hi: c.hi + c.jump * (spec.kh as i64 - 1 - pad as i64),
                    jump: c.jump * spec.stride as i64,
                }
            }
            NodeOp::TConv2x2 { .. } | NodeOp::NearestUp2 => {
                let c = reaches[node.inputs[0]];
                if c.jump % 2 != 0 {
                    return Err(Error::Config(format!(
                        "upsampling node '{}' at unit stride has no aligned anchor",
                        node.label
                    )));
                }
                let j = c.jump / 2;
                // Output parity selects the anchor: union over both parities.
                Reach {
                    lo: c.lo - j,
                    hi: c.hi,
                    jump: j,
                }
            }
            NodeOp::Relu | NodeOp::Prelu { .. } | NodeOp::Clip01 => reaches[node.inputs[0]],
            NodeOp::Concat | NodeOp::Add => {
                let a = reaches[node.inputs[0]];
                let b = reaches[node.inputs[1]];
                if a.jump != b.jump {
                    return Err(Error::Config(format!(
                        "node '{}' joins branches at different scales",
                        node.label
                    )));
                }
                Reach {
                    lo: a.lo.min(b.lo),
                    hi: a.hi.max(b.hi),
                    jump: a.jump,
                }
            }
        };
        reaches.push(r);
    }
    Ok(reaches[graph.output_node()])
}

/// Input-space receptive radius of the graph output, accumulated layer by
/// layer (a 3x3 conv adds one stride at its scale; up/downsampling rescales).
/// This is a safe upper bound on the largest distance at which an input
/// pixel can influence an output pixel: exact for pure conv chains, and at
/// most one stride per upsampling stage above the true reach when floor
/// parities interact across decoder levels.
pub fn receptive_radius_graph(graph: &LayerGraph) -> Result<usize> {
    let r = graph_reach(graph)?;
    Ok(r.lo.unsigned_abs().max(r.hi.unsigned_abs()) as usize)
}

/// Receptive radius of a configured architecture.
pub fn receptive_radius(cfg: &ArchConfig) -> Result<usize> {
    receptive_radius_graph(&cfg.build_graph()?)
}

/// One tile: the interior region it owns in the output plus the padded
/// window it reads from the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileRect {
    pub out_y: usize,
    pub out_x: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub win_y: usize,
    pub win_x: usize,
    pub win_h: usize,
    pub win_w: usize,
}

/// Tiling geometry: interior tile extents, halo radius, alignment, and the
/// tile grid covering the image exactly once.
#[derive(Debug, Clone)]
pub struct TilePlan {
    pub tile: (usize, usize),
    pub halo: usize,
    pub alignment: usize,
    pub image: (usize, usize),
    pub tiles: Vec<TileRect>,
}

impl TilePlan {
    /// Plan with the smallest alignment-rounded halo that preserves exact
    /// equality with the whole-image forward.
    pub fn new(graph: &LayerGraph, h: usize, w: usize, tile: (usize, usize)) -> Result<TilePlan> {
        let m = graph.alignment();
        let radius = receptive_radius_graph(graph)?;
        let halo = radius.div_ceil(m) * m;
        Self::with_halo(graph, h, w, tile, halo)
    }

    /// Plan with an explicit halo. Rejected if the halo is below the
    /// receptive radius or breaks alignment.
    pub fn with_halo(
        graph: &LayerGraph,
        h: usize,
        w: usize,
        tile: (usize, usize),
        halo: usize,
    ) -> Result<TilePlan> {
        let m = graph.alignment();
        let radius = receptive_radius_graph(graph)?;
        if halo < radius {
            return Err(Error::Tile(format!(
                "halo {halo} is below the receptive radius {radius}; tiled output would diverge"
            )));
        }
        if halo % m != 0 {
            return Err(Error::Tile(format!(
                "halo {halo} must be a multiple of the model alignment {m}"
            )));
        }
        let (th, tw) = tile;
        if th == 0 || tw == 0 || th % m != 0 || tw % m != 0 {
            return Err(Error::Tile(format!(
                "tile extents {th}x{tw} must be positive multiples of the alignment {m}"
            )));
        }
        if h % m != 0 || w % m != 0 {
            return Err(Error::Alignment(format!(
                "image extents {h}x{w} must be multiples of the alignment {m}"
            )));
        }
        let mut tiles = Vec::new();
        let mut ty = 0;
        while ty < h {
            let out_h = th.min(h - ty);
            let mut tx = 0;
            while tx < w {
                let out_w = tw.min(w - tx);
                let win_y = ty.saturating_sub(halo);
                let win_x = tx.saturating_sub(halo);
                let win_h = (ty + out_h + halo).min(h) - win_y;
                let win_w = (tx + out_w + halo).min(w) - win_x;
                tiles.push(TileRect {
                    out_y: ty,
                    out_x: tx,
                    out_h,
                    out_w,
                    win_y,
                    win_x,
                    win_h,
                    win_w,
                });
                tx += tw;
            }
            ty += th;
        }
        Ok(TilePlan {
            tile,
            halo,
            alignment: m,
            image: (h, w),
            tiles,
        })
    }

    /// Largest padded window in the plan (drives per-tile memory).
    pub fn max_window(&self) -> (usize, usize) {
        self.tiles
            .iter()
            .fold((0, 0), |(mh, mw), t| (mh.max(t.win_h), mw.max(t.win_w)))
    }
}

/// Run the model tile by tile and stitch interiors. Bit-identical to the
/// whole-image forward (F32) for any valid plan. Requires a
/// shape-preserving model (output dims equal input dims).
pub fn tiled_forward(
    graph: &LayerGraph,
    params: &ModelParams,
    x: &Tensor4,
    plan: &TilePlan,
) -> Result<Tensor4> {
    tiled_forward_opts(graph, params, x, plan, crate::graph::ExecOpts::default())
}

/// [`tiled_forward`] with explicit execution options. Per-op output rounding
/// is deterministic, so the FP16 path is also bit-identical to its
/// whole-image counterpart.
pub fn tiled_forward_opts(
    graph: &LayerGraph,
    params: &ModelParams,
    x: &Tensor4,
    plan: &TilePlan,
    opts: crate::graph::ExecOpts,
) -> Result<Tensor4> {
    let [n, h, w, _c] = x.dims();
    if plan.image != (h, w) {
        return Err(Error::Tile(format!(
            "plan covers {:?}, input is {h}x{w}",
            plan.image
        )));
    }
    if plan.alignment != graph.alignment() {
        return Err(Error::Tile("plan alignment does not match the model".into()));
    }
    let radius = receptive_radius_graph(graph)?;
    if plan.halo < radius {
        return Err(Error::Tile(format!(
            "halo {} is below the receptive radius {radius}",
            plan.halo
        )));
    }
    graph.check_input(x)?;
    graph.check_params(params)?;

    let mut out: Option<Tensor4> = None;
    for t in &plan.tiles {
        let window = x.crop((t.win_y, t.win_x), (t.win_h, t.win_w))?;
        let tile_out = graph.forward_opts(params, &window, opts, None)?;
        if tile_out.dims() != window.dims() {
            return Err(Error::Tile(format!(
                "model is not shape-preserving: window {:?} produced {:?}",
                window.dims(),
                tile_out.dims()
            )));
        }
        let oc = tile_out.c();
        let dst = out.get_or_insert_with(|| Tensor4::zeros([n, h, w, oc]));
        let (iy, ix) = (t.out_y - t.win_y, t.out_x - t.win_x);
        for ni in 0..n {
            for dy in 0..t.out_h {
                let src = tile_out.idx(ni, iy + dy, ix, 0);
                let d = dst.idx(ni, t.out_y + dy, t.out_x, 0);
                dst.data_mut()[d..d + t.out_w * oc]
                    .copy_from_slice(&tile_out.data()[src..src + t.out_w * oc]);
            }
        }
    }
    out.ok_or_else(|| Error::Tile("plan contains no tiles".into()))
}

/// Live-set size of one executed layer.
#[derive(Debug, Clone)]
pub struct LayerLive {
    pub index: usize,
    pub label: String,
    pub out_dims: [usize; 4],
    pub out_bytes: u64,
    pub live_bytes: u64,
}

/// Peak activation memory of one forward pass under the executor's
/// free-at-last-use schedule (skip tensors stay live across the
/// encoder-decoder span).
#[derive(Debug, Clone)]
pub struct MemoryEstimate {
    pub peak_bytes: u64,
    pub dtype: Dtype,
    pub resolution: (usize, usize),
    pub tiled: bool,
    pub rows: Vec<LayerLive>,
}

impl MemoryEstimate {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "# activation memory at {}x{} ({:?}{})\n",
            self.resolution.0,
            self.resolution.1,
            self.dtype,
            if self.tiled { ", per tile" } else { "" }
        ));
        s.push_str(&format!(
            "{:<28} {:>20} {:>14} {:>14}\n",
            "layer", "out_dims", "out_bytes", "live_bytes"
        ));
        for r in &self.rows {
            s.push_str(&format!(
                "{:<28} {:>20} {:>14} {:>14}\n",
                r.label,
                format!("{:?}", r.out_dims),
                r.out_bytes,
                r.live_bytes
            ));
        }
        s.push_str(&format!("peak_activation_bytes {}\n", self.peak_bytes));
        s
    }
}

fn estimate_whole(graph: &LayerGraph, h: usize, w: usize, dtype: Dtype) -> Result<MemoryEstimate> {
    let shapes = graph.infer_shapes(1, h, w)?;
    let bytes: Vec<u64> = shapes
        .iter()
        .map(|d| d.iter().product::<usize>() as u64 * dtype.size_bytes() as u64)
        .collect();
    let last_use = graph.last_use();
    let mut rows = Vec::with_capacity(shapes.len());
    let mut peak = 0u64;
    for t in 0..shapes.len() {
        let live: u64 = (0..=t)
            .filter(|i| last_use[*i] >= t)
            .map(|i| bytes[i])
            .sum();
        peak = peak.max(live);
        rows.push(LayerLive {
            index: t,
            label: graph.nodes()[t].label.clone(),
            out_dims: shapes[t],
            out_bytes: bytes[t],
            live_bytes: live,
        });
    }
    Ok(MemoryEstimate {
        peak_bytes: peak,
        dtype,
        resolution: (h, w),
        tiled: false,
        rows,
    })
}

/// Simulate the execution schedule at `(h, w)` and report the peak live set.
/// With a plan, the peak is taken per tile over the largest padded window.
pub fn estimate_memory(
    graph: &LayerGraph,
    h: usize,
    w: usize,
    dtype: Dtype,
    plan: Option<&TilePlan>,
) -> Result<MemoryEstimate> {
    match plan {
        None => estimate_whole(graph, h, w, dtype),
        Some(p) => {
            if p.image != (h, w) {
                return Err(Error::Tile(format!(
                    "plan covers {:?}, estimate requested for {h}x{w}",
                    p.image
                )));
            }
            let (wh, ww) = p.max_window();
            let mut est = estimate_whole(graph, wh, ww, dtype)?;
            est.resolution = (h, w);
            est.tiled = true;
            Ok(est)
        }
    }
}

/// Execution path for parity comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParityPath {
    ReferenceF32,
    OptimizedF32,
    /// Weights cast to binary16, input and every activation rounded onto the
    /// binary16 grid, accumulation in f32.
    Fp16Weights,
}

impl std::fmt::Display for ParityPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ParityPath::ReferenceF32 => "reference-f32",
            ParityPath::OptimizedF32 => "optimized-f32",
            ParityPath::Fp16Weights => "fp16-weights",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct ParityCase {
    pub input_id: String,
    pub max_abs_dev: f64,
}

/// Outcome of a parity run; failures are report outcomes, not errors.
#[derive(Debug, Clone)]
pub struct ParityReport {
    pub path_a: ParityPath,
    pub path_b: ParityPath,
    pub tolerance: f64,
    pub cases: Vec<ParityCase>,
    pub max_abs_dev: f64,
    pub pass: bool,
}

impl ParityReport {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "# parity {} vs {} tolerance {:e}\n{:<12} {:>16} {:>6}\n",
            self.path_a, self.path_b, self.tolerance, "input", "max_abs_dev", "pass"
        );
        for c in &self.cases {
            s.push_str(&format!(
                "{:<12} {:>16.3e} {:>6}\n",
                c.input_id,
                c.max_abs_dev,
                if c.max_abs_dev < self.tolerance { "yes" } else { "no" }
            ));
        }
        s.push_str(&format!(
            "overall {:.3e} -> {}\n",
            self.max_abs_dev,
            if self.pass { "PASS" } else { "FAIL" }
        ));
        s
    }

    /// Delimited form: `input_id,path_a,path_b,max_abs_dev,pass`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "input_id,path_a,path_b,max_abs_dev,pass")?;
        for c in &self.cases {
            writeln!(
                f,
                "{},{},{},{:e},{}",
                c.input_id,
                self.path_a,
                self.path_b,
                c.max_abs_dev,
                c.max_abs_dev < self.tolerance
            )?;
        }
        Ok(())
    }
}

fn run_path(
    graph: &LayerGraph,
    params: &ModelParams,
    fp16_params: &ModelParams,
    x: &Tensor4,
    path: ParityPath,
) -> Result<Tensor4> {
    let (p, opts) = match path {
        ParityPath::ReferenceF32 => (
            params,
            crate::graph::ExecOpts {
                conv: ConvImpl::Reference,
                fp16: false,
            },
        ),
        ParityPath::OptimizedF32 => (
            params,
            crate::graph::ExecOpts {
                conv: ConvImpl::Optimized,
                fp16: false,
            },
        ),
        ParityPath::Fp16Weights => (
            fp16_params,
            crate::graph::ExecOpts {
                conv: ConvImpl::Optimized,
                fp16: true,
            },
        ),
    };
    graph.forward_opts(p, x, opts, None)
}

/// Compare two execution paths over a set of inputs, reporting the maximum
/// absolute deviation per input and overall.
pub fn parity_check(
    graph: &LayerGraph,
    params: &ModelParams,
    inputs: &[Tensor4],
    path_a: ParityPath,
    path_b: ParityPath,
    tolerance: f64,
) -> Result<ParityReport> {
    let needs_fp16 = path_a == ParityPath::Fp16Weights || path_b == ParityPath::Fp16Weights;
    let fp16_params = if needs_fp16 {
        export_fp16(params).0
    } else {
        params.clone()
    };
    let mut cases = Vec::with_capacity(inputs.len());
    let mut overall = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let a = run_path(graph, params, &fp16_params, x, path_a)?;
        let b = run_path(graph, params, &fp16_params, x, path_b)?;
        let dev = a.max_abs_diff(&b)?;
        overall = overall.max(dev);
        cases.push(ParityCase {
            input_id: format!("input{i}"),
            max_abs_dev: dev,
        });
    }
    Ok(ParityReport {
        path_a,
        path_b,
        tolerance,
        cases,
        max_abs_dev: overall,
        pass: overall < tolerance,
    })
}

/// Cast all weights to binary16. Returns the FP16 parameter set and the
/// number of saturated values.
pub fn export_fp16(params: &ModelParams) -> (ModelParams, usize) {
    params.cast(Dtype::F16)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use crate::model::ModelKind;
    use crate::ops::PadSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_image(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4 {
        let data = (0..dims.iter().product::<usize>())
            .map(|_| rng.gen_range(0.0f32..1.0))
            .collect();
        Tensor4::from_vec(dims, data).unwrap()
    }

    #[test]
    fn single_conv_radius_is_one() {
        let (mut g, input) = GraphBuilder::new(1);
        let c = g.conv(input, 3, 1, PadSpec::SameZero, 1, 1, "only").unwrap();
        let graph = g.finish(c, 1);
        assert_eq!(receptive_radius_graph(&graph).unwrap(), 1);

        let (mut g, input) = GraphBuilder::new(1);
        let c1 = g.conv(input, 3, 1, PadSpec::SameZero, 1, 2, "a").unwrap();
        let c2 = g.conv(c1, 3, 1, PadSpec::SameZero, 2, 1, "b").unwrap();
        let graph = g.finish(c2, 1);
        assert_eq!(receptive_radius_graph(&graph).unwrap(), 2);
    }

    /// Exact reachability oracle: propagate a boolean influence mask of one
    /// input pixel through the graph (any tap reaches for conv, OR for
    /// joins). Independent of the interval arithmetic and immune to the
    /// floating-point decay that hides extreme-path influence.
    fn influence_mask(graph: &LayerGraph, h: usize, w: usize, py: usize, px: usize) -> Vec<bool> {
        let shapes = graph.infer_shapes(1, h, w).unwrap();
        let mut masks: Vec<Vec<bool>> = Vec::with_capacity(graph.nodes().len());
        for (node, shape) in graph.nodes().iter().zip(&shapes) {
            let [_, oh, ow, _] = *shape;
            let mask = match &node.op {
                NodeOp::Input => {
                    let mut m = vec![false; oh * ow];
                    m[py * ow + px] = true;
                    m
                }
                NodeOp::Conv { spec, .. } => {
                    let src = &masks[node.inputs[0]];
                    let [_, ih, iw, _] = shapes[node.inputs[0]];
                    let (ph, pw) = spec.pad_amounts();
                    let mut m = vec![false; oh * ow];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            'taps: for ky in 0..spec.kh {
                                for kx in 0..spec.kw {
                                    let iy = (oy * spec.stride + ky) as isize - ph as isize;
                                    let ix = (ox * spec.stride + kx) as isize - pw as isize;
                                    if iy >= 0
                                        && (iy as usize) < ih
                                        && ix >= 0
                                        && (ix as usize) < iw
                                        && src[iy as usize * iw + ix as usize]
                                    {
                                        m[oy * ow + ox] = true;
                                        break 'taps;
                                    }
                                }
                            }
                        }
                    }
                    m
                }
                NodeOp::TConv2x2 { .. } | NodeOp::NearestUp2 => {
                    let src = &masks[node.inputs[0]];
                    let [_, _, iw, _] = shapes[node.inputs[0]];
                    let mut m = vec![false; oh * ow];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            m[oy * ow + ox] = src[(oy / 2) * iw + ox / 2];
                        }
                    }
                    m
                }
                NodeOp::Relu | NodeOp::Prelu { .. } | NodeOp::Clip01 => {
                    masks[node.inputs[0]].clone()
                }
                NodeOp::Concat | NodeOp::Add => {
                    let a = &masks[node.inputs[0]];
                    let b = &masks[node.inputs[1]];
                    a.iter().zip(b).map(|(x, y)| *x || *y).collect()
                }
            };
            masks.push(mask);
        }
        masks.swap_remove(graph.output_node())
    }

    #[test]
    fn radius_matches_exact_reachability_oracle() {
        for cfg in [
            ArchConfig {
                kind: ModelKind::Teacher,
                input_channels: 1,
                level_widths: vec![4],
                bottleneck_width: 8,
                enc_blocks: 1,
                bottleneck_blocks: 1,
                dec_blocks: 1,
            },
            ArchConfig::with_widths(ModelKind::Student, vec![4, 8], 16),
        ] {
            let graph = cfg.build_graph().unwrap();
            let radius = receptive_radius_graph(&graph).unwrap();
            let m = graph.alignment();
            // The layer-walk bound can exceed exact reachability by up to
            // one stride per upsampling stage (floor parities interact
            // across decoder levels).
            let mut jump = 1usize;
            let mut slack = 0usize;
            let mut jumps = vec![0usize; graph.nodes().len()];
            for (i, node) in graph.nodes().iter().enumerate() {
                jump = match &node.op {
                    NodeOp::Input => 1,
                    NodeOp::Conv { spec, .. } => jumps[node.inputs[0]] * spec.stride,
                    NodeOp::TConv2x2 { .. } | NodeOp::NearestUp2 => {
                        slack += jumps[node.inputs[0]] / 2;
                        jumps[node.inputs[0]] / 2
                    }
                    _ => jumps[node.inputs[0]],
                };
                jumps[i] = jump;
            }
            // Big enough that interior outputs see no boundary clipping.
            let size = (2 * radius + 2 * m + 8).div_ceil(m) * m;
            let center = size / 2;
            let mut exact = 0usize;
            // Translation classes: one source pixel per alignment phase.
            for py in center..center + m {
                for px in center..center + m {
                    let mask = influence_mask(&graph, size, size, py, px);
                    for oy in 0..size {
                        for ox in 0..size {
                            if !mask[oy * size + ox] {
                                continue;
                            }
                            let d = oy.abs_diff(py).max(ox.abs_diff(px));
                            assert!(
                                d <= radius,
                                "influence at distance {d} exceeds radius {radius}"
                            );
                            exact = exact.max(d);
                        }
                    }
                }
            }
            assert!(
                exact <= radius && radius <= exact + slack,
                "interval radius {radius} vs exact reachability {exact} (slack {slack}) for {:?}",
                cfg.kind
            );
        }
    }

    #[test]
    fn student_radius_safety_with_random_weights() {
        let cfg = ArchConfig::with_widths(ModelKind::Student, vec![4, 8], 16);
        let graph = cfg.build_graph().unwrap();
        let radius = receptive_radius_graph(&graph).unwrap();
        let params = ModelParams::init_he(&graph, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let size = 32usize;
        let base_x = rand_image(&mut rng, [1, size, size, 3]);
        let base = graph.forward(&params, &base_x).unwrap();
        let (oy, ox) = (size / 2, size / 2);
        // Probe pixels beyond the radius in one or both axes.
        for (py, px) in [(0usize, 0usize), (0, ox), (oy, size - 1), (size - 1, 0)] {
            let d = py.abs_diff(oy).max(px.abs_diff(ox));
            if d <= radius {
                continue;
            }
            let mut x = base_x.clone();
            let i = x.idx(0, py, px, 1);
            x.data_mut()[i] = 1.0 - x.data()[i];
            let out = graph.forward(&params, &x).unwrap();
            for c in 0..3 {
                assert_eq!(
                    out.at(0, oy, ox, c).to_bits(),
                    base.at(0, oy, ox, c).to_bits(),
                    "flip at ({py},{px}) dist {d} leaked into output, radius {radius}"
                );
            }
        }
    }

    #[test]
    fn tiled_forward_bit_identical_to_whole_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (cfg, seed) in [
            (ArchConfig::with_widths(ModelKind::Student, vec![4, 8], 16), 1u64),
            (
                ArchConfig {
                    kind: ModelKind::Teacher,
                    input_channels: 3,
                    level_widths: vec![4],
                    bottleneck_width: 8,
                    enc_blocks: 1,
                    bottleneck_blocks: 1,
                    dec_blocks: 1,
                },
                2,
            ),
        ] {
            let graph = cfg.build_graph().unwrap();
            let params = ModelParams::init_he(&graph, seed);
            let m = cfg.alignment();
            let x = rand_image(&mut rng, [1, 16 * m, 12 * m, 3]);
            let whole = graph.forward(&params, &x).unwrap();
            for tiles in [(4 * m, 4 * m), (8 * m, 16 * m), (16 * m, 12 * m)] {
                let plan = TilePlan::new(&graph, x.h(), x.w(), tiles).unwrap();
                let tiled = tiled_forward(&graph, &params, &x, &plan).unwrap();
                assert_eq!(tiled.dims(), whole.dims());
                for (a, b) in tiled.data().iter().zip(whole.data()) {
                    assert_eq!(a.to_bits(), b.to_bits(), "tiles {tiles:?}");
                }
            }
        }
    }

    #[test]
    fn single_tile_plan_is_trivially_identical() {
        let cfg = ArchConfig::with_widths(ModelKind::Student, vec![4], 8);
        let graph = cfg.build_graph().unwrap();
        let params = ModelParams::init_he(&graph, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_image(&mut rng, [1, 16, 16, 3]);
        let plan = TilePlan::new(&graph, 16, 16, (16, 16)).unwrap();
        assert_eq!(plan.tiles.len(), 1);
        let tiled = tiled_forward(&graph, &params, &x, &plan).unwrap();
        assert_eq!(tiled, graph.forward(&params, &x).unwrap());
    }

    #[test]
    fn insufficient_halo_rejected_before_compute() {
        let cfg = ArchConfig::with_widths(ModelKind::Student, vec![4, 8], 16);
        let graph = cfg.build_graph().unwrap();
        let radius = receptive_radius_graph(&graph).unwrap();
        let m = graph.alignment();
        let small = (radius / m).saturating_sub(1) * m;
        assert!(matches!(
            TilePlan::with_halo(&graph, 64, 64, (16, 16), small),
            Err(Error::Tile(_))
        ));
    }

    #[test]
    fn single_conv_memory_is_input_plus_output() {
        let (mut g, input) = GraphBuilder::new(2);
        let c = g.conv(input, 3, 1, PadSpec::SameZero, 2, 4, "only").unwrap();
        let graph = g.finish(c, 1);
        let est = estimate_memory(&graph, 8, 8, Dtype::F32, None).unwrap();
        // peak while computing the conv: input (8*8*2) + output (8*8*4) f32
        assert_eq!(est.peak_bytes, (8 * 8 * 2 + 8 * 8 * 4) * 4);
    }

    #[test]
    fn memory_estimate_is_monotone() {
        let cfg = ArchConfig::with_widths(ModelKind::Student, vec![4, 8], 16);
        let graph = cfg.build_graph().unwrap();
        let base = estimate_memory(&graph, 32, 32, Dtype::F16, None).unwrap();
        let taller = estimate_memory(&graph, 64, 32, Dtype::F16, None).unwrap();
        let wider = estimate_memory(&graph, 32, 64, Dtype::F16, None).unwrap();
        let fat = estimate_memory(
            &ArchConfig::with_widths(ModelKind::Student, vec![8, 16], 32)
                .build_graph()
                .unwrap(),
            32,
            32,
            Dtype::F16,
            None,
        )
        .unwrap();
        let f32_est = estimate_memory(&graph, 32, 32, Dtype::F32, None).unwrap();
        assert!(taller.peak_bytes >= base.peak_bytes);
        assert!(wider.peak_bytes >= base.peak_bytes);
        assert!(fat.peak_bytes >= base.peak_bytes);
        assert_eq!(f32_est.peak_bytes, 2 * base.peak_bytes);
    }

    #[test]
    fn tiled_estimate_beats_whole_image_at_scale() {
        let cfg = ArchConfig::student_default();
        let graph = cfg.build_graph().unwrap();
        let plan = TilePlan::new(&graph, 512, 512, (128, 128)).unwrap();
        let whole = estimate_memory(&graph, 512, 512, Dtype::F16, None).unwrap();
        let tiled = estimate_memory(&graph, 512, 512, Dtype::F16, Some(&plan)).unwrap();
        assert!(tiled.peak_bytes < whole.peak_bytes);
        assert!(tiled.to_table().contains("per tile"));
    }

    #[test]
    fn memory_dichotomy_teacher_oom_student_fits() {
        let student = ArchConfig::student_default().build_graph().unwrap();
        let teacher = ArchConfig::teacher_default().build_graph().unwrap();
        let s = estimate_memory(&student, 2432, 3200, Dtype::F16, None).unwrap();
        let t = estimate_memory(&teacher, 2432, 3200, Dtype::F16, None).unwrap();
        println!(
            "student peak {} MB, teacher peak {} MB, ratio {:.2}",
            s.peak_bytes / (1 << 20),
            t.peak_bytes / (1 << 20),
            t.peak_bytes as f64 / s.peak_bytes as f64
        );
        assert!(t.peak_bytes > s.peak_bytes);
        // A budget strictly between the two mechanizes the fits/OOM split.
        let budget = (s.peak_bytes + t.peak_bytes) / 2;
        assert!(s.peak_bytes <= budget && budget < t.peak_bytes);
    }

    #[test]
    fn parity_reference_vs_optimized_is_exact() {
        let cfg = ArchConfig::with_widths(ModelKind::Student, vec![4, 8], 16);
        let graph = cfg.build_graph().unwrap();
        let params = ModelParams::init_he(&graph, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inputs: Vec<Tensor4> = (0..4).map(|_| rand_image(&mut rng, [1, 16, 16, 3])).collect();
        let r = parity_check(
            &graph,
            &params,
            &inputs,
            ParityPath::ReferenceF32,
            ParityPath::OptimizedF32,
            1e-4,
        )
        .unwrap();
        assert!(r.pass);
        assert_eq!(r.max_abs_dev, 0.0);
        // Identical path on both sides is trivially zero.
        let same = parity_check(
            &graph,
            &params,
            &inputs,
            ParityPath::OptimizedF32,
            ParityPath::OptimizedF32,
            1e-4,
        )
        .unwrap();
        assert_eq!(same.max_abs_dev, 0.0);
    }

    #[test]
    fn parity_is_symmetric_and_fp16_within_documented_bound() {
        let cfg = ArchConfig::with_widths(ModelKind::Student, vec![4, 8], 16);
        let graph = cfg.build_graph().unwrap();
        // Deployment-scale weights: trained residual bodies keep activations
        // near the unit range, which is where the documented FP16 bound
        // applies. Fresh He-init weights blow activations up and only get
        // their deviation reported.
        let he = ModelParams::init_he(&graph, 10);
        let mut calm = he.clone();
        for i in 0..calm.len() {
            for v in &mut calm.param_mut(i).data {
                *v *= 0.25;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inputs: Vec<Tensor4> = (0..3).map(|_| rand_image(&mut rng, [1, 16, 16, 3])).collect();
        let ab = parity_check(
            &graph,
            &calm,
            &inputs,
            ParityPath::Fp16Weights,
            ParityPath::OptimizedF32,
            FP16_PARITY_TOLERANCE,
        )
        .unwrap();
        let ba = parity_check(
            &graph,
            &calm,
            &inputs,
            ParityPath::OptimizedF32,
            ParityPath::Fp16Weights,
            FP16_PARITY_TOLERANCE,
        )
        .unwrap();
        assert_eq!(ab.max_abs_dev, ba.max_abs_dev);
        assert!(ab.pass, "fp16 deviation {}", ab.max_abs_dev);
        assert!(ab.max_abs_dev > 0.0);

        let he_report = parity_check(
            &graph,
            &he,
            &inputs,
            ParityPath::Fp16Weights,
            ParityPath::OptimizedF32,
            FP16_PARITY_TOLERANCE,
        )
        .unwrap();
        println!(
            "fp16 deviation: deployment-scale {:.3e}, he-init {:.3e} (reported)",
            ab.max_abs_dev, he_report.max_abs_dev
        );
    }

    #[test]
    fn export_fp16_roundtrips_and_halves_file_size() {
        let cfg = ArchConfig::with_widths(ModelKind::Student, vec![4, 8], 16);
        let graph = cfg.build_graph().unwrap();
        let params = ModelParams::init_he(&graph, 12);
        let (p16, saturated) = export_fp16(&params);
        assert_eq!(saturated, 0); // He-scale weights are far from 65504
        assert_eq!(p16.len(), params.len());
        assert_eq!(p16.total_values(), params.total_values());

        let mut f32_buf = Vec::new();
        params.write_ldnw(&mut f32_buf).unwrap();
        let mut f16_buf = Vec::new();
        p16.write_ldnw(&mut f16_buf).unwrap();
        let back = ModelParams::read_ldnw(f16_buf.as_slice()).unwrap();
        assert_eq!(back, p16);
        // Payload halves; only the per-tensor headers are shared.
        let payload = 4 * params.total_values();
        let header = f32_buf.len() as u64 - payload;
        assert_eq!(f16_buf.len() as u64, header + payload / 2);
    }

    #[test]
    fn oversaturated_weights_are_counted() {
        let (mut g, input) = GraphBuilder::new(1);
        let c = g.conv(input, 1, 1, PadSpec::SameZero, 1, 1, "big").unwrap();
        let graph = g.finish(c, 1);
        let mut params = ModelParams::zeros(&graph);
        params.param_mut(0).data[0] = 1.0e6;
        let (p16, saturated) = export_fp16(&params);
        assert_eq!(saturated, 1);
        assert_eq!(p16.param(0).data[0], crate::tensor::F16_MAX_VALUE);
    }
}
