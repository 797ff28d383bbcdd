//! Static layer graphs: execution order, shape inference, taped forward
//! passes, and reverse-mode backward walks.
//!
//! A [`LayerGraph`] is built once from an architecture description and never
//! mutates. Forward execution fills one activation slot per node; without a
//! tape, activations are freed at their last use, which is also the liveness
//! model the memory estimator simulates.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::ops::{self, ConvImpl, ConvSpec};
use crate::tensor::{Dtype, Tensor4};

pub type NodeId = usize;
pub type ParamId = usize;

/// Operation performed by a node. Parameters are referenced by index into
/// the graph's parameter table.
#[derive(Debug, Clone)]
pub enum NodeOp {
    Input,
    Conv { spec: ConvSpec, w: ParamId, b: ParamId },
    TConv2x2 { in_ch: usize, out_ch: usize, w: ParamId, b: ParamId },
    Relu,
    Prelu { alpha: ParamId, channels: usize },
    NearestUp2,
    Concat,
    Add,
    Clip01,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: NodeOp,
    pub inputs: Vec<NodeId>,
    pub label: String,
}

/// What a parameter tensor is; fixes both its role and its initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    TConvWeight,
    Bias,
    PreluAlpha,
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn value_count(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Execution options for a forward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExecOpts {
    pub conv: ConvImpl,
    /// Round the input and every node output onto the binary16 grid
    /// (accumulation inside each op stays f32).
    pub fp16: bool,
}

/// Saved per-node forward activations, consumed by [`LayerGraph::backward`].
#[derive(Debug, Default)]
pub struct ActivationTape {
    acts: Vec<Tensor4>,
}

impl ActivationTape {
    pub fn new() -> Self {
        ActivationTape { acts: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.acts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.acts.is_empty()
    }

    /// Stored activation of node `idx`. Panics if the tape is empty.
    pub fn peek(&self, idx: usize) -> &Tensor4 {
        &self.acts[idx]
    }
}

/// Gradients of a scalar objective with respect to every parameter (in
/// parameter-table order) and the graph input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Vec<f32>>,
    pub input: Tensor4,
}

#[derive(Debug, Clone)]
pub struct LayerGraph {
    nodes: Vec<Node>,
    output: NodeId,
    params: Vec<ParamSpec>,
    input_channels: usize,
    alignment: usize,
    last_use: Vec<usize>,
}

impl LayerGraph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn output_node(&self) -> NodeId {
        self.output
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    /// Required divisor of the input spatial extents (2^num_downsamples).
    pub fn alignment(&self) -> usize {
        self.alignment
    }

    /// Index of the last node consuming each node's output (the node's own
    /// index if never consumed).
    pub fn last_use(&self) -> &[usize] {
        &self.last_use
    }

    pub fn check_input(&self, x: &Tensor4) -> Result<()> {
        if x.c() != self.input_channels {
            return Err(Error::Channels(format!(
                "input has {} channels, model expects {}",
                x.c(),
                self.input_channels
            )));
        }
        if x.h() % self.alignment != 0 || x.w() % self.alignment != 0 {
            return Err(Error::Alignment(format!(
                "input extents {}x{} must be multiples of {} for this model",
                x.h(),
                x.w(),
                self.alignment
            )));
        }
        Ok(())
    }

    /// Verify that a parameter set matches this graph's parameter table.
    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Config(format!(
                "parameter count mismatch: weights have {}, architecture needs {}",
                params.len(),
                self.params.len()
            )));
        }
        for (spec, p) in self.params.iter().zip(params.iter()) {
            if spec.name != p.name || spec.dims != p.dims {
                return Err(Error::Config(format!(
                    "parameter mismatch at '{}': architecture expects '{}' dims {:?}, weights have '{}' dims {:?}",
                    spec.name, spec.name, spec.dims, p.name, p.dims
                )));
            }
        }
        Ok(())
    }

    /// Output dims of every node for an `(n, h, w)` input.
    pub fn infer_shapes(&self, n: usize, h: usize, w: usize) -> Result<Vec<[usize; 4]>> {
        let mut shapes: Vec<[usize; 4]> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let dims = match &node.op {
                NodeOp::Input => [n, h, w, self.input_channels],
                NodeOp::Conv { spec, .. } => {
                    let [n0, h0, w0, c0] = shapes[node.inputs[0]];
                    if c0 != spec.in_ch {
                        return Err(Error::Channels(format!(
                            "node '{}' expects {} input channels, got {c0}",
                            node.label, spec.in_ch
                        )));
                    }
                    let (oh, ow) = spec.out_dims(h0, w0)?;
                    [n0, oh, ow, spec.out_ch]
                }
                NodeOp::TConv2x2 { in_ch, out_ch, .. } => {
                    let [n0, h0, w0, c0] = shapes[node.inputs[0]];
                    if c0 != *in_ch {
                        return Err(Error::Channels(format!(
                            "node '{}' expects {in_ch} input channels, got {c0}",
                            node.label
                        )));
                    }
                    [n0, 2 * h0, 2 * w0, *out_ch]
                }
                NodeOp::Relu | NodeOp::Clip01 => shapes[node.inputs[0]],
                NodeOp::Prelu { channels, .. } => {
                    let s = shapes[node.inputs[0]];
                    if s[3] != *channels {
                        return Err(Error::Channels(format!(
                            "node '{}' alpha has {channels} channels, input has {}",
                            node.label, s[3]
                        )));
                    }
                    s
                }
                NodeOp::NearestUp2 => {
                    let [n0, h0, w0, c0] = shapes[node.inputs[0]];
                    [n0, 2 * h0, 2 * w0, c0]
                }
                NodeOp::Concat => {
                    let [n0, h0, w0, ca] = shapes[node.inputs[0]];
                    let [n1, h1, w1, cb] = shapes[node.inputs[1]];
                    if (n0, h0, w0) != (n1, h1, w1) {
                        return Err(Error::DimMismatch(format!(
                            "node '{}' concat spatial mismatch",
                            node.label
                        )));
                    }
                    [n0, h0, w0, ca + cb]
                }
                NodeOp::Add => {
                    let a = shapes[node.inputs[0]];
                    if a != shapes[node.inputs[1]] {
                        return Err(Error::DimMismatch(format!(
                            "node '{}' add dims mismatch",
                            node.label
                        )));
                    }
                    a
                }
            };
            shapes.push(dims);
        }
        Ok(shapes)
    }

    /// Forward pass with default options and no tape.
    pub fn forward(&self, params: &ModelParams, x: &Tensor4) -> Result<Tensor4> {
        self.forward_opts(params, x, ExecOpts::default(), None)
    }

    /// Forward pass. With a tape, every node output is retained for a later
    /// [`LayerGraph::backward`]; without one, activations are freed at their
    /// last use.
    pub fn forward_opts(
        &self,
        params: &ModelParams,
        x: &Tensor4,
        opts: ExecOpts,
        tape: Option<&mut ActivationTape>,
    ) -> Result<Tensor4> {
        self.check_input(x)?;
        self.check_params(params)?;
        let keep_all = tape.is_some();
        let mut acts: Vec<Option<Tensor4>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let get = |id: NodeId| -> Result<&Tensor4> {
                acts[id]
                    .as_ref()
                    .ok_or_else(|| Error::Tape(format!("activation {id} missing")))
            };
            let mut out = match &node.op {
                NodeOp::Input => x.clone(),
                NodeOp::Conv { spec, w, b } => ops::conv2d(
                    get(node.inputs[0])?,
                    spec,
                    params.data(*w),
                    params.data(*b),
                    opts.conv,
                )?,
                NodeOp::TConv2x2 { w, b, .. } => ops::tconv2d_2x2_s2(
                    get(node.inputs[0])?,
                    params.data(*w),
                    params.data(*b),
                )?,
                NodeOp::Relu => ops::relu(get(node.inputs[0])?),
                NodeOp::Prelu { alpha, .. } => {
                    ops::prelu(get(node.inputs[0])?, params.data(*alpha))?
                }
                NodeOp::NearestUp2 => ops::nearest_up2(get(node.inputs[0])?),
                NodeOp::Concat => {
                    ops::concat_channels(get(node.inputs[0])?, get(node.inputs[1])?)?
                }
                NodeOp::Add => ops::add(get(node.inputs[0])?, get(node.inputs[1])?)?,
                NodeOp::Clip01 => ops::clip01(get(node.inputs[0])?),
            };
            if opts.fp16 {
                out = out.cast(Dtype::F16).0;
            }
            acts[i] = Some(out);
            if !keep_all {
                for &inp in &self.nodes[i].inputs {
                    if self.last_use[inp] == i && inp != self.output {
                        acts[inp] = None;
                    }
                }
            }
        }
        let result = acts[self.output]
            .clone()
            .ok_or_else(|| Error::Tape("output activation missing".into()))?;
        if let Some(t) = tape {
            t.acts = acts.into_iter().map(|a| a.unwrap()).collect();
        }
        Ok(result)
    }

    /// Reverse-mode walk over a taped forward. Consumes the tape contents;
    /// a second call on the same tape is rejected as stale. Skip-connection
    /// gradients are summed across all consumers.
    pub fn backward(
        &self,
        params: &ModelParams,
        tape: &mut ActivationTape,
        upstream: &Tensor4,
    ) -> Result<Gradients> {
        if tape.acts.len() != self.nodes.len() {
            return Err(Error::Tape(format!(
                "tape holds {} activations, graph has {} nodes (missing or stale tape)",
                tape.acts.len(),
                self.nodes.len()
            )));
        }
        self.check_params(params)?;
        let acts = std::mem::take(&mut tape.acts);
        if upstream.dims() != acts[self.output].dims() {
            return Err(Error::DimMismatch(format!(
                "upstream dims {:?} != output dims {:?}",
                upstream.dims(),
                acts[self.output].dims()
            )));
        }

        let mut gparams: Vec<Vec<f32>> = self
            .params
            .iter()
            .map(|s| vec![0.0f32; s.value_count()])
            .collect();
        let mut gacts: Vec<Option<Tensor4>> = vec![None; self.nodes.len()];
        gacts[self.output] = Some(upstream.clone());
        let mut ginput: Option<Tensor4> = None;

        fn accum(slot: &mut Option<Tensor4>, g: Tensor4) {
            match slot {
                None => *slot = Some(g),
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
        }
        fn add_into(dst: &mut [f32], src: &[f32]) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = gacts[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                NodeOp::Input => accum(&mut ginput, g),
                NodeOp::Conv { spec, w, b } => {
                    let src = node.inputs[0];
                    let grads = ops::conv2d_vjp(&acts[src], spec, params.data(*w), &g)?;
                    add_into(&mut gparams[*w], &grads.weights);
                    add_into(&mut gparams[*b], &grads.bias);
                    accum(&mut gacts[src], grads.input);
                }
                NodeOp::TConv2x2 { w, b, .. } => {
                    let src = node.inputs[0];
                    let grads = ops::tconv2d_2x2_s2_vjp(&acts[src], params.data(*w), &g)?;
                    add_into(&mut gparams[*w], &grads.weights);
                    add_into(&mut gparams[*b], &grads.bias);
                    accum(&mut gacts[src], grads.input);
                }
                NodeOp::Relu => {
                    let src = node.inputs[0];
                    accum(&mut gacts[src], ops::relu_vjp(&acts[src], &g)?);
                }
                NodeOp::Prelu { alpha, .. } => {
                    let src = node.inputs[0];
                    let grads = ops::prelu_vjp(&acts[src], params.data(*alpha), &g)?;
                    add_into(&mut gparams[*alpha], &grads.alpha);
                    accum(&mut gacts[src], grads.input);
                }
                NodeOp::NearestUp2 => {
                    let src = node.inputs[0];
                    accum(&mut gacts[src], ops::nearest_up2_vjp(&acts[src], &g)?);
                }
                NodeOp::Concat => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let (ga, gb) =
                        ops::concat_channels_vjp(acts[a].c(), acts[b].c(), &g)?;
                    accum(&mut gacts[a], ga);
                    accum(&mut gacts[b], gb);
                }
                NodeOp::Add => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    accum(&mut gacts[a], g.clone());
                    accum(&mut gacts[b], g);
                }
                NodeOp::Clip01 => {
                    let src = node.inputs[0];
                    accum(&mut gacts[src], ops::clip01_vjp(&acts[src], &g)?);
                }
            }
        }

        let input = ginput.unwrap_or_else(|| Tensor4::zeros(acts[0].dims()));
        Ok(Gradients {
            params: gparams,
            input,
        })
    }
}

/// Incremental graph constructor used by the model builders.
#[derive(Debug)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<ParamSpec>,
    input_channels: usize,
}

impl GraphBuilder {
    /// Start a graph; node 0 is the input.
    pub fn new(input_channels: usize) -> (Self, NodeId) {
        let b = GraphBuilder {
            nodes: vec![Node {
                op: NodeOp::Input,
                inputs: vec![],
                label: "input".into(),
            }],
            params: Vec::new(),
            input_channels,
        };
        (b, 0)
    }

    fn push(&mut self, op: NodeOp, inputs: Vec<NodeId>, label: String) -> NodeId {
        self.nodes.push(Node { op, inputs, label });
        self.nodes.len() - 1
    }

    fn add_param(&mut self, name: String, dims: Vec<usize>, kind: ParamKind) -> ParamId {
        self.params.push(ParamSpec { name, dims, kind });
        self.params.len() - 1
    }

    /// Square convolution with bias; `name` owns params `name.w` / `name.b`.
    pub fn conv(
        &mut self,
        x: NodeId,
        k: usize,
        stride: usize,
        padding: ops::PadSpec,
        in_ch: usize,
        out_ch: usize,
        name: &str,
    ) -> Result<NodeId> {
        let spec = ConvSpec::new(k, k, stride, padding, in_ch, out_ch)?;
        let w = self.add_param(
            format!("{name}.w"),
            vec![k, k, in_ch, out_ch],
            ParamKind::ConvWeight,
        );
        let b = self.add_param(format!("{name}.b"), vec![out_ch], ParamKind::Bias);
        Ok(self.push(NodeOp::Conv { spec, w, b }, vec![x], name.to_string()))
    }

    pub fn tconv2x2(&mut self, x: NodeId, in_ch: usize, out_ch: usize, name: &str) -> NodeId {
        let w = self.add_param(
            format!("{name}.w"),
            vec![2, 2, in_ch, out_ch],
            ParamKind::TConvWeight,
        );
        let b = self.add_param(format!("{name}.b"), vec![out_ch], ParamKind::Bias);
        self.push(
            NodeOp::TConv2x2 { in_ch, out_ch, w, b },
            vec![x],
            name.to_string(),
        )
    }

    pub fn relu(&mut self, x: NodeId, name: &str) -> NodeId {
        self.push(NodeOp::Relu, vec![x], format!("{name}.relu"))
    }

    pub fn prelu(&mut self, x: NodeId, channels: usize, name: &str) -> NodeId {
        let alpha = self.add_param(
            format!("{name}.alpha"),
            vec![channels],
            ParamKind::PreluAlpha,
        );
        self.push(
            NodeOp::Prelu { alpha, channels },
            vec![x],
            format!("{name}.prelu"),
        )
    }

    pub fn nearest_up2(&mut self, x: NodeId, name: &str) -> NodeId {
        self.push(NodeOp::NearestUp2, vec![x], name.to_string())
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId, name: &str) -> NodeId {
        self.push(NodeOp::Concat, vec![a, b], name.to_string())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId, name: &str) -> NodeId {
        self.push(NodeOp::Add, vec![a, b], name.to_string())
    }

    pub fn clip01(&mut self, x: NodeId, name: &str) -> NodeId {
        self.push(NodeOp::Clip01, vec![x], name.to_string())
    }

    /// Seal the graph. `alignment` is the required input-extent divisor.
    pub fn finish(self, output: NodeId, alignment: usize) -> LayerGraph {
        let mut last_use: Vec<usize> = (0..self.nodes.len()).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            for &inp in &node.inputs {
                last_use[inp] = i;
            }
        }
        // The output must survive the whole pass.
        last_use[output] = self.nodes.len();
        LayerGraph {
            nodes: self.nodes,
            output,
            params: self.params,
            input_channels: self.input_channels,
            alignment,
            last_use,
        }
    }
}
