use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvGeom};
use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::image::FlowField;
use crate::math;
use crate::vision::{self, BBox};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Relu(Var),
    MaxPool2 { x: Var, arg: Vec<u32> },
    Upsample { x: Var, from: (usize, usize) },
    Linear { x: Var, w: Var, b: Var, rows: usize, ins: usize, outs: usize },
    Sigmoid(Var),
    Add(Var, Var),
    Scale(Var, f32),
    Concat(Vec<Var>),
    Reshape(Var),
    RoiPool { x: Var, arg: Vec<u32> },
    Warp { x: Var, flow: FlowField },
    MulConst { x: Var, mask: Vec<f32> },
    // Losses keep their local derivative from the forward pass.
    Loss { pred: Var, dpred: Vec<f32> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f32>>], v: Var) -> Option<&'a mut [f32]> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
}

/// Define-by-run computation graph. Values are computed eagerly as nodes are
/// added; [`Graph::backward`] then walks the nodes in reverse.
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    retired: Vec<(String, Var)>,
    grads: Vec<Option<Vec<f32>>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn dims4(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(Error::shape(op, "rank", format!("expected NCHW, got {:?}", s))),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            retired: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked (used for inputs under test).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(true), Op::Leaf, true)
    }

    /// Bind a named parameter. Binding the same name twice returns the same
    /// node, so weights shared across an unrolled sequence sum their gradients.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?;
        let trainable = t.requires_grad();
        let value = Tensor::new(t.shape(), t.data().to_vec())?.with_requires_grad(trainable);
        let v = self.push(value, Op::Leaf, trainable);
        self.params.insert(name.into(), v);
        Ok(v)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (_, c, _, _) = dims4(self.value(x), "conv2d")?;
        let (o, kc, kh, kw) = dims4(self.value(w), "conv2d")?;
        if kc != c {
            return Err(Error::shape(
                "conv2d",
                "input channels",
                format!("input has {} channels, kernel expects {}", c, kc),
            ));
        }
        if kh != kw {
            return Err(Error::shape("conv2d", "kernel size", format!("{}x{} is not square", kh, kw)));
        }
        if self.value(b).shape() != [o] {
            return Err(Error::shape(
                "conv2d",
                "bias",
                format!("bias {:?} for {} output channels", self.value(b).shape(), o),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be >= 1"));
        }
        let geom = ConvGeom::new(self.value(x).shape(), self.value(w).shape(), stride, pad).ok_or_else(|| {
            Error::shape("conv2d", "spatial extent", format!("kernel {} larger than padded input", kh))
        })?;
        let out = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), &geom);
        let t = Tensor::new(&[geom.n, geom.o, geom.oh, geom.ow], out)?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(src.shape(), data).expect("same shape");
        let ng = self.needs(x);
        self.push(t, Op::Relu(x), ng)
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x), "max_pool_2x2")?;
        if h < 2 || w < 2 {
            return Err(Error::shape("max_pool_2x2", "spatial extent", format!("{}x{} input", h, w)));
        }
        let (out, arg) = kernels::max_pool2_forward(self.value(x).data(), n, c, h, w);
        let t = Tensor::new(&[n, c, h / 2, w / 2], out)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::MaxPool2 { x, arg }, ng))
    }

    /// Bilinear resize (half-pixel centers, edge clamped) to `height x width`.
    pub fn upsample(&mut self, x: Var, height: usize, width: usize) -> Result<Var> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("bilinear_upsample: target size must be positive"));
        }
        let (n, c, h, w) = dims4(self.value(x), "bilinear_upsample")?;
        let out = kernels::upsample_forward(self.value(x).data(), n * c, (h, w), (height, width));
        let t = Tensor::new(&[n, c, height, width], out)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::Upsample { x, from: (h, w) }, ng))
    }

    /// `y = x W^T + b` with `x` flattened to `[rows, in]`, `W: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        let rows = xs.first().copied().unwrap_or(1).max(1);
        let ins = self.value(x).numel() / rows;
        let (outs, wins) = match *self.value(w).shape() {
            [o, i] => (o, i),
            ref s => return Err(Error::shape("fully_connected", "weight rank", format!("{:?}", s))),
        };
        if wins != ins {
            return Err(Error::shape(
                "fully_connected",
                "input features",
                format!("input has {} features, weight expects {}", ins, wins),
            ));
        }
        if self.value(b).shape() != [outs] {
            return Err(Error::shape("fully_connected", "bias", format!("{:?}", self.value(b).shape())));
        }
        let mut out = vec![0.0f32; rows * outs];
        for r in 0..rows {
            out[r * outs..(r + 1) * outs].copy_from_slice(self.value(b).data());
        }
        kernels::gemm(rows, ins, outs, self.value(x).data(), false, self.value(w).data(), true, 1.0, &mut out);
        let t = Tensor::new(&[rows, outs], out)?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            t,
            Op::Linear {
                x,
                w,
                b,
                rows,
                ins,
                outs,
            },
            ng,
        ))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| math::sigmoid(v)).collect();
        let t = Tensor::new(src.shape(), data).expect("same shape");
        let ng = self.needs(x);
        self.push(t, Op::Sigmoid(x), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "add",
                "operands",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v * s).collect();
        let t = Tensor::new(src.shape(), data).expect("same shape");
        let ng = self.needs(x);
        self.push(t, Op::Scale(x, s), ng)
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat: no inputs"))?;
        let (n, _, h, w) = dims4(self.value(*first), "concat")?;
        let mut total_c = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = dims4(self.value(p), "concat")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape(
                    "concat",
                    "batch/spatial",
                    format!("{:?} vs {:?}", self.shape(p), self.shape(*first)),
                ));
            }
            total_c += pc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total_c * plane);
        for b in 0..n {
            for &p in parts {
                let c = self.shape(p)[1];
                out.extend_from_slice(&self.value(p).data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let t = Tensor::new(&[n, total_c, h, w], out)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(t, Op::Concat(parts.to_vec()), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    /// Max RoI pooling of a `[1, C, h, w]` map. `roi` is in input-pixel
    /// coordinates and is divided by `stride` to reach feature cells.
    pub fn roi_pool(&mut self, x: Var, roi: &BBox, stride: f32, grid: usize) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x), "roi_pool")?;
        if n != 1 {
            return Err(Error::shape("roi_pool", "batch", format!("expected 1, got {}", n)));
        }
        if grid == 0 || h == 0 || w == 0 {
            return Err(Error::invalid("roi_pool: empty grid or feature map"));
        }
        let (out, arg) = kernels::roi_pool_forward(self.value(x).data(), (c, h, w), roi, stride, grid);
        let t = Tensor::new(&[1, c, grid, grid], out)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::RoiPool { x, arg }, ng))
    }

    /// Backward warp of every plane of `x` along `flow`; differentiable in `x`.
    pub fn warp(&mut self, x: Var, flow: &FlowField) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x), "warp_backward")?;
        if flow.dims() != (w, h) {
            return Err(Error::shape(
                "warp_backward",
                "flow dimensions",
                format!("flow {:?} for map {}x{}", flow.dims(), w, h),
            ));
        }
        let plane = h * w;
        let mut out = vec![0.0f32; n * c * plane];
        for (src, dst) in self.value(x).data().chunks_exact(plane).zip(out.chunks_exact_mut(plane)) {
            vision::warp::warp_plane(src, w, h, flow, dst);
        }
        let t = Tensor::new(&[n, c, h, w], out)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::Warp { x, flow: flow.clone() }, ng))
    }

    /// Multiply every `h x w` plane of `x` by a fixed mask.
    pub fn mul_const(&mut self, x: Var, mask: &[f32]) -> Result<Var> {
        let (_, _, h, w) = dims4(self.value(x), "mul_const")?;
        if mask.len() != h * w {
            return Err(Error::shape("mul_const", "mask size", format!("{} for {}x{}", mask.len(), w, h)));
        }
        let data = self
            .value(x)
            .data()
            .chunks_exact(h * w)
            .flat_map(|p| p.iter().zip(mask).map(|(a, m)| a * m))
            .collect();
        let t = Tensor::new(self.shape(x), data)?;
        let ng = self.needs(x);
        Ok(self.push(
            t,
            Op::MulConst {
                x,
                mask: mask.to_vec(),
            },
            ng,
        ))
    }

    /// Class-balanced binary cross entropy averaged over pixels.
    ///
    /// `loss = -(w_fg * sum_fg log p + w_bg * sum_bg log(1 - p)) / n` with
    /// `w_fg = |bg| / n`, `w_bg = |fg| / n` and `p` clamped to `[1e-7, 1 - 1e-7]`.
    pub fn weighted_bce(&mut self, pred: Var, target: &[bool]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() {
            return Err(Error::shape(
                "weighted_bce_loss",
                "target size",
                format!("{} predictions, {} targets", p.len(), target.len()),
            ));
        }
        const EPS: f32 = 1e-7;
        let n = p.len() as f64;
        let fg = target.iter().filter(|&&t| t).count() as f64;
        let w_fg = (n - fg) / n;
        let w_bg = fg / n;
        let mut acc = 0.0f64;
        let mut dpred = vec![0.0f32; p.len()];
        for ((&pi, &ti), d) in p.iter().zip(target).zip(dpred.iter_mut()) {
            let clamped = pi.clamp(EPS, 1.0 - EPS);
            let inside = pi == clamped;
            if ti {
                acc += w_fg * math::ln(clamped as f64);
                if inside {
                    *d = (-w_fg / (clamped as f64 * n)) as f32;
                }
            } else {
                acc += w_bg * math::ln(1.0 - clamped as f64);
                if inside {
                    *d = (w_bg / ((1.0 - clamped as f64) * n)) as f32;
                }
            }
        }
        let loss = (-acc / n) as f32;
        let ng = self.needs(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Loss { pred, dpred }, ng))
    }

    /// Sum of per-coordinate smooth-L1 (beta = 1) between `pred` and `target`.
    pub fn smooth_l1(&mut self, pred: Var, target: &[f32]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() {
            return Err(Error::shape(
                "smooth_l1_loss",
                "target size",
                format!("{} predictions, {} targets", p.len(), target.len()),
            ));
        }
        if p.iter().chain(target).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("smooth_l1_loss input".into()));
        }
        let mut acc = 0.0f64;
        let mut dpred = Vec::with_capacity(p.len());
        for (&a, &b) in p.iter().zip(target) {
            let d = (a - b) as f64;
            if d.abs() < 1.0 {
                acc += 0.5 * d * d;
                dpred.push(d as f32);
            } else {
                acc += d.abs() - 0.5;
                dpred.push(d.signum() as f32);
            }
        }
        let ng = self.needs(pred);
        Ok(self.push(Tensor::scalar(acc as f32), Op::Loss { pred, dpred }, ng))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                "loss",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f32>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let nodes = &self.nodes;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let xv = nodes[x.0].value.data();
                let wv = nodes[w.0].value.data();
                // The three slots are distinct nodes; take them one at a time.
                if let Some(dw) = slot(nodes, grads, *w) {
                    kernels::conv2d_backward(xv, wv, g, geom, None, Some(dw), None);
                }
                if let Some(db) = slot(nodes, grads, *b) {
                    kernels::conv2d_backward(xv, wv, g, geom, None, None, Some(db));
                }
                if let Some(dx) = slot(nodes, grads, *x) {
                    kernels::conv2d_backward(xv, wv, g, geom, Some(dx), None, None);
                }
            }
            Op::Relu(x) => {
                let xv = nodes[x.0].value.data();
                if let Some(dx) = slot(nodes, grads, *x) {
                    for ((d, &gi), &v) in dx.iter_mut().zip(g).zip(xv) {
                        if v > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::MaxPool2 { x, arg } | Op::RoiPool { x, arg } => {
                if let Some(dx) = slot(nodes, grads, *x) {
                    kernels::scatter_argmax(g, arg, dx);
                }
            }
            Op::Upsample { x, from } => {
                let s = nodes[i].value.shape();
                let planes = s[0] * s[1];
                let to = (s[2], s[3]);
                if let Some(dx) = slot(nodes, grads, *x) {
                    kernels::upsample_backward(g, planes, *from, to, dx);
                }
            }
            Op::Linear {
                x,
                w,
                b,
                rows,
                ins,
                outs,
            } => {
                let (rows, ins, outs) = (*rows, *ins, *outs);
                if let Some(dw) = slot(nodes, grads, *w) {
                    // dW[o, i] += G[r, o]^T X[r, i]
                    kernels::gemm(outs, rows, ins, g, true, nodes[x.0].value.data(), false, 1.0, dw);
                }
                if let Some(db) = slot(nodes, grads, *b) {
                    for o in 0..outs {
                        let s: f64 = (0..rows).map(|r| g[r * outs + o] as f64).sum();
                        db[o] += s as f32;
                    }
                }
                if let Some(dx) = slot(nodes, grads, *x) {
                    // dX[r, i] += G[r, o] W[o, i]
                    kernels::gemm(rows, outs, ins, g, false, nodes[w.0].value.data(), false, 1.0, dx);
                }
            }
            Op::Sigmoid(x) => {
                let y = nodes[i].value.data();
                if let Some(dx) = slot(nodes, grads, *x) {
                    for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = slot(nodes, grads, *a) {
                    da.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
                if let Some(db) = slot(nodes, grads, *b) {
                    db.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
            }
            Op::Scale(x, s) => {
                if let Some(dx) = slot(nodes, grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * s);
                }
            }
            Op::Concat(parts) => {
                let s = nodes[i].value.shape();
                let (n, total_c, plane) = (s[0], s[1], s[2] * s[3]);
                let mut offset = 0;
                for &p in parts {
                    let c = nodes[p.0].value.shape()[1];
                    if let Some(dp) = slot(nodes, grads, p) {
                        for b in 0..n {
                            let src = &g[(b * total_c + offset) * plane..(b * total_c + offset + c) * plane];
                            let dst = &mut dp[b * c * plane..(b + 1) * c * plane];
                            dst.iter_mut().zip(src).for_each(|(d, gi)| *d += gi);
                        }
                    }
                    offset += c;
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = slot(nodes, grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
            }
            Op::Warp { x, flow } => {
                let s = nodes[i].value.shape();
                let (h, w) = (s[2], s[3]);
                if let Some(dx) = slot(nodes, grads, *x) {
                    for (gp, dp) in g.chunks_exact(h * w).zip(dx.chunks_exact_mut(h * w)) {
                        vision::warp::warp_plane_transpose(gp, w, h, flow, dp);
                    }
                }
            }
            Op::MulConst { x, mask } => {
                let plane = mask.len();
                if let Some(dx) = slot(nodes, grads, *x) {
                    for (gp, dp) in g.chunks_exact(plane).zip(dx.chunks_exact_mut(plane)) {
                        for ((d, gi), m) in dp.iter_mut().zip(gp).zip(mask) {
                            *d += gi * m;
                        }
                    }
                }
            }
            Op::Loss { pred, dpred } => {
                let scale = g[0];
                if let Some(dp) = slot(nodes, grads, *pred) {
                    dp.iter_mut().zip(dpred).for_each(|(d, l)| *d += scale * l);
                }
            }
        }
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `(name, gradient)` for every bound parameter that received one.
    /// A name rebound after [`Graph::rebind_params`] appears once per binding.
    pub fn param_grads(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.retired
            .iter()
            .map(|(name, v)| (name, v))
            .chain(self.params.iter())
            .filter_map(|(name, v)| self.grad(*v).map(|g| (name.as_str(), g)))
    }

    /// Forget the current name bindings so that later [`Graph::param`] calls
    /// create fresh nodes. Returns the old bindings; their gradients are still
    /// reported by [`Graph::param_grads`].
    pub fn rebind_params(&mut self) -> BTreeMap<String, Var> {
        let old = core::mem::take(&mut self.params);
        self.retired.extend(old.iter().map(|(k, v)| (k.clone(), *v)));
        old
    }

    /// Parameter node bound under `name`, if any.
    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamStore;

    fn t(shape: &[usize], v: &[f32]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    fn store() -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", t(&[1, 1, 3, 3], &[0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.2, 0.1, -0.3]).with_requires_grad(true));
        p.insert("b", t(&[1], &[0.05]).with_requires_grad(true));
        p.insert("fw", t(&[1, 4], &[0.3, -0.4, 0.2, 0.1]).with_requires_grad(true));
        p.insert("fb", t(&[1], &[0.0]).with_requires_grad(true));
        p
    }

    /// conv -> relu -> pool -> linear -> sigmoid, as a scalar.
    fn toy(p: &ParamStore, x: &[f32]) -> (Graph, Var) {
        let mut g = Graph::new();
        let xv = g.constant(t(&[1, 1, 4, 4], x));
        let w = g.param(p, "w").unwrap();
        let b = g.param(p, "b").unwrap();
        let c = g.conv2d(xv, w, b, 1, 1).unwrap();
        let r = g.relu(c);
        let m = g.max_pool2(r).unwrap();
        let fw = g.param(p, "fw").unwrap();
        let fb = g.param(p, "fb").unwrap();
        let y = g.linear(m, fw, fb).unwrap();
        let s = g.sigmoid(y);
        (g, s)
    }

    const X: [f32; 16] = [0.9, -0.3, 0.4, 0.1, 0.2, 0.8, -0.5, 0.3, -0.7, 0.6, 0.35, -0.2, 0.15, -0.45, 0.55, 0.25];

    #[test]
    fn forward_is_deterministic() {
        let p = store();
        let (a, ya) = toy(&p, &X);
        let (b, yb) = toy(&p, &X);
        assert_eq!(a.value(ya).data()[0].to_bits(), b.value(yb).data()[0].to_bits());
    }

    #[test]
    fn chain_matches_finite_differences() {
        let p = store();
        let (mut g, y) = toy(&p, &X);
        g.backward(y).unwrap();
        let mut analytic = BTreeMap::new();
        for (name, gr) in g.param_grads() {
            analytic.insert(name.to_string(), gr.to_vec());
        }
        let h = 1e-3f32;
        for name in ["w", "b", "fw", "fb"] {
            let n = p.get(name).unwrap().numel();
            for i in 0..n {
                let eval = |d: f32| {
                    let mut q = p.clone();
                    q.get_mut(name).unwrap().data_mut()[i] += d;
                    let (g, y) = toy(&q, &X);
                    g.value(y).data()[0] as f64
                };
                let num = (eval(h) - eval(-h)) / (2.0 * h as f64);
                let a = analytic[name][i] as f64;
                assert!((a - num).abs() <= 1e-3 * num.abs().max(1e-2), "{name}[{i}]: {a} vs {num}");
            }
        }
    }

    #[test]
    fn shared_parameter_gradients_add_up() {
        let mut p = ParamStore::new();
        p.insert("s", t(&[1, 1], &[2.0]).with_requires_grad(true));
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1], &[3.0]));
        let zero = g.constant(t(&[1], &[0.0]));
        let w1 = g.param(&p, "s").unwrap();
        let a = g.linear(x, w1, zero).unwrap();
        let w2 = g.param(&p, "s").unwrap();
        assert_eq!(w1, w2);
        let b = g.linear(a, w2, zero).unwrap();
        g.backward(b).unwrap();
        // d(s * s * 3)/ds = 6 s
        assert_eq!(g.grad(w1).unwrap(), &[12.0]);
    }

    #[test]
    fn rebinding_separates_parameter_uses() {
        let mut p = ParamStore::new();
        p.insert("s", t(&[1, 1], &[2.0]).with_requires_grad(true));
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1], &[3.0]));
        let zero = g.constant(t(&[1], &[0.0]));
        let w1 = g.param(&p, "s").unwrap();
        let a = g.linear(x, w1, zero).unwrap();
        let old = g.rebind_params();
        assert_eq!(old["s"], w1);
        let w2 = g.param(&p, "s").unwrap();
        assert_ne!(w1, w2);
        let b = g.linear(a, w2, zero).unwrap();
        g.backward(b).unwrap();
        assert_eq!(g.grad(w1).unwrap(), &[6.0]);
        assert_eq!(g.grad(w2).unwrap(), &[6.0]);
        let total: f32 = g.param_grads().map(|(_, gr)| gr[0]).sum();
        assert_eq!(total, 12.0);
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(matches!(g.conv2d(x, w, b, 1, 1), Err(Error::Shape { .. })));
        let y = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(g.add(x, y).is_err());
        assert!(g.weighted_bce(y, &[true; 4]).is_err());
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 1, 2], &[0.3, 0.6]));
        let v = g.variable(t(&[1, 1, 1, 2], &[0.2, 0.9]));
        let s = g.add(x, v).unwrap();
        let l = g.smooth_l1(s, &[0.0, 0.0]).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(x).is_none());
        assert!(g.grad(v).is_some());
    }

    #[test]
    fn box_sum_convolution() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 3, 3], &[1.0; 9]));
        let w = g.constant(t(&[1, 1, 3, 3], &[1.0; 9]));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.conv2d(x, w, b, 1, 1).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut g = Graph::new();
        let data = [0.5, -1.0, 2.0, 3.0, 0.0, -4.0];
        let x = g.constant(t(&[1, 1, 2, 3], &data));
        let w = g.constant(t(&[1, 1, 1, 1], &[1.0]));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &data);
    }

    #[test]
    fn relu_and_pool_by_hand() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let m = g.max_pool2(x).unwrap();
        assert_eq!(g.value(m).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(m).data(), &[4.0]);
    }

    #[test]
    fn bce_closed_forms() {
        let mut g = Graph::new();
        let target = [true, false, true, false];
        let p = g.constant(t(&[4], &[0.5; 4]));
        let l = g.weighted_bce(p, &target).unwrap();
        assert!((g.value(l).item() as f64 - 0.5 * core::f64::consts::LN_2).abs() < 1e-7);
        let p = g.constant(t(&[4], &[1.0, 0.0, 1.0, 0.0]));
        let l = g.weighted_bce(p, &target).unwrap();
        assert!(g.value(l).item() < 1e-6);
    }

    #[test]
    fn smooth_l1_by_hand() {
        let mut g = Graph::new();
        let p = g.constant(t(&[1, 4], &[2.5, 1.0, -1.0, 0.0]));
        let l = g.smooth_l1(p, &[0.5, 1.0, -1.0, 0.0]).unwrap();
        assert_eq!(g.value(l).item(), 1.5);
        let l = g.smooth_l1(p, &[2.5, 1.0, -1.0, 0.0]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }
}
