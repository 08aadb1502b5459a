//! Two-stream binary segmentation net.
//!
//! Each stream is a small VGG-style backbone. The post-ReLU activation of
//! every stage (just before its max pool) is reduced to one channel by a 1x1
//! convolution, upsampled to the input size and summed: a hypercolumn side
//! response. The appearance and flow responses are then mixed by a learned
//! affine map and squashed by a sigmoid.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{FlowField, Frame, ProbMap};
use crate::tensor::{Graph, ParamInit, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SegNetConfig {
    /// `(convolutions, channels)` per stage.
    pub stages: Vec<(usize, usize)>,
    pub appearance_channels: usize,
    pub flow_channels: usize,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        Self {
            stages: vec![(2, 16), (2, 32), (2, 64), (2, 64), (2, 64)],
            appearance_channels: 4,
            flow_channels: 3,
        }
    }
}

impl SegNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.len() < 2 || self.stages.iter().any(|&(n, c)| n == 0 || c == 0) {
            return Err(Error::invalid(format!("segnet stages {:?}", self.stages)));
        }
        if self.appearance_channels == 0 || self.flow_channels == 0 {
            return Err(Error::invalid("segnet input channels must be positive"));
        }
        Ok(())
    }

    /// Pixel stride of the deepest feature map.
    pub fn stride(&self) -> usize {
        1 << (self.stages.len() - 1)
    }

    pub fn deepest_channels(&self) -> usize {
        self.stages.last().map_or(0, |s| s.1)
    }

    /// Whether `width x height` can be processed without padding.
    pub fn accepts(&self, width: usize, height: usize) -> bool {
        let s = self.stride();
        width > 0 && height > 0 && width % s == 0 && height % s == 0
    }
}

/// Which stream a parameter or input belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Appearance,
    Flow,
}

impl Stream {
    fn tag(self) -> &'static str {
        match self {
            Stream::Appearance => "app",
            Stream::Flow => "flow",
        }
    }
}

pub const FUSE_WEIGHT: &str = "seg/fuse/w";
pub const FUSE_BIAS: &str = "seg/fuse/b";

fn conv_name(stream: Stream, stage: usize, conv: usize) -> String {
    format!("seg/{}/s{}c{}", stream.tag(), stage, conv)
}

fn side_name(stream: Stream, stage: usize) -> String {
    format!("seg/{}/side{}", stream.tag(), stage)
}

/// Fresh parameters: Kaiming-uniform weights, zero biases, and a stream mix
/// of `(0.5, 0.5)` with zero offset.
pub fn init_params<R: Rng + ?Sized>(cfg: &SegNetConfig, rng: &mut R) -> Result<ParamStore> {
    cfg.validate()?;
    let mut p = ParamStore::new();
    for (stream, inputs) in [(Stream::Appearance, cfg.appearance_channels), (Stream::Flow, cfg.flow_channels)] {
        let mut cin = inputs;
        for (s, &(convs, width)) in cfg.stages.iter().enumerate() {
            for c in 0..convs {
                let name = conv_name(stream, s, c);
                p.insert(
                    format!("{name}/w"),
                    ParamInit::KaimingUniform { fan_in: cin * 9 }.build(&[width, cin, 3, 3], rng),
                );
                p.insert(format!("{name}/b"), ParamInit::Zeros.build(&[width], rng));
                cin = width;
            }
            let side = side_name(stream, s);
            p.insert(
                format!("{side}/w"),
                ParamInit::KaimingUniform { fan_in: width }.build(&[1, width, 1, 1], rng),
            );
            p.insert(format!("{side}/b"), ParamInit::Zeros.build(&[1], rng));
        }
    }
    p.insert(FUSE_WEIGHT, Tensor::new(&[1, 2, 1, 1], vec![0.5, 0.5])?);
    p.insert(FUSE_BIAS, Tensor::zeros(&[1]));
    Ok(p)
}

/// Output of one stream.
#[derive(Clone, Copy, Debug)]
pub struct StreamOutput {
    /// `[1, 1, H, W]` hypercolumn response.
    pub side: Var,
    /// `[1, C, H / stride, W / stride]` deepest post-ReLU feature.
    pub deepest: Var,
}

/// Run one backbone on a `[1, C, H, W]` input.
pub fn forward_stream(
    g: &mut Graph,
    params: &ParamStore,
    cfg: &SegNetConfig,
    stream: Stream,
    input: Var,
) -> Result<StreamOutput> {
    let shape = g.shape(input).to_vec();
    let expected = match stream {
        Stream::Appearance => cfg.appearance_channels,
        Stream::Flow => cfg.flow_channels,
    };
    if shape.len() != 4 || shape[1] != expected {
        return Err(Error::shape(
            "forward_stream",
            "input channels",
            format!("{} stream expects {expected} channels, got shape {shape:?}", stream.tag()),
        ));
    }
    let (h, w) = (shape[2], shape[3]);
    if !cfg.accepts(w, h) {
        return Err(Error::shape(
            "forward_stream",
            "spatial extent",
            format!("{w}x{h} is not divisible by {}", cfg.stride()),
        ));
    }
    let mut x = input;
    let mut side = None;
    for (s, &(convs, _)) in cfg.stages.iter().enumerate() {
        if s > 0 {
            x = g.max_pool2(x)?;
        }
        for c in 0..convs {
            let name = conv_name(stream, s, c);
            let wv = g.param(params, &format!("{name}/w"))?;
            let bv = g.param(params, &format!("{name}/b"))?;
            x = g.conv2d(x, wv, bv, 1, 1)?;
            x = g.relu(x);
        }
        // A 1x1 convolution commutes with bilinear upsampling, so reduce to
        // one channel first and upsample the single plane.
        let sname = side_name(stream, s);
        let sw = g.param(params, &format!("{sname}/w"))?;
        let sb = g.param(params, &format!("{sname}/b"))?;
        let mut r = g.conv2d(x, sw, sb, 1, 0)?;
        if s > 0 {
            r = g.upsample(r, h, w)?;
        }
        side = Some(match side {
            None => r,
            Some(acc) => g.add(acc, r)?,
        });
    }
    Ok(StreamOutput {
        side: side.expect("at least two stages"),
        deepest: x,
    })
}

/// Output of the two-stream net.
#[derive(Clone, Copy, Debug)]
pub struct SegOutput {
    /// `[1, 1, H, W]` foreground probability.
    pub prob: Var,
    /// Deepest appearance feature, used by the localization net.
    pub deepest: Var,
}

/// Combine both streams. With `flow` absent the flow response is a constant
/// zero plane (appearance-only mode); the mixing layer is the same.
pub fn forward_seg(
    g: &mut Graph,
    params: &ParamStore,
    cfg: &SegNetConfig,
    appearance: Var,
    flow: Option<Var>,
) -> Result<SegOutput> {
    let app = forward_stream(g, params, cfg, Stream::Appearance, appearance)?;
    let side_f = match flow {
        Some(f) => forward_stream(g, params, cfg, Stream::Flow, f)?.side,
        None => {
            let s = g.shape(app.side).to_vec();
            g.constant(Tensor::zeros(&s))
        }
    };
    let both = g.concat_channels(&[app.side, side_f])?;
    let fw = g.param(params, FUSE_WEIGHT)?;
    let fb = g.param(params, FUSE_BIAS)?;
    let logit = g.conv2d(both, fw, fb, 1, 0)?;
    Ok(SegOutput {
        prob: g.sigmoid(logit),
        deepest: app.deepest,
    })
}

/// Weighted binary cross entropy of a `[1, 1, H, W]` prediction.
pub fn seg_loss(g: &mut Graph, prob: Var, gt: &crate::image::BinaryMask) -> Result<Var> {
    g.weighted_bce(prob, gt.data())
}

/// `[1, 4, H, W]` appearance input: RGB and the warped previous mask.
pub fn appearance_input(frame: &Frame, warped: &[f32]) -> Result<Tensor> {
    let (w, h) = frame.dims();
    if warped.len() != w * h {
        return Err(Error::shape("appearance_input", "mask size", format!("{} for {w}x{h}", warped.len())));
    }
    let mut data = Vec::with_capacity(4 * w * h);
    data.extend_from_slice(frame.data());
    data.extend_from_slice(warped);
    Tensor::new(&[1, 4, h, w], data)
}

/// `[1, 3, H, W]` flow input: backward and forward flow magnitudes and the
/// warped previous mask.
pub fn flow_input(bwd: &FlowField, fwd: &FlowField, warped: &[f32]) -> Result<Tensor> {
    let (w, h) = bwd.dims();
    if fwd.dims() != (w, h) || warped.len() != w * h {
        return Err(Error::shape(
            "flow_input",
            "dimensions",
            format!("bwd {:?}, fwd {:?}, mask {}", bwd.dims(), fwd.dims(), warped.len()),
        ));
    }
    let mut data = Vec::with_capacity(3 * w * h);
    data.extend(bwd.data().iter().map(|d| libm::sqrtf(d[0] * d[0] + d[1] * d[1])));
    data.extend(fwd.data().iter().map(|d| libm::sqrtf(d[0] * d[0] + d[1] * d[1])));
    data.extend_from_slice(warped);
    Tensor::new(&[1, 3, h, w], data)
}

/// Read a `[1, 1, H, W]` value back as a probability map.
pub fn to_prob_map(g: &Graph, v: Var) -> Result<ProbMap> {
    let s = g.shape(v);
    if s.len() != 4 || s[0] != 1 || s[1] != 1 {
        return Err(Error::shape("to_prob_map", "shape", format!("{s:?}")));
    }
    ProbMap::from_vec(s[3], s[2], g.value(v).data().to_vec())
}
