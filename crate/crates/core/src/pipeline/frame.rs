use alloc::vec::Vec;

use super::ModelConfig;
use crate::error::Result;
use crate::image::{FlowField, Frame, ProbMap};
use crate::locnet::{box_mask, forward_loc, propose, restriction_box, BBoxDelta};
use crate::segnet::forward_seg;
use crate::tensor::{Graph, ParamStore, Tensor, Var};
use crate::vision::BBox;

/// Everything one object needs at one frame besides its previous map.
#[derive(Clone, Copy, Debug)]
pub struct FrameInput<'a> {
    pub frame: &'a Frame,
    /// Carries the previous map into this frame. `None` (or a disabled warp
    /// toggle) feeds the previous map unchanged.
    pub warp: Option<&'a FlowField>,
    pub mag_bwd: &'a FlowField,
    pub mag_fwd: &'a FlowField,
}

/// Nodes and side results of one frame.
#[derive(Clone, Copy, Debug)]
pub struct FrameNodes {
    /// Previous map in this frame's coordinates, `[1, 1, H, W]`.
    pub warped: Var,
    /// Segmentation output before restriction.
    pub prob: Var,
    /// Box the localization net refined; `None` when the object is lost.
    pub proposal: Option<BBox>,
    /// Whether `proposal` came from the warped map rather than the fallback.
    pub proposed: bool,
    /// `[1, 4]` regressed delta.
    pub delta: Option<Var>,
    /// Enlarged box the output was restricted to.
    pub restriction: Option<BBox>,
    /// Output carried to the next frame.
    pub out: Var,
}

fn magnitudes(bwd: &FlowField, fwd: &FlowField) -> Result<Tensor> {
    let (w, h) = bwd.dims();
    let mut data: Vec<f32> = bwd.magnitude().into_vec();
    data.extend(fwd.magnitude().into_vec());
    Tensor::new(&[1, 2, h, w], data)
}

/// Build one frame of the recurrence on `g`: warp `prev`, run the
/// segmentation net, regress a box from the proposal (or `fallback` when the
/// warped map has none) and restrict. Which parts run follows the toggles.
pub fn frame_graph(
    g: &mut Graph,
    params: &ParamStore,
    cfg: &ModelConfig,
    input: &FrameInput<'_>,
    prev: Var,
    fallback: Option<BBox>,
) -> Result<FrameNodes> {
    let tg = cfg.toggles;
    let frame = input.frame;
    let (w, h) = frame.dims();
    let warped = match input.warp {
        Some(f) if tg.warp_mask => g.warp(prev, f)?,
        _ => prev,
    };
    let rgb = g.constant(Tensor::new(&[1, 3, h, w], frame.data().to_vec())?);
    let app = g.concat_channels(&[rgb, warped])?;
    let flow = if tg.flow_stream {
        let m = g.constant(magnitudes(input.mag_bwd, input.mag_fwd)?);
        Some(g.concat_channels(&[m, warped])?)
    } else {
        None
    };
    let seg = forward_seg(g, params, &cfg.seg, app, flow)?;
    let mut nodes = FrameNodes {
        warped,
        prob: seg.prob,
        proposal: None,
        proposed: false,
        delta: None,
        restriction: None,
        out: seg.prob,
    };
    if !(tg.train_loc || tg.apply_loc) {
        return Ok(nodes);
    }
    let warped_map = ProbMap::from_vec(w, h, g.value(warped).data().to_vec())?;
    let from_mask = propose(&warped_map, &cfg.loc);
    nodes.proposed = from_mask.is_some();
    nodes.proposal = from_mask.or(fallback);
    let Some(p) = nodes.proposal else {
        return Ok(nodes);
    };
    let delta = forward_loc(g, params, &cfg.loc, seg.deepest, &p, cfg.seg.stride())?;
    nodes.delta = Some(delta);
    if tg.apply_loc {
        let d = BBoxDelta::from_slice(g.value(delta).data())?;
        let b = restriction_box(&p, &d, &cfg.loc, w, h)?;
        nodes.restriction = Some(b);
        nodes.out = g.mul_const(seg.prob, &box_mask(&b, w, h))?;
    }
    Ok(nodes)
}
