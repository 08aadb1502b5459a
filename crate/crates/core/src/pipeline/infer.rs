use alloc::format;
use alloc::vec::Vec;

use super::frame::{frame_graph, FrameInput};
use super::{fit_video, resolve_flows, ModelConfig, SequenceFlows};
use crate::data::{crop_grid, VideoRecord};
use crate::error::{Error, Result};
use crate::fusion::fuse;
use crate::image::{LabelMask, ProbMap};
use crate::segnet::to_prob_map;
use crate::tensor::{Graph, ParamStore, Tensor};
use crate::vision::{enlarge, tight_bbox, BBox};

/// What the recurrence carries from one frame to the next.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    /// Frame the maps belong to.
    pub frame: usize,
    /// Restricted probability map per object.
    pub maps: Vec<ProbMap>,
    /// Last box each object was restricted to.
    pub last_boxes: Vec<Option<BBox>>,
    /// Objects whose warped map gave no proposal at `frame`.
    pub lost: Vec<bool>,
}

impl RecurrentState {
    /// Start from the first-frame annotation: every object's map is its
    /// binary plane.
    pub fn from_ground_truth(mask: &LabelMask, num_objects: usize) -> Result<Self> {
        let mut maps = Vec::with_capacity(num_objects);
        let mut last_boxes = Vec::with_capacity(num_objects);
        for i in 1..=num_objects {
            let plane = mask.plane(i as u8);
            let b = tight_bbox(&plane, 1).ok_or(Error::ObjectAbsent(i))?;
            maps.push(plane.to_prob());
            last_boxes.push(Some(b));
        }
        Ok(Self {
            frame: 0,
            lost: alloc::vec![false; num_objects],
            maps,
            last_boxes,
        })
    }
}

/// Result of one recurrence step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    /// Restricted map per object.
    pub maps: Vec<ProbMap>,
    /// Restriction box per object, if one was applied.
    pub boxes: Vec<Option<BBox>>,
    pub labels: LabelMask,
    pub state: RecurrentState,
}

fn object_params<'a>(params: &'a [ParamStore], i: usize, n: usize) -> Result<&'a ParamStore> {
    match params.len() {
        1 => Ok(&params[0]),
        m if m == n => Ok(&params[i]),
        m => Err(Error::invalid(format!("{m} parameter sets for {n} objects"))),
    }
}

/// Advance the recurrence by one frame. `params` holds one set shared by all
/// objects or one per object. The video must already be a multiple of the
/// backbone stride.
pub fn step_frame(
    state: &RecurrentState,
    video: &VideoRecord,
    flows: &SequenceFlows,
    params: &[ParamStore],
    cfg: &ModelConfig,
) -> Result<StepOutput> {
    let t = state.frame + 1;
    if t >= video.len() {
        return Err(Error::invalid(format!("video {} has no frame {t}", video.name)));
    }
    let (w, h) = video.dims();
    let n = state.maps.len();
    let warp = if cfg.toggles.warp_mask { Some(flows.warp(t)?) } else { None };
    let (mag_bwd, mag_fwd) = flows.magnitudes(t)?;
    let input = FrameInput {
        frame: &video.frames[t],
        warp,
        mag_bwd,
        mag_fwd,
    };
    let mut next = RecurrentState {
        frame: t,
        maps: Vec::with_capacity(n),
        last_boxes: state.last_boxes.clone(),
        lost: state.lost.clone(),
    };
    let mut boxes = Vec::with_capacity(n);
    for i in 0..n {
        let p = object_params(params, i, n)?;
        let fallback = if state.lost[i] {
            state.last_boxes[i].map(|b| enlarge(&b, cfg.loc.lost_enlarge, w, h))
        } else {
            None
        };
        let mut g = Graph::new();
        let prev = g.constant(Tensor::new(&[1, 1, h, w], state.maps[i].data().to_vec())?);
        let nodes = frame_graph(&mut g, p, cfg, &input, prev, fallback)?;
        let out = to_prob_map(&g, nodes.out)?;
        if out.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("prediction for object {} at frame {t}", i + 1)));
        }
        next.maps.push(out);
        next.lost[i] = !nodes.proposed;
        if let Some(b) = nodes.restriction {
            next.last_boxes[i] = Some(b);
        }
        boxes.push(nodes.restriction);
    }
    let labels = fuse(&next.maps, &cfg.fusion)?;
    Ok(StepOutput {
        maps: next.maps.clone(),
        boxes,
        labels,
        state: next,
    })
}

/// Run the recurrence from `state` to the end of the video.
pub fn infer_from(
    state: &RecurrentState,
    video: &VideoRecord,
    flows: &SequenceFlows,
    params: &[ParamStore],
    cfg: &ModelConfig,
) -> Result<Vec<StepOutput>> {
    let mut out: Vec<StepOutput> = Vec::with_capacity(video.len().saturating_sub(state.frame + 1));
    for _ in state.frame + 1..video.len() {
        let s = match out.last() {
            Some(o) => &o.state,
            None => state,
        };
        let step = step_frame(s, video, flows, params, cfg)?;
        out.push(step);
    }
    Ok(out)
}

/// Predicted label masks and per-object boxes of a whole video.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub masks: Vec<LabelMask>,
    /// `boxes[t][i]`: restriction box of object `i + 1` at frame `t`. The
    /// first frame reports the annotation's tight boxes.
    pub boxes: Vec<Vec<Option<BBox>>>,
}

/// Segment every frame of `video` given its first-frame annotation
/// `video.masks[0]`. The first output mask is that annotation.
pub fn infer(video: &VideoRecord, params: &[ParamStore], cfg: &ModelConfig) -> Result<Prediction> {
    cfg.validate()?;
    video.validate()?;
    let (padded, (w, h)) = fit_video(video, cfg);
    let flows = resolve_flows(&padded, cfg)?;
    let state = RecurrentState::from_ground_truth(&padded.masks[0], padded.num_objects)?;
    let steps = infer_from(&state, &padded, &flows, params, cfg)?;
    let clip = |b: &Option<BBox>| b.and_then(|b| b.clamp_to(w, h));
    let mut masks = Vec::with_capacity(video.len());
    let mut boxes = Vec::with_capacity(video.len());
    masks.push(video.masks[0].clone());
    boxes.push(state.last_boxes.iter().map(clip).collect());
    for s in &steps {
        masks.push(crop_grid(&s.labels, w, h));
        boxes.push(s.boxes.iter().map(clip).collect());
    }
    Ok(Prediction { masks, boxes })
}
