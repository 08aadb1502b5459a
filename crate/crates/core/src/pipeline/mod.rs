//! Per-frame recurrence, the three training stages and sequence inference.
//!
//! One generic pair of networks (segmentation + localization) is trained
//! offline, first on single frames with perturbed ground-truth masks, then
//! unrolled over short windows. At test time a copy is finetuned on the first
//! frame for every object, and the copies run side by side: each warps its own
//! previous probability map, predicts, restricts the prediction to its box,
//! and the maps are fused into one label mask.

mod ablation;
mod frame;
mod infer;
mod train;

pub use ablation::{ablation_rows, ablation_table, run_ablation, AblationConfig, AblationRow, AblationSeedResult};
pub use frame::{frame_graph, FrameInput, FrameNodes};
pub use infer::{infer, infer_from, step_frame, Prediction, RecurrentState, StepOutput};
pub use train::{
    finetune_object, online_finetune, train_recurrent, train_static, window_loss, Progress, Stage, TrainConfig, TrainReport,
    Window,
};

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::VideoRecord;
use crate::error::{Error, Result};
use crate::flow::{estimate_flow, FlowParams};
use crate::fusion::FusionConfig;
use crate::image::FlowField;
use crate::locnet::{self, LocConfig};
use crate::segnet::{self, SegNetConfig};
use crate::tensor::ParamStore;

/// Component switches mirroring the ablation table. Each one gates exactly
/// one code path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Toggles {
    /// Run the flow-magnitude stream; otherwise its response is zero.
    pub flow_stream: bool,
    /// Warp the previous map along the flow; otherwise use it as is.
    pub warp_mask: bool,
    /// Train the localization net (box regression loss).
    pub train_loc: bool,
    /// Restrict predictions to the regressed box.
    pub apply_loc: bool,
    /// Run the recurrent (unrolled) training stage.
    pub rnn: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            flow_stream: true,
            warp_mask: true,
            train_loc: true,
            apply_loc: true,
            rnn: true,
        }
    }
}

/// Where optical flow comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FlowSource {
    /// Stored flow only; a missing pair is an error.
    Stored,
    /// Always run the estimator.
    Estimate,
    /// Stored flow where present, estimated otherwise.
    #[default]
    StoredOrEstimate,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    pub seg: SegNetConfig,
    pub loc: LocConfig,
    pub fusion: FusionConfig,
    pub flow: FlowParams,
    pub flow_source: FlowSource,
    pub toggles: Toggles,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.seg.validate()?;
        self.loc.validate()?;
        self.flow.validate()?;
        if !(self.fusion.tau > 0.0 && self.fusion.tau < 1.0) {
            return Err(Error::invalid(format!("fusion tau {}", self.fusion.tau)));
        }
        Ok(())
    }

    /// Smaller backbone and head used by the default synthetic protocol.
    pub fn desk() -> Self {
        Self {
            seg: SegNetConfig {
                stages: alloc::vec![(2, 8), (2, 16), (2, 32), (2, 32)],
                ..SegNetConfig::default()
            },
            loc: LocConfig {
                fc_width: 64,
                ..LocConfig::default()
            },
            ..Self::default()
        }
    }
}

/// Fresh segmentation and localization parameters in one store.
pub fn init_model<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<ParamStore> {
    cfg.validate()?;
    let mut p = segnet::init_params(&cfg.seg, rng)?;
    p.extend(locnet::init_params(&cfg.loc, cfg.seg.deepest_channels(), rng)?);
    Ok(p)
}

/// Flows of every frame of a video, resolved once.
///
/// `bwd[t]` points to frame `t - 1` and `fwd[t]` to frame `t + 1`. The first
/// frame has no backward flow and the last no forward flow; the magnitude
/// input then repeats the available direction.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceFlows {
    pub bwd: Vec<Option<FlowField>>,
    pub fwd: Vec<Option<FlowField>>,
}

impl SequenceFlows {
    /// Zero flow everywhere, for runs that use neither flow path.
    pub fn zeros(video: &VideoRecord) -> Self {
        let (w, h) = video.dims();
        let n = video.len();
        let z = || Some(FlowField::zeros(w, h));
        Self {
            bwd: (0..n).map(|t| if t > 0 { z() } else { None }).collect(),
            fwd: (0..n).map(|t| if t + 1 < n { z() } else { None }).collect(),
        }
    }

    /// Flow used to warp the map of frame `t - 1` into frame `t`.
    pub fn warp(&self, t: usize) -> Result<&FlowField> {
        self.bwd
            .get(t)
            .and_then(Option::as_ref)
            .ok_or(Error::MissingFlow { from: t, to: t.wrapping_sub(1) })
    }

    /// `(backward, forward)` fields feeding the magnitude channels of frame `t`.
    pub fn magnitudes(&self, t: usize) -> Result<(&FlowField, &FlowField)> {
        let b = self.bwd.get(t).and_then(Option::as_ref);
        let f = self.fwd.get(t).and_then(Option::as_ref);
        match (b, f) {
            (Some(b), Some(f)) => Ok((b, f)),
            (Some(b), None) => Ok((b, b)),
            (None, Some(f)) => Ok((f, f)),
            (None, None) => Err(Error::MissingFlow { from: t, to: t + 1 }),
        }
    }
}

fn flow_pair(video: &VideoRecord, t: usize, s: usize, params: &FlowParams, source: FlowSource) -> Result<FlowField> {
    let stored = match source {
        FlowSource::Estimate => None,
        _ => video.stored_flow(t, s),
    };
    match (stored, source) {
        (Some(f), _) => Ok(f.clone()),
        (None, FlowSource::Stored) => Err(Error::MissingFlow { from: t, to: s }),
        (None, _) => estimate_flow(&video.frames[t], &video.frames[s], params),
    }
}

/// Resolve the flows `video` needs under `cfg`. When neither the flow stream
/// nor warping is enabled, no flow is read or estimated.
pub fn resolve_flows(video: &VideoRecord, cfg: &ModelConfig) -> Result<SequenceFlows> {
    if !cfg.toggles.flow_stream && !cfg.toggles.warp_mask {
        return Ok(SequenceFlows::zeros(video));
    }
    let n = video.len();
    let mut bwd = Vec::with_capacity(n);
    let mut fwd = Vec::with_capacity(n);
    for t in 0..n {
        bwd.push(if t > 0 {
            Some(flow_pair(video, t, t - 1, &cfg.flow, cfg.flow_source)?)
        } else {
            None
        });
        fwd.push(if t + 1 < n {
            Some(flow_pair(video, t, t + 1, &cfg.flow, cfg.flow_source)?)
        } else {
            None
        });
    }
    Ok(SequenceFlows { bwd, fwd })
}

/// Pad `video` to the backbone stride; returns the original size.
pub(crate) fn fit_video(video: &VideoRecord, cfg: &ModelConfig) -> (VideoRecord, (usize, usize)) {
    let dims = video.dims();
    (video.padded(cfg.seg.stride()), dims)
}
