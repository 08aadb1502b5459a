//! Object localization: a box proposal from the warped previous mask, RoI
//! pooling of the deepest appearance feature, two hidden fully connected
//! layers regressing a box delta, enlargement, and mask restriction.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{Grid, ProbMap};
use crate::math;
use crate::tensor::{Graph, ParamInit, ParamStore, Var};
use crate::vision::{enlarge, tight_bbox, BBox};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LocConfig {
    pub roi_grid: usize,
    pub proposal_threshold: f32,
    /// Proposals covering fewer pixels count as absent.
    pub min_area: usize,
    /// Applied to the regressed box before restriction.
    pub enlarge: f32,
    /// Applied to the last valid box when the object is lost.
    pub lost_enlarge: f32,
    pub fc_width: usize,
}

impl Default for LocConfig {
    fn default() -> Self {
        Self {
            roi_grid: 7,
            proposal_threshold: 0.5,
            min_area: 9,
            enlarge: 1.25,
            lost_enlarge: 1.5,
            fc_width: 256,
        }
    }
}

impl LocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.roi_grid == 0 || self.fc_width == 0 || !(self.enlarge >= 1.0) || !(self.lost_enlarge >= 1.0) {
            return Err(Error::invalid(format!("localization config out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Fast R-CNN box parameterization.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BBoxDelta {
    pub tx: f32,
    pub ty: f32,
    pub tw: f32,
    pub th: f32,
}

impl BBoxDelta {
    pub fn to_array(self) -> [f32; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_slice(v: &[f32]) -> Result<Self> {
        match *v {
            [tx, ty, tw, th] if v.iter().all(|x| x.is_finite()) => Ok(Self { tx, ty, tw, th }),
            _ => Err(Error::NonFinite(format!("box delta {v:?}"))),
        }
    }
}

fn check_box(b: &BBox, what: &str) -> Result<()> {
    if !(b.width() > 0.0 && b.height() > 0.0) {
        return Err(Error::invalid(format!("{what} box has non-positive size: {b:?}")));
    }
    Ok(())
}

/// Regression target taking `proposal` to `gt`.
pub fn encode_delta(proposal: &BBox, gt: &BBox) -> Result<BBoxDelta> {
    check_box(proposal, "proposal")?;
    check_box(gt, "target")?;
    let (pcx, pcy) = proposal.center();
    let (gcx, gcy) = gt.center();
    let (pw, ph) = (proposal.width(), proposal.height());
    Ok(BBoxDelta {
        tx: (gcx - pcx) / pw,
        ty: (gcy - pcy) / ph,
        tw: math::lnf(gt.width() / pw),
        th: math::lnf(gt.height() / ph),
    })
}

/// Inverse of [`encode_delta`].
pub fn apply_delta(proposal: &BBox, d: &BBoxDelta) -> Result<BBox> {
    check_box(proposal, "proposal")?;
    let (pcx, pcy) = proposal.center();
    let (pw, ph) = (proposal.width(), proposal.height());
    let b = BBox::from_center(pcx + d.tx * pw, pcy + d.ty * ph, pw * math::expf(d.tw), ph * math::expf(d.th));
    if ![b.x_min, b.y_min, b.x_max, b.y_max].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("box from delta {d:?}")));
    }
    Ok(b)
}

/// Tight box of the thresholded warped mask.
pub fn propose(warped: &ProbMap, cfg: &LocConfig) -> Option<BBox> {
    tight_bbox(&warped.threshold(cfg.proposal_threshold), cfg.min_area.max(1))
}

/// 1 inside the box (by pixel center), 0 outside.
pub fn box_mask(b: &BBox, width: usize, height: usize) -> Vec<f32> {
    Grid::from_fn(width, height, |x, y| if b.contains_pixel(x, y) { 1.0 } else { 0.0 }).into_vec()
}

/// Zero every probability whose pixel center lies outside `b`.
pub fn restrict(prob: &ProbMap, b: &BBox) -> ProbMap {
    let (w, h) = prob.dims();
    Grid::from_fn(w, h, |x, y| if b.contains_pixel(x, y) { prob.get(x, y) } else { 0.0 })
}

/// Final box used for restriction: regressed box enlarged and clamped.
pub fn restriction_box(proposal: &BBox, d: &BBoxDelta, cfg: &LocConfig, width: usize, height: usize) -> Result<BBox> {
    // Keep absurd size predictions from an untrained head in check.
    let d = BBoxDelta {
        tw: d.tw.clamp(-2.0, 2.0),
        th: d.th.clamp(-2.0, 2.0),
        ..*d
    };
    let b = apply_delta(proposal, &d)?;
    Ok(enlarge(&b, cfg.enlarge, width, height))
}

pub const LAYERS: [&str; 3] = ["loc/fc1", "loc/fc2", "loc/fc3"];

pub fn init_params<R: Rng + ?Sized>(cfg: &LocConfig, feature_channels: usize, rng: &mut R) -> Result<ParamStore> {
    cfg.validate()?;
    let ins = [feature_channels * cfg.roi_grid * cfg.roi_grid, cfg.fc_width, cfg.fc_width];
    let outs = [cfg.fc_width, cfg.fc_width, 4];
    let mut p = ParamStore::new();
    for ((name, i), o) in LAYERS.iter().zip(ins).zip(outs) {
        p.insert(format!("{name}/w"), ParamInit::KaimingUniform { fan_in: i }.build(&[o, i], rng));
        p.insert(format!("{name}/b"), ParamInit::Zeros.build(&[o], rng));
    }
    Ok(p)
}

/// Regress a `[1, 4]` delta for `proposal` from the deepest appearance
/// feature (stride `stride` pixels).
pub fn forward_loc(
    g: &mut Graph,
    params: &ParamStore,
    cfg: &LocConfig,
    deepest: Var,
    proposal: &BBox,
    stride: usize,
) -> Result<Var> {
    let mut x = g.roi_pool(deepest, proposal, stride as f32, cfg.roi_grid)?;
    for (k, name) in LAYERS.iter().enumerate() {
        let w = g.param(params, &format!("{name}/w"))?;
        let b = g.param(params, &format!("{name}/b"))?;
        x = g.linear(x, w, b)?;
        if k + 1 < LAYERS.len() {
            x = g.relu(x);
        }
    }
    Ok(x)
}
