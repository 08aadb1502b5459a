//! Synthetic parametric videos with exact ground truth, and the in-memory
//! video record shared by the trainer, the inference loop and the loaders.

mod noise;
mod suite;
mod synth;

pub use suite::{crossing_scene, default_suite, outlier_scene, random_scene, translation_scene, SuiteConfig};
pub use synth::{synth_generate, Shape, SynthObject, SynthScene, Texture};

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{FlowField, Frame, Grid, LabelMask};

/// Optical flow available at one frame: towards the previous frame (`bwd`)
/// and towards the next one (`fwd`). Both follow the backward-warp
/// convention `I_t(p) ~ I_s(p + flow(p))`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameFlows {
    pub bwd: Option<FlowField>,
    pub fwd: Option<FlowField>,
}

/// A video with per-frame label masks.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub name: String,
    pub frames: Vec<Frame>,
    /// Ground truth where available. Evaluation and training need every
    /// frame; inference only needs the first.
    pub masks: Vec<LabelMask>,
    pub num_objects: usize,
    /// Empty, or one entry per frame.
    pub flows: Vec<FrameFlows>,
}

impl VideoRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames.first().map_or((0, 0), Frame::dims)
    }

    /// Check the structural invariants: equal dimensions, mask labels within
    /// `0..=N`, flow list empty or one per frame.
    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        if self.frames.is_empty() {
            return Err(Error::invalid(alloc::format!("video {} has no frames", self.name)));
        }
        if self.masks.is_empty() || self.masks.len() > self.frames.len() {
            return Err(Error::invalid(alloc::format!(
                "video {}: {} masks for {} frames",
                self.name,
                self.masks.len(),
                self.frames.len()
            )));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.dims() != dims {
                return Err(Error::shape("video", "frame dimensions", alloc::format!("frame {t} is {:?}, expected {dims:?}", f.dims())));
            }
        }
        for (t, m) in self.masks.iter().enumerate() {
            if m.dims() != dims {
                return Err(Error::shape("video", "mask dimensions", alloc::format!("mask {t} is {:?}, expected {dims:?}", m.dims())));
            }
            if m.data().iter().any(|&l| l as usize > self.num_objects) {
                return Err(Error::invalid(alloc::format!("mask {t} has labels above {}", self.num_objects)));
            }
        }
        if !self.flows.is_empty() && self.flows.len() != self.frames.len() {
            return Err(Error::invalid(alloc::format!(
                "video {}: {} flow entries for {} frames",
                self.name,
                self.flows.len(),
                self.frames.len()
            )));
        }
        Ok(())
    }

    /// Pad every raster on the right and bottom so both sides are multiples
    /// of `multiple`. Frames replicate their edge, masks pad with background
    /// and flows with zero motion. Returns the record unchanged if it already fits.
    pub fn padded(&self, multiple: usize) -> VideoRecord {
        let (w, h) = self.dims();
        let m = multiple.max(1);
        let (pw, ph) = (w.div_ceil(m) * m, h.div_ceil(m) * m);
        if (pw, ph) == (w, h) {
            return self.clone();
        }
        let flow = |f: &FlowField| FlowField::from_fn(pw, ph, |x, y| if x < w && y < h { f.get(x, y) } else { [0.0; 2] });
        VideoRecord {
            name: self.name.clone(),
            frames: self
                .frames
                .iter()
                .map(|f| Frame::from_fn(pw, ph, |x, y| f.get(x.min(w - 1), y.min(h - 1))))
                .collect(),
            masks: self.masks.iter().map(|m| pad_grid(m, pw, ph)).collect(),
            num_objects: self.num_objects,
            flows: self
                .flows
                .iter()
                .map(|f| FrameFlows {
                    bwd: f.bwd.as_ref().map(flow),
                    fwd: f.fwd.as_ref().map(flow),
                })
                .collect(),
        }
    }

    /// Flow at frame `t` towards frame `s = t - 1` or `t + 1`, if stored.
    pub fn stored_flow(&self, t: usize, s: usize) -> Option<&FlowField> {
        let entry = self.flows.get(t)?;
        if s + 1 == t {
            entry.bwd.as_ref()
        } else if s == t + 1 {
            entry.fwd.as_ref()
        } else {
            None
        }
    }
}

fn pad_grid<T: Copy + Default>(g: &Grid<T>, pw: usize, ph: usize) -> Grid<T> {
    let (w, h) = g.dims();
    Grid::from_fn(pw, ph, |x, y| if x < w && y < h { g.get(x, y) } else { T::default() })
}

/// Top-left `width x height` window of `g`.
pub fn crop_grid<T: Copy>(g: &Grid<T>, width: usize, height: usize) -> Grid<T> {
    Grid::from_fn(width.min(g.width()), height.min(g.height()), |x, y| g.get(x, y))
}
