//! Argmax merge of per-object probability maps into one label map.

use crate::error::{Error, Result};
use crate::image::{LabelMask, ProbMap};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FusionConfig {
    /// A pixel is background unless some object reaches this probability.
    pub tau: f32,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { tau: 0.5 }
    }
}

/// Label `1 + argmax_i maps[i]` where the maximum reaches `tau`, else 0.
/// Ties go to the lowest object index.
pub fn fuse(maps: &[ProbMap], cfg: &FusionConfig) -> Result<LabelMask> {
    let first = maps.first().ok_or_else(|| Error::invalid("fuse: no probability maps"))?;
    if !(cfg.tau > 0.0 && cfg.tau < 1.0) {
        return Err(Error::invalid(alloc::format!("fuse: tau {} outside (0, 1)", cfg.tau)));
    }
    if maps.len() > u8::MAX as usize {
        return Err(Error::invalid("fuse: more than 255 objects"));
    }
    if let Some(bad) = maps.iter().position(|m| !m.same_dims(first)) {
        return Err(Error::shape(
            "fuse",
            "map dimensions",
            alloc::format!("map {} is {:?}, expected {:?}", bad + 1, maps[bad].dims(), first.dims()),
        ));
    }
    let (w, h) = first.dims();
    let mut out = LabelMask::new(w, h, 0);
    for (i, label) in out.data_mut().iter_mut().enumerate() {
        let mut best = 0;
        let mut best_p = maps[0].data()[i];
        for (k, m) in maps.iter().enumerate().skip(1) {
            if m.data()[i] > best_p {
                best = k;
                best_p = m.data()[i];
            }
        }
        if best_p >= cfg.tau {
            *label = best as u8 + 1;
        }
    }
    Ok(out)
}
