//! Backward warping: `out(p) = src(p + flow(p))`, bilinear, zero outside.
//!
//! To bring the previous frame's mask into the current frame, pass the flow
//! from the current frame to the previous one (`I_t(p) ~ I_{t-1}(p + f(p))`).

use alloc::vec;

use crate::error::{Error, Result};
use crate::image::{FlowField, Frame, Grid, ProbMap};
use crate::math;

#[inline]
fn taps(sx: f32, sy: f32) -> (isize, isize, f32, f32) {
    let x0 = math::floorf(sx);
    let y0 = math::floorf(sy);
    (x0 as isize, y0 as isize, sx - x0, sy - y0)
}

#[inline]
fn tap_weights(fx: f32, fy: f32) -> [(isize, isize, f32); 4] {
    [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ]
}

/// Warp one `w x h` plane.
pub fn warp_plane(src: &[f32], w: usize, h: usize, flow: &FlowField, dst: &mut [f32]) {
    for y in 0..h {
        for x in 0..w {
            let d = flow.get(x, y);
            let (x0, y0, fx, fy) = taps(x as f32 + d[0], y as f32 + d[1]);
            let mut acc = 0.0f32;
            for (dx, dy, wt) in tap_weights(fx, fy) {
                let (sx, sy) = (x0 + dx, y0 + dy);
                if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                    acc += wt * src[sy as usize * w + sx as usize];
                }
            }
            dst[y * w + x] = acc;
        }
    }
}

/// Adjoint of [`warp_plane`] with respect to the source plane, accumulated.
pub fn warp_plane_transpose(dout: &[f32], w: usize, h: usize, flow: &FlowField, dsrc: &mut [f32]) {
    for y in 0..h {
        for x in 0..w {
            let g = dout[y * w + x];
            if g == 0.0 {
                continue;
            }
            let d = flow.get(x, y);
            let (x0, y0, fx, fy) = taps(x as f32 + d[0], y as f32 + d[1]);
            for (dx, dy, wt) in tap_weights(fx, fy) {
                let (sx, sy) = (x0 + dx, y0 + dy);
                if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                    dsrc[sy as usize * w + sx as usize] += wt * g;
                }
            }
        }
    }
}

/// Rasters that can be backward-warped.
pub trait Warpable: Sized {
    fn warp(&self, flow: &FlowField) -> Result<Self>;
}

fn check(w: usize, h: usize, flow: &FlowField) -> Result<()> {
    if flow.dims() != (w, h) {
        return Err(Error::shape(
            "warp_backward",
            "flow dimensions",
            alloc::format!("flow {:?} for map {}x{}", flow.dims(), w, h),
        ));
    }
    Ok(())
}

impl Warpable for ProbMap {
    fn warp(&self, flow: &FlowField) -> Result<Self> {
        let (w, h) = self.dims();
        check(w, h, flow)?;
        let mut out = vec![0.0; w * h];
        warp_plane(self.data(), w, h, flow, &mut out);
        Grid::from_vec(w, h, out)
    }
}

impl Warpable for Frame {
    fn warp(&self, flow: &FlowField) -> Result<Self> {
        let (w, h) = self.dims();
        check(w, h, flow)?;
        let mut out = Frame::new(w, h);
        for c in 0..3 {
            warp_plane(self.channel(c), w, h, flow, out.channel_mut(c));
        }
        Ok(out)
    }
}

pub fn warp_backward<T: Warpable>(map: &T, flow: &FlowField) -> Result<T> {
    map.warp(flow)
}

pub fn warp_frame(frame: &Frame, flow: &FlowField) -> Result<Frame> {
    frame.warp(flow)
}

/// Per-pixel `sqrt(dx^2 + dy^2)`.
pub fn flow_magnitude(flow: &FlowField) -> Grid<f32> {
    flow.magnitude()
}
