//! Dense optical flow: a coarse-to-fine Horn-Schunck estimator and the exact
//! fields of synthetic scenes.
//!
//! Every field follows the backward-warp convention: `flow(a, b)` satisfies
//! `I_a(p) ~ I_b(p + flow(p))`, so warping anything defined on frame `b`
//! with it yields its appearance on frame `a`.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::SynthScene;
use crate::error::{Error, Result};
use crate::image::{FlowField, Frame, Grid};
use crate::math;
use crate::vision::resize_bilinear;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FlowParams {
    /// Smoothness weight, in intensity units (images are in `[0, 1]`).
    pub alpha: f32,
    /// Jacobi iterations per warp.
    pub iterations: usize,
    pub levels: usize,
    /// Re-linearizations per pyramid level.
    pub warps: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            iterations: 60,
            levels: 4,
            warps: 3,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || self.iterations == 0 || self.levels == 0 || self.warps == 0 {
            return Err(Error::invalid(alloc::format!("flow parameters out of range: {self:?}")));
        }
        Ok(())
    }
}

type Plane = Grid<f32>;

fn blur(p: &Plane) -> Plane {
    let (w, h) = p.dims();
    let at = |x: isize, y: isize| p.get(x.clamp(0, w as isize - 1) as usize, y.clamp(0, h as isize - 1) as usize);
    let tmp = Grid::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        0.25 * at(x - 1, y) + 0.5 * at(x, y) + 0.25 * at(x + 1, y)
    });
    let at = |x: isize, y: isize| tmp.get(x.clamp(0, w as isize - 1) as usize, y.clamp(0, h as isize - 1) as usize);
    Grid::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        0.25 * at(x, y - 1) + 0.5 * at(x, y) + 0.25 * at(x, y + 1)
    })
}

fn pyramid(p: &Plane, levels: usize) -> Result<Vec<Plane>> {
    let mut out = vec![blur(p)];
    for _ in 1..levels {
        let last = out.last().expect("non-empty");
        let (w, h) = last.dims();
        if w < 16 || h < 16 {
            break;
        }
        let next = resize_bilinear(&blur(last), w.div_ceil(2), h.div_ceil(2))?;
        out.push(next);
    }
    Ok(out)
}

/// Bilinear sample with clamped coordinates.
fn sample(p: &Plane, x: f32, y: f32) -> f32 {
    let (w, h) = p.dims();
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let (x0, y0) = (math::floorf(x) as usize, math::floorf(y) as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f32, y - y0 as f32);
    let top = p.get(x0, y0) * (1.0 - fx) + p.get(x1, y0) * fx;
    let bot = p.get(x0, y1) * (1.0 - fx) + p.get(x1, y1) * fx;
    top * (1.0 - fy) + bot * fy
}

fn gradients(p: &Plane) -> (Plane, Plane) {
    let (w, h) = p.dims();
    let gx = Grid::from_fn(w, h, |x, y| 0.5 * (p.get((x + 1).min(w - 1), y) - p.get(x.saturating_sub(1), y)));
    let gy = Grid::from_fn(w, h, |x, y| 0.5 * (p.get(x, (y + 1).min(h - 1)) - p.get(x, y.saturating_sub(1))));
    (gx, gy)
}

/// Horn-Schunck neighbourhood average (edge pixels replicate).
fn local_mean(f: &[f32], w: usize, h: usize, out: &mut [f32]) {
    let at = |x: isize, y: isize| f[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let edge = at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1);
            let corner = at(x - 1, y - 1) + at(x + 1, y - 1) + at(x - 1, y + 1) + at(x + 1, y + 1);
            out[y as usize * w + x as usize] = edge / 6.0 + corner / 12.0;
        }
    }
}

fn refine(a: &Plane, b: &Plane, u: &mut [f32], v: &mut [f32], params: &FlowParams) {
    let (w, h) = a.dims();
    let alpha2 = params.alpha * params.alpha;
    let (gax, gay) = gradients(a);
    let mut ubar = vec![0.0; w * h];
    let mut vbar = vec![0.0; w * h];
    for _ in 0..params.warps {
        let bw = Grid::from_fn(w, h, |x, y| {
            let i = y * w + x;
            sample(b, x as f32 + u[i], y as f32 + v[i])
        });
        let (gbx, gby) = gradients(&bw);
        let ix: Vec<f32> = gax.data().iter().zip(gbx.data()).map(|(p, q)| 0.5 * (p + q)).collect();
        let iy: Vec<f32> = gay.data().iter().zip(gby.data()).map(|(p, q)| 0.5 * (p + q)).collect();
        let (u0, v0) = (u.to_vec(), v.to_vec());
        let it: Vec<f32> = bw.data().iter().zip(a.data()).map(|(p, q)| p - q).collect();
        // Solve for the increment; smoothness acts on the total field.
        for _ in 0..params.iterations {
            local_mean(u, w, h, &mut ubar);
            local_mean(v, w, h, &mut vbar);
            for i in 0..w * h {
                let (du, dv) = (ubar[i] - u0[i], vbar[i] - v0[i]);
                let r = it[i] + ix[i] * du + iy[i] * dv;
                let k = r / (alpha2 + ix[i] * ix[i] + iy[i] * iy[i]);
                u[i] = ubar[i] - ix[i] * k;
                v[i] = vbar[i] - iy[i] * k;
            }
        }
    }
}

/// Coarse-to-fine Horn-Schunck flow with `I_a(p) ~ I_b(p + flow(p))`.
pub fn estimate_flow(a: &Frame, b: &Frame, params: &FlowParams) -> Result<FlowField> {
    params.validate()?;
    if a.dims() != b.dims() {
        return Err(Error::shape(
            "estimate_flow",
            "frame dimensions",
            alloc::format!("{:?} vs {:?}", a.dims(), b.dims()),
        ));
    }
    let pa = pyramid(&a.to_gray(), params.levels)?;
    let pb = pyramid(&b.to_gray(), params.levels)?;
    let (cw, ch) = pa.last().expect("non-empty").dims();
    let mut u = vec![0.0f32; cw * ch];
    let mut v = vec![0.0f32; cw * ch];
    let mut dims = (cw, ch);
    for level in (0..pa.len()).rev() {
        let (w, h) = pa[level].dims();
        if (w, h) != dims {
            let sx = w as f32 / dims.0 as f32;
            let sy = h as f32 / dims.1 as f32;
            let up_u = resize_bilinear(&Grid::from_vec(dims.0, dims.1, u)?, w, h)?;
            let up_v = resize_bilinear(&Grid::from_vec(dims.0, dims.1, v)?, w, h)?;
            u = up_u.into_vec().into_iter().map(|d| d * sx).collect();
            v = up_v.into_vec().into_iter().map(|d| d * sy).collect();
            dims = (w, h);
        }
        refine(&pa[level], &pb[level], &mut u, &mut v, params);
    }
    FlowField::from_vec(dims.0, dims.1, u.into_iter().zip(v).map(|(x, y)| [x, y]).collect())
}

/// Exact field of a synthetic scene at frame `from` towards frame `to`.
pub fn analytic_flow(scene: &SynthScene, from: usize, to: usize) -> Result<FlowField> {
    if from >= scene.frames || to >= scene.frames {
        return Err(Error::invalid(alloc::format!(
            "frames {from}->{to} outside a {}-frame scene",
            scene.frames
        )));
    }
    Ok(scene.flow_between(from, to))
}
