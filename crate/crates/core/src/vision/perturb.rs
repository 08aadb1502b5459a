use rand::Rng;

use super::{dilate, tight_bbox};
use crate::image::{BinaryMask, Grid};
use crate::math;

/// Ranges for the random input-mask perturbation used during training.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PerturbConfig {
    /// Probability that each individual perturbation is drawn.
    pub probability: f32,
    pub max_dilation: usize,
    /// Off-diagonal shear magnitude of the affine deformation.
    pub max_shear: f32,
    pub min_scale: f32,
    pub max_scale: f32,
    pub max_rotation_deg: f32,
    /// Fraction of the object's box size.
    pub max_translation: f32,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            probability: 0.5,
            max_dilation: 5,
            max_shear: 0.1,
            min_scale: 0.9,
            max_scale: 1.1,
            max_rotation_deg: 10.0,
            max_translation: 0.1,
        }
    }
}

/// One concrete perturbation draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation {
    pub dilation: usize,
    pub shear: [f32; 2],
    pub scale: f32,
    pub rotation_deg: f32,
    /// Pixels.
    pub translation: [f32; 2],
}

impl Perturbation {
    pub fn identity() -> Self {
        Self {
            dilation: 0,
            shear: [0.0, 0.0],
            scale: 1.0,
            rotation_deg: 0.0,
            translation: [0.0, 0.0],
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    fn is_rigid_shift(&self) -> bool {
        self.shear == [0.0, 0.0] && self.scale == 1.0 && self.rotation_deg == 0.0
    }

    /// Draw a perturbation for an object whose box is `box_w x box_h` pixels.
    pub fn sample<R: Rng + ?Sized>(cfg: &PerturbConfig, box_w: f32, box_h: f32, rng: &mut R) -> Self {
        let mut p = Self::identity();
        let coin = |rng: &mut R| rng.gen::<f32>() < cfg.probability;
        if coin(rng) && cfg.max_dilation >= 1 {
            p.dilation = rng.gen_range(1..=cfg.max_dilation);
        }
        if coin(rng) && cfg.max_shear > 0.0 {
            p.shear = [
                rng.gen_range(-cfg.max_shear..=cfg.max_shear),
                rng.gen_range(-cfg.max_shear..=cfg.max_shear),
            ];
        }
        if coin(rng) && cfg.max_scale > cfg.min_scale {
            p.scale = rng.gen_range(cfg.min_scale..=cfg.max_scale);
        }
        if coin(rng) && cfg.max_rotation_deg > 0.0 {
            p.rotation_deg = rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg);
        }
        if coin(rng) && cfg.max_translation > 0.0 {
            let (mx, my) = (cfg.max_translation * box_w, cfg.max_translation * box_h);
            p.translation = [
                if mx > 0.0 { rng.gen_range(-mx..=mx) } else { 0.0 },
                if my > 0.0 { rng.gen_range(-my..=my) } else { 0.0 },
            ];
        }
        p
    }
}

/// Apply a perturbation: dilation first, then the affine part about the
/// center of the mask's box. Samples are nearest-neighbour at pixel centers.
pub fn apply_perturbation(mask: &BinaryMask, p: &Perturbation) -> BinaryMask {
    if p.is_identity() {
        return mask.clone();
    }
    let base = dilate(mask, p.dilation);
    let Some(b) = tight_bbox(&base, 1) else {
        return base;
    };
    let (w, h) = base.dims();
    let [tx, ty] = p.translation;
    if p.is_rigid_shift() {
        return Grid::from_fn(w, h, |x, y| {
            let sx = math::floorf(x as f32 + 0.5 - tx);
            let sy = math::floorf(y as f32 + 0.5 - ty);
            base.get_checked(sx as isize, sy as isize).unwrap_or(false)
        });
    }
    // Forward map A = R * S * Shear; sample through its inverse.
    let th = p.rotation_deg.to_radians();
    let (s, c) = (math::sinf(th), math::cosf(th));
    let [kx, ky] = p.shear;
    let sc = p.scale;
    let a = [
        sc * (c - s * ky),
        sc * (c * kx - s),
        sc * (s + c * ky),
        sc * (s * kx + c),
    ];
    let det = a[0] * a[3] - a[1] * a[2];
    let inv = [a[3] / det, -a[1] / det, -a[2] / det, a[0] / det];
    let (cx, cy) = b.center();
    Grid::from_fn(w, h, |x, y| {
        let px = x as f32 + 0.5 - cx - tx;
        let py = y as f32 + 0.5 - cy - ty;
        let qx = inv[0] * px + inv[1] * py + cx;
        let qy = inv[2] * px + inv[3] * py + cy;
        base.get_checked(math::floorf(qx) as isize, math::floorf(qy) as isize)
            .unwrap_or(false)
    })
}

/// Draw and apply a random perturbation.
pub fn perturb_mask<R: Rng + ?Sized>(mask: &BinaryMask, cfg: &PerturbConfig, rng: &mut R) -> BinaryMask {
    let (bw, bh) = tight_bbox(mask, 1).map_or((0.0, 0.0), |b| (b.width(), b.height()));
    let p = Perturbation::sample(cfg, bw, bh, rng);
    apply_perturbation(mask, &p)
}
