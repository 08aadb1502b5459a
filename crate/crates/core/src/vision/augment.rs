use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{FlowField, Frame, Grid};
use crate::math;

/// Ranges for paired frame/mask/flow augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AugmentConfig {
    pub flip: bool,
    pub max_rotation_deg: f32,
    pub min_scale: f32,
    pub max_scale: f32,
    /// Random translation as a fraction of the image size, emulating a crop
    /// that is resized back to the input size.
    pub max_shift: f32,
    /// Chance that rotation, scale and shift are drawn at all. Resampling
    /// blurs the frame, so the rest of the time only exact flips apply.
    pub affine_probability: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: true,
            max_rotation_deg: 10.0,
            min_scale: 0.9,
            max_scale: 1.1,
            max_shift: 0.05,
            affine_probability: 0.5,
        }
    }
}

/// A concrete geometric transform. Flips and quarter turns are exact index
/// permutations; rotation, scale and shift resample about the image center
/// and keep the input size; `crop` is applied last.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    pub flip: bool,
    /// Clockwise quarter turns.
    pub quarter_turns: u8,
    pub rotation_deg: f32,
    pub scale: f32,
    /// Pixels, in output coordinates.
    pub shift: [f32; 2],
    /// `(x, y, width, height)` window of the transformed image.
    pub crop: Option<[usize; 4]>,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            flip: false,
            quarter_turns: 0,
            rotation_deg: 0.0,
            scale: 1.0,
            shift: [0.0, 0.0],
            crop: None,
        }
    }
}

/// Values that can be carried through an augmentation.
trait Raster: Sized {
    fn dims(&self) -> (usize, usize);
    fn permute(&self, w: usize, h: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Self;
    fn resample(&self, map: &Affine) -> Self;
    /// Re-orient displacement vectors after a position permutation.
    fn map_vectors(&mut self, _f: impl Fn([f32; 2]) -> [f32; 2]) {}
}

/// `src = center + m * (dst - center - shift)` on pixel-center coordinates.
struct Affine {
    m: [f32; 4],
    inv: [f32; 4],
    center: (f32, f32),
    shift: [f32; 2],
}

impl Affine {
    fn source(&self, x: usize, y: usize) -> (f32, f32) {
        let px = x as f32 + 0.5 - self.center.0 - self.shift[0];
        let py = y as f32 + 0.5 - self.center.1 - self.shift[1];
        (
            self.m[0] * px + self.m[1] * py + self.center.0,
            self.m[2] * px + self.m[3] * py + self.center.1,
        )
    }
}

fn bilinear_clamped(plane: &[f32], w: usize, h: usize, sx: f32, sy: f32) -> f32 {
    let fx = (sx - 0.5).clamp(0.0, (w - 1) as f32);
    let fy = (sy - 0.5).clamp(0.0, (h - 1) as f32);
    let (x0, y0) = (math::floorf(fx) as usize, math::floorf(fy) as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (ax, ay) = (fx - x0 as f32, fy - y0 as f32);
    let top = plane[y0 * w + x0] * (1.0 - ax) + plane[y0 * w + x1] * ax;
    let bot = plane[y1 * w + x0] * (1.0 - ax) + plane[y1 * w + x1] * ax;
    top * (1.0 - ay) + bot * ay
}

impl Raster for Frame {
    fn dims(&self) -> (usize, usize) {
        Frame::dims(self)
    }

    fn permute(&self, w: usize, h: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        Frame::from_fn(w, h, |x, y| {
            let (sx, sy) = src(x, y);
            self.get(sx, sy)
        })
    }

    fn resample(&self, map: &Affine) -> Self {
        let (w, h) = self.dims();
        Frame::from_fn(w, h, |x, y| {
            let (sx, sy) = map.source(x, y);
            core::array::from_fn(|c| bilinear_clamped(self.channel(c), w, h, sx, sy))
        })
    }
}

/// Masks and label maps: nearest sample, background outside the image.
impl<T: Copy + Default> Raster for Grid<T> {
    fn dims(&self) -> (usize, usize) {
        Grid::dims(self)
    }

    fn permute(&self, w: usize, h: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        Grid::from_fn(w, h, |x, y| {
            let (sx, sy) = src(x, y);
            self.get(sx, sy)
        })
    }

    fn resample(&self, map: &Affine) -> Self {
        let (w, h) = self.dims();
        Grid::from_fn(w, h, |x, y| {
            let (sx, sy) = map.source(x, y);
            self.get_checked(math::floorf(sx) as isize, math::floorf(sy) as isize)
                .unwrap_or_default()
        })
    }
}

/// Flow vectors are re-expressed in output coordinates.
impl Raster for FlowField {
    fn dims(&self) -> (usize, usize) {
        FlowField::dims(self)
    }

    fn permute(&self, w: usize, h: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        FlowField::from_fn(w, h, |x, y| {
            let (sx, sy) = src(x, y);
            self.get(sx, sy)
        })
    }

    fn resample(&self, map: &Affine) -> Self {
        let (w, h) = self.dims();
        let dx: alloc::vec::Vec<f32> = self.data().iter().map(|d| d[0]).collect();
        let dy: alloc::vec::Vec<f32> = self.data().iter().map(|d| d[1]).collect();
        FlowField::from_fn(w, h, |x, y| {
            let (sx, sy) = map.source(x, y);
            let d = [
                bilinear_clamped(&dx, w, h, sx, sy),
                bilinear_clamped(&dy, w, h, sx, sy),
            ];
            [
                map.inv[0] * d[0] + map.inv[1] * d[1],
                map.inv[2] * d[0] + map.inv[3] * d[1],
            ]
        })
    }

    fn map_vectors(&mut self, f: impl Fn([f32; 2]) -> [f32; 2]) {
        self.data_mut().iter_mut().for_each(|d| *d = f(*d));
    }
}

impl Augmentation {
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, width: usize, height: usize, rng: &mut R) -> Self {
        let mut a = Self::default();
        if cfg.flip {
            a.flip = rng.gen::<bool>();
        }
        if !rng.gen_bool(cfg.affine_probability.clamp(0.0, 1.0) as f64) {
            return a;
        }
        if cfg.max_rotation_deg > 0.0 {
            a.rotation_deg = rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg);
        }
        if cfg.max_scale > cfg.min_scale {
            a.scale = rng.gen_range(cfg.min_scale..=cfg.max_scale);
        }
        if cfg.max_shift > 0.0 {
            let (mx, my) = (cfg.max_shift * width as f32, cfg.max_shift * height as f32);
            a.shift = [rng.gen_range(-mx..=mx), rng.gen_range(-my..=my)];
        }
        a
    }

    fn affine(&self, w: usize, h: usize) -> Option<Affine> {
        if self.rotation_deg == 0.0 && self.scale == 1.0 && self.shift == [0.0, 0.0] {
            return None;
        }
        // Forward map is scale * R(theta); sources come from its inverse.
        let th = self.rotation_deg.to_radians();
        let (s, c) = (math::sinf(th), math::cosf(th));
        let k = self.scale;
        let inv = [k * c, -k * s, k * s, k * c];
        let m = [c / k, s / k, -s / k, c / k];
        Some(Affine {
            m,
            inv,
            center: (w as f32 / 2.0, h as f32 / 2.0),
            shift: self.shift,
        })
    }

    fn output_dims(&self, w: usize, h: usize) -> Result<(usize, usize)> {
        let (tw, th) = if self.quarter_turns % 2 == 1 { (h, w) } else { (w, h) };
        match self.crop {
            None => Ok((tw, th)),
            Some([x, y, cw, ch]) => {
                if cw < 8 || ch < 8 {
                    return Err(Error::invalid(alloc::format!("crop {cw}x{ch} is smaller than 8x8")));
                }
                if x + cw > tw || y + ch > th {
                    return Err(Error::invalid(alloc::format!(
                        "crop [{x}, {y}, {cw}, {ch}] exceeds {tw}x{th}"
                    )));
                }
                Ok((cw, ch))
            }
        }
    }

    fn run<T: Raster>(&self, input: &T) -> Result<T> {
        let (w, h) = input.dims();
        self.output_dims(w, h)?;
        let mut cur = match self.affine(w, h) {
            Some(a) => input.resample(&a),
            None => input.permute(w, h, |x, y| (x, y)),
        };
        let (mut cw, mut ch) = (w, h);
        if self.flip {
            cur = cur.permute(cw, ch, |x, y| (cw - 1 - x, y));
            cur.map_vectors(|[dx, dy]| [-dx, dy]);
        }
        for _ in 0..self.quarter_turns % 4 {
            let (ow, oh) = (ch, cw);
            let src_h = ch;
            cur = cur.permute(ow, oh, |x, y| (y, src_h - 1 - x));
            cur.map_vectors(|[dx, dy]| [-dy, dx]);
            (cw, ch) = (ow, oh);
        }
        if let Some([x0, y0, w1, h1]) = self.crop {
            cur = cur.permute(w1, h1, |x, y| (x + x0, y + y0));
        }
        Ok(cur)
    }

    pub fn apply_frame(&self, frame: &Frame) -> Result<Frame> {
        self.run(frame)
    }

    pub fn apply_mask<T: Copy + Default>(&self, mask: &Grid<T>) -> Result<Grid<T>> {
        self.run(mask)
    }

    pub fn apply_flow(&self, flow: &FlowField) -> Result<FlowField> {
        self.run(flow)
    }
}

/// Draw one augmentation and apply it to a frame, its mask and its flow.
pub fn augment_pair<T: Copy + Default, R: Rng + ?Sized>(
    frame: &Frame,
    mask: &Grid<T>,
    flow: &FlowField,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Frame, Grid<T>, FlowField)> {
    let (w, h) = frame.dims();
    if mask.dims() != (w, h) || flow.dims() != (w, h) {
        return Err(Error::shape(
            "augment_pair",
            "image dimensions",
            alloc::format!("frame {w}x{h}, mask {:?}, flow {:?}", mask.dims(), flow.dims()),
        ));
    }
    let a = Augmentation::sample(cfg, w, h, rng);
    Ok((a.apply_frame(frame)?, a.apply_mask(mask)?, a.apply_flow(flow)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame() -> Frame {
        Frame::from_fn(12, 10, |x, y| [x as f32 / 12.0, y as f32 / 10.0, ((x * y) % 7) as f32 / 7.0])
    }

    fn flip() -> Augmentation {
        Augmentation {
            flip: true,
            ..Augmentation::default()
        }
    }

    #[test]
    fn flip_twice_is_identity() {
        let f = frame();
        let once = flip().apply_frame(&f).unwrap();
        assert_ne!(once, f);
        assert_eq!(flip().apply_frame(&once).unwrap(), f);
    }

    #[test]
    fn flip_negates_dx_at_mirrored_pixel() {
        let mut flow = FlowField::zeros(12, 10);
        flow.set(2, 3, [1.0, 0.5]);
        let out = flip().apply_flow(&flow).unwrap();
        assert_eq!(out.get(9, 3), [-1.0, 0.5]);
        assert_eq!(out.get(2, 3), [0.0, 0.0]);
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let m = Grid::from_fn(12, 10, |x, y| (x * 3 + y) % 5 == 0);
        let turn = Augmentation {
            quarter_turns: 1,
            ..Augmentation::default()
        };
        let mut cur = m.clone();
        for i in 0..4 {
            cur = turn.apply_mask(&cur).unwrap();
            assert_eq!(cur.dims(), if i % 2 == 0 { (10, 12) } else { (12, 10) });
        }
        assert_eq!(cur, m);
    }

    #[test]
    fn quarter_turn_rotates_flow_vectors() {
        // A field of (1, 0) turned clockwise points down.
        let out = Augmentation {
            quarter_turns: 1,
            ..Augmentation::default()
        }
        .apply_flow(&FlowField::constant(4, 6, [1.0, 0.0]))
        .unwrap();
        assert!(out.data().iter().all(|&d| d == [0.0, 1.0]));
    }

    #[test]
    fn small_crop_rejected() {
        let a = Augmentation {
            crop: Some([0, 0, 7, 9]),
            ..Augmentation::default()
        };
        assert!(a.apply_frame(&frame()).is_err());
        let ok = Augmentation {
            crop: Some([2, 1, 8, 8]),
            ..Augmentation::default()
        };
        let out = ok.apply_frame(&frame()).unwrap();
        assert_eq!(out.dims(), (8, 8));
        assert_eq!(out.get(0, 0), frame().get(2, 1));
    }

    #[test]
    fn random_pairs_stay_aligned_and_binary() {
        let f = frame();
        let m = Grid::from_fn(12, 10, |x, y| (3..8).contains(&x) && (2..7).contains(&y));
        let flow = FlowField::constant(12, 10, [0.5, -0.25]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (f2, m2, fl2) = augment_pair(&f, &m, &flow, &AugmentConfig::default(), &mut rng).unwrap();
            assert_eq!(f2.dims(), (12, 10));
            assert_eq!(m2.dims(), (12, 10));
            assert_eq!(fl2.dims(), (12, 10));
            assert!(fl2.data().iter().all(|d| d[0].is_finite() && d[1].is_finite()));
        }
    }
}
