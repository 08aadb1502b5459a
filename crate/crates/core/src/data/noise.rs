//! Seeded value noise.

use crate::math;

fn hash(x: i32, y: i32, seed: u64) -> f32 {
    let mut h = seed ^ (x as u32 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u32 as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 40) as f32 / (1u64 << 24) as f32
}

fn smooth(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

fn octave(x: f32, y: f32, cell: f32, seed: u64) -> f32 {
    let (sx, sy) = (x / cell, y / cell);
    let (fx, fy) = (math::floorf(sx), math::floorf(sy));
    let (ix, iy) = (fx as i32, fy as i32);
    let (ax, ay) = (smooth(sx - fx), smooth(sy - fy));
    let top = hash(ix, iy, seed) * (1.0 - ax) + hash(ix + 1, iy, seed) * ax;
    let bot = hash(ix, iy + 1, seed) * (1.0 - ax) + hash(ix + 1, iy + 1, seed) * ax;
    top * (1.0 - ay) + bot * ay
}

/// Two-octave value noise in `[0, 1]`.
pub fn value_noise(x: f32, y: f32, cell: f32, seed: u64) -> f32 {
    0.6 * octave(x, y, cell, seed) + 0.4 * octave(x, y, cell * 0.4, seed.wrapping_add(0x51ED))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_and_deterministic() {
        for i in 0..500 {
            let (x, y) = (i as f32 * 0.37 - 40.0, i as f32 * 0.91 - 100.0);
            let v = value_noise(x, y, 5.0, 9);
            assert!((0.0..=1.0).contains(&v));
            assert_eq!(v, value_noise(x, y, 5.0, 9));
        }
        assert_ne!(value_noise(1.3, 2.7, 5.0, 1), value_noise(1.3, 2.7, 5.0, 2));
    }
}
