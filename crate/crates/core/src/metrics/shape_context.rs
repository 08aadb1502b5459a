//! Shape context descriptors of sampled contour points.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Resample the concatenated closed contours at `k` points spaced equally by
/// arc length. Coordinates are relative to the first contour pixel.
pub fn sample_contours(contours: &[Vec<(usize, usize)>], k: usize) -> Vec<[f64; 2]> {
    let Some(origin) = contours.iter().find_map(|c| c.first()) else {
        return Vec::new();
    };
    let rel = |p: (usize, usize)| [p.0 as f64 - origin.0 as f64, p.1 as f64 - origin.1 as f64];
    // Closed polylines as segment lists.
    let mut segments = Vec::new();
    for c in contours.iter().filter(|c| !c.is_empty()) {
        for i in 0..c.len() {
            segments.push((rel(c[i]), rel(c[(i + 1) % c.len()])));
        }
    }
    let lengths: Vec<f64> = segments
        .iter()
        .map(|(a, b)| math::sqrt((b[0] - a[0]) * (b[0] - a[0]) + (b[1] - a[1]) * (b[1] - a[1])))
        .collect();
    let total: f64 = lengths.iter().sum();
    if total == 0.0 {
        // Isolated pixels only: repeat them.
        return (0..k).map(|i| segments[i % segments.len()].0).collect();
    }
    let mut out = Vec::with_capacity(k);
    let (mut seg, mut start) = (0usize, 0.0f64);
    for i in 0..k {
        let target = total * i as f64 / k as f64;
        while seg + 1 < segments.len() && start + lengths[seg] <= target {
            start += lengths[seg];
            seg += 1;
        }
        let (a, b) = segments[seg];
        let t = if lengths[seg] > 0.0 { ((target - start) / lengths[seg]).clamp(0.0, 1.0) } else { 0.0 };
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out
}

/// Normalized log-polar histograms, one per point. Radii are divided by the
/// mean pairwise distance and binned log-uniformly over `[1/8, 2]`.
pub fn descriptors(points: &[[f64; 2]], angular: usize, radial: usize) -> Vec<Vec<f64>> {
    let n = points.len();
    let dist = |i: usize, j: usize| {
        let (dx, dy) = (points[j][0] - points[i][0], points[j][1] - points[i][1]);
        math::sqrt(dx * dx + dy * dy)
    };
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += dist(i, j);
            }
        }
    }
    let pairs = (n * n.saturating_sub(1)) as f64;
    let mean = if pairs > 0.0 { sum / pairs } else { 0.0 };
    let (r_in, r_out) = (math::ln(0.125), math::ln(2.0));
    let tau = core::f64::consts::TAU;
    (0..n)
        .map(|i| {
            let mut h = vec![0.0; angular * radial];
            if mean > 0.0 {
                for j in (0..n).filter(|&j| j != i) {
                    let r = dist(i, j) / mean;
                    if r <= 0.0 {
                        continue;
                    }
                    let lr = math::ln(r);
                    if lr < r_in || lr > r_out {
                        continue;
                    }
                    let rb = (((lr - r_in) / (r_out - r_in)) * radial as f64) as usize;
                    let (dx, dy) = (points[j][0] - points[i][0], points[j][1] - points[i][1]);
                    let mut theta = math::atan2(dy, dx);
                    if theta < 0.0 {
                        theta += tau;
                    }
                    let ab = ((theta / tau) * angular as f64) as usize;
                    h[rb.min(radial - 1) * angular + ab.min(angular - 1)] += 1.0;
                }
            }
            let total: f64 = h.iter().sum();
            if total > 0.0 {
                h.iter_mut().for_each(|v| *v /= total);
            }
            h
        })
        .collect()
}

/// Chi-squared histogram distance, in `[0, 1]` for normalized histograms.
pub fn chi2(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a
        .iter()
        .zip(b)
        .filter(|(x, y)| **x + **y > 0.0)
        .map(|(x, y)| (x - y) * (x - y) / (x + y))
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_square_evenly() {
        let sq = vec![vec![(0, 0), (4, 0), (4, 4), (0, 4)]];
        let s = sample_contours(&sq, 8);
        assert_eq!(s.len(), 8);
        assert_eq!(s[0], [0.0, 0.0]);
        assert_eq!(s[1], [2.0, 0.0]);
        assert_eq!(s[2], [4.0, 0.0]);
        assert_eq!(s[4], [4.0, 4.0]);
    }

    #[test]
    fn histograms_are_normalized_and_chi2_bounded() {
        let pts: Vec<[f64; 2]> = (0..20)
            .map(|i| {
                let a = i as f64 * 0.314;
                [10.0 * a.cos(), 6.0 * a.sin()]
            })
            .collect();
        let d = descriptors(&pts, 12, 5);
        for h in &d {
            let s: f64 = h.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(chi2(&d[0], &d[0]), 0.0);
        let c = chi2(&d[0], &d[7]);
        assert!((0.0..=1.0).contains(&c));
        let one_hot = |k: usize| (0..4).map(|i| if i == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        assert_eq!(chi2(&one_hot(0), &one_hot(1)), 1.0);
    }
}
