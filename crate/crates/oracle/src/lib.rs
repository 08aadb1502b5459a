//! Independent f64 reference implementations used as test oracles.
//!
//! Everything here is written as plain nested loops straight from the
//! definitions, sharing no code with the implementation crates, so that
//! analytic gradients can be checked against central differences of a
//! separately computed function.

/// Central finite differences of a scalar function.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let up = f(&xp);
            xp[i] = orig - h;
            let down = f(&xp);
            xp[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max |a - n| / max(max |n|, 1e-8)`.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let num = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let den = numeric.iter().map(|n| n.abs()).fold(0.0, f64::max).max(1e-8);
    num / den
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Dot product with a fixed projection, turning a tensor into a scalar.
pub fn project(v: &[f64], weights: &[f64]) -> f64 {
    v.iter().zip(weights).map(|(a, b)| a * b).sum()
}

/// NCHW convolution, kernel OCkk.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    k: &[f64],
    (o, ks): (usize, usize),
    b: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - ks) / stride + 1;
    let ow = (w + 2 * pad - ks) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b[oi];
                    for ci in 0..c {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((ni * c + ci) * h + iy as usize) * w + ix as usize]
                                    * k[((oi * c + ci) * ks + ky) * ks + kx];
                            }
                        }
                    }
                    out[((ni * o + oi) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect()
}

/// 2x2 max pooling, stride 2, over `planes` planes of `h x w`.
pub fn max_pool2(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        for y in 0..oh {
            for xx in 0..ow {
                let at = |dy: usize, dx: usize| x[p * h * w + (2 * y + dy) * w + 2 * xx + dx];
                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    out
}

/// Bilinear resize with half-pixel centers and clamped edges.
pub fn upsample(x: &[f64], planes: usize, (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    let coord = |o: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        let s = if src == dst {
            o as f64
        } else {
            ((o as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64)
        };
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(src - 1), s - i0 as f64)
    };
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        for oy in 0..oh {
            let (y0, y1, fy) = coord(oy, h, oh);
            for ox in 0..ow {
                let (x0, x1, fx) = coord(ox, w, ow);
                let v = |yy: usize, xx: usize| x[p * h * w + yy * w + xx];
                out.push(
                    (1.0 - fy) * ((1.0 - fx) * v(y0, x0) + fx * v(y0, x1))
                        + fy * ((1.0 - fx) * v(y1, x0) + fx * v(y1, x1)),
                );
            }
        }
    }
    out
}

/// `y = x W^T + b` with `x: rows x ins`, `W: outs x ins`.
pub fn linear(x: &[f64], rows: usize, ins: usize, wt: &[f64], b: &[f64], outs: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * outs];
    for r in 0..rows {
        for o in 0..outs {
            out[r * outs + o] = b[o] + (0..ins).map(|i| x[r * ins + i] * wt[o * ins + i]).sum::<f64>();
        }
    }
    out
}

/// Class-balanced binary cross entropy, normalized by the pixel count.
pub fn weighted_bce(p: &[f64], target: &[bool]) -> f64 {
    let eps = 1e-7;
    let n = p.len() as f64;
    let fg = target.iter().filter(|&&t| t).count() as f64;
    let (w_fg, w_bg) = ((n - fg) / n, fg / n);
    let mut s = 0.0;
    for (&pi, &t) in p.iter().zip(target) {
        let q = pi.clamp(eps, 1.0 - eps);
        s += if t { w_fg * q.ln() } else { w_bg * (1.0 - q).ln() };
    }
    -s / n
}

pub fn smooth_l1(p: &[f64], t: &[f64]) -> f64 {
    p.iter()
        .zip(t)
        .map(|(a, b)| {
            let d = (a - b).abs();
            if d < 1.0 {
                0.5 * d * d
            } else {
                d - 0.5
            }
        })
        .sum()
}

/// Max pooling of one `c x h x w` map over explicit bin ranges.
pub fn roi_pool(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    ybins: &[(usize, usize)],
    xbins: &[(usize, usize)],
) -> Vec<f64> {
    let mut out = Vec::new();
    for ch in 0..c {
        for &(y0, y1) in ybins {
            for &(x0, x1) in xbins {
                let mut m = f64::NEG_INFINITY;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        m = m.max(x[ch * h * w + y * w + xx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

/// `out(p) = src(p + flow(p))`, bilinear, zero outside.
pub fn warp(src: &[f64], w: usize, h: usize, flow: &[[f64; 2]]) -> Vec<f64> {
    let at = |x: i64, y: i64| {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            src[y as usize * w + x as usize]
        }
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let sx = x as f64 + flow[y * w + x][0];
            let sy = y as f64 + flow[y * w + x][1];
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            out.push(
                (1.0 - fx) * (1.0 - fy) * at(x0, y0)
                    + fx * (1.0 - fy) * at(x0 + 1, y0)
                    + (1.0 - fx) * fy * at(x0, y0 + 1)
                    + fx * fy * at(x0 + 1, y0 + 1),
            );
        }
    }
    out
}

/// Maximum bipartite matching size by simple augmenting paths.
pub fn max_matching(adj: &[Vec<usize>], right: usize) -> usize {
    fn try_kuhn(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none() || try_kuhn(owner[v].unwrap(), adj, seen, owner) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; right];
    let mut count = 0;
    for u in 0..adj.len() {
        let mut seen = vec![false; right];
        if try_kuhn(u, adj, &mut seen, &mut owner) {
            count += 1;
        }
    }
    count
}

/// Minimum-cost perfect assignment by exhaustive permutation search
/// (small `n` only).
pub fn brute_assignment(cost: &[Vec<f64>]) -> f64 {
    fn go(row: usize, cost: &[Vec<f64>], used: &mut [bool], acc: f64, best: &mut f64) {
        if acc >= *best {
            return;
        }
        if row == cost.len() {
            *best = acc;
            return;
        }
        for j in 0..cost.len() {
            if !used[j] {
                used[j] = true;
                go(row + 1, cost, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, cost, &mut vec![false; cost.len()], 0.0, &mut best);
    best
}
