//! Raw forward/backward kernels on flat NCHW buffers. Shape validation is the
//! caller's job (see `graph.rs`).

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::vision::BBox;

/// `c = op(a) * op(b) + beta * c` with `op(a)` of shape `m x k` and `op(b)` of
/// shape `k x n`, all row-major. `a_t` means `a` is stored as `k x m`, `b_t`
/// means `b` is stored as `n x k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays within
    // the three slices, and `c` does not alias `a` or `b` (it is `&mut`).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Option<Self> {
        let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
        let (o, k) = (kernel[0], kernel[2]);
        let span_h = h + 2 * pad;
        let span_w = w + 2 * pad;
        if span_h < k || span_w < k || stride == 0 {
            return None;
        }
        Some(Self {
            n,
            c,
            h,
            w,
            o,
            k,
            stride,
            pad,
            oh: (span_h - k) / stride + 1,
            ow: (span_w - k) / stride + 1,
        })
    }

    #[inline]
    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    #[inline]
    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    #[inline]
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(img: &[f32], g: &ConvGeom, col: &mut [f32]) {
    let p = g.positions();
    for ci in 0..g.c {
        let plane = &img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy as usize >= g.h {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix as usize >= g.w {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f32], g: &ConvGeom, img: &mut [f32]) {
    let p = g.positions();
    for ci in 0..g.c {
        let plane = &mut img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(input: &[f32], weight: &[f32], bias: &[f32], g: &ConvGeom) -> Vec<f32> {
    let p = g.positions();
    let kk = g.patch();
    let mut out = vec![0.0f32; g.n * g.o * p];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0f32; kk * p] };
    for b in 0..g.n {
        let img = &input[b * g.c * g.h * g.w..(b + 1) * g.c * g.h * g.w];
        let dst = &mut out[b * g.o * p..(b + 1) * g.o * p];
        for (oc, row) in dst.chunks_exact_mut(p).enumerate() {
            row.fill(bias[oc]);
        }
        let cols: &[f32] = if g.is_pointwise() {
            img
        } else {
            im2col(img, g, &mut col);
            &col
        };
        gemm(g.o, kk, p, weight, false, cols, false, 1.0, dst);
    }
    out
}

/// Accumulates into whichever gradient buffers are supplied.
pub(crate) fn conv2d_backward(
    input: &[f32],
    weight: &[f32],
    dout: &[f32],
    g: &ConvGeom,
    mut dinput: Option<&mut [f32]>,
    mut dweight: Option<&mut [f32]>,
    mut dbias: Option<&mut [f32]>,
) {
    let p = g.positions();
    let kk = g.patch();
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0f32; kk * p] };
    let mut dcol = if dinput.is_some() && !g.is_pointwise() {
        vec![0.0f32; kk * p]
    } else {
        Vec::new()
    };
    for b in 0..g.n {
        let img = &input[b * g.c * g.h * g.w..(b + 1) * g.c * g.h * g.w];
        let dy = &dout[b * g.o * p..(b + 1) * g.o * p];
        if let Some(db) = dbias.as_deref_mut() {
            for (oc, row) in dy.chunks_exact(p).enumerate() {
                let s: f64 = row.iter().map(|&v| v as f64).sum();
                db[oc] += s as f32;
            }
        }
        if let Some(dw) = dweight.as_deref_mut() {
            let cols: &[f32] = if g.is_pointwise() {
                img
            } else {
                im2col(img, g, &mut col);
                &col
            };
            // dW[o, kk] += dY[o, p] * cols[kk, p]^T
            gemm(g.o, p, kk, dy, false, cols, true, 1.0, dw);
        }
        if let Some(dx) = dinput.as_deref_mut() {
            let dimg = &mut dx[b * g.c * g.h * g.w..(b + 1) * g.c * g.h * g.w];
            if g.is_pointwise() {
                // dX[c, p] += W[o, c]^T * dY[o, p]
                gemm(kk, g.o, p, weight, true, dy, false, 1.0, dimg);
            } else {
                gemm(kk, g.o, p, weight, true, dy, false, 0.0, &mut dcol);
                col2im(&dcol, g, dimg);
            }
        }
    }
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
/// Returns the output and, per output element, the flat input index of the max.
pub(crate) fn max_pool2_forward(input: &[f32], n: usize, c: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Index/weight pairs for one axis of half-pixel bilinear resampling.
#[derive(Clone, Debug)]
pub(crate) struct AxisTable {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f32>,
}

impl AxisTable {
    pub fn new(src: usize, dst: usize) -> Self {
        let scale = src as f32 / dst as f32;
        let mut lo = Vec::with_capacity(dst);
        let mut hi = Vec::with_capacity(dst);
        let mut frac = Vec::with_capacity(dst);
        for o in 0..dst {
            let s = if src == dst {
                o as f32
            } else {
                ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f32)
            };
            let i0 = math::floorf(s) as usize;
            let i1 = (i0 + 1).min(src - 1);
            lo.push(i0);
            hi.push(i1);
            frac.push(s - i0 as f32);
        }
        Self { lo, hi, frac }
    }
}

pub(crate) fn upsample_forward(
    input: &[f32],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<f32> {
    let ty = AxisTable::new(h, oh);
    let tx = AxisTable::new(w, ow);
    let mut out = vec![0.0f32; planes * oh * ow];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let (r0, r1, fy) = (ty.lo[oy] * w, ty.hi[oy] * w, ty.frac[oy]);
            for ox in 0..ow {
                let (c0, c1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                let top = src[r0 + c0] * (1.0 - fx) + src[r0 + c1] * fx;
                let bot = src[r1 + c0] * (1.0 - fx) + src[r1 + c1] * fx;
                dst[oy * ow + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Transpose of [`upsample_forward`], accumulated into `dinput`.
pub(crate) fn upsample_backward(
    dout: &[f32],
    planes: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    dinput: &mut [f32],
) {
    let ty = AxisTable::new(h, oh);
    let tx = AxisTable::new(w, ow);
    for p in 0..planes {
        let g = &dout[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dinput[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let (r0, r1, fy) = (ty.lo[oy] * w, ty.hi[oy] * w, ty.frac[oy]);
            for ox in 0..ow {
                let (c0, c1, fx) = (tx.lo[ox], tx.hi[ox], tx.frac[ox]);
                let v = g[oy * ow + ox];
                let top = v * (1.0 - fy);
                let bot = v * fy;
                dst[r0 + c0] += top * (1.0 - fx);
                dst[r0 + c1] += top * fx;
                dst[r1 + c0] += bot * (1.0 - fx);
                dst[r1 + c1] += bot * fx;
            }
        }
    }
}

/// Cell ranges `[start, end)` of each RoI bin along one axis.
///
/// The box edges are divided by the feature stride, widened outward to whole
/// cells and clamped to the map; a box that collapses is widened to one cell.
pub(crate) fn roi_bins(lo: f32, hi: f32, stride: f32, cells: usize, grid: usize) -> Vec<(usize, usize)> {
    let start = (math::floorf(lo / stride).max(0.0) as usize).min(cells - 1);
    let end = (math::ceilf(hi / stride).max(0.0) as usize).clamp(start + 1, cells);
    let span = end - start;
    (0..grid)
        .map(|j| {
            let s = start + j * span / grid;
            let e = start + ((j + 1) * span).div_ceil(grid);
            (s, e.max(s + 1))
        })
        .collect()
}

/// Max RoI pooling of one `C x h x w` map onto a `grid x grid` lattice.
pub(crate) fn roi_pool_forward(
    input: &[f32],
    (c, h, w): (usize, usize, usize),
    roi: &BBox,
    stride: f32,
    grid: usize,
) -> (Vec<f32>, Vec<u32>) {
    let ybins = roi_bins(roi.y_min, roi.y_max, stride, h, grid);
    let xbins = roi_bins(roi.x_min, roi.x_max, stride, w, grid);
    let mut out = Vec::with_capacity(c * grid * grid);
    let mut arg = Vec::with_capacity(c * grid * grid);
    for ch in 0..c {
        let base = ch * h * w;
        for &(y0, y1) in &ybins {
            for &(x0, x1) in &xbins {
                let mut best = base + y0 * w + x0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let i = base + y * w + x;
                        if input[i] > input[best] {
                            best = i;
                        }
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Scatter gradients to recorded argmax positions.
pub(crate) fn scatter_argmax(dout: &[f32], arg: &[u32], dinput: &mut [f32]) {
    for (&g, &i) in dout.iter().zip(arg) {
        dinput[i as usize] += g;
    }
}
