// Finite-difference checks of every differentiable graph op against the f64
// reference implementations. Shared by the core integration tests and the
// acceptance target.

use maskrnn_core::tensor::{Graph, Tensor, Var};
use maskrnn_core::vision::BBox;
use maskrnn_core::FlowField;
use maskrnn_oracle as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

#[derive(Debug)]
pub struct OpResult {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
}

fn randn(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0f32..1.0) * scale).collect()
}

/// Values at least `gap` apart in random order, so max-selection and ReLU
/// kinks never sit inside the difference stencil.
fn distinct(rng: &mut ChaCha8Rng, n: usize, gap: f32) -> Vec<f32> {
    let mut v: Vec<f32> = (0..n).map(|i| ((i as f32) - (n / 2) as f32 + 0.5) * gap).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.gen_range(0..=i));
    }
    v
}

/// Reduce `y` to a scalar through a fixed random projection so every output
/// element contributes to the checked gradient.
fn project(g: &mut Graph, y: Var, r: &[f32]) -> Var {
    let n = r.len();
    let flat = g.reshape(y, &[1, n]).unwrap();
    let w = g.constant(Tensor::new(&[1, n], r.to_vec()).unwrap());
    let b = g.constant(Tensor::new(&[1], vec![0.0]).unwrap());
    g.linear(flat, w, b).unwrap()
}

fn grad_of(g: &Graph, v: Var) -> Vec<f64> {
    oracle::to_f64(g.grad(v).expect("gradient reached the input"))
}

fn check(res: &mut OpResult, analytic: &[f64], numeric: &[f64]) {
    res.instances += 1;
    res.max_rel_err = res.max_rel_err.max(oracle::rel_error(analytic, numeric));
}

fn new_result(op: &'static str) -> OpResult {
    OpResult {
        op,
        instances: 0,
        max_rel_err: 0.0,
    }
}

pub fn conv2d(rng: &mut ChaCha8Rng, count: usize) -> OpResult {
    let mut res = new_result("conv2d");
    for _ in 0..count {
        let (n, c, o) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let (h, w) = (rng.gen_range(3..=6), rng.gen_range(3..=6));
        let ks = if rng.gen_bool(0.5) { 3 } else { 1 };
        let stride = rng.gen_range(1..=2);
        let pad = if ks == 3 { rng.gen_range(0..=1) } else { 0 };
        let x = randn(rng, n * c * h * w, 1.0);
        let k = randn(rng, o * c * ks * ks, 0.5);
        let b = randn(rng, o, 0.5);
        let mut g = Graph::new();
        let xv = g.variable(Tensor::new(&[n, c, h, w], x.clone()).unwrap());
        let kv = g.variable(Tensor::new(&[o, c, ks, ks], k.clone()).unwrap());
        let bv = g.variable(Tensor::new(&[o], b.clone()).unwrap());
        let y = g.conv2d(xv, kv, bv, stride, pad).unwrap();
        let r = randn(rng, g.value(y).numel(), 1.0);
        let loss = project(&mut g, y, &r);
        g.backward(loss).unwrap();
        let r64 = oracle::to_f64(&r);
        let (x64, k64, b64) = (oracle::to_f64(&x), oracle::to_f64(&k), oracle::to_f64(&b));
        let f = |x: &[f64], k: &[f64], b: &[f64]| {
            oracle::project(&oracle::conv2d(x, (n, c, h, w), k, (o, ks), b, stride, pad).0, &r64)
        };
        check(&mut res, &grad_of(&g, xv), &oracle::central_diff(|v| f(v, &k64, &b64), &x64, H));
        check(&mut res, &grad_of(&g, kv), &oracle::central_diff(|v| f(&x64, v, &b64), &k64, H));
        check(&mut res, &grad_of(&g, bv), &oracle::central_diff(|v| f(&x64, &k64, v), &b64, H));
    }
    res
}

pub fn relu(rng: &mut ChaCha8Rng, count: usize) -> OpResult {
    let mut res = new_result("relu");
    for _ in 0..count {
        let n = rng.gen_range(4..=40);
        let x = distinct(rng, n, 0.05);
        let mut g = Graph::new();
        let xv = g.variable(Tensor::new(&[1, 1, 1, n], x.clone()).unwrap());
        let y = g.relu(xv);
        let r = randn(rng, n, 1.0);
        let loss = project(&mut g, y, &r);
        g.backward(loss).unwrap();
        let r64 = oracle::to_f64(&r);
        let num = oracle::central_diff(|v| oracle::project(&oracle::relu(v), &r64), &oracle::to_f64(&x), H);
        check(&mut res, &grad_of(&g, xv), &num);
    }
    res
}

pub fn max_pool2(rng: &mut ChaCha8Rng, count: usize) -> OpResult {
    let mut res = new_result("max_pool2");
    for _ in 0..count {
        let (c, h, w) = (rng.gen_range(1..=3), 2 * rng.gen_range(1..=4), 2 * rng.gen_range(1..=4));
        let x = distinct(rng, c * h * w, 0.01);
        let mut g = Graph::new();
        let xv = g.variable(Tensor::new(&[1, c, h, w], x.clone()).unwrap());
        let y = g.max_pool2(xv).unwrap();
        let r = randn(rng, g.value(y).numel(), 1.0);
        let loss = project(&mut g, y, &r);
        g.backward(loss).unwrap();
        let r64 = oracle::to_f64(&r);
        let num = oracle::central_diff(
            |v| oracle::project(&oracle::max_pool2(v, c, h, w), &r64),
            &oracle::to_f64(&x),
            H,
        );
        check(&mut res, &grad_of(&g, xv), &num);
    }
    res
}

pub fn upsample(rng: &mut ChaCha8Rng, count: usize) -> OpResult {
    let mut res = new_result("upsample");
    for _ in 0..count {
        let (c, h, w) = (rng.gen_range(1..=2), rng.gen_range(1..=5), rng.gen_range(1..=5));
        let (oh, ow) = (h * rng.gen_range(1..=4), w * rng.gen_range(1..=4));
        let x = randn(rng, c * h * w, 1.0);
        let mut g = Graph::new();
        let xv = g.variable(Tensor::new(&[1, c, h, w], x.clone()).unwrap());
        let y = g.upsample(xv, oh, ow).unwrap();
        let r = randn(rng, c * oh * ow, 1.0);
        let loss = project(&mut g, y, &r);
        g.backward(loss).unwrap();
        let r64 = oracle::to_f64(&r);
        let num = oracle::central_diff(
            |v| oracle::project(&oracle::upsample(v, c, (h, w), (oh, ow)), &r64),
            &oracle::to_f64(&x),
            H,
        );
        check(&mut res, &grad_of(&g, xv), &num);
    }
    res
}

pub fn linear(rng: &mut ChaCha8Rng, count: usize) -> OpResult {
    let mut res = new_result("linear");
    for _ in 0..count {
        let (rows, ins, outs) = (rng.gen_range(1..=3), rng.gen_range(1..=12), rng.gen_range(1..=6));
        let x = randn(rng, rows * ins, 1.0);
        let wt = randn(rng, outs * ins, 0.5);
        let b = randn(rng, outs, 0.5);
        let mut g = Graph::new();
        let xv = g.variable(Tensor::new(&[rows, ins], x.clone()).unwrap());
        let wv = g.variable(Tensor::new(&[outs, ins], wt.clone()).unwrap());
        let bv = g.variable(Tensor::new(&[outs], b.clone()).unwrap());
        let y = g.linear(xv, wv, bv).unwrap();
        let r = randn(rng, rows * outs, 1.0);
        let loss = project(&mut g, y, &r);
        g.backward(loss).unwrap();
        let r64 = oracle::to_f64(&r);
        let (x64, w64, b64) = (oracle::to_f64(&x), oracle::to_f64(&wt), oracle::to_f64(&b));
        let f = |x: &[f64], w: &[f64], b: &[f64]| oracle::project(&oracle::linear(x, rows, ins, w, b, outs), &r64);
        check(&mut res, &grad_of(&g, xv), &oracle::central_diff(|v| f(v, &w64, &b64), &x64, H));
        check(&mut res, &grad_of(&g, wv), &oracle::central_diff(|v| f(&x64, v, &b64), &w64, H));
        check(&mut res, &grad_of(&g, bv), &oracle::central_diff(|v| f(&x64, &w64, v), &b64, H));
    }
    res
}

pub fn sigmoid(rng: &mut ChaCha8Rng, count: usize) -> OpResult {
    let mut res = new_result("sigmoid");
    for _ in 0..count {
        let n = rng.gen_range(1..=30);
        let x = randn(rng, n, 4.0);
        let mut g = Graph::new();
        let xv = g.variable(Tensor::new(&[1, 1, 1, n], x.clone()).unwrap());
        let y = g.sigmoid(xv);
        let r = randn(rng, n, 1.0);
        let loss = project(&mut g, y, &r);
        g.backward(loss).unwrap();
        let r64 = oracle::to_f64(&r);
        let num = oracle::central_diff(|v| oracle::project(&oracle::sigmoid(v), &r64), &oracle::to_f64(&x), H);
        check(&mut res, &grad_of(&g, xv), &num);
    }
    res
}

pub fn weighted_bce(rng: &mut ChaCha8Rng, count: usize) -> OpResult {
    let mut res = new_result("weighted_bce");
    for _ in 0..count {
        let n = rng.gen_range(2..=40);
        let p: Vec<f32> = (0..n).map(|_| rng.gen_range(0.05f32..0.95)).collect();
        let t: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        let mut g = Graph::new();
        let pv = g.variable(Tensor::new(&[1, 1, 1, n], p.clone()).unwrap());
        let loss = g.weighted_bce(pv, &t).unwrap();
        g.backward(loss).unwrap();
        let num = oracle::central_diff(|v| oracle::weighted_bce(v, &t), &oracle::to_f64(&p), H);
        check(&mut res, &grad_of(&g, pv), &num);
    }
    res
}

pub fn smooth_l1(rng: &mut ChaCha8Rng, count: usize) -> OpResult {
    let mut res = new_result("smooth_l1");
    for _ in 0..count {
        let n = rng.gen_range(1..=8);
        let t = randn(rng, n, 2.0);
        // Differences stay clear of the |d| = 1 seam.
        let p: Vec<f32> = t
            .iter()
            .map(|&ti| {
                let mag = if rng.gen_bool(0.5) { rng.gen_range(0.05f32..0.9) } else { rng.gen_range(1.1f32..3.0) };
                ti + if rng.gen_bool(0.5) { mag } else { -mag }
            })
            .collect();
        let mut g = Graph::new();
        let pv = g.variable(Tensor::new(&[1, n], p.clone()).unwrap());
        let loss = g.smooth_l1(pv, &t).unwrap();
        g.backward(loss).unwrap();
        let t64 = oracle::to_f64(&t);
        let num = oracle::central_diff(|v| oracle::smooth_l1(v, &t64), &oracle::to_f64(&p), H);
        check(&mut res, &grad_of(&g, pv), &num);
    }
    res
}

/// Cells covered by `[lo, hi)` split into `grid` bins: the covered range is
/// `floor(lo / stride) .. ceil(hi / stride)` clipped to the map and at least
/// one cell wide; bin `j` spans `floor(j S / g) .. ceil((j + 1) S / g)`.
fn bins(lo: f32, hi: f32, stride: f32, cells: usize, grid: usize) -> Vec<(usize, usize)> {
    let first = ((lo / stride).floor().max(0.0) as usize).min(cells - 1);
    let last = ((hi / stride).ceil().max(0.0) as usize).max(first + 1).min(cells);
    let span = last - first;
    (0..grid)
        .map(|j| {
            let a = first + (j * span) / grid;
            let b = first + ((j + 1) * span + grid - 1) / grid;
            (a, b.max(a + 1))
        })
        .collect()
}

pub fn roi_pool(rng: &mut ChaCha8Rng, count: usize) -> OpResult {
    let mut res = new_result("roi_pool");
    for _ in 0..count {
        let (c, h, w) = (rng.gen_range(1..=3), rng.gen_range(3..=8), rng.gen_range(3..=8));
        let stride = [1.0f32, 2.0, 4.0][rng.gen_range(0..3)];
        let grid = rng.gen_range(1..=3);
        let (iw, ih) = (w as f32 * stride, h as f32 * stride);
        let x0 = rng.gen_range(0.0..iw * 0.6);
        let y0 = rng.gen_range(0.0..ih * 0.6);
        let roi = BBox::new(x0, y0, rng.gen_range(x0 + 1.0..=iw), rng.gen_range(y0 + 1.0..=ih)).unwrap();
        let x = distinct(rng, c * h * w, 0.01);
        let mut g = Graph::new();
        let xv = g.variable(Tensor::new(&[1, c, h, w], x.clone()).unwrap());
        let y = g.roi_pool(xv, &roi, stride, grid).unwrap();
        let r = randn(rng, c * grid * grid, 1.0);
        let loss = project(&mut g, y, &r);
        g.backward(loss).unwrap();
        let yb = bins(roi.y_min, roi.y_max, stride, h, grid);
        let xb = bins(roi.x_min, roi.x_max, stride, w, grid);
        let r64 = oracle::to_f64(&r);
        let num = oracle::central_diff(
            |v| oracle::project(&oracle::roi_pool(v, (c, h, w), &yb, &xb), &r64),
            &oracle::to_f64(&x),
            H,
        );
        check(&mut res, &grad_of(&g, xv), &num);
    }
    res
}

pub fn warp(rng: &mut ChaCha8Rng, count: usize) -> OpResult {
    let mut res = new_result("warp_backward");
    for _ in 0..count {
        let (h, w) = (rng.gen_range(2..=8), rng.gen_range(2..=8));
        let x = randn(rng, h * w, 1.0);
        let flow: Vec<[f32; 2]> = (0..h * w)
            .map(|_| [rng.gen_range(-2.5f32..2.5), rng.gen_range(-2.5f32..2.5)])
            .collect();
        let field = FlowField::from_vec(w, h, flow.clone()).unwrap();
        let mut g = Graph::new();
        let xv = g.variable(Tensor::new(&[1, 1, h, w], x.clone()).unwrap());
        let y = g.warp(xv, &field).unwrap();
        let r = randn(rng, h * w, 1.0);
        let loss = project(&mut g, y, &r);
        g.backward(loss).unwrap();
        let r64 = oracle::to_f64(&r);
        let f64flow: Vec<[f64; 2]> = flow.iter().map(|f| [f[0] as f64, f[1] as f64]).collect();
        let num = oracle::central_diff(
            |v| oracle::project(&oracle::warp(v, w, h, &f64flow), &r64),
            &oracle::to_f64(&x),
            H,
        );
        check(&mut res, &grad_of(&g, xv), &num);
    }
    res
}

/// Every op with `count` random instances each.
pub fn run_suite(seed: u64, count: usize) -> Vec<OpResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        conv2d(&mut rng, count),
        relu(&mut rng, count),
        max_pool2(&mut rng, count),
        upsample(&mut rng, count),
        linear(&mut rng, count),
        sigmoid(&mut rng, count),
        weighted_bce(&mut rng, count),
        smooth_l1(&mut rng, count),
        roi_pool(&mut rng, count),
        warp(&mut rng, count),
    ]
}
