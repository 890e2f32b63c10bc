//! Convolution, activation, and resampling primitives with explicit
//! forward/backward passes.
//!
//! The networks in this crate are small fixed graphs, so instead of a tape we
//! write each layer's backward by hand and chain them in the model code. Every
//! backward is checked against central finite differences in the tests.

use crate::rng::Rng;
use crate::tensor::Tensor;

/// 2-D convolution with square kernel, zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
    pub stride: usize,
    pub pad: usize,
    /// (out_ch, in_ch, k, k), row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients for one conv layer, same layout as the layer.
#[derive(Debug, Clone)]
pub struct Conv2dGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    /// He-style normal init scaled by `init_gain` (1.0 for hidden layers,
    /// smaller for output heads).
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        ksize: usize,
        stride: usize,
        pad: usize,
        init_gain: f64,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = (in_ch * ksize * ksize) as f64;
        let std = init_gain * (2.0 / fan_in).sqrt();
        let mut weight = vec![0.0; out_ch * in_ch * ksize * ksize];
        rng.fill_normal(&mut weight, 0.0, std);
        Conv2d {
            in_ch,
            out_ch,
            ksize,
            stride,
            pad,
            weight,
            bias: vec![0.0; out_ch],
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.pad - self.ksize) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.ksize) / self.stride + 1;
        (oh, ow)
    }

    /// Patch matrix of one sample: rows indexed by (ci, ky, kx), columns by
    /// output position; out-of-image taps are zero. Row r of the result pairs
    /// with weight lane r of every output channel, which turns the conv into
    /// wide contiguous multiply-accumulates.
    fn im2col(&self, x: &Tensor, n: usize, oh: usize, ow: usize, patches: &mut [f64]) {
        let k = self.ksize;
        let s = self.stride;
        let p = self.pad as isize;
        let cols = oh * ow;
        patches.fill(0.0);
        for ci in 0..self.in_ch {
            let xp = x.plane(n, ci);
            for ky in 0..k {
                for kx in 0..k {
                    let r = (ci * k + ky) * k + kx;
                    let row = &mut patches[r * cols..(r + 1) * cols];
                    for oy in 0..oh {
                        let iy = (oy * s) as isize + ky as isize - p;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let xrow = &xp[iy as usize * x.w..(iy as usize + 1) * x.w];
                        let orow = &mut row[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let shift = kx as isize - p;
                            let lo = (-shift).max(0) as usize;
                            let hi = ((x.w as isize - shift).min(ow as isize)).max(0) as usize;
                            if hi > lo {
                                let src = (lo as isize + shift) as usize;
                                orow[lo..hi].copy_from_slice(&xrow[src..src + (hi - lo)]);
                            }
                        } else {
                            for ox in 0..ow {
                                let ix = (ox * s) as isize + kx as isize - p;
                                if ix >= 0 && ix < x.w as isize {
                                    orow[ox] = xrow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let (oh, ow) = self.out_hw(x.h, x.w);
        let mut out = Tensor::zeros(x.n, self.out_ch, oh, ow);
        let cols = oh * ow;
        let lanes = self.in_ch * self.ksize * self.ksize;
        let mut patches = vec![0.0; lanes * cols];
        for n in 0..x.n {
            self.im2col(x, n, oh, ow, &mut patches);
            for co in 0..self.out_ch {
                let op = {
                    let start = (n * out.c + co) * cols;
                    &mut out.data[start..start + cols]
                };
                op.fill(self.bias[co]);
                let wrow = &self.weight[co * lanes..(co + 1) * lanes];
                // 4 lanes per pass keeps the output row in registers longer
                let mut r = 0;
                while r + 4 <= lanes {
                    let (w0, w1, w2, w3) = (wrow[r], wrow[r + 1], wrow[r + 2], wrow[r + 3]);
                    let p0 = &patches[r * cols..(r + 1) * cols];
                    let p1 = &patches[(r + 1) * cols..(r + 2) * cols];
                    let p2 = &patches[(r + 2) * cols..(r + 3) * cols];
                    let p3 = &patches[(r + 3) * cols..(r + 4) * cols];
                    for ((((o, &a), &b), &c), &d) in
                        op.iter_mut().zip(p0).zip(p1).zip(p2).zip(p3)
                    {
                        *o += w0 * a + w1 * b + w2 * c + w3 * d;
                    }
                    r += 4;
                }
                while r < lanes {
                    let wv = wrow[r];
                    let prow = &patches[r * cols..(r + 1) * cols];
                    for (o, &pv) in op.iter_mut().zip(prow.iter()) {
                        *o += wv * pv;
                    }
                    r += 1;
                }
            }
        }
        out
    }

    /// Gradients given the forward input and upstream gradient.
    /// `want_input` / `want_params` skip unneeded work (frozen nets, attacks).
    pub fn backward(
        &self,
        x: &Tensor,
        grad_out: &Tensor,
        want_input: bool,
        want_params: bool,
    ) -> (Option<Tensor>, Option<Conv2dGrad>) {
        let (oh, ow) = self.out_hw(x.h, x.w);
        debug_assert_eq!((grad_out.h, grad_out.w), (oh, ow));
        debug_assert_eq!(grad_out.c, self.out_ch);
        let cols = oh * ow;
        let lanes = self.in_ch * self.ksize * self.ksize;

        let mut gx = want_input.then(|| Tensor::zeros_like(x));
        let mut gp = want_params.then(|| Conv2dGrad {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        });
        let mut patches = want_params.then(|| vec![0.0; lanes * cols]);
        let mut d_patches = want_input.then(|| vec![0.0; lanes * cols]);

        for n in 0..x.n {
            if let (Some(gp), Some(patches)) = (gp.as_mut(), patches.as_mut()) {
                self.im2col(x, n, oh, ow, patches);
                for co in 0..self.out_ch {
                    let gop = grad_out.plane(n, co);
                    gp.bias[co] += gop.iter().sum::<f64>();
                    let wgrad = &mut gp.weight[co * lanes..(co + 1) * lanes];
                    for (r, wg) in wgrad.iter_mut().enumerate() {
                        let prow = &patches[r * cols..(r + 1) * cols];
                        *wg += dot4(gop, prow);
                    }
                }
            }
            if let Some(d_patches) = d_patches.as_mut() {
                d_patches.fill(0.0);
                // accumulate over output channels lane by lane so each patch
                // row is written once per 4-channel block
                let mut co = 0;
                while co + 4 <= self.out_ch {
                    let g0 = grad_out.plane(n, co);
                    let g1 = grad_out.plane(n, co + 1);
                    let g2 = grad_out.plane(n, co + 2);
                    let g3 = grad_out.plane(n, co + 3);
                    for r in 0..lanes {
                        let w0 = self.weight[co * lanes + r];
                        let w1 = self.weight[(co + 1) * lanes + r];
                        let w2 = self.weight[(co + 2) * lanes + r];
                        let w3 = self.weight[(co + 3) * lanes + r];
                        let drow = &mut d_patches[r * cols..(r + 1) * cols];
                        for ((((d, &a), &b), &c), &e) in
                            drow.iter_mut().zip(g0).zip(g1).zip(g2).zip(g3)
                        {
                            *d += w0 * a + w1 * b + w2 * c + w3 * e;
                        }
                    }
                    co += 4;
                }
                while co < self.out_ch {
                    let gop = grad_out.plane(n, co);
                    let wrow = &self.weight[co * lanes..(co + 1) * lanes];
                    for (r, &wv) in wrow.iter().enumerate() {
                        if wv == 0.0 {
                            continue;
                        }
                        let drow = &mut d_patches[r * cols..(r + 1) * cols];
                        for (d, &g) in drow.iter_mut().zip(gop.iter()) {
                            *d += wv * g;
                        }
                    }
                    co += 1;
                }
                // col2im: scatter-add patch gradients back to input positions
                let gx = gx.as_mut().unwrap();
                let k = self.ksize;
                let s = self.stride;
                let p = self.pad as isize;
                for ci in 0..self.in_ch {
                    let gxp = gx.plane_mut(n, ci);
                    for ky in 0..k {
                        for kx in 0..k {
                            let r = (ci * k + ky) * k + kx;
                            let drow = &d_patches[r * cols..(r + 1) * cols];
                            for oy in 0..oh {
                                let iy = (oy * s) as isize + ky as isize - p;
                                if iy < 0 || iy >= x.h as isize {
                                    continue;
                                }
                                let gxrow =
                                    &mut gxp[iy as usize * x.w..(iy as usize + 1) * x.w];
                                let dsub = &drow[oy * ow..(oy + 1) * ow];
                                if s == 1 {
                                    let shift = kx as isize - p;
                                    let lo = (-shift).max(0) as usize;
                                    let hi =
                                        ((x.w as isize - shift).min(ow as isize)).max(0) as usize;
                                    if hi > lo {
                                        let dst = (lo as isize + shift) as usize;
                                        for (g, &d) in gxrow[dst..dst + (hi - lo)]
                                            .iter_mut()
                                            .zip(dsub[lo..hi].iter())
                                        {
                                            *g += d;
                                        }
                                    }
                                } else {
                                    for ox in 0..ow {
                                        let ix = (ox * s) as isize + kx as isize - p;
                                        if ix >= 0 && ix < x.w as isize {
                                            gxrow[ix as usize] += dsub[ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        (gx, gp)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Dot product with four independent accumulator lanes so the reduction
/// vectorizes; deterministic (fixed association order).
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut chunks_a = a.chunks_exact(4);
    let mut chunks_b = b.chunks_exact(4);
    for (ca, cb) in chunks_a.by_ref().zip(chunks_b.by_ref()) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut tail = 0.0;
    for (&x, &y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Rational sigmoid 0.5 (1 + x / (1 + |x|)): strictly inside (0,1), monotone,
/// continuously differentiable, and free of transcendentals in the hot loops.
#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    0.5 * (1.0 + v / (1.0 + v.abs()))
}

/// Derivative of `sigmoid_scalar`: 0.5 / (1 + |x|)^2.
#[inline]
fn sigmoid_deriv(v: f64) -> f64 {
    let d = 1.0 + v.abs();
    0.5 / (d * d)
}

/// x * sigmoid(x); smooth first derivative keeps finite-difference gradient
/// checks honest.
pub fn silu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid_scalar(v))
}

pub fn silu_backward(pre_act: &Tensor, grad_out: &Tensor) -> Tensor {
    debug_assert!(pre_act.same_shape(grad_out));
    let mut gx = Tensor::zeros_like(pre_act);
    for i in 0..gx.data.len() {
        let v = pre_act.data[i];
        gx.data[i] = grad_out.data[i] * (sigmoid_scalar(v) + v * sigmoid_deriv(v));
    }
    gx
}

pub fn sigmoid_forward(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Backward through the sigmoid given its *output*: with t = 2y - 1,
/// ds/dx = 0.5 (1 - |t|)^2.
pub fn sigmoid_backward(out: &Tensor, grad_out: &Tensor) -> Tensor {
    debug_assert!(out.same_shape(grad_out));
    let mut gx = Tensor::zeros_like(out);
    for i in 0..gx.data.len() {
        let t = 2.0 * out.data[i] - 1.0;
        let u = 1.0 - t.abs();
        gx.data[i] = grad_out.data[i] * 0.5 * u * u;
    }
    gx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2x_forward(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.n, x.c, x.h * 2, x.w * 2);
    for n in 0..x.n {
        for c in 0..x.c {
            let xp = x.plane(n, c);
            let op = out.plane_mut(n, c);
            let ow = x.w * 2;
            for y in 0..x.h {
                for xx in 0..x.w {
                    let v = xp[y * x.w + xx];
                    let base = (2 * y) * ow + 2 * xx;
                    op[base] = v;
                    op[base + 1] = v;
                    op[base + ow] = v;
                    op[base + ow + 1] = v;
                }
            }
        }
    }
    out
}

pub fn upsample2x_backward(grad_out: &Tensor) -> Tensor {
    let h = grad_out.h / 2;
    let w = grad_out.w / 2;
    let mut gx = Tensor::zeros(grad_out.n, grad_out.c, h, w);
    for n in 0..grad_out.n {
        for c in 0..grad_out.c {
            let gop = grad_out.plane(n, c);
            let gxp = gx.plane_mut(n, c);
            let ow = w * 2;
            for y in 0..h {
                for xx in 0..w {
                    let base = (2 * y) * ow + 2 * xx;
                    gxp[y * w + xx] = gop[base] + gop[base + 1] + gop[base + ow] + gop[base + ow + 1];
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff(mut f: impl FnMut(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
        let mut g = Vec::with_capacity(at.len());
        let mut probe = at.to_vec();
        for i in 0..at.len() {
            probe[i] = at[i] + h;
            let hi = f(&probe);
            probe[i] = at[i] - h;
            let lo = f(&probe);
            probe[i] = at[i];
            g.push((hi - lo) / (2.0 * h));
        }
        g
    }

    fn assert_close(analytic: &[f64], numeric: &[f64], tol: f64) {
        for (i, (a, n)) in analytic.iter().zip(numeric.iter()).enumerate() {
            let denom = a.abs().max(n.abs()).max(1e-6);
            assert!(
                (a - n).abs() / denom < tol,
                "grad mismatch at {i}: analytic {a}, numeric {n}"
            );
        }
    }

    #[test]
    fn conv_forward_hand_case() {
        // 1x1 input channel, 2x2 image, identity-ish 1x1 kernel
        let mut rng = Rng::new(0);
        let mut conv = Conv2d::new(1, 1, 1, 1, 0, 1.0, &mut rng);
        conv.weight = vec![2.0];
        conv.bias = vec![0.5];
        let x = Tensor::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let y = conv.forward(&x);
        assert_eq!(y.data, vec![2.5, 4.5, 6.5, 8.5]);
    }

    #[test]
    fn conv_forward_known_3x3() {
        // 3x3 kernel of ones, pad 1, stride 1 on a 3x3 image of ones:
        // each output = count of in-bounds taps (4 corners, 6 edges, 9 center)
        let mut rng = Rng::new(0);
        let mut conv = Conv2d::new(1, 1, 3, 1, 1, 1.0, &mut rng);
        conv.weight = vec![1.0; 9];
        conv.bias = vec![0.0];
        let x = Tensor::from_vec(1, 1, 3, 3, vec![1.0; 9]);
        let y = conv.forward(&x);
        assert_eq!(y.data, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_stride2_shapes() {
        let mut rng = Rng::new(1);
        let conv = Conv2d::new(3, 8, 3, 2, 1, 1.0, &mut rng);
        let x = Tensor::zeros(2, 3, 16, 16);
        let y = conv.forward(&x);
        assert_eq!(y.shape(), (2, 8, 8, 8));
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = Rng::new(7);
        let conv = Conv2d::new(2, 3, 3, 2, 1, 1.0, &mut rng);
        let mut x = Tensor::zeros(1, 2, 6, 6);
        rng.fill_normal(&mut x.data, 0.0, 1.0);
        // scalar objective: sum of squares of output
        let loss_of = |c: &Conv2d, xin: &Tensor| {
            let y = c.forward(xin);
            y.data.iter().map(|v| v * v).sum::<f64>()
        };
        let y = conv.forward(&x);
        let grad_out = y.map(|v| 2.0 * v);
        let (gx, gp) = conv.backward(&x, &grad_out, true, true);
        let gx = gx.unwrap();
        let gp = gp.unwrap();

        let num_gx = finite_diff(
            |d| {
                let probe = Tensor::from_vec(1, 2, 6, 6, d.to_vec());
                loss_of(&conv, &probe)
            },
            &x.data,
            1e-5,
        );
        assert_close(&gx.data, &num_gx, 1e-6);

        let num_gw = finite_diff(
            |d| {
                let mut c2 = conv.clone();
                c2.weight = d.to_vec();
                loss_of(&c2, &x)
            },
            &conv.weight,
            1e-5,
        );
        assert_close(&gp.weight, &num_gw, 1e-6);

        let num_gb = finite_diff(
            |d| {
                let mut c2 = conv.clone();
                c2.bias = d.to_vec();
                loss_of(&c2, &x)
            },
            &conv.bias,
            1e-5,
        );
        assert_close(&gp.bias, &num_gb, 1e-6);
    }

    #[test]
    fn silu_backward_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let mut x = Tensor::zeros(1, 1, 4, 4);
        rng.fill_normal(&mut x.data, 0.0, 2.0);
        let y = silu_forward(&x);
        let grad_out = y.map(|v| 2.0 * v);
        let gx = silu_backward(&x, &grad_out);
        let num = finite_diff(
            |d| {
                let probe = Tensor::from_vec(1, 1, 4, 4, d.to_vec());
                silu_forward(&probe).data.iter().map(|v| v * v).sum()
            },
            &x.data,
            1e-6,
        );
        assert_close(&gx.data, &num, 1e-5);
    }

    #[test]
    fn upsample_roundtrip_gradient() {
        let mut rng = Rng::new(5);
        let mut x = Tensor::zeros(1, 2, 3, 3);
        rng.fill_normal(&mut x.data, 0.0, 1.0);
        let y = upsample2x_forward(&x);
        assert_eq!(y.shape(), (1, 2, 6, 6));
        assert_eq!(y.at(0, 0, 0, 0), x.at(0, 0, 0, 0));
        assert_eq!(y.at(0, 1, 5, 5), x.at(0, 1, 2, 2));
        // d(sum y^2)/dx via backward equals 2*4*x (each input feeds 4 outputs)
        let grad_out = y.map(|v| 2.0 * v);
        let gx = upsample2x_backward(&grad_out);
        for i in 0..x.data.len() {
            assert!((gx.data[i] - 8.0 * x.data[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_bounds_and_gradient() {
        let x = Tensor::from_vec(1, 1, 1, 3, vec![-50.0, 0.0, 50.0]);
        let y = sigmoid_forward(&x);
        assert!(y.data[0] >= 0.0 && y.data[2] <= 1.0);
        assert!((y.data[1] - 0.5).abs() < 1e-12);
        let ones = Tensor::full_like(&y, 1.0);
        let gx = sigmoid_backward(&y, &ones);
        // derivative at 0 is 0.5 for the rational sigmoid
        assert!((gx.data[1] - 0.5).abs() < 1e-12);
    }
}
