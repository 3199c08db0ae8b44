//! Dense and 3×3 convolution layers with hand-written backward passes.
//!
//! Activations are planar (channel, row, column) `f64` buffers.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Weight and bias buffers for one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &LayerParams) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

pub fn he_normal<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, len: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..len).map(|_| normal.sample(rng)).collect()
}

pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize, len: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.random_range(-limit..limit)).collect()
}

/// Fully connected layer, weight stored `[out][in]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn forward(&self, p: &LayerParams, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        (0..self.outputs)
            .map(|o| {
                let row = &p.weight[o * self.inputs..(o + 1) * self.inputs];
                p.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients into `g` and returns the input gradient
    /// when `want_input` is set.
    pub fn backward(&self, p: &LayerParams, x: &[f64], gout: &[f64], g: &mut LayerParams, want_input: bool) -> Option<Vec<f64>> {
        let mut gx = want_input.then(|| vec![0.0; self.inputs]);
        for (o, &go) in gout.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            g.bias[o] += go;
            let base = o * self.inputs;
            let grow = &mut g.weight[base..base + self.inputs];
            for (gw, v) in grow.iter_mut().zip(x) {
                *gw += go * v;
            }
            if let Some(gx) = gx.as_mut() {
                for (gi, w) in gx.iter_mut().zip(&p.weight[base..base + self.inputs]) {
                    *gi += go * w;
                }
            }
        }
        gx
    }
}

/// 3×3 convolution with zero padding 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv3x3 {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl Conv3x3 {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * 9
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    /// Output columns `ox` with `ox*stride + k - 1` inside `[0, len)`.
    #[inline]
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let start = usize::from(k == 0);
        let end = if len >= k { ((len - k) / self.stride + 1).min(out_len) } else { 0 };
        (start, end.max(start))
    }

    pub fn forward(&self, p: &LayerParams, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (ho, wo) = self.output_size(h, w);
        let s = self.stride;
        let mut out = vec![0.0; self.out_channels * ho * wo];
        for o in 0..self.out_channels {
            let plane = &mut out[o * ho * wo..(o + 1) * ho * wo];
            plane.fill(p.bias[o]);
            for i in 0..self.in_channels {
                let xin = &x[i * h * w..(i + 1) * h * w];
                for ky in 0..3 {
                    let (oy0, oy1) = self.valid_range(ky, h, ho);
                    for kx in 0..3 {
                        let wv = p.weight[((o * self.in_channels + i) * 3 + ky) * 3 + kx];
                        let (ox0, ox1) = self.valid_range(kx, w, wo);
                        for oy in oy0..oy1 {
                            let row = &xin[(oy * s + ky - 1) * w..];
                            let orow = &mut plane[oy * wo..(oy + 1) * wo];
                            for ox in ox0..ox1 {
                                orow[ox] += wv * row[ox * s + kx - 1];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        p: &LayerParams,
        x: &[f64],
        h: usize,
        w: usize,
        gout: &[f64],
        g: &mut LayerParams,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let (ho, wo) = self.output_size(h, w);
        let s = self.stride;
        let mut gx = want_input.then(|| vec![0.0; self.in_channels * h * w]);
        for o in 0..self.out_channels {
            let gplane = &gout[o * ho * wo..(o + 1) * ho * wo];
            g.bias[o] += gplane.iter().sum::<f64>();
            for i in 0..self.in_channels {
                let xin = &x[i * h * w..(i + 1) * h * w];
                for ky in 0..3 {
                    let (oy0, oy1) = self.valid_range(ky, h, ho);
                    for kx in 0..3 {
                        let widx = ((o * self.in_channels + i) * 3 + ky) * 3 + kx;
                        let wv = p.weight[widx];
                        let (ox0, ox1) = self.valid_range(kx, w, wo);
                        let mut acc = 0.0;
                        for oy in oy0..oy1 {
                            let iy = oy * s + ky - 1;
                            let row = &xin[iy * w..];
                            let grow = &gplane[oy * wo..(oy + 1) * wo];
                            for ox in ox0..ox1 {
                                acc += grow[ox] * row[ox * s + kx - 1];
                            }
                            if let Some(gx) = gx.as_mut() {
                                let gxrow = &mut gx[i * h * w + iy * w..];
                                for ox in ox0..ox1 {
                                    gxrow[ox * s + kx - 1] += wv * grow[ox];
                                }
                            }
                        }
                        g.weight[widx] += acc;
                    }
                }
            }
        }
        gx
    }
}

pub fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries whose activation was clamped by ReLU.
pub fn relu_backward(activation: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 average pooling, stride 2; a trailing odd row/column is dropped.
pub fn avg_pool2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        let src = &x[ch * h * w..];
        for oy in 0..ho {
            for ox in 0..wo {
                let (y, x0) = (2 * oy, 2 * ox);
                out[(ch * ho + oy) * wo + ox] =
                    0.25 * (src[y * w + x0] + src[y * w + x0 + 1] + src[(y + 1) * w + x0] + src[(y + 1) * w + x0 + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(gout: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = 0.25 * gout[(ch * ho + oy) * wo + ox];
                let base = ch * h * w;
                let (y, x0) = (2 * oy, 2 * ox);
                gx[base + y * w + x0] += g;
                gx[base + y * w + x0 + 1] += g;
                gx[base + (y + 1) * w + x0] += g;
                gx[base + (y + 1) * w + x0 + 1] += g;
            }
        }
    }
    gx
}

pub fn global_avg_pool(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let n = (h * w) as f64;
    (0..c).map(|ch| x[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    /// Direct definition of the padded convolution, used as a reference.
    fn conv_reference(conv: &Conv3x3, p: &LayerParams, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (ho, wo) = conv.output_size(h, w);
        let mut out = vec![0.0; conv.out_channels * ho * wo];
        for o in 0..conv.out_channels {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = p.bias[o];
                    for i in 0..conv.in_channels {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * conv.stride + ky) as isize - 1;
                                let ix = (ox * conv.stride + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += p.weight[((o * conv.in_channels + i) * 3 + ky) * 3 + kx]
                                    * x[(i * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    fn random(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn conv_matches_reference() {
        for (stride, h, w) in [(1, 5, 7), (2, 9, 6), (2, 8, 8), (3, 7, 10)] {
            let conv = Conv3x3 { in_channels: 2, out_channels: 3, stride };
            let p = LayerParams { weight: random(conv.weight_len(), 1), bias: random(3, 2) };
            let x = random(2 * h * w, 3);
            let got = conv.forward(&p, &x, h, w);
            let want = conv_reference(&conv, &p, &x, h, w);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let (h, w) = (6, 5);
        let conv = Conv3x3 { in_channels: 2, out_channels: 2, stride: 2 };
        let p = LayerParams { weight: random(conv.weight_len(), 4), bias: random(2, 5) };
        let x = random(2 * h * w, 6);
        let (ho, wo) = conv.output_size(h, w);
        let r = random(2 * ho * wo, 7);
        // objective: sum(r * conv(x))
        let objective = |p: &LayerParams, x: &[f64]| -> f64 {
            conv.forward(p, x, h, w).iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let mut g = p.zeros_like();
        let gx = conv.backward(&p, &x, h, w, &r, &mut g, true).unwrap();
        let eps = 1e-6;
        for i in 0..p.weight.len() {
            let mut plus = p.clone();
            plus.weight[i] += eps;
            let mut minus = p.clone();
            minus.weight[i] -= eps;
            let fd = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * eps);
            assert!((fd - g.weight[i]).abs() < 1e-7, "w{i}: {fd} vs {}", g.weight[i]);
        }
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus[i] += eps;
            let mut minus = x.clone();
            minus[i] -= eps;
            let fd = (objective(&p, &plus) - objective(&p, &minus)) / (2.0 * eps);
            assert!((fd - gx[i]).abs() < 1e-7, "x{i}");
        }
        let bias_fd: f64 = r[..ho * wo].iter().sum();
        assert!((g.bias[0] - bias_fd).abs() < 1e-12);
    }

    #[test]
    fn dense_backward() {
        let d = Dense { inputs: 3, outputs: 2 };
        let p = LayerParams { weight: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], bias: vec![0.5, -0.5] };
        let x = [1.0, 0.0, -1.0];
        assert_eq!(d.forward(&p, &x), vec![-1.5, -2.5]);
        let mut g = p.zeros_like();
        let gx = d.backward(&p, &x, &[1.0, 2.0], &mut g, true).unwrap();
        assert_eq!(g.weight, vec![1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
        assert_eq!(g.bias, vec![1.0, 2.0]);
        assert_eq!(gx, vec![9.0, 12.0, 15.0]);
    }

    #[test]
    fn pooling_shapes_and_adjoint() {
        let (c, h, w) = (2, 5, 4);
        let x = random(c * h * w, 8);
        let y = avg_pool2(&x, c, h, w);
        assert_eq!(y.len(), c * 2 * 2);
        let r = random(y.len(), 9);
        let gx = avg_pool2_backward(&r, c, h, w);
        // <pool(x), r> == <x, pool^T(r)>
        let lhs: f64 = y.iter().zip(&r).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        assert_eq!(global_avg_pool(&[1.0, 3.0, 2.0, 2.0], 1, 2, 2), vec![2.0]);
    }
}
