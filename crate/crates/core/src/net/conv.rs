//! 3x3 zero-padded "same" convolutions with hand-written reverse pass.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Multi-channel real feature map, channel-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::dim(format!(
                "feature map has {} values, expected {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// A 3x3 convolution layer. Weights are `[out][in][ky][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    pub(crate) weight: Vec<f64>,
    pub(crate) bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: vec![0.0; in_channels * out_channels * TAPS],
            bias: vec![0.0; out_channels],
        }
    }

    /// Xavier (Glorot) uniform weights, zero bias.
    pub fn xavier(in_channels: usize, out_channels: usize, rng: &mut SeededRng) -> Self {
        let fan_in = (in_channels * TAPS) as f64;
        let fan_out = (out_channels * TAPS) as f64;
        let bound = (6.0 / (fan_in + fan_out)).sqrt();
        let weight = (0..in_channels * out_channels * TAPS)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        Self {
            in_channels,
            out_channels,
            weight,
            bias: vec![0.0; out_channels],
        }
    }

    pub fn from_parts(
        in_channels: usize,
        out_channels: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if weight.len() != in_channels * out_channels * TAPS || bias.len() != out_channels {
            return Err(Error::dim(format!(
                "conv {in_channels}->{out_channels} needs {} weights and {} biases",
                in_channels * out_channels * TAPS,
                out_channels
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            weight,
            bias,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_channels, self.out_channels)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn kernel(&self, o: usize, i: usize) -> &[f64] {
        let start = (o * self.in_channels + i) * TAPS;
        &self.weight[start..start + TAPS]
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        if input.channels != self.in_channels {
            return Err(Error::dim(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, input.channels
            )));
        }
        let (h, w) = (input.height, input.width);
        let n = h * w;
        let mut out = vec![0.0; self.out_channels * n];
        for (o, plane) in out.chunks_exact_mut(n).enumerate() {
            plane.fill(self.bias[o]);
            for i in 0..self.in_channels {
                let src = input.channel(i);
                let k = self.kernel(o, i);
                for (tap, &kv) in k.iter().enumerate() {
                    if kv == 0.0 {
                        continue;
                    }
                    let (dy, dx) = (tap / KERNEL, tap % KERNEL);
                    shifted_axpy(plane, src, h, w, dy, dx, kv);
                }
            }
        }
        FeatureMap::new(self.out_channels, h, w, out)
    }

    /// Reverse pass. Accumulates weight and bias gradients into `grad` and
    /// returns the gradient w.r.t. `input`.
    pub fn backward(
        &self,
        input: &FeatureMap,
        grad_out: &FeatureMap,
        grad: &mut Conv2d,
    ) -> Result<FeatureMap> {
        if input.channels != self.in_channels || grad_out.channels != self.out_channels {
            return Err(Error::dim("conv backward channel mismatch"));
        }
        let (h, w) = (input.height, input.width);
        let n = h * w;
        let mut grad_in = vec![0.0; self.in_channels * n];
        for o in 0..self.out_channels {
            let go = grad_out.channel(o);
            grad.bias[o] += go.iter().sum::<f64>();
            for i in 0..self.in_channels {
                let src = input.channel(i);
                let base = (o * self.in_channels + i) * TAPS;
                let gin = &mut grad_in[i * n..(i + 1) * n];
                for tap in 0..TAPS {
                    let (dy, dx) = (tap / KERNEL, tap % KERNEL);
                    grad.weight[base + tap] += shifted_dot(go, src, h, w, dy, dx);
                    let kv = self.weight[base + tap];
                    if kv != 0.0 {
                        shifted_axpy_transpose(gin, go, h, w, dy, dx, kv);
                    }
                }
            }
        }
        FeatureMap::new(self.in_channels, h, w, grad_in)
    }
}

/// Output rows/cols `[lo, hi)` for which the tap offset `d - 1` stays inside.
fn valid_range(len: usize, d: usize) -> (usize, usize) {
    let lo = if d == 0 { 1 } else { 0 };
    let hi = if d == 2 { len.saturating_sub(1) } else { len };
    (lo.min(hi), hi)
}

/// `out[y][x] += k * src[y + dy - 1][x + dx - 1]` over valid positions.
fn shifted_axpy(out: &mut [f64], src: &[f64], h: usize, w: usize, dy: usize, dx: usize, k: f64) {
    let (y0, y1) = valid_range(h, dy);
    let (x0, x1) = valid_range(w, dx);
    for y in y0..y1 {
        let sy = y + dy - 1;
        let o = &mut out[y * w + x0..y * w + x1];
        let s = &src[sy * w + x0 + dx - 1..sy * w + x1 + dx - 1];
        for (a, b) in o.iter_mut().zip(s) {
            *a += k * b;
        }
    }
}

/// Transpose of [`shifted_axpy`]: `gin[y + dy - 1][x + dx - 1] += k * go[y][x]`.
fn shifted_axpy_transpose(
    gin: &mut [f64],
    go: &[f64],
    h: usize,
    w: usize,
    dy: usize,
    dx: usize,
    k: f64,
) {
    let (y0, y1) = valid_range(h, dy);
    let (x0, x1) = valid_range(w, dx);
    for y in y0..y1 {
        let sy = y + dy - 1;
        let g = &go[y * w + x0..y * w + x1];
        let t = &mut gin[sy * w + x0 + dx - 1..sy * w + x1 + dx - 1];
        for (a, b) in t.iter_mut().zip(g) {
            *a += k * b;
        }
    }
}

/// `sum_{y,x} go[y][x] * src[y + dy - 1][x + dx - 1]`.
fn shifted_dot(go: &[f64], src: &[f64], h: usize, w: usize, dy: usize, dx: usize) -> f64 {
    let (y0, y1) = valid_range(h, dy);
    let (x0, x1) = valid_range(w, dx);
    let mut acc = 0.0;
    for y in y0..y1 {
        let sy = y + dy - 1;
        let g = &go[y * w + x0..y * w + x1];
        let s = &src[sy * w + x0 + dx - 1..sy * w + x1 + dx - 1];
        acc += g.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
    }
    acc
}
