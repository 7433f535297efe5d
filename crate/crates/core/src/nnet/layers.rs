//! Layer definitions with hand-derived forward/backward passes.
//!
//! All convolutions are 3×3, stride 1, zero-padded to "same" size. Max
//! pooling is 2×2 stride 2 with winner-take-all gradient routing (ties to
//! the lowest flat index). Dropout is inverted (train-mode activations are
//! scaled by 1/(1−p) so eval mode needs no rescaling).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Mode, Tensor};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    /// [out_ch][in_ch][3][3], flattened.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (in_ch * 9) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let weights = (0..out_ch * in_ch * 9)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Conv2d {
            in_ch,
            out_ch,
            weights,
            bias: vec![0.0; out_ch],
        }
    }

    #[inline]
    fn w(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((oc * self.in_ch + ic) * 3 + ky) * 3 + kx]
    }

    /// Valid row/column ranges for a kernel tap offset (dy, dx): output
    /// positions whose shifted source lies inside the plane.
    #[inline]
    fn tap_ranges(h: usize, w: usize, dy: i64, dx: i64) -> (usize, usize, usize, usize) {
        let y0 = (-dy).max(0) as usize;
        let y1 = (h as i64 - dy.max(0)) as usize;
        let x0 = (-dx).max(0) as usize;
        let x1 = (w as i64 - dx.max(0)) as usize;
        (y0, y1, x0, x1)
    }

    pub fn forward(&self, input: &Tensor) -> Tensor {
        let (c, h, w) = input.dims3();
        debug_assert_eq!(c, self.in_ch);
        let mut out = Tensor::zeros(vec![self.out_ch, h, w]);
        for oc in 0..self.out_ch {
            let out_plane = &mut out.data[oc * h * w..(oc + 1) * h * w];
            out_plane.fill(self.bias[oc]);
            for ic in 0..self.in_ch {
                let in_plane = &input.data[ic * h * w..(ic + 1) * h * w];
                for ky in 0..3usize {
                    let dy = ky as i64 - 1;
                    for kx in 0..3usize {
                        let dx = kx as i64 - 1;
                        let alpha = self.w(oc, ic, ky, kx);
                        if alpha == 0.0 {
                            continue;
                        }
                        let (y0, y1, x0, x1) = Self::tap_ranges(h, w, dy, dx);
                        for y in y0..y1 {
                            let src_y = (y as i64 + dy) as usize;
                            let src_x0 = (x0 as i64 + dx) as usize;
                            let dst = &mut out_plane[y * w + x0..y * w + x1];
                            let src = &in_plane[src_y * w + src_x0..src_y * w + src_x0 + x1 - x0];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += alpha * s;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) -> Tensor {
        let (_, h, w) = input.dims3();
        let mut grad_in = Tensor::zeros(input.shape.clone());
        for oc in 0..self.out_ch {
            let go_plane = &grad_out.data[oc * h * w..(oc + 1) * h * w];
            grad_b[oc] += go_plane.iter().sum::<f64>();
            for ic in 0..self.in_ch {
                let in_plane = &input.data[ic * h * w..(ic + 1) * h * w];
                let gi_plane = &mut grad_in.data[ic * h * w..(ic + 1) * h * w];
                for ky in 0..3usize {
                    let dy = ky as i64 - 1;
                    for kx in 0..3usize {
                        let dx = kx as i64 - 1;
                        let widx = ((oc * self.in_ch + ic) * 3 + ky) * 3 + kx;
                        let alpha = self.weights[widx];
                        let (y0, y1, x0, x1) = Self::tap_ranges(h, w, dy, dx);
                        let mut wacc = 0.0;
                        for y in y0..y1 {
                            let src_y = (y as i64 + dy) as usize;
                            let src_x0 = (x0 as i64 + dx) as usize;
                            let go = &go_plane[y * w + x0..y * w + x1];
                            let src =
                                &in_plane[src_y * w + src_x0..src_y * w + src_x0 + x1 - x0];
                            let gi =
                                &mut gi_plane[src_y * w + src_x0..src_y * w + src_x0 + x1 - x0];
                            for i in 0..go.len() {
                                wacc += go[i] * src[i];
                                gi[i] += alpha * go[i];
                            }
                        }
                        grad_w[widx] += wacc;
                    }
                }
            }
        }
        grad_in
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// [out_dim][in_dim], flattened.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let weights = (0..out_dim * in_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Dense {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, input: &Tensor) -> Tensor {
        debug_assert_eq!(input.data.len(), self.in_dim);
        let mut out = Tensor::zeros(vec![self.out_dim]);
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (wv, iv) in row.iter().zip(&input.data) {
                acc += wv * iv;
            }
            out.data[o] = acc;
        }
        out
    }

    pub fn backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) -> Tensor {
        let mut grad_in = Tensor::zeros(input.shape.clone());
        for o in 0..self.out_dim {
            let go = grad_out.data[o];
            grad_b[o] += go;
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad_w[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += go * input.data[i];
                grad_in.data[i] += go * row[i];
            }
        }
        grad_in
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv(Conv2d),
    Relu,
    Dropout(f64),
    MaxPool2,
    GlobalAvgPool,
    Dense(Dense),
    Upsample2,
    Sigmoid,
}

/// Per-layer data recorded during a forward pass that backward needs.
#[derive(Clone, Debug)]
pub enum LayerAux {
    None,
    /// Inverted-dropout scale per element (0 or 1/(1−p)).
    DropoutScale(Vec<f64>),
    /// Flat input index of each pooled maximum.
    PoolArgmax(Vec<usize>),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::Dropout(_) => "dropout",
            Layer::MaxPool2 => "maxpool2",
            Layer::GlobalAvgPool => "gap",
            Layer::Dense(_) => "dense",
            Layer::Upsample2 => "upsample2",
            Layer::Sigmoid => "sigmoid",
        }
    }

    pub fn forward(
        &self,
        input: &Tensor,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Tensor, LayerAux) {
        match self {
            Layer::Conv(c) => (c.forward(input), LayerAux::None),
            Layer::Relu => {
                let mut out = input.clone();
                for v in &mut out.data {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                (out, LayerAux::None)
            }
            Layer::Dropout(p) => {
                if mode == Mode::Eval || *p == 0.0 {
                    return (input.clone(), LayerAux::None);
                }
                let rng = rng.expect("train-mode dropout needs an RNG");
                let keep = 1.0 - p;
                let scale: Vec<f64> = (0..input.data.len())
                    .map(|_| {
                        if rng.random_range(0.0..1.0) < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let mut out = input.clone();
                for (v, s) in out.data.iter_mut().zip(&scale) {
                    *v *= s;
                }
                (out, LayerAux::DropoutScale(scale))
            }
            Layer::MaxPool2 => {
                let (c, h, w) = input.dims3();
                debug_assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even dims");
                let oh = h / 2;
                let ow = w / 2;
                let mut out = Tensor::zeros(vec![c, oh, ow]);
                let mut argmax = vec![0usize; c * oh * ow];
                for ch in 0..c {
                    for y in 0..oh {
                        for x in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_idx = 0usize;
                            // Fixed scan order: lowest flat index wins ties.
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let idx = (ch * h + 2 * y + dy) * w + 2 * x + dx;
                                    if input.data[idx] > best {
                                        best = input.data[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                            out.data[(ch * oh + y) * ow + x] = best;
                            argmax[(ch * oh + y) * ow + x] = best_idx;
                        }
                    }
                }
                (out, LayerAux::PoolArgmax(argmax))
            }
            Layer::GlobalAvgPool => {
                let (c, h, w) = input.dims3();
                let inv = 1.0 / (h * w) as f64;
                let mut out = Tensor::zeros(vec![c]);
                for ch in 0..c {
                    out.data[ch] =
                        input.data[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() * inv;
                }
                (out, LayerAux::None)
            }
            Layer::Dense(d) => (d.forward(&input.flattened()), LayerAux::None),
            Layer::Upsample2 => {
                let (c, h, w) = input.dims3();
                let mut out = Tensor::zeros(vec![c, h * 2, w * 2]);
                for ch in 0..c {
                    for y in 0..h * 2 {
                        for x in 0..w * 2 {
                            out.data[(ch * h * 2 + y) * w * 2 + x] =
                                input.data[(ch * h + y / 2) * w + x / 2];
                        }
                    }
                }
                (out, LayerAux::None)
            }
            Layer::Sigmoid => {
                let mut out = input.clone();
                for v in &mut out.data {
                    *v = 1.0 / (1.0 + (-*v).exp());
                }
                (out, LayerAux::None)
            }
        }
    }

    /// Backpropagate `grad_out` through this layer. `input`/`output` are the
    /// traced activations; parameter gradients accumulate into `grads`.
    pub fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        aux: &LayerAux,
        grad_out: &Tensor,
        grads: Option<&mut ParamGrads>,
    ) -> Tensor {
        match self {
            Layer::Conv(c) => {
                let g = grads.expect("conv has parameters");
                c.backward(input, grad_out, &mut g.weights, &mut g.bias)
            }
            Layer::Relu => {
                let mut grad_in = grad_out.clone();
                for (g, &x) in grad_in.data.iter_mut().zip(&input.data) {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                }
                grad_in
            }
            Layer::Dropout(_) => match aux {
                LayerAux::DropoutScale(scale) => {
                    let mut grad_in = grad_out.clone();
                    for (g, s) in grad_in.data.iter_mut().zip(scale) {
                        *g *= s;
                    }
                    grad_in
                }
                _ => grad_out.clone(),
            },
            Layer::MaxPool2 => {
                let argmax = match aux {
                    LayerAux::PoolArgmax(a) => a,
                    _ => unreachable!("maxpool trace missing argmax"),
                };
                let mut grad_in = Tensor::zeros(input.shape.clone());
                for (o, &idx) in argmax.iter().enumerate() {
                    grad_in.data[idx] += grad_out.data[o];
                }
                grad_in
            }
            Layer::GlobalAvgPool => {
                let (c, h, w) = input.dims3();
                let inv = 1.0 / (h * w) as f64;
                let mut grad_in = Tensor::zeros(input.shape.clone());
                for ch in 0..c {
                    let g = grad_out.data[ch] * inv;
                    for v in &mut grad_in.data[ch * h * w..(ch + 1) * h * w] {
                        *v = g;
                    }
                }
                grad_in
            }
            Layer::Dense(d) => {
                let g = grads.expect("dense has parameters");
                let flat = input.flattened();
                let gi = d.backward(&flat, grad_out, &mut g.weights, &mut g.bias);
                Tensor {
                    shape: input.shape.clone(),
                    data: gi.data,
                }
            }
            Layer::Upsample2 => {
                let (c, h, w) = input.dims3();
                let mut grad_in = Tensor::zeros(input.shape.clone());
                for ch in 0..c {
                    for y in 0..h * 2 {
                        for x in 0..w * 2 {
                            grad_in.data[(ch * h + y / 2) * w + x / 2] +=
                                grad_out.data[(ch * h * 2 + y) * w * 2 + x];
                        }
                    }
                }
                grad_in
            }
            Layer::Sigmoid => {
                let mut grad_in = grad_out.clone();
                for (g, &s) in grad_in.data.iter_mut().zip(&output.data) {
                    *g *= s * (1.0 - s);
                }
                grad_in
            }
        }
    }

    /// Parameter arrays (weights, bias) of this layer, if any.
    pub fn params(&self) -> Option<(&Vec<f64>, &Vec<f64>)> {
        match self {
            Layer::Conv(c) => Some((&c.weights, &c.bias)),
            Layer::Dense(d) => Some((&d.weights, &d.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Conv(c) => Some((&mut c.weights, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weights, &mut d.bias)),
            _ => None,
        }
    }
}

/// Gradient buffers for one parameterized layer.
#[derive(Clone, Debug)]
pub struct ParamGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros_like(layer: &Layer) -> Option<ParamGrads> {
        layer.params().map(|(w, b)| ParamGrads {
            weights: vec![0.0; w.len()],
            bias: vec![0.0; b.len()],
        })
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.weights {
            *v *= s;
        }
        for v in &mut self.bias {
            *v *= s;
        }
    }
}
