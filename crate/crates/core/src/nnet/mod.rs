//! Minimal differentiable-network kernel: dense and conv layers, ReLU,
//! dropout, pooling, Adam, binary cross-entropy with a heteroscedastic
//! variance head, MC-dropout sampling, and the saliency-map autoencoder.

mod adam;
mod autoencoder;
mod checkpoint;
mod layers;
mod train;

pub use adam::Adam;
pub use autoencoder::{
    map_to_ae_input, train_autoencoder, AeTrainConfig, Autoencoder, AE_INPUT_SIDE, LATENT_DIM,
};
pub use checkpoint::{load_classifier, save_classifier};
pub use layers::{Conv2d, Dense, Layer, LayerAux, ParamGrads};
pub use train::{
    augment_affine, bce_with_logits, train_classifier, EpochLoss, TrainConfig, TrainSample,
};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::{hash_f64_slice, rng_for};

/// Dense n-dimensional value buffer, row-major. Conv stacks use [C,H,W];
/// dense vectors use [N].
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_grid(grid: &Grid) -> Self {
        Tensor {
            shape: vec![1, grid.h(), grid.w()],
            data: grid.values().to_vec(),
        }
    }

    pub fn dims3(&self) -> (usize, usize, usize) {
        match self.shape.as_slice() {
            [c, h, w] => (*c, *h, *w),
            other => panic!("expected 3-d tensor, got {other:?}"),
        }
    }

    pub fn flattened(&self) -> Tensor {
        Tensor {
            shape: vec![self.data.len()],
            data: self.data.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train,
}

/// An ordered stack of layers.
#[derive(Clone, Debug)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Activations and per-layer auxiliaries recorded during a forward pass.
/// `activations[0]` is the input; `activations[i+1]` is layer i's output.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub activations: Vec<Tensor>,
    pub aux: Vec<LayerAux>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().unwrap()
    }
}

/// Result of a backward pass: per-layer parameter gradients (None for
/// parameterless layers) and the gradient at every traced activation.
#[derive(Clone, Debug)]
pub struct BackwardResult {
    pub param_grads: Vec<Option<ParamGrads>>,
    pub activation_grads: Vec<Tensor>,
}

impl Network {
    pub fn forward(
        &self,
        input: &Tensor,
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> ForwardTrace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        activations.push(input.clone());
        for layer in &self.layers {
            let (out, a) = layer.forward(activations.last().unwrap(), mode, rng.as_deref_mut());
            activations.push(out);
            aux.push(a);
        }
        ForwardTrace { activations, aux }
    }

    /// Backpropagate from the network output.
    pub fn backward(&self, trace: &ForwardTrace, grad_out: Tensor) -> BackwardResult {
        self.backward_from(trace, self.layers.len(), grad_out)
    }

    /// Backpropagate starting at `activations[start]` (gradients above the
    /// start point are zero).
    pub fn backward_from(
        &self,
        trace: &ForwardTrace,
        start: usize,
        grad_at_start: Tensor,
    ) -> BackwardResult {
        let mut param_grads: Vec<Option<ParamGrads>> = self
            .layers
            .iter()
            .map(layers::ParamGrads::zeros_like)
            .collect();
        let mut activation_grads: Vec<Tensor> = trace
            .activations
            .iter()
            .map(|a| Tensor::zeros(a.shape.clone()))
            .collect();
        activation_grads[start] = grad_at_start;
        for i in (0..start).rev() {
            let grad_out = activation_grads[i + 1].clone();
            let grad_in = self.layers[i].backward(
                &trace.activations[i],
                &trace.activations[i + 1],
                &trace.aux[i],
                &grad_out,
                param_grads[i].as_mut(),
            );
            activation_grads[i] = grad_in;
        }
        BackwardResult {
            param_grads,
            activation_grads,
        }
    }

    /// Flat parameter vector (network order, weights then bias per layer).
    pub fn param_vector(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for layer in &self.layers {
            if let Some((w, b)) = layer.params() {
                v.extend_from_slice(w);
                v.extend_from_slice(b);
            }
        }
        v
    }

    /// Per-layer L2 weight norms (for divergence diagnostics).
    pub fn layer_norms(&self) -> Vec<f64> {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .map(|(w, b)| {
                (w.iter().map(|x| x * x).sum::<f64>() + b.iter().map(|x| x * x).sum::<f64>())
                    .sqrt()
            })
            .collect()
    }

    pub fn content_hash(&self) -> u64 {
        hash_f64_slice(0x6e65_7477_6f72_6b00, &self.param_vector())
    }
}

/// The tiny two-conv binary classifier with a heteroscedastic variance head.
///
/// Layers: conv(1→8)+ReLU+dropout+maxpool, conv(8→16)+ReLU+dropout,
/// global-average-pool, dense(16→2). Output 0 is the class-1 logit, output 1
/// the predicted log-variance.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub net: Network,
    pub input_size: usize,
    pub dropout_p: f64,
    pub variance_head: bool,
    pub init_seed: u64,
}

impl Classifier {
    pub fn new(input_size: usize, dropout_p: f64, variance_head: bool, seed: u64) -> Self {
        let mut rng = rng_for(seed, "classifier-init", 0);
        let layers = vec![
            Layer::Conv(Conv2d::new(1, 8, &mut rng)),
            Layer::Relu,
            Layer::Dropout(dropout_p),
            Layer::MaxPool2,
            Layer::Conv(Conv2d::new(8, 16, &mut rng)),
            Layer::Relu,
            Layer::Dropout(dropout_p),
            Layer::GlobalAvgPool,
            Layer::Dense(Dense::new(16, 2, &mut rng)),
        ];
        Classifier {
            net: Network { layers },
            input_size,
            dropout_p,
            variance_head,
            init_seed: seed,
        }
    }

    fn check_input(&self, image: &Grid) -> Result<()> {
        if image.h() != self.input_size || image.w() != self.input_size {
            return Err(Error::ShapeMismatch {
                expected: format!("{0}x{0} image", self.input_size),
                got: format!("{}x{}", image.h(), image.w()),
            });
        }
        Ok(())
    }

    /// Deterministic eval-mode forward trace.
    pub fn forward_eval(&self, image: &Grid) -> Result<ForwardTrace> {
        self.check_input(image)?;
        Ok(self.net.forward(&Tensor::from_grid(image), Mode::Eval, None))
    }

    /// (probability of class 1, predicted variance). Eval-mode deterministic.
    /// With the variance head disabled the predicted variance is 0.
    pub fn predict(&self, image: &Grid) -> Result<(f64, f64)> {
        let trace = self.forward_eval(image)?;
        let out = trace.output();
        let p = sigmoid(out.data[0]);
        let sigma2 = if self.variance_head {
            out.data[1].exp()
        } else {
            0.0
        };
        Ok((p, sigma2))
    }

    /// Predicted class under the 0.5 threshold.
    pub fn predicted_class(&self, image: &Grid) -> Result<u8> {
        Ok(if self.predict(image)?.0 >= 0.5 { 1 } else { 0 })
    }

    /// T stochastic forward passes with independent dropout masks, in order.
    pub fn mc_dropout_samples(
        &self,
        image: &Grid,
        t: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<(f64, f64)>> {
        self.check_input(image)?;
        let input = Tensor::from_grid(image);
        let mut out = Vec::with_capacity(t);
        for _ in 0..t {
            let trace = self.net.forward(&input, Mode::Train, Some(rng));
            let o = trace.output();
            let y = sigmoid(o.data[0]);
            let sigma2 = if self.variance_head { o.data[1].exp() } else { 0.0 };
            out.push((y, sigma2));
        }
        Ok(out)
    }

    pub fn params_hash(&self) -> u64 {
        self.net.content_hash()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// AUC of a classifier on a labeled evaluation set.
pub fn classifier_auc(model: &Classifier, items: &[(Grid, u8)]) -> Result<f64> {
    let mut scores = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    for (g, y) in items {
        scores.push(model.predict(g)?.0);
        labels.push(*y);
    }
    crate::metrics::roc_auc(&scores, &labels)
}
