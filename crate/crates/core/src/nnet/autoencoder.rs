//! Saliency-map autoencoder: dense encoder 1024→256→128→64→32 and the
//! mirrored decoder, trained with mean squared error. The 32-dim latent is
//! the deep saliency feature vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::ParamGrads;
use super::{Adam, Dense, Layer, Mode, Network, Tensor};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::rng_for;

pub const AE_INPUT_SIDE: usize = 32;
pub const LATENT_DIM: usize = 32;

const WIDTHS: [usize; 3] = [256, 128, 64];

#[derive(Clone, Debug)]
pub struct Autoencoder {
    pub net: Network,
    /// Number of layers forming the encoder; `activations[encoder_layers]`
    /// is the latent vector.
    pub encoder_layers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeTrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        AeTrainConfig {
            learning_rate: 1e-3,
            beta1: 0.93,
            beta2: 0.999,
            epochs: 60,
            minibatch: 16,
            seed: 0,
        }
    }
}

impl Autoencoder {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng_for(seed, "ae-init", 0);
        let input = AE_INPUT_SIDE * AE_INPUT_SIDE;
        let mut layers = Vec::new();
        let mut prev = input;
        for &wd in &WIDTHS {
            layers.push(Layer::Dense(Dense::new(prev, wd, &mut rng)));
            layers.push(Layer::Relu);
            prev = wd;
        }
        layers.push(Layer::Dense(Dense::new(prev, LATENT_DIM, &mut rng)));
        let encoder_layers = layers.len();
        prev = LATENT_DIM;
        for &wd in WIDTHS.iter().rev() {
            layers.push(Layer::Dense(Dense::new(prev, wd, &mut rng)));
            layers.push(Layer::Relu);
            prev = wd;
        }
        layers.push(Layer::Dense(Dense::new(prev, input, &mut rng)));
        Autoencoder {
            net: Network { layers },
            encoder_layers,
        }
    }

    /// Deterministic 32-dim latent of a prepared input.
    pub fn encode_input(&self, input: &Tensor) -> Vec<f64> {
        let mut x = input.clone();
        for layer in &self.net.layers[..self.encoder_layers] {
            let (out, _) = layer.forward(&x, Mode::Eval, None);
            x = out;
        }
        debug_assert_eq!(x.data.len(), LATENT_DIM);
        x.data
    }

    /// Deterministic 32-dim latent of a saliency map.
    pub fn encode(&self, map: &Grid) -> Vec<f64> {
        self.encode_input(&map_to_ae_input(map))
    }

    pub fn reconstruction_mse(&self, inputs: &[Tensor]) -> f64 {
        let mut total = 0.0;
        for t in inputs {
            let trace = self.net.forward(t, Mode::Eval, None);
            let out = trace.output();
            let mse: f64 = out
                .data
                .iter()
                .zip(&t.data)
                .map(|(o, x)| (o - x) * (o - x))
                .sum::<f64>()
                / t.data.len() as f64;
            total += mse;
        }
        total / inputs.len() as f64
    }
}

/// Min-max normalize a saliency map and resample it to the 32×32
/// autoencoder input (flattened). A constant map becomes all zeros.
pub fn map_to_ae_input(map: &Grid) -> Tensor {
    let min = map.min();
    let max = map.max();
    let mut g = map.clone();
    if max > min {
        let inv = 1.0 / (max - min);
        for v in g.values_mut() {
            *v = (*v - min) * inv;
        }
    } else {
        for v in g.values_mut() {
            *v = 0.0;
        }
    }
    let resized = g.resample(AE_INPUT_SIDE, AE_INPUT_SIDE);
    Tensor {
        shape: vec![AE_INPUT_SIDE * AE_INPUT_SIDE],
        data: resized.values().to_vec(),
    }
}

/// Train the autoencoder to reconstruct the given maps. Requires at least
/// as many maps as the latent width. Returns the model and per-epoch MSE
/// (entry 0 is the pre-training MSE).
pub fn train_autoencoder(maps: &[Grid], cfg: &AeTrainConfig) -> Result<(Autoencoder, Vec<f64>)> {
    if maps.len() < LATENT_DIM {
        return Err(Error::invalid(
            "maps",
            format!("need at least {LATENT_DIM} maps, got {}", maps.len()),
        ));
    }
    let inputs: Vec<Tensor> = maps.iter().map(map_to_ae_input).collect();
    let mut ae = Autoencoder::new(cfg.seed);
    let mut adam = Adam::new(&ae.net, cfg.learning_rate, cfg.beta1, cfg.beta2);
    let mut rng = rng_for(cfg.seed, "ae-train", 0);
    let mut history = vec![ae.reconstruction_mse(&inputs)];
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let n_dim = (AE_INPUT_SIDE * AE_INPUT_SIDE) as f64;
    for epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.minibatch.max(1)) {
            let mut acc: Vec<Option<ParamGrads>> =
                ae.net.layers.iter().map(ParamGrads::zeros_like).collect();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let x = &inputs[idx];
                let trace = ae.net.forward(x, Mode::Train, Some(&mut rng));
                let out = trace.output();
                let mut grad = Tensor::zeros(out.shape.clone());
                let mut loss = 0.0;
                for i in 0..out.data.len() {
                    let d = out.data[i] - x.data[i];
                    loss += d * d;
                    grad.data[i] = 2.0 * d / n_dim;
                }
                batch_loss += loss / n_dim;
                let back = ae.net.backward(&trace, grad);
                for (a, g) in acc.iter_mut().zip(&back.param_grads) {
                    if let (Some(a), Some(g)) = (a.as_mut(), g.as_ref()) {
                        a.add_assign(g);
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for a in acc.iter_mut().flatten() {
                a.scale(inv);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    norms: ae.net.layer_norms(),
                });
            }
            adam.step(&mut ae.net, &acc);
            epoch_loss += batch_loss;
        }
        history.push(epoch_loss / (inputs.len() as f64 / cfg.minibatch.max(1) as f64).ceil());
    }
    Ok((ae, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_map(seed: u64) -> Grid {
        let mut rng = rng_for(seed, "ae-map", 0);
        let data = (0..AE_INPUT_SIDE * AE_INPUT_SIDE)
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        Grid::from_vec(AE_INPUT_SIDE, AE_INPUT_SIDE, data).unwrap()
    }

    #[test]
    fn architecture_widths() {
        let ae = Autoencoder::new(1);
        let dims: Vec<(usize, usize)> = ae
            .net
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::Dense(d) => Some((d.in_dim, d.out_dim)),
                _ => None,
            })
            .collect();
        assert_eq!(
            dims,
            vec![
                (1024, 256),
                (256, 128),
                (128, 64),
                (64, 32),
                (32, 64),
                (64, 128),
                (128, 256),
                (256, 1024)
            ]
        );
    }

    #[test]
    fn encode_is_deterministic_32_dim() {
        let ae = Autoencoder::new(2);
        let m = random_map(5);
        let a = ae.encode(&m);
        let b = ae.encode(&m);
        assert_eq!(a.len(), 32);
        assert_eq!(a, b);
        let identical_copy = m.clone();
        assert_eq!(ae.encode(&identical_copy), a);
    }

    #[test]
    fn too_few_maps_errors() {
        let maps: Vec<Grid> = (0..31).map(random_map).collect();
        assert!(train_autoencoder(&maps, &AeTrainConfig::default()).is_err());
    }

    #[test]
    fn memorizes_identical_maps() {
        let maps: Vec<Grid> = (0..32).map(|_| random_map(9)).collect();
        let cfg = AeTrainConfig {
            epochs: 200,
            learning_rate: 2e-3,
            seed: 3,
            ..AeTrainConfig::default()
        };
        let (ae, history) = train_autoencoder(&maps, &cfg).unwrap();
        let inputs: Vec<Tensor> = maps.iter().map(map_to_ae_input).collect();
        let mse = ae.reconstruction_mse(&inputs);
        assert!(mse < 1e-3, "mse = {mse}");
        assert!(history.last().unwrap() < &history[0]);
    }

    #[test]
    fn training_reduces_mse_on_random_maps() {
        let maps: Vec<Grid> = (0..40).map(random_map).collect();
        let cfg = AeTrainConfig {
            epochs: 10,
            seed: 4,
            ..AeTrainConfig::default()
        };
        let (ae, history) = train_autoencoder(&maps, &cfg).unwrap();
        let inputs: Vec<Tensor> = maps.iter().map(map_to_ae_input).collect();
        assert!(ae.reconstruction_mse(&inputs) < history[0]);
    }

    #[test]
    fn resampling_handles_other_map_sizes() {
        let mut rng = rng_for(8, "sz", 0);
        for side in [16usize, 48, 64] {
            let data: Vec<f64> = (0..side * side).map(|_| rng.random_range(0.0..1.0)).collect();
            let g = Grid::from_vec(side, side, data).unwrap();
            let t = map_to_ae_input(&g);
            assert_eq!(t.data.len(), 1024);
            assert!(t.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
