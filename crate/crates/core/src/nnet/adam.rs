//! Textbook Adam.

use super::layers::ParamGrads;
use super::Network;

/// Adam state over a network's parameter arrays, in network order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<ParamGrads>,
    v: Vec<ParamGrads>,
}

impl Adam {
    pub fn new(net: &Network, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<ParamGrads> = net
            .layers
            .iter()
            .filter_map(ParamGrads::zeros_like)
            .collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update: m = β₁m + (1−β₁)g; v = β₂v + (1−β₂)g²;
    /// θ −= lr · m̂ / (√v̂ + ε) with bias-corrected m̂, v̂.
    pub fn step(&mut self, net: &mut Network, grads: &[Option<ParamGrads>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut slot = 0usize;
        for (layer, grad) in net.layers.iter_mut().zip(grads) {
            let Some((w, b)) = layer.params_mut() else {
                continue;
            };
            let g = grad.as_ref().expect("gradient for parameterized layer");
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            update_array(
                w, &g.weights, &mut m.weights, &mut v.weights, self.lr, self.beta1, self.beta2,
                self.eps, bc1, bc2,
            );
            update_array(
                b, &g.bias, &mut m.bias, &mut v.bias, self.lr, self.beta1, self.beta2, self.eps,
                bc1, bc2,
            );
            slot += 1;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_array(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{Dense, Layer};
    use crate::rng::rng_for;

    #[test]
    fn adam_matches_straight_line_reference_bit_for_bit() {
        // 5-parameter problem: one dense layer 4→1 (4 weights + 1 bias),
        // arbitrary gradient sequence, compared against an independent
        // straight-line recursion.
        let mut rng = rng_for(31, "adam-ref", 0);
        let dense = Dense::new(4, 1, &mut rng);
        let mut net = Network {
            layers: vec![Layer::Dense(dense)],
        };
        let mut reference: Vec<f64> = net.param_vector();
        let (lr, b1, b2, eps) = (1e-3, 0.93, 0.999, 1e-8);
        let mut adam = Adam::new(&net, lr, b1, b2);
        let mut m = vec![0.0; 5];
        let mut v = vec![0.0; 5];
        use rand::Rng;
        for t in 1..=50u64 {
            let g: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let grads = vec![Some(ParamGrads {
                weights: g[..4].to_vec(),
                bias: g[4..].to_vec(),
            })];
            adam.step(&mut net, &grads);
            // Straight-line textbook recursion.
            for i in 0..5 {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / (1.0 - b1.powi(t as i32));
                let v_hat = v[i] / (1.0 - b2.powi(t as i32));
                reference[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            let got = net.param_vector();
            for i in 0..5 {
                assert_eq!(got[i].to_bits(), reference[i].to_bits(), "param {i} step {t}");
            }
        }
    }
}
