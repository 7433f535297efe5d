//! Interpretability saliency maps from a trained classifier.
//!
//! Three methods: z⁺-rule layer-wise relevance propagation (the Deep-Taylor
//! construction for ReLU networks in the positive-input regime), Grad-CAM on
//! the last conv feature map, and gradient×input.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nnet::{Classifier, ForwardTrace, Layer, LayerAux, Network, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyMethod {
    DeepTaylor,
    GradCam,
    GradInput,
}

impl std::fmt::Display for SaliencyMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SaliencyMethod::DeepTaylor => "deep_taylor",
            SaliencyMethod::GradCam => "grad_cam",
            SaliencyMethod::GradInput => "grad_input",
        };
        write!(f, "{s}")
    }
}

/// Non-negative per-pixel relevance tied to (image, model, method).
#[derive(Clone, Debug)]
pub struct SaliencyMap {
    pub values: Grid,
    pub method: SaliencyMethod,
    pub source_image_id: String,
    pub model_hash: u64,
    pub target_class: u8,
    /// Set when the target score was non-positive and the z⁺ direction is
    /// undefined (map is all zeros).
    pub zero_warning: bool,
}

/// Target score for a single-logit binary classifier: the class-1 logit, or
/// its negation for class 0.
fn target_sign(target_class: u8) -> f64 {
    if target_class == 1 {
        1.0
    } else {
        -1.0
    }
}

/// z⁺ relevance propagation through a network ending in a dense layer whose
/// output 0 is the class-1 logit. Returns the relevance at every traced
/// activation (index-aligned with `trace.activations`) and the zero-warning
/// flag. Relevance sums are conserved layer to layer (bias-free exactly;
/// biases receive no relevance).
pub fn lrp_zplus_layers(
    net: &Network,
    trace: &ForwardTrace,
    target_class: u8,
) -> Result<(Vec<Tensor>, bool)> {
    const TINY: f64 = 1e-12;
    let n_layers = net.layers.len();
    let last_dense = match net.layers.last() {
        Some(Layer::Dense(d)) => d,
        _ => {
            return Err(Error::Unsupported(
                "relevance propagation expects a final dense layer".into(),
            ))
        }
    };
    let sign = target_sign(target_class);
    let score = sign * trace.output().data[0];
    let mut relevances: Vec<Tensor> = trace
        .activations
        .iter()
        .map(|a| Tensor::zeros(a.shape.clone()))
        .collect();
    if score <= 0.0 {
        return Ok((relevances, true));
    }
    // Initial relevance: the target pre-activation score at the output.
    relevances[n_layers].data[0] = score;

    // Final dense layer: only output 0 carries relevance; effective weights
    // are ±row 0 depending on the queried class.
    {
        let input = &trace.activations[n_layers - 1];
        let flat = input.flattened();
        let row = &last_dense.weights[0..last_dense.in_dim];
        let mut z = 0.0;
        let mut contrib = vec![0.0; last_dense.in_dim];
        for i in 0..last_dense.in_dim {
            let wp = (sign * row[i]).max(0.0);
            contrib[i] = wp * flat.data[i];
            z += contrib[i];
        }
        let rel = &mut relevances[n_layers - 1];
        if z > TINY {
            let f = score / z;
            for i in 0..last_dense.in_dim {
                rel.data[i] = contrib[i] * f;
            }
        }
    }

    // Remaining layers, top down.
    for li in (0..n_layers - 1).rev() {
        let input = &trace.activations[li];
        let r_out = relevances[li + 1].clone();
        let r_in = match &net.layers[li] {
            Layer::Relu | Layer::Dropout(_) => r_out,
            Layer::MaxPool2 => {
                let argmax = match &trace.aux[li] {
                    LayerAux::PoolArgmax(a) => a,
                    _ => unreachable!("maxpool trace missing argmax"),
                };
                let mut r = Tensor::zeros(input.shape.clone());
                for (o, &idx) in argmax.iter().enumerate() {
                    r.data[idx] += r_out.data[o];
                }
                r
            }
            Layer::GlobalAvgPool => {
                let (c, h, w) = input.dims3();
                let mut r = Tensor::zeros(input.shape.clone());
                for ch in 0..c {
                    let plane = &input.data[ch * h * w..(ch + 1) * h * w];
                    let z: f64 = plane.iter().sum();
                    if z > TINY {
                        let f = r_out.data[ch] / z;
                        for (rv, &x) in
                            r.data[ch * h * w..(ch + 1) * h * w].iter_mut().zip(plane)
                        {
                            *rv = x * f;
                        }
                    }
                }
                r
            }
            Layer::Dense(d) => {
                let flat = input.flattened();
                let mut r = Tensor::zeros(input.shape.clone());
                for o in 0..d.out_dim {
                    let ro = r_out.data[o];
                    if ro == 0.0 {
                        continue;
                    }
                    let row = &d.weights[o * d.in_dim..(o + 1) * d.in_dim];
                    let mut z = 0.0;
                    for i in 0..d.in_dim {
                        z += row[i].max(0.0) * flat.data[i];
                    }
                    if z > TINY {
                        let f = ro / z;
                        for i in 0..d.in_dim {
                            r.data[i] += row[i].max(0.0) * flat.data[i] * f;
                        }
                    }
                }
                r
            }
            Layer::Conv(conv) => {
                let (_, h, w) = input.dims3();
                let mut r = Tensor::zeros(input.shape.clone());
                for oc in 0..conv.out_ch {
                    for y in 0..h {
                        for x in 0..w {
                            let ro = r_out.data[(oc * h + y) * w + x];
                            if ro == 0.0 {
                                continue;
                            }
                            let mut z = 0.0;
                            for ic in 0..conv.in_ch {
                                for ky in 0..3usize {
                                    let yy = y as i64 + ky as i64 - 1;
                                    if yy < 0 || yy >= h as i64 {
                                        continue;
                                    }
                                    for kx in 0..3usize {
                                        let xx = x as i64 + kx as i64 - 1;
                                        if xx < 0 || xx >= w as i64 {
                                            continue;
                                        }
                                        let wp = conv.weights
                                            [((oc * conv.in_ch + ic) * 3 + ky) * 3 + kx]
                                            .max(0.0);
                                        z += wp
                                            * input.data
                                                [(ic * h + yy as usize) * w + xx as usize];
                                    }
                                }
                            }
                            if z <= TINY {
                                continue;
                            }
                            let f = ro / z;
                            for ic in 0..conv.in_ch {
                                for ky in 0..3usize {
                                    let yy = y as i64 + ky as i64 - 1;
                                    if yy < 0 || yy >= h as i64 {
                                        continue;
                                    }
                                    for kx in 0..3usize {
                                        let xx = x as i64 + kx as i64 - 1;
                                        if xx < 0 || xx >= w as i64 {
                                            continue;
                                        }
                                        let wp = conv.weights
                                            [((oc * conv.in_ch + ic) * 3 + ky) * 3 + kx]
                                            .max(0.0);
                                        let iidx = (ic * h + yy as usize) * w + xx as usize;
                                        r.data[iidx] += wp * input.data[iidx] * f;
                                    }
                                }
                            }
                        }
                    }
                }
                r
            }
            other => {
                return Err(Error::Unsupported(format!(
                    "relevance propagation through {} layers",
                    other.name()
                )))
            }
        };
        relevances[li] = r_in;
    }
    Ok((relevances, false))
}

fn map_from_input_relevance(rel: &Tensor, h: usize, w: usize) -> Grid {
    // Input tensor is [1, h, w].
    Grid::from_vec(h, w, rel.data.clone()).expect("relevance shape")
}

/// Deep-Taylor-style saliency: z⁺ LRP from the target logit down to pixels.
/// Non-positive target scores yield an all-zero map with the warning flag.
pub fn deep_taylor(model: &Classifier, image: &Grid, target_class: u8) -> Result<SaliencyMap> {
    let trace = model.forward_eval(image)?;
    let (relevances, zero_warning) = lrp_zplus_layers(&model.net, &trace, target_class)?;
    let values = map_from_input_relevance(&relevances[0], image.h(), image.w());
    debug_assert!(values.all_finite());
    debug_assert!(values.values().iter().all(|&v| v >= 0.0));
    Ok(SaliencyMap {
        values,
        method: SaliencyMethod::DeepTaylor,
        source_image_id: String::new(),
        model_hash: model.params_hash(),
        target_class,
        zero_warning,
    })
}

/// Grad-CAM: ReLU(Σ_k α_k A^k) over the last conv feature map (post-ReLU),
/// with α_k the spatially averaged gradients of the target score, bilinearly
/// upsampled to the input size.
pub fn grad_cam(model: &Classifier, image: &Grid, target_class: u8) -> Result<SaliencyMap> {
    let last_conv = model
        .net
        .layers
        .iter()
        .rposition(|l| matches!(l, Layer::Conv(_)))
        .ok_or_else(|| Error::Unsupported("grad_cam requires a conv layer".into()))?;
    // Feature map: activation after the ReLU that follows the conv, when
    // present.
    let feat_idx = if matches!(model.net.layers.get(last_conv + 1), Some(Layer::Relu)) {
        last_conv + 2
    } else {
        last_conv + 1
    };
    let trace = model.forward_eval(image)?;
    let out = trace.output();
    let mut grad = Tensor::zeros(out.shape.clone());
    grad.data[0] = target_sign(target_class);
    let back = model.net.backward(&trace, grad);
    let feat = &trace.activations[feat_idx];
    let gfeat = &back.activation_grads[feat_idx];
    let (c, h, w) = feat.dims3();
    let inv = 1.0 / (h * w) as f64;
    let mut cam = Grid::zeros(h, w);
    for ch in 0..c {
        let alpha: f64 = gfeat.data[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() * inv;
        for y in 0..h {
            for x in 0..w {
                let v = cam.at(y, x) + alpha * feat.data[(ch * h + y) * w + x];
                cam.set(y, x, v);
            }
        }
    }
    for v in cam.values_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let values = cam.resample(image.h(), image.w());
    debug_assert!(values.all_finite());
    Ok(SaliencyMap {
        values,
        method: SaliencyMethod::GradCam,
        source_image_id: String::new(),
        model_hash: model.params_hash(),
        target_class,
        zero_warning: false,
    })
}

/// Gradient×input attribution, stored as absolute values.
pub fn grad_input(model: &Classifier, image: &Grid, target_class: u8) -> Result<SaliencyMap> {
    let trace = model.forward_eval(image)?;
    let out = trace.output();
    let mut grad = Tensor::zeros(out.shape.clone());
    grad.data[0] = target_sign(target_class);
    let back = model.net.backward(&trace, grad);
    let g = &back.activation_grads[0];
    let mut values = Grid::zeros(image.h(), image.w());
    for y in 0..image.h() {
        for x in 0..image.w() {
            values.set(y, x, (g.data[y * image.w() + x] * image.at(y, x)).abs());
        }
    }
    Ok(SaliencyMap {
        values,
        method: SaliencyMethod::GradInput,
        source_image_id: String::new(),
        model_hash: model.params_hash(),
        target_class,
        zero_warning: false,
    })
}

/// Compute a saliency map with the given method, tagging the source image.
pub fn compute(
    method: SaliencyMethod,
    model: &Classifier,
    image: &Grid,
    image_id: &str,
    target_class: u8,
) -> Result<SaliencyMap> {
    let mut map = match method {
        SaliencyMethod::DeepTaylor => deep_taylor(model, image, target_class)?,
        SaliencyMethod::GradCam => grad_cam(model, image, target_class)?,
        SaliencyMethod::GradInput => grad_input(model, image, target_class)?,
    };
    map.source_image_id = image_id.to_string();
    Ok(map)
}

#[derive(Serialize, Deserialize)]
struct SaliencySidecar {
    min: f64,
    max: f64,
    method: SaliencyMethod,
    source_image_id: String,
    model_hash: String,
    target_class: u8,
    zero_warning: bool,
}

/// Export as PGM P5 plus a JSON sidecar carrying {min, max, method} so the
/// [0,255] quantization round-trips bit-exactly.
pub fn export_saliency(map: &SaliencyMap, path: &Path) -> Result<()> {
    let min = map.values.min();
    let max = map.values.max();
    let scale = if max > min { 255.0 / (max - min) } else { 0.0 };
    let mut f = std::fs::File::create(path.with_extension("pgm"))?;
    write!(f, "P5\n{} {}\n255\n", map.values.w(), map.values.h())?;
    let bytes: Vec<u8> = map
        .values
        .values()
        .iter()
        .map(|&v| ((v - min) * scale).round() as u8)
        .collect();
    f.write_all(&bytes)?;
    let sidecar = SaliencySidecar {
        min,
        max,
        method: map.method,
        source_image_id: map.source_image_id.clone(),
        model_hash: format!("{:016x}", map.model_hash),
        target_class: map.target_class,
        zero_warning: map.zero_warning,
    };
    std::fs::write(
        path.with_extension("json"),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

/// Import a map written by [`export_saliency`].
pub fn import_saliency(path: &Path) -> Result<SaliencyMap> {
    let sidecar: SaliencySidecar =
        serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
    let quantized = crate::synthdata::read_pgm(&path.with_extension("pgm"))?;
    let span = sidecar.max - sidecar.min;
    let mut values = Grid::zeros(quantized.h(), quantized.w());
    for y in 0..quantized.h() {
        for x in 0..quantized.w() {
            // read_pgm maps byte b to b/255; undo and rescale.
            let b = (quantized.at(y, x) * 255.0).round();
            values.set(y, x, sidecar.min + b * span / 255.0);
        }
    }
    let model_hash = u64::from_str_radix(&sidecar.model_hash, 16).unwrap_or(0);
    Ok(SaliencyMap {
        values,
        method: sidecar.method,
        source_image_id: sidecar.source_image_id,
        model_hash,
        target_class: sidecar.target_class,
        zero_warning: sidecar.zero_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{Conv2d, Dense, Mode};
    use crate::rng::rng_for;
    use rand::Rng;

    fn random_image(size: usize, seed: u64) -> Grid {
        let mut rng = rng_for(seed, "sal-img", 0);
        let data = (0..size * size).map(|_| rng.random_range(0.0..1.0)).collect();
        Grid::from_vec(size, size, data).unwrap()
    }

    /// Bias-free classifier-shaped network for conservation checks.
    fn bias_free_classifier(seed: u64) -> Classifier {
        let mut model = Classifier::new(16, 0.0, true, seed);
        for layer in &mut model.net.layers {
            if let Some((_, b)) = layer.params_mut() {
                b.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        model
    }

    #[test]
    fn single_linear_layer_zplus_hand_case() {
        // 3-pixel net, non-negative weights: relevance_i = w_i * x_i exactly.
        let mut rng = rng_for(1, "hand", 0);
        let mut dense = Dense::new(3, 2, &mut rng);
        dense.weights = vec![0.5, 1.0, 0.25, -0.3, 0.1, 0.2];
        dense.bias = vec![0.0, 0.0];
        let net = Network {
            layers: vec![Layer::Dense(dense)],
        };
        let input = Tensor {
            shape: vec![3],
            data: vec![0.2, 0.4, 0.8],
        };
        let trace = net.forward(&input, Mode::Eval, None);
        let (rel, warn) = lrp_zplus_layers(&net, &trace, 1).unwrap();
        assert!(!warn);
        let want = [0.5 * 0.2, 1.0 * 0.4, 0.25 * 0.8];
        for (got, want) in rel[0].data.iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn all_zero_input_gives_zero_map() {
        let model = bias_free_classifier(3);
        let img = Grid::zeros(16, 16);
        let map = deep_taylor(&model, &img, 1).unwrap();
        assert!(map.values.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_target_score_warns_and_zeroes() {
        let model = bias_free_classifier(4);
        // Find an image/class with negative score.
        for seed in 0..20 {
            let img = random_image(16, seed);
            let logit = model.forward_eval(&img).unwrap().output().data[0];
            let class = if logit >= 0.0 { 0 } else { 1 };
            let map = deep_taylor(&model, &img, class).unwrap();
            if logit != 0.0 {
                assert!(map.zero_warning);
                assert!(map.values.values().iter().all(|&v| v == 0.0));
                return;
            }
        }
        panic!("no non-zero logit found");
    }

    #[test]
    fn zplus_per_layer_conservation_bias_free() {
        // Sum of relevance at each traced activation equals the target
        // score, within 1e-6 relative.
        for seed in 0..10u64 {
            let model = bias_free_classifier(100 + seed);
            let img = random_image(16, seed);
            let trace = model.forward_eval(&img).unwrap();
            let logit = trace.output().data[0];
            let class = if logit >= 0.0 { 1 } else { 0 };
            let score = logit.abs();
            if score < 1e-6 {
                continue;
            }
            let (rels, warn) = lrp_zplus_layers(&model.net, &trace, class).unwrap();
            assert!(!warn);
            for (i, r) in rels.iter().enumerate() {
                let sum: f64 = r.data.iter().sum();
                assert!(
                    (sum - score).abs() <= 1e-6 * score.abs(),
                    "layer {i}: sum {sum} vs score {score} (seed {seed})"
                );
            }
        }
    }

    #[test]
    fn pixel_sum_matches_target_preactivation() {
        let model = bias_free_classifier(7);
        let img = random_image(16, 9);
        let trace = model.forward_eval(&img).unwrap();
        let logit = trace.output().data[0];
        let class = if logit >= 0.0 { 1 } else { 0 };
        let map = deep_taylor(&model, &img, class).unwrap();
        let sum: f64 = map.values.values().iter().sum();
        assert!((sum - logit.abs()).abs() <= 1e-5 * logit.abs());
    }

    #[test]
    fn deep_taylor_and_gradcam_nonnegative_random_pairs() {
        for seed in 0..10u64 {
            let model = Classifier::new(16, 0.1, true, 200 + seed);
            for i in 0..3 {
                let img = random_image(16, seed * 10 + i);
                let class = model.predicted_class(&img).unwrap();
                let dt = deep_taylor(&model, &img, class).unwrap();
                let gc = grad_cam(&model, &img, class).unwrap();
                assert!(dt.values.values().iter().all(|&v| v >= 0.0 && v.is_finite()));
                assert!(gc.values.values().iter().all(|&v| v >= 0.0 && v.is_finite()));
            }
        }
    }

    #[test]
    fn grad_cam_zero_gradients_zero_map() {
        let mut model = Classifier::new(16, 0.0, true, 5);
        // Zero the dense row feeding the logit: target gradient vanishes at
        // the feature map.
        if let Some(Layer::Dense(d)) = model.net.layers.last_mut() {
            for w in d.weights[0..d.in_dim].iter_mut() {
                *w = 0.0;
            }
        }
        let img = random_image(16, 2);
        let map = grad_cam(&model, &img, 1).unwrap();
        assert!(map.values.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_cam_requires_conv() {
        let mut rng = rng_for(1, "nc", 0);
        let net = Network {
            layers: vec![Layer::Dense(Dense::new(4, 2, &mut rng))],
        };
        let model = Classifier {
            net,
            input_size: 2,
            dropout_p: 0.0,
            variance_head: false,
            init_seed: 0,
        };
        let img = Grid::filled(2, 2, 0.5);
        assert!(matches!(
            grad_cam(&model, &img, 1),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn grad_input_linear_model_closed_form() {
        // Dense-only model: |w_i x_i| exactly.
        let mut rng = rng_for(2, "gi", 0);
        let mut dense = Dense::new(4, 2, &mut rng);
        dense.weights[0..4].copy_from_slice(&[0.5, -1.5, 2.0, 0.0]);
        dense.bias = vec![0.1, 0.0];
        let model = Classifier {
            net: Network {
                layers: vec![Layer::Dense(dense)],
            },
            input_size: 2,
            dropout_p: 0.0,
            variance_head: false,
            init_seed: 0,
        };
        let img = Grid::from_vec(2, 2, vec![0.2, 0.4, 0.6, 0.8]).unwrap();
        let map = grad_input(&model, &img, 1).unwrap();
        let want = [0.5 * 0.2, 1.5 * 0.4, 2.0 * 0.6, 0.0];
        for (got, want) in map.values.values().iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
        // Class 0 flips the sign, absolute values identical.
        let map0 = grad_input(&model, &img, 0).unwrap();
        assert_eq!(map0.values, map.values);
        // Zero input -> zero map.
        let zero = grad_input(&model, &Grid::zeros(2, 2), 1).unwrap();
        assert!(zero.values.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_input_scale_covariance_on_linear_model() {
        // Scaling the input by c scales the map by c² (gradient is linear in
        // weights only, input multiplies once more).
        let mut rng = rng_for(3, "gi2", 0);
        let dense = Dense::new(4, 2, &mut rng);
        let model = Classifier {
            net: Network {
                layers: vec![Layer::Dense(dense)],
            },
            input_size: 2,
            dropout_p: 0.0,
            variance_head: false,
            init_seed: 0,
        };
        let img = Grid::from_vec(2, 2, vec![0.2, 0.4, 0.6, 0.8]).unwrap();
        let c = 3.0;
        let mut scaled = img.clone();
        for v in scaled.values_mut() {
            *v *= c;
        }
        let m1 = grad_input(&model, &img, 1).unwrap();
        let m2 = grad_input(&model, &scaled, 1).unwrap();
        for (a, b) in m1.values.values().iter().zip(m2.values.values()) {
            assert!((b - c * a).abs() < 1e-12, "{b} vs {}", c * a);
        }
    }

    #[test]
    fn grad_input_deterministic() {
        let model = Classifier::new(16, 0.2, true, 6);
        let img = random_image(16, 3);
        let a = grad_input(&model, &img, 1).unwrap();
        let b = grad_input(&model, &img, 1).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn export_import_round_trip_bit_exact() {
        let model = Classifier::new(16, 0.0, true, 8);
        let img = random_image(16, 4);
        let class = model.predicted_class(&img).unwrap();
        let map = compute(SaliencyMethod::DeepTaylor, &model, &img, "img-x", class).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map");
        export_saliency(&map, &path).unwrap();
        let back = import_saliency(&path).unwrap();
        assert_eq!(back.method, SaliencyMethod::DeepTaylor);
        assert_eq!(back.source_image_id, "img-x");
        // Second export must be byte-identical.
        let path2 = dir.path().join("map2");
        export_saliency(&back, &path2).unwrap();
        let b1 = std::fs::read(path.with_extension("pgm")).unwrap();
        let b2 = std::fs::read(path2.with_extension("pgm")).unwrap();
        assert_eq!(b1, b2);
    }
}
