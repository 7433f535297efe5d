//! Weight checkpoints: little-endian IEEE-754 float32 flat file plus a JSON
//! header describing layer shapes, the init seed, and a config hash.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Classifier, Conv2d, Dense, Layer, Network};

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    layers: Vec<LayerDesc>,
    input_size: usize,
    dropout_p: f64,
    variance_head: bool,
    seed: u64,
    config_hash: String,
    n_params: usize,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LayerDesc {
    Conv { in_ch: usize, out_ch: usize },
    Relu,
    Dropout { p: f64 },
    Maxpool2,
    Gap,
    Dense { in_dim: usize, out_dim: usize },
    Upsample2,
    Sigmoid,
}

fn describe(layer: &Layer) -> LayerDesc {
    match layer {
        Layer::Conv(c) => LayerDesc::Conv {
            in_ch: c.in_ch,
            out_ch: c.out_ch,
        },
        Layer::Relu => LayerDesc::Relu,
        Layer::Dropout(p) => LayerDesc::Dropout { p: *p },
        Layer::MaxPool2 => LayerDesc::Maxpool2,
        Layer::GlobalAvgPool => LayerDesc::Gap,
        Layer::Dense(d) => LayerDesc::Dense {
            in_dim: d.in_dim,
            out_dim: d.out_dim,
        },
        Layer::Upsample2 => LayerDesc::Upsample2,
        Layer::Sigmoid => LayerDesc::Sigmoid,
    }
}

/// Save a classifier as `<path>.json` + `<path>.f32` (flat weights).
pub fn save_classifier(model: &Classifier, path: &Path, config_hash: &str) -> Result<()> {
    let params = model.net.param_vector();
    let header = CheckpointHeader {
        layers: model.net.layers.iter().map(describe).collect(),
        input_size: model.input_size,
        dropout_p: model.dropout_p,
        variance_head: model.variance_head,
        seed: model.init_seed,
        config_hash: config_hash.to_string(),
        n_params: params.len(),
    };
    std::fs::write(
        path.with_extension("json"),
        serde_json::to_string_pretty(&header)?,
    )?;
    let mut f = std::fs::File::create(path.with_extension("f32"))?;
    for v in params {
        f.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Load a classifier previously written by [`save_classifier`].
pub fn load_classifier(path: &Path) -> Result<Classifier> {
    let header: CheckpointHeader =
        serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
    let mut raw = Vec::new();
    std::fs::File::open(path.with_extension("f32"))?.read_to_end(&mut raw)?;
    if raw.len() != header.n_params * 4 {
        return Err(Error::Malformed {
            path: path.display().to_string(),
            message: format!(
                "expected {} f32 values, file holds {}",
                header.n_params,
                raw.len() / 4
            ),
        });
    }
    let params: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut rng = crate::rng::rng_for(0, "ckpt-placeholder", 0);
    let layers: Vec<Layer> = header
        .layers
        .iter()
        .map(|d| match d {
            LayerDesc::Conv { in_ch, out_ch } => Layer::Conv(Conv2d::new(*in_ch, *out_ch, &mut rng)),
            LayerDesc::Relu => Layer::Relu,
            LayerDesc::Dropout { p } => Layer::Dropout(*p),
            LayerDesc::Maxpool2 => Layer::MaxPool2,
            LayerDesc::Gap => Layer::GlobalAvgPool,
            LayerDesc::Dense { in_dim, out_dim } => {
                Layer::Dense(Dense::new(*in_dim, *out_dim, &mut rng))
            }
            LayerDesc::Upsample2 => Layer::Upsample2,
            LayerDesc::Sigmoid => Layer::Sigmoid,
        })
        .collect();
    let mut net = Network { layers };
    let mut cursor = 0usize;
    for layer in &mut net.layers {
        if let Some((w, b)) = layer.params_mut() {
            let need = w.len() + b.len();
            if cursor + need > params.len() {
                return Err(Error::Malformed {
                    path: path.display().to_string(),
                    message: "weight file shorter than architecture".into(),
                });
            }
            let wn = w.len();
            w.copy_from_slice(&params[cursor..cursor + wn]);
            cursor += wn;
            let bn = b.len();
            b.copy_from_slice(&params[cursor..cursor + bn]);
            cursor += bn;
        }
    }
    Ok(Classifier {
        net,
        input_size: header.input_size,
        dropout_p: header.dropout_p,
        variance_head: header.variance_head,
        init_seed: header.seed,
    })
}
