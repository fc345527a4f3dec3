//! Portable `.rnnmodel.json` artifacts: network weights, standardizer and provenance.
//!
//! Weights are stored as base64 of little-endian `f64` values in row-major
//! order, so a round trip is bit-exact.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{apply_standardizer, compute_features, Standardizer};
use crate::nn::{argmax, Activation, DenseLayer, HyperParams, Layer, LstmLayer, Network, Tensor, OUTPUT_WIDTH};
use crate::trajectory::{RoadUserClass, Trajectory};

pub const FORMAT_VERSION: u32 = 1;
pub const MODEL_EXTENSION: &str = ".rnnmodel.json";

/// Where a model came from. Every field is optional so hand-built networks can be saved.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub network_seed: Option<u64>,
    pub shuffle_seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub variant: Option<String>,
    /// SHA-256 of the serialized training history.
    pub history_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    activation: Option<Activation>,
    tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Artifact {
    format_version: u32,
    hyper_params: HyperParams,
    class_order: Vec<String>,
    standardizer: Standardizer,
    layers: Vec<LayerRecord>,
    provenance: Provenance,
}

/// A network with the normalization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub network: Network,
    pub standardizer: Standardizer,
    pub provenance: Provenance,
}

fn encode(name: &str, t: &Tensor) -> TensorRecord {
    let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    TensorRecord {
        name: name.to_string(),
        shape: [t.rows, t.cols],
        data: B64.encode(bytes),
    }
}

fn decode(layer: usize, kind: &str, expected: &str, rec: &TensorRecord) -> Result<Tensor> {
    let err = |m: String| Error::Model(format!("layer {layer} ({kind}) tensor {}: {m}", rec.name));
    if rec.name != expected {
        return Err(err(format!("expected tensor `{expected}`")));
    }
    let bytes = B64.decode(&rec.data).map_err(|e| err(format!("invalid base64 ({e})")))?;
    let [rows, cols] = rec.shape;
    let want = rows * cols * 8;
    if bytes.len() != want {
        return Err(err(format!(
            "payload has {} bytes, shape {rows}x{cols} needs {want}",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Tensor { rows, cols, data })
}

/// Serializes deterministically: equal inputs give byte-identical output.
pub fn save_model<W: Write>(
    net: &Network,
    standardizer: &Standardizer,
    provenance: &Provenance,
    mut sink: W,
) -> Result<()> {
    let layers = net
        .layers()
        .iter()
        .map(|layer| match layer {
            Layer::Dense(d) => LayerRecord {
                kind: "dense".into(),
                activation: Some(d.activation),
                tensors: vec![encode("weight", &d.weight), encode("bias", &d.bias)],
            },
            Layer::Lstm(l) => LayerRecord {
                kind: "lstm".into(),
                activation: None,
                tensors: vec![
                    encode("input_weight", &l.input_weight),
                    encode("recurrent_weight", &l.recurrent_weight),
                    encode("bias", &l.bias),
                ],
            },
        })
        .collect();
    let artifact = Artifact {
        format_version: FORMAT_VERSION,
        hyper_params: *net.spec(),
        class_order: RoadUserClass::names().iter().map(|s| s.to_string()).collect(),
        standardizer: standardizer.clone(),
        layers,
        provenance: provenance.clone(),
    };
    let mut body = serde_json::to_vec_pretty(&artifact)?;
    body.push(b'\n');
    sink.write_all(&body).map_err(|e| Error::io("model sink", e))
}

pub fn save_model_file(path: &Path, model: &Model) -> Result<()> {
    let mut buf = Vec::new();
    save_model(&model.network, &model.standardizer, &model.provenance, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_model(source: &[u8]) -> Result<Model> {
    let raw: serde_json::Value = serde_json::from_slice(source)?;
    match raw.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Model(format!(
                "unsupported format_version {v}, this build reads version {FORMAT_VERSION}"
            )))
        }
        None => return Err(Error::Model("format_version missing".into())),
    }
    if raw.get("standardizer").map_or(true, |s| s.is_null()) {
        return Err(Error::Model("standardizer required".into()));
    }
    let artifact: Artifact = serde_json::from_value(raw).map_err(|e| Error::Model(format!("malformed artifact: {e}")))?;

    let names = RoadUserClass::names();
    if artifact.class_order.iter().map(String::as_str).ne(names.iter().copied()) {
        return Err(Error::Model(format!(
            "class order {:?} differs from {:?}",
            artifact.class_order, names
        )));
    }
    let standardizer = Standardizer::from_stats(artifact.standardizer.mean, artifact.standardizer.std)
        .map_err(|e| Error::Model(e.to_string()))?;

    let mut layers = Vec::with_capacity(artifact.layers.len());
    for (i, rec) in artifact.layers.iter().enumerate() {
        let layer = match rec.kind.as_str() {
            "dense" => {
                let [w, b] = rec.tensors.as_slice() else {
                    return Err(Error::Model(format!("layer {i} (dense): expected 2 tensors")));
                };
                let activation = rec
                    .activation
                    .ok_or_else(|| Error::Model(format!("layer {i} (dense): activation missing")))?;
                Layer::Dense(DenseLayer {
                    weight: decode(i, "dense", "weight", w)?,
                    bias: decode(i, "dense", "bias", b)?,
                    activation,
                })
            }
            "lstm" => {
                let [w, u, b] = rec.tensors.as_slice() else {
                    return Err(Error::Model(format!("layer {i} (lstm): expected 3 tensors")));
                };
                Layer::Lstm(LstmLayer {
                    input_weight: decode(i, "lstm", "input_weight", w)?,
                    recurrent_weight: decode(i, "lstm", "recurrent_weight", u)?,
                    bias: decode(i, "lstm", "bias", b)?,
                })
            }
            other => return Err(Error::Model(format!("layer {i}: unknown kind `{other}`"))),
        };
        layers.push(layer);
    }
    let network =
        Network::from_layers(artifact.hyper_params, layers).map_err(|e| Error::Model(e.to_string()))?;
    Ok(Model {
        network,
        standardizer,
        provenance: artifact.provenance,
    })
}

pub fn load_model_file(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    load_model(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: RoadUserClass,
    pub probabilities: [f64; OUTPUT_WIDTH],
    /// One probability row per timestep.
    pub per_step: Vec<[f64; OUTPUT_WIDTH]>,
}

impl Model {
    /// Raw trajectory to class: features, standardization, forward pass, final argmax.
    pub fn classify(&self, traj: &Trajectory) -> Result<Prediction> {
        let seq = apply_standardizer(&self.standardizer, &compute_features(traj)?);
        let per_step = self.network.forward(&seq);
        let probabilities = *per_step.last().expect("at least two samples");
        Ok(Prediction {
            label: RoadUserClass::ALL[argmax(&probabilities)],
            probabilities,
            per_step,
        })
    }
}
