//! Model file (JSON). Weights are row-major and every float is a hex literal,
//! so a save/load cycle is bit-exact.
//!
//! ```json
//! {
//!   "format": 1,
//!   "layers": [
//!     {"input": 2, "output": 1, "activation": "softmax", "policy": "tensor",
//!      "weight": ["0x1p-1", "-0x1.8p+0"], "bias": ["0x0p+0"]}
//!   ],
//!   "standardization": {"mean": ["0x0p+0", "0x0p+0"], "scale": ["0x1p+0", "0x1p+0"]}
//! }
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use blindtrain::nn::{LayerSpec, LinearParams, Network};
use blindtrain::Matrix;
use serde::{Deserialize, Serialize};

use crate::config::{Activation, Policy};
use crate::data::Standardization;
use crate::hexfloat;

const FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    input: usize,
    output: usize,
    activation: Activation,
    policy: Policy,
    weight: Vec<String>,
    bias: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StandardizationFile {
    mean: Vec<String>,
    scale: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: u32,
    layers: Vec<LayerFile>,
    #[serde(default)]
    standardization: Option<StandardizationFile>,
}

fn hex_all(v: &[f64]) -> Vec<String> {
    v.iter().map(|x| hexfloat::format(*x)).collect()
}

fn parse_all(v: &[String]) -> Result<Vec<f64>> {
    v.iter()
        .map(|s| hexfloat::parse(s).map_err(anyhow::Error::msg))
        .collect()
}

/// Trained network plus the input standardization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub network: Network,
    pub standardization: Option<Standardization>,
}

/// Activation following each linear layer.
fn activations(net: &Network) -> Vec<Activation> {
    let mut out = Vec::new();
    for spec in net.layers() {
        match spec {
            LayerSpec::Linear { .. } => out.push(Activation::Identity),
            LayerSpec::Relu => *out.last_mut().expect("activation follows a linear layer") = Activation::Relu,
            LayerSpec::Softmax => *out.last_mut().expect("activation follows a linear layer") = Activation::Softmax,
        }
    }
    out
}

impl Model {
    pub fn to_json(&self) -> String {
        let layers = self
            .network
            .params()
            .iter()
            .zip(activations(&self.network))
            .zip(self.network.policies())
            .map(|((p, activation), policy)| LayerFile {
                input: p.weight.cols(),
                output: p.weight.rows(),
                activation,
                policy: policy.into(),
                weight: hex_all(p.weight.as_slice()),
                bias: hex_all(&p.bias),
            })
            .collect();
        let file = ModelFile {
            format: FORMAT,
            layers,
            standardization: self.standardization.as_ref().map(|s| StandardizationFile {
                mean: hex_all(&s.mean),
                scale: hex_all(&s.scale),
            }),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != FORMAT {
            bail!("unsupported model format {}", file.format);
        }
        let mut specs = Vec::new();
        let mut params = Vec::new();
        for (i, l) in file.layers.iter().enumerate() {
            specs.push(LayerSpec::Linear {
                out_dim: l.output,
                in_dim: l.input,
                policy: l.policy.into(),
            });
            match l.activation {
                Activation::Relu => specs.push(LayerSpec::Relu),
                Activation::Softmax => specs.push(LayerSpec::Softmax),
                Activation::Identity => {}
            }
            let weight = parse_all(&l.weight).with_context(|| format!("layer {i} weight"))?;
            let bias = parse_all(&l.bias).with_context(|| format!("layer {i} bias"))?;
            if weight.len() != l.input * l.output || bias.len() != l.output {
                bail!("layer {i}: parameter counts do not match {}x{}", l.output, l.input);
            }
            params.push(LinearParams {
                weight: Matrix::new(l.output, l.input, weight)?,
                bias,
            });
        }
        let standardization = match file.standardization {
            Some(s) => Some(Standardization {
                mean: parse_all(&s.mean)?,
                scale: parse_all(&s.scale)?,
            }),
            None => None,
        };
        Ok(Self {
            network: Network::from_parts(specs, params)?,
            standardization,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).with_context(|| format!("cannot write model {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("cannot read model {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("invalid model {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use blindtrain::nn::ParallelPolicy;
    use blindtrain::Rng;

    #[test]
    fn roundtrip_is_bitwise() {
        let mut net = Network::new(
            vec![
                LayerSpec::Linear {
                    out_dim: 5,
                    in_dim: 3,
                    policy: ParallelPolicy::DataParallel,
                },
                LayerSpec::Relu,
                LayerSpec::Linear {
                    out_dim: 4,
                    in_dim: 5,
                    policy: ParallelPolicy::InMaster,
                },
                LayerSpec::Linear {
                    out_dim: 2,
                    in_dim: 4,
                    policy: ParallelPolicy::TensorParallel,
                },
                LayerSpec::Softmax,
            ],
            &mut Rng::new(3),
        )
        .unwrap();
        net.set_policy(2, ParallelPolicy::TensorParallel);
        let model = Model {
            network: net,
            standardization: Some(Standardization {
                mean: vec![0.1, -2.5, 1e-300],
                scale: vec![1.0 / 3.0, 7.0, 5e-324],
            }),
        };
        let back = Model::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
        for (a, b) in back.network.params().iter().zip(model.network.params()) {
            for (x, y) in a.weight.as_slice().iter().zip(b.weight.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn bad_models_rejected() {
        assert!(Model::from_json("{}").is_err());
        let bad = r#"{"format": 1, "layers": [{"input": 2, "output": 1, "activation": "softmax",
            "policy": "tensor", "weight": ["0x1p+0"], "bias": ["0x0p+0"]}]}"#;
        assert!(Model::from_json(bad).is_err());
        let bad = bad.replace(r#"["0x1p+0"]"#, r#"["0x1p+0", "1.5"]"#);
        assert!(Model::from_json(&bad).is_err());
    }
}
