//! Sequential piecewise-linear networks with fully specified semantics.
//!
//! A [`Network`] is a chain of affine maps and activations. Weights are kept
//! as the `f64` literals read from disk; the exact evaluator promotes them to
//! rationals without rounding, the `f32` evaluator rounds each literal to the
//! nearest `f32` once and then accumulates strictly left to right.

mod eval;
mod json;
mod nnet;

pub use eval::{softmax_f32, softmax_f64, EvalError, EvalMode, ExactLayer, ExactNetwork, Gap};
pub use json::{from_json_str, to_json_string};
pub use nnet::{from_nnet_str, to_nnet_string};

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model file: {0}")]
    Syntax(String),
    #[error("unknown layer kind `{0}`")]
    UnknownLayer(String),
    #[error("layer {layer}: {detail}")]
    DimensionChain { layer: usize, detail: String },
    #[error("layer {layer}: non-finite weight or bias")]
    NonFinite { layer: usize },
    #[error("softmax may only appear as the final layer (found at layer {0})")]
    SoftmaxNotFinal(usize),
}

/// Dense affine map `z = W x + b`; `weights` is row-major, one row per output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Self {
        Self { weights, bias }
    }

    pub fn out_dim(&self) -> usize {
        self.bias.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Affine(Affine),
    Relu,
    Softmax,
}

/// Input normalisation constants carried by NNet files. Exposed, never applied.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
    pub means: Vec<f64>,
    pub ranges: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
    pub normalization: Option<Normalization>,
}

impl Network {
    /// Builds a network, checking the dimension chain, finiteness and the
    /// softmax-last rule.
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self, FormatError> {
        let net = Self {
            input_dim,
            layers,
            normalization: None,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<(), FormatError> {
        if self.input_dim == 0 {
            return Err(FormatError::DimensionChain {
                layer: 0,
                detail: "input_dim must be at least 1".into(),
            });
        }
        let mut width = self.input_dim;
        for (k, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Affine(a) => {
                    if a.weights.len() != a.bias.len() {
                        return Err(FormatError::DimensionChain {
                            layer: k,
                            detail: format!(
                                "{} weight rows but {} biases",
                                a.weights.len(),
                                a.bias.len()
                            ),
                        });
                    }
                    if a.bias.is_empty() {
                        return Err(FormatError::DimensionChain {
                            layer: k,
                            detail: "affine layer with no outputs".into(),
                        });
                    }
                    for (r, row) in a.weights.iter().enumerate() {
                        if row.len() != width {
                            return Err(FormatError::DimensionChain {
                                layer: k,
                                detail: format!(
                                    "row {r} has {} columns, previous width is {width}",
                                    row.len()
                                ),
                            });
                        }
                    }
                    let finite = a.weights.iter().flatten().chain(&a.bias).all(|v| v.is_finite());
                    if !finite {
                        return Err(FormatError::NonFinite { layer: k });
                    }
                    width = a.out_dim();
                }
                Layer::Relu => {}
                Layer::Softmax => {
                    if k + 1 != self.layers.len() {
                        return Err(FormatError::SoftmaxNotFinal(k));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Affine(a) => Some(a.out_dim()),
                _ => None,
            })
            .unwrap_or(self.input_dim)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to the affine layers, in order. Dimensions cannot change.
    pub fn affine_layers_mut(&mut self) -> impl Iterator<Item = &mut Affine> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Affine(a) => Some(a),
            _ => None,
        })
    }

    pub fn affine_layers(&self) -> impl Iterator<Item = &Affine> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Affine(a) => Some(a),
            _ => None,
        })
    }

    /// Width of the value produced by each layer.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut width = self.input_dim;
        self.layers
            .iter()
            .map(|l| {
                if let Layer::Affine(a) = l {
                    width = a.out_dim();
                }
                width
            })
            .collect()
    }

    pub fn is_piecewise_linear(&self) -> bool {
        !self.layers.iter().any(|l| matches!(l, Layer::Softmax))
    }
}

/// Loads a model file: `.nnet` files use the NNet reader, anything else the
/// JSON model format.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network, FormatError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let is_nnet = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("nnet"));
    if is_nnet {
        from_nnet_str(&text)
    } else {
        from_json_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_broken_chain() {
        let err = Network::new(
            2,
            vec![Layer::Affine(Affine::new(vec![vec![1.0, 2.0, 3.0]], vec![0.0]))],
        )
        .unwrap_err();
        assert!(matches!(err, FormatError::DimensionChain { layer: 0, .. }));
    }

    #[test]
    fn rejects_non_final_softmax() {
        let err = Network::new(
            1,
            vec![
                Layer::Softmax,
                Layer::Affine(Affine::new(vec![vec![1.0]], vec![0.0])),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, FormatError::SoftmaxNotFinal(0)));
    }

    #[test]
    fn rejects_nan() {
        let err = Network::new(
            1,
            vec![Layer::Affine(Affine::new(vec![vec![f64::NAN]], vec![0.0]))],
        )
        .unwrap_err();
        assert!(matches!(err, FormatError::NonFinite { layer: 0 }));
    }

    #[test]
    fn widths() {
        let net = Network::new(
            2,
            vec![
                Layer::Affine(Affine::new(vec![vec![1.0, 0.0]; 3], vec![0.0; 3])),
                Layer::Relu,
                Layer::Affine(Affine::new(vec![vec![1.0; 3]], vec![0.0])),
            ],
        )
        .unwrap();
        assert_eq!(net.layer_widths(), vec![3, 3, 1]);
        assert_eq!(net.output_dim(), 1);
    }
}
