use super::{Layer, Network};
use crate::rational::{self, Rat};
use num_traits::{Signed, Zero};
use thiserror::Error;

/// Numeric semantics used to run a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// IEEE-754 binary32; every weight literal is rounded to `f32` once, dot
    /// products accumulate strictly left to right starting from `0.0`, the bias
    /// is added last, and no fused multiply-add is used.
    Float32FixedOrder,
    /// Arbitrary-precision rationals; weights promoted exactly from `f64`.
    ExactRational,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("input has {got} components, network expects {expected}")]
    Arity { expected: usize, got: usize },
    #[error("softmax is transcendental and has no exact rational evaluation")]
    SoftmaxInExactMode,
    #[error("input component {0} is not representable as f32")]
    NotF32(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExactLayer {
    Affine { weights: Vec<Vec<Rat>>, bias: Vec<Rat> },
    Relu,
    Softmax,
}

/// The exact rational twin of a [`Network`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExactNetwork {
    pub input_dim: usize,
    pub layers: Vec<ExactLayer>,
}

impl ExactNetwork {
    pub fn from_network(net: &Network) -> Self {
        let conv = |v: f64| rational::from_f64(v).expect("weights are finite");
        let layers = net
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Affine(a) => ExactLayer::Affine {
                    weights: a
                        .weights
                        .iter()
                        .map(|row| row.iter().copied().map(conv).collect())
                        .collect(),
                    bias: a.bias.iter().copied().map(conv).collect(),
                },
                Layer::Relu => ExactLayer::Relu,
                Layer::Softmax => ExactLayer::Softmax,
            })
            .collect();
        Self {
            input_dim: net.input_dim(),
            layers,
        }
    }

    /// Output of every layer, in order (the last entry is the network output).
    pub fn eval_layers(&self, x: &[Rat]) -> Result<Vec<Vec<Rat>>, EvalError> {
        if x.len() != self.input_dim {
            return Err(EvalError::Arity {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut cur = x.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            cur = match layer {
                ExactLayer::Affine { weights, bias } => weights
                    .iter()
                    .zip(bias)
                    .map(|(row, b)| {
                        row.iter().zip(&cur).fold(b.clone(), |acc, (w, v)| acc + w * v)
                    })
                    .collect(),
                ExactLayer::Relu => cur
                    .into_iter()
                    .map(|v| if v.is_negative() { Rat::zero() } else { v })
                    .collect(),
                ExactLayer::Softmax => return Err(EvalError::SoftmaxInExactMode),
            };
            out.push(cur.clone());
        }
        Ok(out)
    }

    pub fn eval(&self, x: &[Rat]) -> Result<Vec<Rat>, EvalError> {
        Ok(self
            .eval_layers(x)?
            .pop()
            .unwrap_or_else(|| x.to_vec()))
    }
}

/// Both evaluations of one input and their exact worst-case disagreement.
#[derive(Clone, Debug, PartialEq)]
pub struct Gap {
    pub f32_out: Vec<f32>,
    pub rat_out: Vec<Rat>,
    pub max_abs_diff: Rat,
}

impl Network {
    /// Evaluates under `mode`. In `Float32FixedOrder` the input must be exactly
    /// representable in `f32`; the returned rationals are the exact values of
    /// the `f32` results.
    pub fn eval(&self, x: &[Rat], mode: EvalMode) -> Result<Vec<Rat>, EvalError> {
        match mode {
            EvalMode::ExactRational => self.eval_exact(x),
            EvalMode::Float32FixedOrder => {
                let xs = x
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        let f = rational::to_f32(r);
                        match rational::from_f32(f) {
                            Some(v) if &v == r => Ok(f),
                            _ => Err(EvalError::NotF32(i)),
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(self
                    .eval_f32(&xs)?
                    .into_iter()
                    .map(|v| rational::from_f32(v).unwrap_or_else(Rat::zero))
                    .collect())
            }
        }
    }

    pub fn eval_exact(&self, x: &[Rat]) -> Result<Vec<Rat>, EvalError> {
        ExactNetwork::from_network(self).eval(x)
    }

    pub fn eval_f32(&self, x: &[f32]) -> Result<Vec<f32>, EvalError> {
        if x.len() != self.input_dim() {
            return Err(EvalError::Arity {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut cur = x.to_vec();
        for layer in self.layers() {
            cur = match layer {
                Layer::Affine(a) => a
                    .weights
                    .iter()
                    .zip(&a.bias)
                    .map(|(row, &b)| {
                        let mut acc = 0.0f32;
                        for (&w, &v) in row.iter().zip(&cur) {
                            let prod = (w as f32) * v;
                            acc += prod;
                        }
                        acc + b as f32
                    })
                    .collect(),
                Layer::Relu => cur.into_iter().map(|v| if v < 0.0 { 0.0 } else { v }).collect(),
                Layer::Softmax => softmax_f32(&cur),
            };
        }
        Ok(cur)
    }

    /// Training-mode evaluation in `f64`; softmax allowed.
    pub fn eval_f64(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        if x.len() != self.input_dim() {
            return Err(EvalError::Arity {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut cur = x.to_vec();
        for layer in self.layers() {
            cur = match layer {
                Layer::Affine(a) => a
                    .weights
                    .iter()
                    .zip(&a.bias)
                    .map(|(row, &b)| row.iter().zip(&cur).fold(0.0, |acc, (w, v)| acc + w * v) + b)
                    .collect(),
                Layer::Relu => cur.into_iter().map(|v| v.max(0.0)).collect(),
                Layer::Softmax => softmax_f64(&cur),
            };
        }
        Ok(cur)
    }

    /// Runs the `f32` and exact evaluators on the same input.
    pub fn eval_gap(&self, x: &[f32]) -> Result<Gap, EvalError> {
        let f32_out = self.eval_f32(x)?;
        let exact_in: Vec<Rat> = x
            .iter()
            .map(|&v| rational::from_f32(v).ok_or(EvalError::NotF32(0)))
            .collect::<Result<_, _>>()?;
        let rat_out = self.eval_exact(&exact_in)?;
        let max_abs_diff = f32_out
            .iter()
            .zip(&rat_out)
            .map(|(f, r)| (rational::from_f32(*f).unwrap_or_else(Rat::zero) - r).abs())
            .max()
            .unwrap_or_else(Rat::zero);
        Ok(Gap {
            f32_out,
            rat_out,
            max_abs_diff,
        })
    }
}

/// `softmax(x - max(x))`, accumulated left to right.
pub fn softmax_f32(x: &[f32]) -> Vec<f32> {
    let m = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let e: Vec<f32> = x.iter().map(|v| (v - m).exp()).collect();
    let mut sum = 0.0f32;
    for v in &e {
        sum += v;
    }
    e.into_iter().map(|v| v / sum).collect()
}

pub fn softmax_f64(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}
