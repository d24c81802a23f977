//! Symbolic linear bounds over an input box.
//!
//! Every neuron gets a lower and an upper affine function of the network
//! inputs. Each layer is derived from the previous one alone, so a checker
//! can replay the derivation layer by layer.

use crate::model::ExactLayer;
use crate::rational::{serde_frac, Rat};
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

/// `c·x + d` over the network inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinFn {
    #[serde(with = "serde_frac::vec")]
    pub coeffs: Vec<Rat>,
    #[serde(with = "serde_frac")]
    pub constant: Rat,
}

impl LinFn {
    pub fn zero(m: usize) -> Self {
        Self {
            coeffs: vec![Rat::zero(); m],
            constant: Rat::zero(),
        }
    }

    pub fn eval(&self, x: &[Rat]) -> Rat {
        self.coeffs
            .iter()
            .zip(x)
            .fold(self.constant.clone(), |acc, (c, v)| acc + c * v)
    }

    /// Closed-form minimum over a box.
    pub fn min_over(&self, bx: &[(Rat, Rat)]) -> Rat {
        self.coeffs.iter().zip(bx).fold(self.constant.clone(), |acc, (c, (lo, hi))| {
            if c.is_positive() {
                acc + c * lo
            } else {
                acc + c * hi
            }
        })
    }

    pub fn max_over(&self, bx: &[(Rat, Rat)]) -> Rat {
        self.coeffs.iter().zip(bx).fold(self.constant.clone(), |acc, (c, (lo, hi))| {
            if c.is_positive() {
                acc + c * hi
            } else {
                acc + c * lo
            }
        })
    }

    pub fn scale(&self, k: &Rat) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * k).collect(),
            constant: &self.constant * k,
        }
    }

    /// `self += k·other`
    pub fn add_scaled(&mut self, other: &LinFn, k: &Rat) {
        if k.is_zero() {
            return;
        }
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b * k;
        }
        self.constant += &other.constant * k;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronBounds {
    pub lower: LinFn,
    pub upper: LinFn,
}

/// ReLU output bounds together with the concrete pre-activation range
/// `[lo, hi]` that selected the relaxation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReluNeuron {
    #[serde(with = "serde_frac")]
    pub lo: Rat,
    #[serde(with = "serde_frac")]
    pub hi: Rat,
    pub lower: LinFn,
    pub upper: LinFn,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerBounds {
    Affine { neurons: Vec<NeuronBounds> },
    Relu { neurons: Vec<ReluNeuron> },
}

impl LayerBounds {
    pub fn len(&self) -> usize {
        match self {
            LayerBounds::Affine { neurons } => neurons.len(),
            LayerBounds::Relu { neurons } => neurons.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lower(&self, i: usize) -> &LinFn {
        match self {
            LayerBounds::Affine { neurons } => &neurons[i].lower,
            LayerBounds::Relu { neurons } => &neurons[i].lower,
        }
    }

    pub fn upper(&self, i: usize) -> &LinFn {
        match self {
            LayerBounds::Affine { neurons } => &neurons[i].upper,
            LayerBounds::Relu { neurons } => &neurons[i].upper,
        }
    }
}

/// Bounds for the output of every layer, in layer order.
pub type LinBounds = Vec<LayerBounds>;

/// Slope shared by the upper chord and the lower line of a crossing ReLU:
/// `u/(u−l)`, which is `1/2` when `l = −u`.
pub fn relu_slope(lo: &Rat, hi: &Rat) -> Rat {
    hi / (hi - lo)
}

/// Propagates symbolic bounds through `layers` over `bx`. `None` if a layer
/// is not piecewise linear.
pub fn propagate(layers: &[ExactLayer], bx: &[(Rat, Rat)]) -> Option<LinBounds> {
    let m = bx.len();
    let mut out: LinBounds = Vec::with_capacity(layers.len());
    for layer in layers {
        let next = match layer {
            ExactLayer::Affine { weights, bias } => {
                let neurons = weights
                    .iter()
                    .zip(bias)
                    .map(|(row, b)| affine_neuron(out.last(), row, b, m))
                    .collect();
                LayerBounds::Affine { neurons }
            }
            ExactLayer::Relu => {
                let prev = out.last();
                let width = prev.map_or(m, LayerBounds::len);
                let neurons = (0..width)
                    .map(|i| {
                        let (l, u) = match prev {
                            Some(p) => (p.lower(i).clone(), p.upper(i).clone()),
                            None => (unit(m, i), unit(m, i)),
                        };
                        relu_neuron(l, u, bx)
                    })
                    .collect();
                LayerBounds::Relu { neurons }
            }
            ExactLayer::Softmax => return None,
        };
        out.push(next);
    }
    Some(out)
}

fn unit(m: usize, i: usize) -> LinFn {
    let mut f = LinFn::zero(m);
    f.coeffs[i] = Rat::one();
    f
}

fn affine_neuron(prev: Option<&LayerBounds>, row: &[Rat], b: &Rat, m: usize) -> NeuronBounds {
    let mut lower = LinFn::zero(m);
    let mut upper = LinFn::zero(m);
    lower.constant = b.clone();
    upper.constant = b.clone();
    match prev {
        None => {
            lower.coeffs = row.to_vec();
            upper.coeffs = row.to_vec();
        }
        Some(p) => {
            for (j, w) in row.iter().enumerate() {
                if w.is_positive() {
                    lower.add_scaled(p.lower(j), w);
                    upper.add_scaled(p.upper(j), w);
                } else if w.is_negative() {
                    lower.add_scaled(p.upper(j), w);
                    upper.add_scaled(p.lower(j), w);
                }
            }
        }
    }
    NeuronBounds { lower, upper }
}

fn relu_neuron(l: LinFn, u: LinFn, bx: &[(Rat, Rat)]) -> ReluNeuron {
    let lo = l.min_over(bx);
    let hi = u.max_over(bx);
    let m = bx.len();
    let (lower, upper) = if !lo.is_negative() {
        (l, u)
    } else if !hi.is_positive() {
        (LinFn::zero(m), LinFn::zero(m))
    } else {
        let s = relu_slope(&lo, &hi);
        let mut upper = u.scale(&s);
        upper.constant -= &s * &lo;
        (l.scale(&s), upper)
    };
    ReluNeuron { lo, hi, lower, upper }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};

    fn bx(v: &[(i64, i64)]) -> Vec<(Rat, Rat)> {
        v.iter().map(|&(a, b)| (int(a), int(b))).collect()
    }

    #[test]
    fn affine_range_is_exact() {
        let layers = vec![ExactLayer::Affine {
            weights: vec![vec![int(1), int(-1)]],
            bias: vec![int(0)],
        }];
        let b = bx(&[(0, 1), (0, 1)]);
        let lb = propagate(&layers, &b).unwrap();
        assert_eq!(lb[0].lower(0).min_over(&b), int(-1));
        assert_eq!(lb[0].upper(0).max_over(&b), int(1));
    }

    #[test]
    fn crossing_relu_relaxation() {
        let layers = vec![
            ExactLayer::Affine {
                weights: vec![vec![int(1)]],
                bias: vec![int(0)],
            },
            ExactLayer::Relu,
        ];
        let b = bx(&[(-1, 1)]);
        let lb = propagate(&layers, &b).unwrap();
        let LayerBounds::Relu { neurons } = &lb[1] else { panic!() };
        let n = &neurons[0];
        assert_eq!((n.lo.clone(), n.hi.clone()), (int(-1), int(1)));
        // upper (x+1)/2, lower x/2
        assert_eq!(n.upper.coeffs, vec![ratio(1, 2)]);
        assert_eq!(n.upper.constant, ratio(1, 2));
        assert_eq!(n.lower.coeffs, vec![ratio(1, 2)]);
        assert_eq!(n.lower.constant, int(0));
        assert_eq!(n.upper.max_over(&b), int(1));
    }
}
