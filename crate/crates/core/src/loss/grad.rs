//! Reverse-mode gradients of a loss term with respect to the weights.

use super::{Cmp, LossNode, LossTerm, Reduction};
use crate::model::{softmax_f64, Layer, Network};
use crate::par::{self, Exec};

#[derive(Clone, Debug, PartialEq)]
pub struct AffineGrad {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// One entry per affine layer, in order.
    pub grads: Vec<AffineGrad>,
}

fn zero_grads(net: &Network) -> Vec<AffineGrad> {
    net.affine_layers()
        .map(|a| AffineGrad {
            weights: vec![vec![0.0; a.in_dim()]; a.out_dim()],
            bias: vec![0.0; a.out_dim()],
        })
        .collect()
}

/// Outputs of every layer, starting with the input itself.
fn forward(net: &Network, x: Vec<f64>) -> Vec<Vec<f64>> {
    let mut acts = vec![x];
    for layer in net.layers() {
        let cur = acts.last().unwrap();
        let next = match layer {
            Layer::Affine(a) => a
                .weights
                .iter()
                .zip(&a.bias)
                .map(|(row, &b)| row.iter().zip(cur).fold(0.0, |acc, (w, v)| acc + w * v) + b)
                .collect(),
            Layer::Relu => cur.iter().map(|v| v.max(0.0)).collect(),
            Layer::Softmax => softmax_f64(cur),
        };
        acts.push(next);
    }
    acts
}

fn backward(net: &Network, acts: &[Vec<f64>], mut delta: Vec<f64>, grads: &mut [AffineGrad]) {
    let mut ai = grads.len();
    for (li, layer) in net.layers().iter().enumerate().rev() {
        let input = &acts[li];
        delta = match layer {
            Layer::Affine(a) => {
                ai -= 1;
                let g = &mut grads[ai];
                for (i, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    g.bias[i] += d;
                    for (gw, x) in g.weights[i].iter_mut().zip(input) {
                        *gw += d * x;
                    }
                }
                (0..a.in_dim())
                    .map(|j| a.weights.iter().zip(&delta).map(|(row, d)| row[j] * d).sum())
                    .collect()
            }
            // Subgradient 0 at the kink.
            Layer::Relu => delta
                .iter()
                .zip(input)
                .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
                .collect(),
            Layer::Softmax => {
                let s = &acts[li + 1];
                let dot: f64 = s.iter().zip(&delta).map(|(a, b)| a * b).sum();
                s.iter().zip(&delta).map(|(si, di)| si * (di - dot)).collect()
            }
        };
    }
}

/// `d leaf / d e`, zero at kinks.
fn leaf_slope(op: Cmp, e: f64, gamma: f64) -> f64 {
    let step = |v: f64| if v > 0.0 { 1.0 } else { 0.0 };
    match op {
        Cmp::Le => step(e),
        Cmp::Lt => step(e + gamma),
        Cmp::Ge => -step(-e),
        Cmp::Gt => -step(gamma - e),
        Cmp::Eq => {
            if e > 0.0 {
                1.0
            } else if e < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Cmp::Ne => {
            let (a, b) = ((e + gamma).max(0.0), (gamma - e).max(0.0));
            step(e + gamma) * b - a * step(gamma - e)
        }
    }
}

/// Adds `scale · ∂node/∂y` into `dy`.
fn node_grad(n: &LossNode, v: &[f64], y: &[f64], gamma: f64, scale: f64, dy: &mut [f64]) {
    if scale == 0.0 {
        return;
    }
    match n {
        LossNode::Const { .. } => {}
        LossNode::Cmp { op, expr } => {
            let s = scale * leaf_slope(*op, expr.eval(v, y), gamma);
            if s != 0.0 {
                for (k, c) in &expr.outputs {
                    dy[*k] += s * c;
                }
            }
        }
        LossNode::And { args } => {
            for a in args {
                node_grad(a, v, y, gamma, scale, dy);
            }
        }
        LossNode::Or { args } => {
            let vals: Vec<f64> = args.iter().map(|a| a.value(v, y, gamma)).collect();
            for (i, a) in args.iter().enumerate() {
                let others: f64 = vals
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, x)| x)
                    .product();
                node_grad(a, v, y, gamma, scale * others, dy);
            }
        }
    }
}

struct Group<'a> {
    inst: usize,
    sample: &'a [f64],
}

/// Outputs and per-application activations of one group.
fn run_group(t: &LossTerm, net: &Network, g: &Group<'_>) -> (Vec<f64>, Vec<Vec<Vec<f64>>>) {
    let inst = &t.instances[g.inst];
    let mut y = vec![0.0; inst.output_dim()];
    let mut all = Vec::with_capacity(inst.apps.len());
    for app in &inst.apps {
        let x: Vec<f64> = app.args.iter().map(|a| a.eval(g.sample, &[])).collect();
        let acts = forward(net, x);
        for (k, v) in acts.last().unwrap().iter().enumerate().take(app.output_dim) {
            y[app.output_base + k] = *v;
        }
        all.push(acts);
    }
    (y, all)
}

/// Loss value and its gradient. Groups may be evaluated in parallel; the
/// reduction always runs in group order.
pub fn loss_and_grad(t: &LossTerm, net: &Network, exec: Exec) -> LossGrad {
    let groups: Vec<Group<'_>> = t
        .instances
        .iter()
        .enumerate()
        .flat_map(|(i, inst)| inst.samples.iter().map(move |s| Group { inst: i, sample: s }))
        .collect();
    if groups.is_empty() {
        return LossGrad {
            loss: 0.0,
            grads: zero_grads(net),
        };
    }
    let values: Vec<f64> = par::map(exec, &groups, |g| {
        let (y, _) = run_group(t, net, g);
        t.instances[g.inst].body.value(g.sample, &y, t.gamma)
    });
    let (loss, weights): (f64, Vec<f64>) = match t.reduction {
        Reduction::Mean => {
            let w = 1.0 / groups.len() as f64;
            (values.iter().sum::<f64>() * w, vec![w; groups.len()])
        }
        Reduction::Sum => (values.iter().sum(), vec![1.0; groups.len()]),
        Reduction::Max => {
            let (best, top) = values
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
            let mut w = vec![0.0; groups.len()];
            w[best] = 1.0;
            (top, w)
        }
    };
    let indexed: Vec<(usize, &Group<'_>)> = groups.iter().enumerate().collect();
    let partial: Vec<Option<Vec<AffineGrad>>> = par::map(exec, &indexed, |(gi, g)| {
        let w = weights[*gi];
        if w == 0.0 || values[*gi] == 0.0 {
            return None;
        }
        let inst = &t.instances[g.inst];
        let (y, acts) = run_group(t, net, g);
        let mut dy = vec![0.0; y.len()];
        node_grad(&inst.body, g.sample, &y, t.gamma, w, &mut dy);
        let mut grads = zero_grads(net);
        for (app, a) in inst.apps.iter().zip(&acts) {
            let delta = dy[app.output_base..app.output_base + app.output_dim].to_vec();
            if delta.iter().any(|d| *d != 0.0) {
                backward(net, a, delta, &mut grads);
            }
        }
        Some(grads)
    });
    let mut grads = zero_grads(net);
    for p in partial.into_iter().flatten() {
        for (acc, g) in grads.iter_mut().zip(p) {
            for (ar, gr) in acc.weights.iter_mut().zip(g.weights) {
                for (a, b) in ar.iter_mut().zip(gr) {
                    *a += b;
                }
            }
            for (a, b) in acc.bias.iter_mut().zip(g.bias) {
                *a += b;
            }
        }
    }
    LossGrad { loss, grads }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::leaf_value;

    #[test]
    fn leaf_values_match_the_rules() {
        assert_eq!(leaf_value(Cmp::Le, 2.0, 0.01), 2.0);
        assert_eq!(leaf_value(Cmp::Ge, 2.0, 0.01), 0.0);
        assert_eq!(leaf_value(Cmp::Lt, -0.01, 0.01), 0.0);
        assert_eq!(leaf_value(Cmp::Eq, -3.0, 0.01), 3.0);
        assert_eq!(leaf_value(Cmp::Ne, 0.0, 0.5), 0.25);
    }

    #[test]
    fn slopes_are_derivatives_away_from_kinks() {
        for op in [Cmp::Le, Cmp::Lt, Cmp::Ge, Cmp::Gt, Cmp::Eq, Cmp::Ne] {
            for e in [-0.7, -0.004, 0.003, 0.9] {
                let h = 1e-6;
                let fd = (leaf_value(op, e + h, 0.01) - leaf_value(op, e - h, 0.01)) / (2.0 * h);
                assert!((fd - leaf_slope(op, e, 0.01)).abs() < 1e-6, "{op:?} at {e}");
            }
        }
    }
}
