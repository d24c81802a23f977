//! Random loss trees and the finite-difference oracle.

use nnspec::loss::{loss_and_grad, Affine as Aff, Cmp, LossApp, LossInstance, LossNode, LossTerm, Reduction};
use nnspec::model::{Layer, Network};
use nnspec::par::Exec;
use rand::Rng;

pub const OPS: [Cmp; 6] = [Cmp::Le, Cmp::Lt, Cmp::Ge, Cmp::Gt, Cmp::Eq, Cmp::Ne];

/// Random tree over `n` outputs with dyadic coefficients, so that every leaf
/// argument is computed exactly and boundary cases actually occur.
pub fn random_tree(r: &mut impl Rng, n: usize, depth: u32) -> LossNode {
    let pick = if depth == 0 { 0 } else { r.gen_range(0..4) };
    match pick {
        0 | 1 => {
            let k = r.gen_range(1..=n.min(2));
            let outputs = (0..k).map(|_| (r.gen_range(0..n), r.gen_range(-2i32..=2) as f64)).collect();
            LossNode::Cmp {
                op: OPS[r.gen_range(0..6)],
                expr: Aff {
                    vars: Vec::new(),
                    outputs,
                    constant: r.gen_range(-4i32..=4) as f64 / 4.0,
                },
            }
        }
        2 => LossNode::And {
            args: (0..r.gen_range(1..=3)).map(|_| random_tree(r, n, depth - 1)).collect(),
        },
        _ => LossNode::Or {
            args: (0..r.gen_range(1..=3)).map(|_| random_tree(r, n, depth - 1)).collect(),
        },
    }
}

/// Truth with margin `gamma` for strict comparisons, written from the
/// comparison semantics rather than the loss rules.
pub fn satisfied(n: &LossNode, y: &[f64], gamma: f64) -> bool {
    match n {
        LossNode::Const { value } => *value,
        LossNode::Cmp { op, expr } => {
            let e = expr.eval(&[], y);
            match op {
                Cmp::Le => e <= 0.0,
                Cmp::Lt => e <= -gamma,
                Cmp::Ge => e >= 0.0,
                Cmp::Gt => e >= gamma,
                Cmp::Eq => e == 0.0,
                Cmp::Ne => e <= -gamma || e >= gamma,
            }
        }
        LossNode::And { args } => args.iter().all(|a| satisfied(a, y, gamma)),
        LossNode::Or { args } => args.iter().any(|a| satisfied(a, y, gamma)),
    }
}

/// Network with f64 weights drawn uniformly from [-1, 1].
pub fn smooth_net(r: &mut impl Rng, widths: &[usize]) -> Network {
    let mut layers = Vec::new();
    for w in widths.windows(2) {
        let weights = (0..w[1]).map(|_| (0..w[0]).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let bias = (0..w[1]).map(|_| r.gen_range(-0.5..0.5)).collect();
        layers.push(Layer::Affine(nnspec::model::Affine::new(weights, bias)));
        layers.push(Layer::Relu);
    }
    layers.pop();
    Network::new(widths[0], layers).unwrap()
}

/// Smooth random tree: no `=`, no `≠`, real coefficients.
pub fn smooth_tree(r: &mut impl Rng, n: usize, depth: u32) -> LossNode {
    if depth == 0 || r.gen_bool(0.4) {
        let outputs = (0..n).map(|k| (k, r.gen_range(-1.0..1.0))).collect();
        let op = [Cmp::Le, Cmp::Lt, Cmp::Ge, Cmp::Gt][r.gen_range(0..4)];
        return LossNode::Cmp {
            op,
            expr: Aff {
                vars: Vec::new(),
                outputs,
                constant: r.gen_range(-1.0..1.0),
            },
        };
    }
    let args = (0..r.gen_range(2..=3)).map(|_| smooth_tree(r, n, depth - 1)).collect();
    if r.gen_bool(0.5) {
        LossNode::And { args }
    } else {
        LossNode::Or { args }
    }
}

/// A term that feeds the sample straight into the network.
pub fn direct_term(body: LossNode, samples: Vec<Vec<f64>>, in_dim: usize, out_dim: usize, reduction: Reduction) -> LossTerm {
    LossTerm {
        schema_version: nnspec::loss::LOSS_SCHEMA_VERSION,
        property: "p".into(),
        network: "f".into(),
        gamma: 0.01,
        reduction,
        instances: vec![LossInstance {
            name: "p".into(),
            vars: (0..in_dim).map(|i| format!("x[{i}]")).collect(),
            domain: vec![(-1.0, 1.0); in_dim],
            guard: Vec::new(),
            apps: vec![LossApp {
                args: (0..in_dim)
                    .map(|i| Aff {
                        vars: vec![(i, 1.0)],
                        outputs: Vec::new(),
                        constant: 0.0,
                    })
                    .collect(),
                output_base: 0,
                output_dim: out_dim,
            }],
            body,
            samples,
        }],
    }
}

fn margins(n: &LossNode, y: &[f64], gamma: f64, out: &mut Vec<f64>) {
    match n {
        LossNode::Cmp { op, expr } => {
            let e = expr.eval(&[], y);
            out.push(match op {
                Cmp::Lt => e + gamma,
                Cmp::Gt => e - gamma,
                _ => e,
            });
        }
        LossNode::And { args } | LossNode::Or { args } => args.iter().for_each(|a| margins(a, y, gamma, out)),
        LossNode::Const { .. } => {}
    }
}

/// Distance from the nearest kink (ReLU pre-activation or leaf hinge) over
/// all samples.
pub fn kink_distance(t: &LossTerm, net: &Network) -> f64 {
    let mut d = f64::INFINITY;
    for inst in &t.instances {
        for s in &inst.samples {
            let mut cur = s.clone();
            for layer in net.layers() {
                match layer {
                    Layer::Affine(a) => {
                        cur = a
                            .weights
                            .iter()
                            .zip(&a.bias)
                            .map(|(row, b)| row.iter().zip(&cur).map(|(w, x)| w * x).sum::<f64>() + b)
                            .collect();
                    }
                    Layer::Relu => {
                        for v in &mut cur {
                            d = d.min(v.abs());
                            *v = v.max(0.0);
                        }
                    }
                    Layer::Softmax => unreachable!(),
                }
            }
            let mut ms = Vec::new();
            margins(&inst.body, &cur, t.gamma, &mut ms);
            for m in ms {
                d = d.min(m.abs());
            }
        }
    }
    d
}

/// Worst relative error of the analytic gradient against central finite
/// differences with step `h`. Coordinates where both are below `floor` in
/// magnitude count as agreeing.
pub fn worst_fd_error(t: &LossTerm, net: &Network, h: f64, floor: f64) -> f64 {
    let g = loss_and_grad(t, net, Exec::Sequential);
    let mut worst: f64 = 0.0;
    let n_aff = net.affine_layers().count();
    for li in 0..n_aff {
        let a = net.affine_layers().nth(li).unwrap();
        let (rows, cols) = (a.out_dim(), a.in_dim());
        for i in 0..rows {
            for j in 0..=cols {
                let eval = |delta: f64| {
                    let mut n2 = net.clone();
                    let a2 = n2.affine_layers_mut().nth(li).unwrap();
                    if j == cols {
                        a2.bias[i] += delta;
                    } else {
                        a2.weights[i][j] += delta;
                    }
                    t.loss(&n2)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = if j == cols { g.grads[li].bias[i] } else { g.grads[li].weights[i][j] };
                let scale = an.abs().max(fd.abs());
                if scale < floor {
                    continue;
                }
                worst = worst.max((an - fd).abs() / scale);
            }
        }
    }
    worst
}
