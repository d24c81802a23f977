//! Differentiable-logic losses for property-guided training.
//!
//! A ground instance `∀v ∈ D. guard(v) ⇒ body(v, f(v))` becomes one loss
//! group per sample of `v`: the first sample is the centre of `D`, the rest
//! are drawn uniformly from a seeded generator. Comparisons `e ⋈ 0` in the
//! NNF body translate as
//!
//! | atom   | loss                          |
//! |--------|-------------------------------|
//! | `e ≤ 0` | `max(e, 0)`                  |
//! | `e < 0` | `max(e + γ, 0)`              |
//! | `e ≥ 0` | `max(−e, 0)`                 |
//! | `e > 0` | `max(−e + γ, 0)`             |
//! | `e = 0` | `|e|`                        |
//! | `e ≠ 0` | `max(e + γ, 0)·max(−e + γ, 0)` |
//!
//! with `∧` as a sum and `∨` as a product, so the loss is zero exactly when
//! the body holds (strict comparisons with margin `γ`).

mod grad;

pub use grad::{loss_and_grad, AffineGrad, LossGrad};

use crate::binding::Bindings;
use crate::frontend::{CmpOp, TypedModule};
use crate::lowering::{self, ir::Prop, LowerError};
use crate::model::{FormatError, Network};
use crate::par::Exec;
use crate::query::{LinExpr, Var};
use crate::rational::to_f64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOSS_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_GAMMA: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error("instance {instance} quantifies over a continuous domain but sampling is disabled (k = 0)")]
    SamplingDisabled { instance: String },
    #[error("property `{property}` applies several networks ({names}); a loss trains one")]
    MultipleNetworks { property: String, names: String },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite ({value}) at step {step}")]
    Divergence { step: usize, value: f64 },
    #[error("{0}")]
    Network(#[from] FormatError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    /// Samples per continuous instance, centre included.
    pub samples: usize,
    pub gamma: f64,
    pub seed: u64,
    pub reduction: Reduction,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            samples: 8,
            gamma: DEFAULT_GAMMA,
            seed: 0,
            reduction: Reduction::Mean,
        }
    }
}

/// `Σ c·v + d` over problem variables (and, in comparison leaves, outputs).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vars: Vec<(usize, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    fn from_lin(e: &LinExpr) -> Self {
        let mut a = Affine {
            constant: to_f64(&e.constant),
            ..Affine::default()
        };
        for (v, c) in &e.terms {
            match v {
                Var::Input(i) => a.vars.push((*i, to_f64(c))),
                Var::Output(k) => a.outputs.push((*k, to_f64(c))),
            }
        }
        a
    }

    pub fn eval(&self, v: &[f64], y: &[f64]) -> f64 {
        let mut acc = self.constant;
        for (i, c) in &self.vars {
            acc += c * v[*i];
        }
        for (k, c) in &self.outputs {
            acc += c * y[*k];
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl From<CmpOp> for Cmp {
    fn from(op: CmpOp) -> Self {
        match op {
            CmpOp::Le => Cmp::Le,
            CmpOp::Lt => Cmp::Lt,
            CmpOp::Ge => Cmp::Ge,
            CmpOp::Gt => Cmp::Gt,
            CmpOp::Eq => Cmp::Eq,
            CmpOp::Ne => Cmp::Ne,
        }
    }
}

/// Loss tree over comparison leaves `expr ⋈ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum LossNode {
    Cmp { op: Cmp, expr: Affine },
    And { args: Vec<LossNode> },
    Or { args: Vec<LossNode> },
    Const { value: bool },
}

impl LossNode {
    /// From an NNF proposition.
    pub fn from_prop(p: &Prop) -> Self {
        match p {
            Prop::Const(b) => LossNode::Const { value: *b },
            Prop::Atom(e, op) => LossNode::Cmp {
                op: (*op).into(),
                expr: Affine::from_lin(e),
            },
            Prop::Not(inner) => LossNode::from_prop(&inner.nnf(true)),
            Prop::And(ps) => LossNode::And {
                args: ps.iter().map(LossNode::from_prop).collect(),
            },
            Prop::Or(ps) => LossNode::Or {
                args: ps.iter().map(LossNode::from_prop).collect(),
            },
        }
    }

    pub fn value(&self, v: &[f64], y: &[f64], gamma: f64) -> f64 {
        match self {
            LossNode::Const { value } => {
                if *value {
                    0.0
                } else {
                    1.0
                }
            }
            LossNode::Cmp { op, expr } => leaf_value(*op, expr.eval(v, y), gamma),
            LossNode::And { args } => args.iter().map(|a| a.value(v, y, gamma)).sum(),
            LossNode::Or { args } => args.iter().map(|a| a.value(v, y, gamma)).product(),
        }
    }

    /// Number of comparison leaves.
    pub fn leaves(&self) -> usize {
        match self {
            LossNode::Cmp { .. } => 1,
            LossNode::Const { .. } => 0,
            LossNode::And { args } | LossNode::Or { args } => args.iter().map(LossNode::leaves).sum(),
        }
    }

    /// Truth value under plain (margin-free) comparison.
    pub fn holds(&self, v: &[f64], y: &[f64]) -> bool {
        match self {
            LossNode::Const { value } => *value,
            LossNode::Cmp { op, expr } => {
                let e = expr.eval(v, y);
                match op {
                    Cmp::Le => e <= 0.0,
                    Cmp::Lt => e < 0.0,
                    Cmp::Ge => e >= 0.0,
                    Cmp::Gt => e > 0.0,
                    Cmp::Eq => e == 0.0,
                    Cmp::Ne => e != 0.0,
                }
            }
            LossNode::And { args } => args.iter().all(|a| a.holds(v, y)),
            LossNode::Or { args } => args.iter().any(|a| a.holds(v, y)),
        }
    }
}

pub(crate) fn leaf_value(op: Cmp, e: f64, gamma: f64) -> f64 {
    match op {
        Cmp::Le => e.max(0.0),
        Cmp::Lt => (e + gamma).max(0.0),
        Cmp::Ge => (-e).max(0.0),
        Cmp::Gt => (gamma - e).max(0.0),
        Cmp::Eq => e.abs(),
        Cmp::Ne => (e + gamma).max(0.0) * (gamma - e).max(0.0),
    }
}

/// One network application; its outputs occupy `Y_base ..`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossApp {
    pub args: Vec<Affine>,
    pub output_base: usize,
    pub output_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossInstance {
    pub name: String,
    pub vars: Vec<String>,
    pub domain: Vec<(f64, f64)>,
    pub guard: Vec<LossNode>,
    pub apps: Vec<LossApp>,
    pub body: LossNode,
    /// One assignment of `vars` per loss group.
    pub samples: Vec<Vec<f64>>,
}

impl LossInstance {
    pub fn output_dim(&self) -> usize {
        self.apps.iter().map(|a| a.output_base + a.output_dim).max().unwrap_or(0)
    }
}

/// A compiled loss: the computation graph exported as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub schema_version: u32,
    pub property: String,
    pub network: String,
    pub gamma: f64,
    pub reduction: Reduction,
    pub instances: Vec<LossInstance>,
}

impl LossTerm {
    pub fn groups(&self) -> usize {
        self.instances.iter().map(|i| i.samples.len()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("loss term serializes")
    }

    /// Draws fresh samples: centre first, then `k − 1` uniform points that
    /// satisfy the guard (up to 64 attempts each, else the centre again).
    pub fn resample(&mut self, k: usize, seed: u64) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        for inst in &mut self.instances {
            inst.samples = draw(inst, k, &mut r);
        }
    }

    pub fn loss(&self, net: &Network) -> f64 {
        loss_and_grad(self, net, Exec::Sequential).loss
    }
}

fn draw(inst: &LossInstance, k: usize, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    if inst.vars.is_empty() {
        return vec![Vec::new()];
    }
    let centre: Vec<f64> = inst.domain.iter().map(|(lo, hi)| lo + (hi - lo) / 2.0).collect();
    let mut out = vec![centre.clone()];
    while out.len() < k {
        let mut pick = None;
        for _ in 0..64 {
            let v: Vec<f64> = inst
                .domain
                .iter()
                .map(|&(lo, hi)| if hi > lo { r.gen_range(lo..=hi) } else { lo })
                .collect();
            if inst.guard.iter().all(|g| g.holds(&v, &[])) {
                pick = Some(v);
                break;
            }
        }
        out.push(pick.unwrap_or_else(|| centre.clone()));
    }
    out
}

pub fn compile_loss(
    m: &TypedModule,
    b: &Bindings,
    property: &str,
    opts: &LossOptions,
) -> Result<LossTerm, CompileError> {
    let mut instances = Vec::new();
    let mut network: Option<String> = None;
    for inst in lowering::instances(m, b, property)? {
        let Some(dom) = lowering::split_domain(&inst)? else { continue };
        if !inst.vars.is_empty() && opts.samples == 0 {
            return Err(CompileError::SamplingDisabled { instance: inst.name() });
        }
        for app in &inst.apps {
            match &network {
                None => network = Some(app.network.clone()),
                Some(n) if *n != app.network => {
                    return Err(CompileError::MultipleNetworks {
                        property: property.into(),
                        names: format!("{n}, {}", app.network),
                    })
                }
                _ => {}
            }
        }
        instances.push(LossInstance {
            name: inst.name(),
            vars: inst.vars.clone(),
            domain: dom.bounds.iter().map(|(lo, hi)| (to_f64(lo), to_f64(hi))).collect(),
            guard: dom.guard.iter().map(LossNode::from_prop).collect(),
            apps: inst
                .apps
                .iter()
                .map(|a| LossApp {
                    args: a.args.iter().map(Affine::from_lin).collect(),
                    output_base: a.output_base,
                    output_dim: a.output_dim,
                })
                .collect(),
            body: LossNode::from_prop(&dom.body),
            samples: Vec::new(),
        });
    }
    let mut t = LossTerm {
        schema_version: LOSS_SCHEMA_VERSION,
        property: property.into(),
        network: network.unwrap_or_default(),
        gamma: opts.gamma,
        reduction: opts.reduction,
        instances,
    };
    t.resample(opts.samples, opts.seed);
    Ok(t)
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub net: Network,
    /// Loss before every step, then the final loss: `steps + 1` entries.
    pub curve: Vec<f64>,
}

/// Plain full-batch gradient descent on the fixed samples of `t`.
pub fn train(net: &Network, t: &LossTerm, steps: usize, lr: f64, exec: Exec) -> Result<Trained, TrainError> {
    let mut net = net.clone();
    let mut curve = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let lg = loss_and_grad(t, &net, exec);
        if !lg.loss.is_finite() {
            return Err(TrainError::Divergence { step, value: lg.loss });
        }
        curve.push(lg.loss);
        if step == steps {
            break;
        }
        for (layer, g) in net.affine_layers_mut().zip(&lg.grads) {
            for (row, grow) in layer.weights.iter_mut().zip(&g.weights) {
                for (w, d) in row.iter_mut().zip(grow) {
                    *w -= lr * d;
                }
            }
            for (b, d) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * d;
            }
        }
        if net.affine_layers().any(|a| a.weights.iter().flatten().chain(&a.bias).any(|w| !w.is_finite())) {
            return Err(TrainError::Divergence { step, value: f64::NAN });
        }
    }
    Ok(Trained { net, curve })
}
