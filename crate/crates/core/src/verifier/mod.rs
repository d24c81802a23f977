//! Branch-and-bound verification of lowered queries with exact arithmetic.
//!
//! Each DNF branch of the target is searched separately. A node is closed
//! when its symbolic output bounds refute one atom of the branch (or one
//! linear input constraint) over its box; otherwise the box centre and a
//! few corners are evaluated exactly, and if none of them is a
//! counterexample the widest dimension is bisected. The search is
//! level-synchronous so the nodes of one level can be processed in
//! parallel without affecting the emitted tree.

mod bounds;
mod screen;

pub use bounds::{propagate, relu_slope, LayerBounds, LinBounds, LinFn, NeuronBounds, ReluNeuron};
pub use screen::{divergence, screen_f32, Divergence, ScreenVerdict};

use crate::model::{ExactLayer, ExactNetwork, Network};
use crate::par::{self, Exec};
use crate::query::{Cond, LinExpr, Query, Var};
use crate::rational::{int, serde_frac, Rat};
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CERTIFICATE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerifyError {
    #[error("network `{0}` is not piecewise linear (softmax cannot be verified)")]
    NotPiecewiseLinear(String),
    #[error("query has {query} inputs, network has {network}")]
    InputArity { query: usize, network: usize },
    #[error("query mentions Y_{index} but the network has {network} outputs")]
    OutputArity { index: usize, network: usize },
    #[error("target has more than {0} disjunctive branches")]
    TooManyBranches(usize),
    #[error("input box is empty in dimension {0}")]
    EmptyBox(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Budget {
    /// Total nodes processed over all branches of one query.
    pub max_nodes: usize,
    pub max_depth: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_nodes: 100_000,
            max_depth: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VerifyOptions {
    pub budget: Budget,
    pub exec: Exec,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SearchStats {
    pub nodes: usize,
    pub leaves: usize,
    pub depth: usize,
    /// Branch that exhausted the budget, if any.
    pub open_branch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Unsat(Certificate),
    Sat(Vec<Rat>),
    Unknown(SearchStats),
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Unsat(_) => "UNSAT",
            Verdict::Sat(_) => "SAT",
            Verdict::Unknown(_) => "UNKNOWN",
        }
    }
}

/// Dense `input·X + output·Y + constant ≥ 0`, or `> 0` when `strict`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertAtom {
    #[serde(with = "serde_frac::vec")]
    pub input: Vec<Rat>,
    #[serde(with = "serde_frac::vec")]
    pub output: Vec<Rat>,
    #[serde(with = "serde_frac")]
    pub constant: Rat,
    pub strict: bool,
}

impl CertAtom {
    pub fn from_cond(a: &Cond, m: usize, n: usize) -> Self {
        let mut input = vec![Rat::zero(); m];
        let mut output = vec![Rat::zero(); n];
        for (v, c) in &a.expr.terms {
            match v {
                Var::Input(i) => input[*i] = c.clone(),
                Var::Output(k) => output[*k] = c.clone(),
            }
        }
        Self {
            input,
            output,
            constant: a.expr.constant.clone(),
            strict: a.strict,
        }
    }
}

/// Why a leaf box contains no counterexample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Refutation {
    /// Atom `atom` of the branch, `g ≥ 0` (`g > 0`), has `max g < 0`
    /// (`≤ 0`) over the leaf; `bound` is that maximum of its linear upper
    /// bound.
    Target {
        atom: usize,
        #[serde(with = "serde_frac")]
        bound: Rat,
    },
    /// Linear input constraint `constraint` is violated on the whole leaf.
    Input {
        constraint: usize,
        #[serde(with = "serde_frac")]
        bound: Rat,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum ProofNode {
    /// Left child keeps `x[dim] ≤ value`, right child `x[dim] ≥ value`.
    Split {
        dim: usize,
        #[serde(with = "serde_frac")]
        value: Rat,
        left: Box<ProofNode>,
        right: Box<ProofNode>,
    },
    Leaf {
        #[serde(rename = "box", with = "serde_frac::pairs")]
        bx: Vec<(Rat, Rat)>,
        bounds: LinBounds,
        refutation: Refutation,
    },
}

impl ProofNode {
    pub fn leaves(&self) -> usize {
        match self {
            ProofNode::Split { left, right, .. } => left.leaves() + right.leaves(),
            ProofNode::Leaf { .. } => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchProof {
    pub atoms: Vec<CertAtom>,
    pub tree: ProofNode,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub schema_version: u32,
    pub query: String,
    pub network: String,
    #[serde(with = "serde_frac::pairs")]
    pub input_box: Vec<(Rat, Rat)>,
    pub branches: Vec<BranchProof>,
}

impl Certificate {
    pub fn leaves(&self) -> usize {
        self.branches.iter().map(|b| b.tree.leaves()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Symbolic bounds of `net` over `bx`.
pub fn propagate_bounds(net: &Network, bx: &[(Rat, Rat)]) -> Option<LinBounds> {
    propagate(&ExactNetwork::from_network(net).layers, bx)
}

pub fn verify(net: &Network, q: &Query, opts: &VerifyOptions) -> Result<Verdict, VerifyError> {
    let exact = ExactNetwork::from_network(net);
    verify_exact(&exact, q, opts)
}

/// Verifies many queries against one network, in parallel across queries.
pub fn verify_all(net: &Network, qs: &[Query], opts: &VerifyOptions) -> Vec<Result<Verdict, VerifyError>> {
    let exact = ExactNetwork::from_network(net);
    par::map(opts.exec, qs, |q| verify_exact(&exact, q, opts))
}

pub fn verify_exact(net: &ExactNetwork, q: &Query, opts: &VerifyOptions) -> Result<Verdict, VerifyError> {
    if net.layers.iter().any(|l| matches!(l, ExactLayer::Softmax)) {
        return Err(VerifyError::NotPiecewiseLinear(q.network.clone()));
    }
    let m = q.input_dim();
    if m != net.input_dim {
        return Err(VerifyError::InputArity {
            query: m,
            network: net.input_dim,
        });
    }
    if let Some(k) = q.input_box.iter().position(|(lo, hi)| lo > hi) {
        return Err(VerifyError::EmptyBox(k));
    }
    let n = output_dim(net);
    let branches = q
        .counterexample_branches()
        .ok_or(VerifyError::TooManyBranches(crate::query::MAX_BRANCHES))?;
    let vars = branches.iter().flatten().map(|c| &c.expr).chain(q.input_linear.iter().map(|c| &c.expr));
    for e in vars {
        for v in e.terms.keys() {
            match *v {
                Var::Output(k) if k >= n => return Err(VerifyError::OutputArity { index: k, network: n }),
                Var::Input(k) if k >= m => {
                    return Err(VerifyError::InputArity {
                        query: k + 1,
                        network: m,
                    })
                }
                _ => {}
            }
        }
    }

    let ctx = Ctx {
        net,
        q,
        m,
        n,
        inputs: q.input_linear.iter().map(|c| LinFnOver::input(&c.to_ge(), m)).collect(),
    };
    let mut stats = SearchStats::default();
    let mut proofs = Vec::with_capacity(branches.len());
    let mut open = None;
    for (bi, branch) in branches.iter().enumerate() {
        match search(&ctx, branch, opts, &mut stats) {
            BranchOutcome::Refuted(tree) => proofs.push(BranchProof {
                atoms: branch.iter().map(|a| CertAtom::from_cond(a, m, n)).collect(),
                tree,
            }),
            BranchOutcome::Witness(x) => return Ok(Verdict::Sat(x)),
            BranchOutcome::Exhausted => {
                open.get_or_insert(bi);
            }
        }
    }
    if open.is_some() {
        stats.open_branch = open;
        return Ok(Verdict::Unknown(stats));
    }
    Ok(Verdict::Unsat(Certificate {
        schema_version: CERTIFICATE_SCHEMA_VERSION,
        query: q.name.clone(),
        network: q.network.clone(),
        input_box: q.input_box.clone(),
        branches: proofs,
    }))
}

fn output_dim(net: &ExactNetwork) -> usize {
    net.layers
        .iter()
        .rev()
        .find_map(|l| match l {
            ExactLayer::Affine { bias, .. } => Some(bias.len()),
            _ => None,
        })
        .unwrap_or(net.input_dim)
}

/// A `≥ 0` constraint split into its input and output parts.
struct LinFnOver {
    input: LinFn,
    output: Vec<(usize, Rat)>,
}

impl LinFnOver {
    fn input(e: &LinExpr, m: usize) -> Self {
        let mut input = LinFn::zero(m);
        input.constant = e.constant.clone();
        let mut output = Vec::new();
        for (v, c) in &e.terms {
            match v {
                Var::Input(i) => input.coeffs[*i] = c.clone(),
                Var::Output(k) => output.push((*k, c.clone())),
            }
        }
        Self { input, output }
    }

    /// Linear upper bound of the constraint in terms of the inputs alone.
    fn upper(&self, out: &LayerBounds) -> LinFn {
        let mut f = self.input.clone();
        for (k, c) in &self.output {
            if c.is_positive() {
                f.add_scaled(out.upper(*k), c);
            } else {
                f.add_scaled(out.lower(*k), c);
            }
        }
        f
    }
}

struct Ctx<'a> {
    net: &'a ExactNetwork,
    q: &'a Query,
    m: usize,
    n: usize,
    inputs: Vec<LinFnOver>,
}

enum BranchOutcome {
    Refuted(ProofNode),
    Witness(Vec<Rat>),
    Exhausted,
}

enum NodeResult {
    Leaf(ProofNode),
    Witness(Vec<Rat>),
    Split(usize, Rat),
    TooDeep,
}

enum Slot {
    Pending,
    Done(ProofNode),
    Split(usize, Rat, usize, usize),
}

fn search(ctx: &Ctx<'_>, branch: &[Cond], opts: &VerifyOptions, stats: &mut SearchStats) -> BranchOutcome {
    let atoms: Vec<LinFnOver> = branch.iter().map(|a| LinFnOver::input(&a.expr, ctx.m)).collect();
    let mut slots = vec![Slot::Pending];
    let mut frontier: Vec<(usize, Vec<(Rat, Rat)>)> = vec![(0, ctx.q.input_box.clone())];
    let mut depth = 0;
    while !frontier.is_empty() {
        if stats.nodes + frontier.len() > opts.budget.max_nodes {
            return BranchOutcome::Exhausted;
        }
        stats.nodes += frontier.len();
        stats.depth = stats.depth.max(depth);
        let results = par::map(opts.exec, &frontier, |(_, bx)| {
            process(ctx, branch, &atoms, bx, depth >= opts.budget.max_depth)
        });
        // Leftmost counterexample of the level, so the answer does not
        // depend on scheduling.
        let mut next = Vec::new();
        for ((id, bx), r) in frontier.into_iter().zip(results) {
            match r {
                NodeResult::Witness(x) => return BranchOutcome::Witness(x),
                NodeResult::TooDeep => return BranchOutcome::Exhausted,
                NodeResult::Leaf(leaf) => {
                    stats.leaves += 1;
                    slots[id] = Slot::Done(leaf);
                }
                NodeResult::Split(dim, value) => {
                    let (l, r) = (slots.len(), slots.len() + 1);
                    slots.push(Slot::Pending);
                    slots.push(Slot::Pending);
                    let mut lb = bx.clone();
                    lb[dim].1 = value.clone();
                    let mut rb = bx;
                    rb[dim].0 = value.clone();
                    slots[id] = Slot::Split(dim, value, l, r);
                    next.push((l, lb));
                    next.push((r, rb));
                }
            }
        }
        frontier = next;
        depth += 1;
    }
    BranchOutcome::Refuted(assemble(&mut slots, 0))
}

fn assemble(slots: &mut [Slot], id: usize) -> ProofNode {
    match std::mem::replace(&mut slots[id], Slot::Pending) {
        Slot::Done(n) => n,
        Slot::Split(dim, value, l, r) => ProofNode::Split {
            dim,
            value,
            left: Box::new(assemble(slots, l)),
            right: Box::new(assemble(slots, r)),
        },
        Slot::Pending => unreachable!("every slot is resolved once the frontier is empty"),
    }
}

fn process(ctx: &Ctx<'_>, branch: &[Cond], atoms: &[LinFnOver], bx: &[(Rat, Rat)], too_deep: bool) -> NodeResult {
    let bounds = propagate(&ctx.net.layers, bx).expect("checked piecewise linear");
    let identity;
    let out = match bounds.last() {
        Some(l) => l,
        None => {
            identity = identity_bounds(ctx.m);
            &identity
        }
    };
    let refutation = ctx
        .inputs
        .iter()
        .enumerate()
        .find_map(|(i, c)| {
            let b = c.input.max_over(bx);
            b.is_negative().then_some(Refutation::Input { constraint: i, bound: b })
        })
        .or_else(|| {
            atoms.iter().zip(branch).enumerate().find_map(|(i, (a, c))| {
                let b = a.upper(out).max_over(bx);
                let refuted = if c.strict { !b.is_positive() } else { b.is_negative() };
                refuted.then_some(Refutation::Target { atom: i, bound: b })
            })
        });
    if let Some(refutation) = refutation {
        return NodeResult::Leaf(ProofNode::Leaf {
            bx: bx.to_vec(),
            bounds,
            refutation,
        });
    }
    for x in probes(bx) {
        if !ctx.q.precondition_holds(&x) {
            continue;
        }
        let y = ctx.net.eval(&x).expect("arity checked");
        if y.len() == ctx.n && branch.iter().all(|a| a.holds(&x, &y)) {
            return NodeResult::Witness(x);
        }
    }
    if too_deep {
        return NodeResult::TooDeep;
    }
    let (dim, _) = bx
        .iter()
        .enumerate()
        .map(|(i, (lo, hi))| (i, hi - lo))
        .fold((0, int(-1)), |best, (i, w)| if w > best.1 { (i, w) } else { best });
    let (lo, hi) = &bx[dim];
    if lo == hi {
        // A point box has exact bounds, so refutation or a probe succeeds;
        // this is only reachable through an inconsistent query.
        return NodeResult::TooDeep;
    }
    NodeResult::Split(dim, (lo + hi) / int(2))
}

fn identity_bounds(m: usize) -> LayerBounds {
    LayerBounds::Affine {
        neurons: (0..m)
            .map(|i| {
                let mut f = LinFn::zero(m);
                f.coeffs[i] = int(1);
                NeuronBounds { lower: f.clone(), upper: f }
            })
            .collect(),
    }
}

/// Centre first, then `min(2^m, 2m)` corners: all corners when that is not
/// more than `2m`, otherwise the corners `lo + e_i·(hi−lo)` and
/// `hi − e_i·(hi−lo)`.
pub fn probes(bx: &[(Rat, Rat)]) -> Vec<Vec<Rat>> {
    let m = bx.len();
    let mut out = vec![bx.iter().map(|(lo, hi)| (lo + hi) / int(2)).collect::<Vec<_>>()];
    let all = m < usize::BITS as usize && (1usize << m) <= 2 * m.max(1);
    if all {
        for mask in 0..(1usize << m) {
            out.push(
                bx.iter()
                    .enumerate()
                    .map(|(i, (lo, hi))| if mask >> i & 1 == 1 { hi.clone() } else { lo.clone() })
                    .collect(),
            );
        }
    } else {
        for i in 0..m {
            out.push(
                bx.iter()
                    .enumerate()
                    .map(|(j, (lo, hi))| if j == i { hi.clone() } else { lo.clone() })
                    .collect(),
            );
        }
        for i in 0..m {
            out.push(
                bx.iter()
                    .enumerate()
                    .map(|(j, (lo, hi))| if j == i { lo.clone() } else { hi.clone() })
                    .collect(),
            );
        }
    }
    out
}
