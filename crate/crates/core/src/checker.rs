//! Independent replay of certificates and counterexamples.
//!
//! Nothing here calls into the verifier's bound propagation: the checker
//! has its own box extremum, composition and relaxation code, written for
//! clarity rather than speed. It never searches. A certificate is accepted
//! only if
//!
//! 1. it is for this query (name, network, root box, target branches);
//! 2. the leaf boxes of every branch tree are exactly the boxes obtained by
//!    following the splits from the root box, hence a partition of it;
//! 3. every stored bound is exactly the one derived from the previous
//!    layer's stored bounds (first layer: the affine map itself; ReLU: the
//!    chord `u(z−l)/(u−l)` above and `αz`, `α = u/(u−l)`, below, where
//!    `[l, u]` must be the box extrema of the stored pre-activation bounds);
//! 4. the refuted atom's linear upper bound has box maximum equal to the
//!    stored value, and that value is negative (non-positive for a strict
//!    atom).

use crate::model::{Layer, Network};
use crate::query::{LinExpr, Query, Var};
use crate::rational::Rat;
use crate::verifier::{CertAtom, Certificate, LayerBounds, LinFn, ProofNode, Refutation};
use num_traits::{One, Signed, Zero};
use std::fmt;

const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Check {
    Accept,
    Reject(Rejection),
}

impl Check {
    pub fn is_accept(&self) -> bool {
        matches!(self, Check::Accept)
    }
}

/// The first failing obligation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Rejection {
    pub obligation: &'static str,
    pub branch: Option<usize>,
    pub leaf: Option<usize>,
    pub layer: Option<usize>,
    pub neuron: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.obligation)?;
        for (name, v) in [
            ("branch", self.branch),
            ("leaf", self.leaf),
            ("layer", self.layer),
            ("neuron", self.neuron),
        ] {
            if let Some(v) = v {
                write!(f, " {name} {v}")?;
            }
        }
        if !self.detail.is_empty() {
            write!(f, ": {}", self.detail)?;
        }
        Ok(())
    }
}

fn reject(obligation: &'static str, detail: impl Into<String>) -> Rejection {
    Rejection {
        obligation,
        detail: detail.into(),
        ..Rejection::default()
    }
}

type Box_ = [(Rat, Rat)];

fn box_min(f: &LinFn, bx: &Box_) -> Rat {
    let mut acc = f.constant.clone();
    for (c, (lo, hi)) in f.coeffs.iter().zip(bx) {
        acc += c * if c.is_negative() { hi } else { lo };
    }
    acc
}

fn box_max(f: &LinFn, bx: &Box_) -> Rat {
    let mut acc = f.constant.clone();
    for (c, (lo, hi)) in f.coeffs.iter().zip(bx) {
        acc += c * if c.is_negative() { lo } else { hi };
    }
    acc
}

fn lin(coeffs: Vec<Rat>, constant: Rat) -> LinFn {
    LinFn { coeffs, constant }
}

fn zero_fn(m: usize) -> LinFn {
    lin(vec![Rat::zero(); m], Rat::zero())
}

/// `a + k·b`
fn axpy(a: &LinFn, k: &Rat, b: &LinFn) -> LinFn {
    lin(
        a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x + k * y).collect(),
        &a.constant + k * &b.constant,
    )
}

fn times(k: &Rat, f: &LinFn) -> LinFn {
    lin(f.coeffs.iter().map(|c| k * c).collect(), k * &f.constant)
}

fn dense(e: &LinExpr, strict: bool, m: usize, n: usize) -> Option<CertAtom> {
    let mut input = vec![Rat::zero(); m];
    let mut output = vec![Rat::zero(); n];
    for (v, c) in &e.terms {
        match *v {
            Var::Input(i) if i < m => input[i] = c.clone(),
            Var::Output(k) if k < n => output[k] = c.clone(),
            _ => return None,
        }
    }
    Some(CertAtom {
        input,
        output,
        constant: e.constant.clone(),
        strict,
    })
}

/// Network layer as exact rationals.
enum L {
    Affine(Vec<Vec<Rat>>, Vec<Rat>),
    Relu,
}

fn exact_layers(net: &Network) -> Result<Vec<L>, Rejection> {
    let conv = |v: f64| crate::rational::from_f64(v).ok_or_else(|| reject("network", "non-finite weight"));
    net.layers()
        .iter()
        .map(|l| match l {
            Layer::Affine(a) => Ok(L::Affine(
                a.weights
                    .iter()
                    .map(|row| row.iter().map(|&w| conv(w)).collect())
                    .collect::<Result<_, _>>()?,
                a.bias.iter().map(|&b| conv(b)).collect::<Result<_, _>>()?,
            )),
            Layer::Relu => Ok(L::Relu),
            Layer::Softmax => Err(reject("network", "softmax layer is not piecewise linear")),
        })
        .collect()
}

fn output_width(layers: &[L], m: usize) -> usize {
    layers.iter().fold(m, |w, l| match l {
        L::Affine(_, b) => b.len(),
        L::Relu => w,
    })
}

pub fn check_certificate(net: &Network, q: &Query, cert: &Certificate) -> Check {
    match check_inner(net, q, cert) {
        Ok(()) => Check::Accept,
        Err(r) => Check::Reject(r),
    }
}

fn check_inner(net: &Network, q: &Query, cert: &Certificate) -> Result<(), Rejection> {
    if cert.schema_version != SCHEMA_VERSION {
        return Err(reject("schema", format!("unsupported schema_version {}", cert.schema_version)));
    }
    if cert.query != q.name || cert.network != q.network {
        return Err(reject(
            "query",
            format!("certificate is for {}/{}, not {}/{}", cert.query, cert.network, q.name, q.network),
        ));
    }
    if cert.input_box != q.input_box {
        return Err(reject("partition", "root box differs from the query's input box"));
    }
    let layers = exact_layers(net)?;
    let m = q.input_dim();
    if net.input_dim() != m {
        return Err(reject("network", "input dimension differs from the query"));
    }
    let n = output_width(&layers, m);
    let branches = q
        .counterexample_branches()
        .ok_or_else(|| reject("target", "too many disjunctive branches"))?;
    if branches.len() != cert.branches.len() {
        return Err(reject(
            "target",
            format!("{} branches in the target, {} in the certificate", branches.len(), cert.branches.len()),
        ));
    }
    let inputs: Vec<LinFn> = q
        .input_linear
        .iter()
        .map(|c| dense(&c.to_ge(), false, m, 0).map(|a| lin(a.input, a.constant)))
        .collect::<Option<_>>()
        .ok_or_else(|| reject("query", "input constraint mentions outputs"))?;
    for (bi, (want, proof)) in branches.iter().zip(&cert.branches).enumerate() {
        let at = |mut r: Rejection| {
            r.branch = Some(bi);
            r
        };
        let want: Vec<CertAtom> = want
            .iter()
            .map(|c| dense(&c.expr, c.strict, m, n))
            .collect::<Option<_>>()
            .ok_or_else(|| at(reject("target", "atom mentions a variable outside the network")))?;
        if want != proof.atoms {
            return Err(at(reject("target", "branch atoms differ from the query's target")));
        }
        let mut leaf = 0;
        let cx = Leafcx {
            layers: &layers,
            atoms: &proof.atoms,
            inputs: &inputs,
            m,
        };
        walk(&cx, &proof.tree, q.input_box.clone(), &mut leaf).map_err(at)?;
    }
    Ok(())
}

struct Leafcx<'a> {
    layers: &'a [L],
    atoms: &'a [CertAtom],
    inputs: &'a [LinFn],
    m: usize,
}

fn walk(cx: &Leafcx<'_>, node: &ProofNode, bx: Vec<(Rat, Rat)>, leaf: &mut usize) -> Result<(), Rejection> {
    match node {
        ProofNode::Split { dim, value, left, right } => {
            let (lo, hi) = bx
                .get(*dim)
                .ok_or_else(|| reject("partition", format!("split dimension {dim} out of range")))?;
            if value < lo || value > hi {
                return Err(reject("partition", format!("split value outside [{lo}, {hi}]")));
            }
            let mut lb = bx.clone();
            lb[*dim].1 = value.clone();
            let mut rb = bx;
            rb[*dim].0 = value.clone();
            walk(cx, left, lb, leaf)?;
            walk(cx, right, rb, leaf)
        }
        ProofNode::Leaf { bx: stored, bounds, refutation } => {
            let id = *leaf;
            *leaf += 1;
            let at = |mut r: Rejection| {
                r.leaf = Some(id);
                r
            };
            if *stored != bx {
                return Err(at(reject("partition", "leaf box differs from the box implied by its splits")));
            }
            check_leaf(cx, &bx, bounds, refutation).map_err(at)
        }
    }
}

fn check_leaf(cx: &Leafcx<'_>, bx: &Box_, bounds: &[LayerBounds], refutation: &Refutation) -> Result<(), Rejection> {
    let m = cx.m;
    if bounds.len() != cx.layers.len() {
        return Err(reject("bounds", "one bound layer per network layer expected"));
    }
    // (lower, upper) of the previous layer's outputs; the inputs themselves
    // before the first layer.
    let mut prev: Vec<(LinFn, LinFn)> = (0..m)
        .map(|i| {
            let mut e = zero_fn(m);
            e.coeffs[i] = Rat::one();
            (e.clone(), e)
        })
        .collect();
    for (k, (layer, stored)) in cx.layers.iter().zip(bounds).enumerate() {
        let at = |i: Option<usize>, r: Rejection| Rejection {
            layer: Some(k),
            neuron: i,
            ..r
        };
        let shape_ok = |f: &LinFn| f.coeffs.len() == m;
        let mut next = Vec::new();
        match (layer, stored) {
            (L::Affine(w, b), LayerBounds::Affine { neurons }) => {
                if neurons.len() != b.len() {
                    return Err(at(None, reject("bounds", "neuron count differs from the layer width")));
                }
                for (i, ((row, bi), nb)) in w.iter().zip(b).zip(neurons).enumerate() {
                    if !shape_ok(&nb.lower) || !shape_ok(&nb.upper) || row.len() != prev.len() {
                        return Err(at(Some(i), reject("bounds", "dimension mismatch")));
                    }
                    let (lo, up) = if k == 0 {
                        (lin(row.clone(), bi.clone()), lin(row.clone(), bi.clone()))
                    } else {
                        compose(row, bi, &prev, m)
                    };
                    let what = if k == 0 { "first layer equals the affine map" } else { "affine bound" };
                    if nb.lower != lo {
                        return Err(at(Some(i), reject(what, "lower bound differs from its derivation")));
                    }
                    if nb.upper != up {
                        return Err(at(Some(i), reject(what, "upper bound differs from its derivation")));
                    }
                    next.push((lo, up));
                }
            }
            (L::Relu, LayerBounds::Relu { neurons }) => {
                if neurons.len() != prev.len() {
                    return Err(at(None, reject("bounds", "neuron count differs from the layer width")));
                }
                for (i, ((zl, zu), nb)) in prev.iter().zip(neurons).enumerate() {
                    if !shape_ok(&nb.lower) || !shape_ok(&nb.upper) {
                        return Err(at(Some(i), reject("bounds", "dimension mismatch")));
                    }
                    let l = box_min(zl, bx);
                    let u = box_max(zu, bx);
                    if nb.lo != l || nb.hi != u {
                        return Err(at(
                            Some(i),
                            reject("relu range", "stored pre-activation range is not the box extremum of its bounds"),
                        ));
                    }
                    let (lo, up) = if !l.is_negative() {
                        (zl.clone(), zu.clone())
                    } else if !u.is_positive() {
                        (zero_fn(m), zero_fn(m))
                    } else {
                        let slope = &u / (&u - &l);
                        let up = times(&slope, zu);
                        let up = lin(up.coeffs, up.constant - &slope * &l);
                        (times(&slope, zl), up)
                    };
                    if nb.lower != lo {
                        return Err(at(Some(i), reject("relu relaxation", "lower bound differs from its derivation")));
                    }
                    if nb.upper != up {
                        return Err(at(Some(i), reject("relu relaxation", "upper bound differs from its derivation")));
                    }
                    next.push((lo, up));
                }
            }
            _ => return Err(at(None, reject("bounds", "bound layer kind differs from the network layer"))),
        }
        prev = next;
    }

    match refutation {
        Refutation::Input { constraint, bound } => {
            let g = cx
                .inputs
                .get(*constraint)
                .ok_or_else(|| reject("refutation", "input constraint index out of range"))?;
            discharge(&box_max(g, bx), bound, false)
        }
        Refutation::Target { atom, bound } => {
            let a = cx
                .atoms
                .get(*atom)
                .ok_or_else(|| reject("refutation", "atom index out of range"))?;
            if a.input.len() != m || a.output.len() != prev.len() {
                return Err(reject("refutation", "atom dimension mismatch"));
            }
            // g = c_x·x + c_y·y + d with y bounded by the last layer.
            let mut g = lin(a.input.clone(), a.constant.clone());
            for (c, (yl, yu)) in a.output.iter().zip(&prev) {
                g = axpy(&g, c, if c.is_negative() { yl } else { yu });
            }
            discharge(&box_max(&g, bx), bound, a.strict)
        }
    }
}

/// `max g < 0` refutes `g ≥ 0`; `max g ≤ 0` refutes `g > 0`.
fn discharge(max: &Rat, stored: &Rat, strict: bool) -> Result<(), Rejection> {
    if max != stored {
        return Err(reject("refutation", format!("stored bound {stored} but the box maximum is {max}")));
    }
    let refuted = if strict { !max.is_positive() } else { max.is_negative() };
    if !refuted {
        return Err(reject("refutation", format!("box maximum {max} does not refute the atom")));
    }
    Ok(())
}

/// Bounds of `row·h + b` from bounds on `h`, picking by weight sign.
fn compose(row: &[Rat], b: &Rat, prev: &[(LinFn, LinFn)], m: usize) -> (LinFn, LinFn) {
    let mut lo = lin(vec![Rat::zero(); m], b.clone());
    let mut up = lo.clone();
    for (w, (pl, pu)) in row.iter().zip(prev) {
        if w.is_positive() {
            lo = axpy(&lo, w, pl);
            up = axpy(&up, w, pu);
        } else if w.is_negative() {
            lo = axpy(&lo, w, pu);
            up = axpy(&up, w, pl);
        }
    }
    (lo, up)
}

/// Accepts iff `x` satisfies `P` and `f(x)` satisfies the target, exactly.
pub fn check_witness(net: &Network, q: &Query, x: &[Rat]) -> Check {
    let fail = |obligation, detail: String| Check::Reject(reject(obligation, detail));
    if x.len() != q.input_dim() {
        return fail("P", format!("witness has {} components, query has {}", x.len(), q.input_dim()));
    }
    for (i, (v, (lo, hi))) in x.iter().zip(&q.input_box).enumerate() {
        if v < lo || v > hi {
            return fail("P", format!("x[{i}] = {v} lies outside [{lo}, {hi}]"));
        }
    }
    for (j, c) in q.input_linear.iter().enumerate() {
        if !c.holds(x, &[]) {
            return fail("P", format!("input constraint {j} fails"));
        }
    }
    let y = match net.eval_exact(x) {
        Ok(y) => y,
        Err(e) => return fail("network", e.to_string()),
    };
    if q.is_counterexample(x, &y) {
        return Check::Accept;
    }
    let detail = match q.counterexample_branches() {
        Some(bs) if bs.len() == 1 => {
            let j = bs[0].iter().position(|c| !c.holds(x, &y)).unwrap_or(0);
            format!("conjunct {j} of the counterexample condition fails")
        }
        _ => "no branch of the counterexample condition holds".to_string(),
    };
    fail("not Q", detail)
}
