//! From a bound property to network-level queries.
//!
//! Each ground instance `∀v. Φ(v)` is negated into a counterexample search:
//! the input-only conjuncts of `¬Φ` become the precondition `P` (pushed
//! through the embedding, i.e. the affine map from problem variables to
//! network inputs), the output-only conjuncts become the target. Strict
//! comparisons in the target are closed to non-strict ones, which only
//! enlarges the search space.

pub mod eval;
pub mod ir;

use crate::binding::Bindings;
use crate::frontend::{Span, TypedModule};
use crate::model::Network;
use crate::query::{Formula, LinExpr, LinIneq, Polarity, Query, Rel, Var};
use crate::rational::{self, Rat};
use eval::{map_prop, Evaluator};
use ir::{Instance, Prop};
use num_traits::{One, Signed, Zero};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum LowerError {
    #[error("unknown property `{0}`")]
    UnknownProperty(String),
    #[error("`{0}` has no binding")]
    Unbound(String),
    #[error("{instance}: {span}: {message}")]
    Unsupported { instance: String, span: Span, message: String },
    #[error("{instance}: {span}: `{variable}` is quantified in the wrong polarity; only one universal block over inputs is supported")]
    Alternation { instance: String, span: Span, variable: String },
    #[error("{instance}: the property applies {count} different networks/arguments; a query refers to exactly one application")]
    MultipleApplications { instance: String, count: usize },
    #[error("{instance}: the property does not mention a network")]
    Ground { instance: String },
    #[error("{instance}: constraint mixes inputs and outputs: {detail}")]
    Mixed { instance: String, detail: String },
    #[error("{instance}: {detail}")]
    Embedding { instance: String, detail: String },
    #[error("{instance}: variable `{variable}` is unbounded")]
    Unbounded { instance: String, variable: String },
    #[error("{instance}: the input region is empty; the property holds vacuously")]
    EmptyRegion { instance: String },
}

/// How the `k`-th network input is obtained from the problem variables.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputMap {
    Point {
        #[serde(with = "rational::serde_frac")]
        value: Rat,
    },
    /// `X_k = scale·v + shift`
    Affine {
        var: usize,
        #[serde(with = "rational::serde_frac")]
        scale: Rat,
        #[serde(with = "rational::serde_frac")]
        shift: Rat,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Unembedding {
    /// The postcondition only compares outputs with each other; a
    /// counterexample is reported as the predicted class.
    Argmax,
    Outputs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSpec {
    pub inputs: Vec<InputMap>,
    pub var_names: Vec<String>,
    pub unembed: Unembedding,
    /// Problem-space input constraints replaced by their bounding box.
    pub relaxed: Vec<Prop>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelaxationWarning {
    pub query: String,
    pub message: String,
}

impl fmt::Display for RelaxationWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "warning: {}: {}", self.query, self.message)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoweredQuery {
    pub query: Query,
    pub instance: Instance,
    pub embedding: EmbeddingSpec,
    pub warnings: Vec<RelaxationWarning>,
}

/// How a network-space verdict on one emitted query maps back to the
/// problem-space property: one entry of `obligations.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Obligation {
    pub query: String,
    pub file: String,
    pub instance: String,
    pub network: String,
    pub variables: Vec<String>,
    /// `X_k` in terms of the problem variables.
    pub inputs: Vec<InputMap>,
    pub unembedding: Unembedding,
    /// Input constraints the query replaces by their bounding box; a SAT
    /// witness must be re-checked against them.
    pub relaxed_constraints: usize,
    pub warnings: Vec<String>,
}

impl LoweredQuery {
    pub fn obligation(&self) -> Obligation {
        Obligation {
            query: self.query.name.clone(),
            file: crate::vnnlib::VnnLibDoc::file_name(&self.query),
            instance: self.instance.name(),
            network: self.query.network.clone(),
            variables: self.embedding.var_names.clone(),
            inputs: self.embedding.inputs.clone(),
            unembedding: self.embedding.unembed,
            relaxed_constraints: self.embedding.relaxed.len(),
            warnings: self.warnings.iter().map(|w| w.message.clone()).collect(),
        }
    }
}

/// All ground instances of a property, with network applications kept
/// symbolic.
pub fn instances(m: &TypedModule, b: &Bindings, property: &str) -> Result<Vec<Instance>, LowerError> {
    Evaluator::new(m, b, false).instances(property)
}

/// Lowers every property of `m`, in declaration order.
pub fn lower(m: &TypedModule, b: &Bindings) -> Result<Vec<LoweredQuery>, LowerError> {
    let mut out = Vec::new();
    for p in m.properties() {
        out.extend(lower_property(m, b, p)?);
    }
    Ok(out)
}

pub fn lower_property(m: &TypedModule, b: &Bindings, property: &str) -> Result<Vec<LoweredQuery>, LowerError> {
    instances(m, b, property)?
        .into_iter()
        .map(|inst| to_query(inst, b))
        .collect()
}

/// Replaces applications on constant arguments by their exact outputs
/// while more than one application remains.
fn fold_constant_apps(inst: Instance, b: &Bindings) -> Result<Instance, LowerError> {
    if inst.apps.len() <= 1 {
        return Ok(inst);
    }
    let name = inst.name();
    let mut values: BTreeMap<usize, Rat> = BTreeMap::new();
    let mut keep_first_constant = inst.apps.iter().all(|a| a.args.iter().all(LinExpr::is_constant));
    for a in &inst.apps {
        if !a.args.iter().all(LinExpr::is_constant) {
            continue;
        }
        if keep_first_constant {
            keep_first_constant = false;
            continue;
        }
        let net = &b.networks[&a.network];
        let x: Vec<Rat> = a.args.iter().map(|e| e.constant.clone()).collect();
        let y = net.eval_exact(&x).map_err(|e| LowerError::Embedding {
            instance: name.clone(),
            detail: format!("cannot evaluate `{}` exactly: {e}", a.network),
        })?;
        for (k, v) in y.into_iter().enumerate() {
            values.insert(a.output_base + k, v);
        }
    }
    if values.is_empty() {
        return Ok(inst);
    }
    let prop = map_prop(&inst.prop, &|e| {
        let mut out = LinExpr::constant(e.constant.clone());
        for (v, c) in &e.terms {
            match v {
                Var::Output(k) if values.contains_key(k) => out.constant += c * &values[k],
                _ => out.add_term(*v, c.clone()),
            }
        }
        out
    });
    Ok(eval::compact(Instance { prop, ..inst }))
}

fn conjuncts(p: Prop) -> Vec<Prop> {
    match p {
        Prop::And(ps) => ps,
        Prop::Const(true) => Vec::new(),
        other => vec![other],
    }
}

fn mentions(p: &Prop) -> (bool, bool) {
    p.atoms().iter().fold((false, false), |(i, o), (e, _)| {
        (i || e.mentions_inputs(), o || e.mentions_outputs())
    })
}

/// Bounding box of a positive formula whose atoms each mention exactly one
/// variable; `None` when some atom mentions several.
fn formula_box(f: &Formula, nvars: usize) -> Option<Vec<(Option<Rat>, Option<Rat>)>> {
    let branches = f.dnf(crate::query::MAX_BRANCHES)?;
    let mut hull: Option<Vec<(Option<Rat>, Option<Rat>)>> = None;
    for branch in branches {
        let mut bx = vec![(None, None); nvars];
        for atom in &branch {
            if atom.expr.terms.len() != 1 {
                return None;
            }
            tighten(&mut bx, atom);
        }
        if bx.iter().any(|(l, h)| matches!((l, h), (Some(l), Some(h)) if l > h)) {
            continue;
        }
        hull = Some(match hull {
            None => bx,
            Some(h) => h
                .into_iter()
                .zip(bx)
                .map(|((l1, h1), (l2, h2))| {
                    let lo = match (l1, l2) {
                        (Some(a), Some(b)) => Some(if a < b { a } else { b }),
                        _ => None,
                    };
                    let hi = match (h1, h2) {
                        (Some(a), Some(b)) => Some(if a > b { a } else { b }),
                        _ => None,
                    };
                    (lo, hi)
                })
                .collect(),
        });
    }
    // No feasible branch: an empty box.
    Some(hull.unwrap_or_else(|| vec![(Some(Rat::one()), Some(Rat::zero())); nvars]))
}

fn tighten(bx: &mut [(Option<Rat>, Option<Rat>)], atom: &LinIneq) {
    let (v, k) = atom.expr.terms.iter().next().unwrap();
    let Var::Input(i) = v else { return };
    let bound = -&atom.expr.constant / k;
    let upper = (atom.rel == Rel::Le) == k.is_positive();
    let (lo, hi) = &mut bx[*i];
    if upper {
        if hi.as_ref().is_none_or(|h| bound < *h) {
            *hi = Some(bound);
        }
    } else if lo.as_ref().is_none_or(|l| bound > *l) {
        *lo = Some(bound);
    }
}

fn round_down(r: Rat) -> Rat {
    if rational::exact_decimal(&r).is_some() {
        r
    } else {
        rational::from_f64(rational::f64_floor(&r)).unwrap()
    }
}

fn round_up(r: Rat) -> Rat {
    if rational::exact_decimal(&r).is_some() {
        r
    } else {
        rational::from_f64(rational::f64_ceil(&r)).unwrap()
    }
}

/// Problem-space reading of an instance as `guard ⇒ body`: the guard is
/// the input-only part, whose bounding box is the quantified domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub bounds: Vec<(Rat, Rat)>,
    pub guard: Vec<Prop>,
    pub body: Prop,
}

/// Splits `inst` for sampling. `None` for a vacuously true instance.
pub fn split_domain(inst: &Instance) -> Result<Option<Domain>, LowerError> {
    let name = inst.name();
    let nvars = inst.vars.len();
    let mut guard = Vec::new();
    let mut target = Vec::new();
    for c in conjuncts(inst.prop.nnf(true)) {
        match c {
            Prop::Const(false) => return Ok(None),
            Prop::Const(true) => {}
            c if !mentions(&c).1 => guard.push(c),
            c => target.push(c),
        }
    }
    let mut bx: Vec<(Option<Rat>, Option<Rat>)> = vec![(None, None); nvars];
    for c in &guard {
        let f = c.to_formula();
        let hull = formula_box(&f, nvars).or_else(|| {
            // Multi-variable atoms of a single branch constrain nothing
            // individually; keep the single-variable ones.
            let branches = f.dnf(crate::query::MAX_BRANCHES)?;
            let [branch] = branches.as_slice() else { return None };
            let mut bx = vec![(None, None); nvars];
            for a in branch.iter().filter(|a| a.expr.terms.len() == 1) {
                tighten(&mut bx, a);
            }
            Some(bx)
        });
        let Some(hull) = hull else {
            return Err(LowerError::Embedding {
                instance: name,
                detail: "disjunctive constraint over several input variables is not supported".into(),
            });
        };
        for (i, (lo, hi)) in hull.into_iter().enumerate() {
            let x = LinExpr::var(Var::Input(i));
            if let Some(l) = lo {
                tighten(&mut bx, &LinIneq::new(x.sub(&LinExpr::constant(l)), Rel::Ge));
            }
            if let Some(h) = hi {
                tighten(&mut bx, &LinIneq::new(x.sub(&LinExpr::constant(h)), Rel::Le));
            }
        }
    }
    let mut bounds = Vec::with_capacity(nvars);
    for (v, b) in bx.into_iter().enumerate() {
        match b {
            (Some(lo), Some(hi)) if lo > hi => return Ok(None),
            (Some(lo), Some(hi)) => bounds.push((lo, hi)),
            _ => {
                return Err(LowerError::Unbounded {
                    instance: name,
                    variable: inst.vars[v].clone(),
                })
            }
        }
    }
    let body = Prop::And(target).nnf(true);
    Ok(Some(Domain { bounds, guard, body }))
}

/// Builds the counterexample-search query of one ground instance.
pub fn to_query(inst: Instance, b: &Bindings) -> Result<LoweredQuery, LowerError> {
    let inst = fold_constant_apps(inst, b)?;
    let name = inst.name();
    match inst.apps.len() {
        0 => return Err(LowerError::Ground { instance: name }),
        1 => {}
        count => return Err(LowerError::MultipleApplications { instance: name, count }),
    }
    let app = &inst.apps[0];
    let nvars = inst.vars.len();

    // Problem-space split of ¬Φ.
    let negated = inst.prop.nnf(true);
    let mut pre = Vec::new();
    let mut target = Vec::new();
    for c in conjuncts(negated) {
        match c {
            Prop::Const(false) => return Err(LowerError::EmptyRegion { instance: name }),
            Prop::Const(true) => {}
            c => match mentions(&c) {
                (_, false) => pre.push(c),
                (false, true) => target.push(c),
                (true, true) => {
                    let f = c.to_formula();
                    let detail = f.atoms().first().map(|a| a.expr.terms.keys().map(ToString::to_string).collect::<Vec<_>>().join(", ")).unwrap_or_default();
                    return Err(LowerError::Mixed { instance: name, detail });
                }
            },
        }
    }

    let mut warnings = Vec::new();
    let mut relaxed = Vec::new();
    let mut bx: Vec<(Option<Rat>, Option<Rat>)> = vec![(None, None); nvars];
    let mut linear = Vec::new();
    for c in &pre {
        let f = c.to_formula();
        let branches = f.dnf(crate::query::MAX_BRANCHES);
        if let Some([branch]) = branches.as_deref() {
            for a in branch {
                if a.expr.terms.len() == 1 {
                    tighten(&mut bx, a);
                } else {
                    linear.push(a.clone());
                }
            }
            continue;
        }
        let Some(hull) = formula_box(&f, nvars) else {
            return Err(LowerError::Embedding {
                instance: name,
                detail: "disjunctive constraint over several input variables is not supported".into(),
            });
        };
        for (i, (lo, hi)) in hull.into_iter().enumerate() {
            let x = LinExpr::var(Var::Input(i));
            if let Some(l) = lo {
                tighten(&mut bx, &LinIneq::new(x.sub(&LinExpr::constant(l)), Rel::Ge));
            }
            if let Some(h) = hi {
                tighten(&mut bx, &LinIneq::new(x.sub(&LinExpr::constant(h)), Rel::Le));
            }
        }
        let vars: BTreeSet<&str> = c
            .atoms()
            .iter()
            .flat_map(|(e, _)| e.terms.keys())
            .filter_map(|v| match v {
                Var::Input(k) => Some(inst.vars[*k].as_str()),
                Var::Output(_) => None,
            })
            .collect();
        warnings.push(RelaxationWarning {
            query: name.clone(),
            message: format!(
                "disjunctive domain of {} relaxed to its bounding box; encoding each disjunct exactly \
                 would multiply the number of verification problems",
                vars.into_iter().collect::<Vec<_>>().join(", ")
            ),
        });
        relaxed.push(c.clone());
    }

    // Embedding: each network input is a point or an invertible affine
    // image of exactly one problem variable.
    let mut inputs = Vec::new();
    let mut owner: Vec<Option<usize>> = vec![None; nvars];
    for (k, arg) in app.args.iter().enumerate() {
        if arg.is_constant() {
            inputs.push(InputMap::Point { value: arg.constant.clone() });
            continue;
        }
        let single = (arg.terms.len() == 1).then(|| arg.terms.iter().next().unwrap());
        match single {
            Some((Var::Input(v), a)) if owner[*v].is_none() => {
                owner[*v] = Some(k);
                inputs.push(InputMap::Affine {
                    var: *v,
                    scale: a.clone(),
                    shift: arg.constant.clone(),
                });
            }
            _ => {
                return Err(LowerError::Embedding {
                    instance: name,
                    detail: format!(
                        "network input {k} is not an invertible affine function of a single problem variable"
                    ),
                })
            }
        }
    }
    for (v, o) in owner.iter().enumerate().take(nvars) {
        if o.is_none() {
            return Err(LowerError::Embedding {
                instance: name,
                detail: format!("problem variable `{}` does not reach the network", inst.vars[v]),
            });
        }
    }

    // v = (X_k − shift) / scale
    let to_network = |e: &LinExpr| -> LinExpr {
        let mut out = LinExpr::constant(e.constant.clone());
        for (var, c) in &e.terms {
            match var {
                Var::Input(v) => {
                    let k = owner[*v].unwrap();
                    let InputMap::Affine { scale, shift, .. } = &inputs[k] else { unreachable!() };
                    let coef = c / scale;
                    out.add_term(Var::Input(k), coef.clone());
                    out.constant -= coef * shift;
                }
                Var::Output(_) => out.add_term(*var, c.clone()),
            }
        }
        out
    };

    let mut input_box = Vec::new();
    for m in &inputs {
        match m {
            InputMap::Point { value } => input_box.push((value.clone(), value.clone())),
            InputMap::Affine { var, scale, shift } => {
                let (Some(lo), Some(hi)) = bx[*var].clone() else {
                    return Err(LowerError::Unbounded {
                        instance: name,
                        variable: inst.vars[*var].clone(),
                    });
                };
                if lo > hi {
                    return Err(LowerError::EmptyRegion { instance: name });
                }
                let (a, c) = (scale * &lo + shift, scale * &hi + shift);
                let (l, h) = if a <= c { (a, c) } else { (c, a) };
                input_box.push((round_down(l), round_up(h)));
            }
        }
    }
    let input_linear: Vec<LinIneq> = linear
        .iter()
        .map(|a| LinIneq::new(to_network(&a.expr), a.rel).cleared())
        .collect();

    let post = Formula::And(target.iter().map(Prop::to_formula).collect()).flatten();
    let argmax = !post.atoms().is_empty()
        && post.atoms().iter().all(|a| {
            let cs: Vec<&Rat> = a.expr.terms.values().collect();
            a.expr.constant.is_zero() && cs.len() == 2 && (cs[0] + cs[1]).is_zero()
        });

    let query = Query {
        name: name.clone(),
        network: app.network.clone(),
        input_box,
        input_linear,
        post,
        output_dim: app.output_dim,
        polarity: Polarity::FindCounterexampleTo,
    };
    Ok(LoweredQuery {
        query,
        embedding: EmbeddingSpec {
            inputs,
            var_names: inst.vars.clone(),
            unembed: if argmax { Unembedding::Argmax } else { Unembedding::Outputs },
            relaxed,
        },
        instance: inst,
        warnings,
    })
}

/// What the verifier concluded about a query, in network-space terms.
#[derive(Clone, Copy, Debug)]
pub enum Outcome<'a> {
    Unsat,
    Sat(&'a [Rat]),
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ProblemSpaceVerdict {
    Holds {
        instance: String,
    },
    Counterexample {
        instance: String,
        /// Problem-variable name and value.
        assignment: Vec<(String, String)>,
        outputs: Vec<String>,
        class: Option<usize>,
    },
    SpuriousUnderRelaxation {
        instance: String,
        assignment: Vec<(String, String)>,
        reason: String,
    },
    Unknown {
        instance: String,
    },
}

impl fmt::Display for ProblemSpaceVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemSpaceVerdict::Holds { instance } => write!(f, "{instance}: holds"),
            ProblemSpaceVerdict::Counterexample { instance, class, .. } => match class {
                Some(c) => write!(f, "{instance}: counterexample, network predicts class {c}"),
                None => write!(f, "{instance}: counterexample"),
            },
            ProblemSpaceVerdict::SpuriousUnderRelaxation { instance, reason, .. } => {
                write!(f, "{instance}: spurious counterexample ({reason})")
            }
            ProblemSpaceVerdict::Unknown { instance } => write!(f, "{instance}: unknown"),
        }
    }
}

fn decimal(r: &Rat) -> String {
    rational::to_decimal(r).unwrap_or_else(|| rational::to_fraction(r))
}

/// Translates a verifier outcome back to the problem space: a witness is
/// unembedded to problem variables and re-checked against the original
/// (unrelaxed) property.
pub fn lift_verdict(lq: &LoweredQuery, net: &Network, outcome: Outcome<'_>) -> ProblemSpaceVerdict {
    let instance = lq.query.name.clone();
    let x = match outcome {
        Outcome::Unsat => return ProblemSpaceVerdict::Holds { instance },
        Outcome::Unknown => return ProblemSpaceVerdict::Unknown { instance },
        Outcome::Sat(x) => x,
    };
    let mut vals = vec![Rat::zero(); lq.embedding.var_names.len()];
    for (k, m) in lq.embedding.inputs.iter().enumerate() {
        if let InputMap::Affine { var, scale, shift } = m {
            vals[*var] = (&x[k] - shift) / scale;
        }
    }
    let assignment: Vec<(String, String)> = lq
        .embedding
        .var_names
        .iter()
        .zip(&vals)
        .map(|(n, v)| (n.clone(), decimal(v)))
        .collect();
    let Ok(y) = net.eval_exact(x) else {
        return ProblemSpaceVerdict::Unknown { instance };
    };
    if lq.embedding.relaxed.iter().any(|p| !p.holds(&vals, &y)) {
        return ProblemSpaceVerdict::SpuriousUnderRelaxation {
            instance,
            assignment,
            reason: "the witness lies off the relaxed input domain".into(),
        };
    }
    if lq.instance.prop.holds(&vals, &y) {
        return ProblemSpaceVerdict::SpuriousUnderRelaxation {
            instance,
            assignment,
            reason: "the witness sits on the boundary of a strict comparison".into(),
        };
    }
    let class = (lq.embedding.unembed == Unembedding::Argmax).then(|| argmax(&y));
    ProblemSpaceVerdict::Counterexample {
        instance,
        assignment,
        outputs: y.iter().map(decimal).collect(),
        class,
    }
}

/// Lowest index of the maximal output.
pub fn argmax(y: &[Rat]) -> usize {
    let mut best = 0;
    for (i, v) in y.iter().enumerate() {
        if *v > y[best] {
            best = i;
        }
    }
    best
}
