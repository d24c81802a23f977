//! Partial evaluation of a property body into ground [`Instance`]s.
//!
//! Finite quantifiers, datasets, parameters and definitions are evaluated
//! away. Continuous quantified variables become problem variables
//! (`Var::Input`), and each distinct network application contributes a block
//! of outputs (`Var::Output`). Everything numeric stays an exact affine
//! expression; a product of two variable expressions is rejected.

use super::ir::{Instance, NetApp, Prop};
use super::LowerError;
use crate::binding::{Bindings, Value};
use crate::frontend::{ArithOp, CmpOp, Expr, ExprKind, Global, Quantifier, Ty, TypedModule};
use crate::model::ExactNetwork;
use crate::query::{LinExpr, Var};
use crate::rational::{int, Rat};
use num_traits::{ToPrimitive, Zero};
use std::collections::{BTreeMap, BTreeSet, HashMap};

#[derive(Clone, Debug, PartialEq)]
pub enum V {
    Num(LinExpr),
    Bool(Prop),
    Idx(u64),
    /// Leading dimension of a tensor.
    Tensor(Vec<V>),
    /// A whole dataset; rows are materialised on indexing.
    Data(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Pol {
    Pos,
    Neg,
    Both,
}

impl Pol {
    fn flip(self) -> Pol {
        match self {
            Pol::Pos => Pol::Neg,
            Pol::Neg => Pol::Pos,
            Pol::Both => Pol::Both,
        }
    }
}

type Env = Vec<(String, V)>;

pub struct Evaluator<'a> {
    m: &'a TypedModule,
    b: &'a Bindings,
    /// Evaluate network applications on constant arguments exactly instead
    /// of keeping them symbolic.
    fold: bool,
    exact: HashMap<String, ExactNetwork>,
    context: String,
    vars: Vec<String>,
    apps: Vec<NetApp>,
}

fn err(context: &str, e: &Expr, message: impl Into<String>) -> LowerError {
    LowerError::Unsupported {
        instance: context.to_string(),
        span: e.span,
        message: message.into(),
    }
}

impl<'a> Evaluator<'a> {
    pub fn new(m: &'a TypedModule, b: &'a Bindings, fold: bool) -> Self {
        Self {
            m,
            b,
            fold,
            exact: HashMap::new(),
            context: String::new(),
            vars: Vec::new(),
            apps: Vec::new(),
        }
    }

    /// All ground instances of `property`, in index order.
    pub fn instances(&mut self, property: &str) -> Result<Vec<Instance>, LowerError> {
        let (params, body) = self.m.body(property).ok_or_else(|| LowerError::UnknownProperty(property.into()))?;
        if !params.is_empty() {
            return Err(LowerError::UnknownProperty(property.into()));
        }
        let mut out = Vec::new();
        self.split(property, body, &mut Vec::new(), &mut Vec::new(), &mut out)?;
        Ok(out)
    }

    fn split(
        &mut self,
        property: &str,
        e: &'a Expr,
        env: &mut Env,
        path: &mut Vec<usize>,
        out: &mut Vec<Instance>,
    ) -> Result<(), LowerError> {
        match &e.kind {
            ExprKind::Foreach(binders, body) | ExprKind::Quant(Quantifier::Forall, binders, body)
                if self.m.binders(e).iter().all(|t| self.finite(t).is_some()) =>
            {
                let tys = self.m.binders(e).to_vec();
                self.split_binders(property, &tys, binders.iter().map(|b| b.name.clone()).collect(), body, env, path, out)
            }
            ExprKind::Let(name, v, body) => {
                self.context = property.to_string();
                let value = self.eval(v, env, Pol::Both)?;
                env.push((name.clone(), value));
                let r = self.split(property, body, env, path, out);
                env.pop();
                r
            }
            _ => {
                self.vars.clear();
                self.apps.clear();
                self.context = instance_name(property, path);
                let v = self.eval(e, env, Pol::Pos)?;
                let vars = std::mem::take(&mut self.vars);
                let apps = std::mem::take(&mut self.apps);
                let mut leaves = Vec::new();
                collect_bool_leaves(v, &mut Vec::new(), &mut leaves).map_err(|m| err(&self.context, e, m))?;
                for (sub, prop) in leaves {
                    let mut index = path.clone();
                    index.extend(sub);
                    out.push(compact(Instance {
                        property: property.to_string(),
                        index,
                        vars: vars.clone(),
                        apps: apps.clone(),
                        prop,
                    }));
                }
                Ok(())
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn split_binders(
        &mut self,
        property: &str,
        tys: &[Ty],
        names: Vec<String>,
        body: &'a Expr,
        env: &mut Env,
        path: &mut Vec<usize>,
        out: &mut Vec<Instance>,
    ) -> Result<(), LowerError> {
        let Some((ty, rest)) = tys.split_first() else {
            return self.split(property, body, env, path, out);
        };
        let values = self.finite(ty).unwrap();
        for (k, v) in values.into_iter().enumerate() {
            env.push((names[0].clone(), v));
            path.push(k);
            self.split_binders(property, rest, names[1..].to_vec(), body, env, path, out)?;
            path.pop();
            env.pop();
        }
        Ok(())
    }

    /// Values of a finite type, or `None` for continuous types.
    fn finite(&self, t: &Ty) -> Option<Vec<V>> {
        match t {
            Ty::Bool => Some(vec![V::Bool(Prop::Const(false)), V::Bool(Prop::Const(true))]),
            Ty::Index(d) => Some((0..self.b.dim(d)?).map(V::Idx).collect()),
            _ => None,
        }
    }

    pub fn eval_expr(&mut self, e: &'a Expr) -> Result<V, LowerError> {
        self.eval(e, &mut Vec::new(), Pol::Pos)
    }

    fn eval(&mut self, e: &'a Expr, env: &mut Env, pol: Pol) -> Result<V, LowerError> {
        let ctx = self.context.clone();
        let fail = |m: String| err(&ctx, e, m);
        Ok(match &e.kind {
            ExprKind::Num(r) => match self.m.ty(e) {
                Ty::Index(_) => V::Idx(r.to_integer().to_u64().ok_or_else(|| fail("bad index literal".into()))?),
                _ => V::Num(LinExpr::constant(r.clone())),
            },
            ExprKind::Bool(b) => V::Bool(Prop::Const(*b)),
            ExprKind::Var(name) => {
                if let Some((_, v)) = env.iter().rev().find(|(n, _)| n == name) {
                    return Ok(v.clone());
                }
                self.global(name, e, pol)?
            }
            ExprKind::TensorLit(es) => {
                let mut items = Vec::new();
                for x in es {
                    items.push(self.eval(x, env, pol)?);
                }
                V::Tensor(items)
            }
            ExprKind::Index(t, i) => {
                let tv = self.eval(t, env, pol)?;
                let k = match self.eval(i, env, Pol::Both)? {
                    V::Idx(k) => k as usize,
                    V::Num(n) if n.is_constant() && n.constant.is_integer() => {
                        n.constant.to_integer().to_usize().ok_or_else(|| fail("negative index".into()))?
                    }
                    _ => return Err(fail("index is not a constant".into())),
                };
                self.index(tv, k).map_err(fail)?
            }
            ExprKind::App(name, args) => match self.m.global(name) {
                Some(Global::Network { output, .. }) => {
                    let arg = self.eval(&args[0], env, Pol::Both)?;
                    let mut flat = Vec::new();
                    flatten_num(arg, &mut flat).map_err(&fail)?;
                    let shape = self.b.shape(output).ok_or_else(|| fail(format!("unresolved shape {output}")))?;
                    let outs = self.apply(name, flat).map_err(fail)?;
                    nest(outs.into_iter().map(V::Num).collect(), &shape)
                }
                Some(Global::Def { .. }) | Some(Global::Property { .. }) => {
                    let (params, body) = self.m.body(name).unwrap();
                    let mut local = Env::new();
                    for (p, a) in params.iter().zip(args) {
                        local.push((p.clone(), self.eval(a, env, Pol::Both)?));
                    }
                    self.eval(body, &mut local, pol)?
                }
                _ => return Err(fail(format!("`{name}` is not applicable"))),
            },
            ExprKind::Neg(a) => map_num(self.eval(a, env, pol)?, &|x| Ok(x.neg())).map_err(fail)?,
            ExprKind::Arith(op, a, b) => {
                let va = self.eval(a, env, pol)?;
                let vb = self.eval(b, env, pol)?;
                arith(*op, va, vb).map_err(fail)?
            }
            ExprKind::Cmp(op, a, b) => {
                let va = self.eval(a, env, Pol::Both)?;
                let vb = self.eval(b, env, Pol::Both)?;
                V::Bool(compare(*op, va, vb).map_err(fail)?)
            }
            ExprKind::Not(a) => V::Bool(Prop::not(self.prop(a, env, pol.flip())?)),
            ExprKind::And(a, b) => V::Bool(Prop::and(vec![self.prop(a, env, pol)?, self.prop(b, env, pol)?])),
            ExprKind::Or(a, b) => V::Bool(Prop::or(vec![self.prop(a, env, pol)?, self.prop(b, env, pol)?])),
            ExprKind::Implies(a, b) => {
                V::Bool(Prop::implies(self.prop(a, env, pol.flip())?, self.prop(b, env, pol)?))
            }
            ExprKind::Quant(q, binders, body) => {
                let tys = self.m.binders(e).to_vec();
                let names: Vec<&str> = binders.iter().map(|b| b.name.as_str()).collect();
                V::Bool(self.quant(e, *q, &tys, &names, body, env, pol)?)
            }
            ExprKind::Foreach(binders, body) => {
                let tys = self.m.binders(e).to_vec();
                let names: Vec<&str> = binders.iter().map(|b| b.name.as_str()).collect();
                self.foreach(e, &tys, &names, body, env, pol)?
            }
            ExprKind::Let(name, v, body) => {
                let value = self.eval(v, env, Pol::Both)?;
                env.push((name.clone(), value));
                let r = self.eval(body, env, pol);
                env.pop();
                r?
            }
        })
    }

    fn prop(&mut self, e: &'a Expr, env: &mut Env, pol: Pol) -> Result<Prop, LowerError> {
        match self.eval(e, env, pol)? {
            V::Bool(p) => Ok(p),
            _ => Err(err(&self.context, e, "expected a boolean")),
        }
    }

    fn global(&mut self, name: &str, e: &'a Expr, pol: Pol) -> Result<V, LowerError> {
        let missing = || LowerError::Unbound(name.to_string());
        match self.m.global(name).ok_or_else(missing)? {
            Global::Parameter { .. } => {
                if let Some(v) = self.b.parameters.get(name) {
                    return Ok(match v {
                        Value::Rat(r) => V::Num(LinExpr::constant(r.clone())),
                        Value::Nat(n) => V::Num(LinExpr::constant(int(*n as i64))),
                        Value::Bool(b) => V::Bool(Prop::Const(*b)),
                    });
                }
                let n = self.b.inferred.get(name).ok_or_else(missing)?;
                Ok(V::Num(LinExpr::constant(int(*n as i64))))
            }
            Global::Dataset { .. } => {
                if self.b.datasets.contains_key(name) {
                    Ok(V::Data(name.to_string()))
                } else {
                    Err(missing())
                }
            }
            Global::Def { .. } | Global::Property { .. } => {
                let (_, body) = self.m.body(name).unwrap();
                self.eval(body, &mut Vec::new(), pol)
            }
            Global::Network { .. } => Err(err(&self.context, e, format!("network `{name}` used without an argument"))),
        }
    }

    fn index(&self, t: V, k: usize) -> Result<V, String> {
        match t {
            V::Tensor(mut items) => {
                if k >= items.len() {
                    return Err(format!("index {k} out of range for dimension {}", items.len()));
                }
                Ok(items.swap_remove(k))
            }
            V::Data(name) => {
                let ds = &self.b.datasets[&name];
                let row = ds
                    .rows
                    .get(k)
                    .ok_or_else(|| format!("row {k} out of range for dataset `{name}` ({} rows)", ds.rows.len()))?;
                let index_elem = matches!(
                    self.m.global(&name),
                    Some(Global::Dataset { ty }) if matches!(ty.elem(), Ty::Index(_))
                );
                let leaves = row
                    .iter()
                    .map(|v| {
                        if index_elem {
                            v.to_integer()
                                .to_u64()
                                .filter(|_| v.is_integer())
                                .map(V::Idx)
                                .ok_or_else(|| format!("dataset `{name}` row {k}: {v} is not an index"))
                        } else {
                            Ok(V::Num(LinExpr::constant(v.clone())))
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(nest(leaves, &ds.elem_shape))
            }
            _ => Err("indexing a non-tensor".into()),
        }
    }

    fn apply(&mut self, network: &str, args: Vec<LinExpr>) -> Result<Vec<LinExpr>, String> {
        let net = self
            .b
            .networks
            .get(network)
            .ok_or_else(|| format!("network `{network}` is not bound"))?;
        if args.len() != net.input_dim() {
            return Err(format!("`{network}` expects {} inputs, got {}", net.input_dim(), args.len()));
        }
        if self.fold && args.iter().all(LinExpr::is_constant) {
            let exact = self
                .exact
                .entry(network.to_string())
                .or_insert_with(|| ExactNetwork::from_network(net));
            let x: Vec<Rat> = args.iter().map(|a| a.constant.clone()).collect();
            let y = exact.eval(&x).map_err(|e| format!("`{network}`: {e}"))?;
            return Ok(y.into_iter().map(LinExpr::constant).collect());
        }
        let existing = self.apps.iter().find(|a| a.network == network && a.args == args);
        let (base, dim) = match existing {
            Some(a) => (a.output_base, a.output_dim),
            None => {
                let base = self.apps.iter().map(|a| a.output_dim).sum();
                let dim = net.output_dim();
                self.apps.push(NetApp {
                    network: network.to_string(),
                    args,
                    output_base: base,
                    output_dim: dim,
                });
                (base, dim)
            }
        };
        Ok((0..dim).map(|k| LinExpr::var(Var::Output(base + k))).collect())
    }

    #[allow(clippy::too_many_arguments)]
    fn quant(
        &mut self,
        e: &'a Expr,
        q: Quantifier,
        tys: &[Ty],
        names: &[&str],
        body: &'a Expr,
        env: &mut Env,
        pol: Pol,
    ) -> Result<Prop, LowerError> {
        let Some((ty, rest)) = tys.split_first() else {
            return self.prop(body, env, pol);
        };
        if let Some(values) = self.finite(ty) {
            let mut parts = Vec::new();
            for v in values {
                env.push((names[0].to_string(), v));
                let r = self.quant(e, q, rest, &names[1..], body, env, pol);
                env.pop();
                parts.push(r?);
            }
            return Ok(match q {
                Quantifier::Forall => Prop::and(parts),
                Quantifier::Exists => Prop::or(parts),
            });
        }
        // A continuous variable: only a universal block (∀ in positive
        // position, ∃ in negative position) can be handed to a verifier.
        let ok = matches!((q, pol), (Quantifier::Forall, Pol::Pos) | (Quantifier::Exists, Pol::Neg));
        if !ok {
            return Err(LowerError::Alternation {
                instance: self.context.clone(),
                span: e.span,
                variable: names[0].to_string(),
            });
        }
        let shape = self
            .b
            .shape(ty)
            .ok_or_else(|| err(&self.context, e, format!("unresolved shape {ty}")))?;
        let value = self.fresh(names[0], &shape);
        env.push((names[0].to_string(), value));
        let r = self.quant(e, q, rest, &names[1..], body, env, pol);
        env.pop();
        r
    }

    fn foreach(
        &mut self,
        e: &'a Expr,
        tys: &[Ty],
        names: &[&str],
        body: &'a Expr,
        env: &mut Env,
        pol: Pol,
    ) -> Result<V, LowerError> {
        let Some((ty, rest)) = tys.split_first() else {
            return self.eval(body, env, pol);
        };
        let values = self
            .finite(ty)
            .ok_or_else(|| err(&self.context, e, "foreach ranges over a finite type only"))?;
        let mut items = Vec::new();
        for v in values {
            env.push((names[0].to_string(), v));
            let r = self.foreach(e, rest, &names[1..], body, env, pol);
            env.pop();
            items.push(r?);
        }
        Ok(V::Tensor(items))
    }

    fn fresh(&mut self, name: &str, shape: &[usize]) -> V {
        let count: usize = shape.iter().product();
        let mut leaves = Vec::with_capacity(count);
        for flat in 0..count {
            let id = self.vars.len();
            self.vars.push(if shape.is_empty() {
                name.to_string()
            } else {
                let mut idx = Vec::new();
                let mut rem = flat;
                for d in shape.iter().rev() {
                    idx.push(rem % d);
                    rem /= d;
                }
                idx.reverse();
                let idx: Vec<String> = idx.iter().map(ToString::to_string).collect();
                format!("{name}[{}]", idx.join(","))
            });
            leaves.push(V::Num(LinExpr::var(Var::Input(id))));
        }
        nest(leaves, shape)
    }
}

pub fn instance_name(property: &str, path: &[usize]) -> String {
    if path.is_empty() {
        property.to_string()
    } else {
        let idx: Vec<String> = path.iter().map(ToString::to_string).collect();
        format!("{property}_{}", idx.join("_"))
    }
}

fn collect_bool_leaves(v: V, path: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, Prop)>) -> Result<(), String> {
    match v {
        V::Bool(p) => {
            out.push((path.clone(), p));
            Ok(())
        }
        V::Tensor(items) => {
            for (k, item) in items.into_iter().enumerate() {
                path.push(k);
                collect_bool_leaves(item, path, out)?;
                path.pop();
            }
            Ok(())
        }
        _ => Err("property does not evaluate to a boolean".into()),
    }
}

/// Rebuilds a flat row-major list into nested tensors of the given shape.
pub fn nest(leaves: Vec<V>, shape: &[usize]) -> V {
    match shape.split_first() {
        None => leaves.into_iter().next().expect("scalar"),
        Some((_, rest)) => {
            let inner: usize = rest.iter().product();
            let mut items = Vec::new();
            let mut it = leaves.into_iter();
            loop {
                let chunk: Vec<V> = it.by_ref().take(inner.max(1)).collect();
                if chunk.is_empty() {
                    break;
                }
                items.push(nest(chunk, rest));
            }
            V::Tensor(items)
        }
    }
}

pub fn flatten_num(v: V, out: &mut Vec<LinExpr>) -> Result<(), String> {
    match v {
        V::Num(e) => {
            out.push(e);
            Ok(())
        }
        V::Tensor(items) => items.into_iter().try_for_each(|i| flatten_num(i, out)),
        _ => Err("expected a numeric tensor".into()),
    }
}

fn map_num(v: V, f: &impl Fn(LinExpr) -> Result<LinExpr, String>) -> Result<V, String> {
    match v {
        V::Num(e) => Ok(V::Num(f(e)?)),
        V::Tensor(items) => Ok(V::Tensor(items.into_iter().map(|i| map_num(i, f)).collect::<Result<_, _>>()?)),
        V::Idx(k) => Ok(V::Num(f(LinExpr::constant(int(k as i64)))?)),
        _ => Err("expected a number".into()),
    }
}

fn as_num(v: V) -> V {
    match v {
        V::Idx(k) => V::Num(LinExpr::constant(int(k as i64))),
        other => other,
    }
}

fn arith(op: ArithOp, a: V, b: V) -> Result<V, String> {
    match (as_num(a), as_num(b)) {
        (V::Num(x), V::Num(y)) => Ok(V::Num(scalar_arith(op, x, y)?)),
        (V::Tensor(xs), V::Tensor(ys)) => {
            if !matches!(op, ArithOp::Add | ArithOp::Sub) || xs.len() != ys.len() {
                return Err("tensor operands must have equal shapes and be added or subtracted".into());
            }
            Ok(V::Tensor(
                xs.into_iter().zip(ys).map(|(x, y)| arith(op, x, y)).collect::<Result<_, _>>()?,
            ))
        }
        (t @ V::Tensor(_), V::Num(s)) if matches!(op, ArithOp::Mul | ArithOp::Div) => {
            map_num(t, &|x| scalar_arith(op, x, s.clone()))
        }
        (V::Num(s), t @ V::Tensor(_)) if op == ArithOp::Mul => map_num(t, &|x| scalar_arith(op, s.clone(), x)),
        _ => Err("unsupported arithmetic operands".into()),
    }
}

fn scalar_arith(op: ArithOp, x: LinExpr, y: LinExpr) -> Result<LinExpr, String> {
    match op {
        ArithOp::Add => Ok(x.add(&y)),
        ArithOp::Sub => Ok(x.sub(&y)),
        ArithOp::Mul if x.is_constant() => Ok(y.scale(&x.constant)),
        ArithOp::Mul if y.is_constant() => Ok(x.scale(&y.constant)),
        ArithOp::Mul => Err("nonlinear product of two variable expressions".into()),
        ArithOp::Div if y.is_constant() && y.constant.is_zero() => Err("division by zero".into()),
        ArithOp::Div if y.is_constant() => Ok(x.scale(&(Rat::from_integer(1.into()) / &y.constant))),
        ArithOp::Div => Err("division by a variable expression".into()),
    }
}

fn compare(op: CmpOp, a: V, b: V) -> Result<Prop, String> {
    match (a, b) {
        (V::Idx(x), V::Idx(y)) => Ok(Prop::atom(LinExpr::constant(int(x as i64) - int(y as i64)), op)),
        (V::Bool(p), V::Bool(q)) => match op {
            CmpOp::Eq => Ok(Prop::iff(p, q)),
            CmpOp::Ne => Ok(Prop::not(Prop::iff(p, q))),
            _ => Err("booleans are not ordered".into()),
        },
        (V::Tensor(xs), V::Tensor(ys)) => {
            if xs.len() != ys.len() {
                return Err("compared tensors differ in shape".into());
            }
            let parts = xs.into_iter().zip(ys).map(|(x, y)| compare(op, x, y)).collect::<Result<Vec<_>, _>>()?;
            Ok(if op == CmpOp::Ne { Prop::or(parts) } else { Prop::and(parts) })
        }
        (a, b) => match (as_num(a), as_num(b)) {
            (V::Num(x), V::Num(y)) => Ok(Prop::atom(x.sub(&y), op)),
            _ => Err("incomparable operands".into()),
        },
    }
}

pub(crate) fn map_vars(e: &LinExpr, f: &impl Fn(Var) -> Var) -> LinExpr {
    let mut out = LinExpr::constant(e.constant.clone());
    for (v, c) in &e.terms {
        out.add_term(f(*v), c.clone());
    }
    out
}

/// Rebuilds `p` with every atom expression transformed, re-folding constants.
pub fn map_prop(p: &Prop, f: &impl Fn(&LinExpr) -> LinExpr) -> Prop {
    match p {
        Prop::Const(b) => Prop::Const(*b),
        Prop::Atom(e, op) => Prop::atom(f(e), *op),
        Prop::Not(q) => Prop::not(map_prop(q, f)),
        Prop::And(ps) => Prop::and(ps.iter().map(|q| map_prop(q, f)).collect()),
        Prop::Or(ps) => Prop::or(ps.iter().map(|q| map_prop(q, f)).collect()),
    }
}

/// Drops unused applications and variables and renumbers the rest densely,
/// preserving order.
pub fn compact(inst: Instance) -> Instance {
    let mut used_outputs = BTreeSet::new();
    for (e, _) in inst.prop.atoms() {
        for v in e.terms.keys() {
            if let Var::Output(k) = v {
                used_outputs.insert(*k);
            }
        }
    }
    let apps: Vec<&NetApp> = inst
        .apps
        .iter()
        .filter(|a| (a.output_base..a.output_base + a.output_dim).any(|k| used_outputs.contains(&k)))
        .collect();
    let mut used_vars = BTreeSet::new();
    let mut note = |e: &LinExpr| {
        for v in e.terms.keys() {
            if let Var::Input(k) = v {
                used_vars.insert(*k);
            }
        }
    };
    for (e, _) in inst.prop.atoms() {
        note(e);
    }
    for a in &apps {
        a.args.iter().for_each(&mut note);
    }
    let var_map: BTreeMap<usize, usize> = used_vars.iter().enumerate().map(|(new, old)| (*old, new)).collect();
    let mut out_map = BTreeMap::new();
    let mut new_apps = Vec::new();
    let mut base = 0;
    for a in apps {
        for k in 0..a.output_dim {
            out_map.insert(a.output_base + k, base + k);
        }
        new_apps.push(NetApp {
            network: a.network.clone(),
            args: a.args.iter().map(|e| map_vars(e, &|v| remap(v, &var_map, &out_map))).collect(),
            output_base: base,
            output_dim: a.output_dim,
        });
        base += a.output_dim;
    }
    let prop = map_prop(&inst.prop, &|e| map_vars(e, &|v| remap(v, &var_map, &out_map)));
    Instance {
        property: inst.property,
        index: inst.index,
        vars: used_vars.iter().map(|k| inst.vars[*k].clone()).collect(),
        apps: new_apps,
        prop,
    }
}

fn remap(v: Var, vars: &BTreeMap<usize, usize>, outs: &BTreeMap<usize, usize>) -> Var {
    match v {
        Var::Input(k) => Var::Input(vars[&k]),
        Var::Output(k) => Var::Output(outs[&k]),
    }
}
