//! Shape-aware type checking.
//!
//! Inference is plain first-order unification. Numeric literals start as
//! "numeric" metavariables that may become `Rat`, `Nat` or `Index k` and
//! default to `Rat`. Quantified variables without an annotation get their
//! type from use and must be resolved by the end of the quantifier body.
//! Tensor types are flattened, so `Tensor Image [n]` with
//! `Image = Tensor Rat [28, 28]` is `Tensor Rat [n, 28, 28]`.
//!
//! Dimensions that mention a `Nat` parameter cannot be compared with a
//! literal until the parameter is bound; such comparisons are returned as
//! [`DimObligation`]s and discharged by the binder.

use super::ast::*;
use super::types::{Dim, Ty, MAX_RANK};
use super::TypeError;
use crate::rational::Rat;
use num_traits::{Signed, ToPrimitive};
use std::collections::{BTreeMap, HashMap, HashSet};

#[derive(Clone, Debug, PartialEq)]
pub enum Global {
    Network { input: Ty, output: Ty },
    Dataset { ty: Ty },
    Parameter { ty: Ty, infer: bool },
    Def { ty: Ty, params: Vec<String>, role: DefRole, decl: usize },
    Property { ty: Ty, decl: usize },
}

/// Two dimensions that must agree once parameters are bound.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DimObligation {
    pub left: Dim,
    pub right: Dim,
    pub span: Span,
}

#[derive(Clone, Debug)]
pub struct TypedModule {
    pub module: SpecModule,
    pub globals: BTreeMap<String, Global>,
    /// Global names in declaration order.
    pub order: Vec<String>,
    pub expr_types: HashMap<NodeId, Ty>,
    /// Types of the binders of each quantifier / `foreach` node.
    pub binder_types: HashMap<NodeId, Vec<Ty>>,
    pub dim_obligations: Vec<DimObligation>,
}

impl TypedModule {
    pub fn ty(&self, e: &Expr) -> &Ty {
        self.expr_types.get(&e.id).unwrap_or(&Ty::Error)
    }

    pub fn binders(&self, e: &Expr) -> &[Ty] {
        self.binder_types.get(&e.id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn global(&self, name: &str) -> Option<&Global> {
        self.globals.get(name)
    }

    /// Parameters and body of a definition or property.
    pub fn body(&self, name: &str) -> Option<(&[String], &Expr)> {
        let decl = match self.globals.get(name)? {
            Global::Def { decl, .. } | Global::Property { decl, .. } => *decl,
            _ => return None,
        };
        match &self.module.decls[decl].kind {
            DeclKind::Def { params, body, .. } => Some((params, body)),
            DeclKind::Property { body, .. } => Some((&[], body)),
            _ => None,
        }
    }

    pub fn properties(&self) -> Vec<&str> {
        self.order
            .iter()
            .filter(|n| matches!(self.globals[*n], Global::Property { .. }))
            .map(String::as_str)
            .collect()
    }

    pub fn networks(&self) -> Vec<&str> {
        self.order
            .iter()
            .filter(|n| matches!(self.globals[*n], Global::Network { .. }))
            .map(String::as_str)
            .collect()
    }
}

pub fn typecheck(m: &SpecModule) -> Result<TypedModule, Vec<TypeError>> {
    let mut c = Checker::default();
    for (i, d) in m.decls.iter().enumerate() {
        c.decl(i, d);
    }
    if !c.errors.is_empty() {
        return Err(c.errors);
    }
    let expr_types = c
        .expr_types
        .iter()
        .map(|(id, t)| (*id, c.zonk(t)))
        .collect();
    let binder_types = c
        .binder_types
        .iter()
        .map(|(id, ts)| (*id, ts.iter().map(|t| c.zonk(t)).collect()))
        .collect();
    Ok(TypedModule {
        module: m.clone(),
        globals: c.globals,
        order: c.order,
        expr_types,
        binder_types,
        dim_obligations: c.obligations,
    })
}

#[derive(Clone, Copy)]
enum Deferred {
    Numeric,
    Ordered,
    Equatable,
    Divisible,
}

#[derive(Default)]
struct Meta {
    solution: Option<Ty>,
    numeric: bool,
}

#[derive(Default)]
struct Checker {
    aliases: HashMap<String, Ty>,
    globals: BTreeMap<String, Global>,
    order: Vec<String>,
    nat_params: HashSet<String>,
    metas: Vec<Meta>,
    errors: Vec<TypeError>,
    expr_types: HashMap<NodeId, Ty>,
    binder_types: HashMap<NodeId, Vec<Ty>>,
    literals: Vec<(Span, Rat, Ty)>,
    deferred: Vec<(Span, Ty, Deferred)>,
    obligations: Vec<DimObligation>,
    locals: Vec<(String, Ty)>,
    /// Index dimensions for an unannotated top-level `foreach`, taken from
    /// the declared result type.
    foreach_hint: Option<(NodeId, Vec<Dim>)>,
}

impl Checker {
    fn err(&mut self, span: Span, message: impl Into<String>) {
        self.errors.push(TypeError {
            span,
            message: message.into(),
        });
    }

    fn fresh(&mut self, numeric: bool) -> Ty {
        self.metas.push(Meta {
            solution: None,
            numeric,
        });
        Ty::Meta(self.metas.len() as u32 - 1)
    }

    fn resolve(&self, t: &Ty) -> Ty {
        let mut t = t.clone();
        while let Ty::Meta(m) = t {
            match &self.metas[m as usize].solution {
                Some(s) => t = s.clone(),
                None => break,
            }
        }
        t
    }

    fn zonk(&self, t: &Ty) -> Ty {
        match self.resolve(t) {
            Ty::Tensor(e, ds) => Ty::tensor(self.zonk(&e), ds),
            Ty::Fun(ps, r) => Ty::Fun(ps.iter().map(|p| self.zonk(p)).collect(), Box::new(self.zonk(&r))),
            other => other,
        }
    }

    fn occurs(&self, m: u32, t: &Ty) -> bool {
        match self.resolve(t) {
            Ty::Meta(n) => n == m,
            Ty::Tensor(e, _) => self.occurs(m, &e),
            Ty::Fun(ps, r) => ps.iter().any(|p| self.occurs(m, p)) || self.occurs(m, &r),
            _ => false,
        }
    }

    fn bind(&mut self, m: u32, t: Ty) -> bool {
        if self.occurs(m, &t) {
            return false;
        }
        if self.metas[m as usize].numeric {
            match &t {
                Ty::Meta(n) => self.metas[*n as usize].numeric = true,
                Ty::Rat | Ty::Nat | Ty::Index(_) | Ty::Error => {}
                _ => return false,
            }
        }
        self.metas[m as usize].solution = Some(t);
        true
    }

    fn unify_dim(&mut self, a: &Dim, b: &Dim, span: Span) -> bool {
        match (a, b) {
            (Dim::Lit(x), Dim::Lit(y)) => x == y,
            (Dim::Param(x), Dim::Param(y)) if x == y => true,
            _ => {
                self.obligations.push(DimObligation {
                    left: a.clone(),
                    right: b.clone(),
                    span,
                });
                true
            }
        }
    }

    fn unify(&mut self, a: &Ty, b: &Ty, span: Span) -> bool {
        let a = self.zonk(a);
        let b = self.zonk(b);
        match (&a, &b) {
            (Ty::Error, _) | (_, Ty::Error) => true,
            (Ty::Meta(x), Ty::Meta(y)) if x == y => true,
            (Ty::Meta(x), t) | (t, Ty::Meta(x)) => self.bind(*x, t.clone()),
            (Ty::Rat, Ty::Rat) | (Ty::Bool, Ty::Bool) | (Ty::Nat, Ty::Nat) => true,
            (Ty::Index(x), Ty::Index(y)) => self.unify_dim(x, y, span),
            (Ty::Tensor(ea, da), Ty::Tensor(eb, db)) => {
                if da.len() == db.len() {
                    let dims_ok = da
                        .iter()
                        .zip(db)
                        .all(|(x, y)| self.unify_dim(x, y, span));
                    dims_ok && self.unify(ea, eb, span)
                } else {
                    // An unresolved element type may hide trailing dimensions.
                    let (short, se, long, le) = if da.len() < db.len() {
                        (da, ea, db, eb)
                    } else {
                        (db, eb, da, ea)
                    };
                    match **se {
                        Ty::Meta(m) if !self.metas[m as usize].numeric => {
                            let dims_ok = short
                                .iter()
                                .zip(long)
                                .all(|(x, y)| self.unify_dim(x, y, span));
                            let rest = Ty::tensor((**le).clone(), long[short.len()..].to_vec());
                            dims_ok && self.bind(m, rest)
                        }
                        _ => false,
                    }
                }
            }
            (Ty::Fun(pa, ra), Ty::Fun(pb, rb)) if pa.len() == pb.len() => {
                let ok = pa.iter().zip(pb).all(|(x, y)| self.unify(x, y, span));
                ok && self.unify(ra, rb, span)
            }
            _ => false,
        }
    }

    /// Unifies `found` with `expected`, reporting `what` on failure.
    fn expect(&mut self, found: &Ty, expected: &Ty, span: Span, what: &str) {
        if !self.unify(found, expected, span) {
            let (f, e) = (self.zonk(found), self.zonk(expected));
            self.err(span, format!("{what}: expected {e}, found {f}"));
        }
    }

    // ---- declarations ----

    fn declare(&mut self, name: &str, span: Span) -> bool {
        if self.globals.contains_key(name) || self.aliases.contains_key(name) {
            self.err(span, format!("duplicate declaration of `{name}`"));
            false
        } else {
            true
        }
    }

    fn add_global(&mut self, name: &str, g: Global) {
        self.globals.insert(name.to_string(), g);
        self.order.push(name.to_string());
    }

    fn decl(&mut self, index: usize, d: &Decl) {
        let span = d.span;
        let first_meta = self.metas.len();
        match &d.kind {
            DeclKind::TypeAlias { name, ty } => {
                let t = self.type_expr(ty, span);
                if self.declare(name, span) {
                    self.aliases.insert(name.clone(), t);
                }
            }
            DeclKind::Network {
                name,
                input,
                output,
            } => {
                let input = self.type_expr(input, span);
                let output = self.type_expr(output, span);
                for (t, side) in [(&input, "input"), (&output, "output")] {
                    if !matches!(t.elem(), Ty::Rat | Ty::Error) {
                        self.err(span, format!("network {side} must be Rat or a Rat tensor, found {t}"));
                    }
                }
                if self.declare(name, span) {
                    self.add_global(name, Global::Network { input, output });
                }
            }
            DeclKind::Dataset { name, ty } => {
                let t = self.type_expr(ty, span);
                if !matches!(t, Ty::Tensor(..) | Ty::Error) {
                    self.err(span, format!("dataset `{name}` must have a tensor type, found {t}"));
                }
                if self.declare(name, span) {
                    self.add_global(name, Global::Dataset { ty: t });
                }
            }
            DeclKind::Parameter { name, ty, infer } => {
                let t = self.type_expr(ty, span);
                if !matches!(t, Ty::Rat | Ty::Nat | Ty::Bool | Ty::Error) {
                    self.err(span, format!("parameter `{name}` must be Rat, Nat or Bool, found {t}"));
                }
                if *infer && t != Ty::Nat {
                    self.err(span, format!("only Nat parameters can be inferred, `{name}` is {t}"));
                }
                if self.declare(name, span) {
                    if t == Ty::Nat {
                        self.nat_params.insert(name.clone());
                    }
                    self.add_global(
                        name,
                        Global::Parameter {
                            ty: t,
                            infer: *infer,
                        },
                    );
                }
            }
            DeclKind::Def {
                name,
                role,
                ty,
                params,
                body,
            } => {
                let t = self.type_expr(ty, span);
                let (param_tys, ret) = match (&t, params.len()) {
                    (Ty::Fun(ps, r), n) if ps.len() == n => (ps.clone(), (**r).clone()),
                    (Ty::Error, n) => (vec![Ty::Error; n], Ty::Error),
                    (Ty::Fun(ps, _), n) => {
                        self.err(
                            span,
                            format!("`{name}` has {} argument(s) in its type but {n} parameter(s)", ps.len()),
                        );
                        (vec![Ty::Error; n], Ty::Error)
                    }
                    (other, 0) => (Vec::new(), other.clone()),
                    (other, n) => {
                        self.err(span, format!("`{name}` has {n} parameter(s) but non-function type {other}"));
                        (vec![Ty::Error; n], Ty::Error)
                    }
                };
                let mut seen = HashSet::new();
                for p in params {
                    if !seen.insert(p) {
                        self.err(span, format!("duplicate parameter `{p}` in `{name}`"));
                    }
                }
                self.locals = params.iter().cloned().zip(param_tys.iter().cloned()).collect();
                self.foreach_hint = Some((body.id, ret.shape().to_vec()));
                let bt = self.infer(body);
                self.expect(&bt, &ret, body.span, &format!("body of `{name}`"));
                self.locals.clear();
                self.finish_decl(first_meta, body, params, &param_tys);
                if self.declare(name, span) {
                    self.add_global(
                        name,
                        Global::Def {
                            ty: t,
                            params: params.clone(),
                            role: *role,
                            decl: index,
                        },
                    );
                }
            }
            DeclKind::Property { name, ty, body } => {
                let t = self.type_expr(ty, span);
                let ok = match &t {
                    Ty::Bool | Ty::Error => true,
                    Ty::Tensor(e, _) => **e == Ty::Bool,
                    _ => false,
                };
                if !ok {
                    self.err(span, format!("property `{name}` must have type Bool or Tensor Bool [..], found {t}"));
                }
                self.foreach_hint = Some((body.id, t.shape().to_vec()));
                let bt = self.infer(body);
                self.expect(&bt, &t, body.span, &format!("body of property `{name}`"));
                self.finish_decl(first_meta, body, &[], &[]);
                if self.declare(name, span) {
                    self.add_global(name, Global::Property { ty: t, decl: index });
                }
            }
        }
    }

    /// Defaults leftover numeric metas, then runs the checks that need fully
    /// solved types: literal ranges, operator domains, ranks and linearity.
    fn finish_decl(&mut self, first_meta: usize, body: &Expr, params: &[String], param_tys: &[Ty]) {
        for m in first_meta..self.metas.len() {
            if self.metas[m].numeric && self.metas[m].solution.is_none() {
                self.metas[m].solution = Some(Ty::Rat);
            }
        }
        for (span, value, ty) in std::mem::take(&mut self.literals) {
            match self.zonk(&ty) {
                Ty::Index(d) => {
                    let ok = value.is_integer() && !value.is_negative();
                    match (d, value.to_integer().to_u64()) {
                        (Dim::Lit(k), Some(v)) if ok && v < k => {}
                        (Dim::Lit(k), _) => self.err(
                            span,
                            format!(
                                "index literal {value} is out of range for Index {k} (valid indices 0..{})",
                                k.saturating_sub(1)
                            ),
                        ),
                        (Dim::Param(_), _) if ok => {}
                        (Dim::Param(p), _) => self.err(span, format!("index literal {value} is not valid for Index {p}")),
                    }
                }
                Ty::Nat if !(value.is_integer() && !value.is_negative()) => {
                    self.err(span, format!("literal {value} is not a natural number"))
                }
                _ => {}
            }
        }
        for (span, ty, kind) in std::mem::take(&mut self.deferred) {
            let t = self.zonk(&ty);
            let elem = t.elem().clone();
            let ok = match kind {
                Deferred::Numeric | Deferred::Ordered => matches!(elem, Ty::Rat | Ty::Nat | Ty::Error),
                Deferred::Divisible => matches!(elem, Ty::Rat | Ty::Error),
                Deferred::Equatable => matches!(elem, Ty::Rat | Ty::Nat | Ty::Index(_) | Ty::Bool | Ty::Error),
            };
            if !ok {
                let what = match kind {
                    Deferred::Numeric => "arithmetic needs Rat or Nat operands",
                    Deferred::Ordered => "ordering comparison needs Rat or Nat operands",
                    Deferred::Divisible => "division needs Rat operands",
                    Deferred::Equatable => "equality is not defined",
                };
                self.err(span, format!("{what}, found {t}"));
            }
        }
        let mut rank_errors = Vec::new();
        body.walk(&mut |e| {
            if matches!(e.kind, ExprKind::TensorLit(_) | ExprKind::Foreach(..)) {
                if let Some(t) = self.expr_types.get(&e.id) {
                    let t = self.zonk(t);
                    if t.shape().len() > MAX_RANK {
                        rank_errors.push((e.span, t));
                    }
                }
            }
        });
        for (span, t) in rank_errors {
            self.err(span, format!("tensor rank exceeds {MAX_RANK}: {t}"));
        }
        let mut scope: Vec<(String, bool)> = params.iter().map(|p| (p.clone(), false)).collect();
        let _ = param_tys;
        self.varies(body, &mut scope);
    }

    fn dim(&mut self, d: &DimExpr, span: Span) -> Dim {
        match d {
            DimExpr::Lit(0) => {
                self.err(span, "dimensions must be at least 1");
                Dim::Lit(1)
            }
            DimExpr::Lit(n) => Dim::Lit(*n),
            DimExpr::Param(p) => {
                if !self.nat_params.contains(p) {
                    self.err(span, format!("dimension `{p}` is not a declared Nat parameter"));
                }
                Dim::Param(p.clone())
            }
        }
    }

    fn type_expr(&mut self, t: &TypeExpr, span: Span) -> Ty {
        match t {
            TypeExpr::Rat => Ty::Rat,
            TypeExpr::Bool => Ty::Bool,
            TypeExpr::Nat => Ty::Nat,
            TypeExpr::Index(d) => Ty::Index(self.dim(d, span)),
            TypeExpr::Named(n) => match self.aliases.get(n) {
                Some(t) => t.clone(),
                None => {
                    self.err(span, format!("unknown type `{n}`"));
                    Ty::Error
                }
            },
            TypeExpr::Tensor(elem, dims) => {
                let e = self.type_expr(elem, span);
                let ds: Vec<Dim> = dims.iter().map(|d| self.dim(d, span)).collect();
                match e.elem() {
                    Ty::Rat | Ty::Bool | Ty::Index(_) | Ty::Error => {}
                    other => {
                        let other = other.clone();
                        self.err(span, format!("tensor elements must be Rat, Bool or Index, found {other}"));
                        return Ty::Error;
                    }
                }
                let t = Ty::tensor(e, ds);
                if t.shape().len() > MAX_RANK {
                    self.err(span, format!("tensor rank exceeds {MAX_RANK}: {t}"));
                }
                t
            }
            TypeExpr::Fun(a, b) => {
                let a = self.type_expr(a, span);
                match self.type_expr(b, span) {
                    Ty::Fun(mut ps, r) => {
                        ps.insert(0, a);
                        Ty::Fun(ps, r)
                    }
                    r => Ty::Fun(vec![a], Box::new(r)),
                }
            }
        }
    }

    // ---- expressions ----

    fn lookup_local(&self, name: &str) -> Option<Ty> {
        self.locals
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
    }

    fn infer(&mut self, e: &Expr) -> Ty {
        let t = self.infer_kind(e);
        self.expr_types.insert(e.id, t.clone());
        t
    }

    fn infer_kind(&mut self, e: &Expr) -> Ty {
        let span = e.span;
        match &e.kind {
            ExprKind::Num(r) => {
                let m = self.fresh(true);
                self.literals.push((span, r.clone(), m.clone()));
                m
            }
            ExprKind::Bool(_) => Ty::Bool,
            ExprKind::Var(name) => {
                if let Some(t) = self.lookup_local(name) {
                    return t;
                }
                match self.globals.get(name).cloned() {
                    Some(Global::Network { .. }) => {
                        self.err(span, format!("network `{name}` must be applied to an argument"));
                        Ty::Error
                    }
                    Some(Global::Dataset { ty }) | Some(Global::Parameter { ty, .. }) | Some(Global::Property { ty, .. }) => ty,
                    Some(Global::Def { ty, params, .. }) => {
                        if params.is_empty() {
                            ty
                        } else {
                            self.err(span, format!("`{name}` expects {} argument(s)", params.len()));
                            Ty::Error
                        }
                    }
                    None => {
                        self.err(span, format!("unbound name `{name}`"));
                        Ty::Error
                    }
                }
            }
            ExprKind::TensorLit(items) => {
                if items.is_empty() {
                    self.err(span, "empty tensor literal");
                    return Ty::Error;
                }
                let first = self.infer(&items[0]);
                for it in &items[1..] {
                    let t = self.infer(it);
                    self.expect(&t, &first, it.span, "tensor literal elements must agree");
                }
                let mut elem = self.zonk(&first);
                if let Ty::Meta(m) = elem {
                    if self.metas[m as usize].numeric {
                        self.metas[m as usize].solution = Some(Ty::Rat);
                        elem = Ty::Rat;
                    } else {
                        self.err(span, "cannot infer the element type of this tensor literal");
                        return Ty::Error;
                    }
                }
                Ty::tensor(elem, vec![Dim::Lit(items.len() as u64)])
            }
            ExprKind::Index(t, i) => {
                let tt = self.infer(t);
                let it = self.infer(i);
                match self.zonk(&tt) {
                    Ty::Error => Ty::Error,
                    Ty::Meta(_) => {
                        self.err(
                            t.span,
                            "cannot index an expression whose type is not yet known; add a type annotation",
                        );
                        Ty::Error
                    }
                    z @ Ty::Tensor(..) => {
                        let (d, rest) = z.indexed().expect("tensor");
                        self.expect(&it, &Ty::Index(d), i.span, "index");
                        rest
                    }
                    other => {
                        self.err(span, format!("cannot index into a value of type {other}"));
                        Ty::Error
                    }
                }
            }
            ExprKind::App(name, args) => {
                let arg_tys: Vec<Ty> = args.iter().map(|a| self.infer(a)).collect();
                if self.lookup_local(name).is_some() {
                    self.err(span, format!("`{name}` is not a function"));
                    return Ty::Error;
                }
                match self.globals.get(name).cloned() {
                    Some(Global::Network { input, output }) => {
                        if args.len() != 1 {
                            self.err(span, format!("network `{name}` takes exactly one argument"));
                            return output;
                        }
                        self.expect(
                            &arg_tys[0],
                            &input,
                            args[0].span,
                            &format!("shape mismatch in application of network `{name}`"),
                        );
                        output
                    }
                    Some(Global::Def { ty: Ty::Fun(ps, r), .. }) => {
                        if ps.len() != args.len() {
                            self.err(
                                span,
                                format!("`{name}` expects {} argument(s), got {}", ps.len(), args.len()),
                            );
                            return (*r).clone();
                        }
                        for (k, (a, p)) in arg_tys.iter().zip(&ps).enumerate() {
                            self.expect(a, p, args[k].span, &format!("argument {} of `{name}`", k + 1));
                        }
                        (*r).clone()
                    }
                    Some(_) => {
                        self.err(span, format!("`{name}` is not a function"));
                        Ty::Error
                    }
                    None => {
                        self.err(span, format!("unbound name `{name}`"));
                        Ty::Error
                    }
                }
            }
            ExprKind::Neg(a) => {
                let t = self.infer(a);
                self.deferred.push((span, t.clone(), Deferred::Numeric));
                t
            }
            ExprKind::Arith(op, a, b) => {
                let ta = self.infer(a);
                let tb = self.infer(b);
                let (za, zb) = (self.zonk(&ta), self.zonk(&tb));
                let is_t = |t: &Ty| matches!(t, Ty::Tensor(..));
                match op {
                    ArithOp::Add | ArithOp::Sub => {
                        self.expect(&tb, &ta, span, "operands of `+`/`-` must have the same type");
                        self.deferred.push((span, ta.clone(), Deferred::Numeric));
                        ta
                    }
                    ArithOp::Mul if is_t(&za) && is_t(&zb) => {
                        self.err(span, "`*` scales a tensor by a scalar; tensor-tensor products are not supported");
                        Ty::Error
                    }
                    ArithOp::Mul | ArithOp::Div if is_t(&za) || is_t(&zb) => {
                        let (tensor, scalar) = if is_t(&za) { (ta, tb) } else { (tb, ta) };
                        if matches!(op, ArithOp::Div) && !is_t(&za) {
                            self.err(span, "cannot divide a scalar by a tensor");
                            return Ty::Error;
                        }
                        self.expect(&scalar, &Ty::Rat, span, "tensor scaling factor");
                        self.deferred.push((span, tensor.clone(), Deferred::Divisible));
                        tensor
                    }
                    ArithOp::Mul => {
                        self.expect(&tb, &ta, span, "operands of `*` must have the same type");
                        self.deferred.push((span, ta.clone(), Deferred::Numeric));
                        ta
                    }
                    ArithOp::Div => {
                        self.expect(&tb, &ta, span, "operands of `/` must have the same type");
                        self.deferred.push((span, ta.clone(), Deferred::Divisible));
                        ta
                    }
                }
            }
            ExprKind::Cmp(op, a, b) => {
                let ta = self.infer(a);
                let tb = self.infer(b);
                self.expect(
                    &tb,
                    &ta,
                    span,
                    &format!("operands of `{}` must have identical types and shapes", op.symbol()),
                );
                let kind = match op {
                    CmpOp::Eq | CmpOp::Ne => Deferred::Equatable,
                    _ => Deferred::Ordered,
                };
                self.deferred.push((span, ta, kind));
                Ty::Bool
            }
            ExprKind::Not(a) => {
                let t = self.infer(a);
                self.expect(&t, &Ty::Bool, a.span, "operand of `not`");
                Ty::Bool
            }
            ExprKind::And(a, b) | ExprKind::Or(a, b) | ExprKind::Implies(a, b) => {
                for x in [a, b] {
                    let t = self.infer(x);
                    self.expect(&t, &Ty::Bool, x.span, "logical operand");
                }
                Ty::Bool
            }
            ExprKind::Quant(_, binders, body) => {
                let tys = self.open_binders(binders, span);
                let bt = self.infer(body);
                self.expect(&bt, &Ty::Bool, body.span, "quantifier body");
                self.locals.truncate(self.locals.len() - binders.len());
                let mut resolved = Vec::new();
                for (b, t) in binders.iter().zip(tys) {
                    let mut z = self.zonk(&t);
                    if let Ty::Meta(m) = z {
                        if self.metas[m as usize].numeric {
                            self.metas[m as usize].solution = Some(Ty::Rat);
                            z = Ty::Rat;
                        }
                    }
                    let ok = match &z {
                        Ty::Index(_) | Ty::Bool | Ty::Rat | Ty::Error => true,
                        Ty::Tensor(e, _) => **e == Ty::Rat,
                        _ => false,
                    };
                    if z.contains_meta() {
                        self.err(
                            span,
                            format!("cannot infer the type of `{}`; annotate it as `({} : T)`", b.name, b.name),
                        );
                        z = Ty::Error;
                    } else if !ok {
                        self.err(span, format!("cannot quantify `{}` over {z}", b.name));
                        z = Ty::Error;
                    }
                    resolved.push(z);
                }
                self.binder_types.insert(e.id, resolved);
                Ty::Bool
            }
            ExprKind::Foreach(binders, body) => {
                let tys = self.open_binders(binders, span);
                if let Some((id, dims)) = self.foreach_hint.take() {
                    if id == e.id {
                        for ((b, t), d) in binders.iter().zip(&tys).zip(dims) {
                            if b.ty.is_none() {
                                self.expect(t, &Ty::Index(d), span, "foreach index");
                            }
                        }
                    }
                }
                let bt = self.infer(body);
                self.locals.truncate(self.locals.len() - binders.len());
                let mut dims = Vec::new();
                let mut resolved = Vec::new();
                for (b, t) in binders.iter().zip(tys) {
                    match self.zonk(&t) {
                        Ty::Index(d) => {
                            dims.push(d.clone());
                            resolved.push(Ty::Index(d));
                        }
                        Ty::Error => resolved.push(Ty::Error),
                        other => {
                            self.err(span, format!("`foreach {}` must range over an Index type, found {other}", b.name));
                            resolved.push(Ty::Error);
                        }
                    }
                }
                self.binder_types.insert(e.id, resolved);
                if dims.len() != binders.len() {
                    return Ty::Error;
                }
                Ty::tensor(bt, dims)
            }
            ExprKind::Let(name, v, body) => {
                let tv = self.infer(v);
                self.locals.push((name.clone(), tv));
                let t = self.infer(body);
                self.locals.pop();
                t
            }
        }
    }

    fn open_binders(&mut self, binders: &[Binder], span: Span) -> Vec<Ty> {
        let mut tys = Vec::new();
        for b in binders {
            let t = match &b.ty {
                Some(te) => self.type_expr(te, span),
                None => self.fresh(false),
            };
            self.locals.push((b.name.clone(), t.clone()));
            tys.push(t);
        }
        tys
    }

    /// Whether `e` depends on a continuously quantified variable; reports
    /// products and quotients that would make the property nonlinear.
    fn varies(&mut self, e: &Expr, scope: &mut Vec<(String, bool)>) -> bool {
        match &e.kind {
            ExprKind::Num(_) | ExprKind::Bool(_) => false,
            ExprKind::Var(v) => scope.iter().rev().find(|(n, _)| n == v).is_some_and(|(_, b)| *b),
            ExprKind::TensorLit(items) => items.iter().fold(false, |acc, it| self.varies(it, scope) | acc),
            ExprKind::Index(t, i) => {
                let vt = self.varies(t, scope);
                self.varies(i, scope);
                vt
            }
            ExprKind::App(_, args) => args.iter().fold(false, |acc, a| self.varies(a, scope) | acc),
            ExprKind::Neg(a) | ExprKind::Not(a) => self.varies(a, scope),
            ExprKind::Arith(op, a, b) => {
                let va = self.varies(a, scope);
                let vb = self.varies(b, scope);
                match op {
                    ArithOp::Mul if va && vb => {
                        self.err(e.span, "nonlinear product of two input-dependent expressions")
                    }
                    ArithOp::Div if vb => self.err(e.span, "division by an input-dependent expression"),
                    _ => {}
                }
                va || vb
            }
            ExprKind::Cmp(_, a, b) | ExprKind::And(a, b) | ExprKind::Or(a, b) | ExprKind::Implies(a, b) => {
                let va = self.varies(a, scope);
                let vb = self.varies(b, scope);
                va || vb
            }
            ExprKind::Quant(_, bs, body) | ExprKind::Foreach(bs, body) => {
                let tys = self.binder_types.get(&e.id).cloned().unwrap_or_default();
                for (k, b) in bs.iter().enumerate() {
                    let continuous = matches!(tys.get(k).map(|t| self.zonk(t)), Some(Ty::Rat | Ty::Tensor(..)));
                    scope.push((b.name.clone(), continuous));
                }
                let v = self.varies(body, scope);
                scope.truncate(scope.len() - bs.len());
                v
            }
            ExprKind::Let(name, v, body) => {
                let vv = self.varies(v, scope);
                scope.push((name.clone(), vv));
                let r = self.varies(body, scope);
                scope.pop();
                r
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parser::parse;
    use super::*;

    pub const MNIST: &str = include_str!("../../tests/data/mnist_robustness.vnns");

    fn check(src: &str) -> Result<TypedModule, Vec<TypeError>> {
        typecheck(&parse(src).expect("parses"))
    }

    #[test]
    fn full_robustness_module() {
        let m = check(MNIST).unwrap_or_else(|e| panic!("{e:?}"));
        let Global::Property { ty, .. } = &m.globals["robustness"] else {
            panic!()
        };
        assert_eq!(ty, &Ty::Tensor(Box::new(Ty::Bool), vec![Dim::Param("n".into())]));
        assert_eq!(m.properties(), vec!["robustness"]);
    }

    #[test]
    fn index_literal_out_of_range() {
        let errs = check(
            "@network\nf : Tensor Rat [2] -> Tensor Rat [10]\n\
             p : Tensor Rat [2] -> Bool\np x = f x ! 10 >= 0",
        )
        .unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].message.contains("valid indices 0..9"), "{}", errs[0]);
        assert!(check(
            "@network\nf : Tensor Rat [2] -> Tensor Rat [10]\n\
             p : Tensor Rat [2] -> Bool\np x = f x ! 9 >= 0"
        )
        .is_ok());
    }

    #[test]
    fn network_shape_mismatch() {
        let errs = check(
            "@network\nmnist : Tensor Rat [28, 28] -> Tensor Rat [10]\n\
             bad : Tensor Rat [10] -> Bool\nbad v = mnist v ! 0 >= 0",
        )
        .unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("shape mismatch")), "{errs:?}");
    }

    #[test]
    fn errors_are_collected() {
        let errs = check("a : Rat\na = b + True\nc : Bool\nc = q").unwrap_err();
        assert!(errs.len() >= 2, "{errs:?}");
    }

    #[test]
    fn unbound_and_duplicate() {
        let errs = check("x : Rat\nx = 1\nx : Rat\nx = 2").unwrap_err();
        assert!(errs[0].message.contains("duplicate"));
        let errs = check("f : Rat\nf = g\ng : Rat\ng = 1").unwrap_err();
        assert!(errs[0].message.contains("unbound name `g`"));
    }

    #[test]
    fn nonlinear_rejected() {
        let errs = check("p : Bool\np = forall x y . x * y <= 1").unwrap_err();
        assert!(errs[0].message.contains("nonlinear"));
        let errs = check("p : Bool\np = forall x . 1 / x <= 1").unwrap_err();
        assert!(errs[0].message.contains("division"));
        assert!(check("p : Bool\np = forall x . 2 * x / 4 <= 1").is_ok());
    }

    #[test]
    fn quantified_type_must_be_inferable() {
        let errs = check("p : Bool\np = forall t . True").unwrap_err();
        assert!(errs[0].message.contains("cannot infer the type of `t`"));
    }

    #[test]
    fn rank_and_dims() {
        assert!(check("type T = Tensor Rat [1, 1, 1, 1, 1]").is_err());
        assert!(check("type T = Tensor Rat [0]").is_err());
        assert!(check("type T = Index 0").is_err());
        assert!(check("type T = Tensor Rat [1, 1, 1, 1]").is_ok());
    }

    #[test]
    fn property_must_be_boolean() {
        assert!(check("@property\np : Rat\np = 1").is_err());
    }

    #[test]
    fn every_node_gets_a_type() {
        let m = check(MNIST).unwrap();
        for d in &m.module.decls {
            if let DeclKind::Def { body, .. } | DeclKind::Property { body, .. } = &d.kind {
                body.walk(&mut |e| {
                    let t = m.ty(e);
                    assert!(!t.contains_meta() && *t != Ty::Error, "{e:?} : {t}");
                });
            }
        }
    }
}
