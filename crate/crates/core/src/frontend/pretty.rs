//! Canonical concrete syntax for modules and expressions. The output parses
//! back to the same tree (modulo spans and node ids).

use super::ast::*;
use crate::rational;
use std::fmt::Write;

pub fn pretty(m: &SpecModule) -> String {
    let mut out = String::new();
    for (i, d) in m.decls.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        decl(&mut out, &d.kind);
    }
    out
}

pub fn pretty_expr(e: &Expr) -> String {
    let mut s = String::new();
    expr(&mut s, e, 0);
    s
}

fn decl(out: &mut String, d: &DeclKind) {
    match d {
        DeclKind::TypeAlias { name, ty } => {
            let _ = writeln!(out, "type {name} = {}", type_expr(ty));
        }
        DeclKind::Network {
            name,
            input,
            output,
        } => {
            let f = TypeExpr::Fun(Box::new(input.clone()), Box::new(output.clone()));
            let _ = writeln!(out, "@network\n{name} : {}", type_expr(&f));
        }
        DeclKind::Dataset { name, ty } => {
            let _ = writeln!(out, "@dataset\n{name} : {}", type_expr(ty));
        }
        DeclKind::Parameter { name, ty, infer } => {
            let annot = if *infer { "@parameter(infer=True)" } else { "@parameter" };
            let _ = writeln!(out, "{annot}\n{name} : {}", type_expr(ty));
        }
        DeclKind::Def {
            name,
            role,
            ty,
            params,
            body,
        } => {
            match role {
                DefRole::Plain => {}
                DefRole::Embedding => out.push_str("@embedding\n"),
                DefRole::Unembedding => out.push_str("@unembedding\n"),
            }
            let _ = writeln!(out, "{name} : {}", type_expr(ty));
            out.push_str(name);
            for p in params {
                out.push(' ');
                out.push_str(p);
            }
            let _ = writeln!(out, " =\n  {}", pretty_expr(body));
        }
        DeclKind::Property { name, ty, body } => {
            let _ = writeln!(
                out,
                "@property\n{name} : {}\n{name} =\n  {}",
                type_expr(ty),
                pretty_expr(body)
            );
        }
    }
}

fn dim(d: &DimExpr) -> String {
    match d {
        DimExpr::Lit(n) => n.to_string(),
        DimExpr::Param(p) => p.clone(),
    }
}

pub fn type_expr(t: &TypeExpr) -> String {
    match t {
        TypeExpr::Fun(a, b) => {
            let lhs = match **a {
                TypeExpr::Fun(..) => format!("({})", type_expr(a)),
                _ => type_expr(a),
            };
            format!("{lhs} -> {}", type_expr(b))
        }
        other => type_atom(other),
    }
}

fn type_atom(t: &TypeExpr) -> String {
    match t {
        TypeExpr::Rat => "Rat".into(),
        TypeExpr::Bool => "Bool".into(),
        TypeExpr::Nat => "Nat".into(),
        TypeExpr::Index(d) => format!("Index {}", dim(d)),
        TypeExpr::Named(n) => n.clone(),
        TypeExpr::Tensor(elem, dims) => {
            let e = match **elem {
                TypeExpr::Index(_) | TypeExpr::Tensor(..) | TypeExpr::Fun(..) => {
                    format!("({})", type_expr(elem))
                }
                _ => type_atom(elem),
            };
            let ds: Vec<String> = dims.iter().map(dim).collect();
            format!("Tensor {e} [{}]", ds.join(", "))
        }
        TypeExpr::Fun(..) => format!("({})", type_expr(t)),
    }
}

// Precedence levels, loosest first.
const BIND: u8 = 0;
const IMPLIES: u8 = 1;
const OR: u8 = 2;
const AND: u8 = 3;
const NOT: u8 = 4;
const CMP: u8 = 5;
const ADD: u8 = 6;
const MUL: u8 = 7;
const NEG: u8 = 8;
const INDEX: u8 = 9;
const APP: u8 = 10;
const ATOM: u8 = 11;

fn level(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Quant(..) | ExprKind::Foreach(..) | ExprKind::Let(..) => BIND,
        ExprKind::Implies(..) => IMPLIES,
        ExprKind::Or(..) => OR,
        ExprKind::And(..) => AND,
        ExprKind::Not(_) => NOT,
        ExprKind::Cmp(..) => CMP,
        ExprKind::Arith(ArithOp::Add | ArithOp::Sub, ..) => ADD,
        ExprKind::Arith(..) => MUL,
        ExprKind::Neg(_) => NEG,
        ExprKind::Index(..) => INDEX,
        ExprKind::App(..) => APP,
        _ => ATOM,
    }
}

fn expr(out: &mut String, e: &Expr, min: u8) {
    if level(e) < min {
        out.push('(');
        expr(out, e, BIND);
        out.push(')');
        return;
    }
    match &e.kind {
        ExprKind::Num(r) => match rational::exact_decimal(r) {
            Some(s) => out.push_str(s.strip_suffix(".0").unwrap_or(&s)),
            // Not produced by the parser; printed as a quotient.
            None => {
                let _ = write!(out, "({} / {})", r.numer(), r.denom());
            }
        },
        ExprKind::Bool(b) => out.push_str(if *b { "True" } else { "False" }),
        ExprKind::Var(v) => out.push_str(v),
        ExprKind::TensorLit(items) => {
            out.push('[');
            for (i, it) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                expr(out, it, BIND);
            }
            out.push(']');
        }
        ExprKind::Index(t, i) => {
            expr(out, t, INDEX);
            out.push_str(" ! ");
            expr(out, i, ATOM);
        }
        ExprKind::App(f, args) => {
            out.push_str(f);
            for a in args {
                out.push(' ');
                expr(out, a, ATOM);
            }
        }
        ExprKind::Neg(a) => {
            let mut inner = String::new();
            expr(&mut inner, a, NEG);
            if inner.starts_with('-') {
                let _ = write!(out, "-({inner})");
            } else {
                let _ = write!(out, "-{inner}");
            }
        }
        ExprKind::Arith(op, a, b) => {
            let (sym, lvl) = match op {
                ArithOp::Add => ("+", ADD),
                ArithOp::Sub => ("-", ADD),
                ArithOp::Mul => ("*", MUL),
                ArithOp::Div => ("/", MUL),
            };
            expr(out, a, lvl);
            let _ = write!(out, " {sym} ");
            expr(out, b, lvl + 1);
        }
        ExprKind::Cmp(op, a, b) => {
            expr(out, a, ADD);
            let _ = write!(out, " {} ", op.symbol());
            expr(out, b, ADD);
        }
        ExprKind::Not(a) => {
            out.push_str("not ");
            expr(out, a, NOT);
        }
        ExprKind::And(a, b) => {
            expr(out, a, AND);
            out.push_str(" and ");
            expr(out, b, NOT);
        }
        ExprKind::Or(a, b) => {
            expr(out, a, OR);
            out.push_str(" or ");
            expr(out, b, AND);
        }
        ExprKind::Implies(a, b) => {
            expr(out, a, OR);
            out.push_str(" => ");
            expr(out, b, BIND);
        }
        ExprKind::Quant(q, bs, body) => {
            out.push_str(match q {
                Quantifier::Forall => "forall",
                Quantifier::Exists => "exists",
            });
            binders(out, bs);
            out.push_str(" . ");
            expr(out, body, BIND);
        }
        ExprKind::Foreach(bs, body) => {
            out.push_str("foreach");
            binders(out, bs);
            out.push_str(" . ");
            expr(out, body, BIND);
        }
        ExprKind::Let(name, v, body) => {
            let _ = write!(out, "let {name} = ");
            expr(out, v, BIND);
            out.push_str(" in ");
            expr(out, body, BIND);
        }
    }
}

fn binders(out: &mut String, bs: &[Binder]) {
    for b in bs {
        match &b.ty {
            None => {
                let _ = write!(out, " {}", b.name);
            }
            Some(t) => {
                let _ = write!(out, " ({} : {})", b.name, type_expr(t));
            }
        }
    }
}
