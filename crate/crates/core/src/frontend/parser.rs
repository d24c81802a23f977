//! Recursive-descent parser for `.vnns` modules.
//!
//! The grammar is layout-insensitive. A declaration ends where the next one
//! begins: at `type`, at an `@` annotation, or at an identifier followed by
//! `:` or by zero or more identifiers and `=`. Expressions never contain a
//! bare `=` (equality is `==`), so this boundary is unambiguous.

use super::ast::*;
use super::lexer::{lex, Tok};
use super::ParseError;
use crate::rational;

pub fn parse(src: &str) -> Result<SpecModule, ParseError> {
    let tokens = lex(src)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        next_id: 1,
    };
    p.module()
}

/// Parses a single expression (used by tests and tooling).
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let tokens = lex(src)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        next_id: 1,
    };
    let e = p.expr()?;
    p.expect(&Tok::Eof)?;
    Ok(e)
}

struct Parser {
    tokens: Vec<(Tok, Span)>,
    pos: usize,
    next_id: NodeId,
}

#[derive(Clone, Copy, PartialEq)]
enum Annot {
    Network,
    Dataset,
    Parameter { infer: bool },
    Property,
    Embedding,
    Unembedding,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.tokens.len() - 1);
        &self.tokens[i].0
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].0.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        let found = self.peek().describe();
        ParseError {
            span: self.span(),
            message: if expected.is_empty() {
                format!("unexpected {found}")
            } else {
                format!("expected {}, found {found}", expected.join(" or "))
            },
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn expect(&mut self, t: &Tok) -> Result<(), ParseError> {
        if self.eat(t) {
            Ok(())
        } else {
            Err(self.error(&[&format!("`{}`", t.text())]))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn node(&mut self, span: Span, kind: ExprKind) -> Expr {
        let id = self.next_id;
        self.next_id += 1;
        Expr { id, span, kind }
    }

    // ---- declarations ----

    fn module(&mut self) -> Result<SpecModule, ParseError> {
        let mut decls = Vec::new();
        while self.peek() != &Tok::Eof {
            decls.push(self.decl()?);
        }
        Ok(SpecModule { decls })
    }

    fn decl(&mut self) -> Result<Decl, ParseError> {
        let span = self.span();
        if self.eat(&Tok::Type) {
            let name = self.ident()?;
            self.expect(&Tok::Assign)?;
            let ty = self.ty()?;
            return Ok(Decl {
                span,
                kind: DeclKind::TypeAlias { name, ty },
            });
        }
        let mut annot = None;
        while self.peek() == &Tok::At {
            let annot_span = self.span();
            let a = self.annotation()?;
            if annot.replace(a).is_some() {
                return Err(ParseError {
                    span: annot_span,
                    message: "a declaration carries at most one annotation".into(),
                    expected: Vec::new(),
                });
            }
        }
        let name_span = self.span();
        let name = self.ident().map_err(|_| {
            self.error(&["`type`", "`@`", "identifier"])
        })?;
        self.expect(&Tok::Colon)?;
        let ty = self.ty()?;
        let kind = match annot {
            Some(Annot::Network) => match ty {
                TypeExpr::Fun(input, output) => DeclKind::Network {
                    name,
                    input: *input,
                    output: *output,
                },
                _ => {
                    return Err(ParseError {
                        span: name_span,
                        message: format!("network `{name}` must have a function type `A -> B`"),
                        expected: Vec::new(),
                    })
                }
            },
            Some(Annot::Dataset) => DeclKind::Dataset { name, ty },
            Some(Annot::Parameter { infer }) => DeclKind::Parameter { name, ty, infer },
            Some(Annot::Property) => {
                self.equation_head(&name, false)?;
                let body = self.expr()?;
                DeclKind::Property { name, ty, body }
            }
            Some(Annot::Embedding) | Some(Annot::Unembedding) | None => {
                let role = match annot {
                    Some(Annot::Embedding) => DefRole::Embedding,
                    Some(Annot::Unembedding) => DefRole::Unembedding,
                    _ => DefRole::Plain,
                };
                let params = self.equation_head(&name, true)?;
                let body = self.expr()?;
                DeclKind::Def {
                    name,
                    role,
                    ty,
                    params,
                    body,
                }
            }
        };
        Ok(Decl { span, kind })
    }

    /// `name params* =`, returning the parameter names.
    fn equation_head(&mut self, name: &str, allow_params: bool) -> Result<Vec<String>, ParseError> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Ident(s) if s == name => {
                self.bump();
            }
            _ => return Err(self.error(&[&format!("the defining equation `{name} ... =`")])),
        }
        let mut params = Vec::new();
        while let Tok::Ident(p) = self.peek().clone() {
            self.bump();
            params.push(p);
        }
        if !allow_params && !params.is_empty() {
            return Err(ParseError {
                span,
                message: format!("property `{name}` cannot take parameters"),
                expected: vec!["`=`".into()],
            });
        }
        self.expect(&Tok::Assign)?;
        Ok(params)
    }

    fn annotation(&mut self) -> Result<Annot, ParseError> {
        self.expect(&Tok::At)?;
        let span = self.span();
        let name = self.ident()?;
        Ok(match name.as_str() {
            "network" => Annot::Network,
            "dataset" => Annot::Dataset,
            "property" => Annot::Property,
            "embedding" => Annot::Embedding,
            "unembedding" => Annot::Unembedding,
            "parameter" => {
                let mut infer = false;
                if self.eat(&Tok::LParen) {
                    let key_span = self.span();
                    let key = self.ident()?;
                    if key != "infer" {
                        return Err(ParseError {
                            span: key_span,
                            message: format!("unknown parameter option `{key}`"),
                            expected: vec!["`infer`".into()],
                        });
                    }
                    self.expect(&Tok::Assign)?;
                    infer = match self.bump() {
                        Tok::True => true,
                        Tok::False => false,
                        _ => {
                            self.pos -= 1;
                            return Err(self.error(&["`True`", "`False`"]));
                        }
                    };
                    self.expect(&Tok::RParen)?;
                }
                Annot::Parameter { infer }
            }
            other => {
                return Err(ParseError {
                    span,
                    message: format!("unknown annotation `@{other}`"),
                    expected: [
                        "network",
                        "dataset",
                        "parameter",
                        "property",
                        "embedding",
                        "unembedding",
                    ]
                    .iter()
                    .map(|s| format!("`@{s}`"))
                    .collect(),
                })
            }
        })
    }

    // ---- types ----

    fn ty(&mut self) -> Result<TypeExpr, ParseError> {
        let lhs = self.ty_atom()?;
        if self.eat(&Tok::Arrow) {
            let rhs = self.ty()?;
            Ok(TypeExpr::Fun(Box::new(lhs), Box::new(rhs)))
        } else {
            Ok(lhs)
        }
    }

    fn ty_atom(&mut self) -> Result<TypeExpr, ParseError> {
        match self.peek().clone() {
            Tok::Rat => {
                self.bump();
                Ok(TypeExpr::Rat)
            }
            Tok::Bool => {
                self.bump();
                Ok(TypeExpr::Bool)
            }
            Tok::Nat => {
                self.bump();
                Ok(TypeExpr::Nat)
            }
            Tok::Index => {
                self.bump();
                Ok(TypeExpr::Index(self.dim()?))
            }
            Tok::Tensor => {
                self.bump();
                let elem = self.ty_atom()?;
                self.expect(&Tok::LBracket)?;
                let mut dims = vec![self.dim()?];
                while self.eat(&Tok::Comma) {
                    dims.push(self.dim()?);
                }
                self.expect(&Tok::RBracket)?;
                Ok(TypeExpr::Tensor(Box::new(elem), dims))
            }
            Tok::Ident(name) => {
                self.bump();
                Ok(TypeExpr::Named(name))
            }
            Tok::LParen => {
                self.bump();
                let t = self.ty()?;
                self.expect(&Tok::RParen)?;
                Ok(t)
            }
            _ => Err(self.error(&["type"])),
        }
    }

    fn dim(&mut self) -> Result<DimExpr, ParseError> {
        match self.peek().clone() {
            Tok::Num(text) => {
                let span = self.span();
                self.bump();
                text.parse::<u64>().map(DimExpr::Lit).map_err(|_| ParseError {
                    span,
                    message: format!("dimension `{text}` is not a natural number"),
                    expected: vec!["natural number".into()],
                })
            }
            Tok::Ident(name) => {
                self.bump();
                Ok(DimExpr::Param(name))
            }
            _ => Err(self.error(&["dimension"])),
        }
    }

    // ---- expressions ----

    pub fn expr(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Tok::Forall | Tok::Exists | Tok::Foreach | Tok::Let => self.binding_form(),
            _ => self.implies(),
        }
    }

    fn binding_form(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        match self.bump() {
            Tok::Let => {
                let name = self.ident()?;
                self.expect(&Tok::Assign)?;
                let value = self.expr()?;
                self.expect(&Tok::In)?;
                let body = self.expr()?;
                Ok(self.node(span, ExprKind::Let(name, Box::new(value), Box::new(body))))
            }
            t @ (Tok::Forall | Tok::Exists | Tok::Foreach) => {
                let binders = self.binders()?;
                self.expect(&Tok::Dot)?;
                let body = Box::new(self.expr()?);
                let kind = match t {
                    Tok::Forall => ExprKind::Quant(Quantifier::Forall, binders, body),
                    Tok::Exists => ExprKind::Quant(Quantifier::Exists, binders, body),
                    _ => ExprKind::Foreach(binders, body),
                };
                Ok(self.node(span, kind))
            }
            _ => unreachable!("binding_form called on a non-binding token"),
        }
    }

    fn binders(&mut self) -> Result<Vec<Binder>, ParseError> {
        let mut out = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::Ident(name) => {
                    self.bump();
                    out.push(Binder { name, ty: None });
                }
                Tok::LParen => {
                    self.bump();
                    let name = self.ident()?;
                    self.expect(&Tok::Colon)?;
                    let ty = self.ty()?;
                    self.expect(&Tok::RParen)?;
                    out.push(Binder { name, ty: Some(ty) });
                }
                _ => break,
            }
        }
        if out.is_empty() {
            return Err(self.error(&["bound variable"]));
        }
        Ok(out)
    }

    fn implies(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        let lhs = self.or()?;
        if self.eat(&Tok::FatArrow) {
            let rhs = self.expr()?;
            Ok(self.node(span, ExprKind::Implies(Box::new(lhs), Box::new(rhs))))
        } else {
            Ok(lhs)
        }
    }

    fn or(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        let mut lhs = self.and()?;
        while self.eat(&Tok::Or) {
            let rhs = self.and()?;
            lhs = self.node(span, ExprKind::Or(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        let mut lhs = self.not()?;
        while self.eat(&Tok::And) {
            let rhs = self.not()?;
            lhs = self.node(span, ExprKind::And(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        match self.peek() {
            Tok::Not => {
                self.bump();
                let inner = self.not()?;
                Ok(self.node(span, ExprKind::Not(Box::new(inner))))
            }
            Tok::Forall | Tok::Exists | Tok::Foreach | Tok::Let => self.binding_form(),
            _ => self.cmp(),
        }
    }

    fn cmp_op(&self) -> Option<CmpOp> {
        Some(match self.peek() {
            Tok::Le => CmpOp::Le,
            Tok::Lt => CmpOp::Lt,
            Tok::Ge => CmpOp::Ge,
            Tok::Gt => CmpOp::Gt,
            Tok::EqEq => CmpOp::Eq,
            Tok::NotEq => CmpOp::Ne,
            _ => return None,
        })
    }

    /// Comparison chains `a <= b <= c` desugar to `a <= b and b <= c`.
    fn cmp(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        let first = self.arith()?;
        let Some(op) = self.cmp_op() else {
            return Ok(first);
        };
        self.bump();
        let mut prev = self.arith()?;
        let mut acc = self.node(span, ExprKind::Cmp(op, Box::new(first), Box::new(prev.clone())));
        while let Some(op) = self.cmp_op() {
            self.bump();
            let next = self.arith()?;
            let link = self.node(prev.span, ExprKind::Cmp(op, Box::new(prev), Box::new(next.clone())));
            acc = self.node(span, ExprKind::And(Box::new(acc), Box::new(link)));
            prev = next;
        }
        Ok(acc)
    }

    fn arith(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => ArithOp::Add,
                Tok::Minus => ArithOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = self.node(span, ExprKind::Arith(op, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => ArithOp::Mul,
                Tok::Slash => ArithOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = self.node(span, ExprKind::Arith(op, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        if self.eat(&Tok::Minus) {
            let inner = self.unary()?;
            return Ok(self.node(span, ExprKind::Neg(Box::new(inner))));
        }
        self.index()
    }

    fn index(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        let mut lhs = self.app()?;
        while self.eat(&Tok::Bang) {
            let idx = self.atom()?;
            lhs = self.node(span, ExprKind::Index(Box::new(lhs), Box::new(idx)));
        }
        Ok(lhs)
    }

    fn is_decl_start(&self) -> bool {
        if !matches!(self.peek(), Tok::Ident(_)) {
            return false;
        }
        let mut k = 1;
        if self.peek_at(1) == &Tok::Colon {
            return true;
        }
        while matches!(self.peek_at(k), Tok::Ident(_)) {
            k += 1;
        }
        self.peek_at(k) == &Tok::Assign
    }

    fn starts_atom(&self) -> bool {
        match self.peek() {
            Tok::Num(_) | Tok::True | Tok::False | Tok::LParen | Tok::LBracket => true,
            Tok::Ident(_) => !self.is_decl_start(),
            _ => false,
        }
    }

    fn app(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        if let Tok::Ident(name) = self.peek().clone() {
            self.bump();
            let mut args = Vec::new();
            while self.starts_atom() {
                args.push(self.atom()?);
            }
            let kind = if args.is_empty() {
                ExprKind::Var(name)
            } else {
                ExprKind::App(name, args)
            };
            return Ok(self.node(span, kind));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Num(text) => {
                self.bump();
                let value = rational::parse_decimal(&text).ok_or_else(|| ParseError {
                    span,
                    message: format!("malformed number `{text}`"),
                    expected: Vec::new(),
                })?;
                Ok(self.node(span, ExprKind::Num(value)))
            }
            Tok::True => {
                self.bump();
                Ok(self.node(span, ExprKind::Bool(true)))
            }
            Tok::False => {
                self.bump();
                Ok(self.node(span, ExprKind::Bool(false)))
            }
            Tok::Ident(name) => {
                self.bump();
                Ok(self.node(span, ExprKind::Var(name)))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(&Tok::RParen)?;
                Ok(e)
            }
            Tok::LBracket => {
                self.bump();
                let mut items = Vec::new();
                if self.peek() != &Tok::RBracket {
                    items.push(self.expr()?);
                    while self.eat(&Tok::Comma) {
                        items.push(self.expr()?);
                    }
                }
                self.expect(&Tok::RBracket)?;
                Ok(self.node(span, ExprKind::TensorLit(items)))
            }
            _ => Err(self.error(&["expression"])),
        }
    }
}
