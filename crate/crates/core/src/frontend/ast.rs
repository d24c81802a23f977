//! Untyped syntax tree of a specification module.

use crate::rational::Rat;

/// Source position (1-based line and column) of a node's first token.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl std::fmt::Display for Span {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// Unique (per parse) expression identifier; keys the typechecker's tables.
pub type NodeId = u32;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SpecModule {
    pub decls: Vec<Decl>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decl {
    pub kind: DeclKind,
    pub span: Span,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DefRole {
    Plain,
    Embedding,
    Unembedding,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DeclKind {
    TypeAlias {
        name: String,
        ty: TypeExpr,
    },
    Network {
        name: String,
        input: TypeExpr,
        output: TypeExpr,
    },
    Dataset {
        name: String,
        ty: TypeExpr,
    },
    Parameter {
        name: String,
        ty: TypeExpr,
        infer: bool,
    },
    Def {
        name: String,
        role: DefRole,
        ty: TypeExpr,
        params: Vec<String>,
        body: Expr,
    },
    Property {
        name: String,
        ty: TypeExpr,
        body: Expr,
    },
}

impl DeclKind {
    pub fn name(&self) -> &str {
        match self {
            DeclKind::TypeAlias { name, .. }
            | DeclKind::Network { name, .. }
            | DeclKind::Dataset { name, .. }
            | DeclKind::Parameter { name, .. }
            | DeclKind::Def { name, .. }
            | DeclKind::Property { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DimExpr {
    Lit(u64),
    Param(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TypeExpr {
    Rat,
    Bool,
    Nat,
    Index(DimExpr),
    Tensor(Box<TypeExpr>, Vec<DimExpr>),
    Named(String),
    Fun(Box<TypeExpr>, Box<TypeExpr>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    pub id: NodeId,
    pub span: Span,
    pub kind: ExprKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Le,
    Lt,
    Ge,
    Gt,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Le => "<=",
            CmpOp::Lt => "<",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantifier {
    Forall,
    Exists,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Binder {
    pub name: String,
    pub ty: Option<TypeExpr>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExprKind {
    /// Non-negative numeric literal (negation is a separate node).
    Num(Rat),
    Bool(bool),
    Var(String),
    TensorLit(Vec<Expr>),
    /// `tensor ! index`
    Index(Box<Expr>, Box<Expr>),
    /// Application of a top-level definition or network to arguments.
    App(String, Vec<Expr>),
    Neg(Box<Expr>),
    Arith(ArithOp, Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Implies(Box<Expr>, Box<Expr>),
    Quant(Quantifier, Vec<Binder>, Box<Expr>),
    Foreach(Vec<Binder>, Box<Expr>),
    Let(String, Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Visits every sub-expression, parents first.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Num(_) | ExprKind::Bool(_) | ExprKind::Var(_) => {}
            ExprKind::TensorLit(es) | ExprKind::App(_, es) => es.iter().for_each(|e| e.walk(f)),
            ExprKind::Neg(a) | ExprKind::Not(a) | ExprKind::Quant(_, _, a) | ExprKind::Foreach(_, a) => {
                a.walk(f)
            }
            ExprKind::Index(a, b)
            | ExprKind::Arith(_, a, b)
            | ExprKind::Cmp(_, a, b)
            | ExprKind::And(a, b)
            | ExprKind::Or(a, b)
            | ExprKind::Implies(a, b)
            | ExprKind::Let(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
        }
    }
}

impl SpecModule {
    /// Copy with every span and node id zeroed, for structural comparison.
    pub fn stripped(&self) -> SpecModule {
        SpecModule {
            decls: self
                .decls
                .iter()
                .map(|d| Decl {
                    span: Span::default(),
                    kind: match &d.kind {
                        DeclKind::Def {
                            name,
                            role,
                            ty,
                            params,
                            body,
                        } => DeclKind::Def {
                            name: name.clone(),
                            role: *role,
                            ty: ty.clone(),
                            params: params.clone(),
                            body: body.stripped(),
                        },
                        DeclKind::Property { name, ty, body } => DeclKind::Property {
                            name: name.clone(),
                            ty: ty.clone(),
                            body: body.stripped(),
                        },
                        other => other.clone(),
                    },
                })
                .collect(),
        }
    }
}

impl Expr {
    pub fn stripped(&self) -> Expr {
        let b = |e: &Expr| Box::new(e.stripped());
        let kind = match &self.kind {
            ExprKind::Num(r) => ExprKind::Num(r.clone()),
            ExprKind::Bool(v) => ExprKind::Bool(*v),
            ExprKind::Var(v) => ExprKind::Var(v.clone()),
            ExprKind::TensorLit(es) => ExprKind::TensorLit(es.iter().map(Expr::stripped).collect()),
            ExprKind::Index(x, i) => ExprKind::Index(b(x), b(i)),
            ExprKind::App(f, es) => ExprKind::App(f.clone(), es.iter().map(Expr::stripped).collect()),
            ExprKind::Neg(a) => ExprKind::Neg(b(a)),
            ExprKind::Arith(op, x, y) => ExprKind::Arith(*op, b(x), b(y)),
            ExprKind::Cmp(op, x, y) => ExprKind::Cmp(*op, b(x), b(y)),
            ExprKind::Not(a) => ExprKind::Not(b(a)),
            ExprKind::And(x, y) => ExprKind::And(b(x), b(y)),
            ExprKind::Or(x, y) => ExprKind::Or(b(x), b(y)),
            ExprKind::Implies(x, y) => ExprKind::Implies(b(x), b(y)),
            ExprKind::Quant(q, bs, a) => ExprKind::Quant(*q, bs.clone(), b(a)),
            ExprKind::Foreach(bs, a) => ExprKind::Foreach(bs.clone(), b(a)),
            ExprKind::Let(n, x, y) => ExprKind::Let(n.clone(), b(x), b(y)),
        };
        Expr {
            id: 0,
            span: Span::default(),
            kind,
        }
    }
}
