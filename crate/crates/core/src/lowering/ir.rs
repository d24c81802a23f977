//! Ground instances: a property with every finite quantifier, dataset
//! access, parameter and definition resolved, leaving only continuous
//! problem-space variables and network applications symbolic.

use crate::frontend::CmpOp;
use crate::query::{Formula, LinExpr, LinIneq, Rel};
use crate::rational::Rat;
use num_traits::{Signed, Zero};

/// Quantifier-free formula over linear atoms `e ⋈ 0`. Unlike
/// [`Formula`], it keeps strictness and negation, so it can be translated
/// both to a verification target and to a differentiable loss.
#[derive(Clone, Debug, PartialEq)]
pub enum Prop {
    Const(bool),
    Atom(LinExpr, CmpOp),
    Not(Box<Prop>),
    And(Vec<Prop>),
    Or(Vec<Prop>),
}

impl Prop {
    /// `e ⋈ 0`, decided immediately when `e` is constant.
    pub fn atom(e: LinExpr, op: CmpOp) -> Prop {
        if e.is_constant() {
            return Prop::Const(decide(&e.constant, op));
        }
        Prop::Atom(e, op)
    }

    pub fn and(items: Vec<Prop>) -> Prop {
        let mut out = Vec::new();
        for p in items {
            match p {
                Prop::Const(true) => {}
                Prop::Const(false) => return Prop::Const(false),
                Prop::And(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Prop::Const(true),
            1 => out.pop().unwrap(),
            _ => Prop::And(out),
        }
    }

    pub fn or(items: Vec<Prop>) -> Prop {
        let mut out = Vec::new();
        for p in items {
            match p {
                Prop::Const(false) => {}
                Prop::Const(true) => return Prop::Const(true),
                Prop::Or(inner) => out.extend(inner),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Prop::Const(false),
            1 => out.pop().unwrap(),
            _ => Prop::Or(out),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(p: Prop) -> Prop {
        match p {
            Prop::Const(b) => Prop::Const(!b),
            Prop::Not(inner) => *inner,
            other => Prop::Not(Box::new(other)),
        }
    }

    pub fn implies(a: Prop, b: Prop) -> Prop {
        Prop::or(vec![Prop::not(a), b])
    }

    pub fn iff(a: Prop, b: Prop) -> Prop {
        Prop::or(vec![
            Prop::and(vec![a.clone(), b.clone()]),
            Prop::and(vec![Prop::not(a), Prop::not(b)]),
        ])
    }

    /// Exact truth value at an assignment.
    pub fn holds(&self, inputs: &[Rat], outputs: &[Rat]) -> bool {
        match self {
            Prop::Const(b) => *b,
            Prop::Atom(e, op) => decide(&e.eval(inputs, outputs), *op),
            Prop::Not(p) => !p.holds(inputs, outputs),
            Prop::And(ps) => ps.iter().all(|p| p.holds(inputs, outputs)),
            Prop::Or(ps) => ps.iter().any(|p| p.holds(inputs, outputs)),
        }
    }

    /// Negation normal form: negations pushed onto atoms by flipping the
    /// comparison exactly (`¬(e ≤ 0)` is `e > 0`).
    pub fn nnf(&self, negate: bool) -> Prop {
        match self {
            Prop::Const(b) => Prop::Const(*b != negate),
            Prop::Atom(e, op) => Prop::Atom(e.clone(), if negate { complement(*op) } else { *op }),
            Prop::Not(p) => p.nnf(!negate),
            Prop::And(ps) => {
                let items = ps.iter().map(|p| p.nnf(negate)).collect();
                if negate {
                    Prop::or(items)
                } else {
                    Prop::and(items)
                }
            }
            Prop::Or(ps) => {
                let items = ps.iter().map(|p| p.nnf(negate)).collect();
                if negate {
                    Prop::and(items)
                } else {
                    Prop::or(items)
                }
            }
        }
    }

    /// Closure of an NNF proposition as a positive formula over non-strict
    /// inequalities: `<` becomes `≤`, `≠` becomes `≤ ∨ ≥`. The result is
    /// implied by the input, so infeasibility of the closure is sound.
    pub fn to_formula(&self) -> Formula {
        match self {
            Prop::Const(true) => Formula::truth(),
            Prop::Const(false) => Formula::falsity(),
            Prop::Atom(e, op) => {
                let le = || Formula::Atom(LinIneq::new(e.clone(), Rel::Le));
                let ge = || Formula::Atom(LinIneq::new(e.clone(), Rel::Ge));
                match op {
                    CmpOp::Le | CmpOp::Lt => le(),
                    CmpOp::Ge | CmpOp::Gt => ge(),
                    CmpOp::Eq => Formula::And(vec![le(), ge()]),
                    CmpOp::Ne => Formula::Or(vec![le(), ge()]),
                }
            }
            Prop::Not(p) => p.nnf(true).to_formula(),
            Prop::And(ps) => Formula::And(ps.iter().map(Prop::to_formula).collect()).flatten(),
            Prop::Or(ps) => Formula::Or(ps.iter().map(Prop::to_formula).collect()).flatten(),
        }
    }

    pub fn atoms(&self) -> Vec<(&LinExpr, CmpOp)> {
        match self {
            Prop::Const(_) => Vec::new(),
            Prop::Atom(e, op) => vec![(e, *op)],
            Prop::Not(p) => p.atoms(),
            Prop::And(ps) | Prop::Or(ps) => ps.iter().flat_map(Prop::atoms).collect(),
        }
    }
}

pub fn complement(op: CmpOp) -> CmpOp {
    match op {
        CmpOp::Le => CmpOp::Gt,
        CmpOp::Lt => CmpOp::Ge,
        CmpOp::Ge => CmpOp::Lt,
        CmpOp::Gt => CmpOp::Le,
        CmpOp::Eq => CmpOp::Ne,
        CmpOp::Ne => CmpOp::Eq,
    }
}

pub fn decide(v: &Rat, op: CmpOp) -> bool {
    match op {
        CmpOp::Le => !v.is_positive(),
        CmpOp::Lt => v.is_negative(),
        CmpOp::Ge => !v.is_negative(),
        CmpOp::Gt => v.is_positive(),
        CmpOp::Eq => v.is_zero(),
        CmpOp::Ne => !v.is_zero(),
    }
}

/// A network applied to an argument that depends on problem variables.
#[derive(Clone, Debug, PartialEq)]
pub struct NetApp {
    pub network: String,
    /// One affine expression over problem variables per network input.
    pub args: Vec<LinExpr>,
    /// Index of this application's first output in the `Y` numbering.
    pub output_base: usize,
    pub output_dim: usize,
}

/// A ground instance of a property. Problem variables are numbered with
/// `Var::Input`, outputs of all applications with `Var::Output`.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub property: String,
    pub index: Vec<usize>,
    /// Display names of the continuous problem variables, e.g. `perturbation[3,4]`.
    pub vars: Vec<String>,
    pub apps: Vec<NetApp>,
    /// The instance holds iff `prop` holds for every value of the variables.
    pub prop: Prop,
}

impl Instance {
    pub fn name(&self) -> String {
        if self.index.is_empty() {
            self.property.clone()
        } else {
            let idx: Vec<String> = self.index.iter().map(ToString::to_string).collect();
            format!("{}_{}", self.property, idx.join("_"))
        }
    }
}
