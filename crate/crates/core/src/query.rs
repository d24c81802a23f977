//! Network-level verification problems `⟨P, Q⟩`.
//!
//! A [`Query`] fixes a single network, a box and optional linear constraints
//! on its inputs (`P`), and a positive boolean combination of linear
//! inequalities on its outputs. With polarity
//! [`Polarity::FindCounterexampleTo`] the stored formula is already the
//! negated postcondition: the property holds iff no input in `P` satisfies it.

use crate::rational::{self, Rat};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// `X_k` (network input) or `Y_k` (network output).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    Input(usize),
    Output(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Input(k) => write!(f, "X_{k}"),
            Var::Output(k) => write!(f, "Y_{k}"),
        }
    }
}

/// Sparse affine expression `Σ c_v·v + d` with exact coefficients.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LinExpr {
    pub terms: BTreeMap<Var, Rat>,
    pub constant: Rat,
}

impl LinExpr {
    pub fn constant(c: Rat) -> Self {
        Self {
            terms: BTreeMap::new(),
            constant: c,
        }
    }

    pub fn var(v: Var) -> Self {
        Self::term(v, Rat::one())
    }

    pub fn term(v: Var, c: Rat) -> Self {
        let mut e = Self::default();
        e.add_term(v, c);
        e
    }

    pub fn add_term(&mut self, v: Var, c: Rat) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(v).or_insert_with(Rat::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.remove(&v);
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (v, c) in &other.terms {
            out.add_term(*v, c.clone());
        }
        out.constant += &other.constant;
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(&-Rat::one()))
    }

    pub fn scale(&self, k: &Rat) -> Self {
        if k.is_zero() {
            return Self::default();
        }
        Self {
            terms: self.terms.iter().map(|(v, c)| (*v, c * k)).collect(),
            constant: &self.constant * k,
        }
    }

    pub fn neg(&self) -> Self {
        self.scale(&-Rat::one())
    }

    pub fn mentions_inputs(&self) -> bool {
        self.terms.keys().any(|v| matches!(v, Var::Input(_)))
    }

    pub fn mentions_outputs(&self) -> bool {
        self.terms.keys().any(|v| matches!(v, Var::Output(_)))
    }

    /// Value at an assignment of inputs and outputs. Missing entries count as 0.
    pub fn eval(&self, inputs: &[Rat], outputs: &[Rat]) -> Rat {
        let zero = Rat::zero();
        self.terms.iter().fold(self.constant.clone(), |acc, (v, c)| {
            let x = match v {
                Var::Input(k) => inputs.get(*k).unwrap_or(&zero),
                Var::Output(k) => outputs.get(*k).unwrap_or(&zero),
            };
            acc + c * x
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rel {
    Le,
    Ge,
}

/// `expr ⋈ 0` with `⋈ ∈ {≤, ≥}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinIneq {
    pub expr: LinExpr,
    pub rel: Rel,
}

impl LinIneq {
    pub fn new(expr: LinExpr, rel: Rel) -> Self {
        Self { expr, rel }
    }

    /// `lhs ⋈ rhs`.
    pub fn compare(lhs: &LinExpr, rel: Rel, rhs: &LinExpr) -> Self {
        Self::new(lhs.sub(rhs), rel)
    }

    pub fn holds(&self, inputs: &[Rat], outputs: &[Rat]) -> bool {
        let v = self.expr.eval(inputs, outputs);
        match self.rel {
            Rel::Le => !v.is_positive(),
            Rel::Ge => !v.is_negative(),
        }
    }

    /// The same constraint written `e ≥ 0`.
    pub fn to_ge(&self) -> LinExpr {
        match self.rel {
            Rel::Ge => self.expr.clone(),
            Rel::Le => self.expr.neg(),
        }
    }

    /// Negation with strict inequalities weakened to non-strict:
    /// `¬(e ≤ 0)` is `e > 0`, searched as `e ≥ 0`.
    pub fn negate_weak(&self) -> Self {
        Self::new(
            self.expr.clone(),
            match self.rel {
                Rel::Le => Rel::Ge,
                Rel::Ge => Rel::Le,
            },
        )
    }

    /// Positive rescaling with integer coefficients (keeps decimal emission
    /// exact for any rational data).
    pub fn cleared(&self) -> Self {
        let l = rational::denominator_lcm(self.expr.terms.values().chain([&self.expr.constant]));
        self.scaled(&Rat::from_integer(l))
    }

    fn scaled(&self, k: &Rat) -> Self {
        debug_assert!(k.is_positive());
        Self::new(self.expr.scale(k), self.rel)
    }

    /// Canonical key: `≥` form with primitive integer coefficients.
    pub fn canonical(&self) -> CanonicalIneq {
        let ge = self.to_ge();
        let l = rational::denominator_lcm(ge.terms.values().chain([&ge.constant]));
        let lr = Rat::from_integer(l);
        let terms: Vec<(Var, BigInt)> = ge
            .terms
            .iter()
            .map(|(v, c)| (*v, (c * &lr).to_integer()))
            .collect();
        let constant = (&ge.constant * &lr).to_integer();
        let g = terms
            .iter()
            .map(|(_, c)| c.clone())
            .chain([constant.clone()])
            .fold(BigInt::zero(), |a, b| a.gcd(&b));
        if g.is_zero() || g.is_one() {
            return CanonicalIneq { terms, constant };
        }
        CanonicalIneq {
            terms: terms.into_iter().map(|(v, c)| (v, c / &g)).collect(),
            constant: constant / &g,
        }
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.expr.terms.keys()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalIneq {
    pub terms: Vec<(Var, BigInt)>,
    pub constant: BigInt,
}

/// Positive boolean combination of linear inequalities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Formula {
    Atom(LinIneq),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

/// Canonical, order-insensitive form of a [`Formula`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CanonicalFormula {
    Atom(CanonicalIneq),
    And(BTreeSet<CanonicalFormula>),
    Or(BTreeSet<CanonicalFormula>),
}

impl Formula {
    pub fn truth() -> Self {
        Formula::And(Vec::new())
    }

    pub fn falsity() -> Self {
        Formula::Or(Vec::new())
    }

    pub fn holds(&self, inputs: &[Rat], outputs: &[Rat]) -> bool {
        match self {
            Formula::Atom(a) => a.holds(inputs, outputs),
            Formula::And(fs) => fs.iter().all(|f| f.holds(inputs, outputs)),
            Formula::Or(fs) => fs.iter().any(|f| f.holds(inputs, outputs)),
        }
    }

    /// De Morgan dual with every atom weakly negated.
    pub fn negate_weak(&self) -> Self {
        match self {
            Formula::Atom(a) => Formula::Atom(a.negate_weak()),
            Formula::And(fs) => Formula::Or(fs.iter().map(Formula::negate_weak).collect()),
            Formula::Or(fs) => Formula::And(fs.iter().map(Formula::negate_weak).collect()),
        }
    }

    /// Flattens nested connectives of the same kind and unwraps singletons.
    pub fn flatten(self) -> Self {
        match self {
            Formula::Atom(_) => self,
            Formula::And(fs) => {
                let mut out = Vec::new();
                for f in fs.into_iter().map(Formula::flatten) {
                    match f {
                        Formula::And(inner) => out.extend(inner),
                        other => out.push(other),
                    }
                }
                if out.len() == 1 {
                    out.pop().unwrap()
                } else {
                    Formula::And(out)
                }
            }
            Formula::Or(fs) => {
                let mut out = Vec::new();
                for f in fs.into_iter().map(Formula::flatten) {
                    match f {
                        Formula::Or(inner) => out.extend(inner),
                        other => out.push(other),
                    }
                }
                if out.len() == 1 {
                    out.pop().unwrap()
                } else {
                    Formula::Or(out)
                }
            }
        }
    }

    /// Disjunctive normal form: a list of conjunctions. `None` if the
    /// expansion would exceed `limit` branches.
    pub fn dnf(&self, limit: usize) -> Option<Vec<Vec<LinIneq>>> {
        match self {
            Formula::Atom(a) => Some(vec![vec![a.clone()]]),
            Formula::Or(fs) => {
                let mut out = Vec::new();
                for f in fs {
                    out.extend(f.dnf(limit)?);
                    if out.len() > limit {
                        return None;
                    }
                }
                Some(out)
            }
            Formula::And(fs) => {
                let mut acc: Vec<Vec<LinIneq>> = vec![Vec::new()];
                for f in fs {
                    let branches = f.dnf(limit)?;
                    if acc.len() * branches.len() > limit {
                        return None;
                    }
                    acc = acc
                        .iter()
                        .flat_map(|a| {
                            branches.iter().map(move |b| {
                                let mut c = a.clone();
                                c.extend(b.iter().cloned());
                                c
                            })
                        })
                        .collect();
                }
                Some(acc)
            }
        }
    }

    pub fn atoms(&self) -> Vec<&LinIneq> {
        match self {
            Formula::Atom(a) => vec![a],
            Formula::And(fs) | Formula::Or(fs) => fs.iter().flat_map(Formula::atoms).collect(),
        }
    }

    pub fn canonical(&self) -> CanonicalFormula {
        match self.clone().flatten() {
            Formula::Atom(a) => CanonicalFormula::Atom(a.canonical()),
            Formula::And(fs) => CanonicalFormula::And(fs.iter().map(Formula::canonical).collect()),
            Formula::Or(fs) => CanonicalFormula::Or(fs.iter().map(Formula::canonical).collect()),
        }
    }

    pub fn map_atoms(&self, f: &impl Fn(&LinIneq) -> LinIneq) -> Self {
        match self {
            Formula::Atom(a) => Formula::Atom(f(a)),
            Formula::And(fs) => Formula::And(fs.iter().map(|g| g.map_atoms(f)).collect()),
            Formula::Or(fs) => Formula::Or(fs.iter().map(|g| g.map_atoms(f)).collect()),
        }
    }
}

/// `expr > 0` if `strict`, else `expr ≥ 0`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cond {
    pub expr: LinExpr,
    pub strict: bool,
}

impl Cond {
    pub fn holds(&self, inputs: &[Rat], outputs: &[Rat]) -> bool {
        let v = self.expr.eval(inputs, outputs);
        if self.strict {
            v.is_positive()
        } else {
            !v.is_negative()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    /// `post` is the postcondition `Q`; verification negates it.
    Prove,
    /// `post` is the satisfaction target `¬Q` (already negated).
    FindCounterexampleTo,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub name: String,
    pub network: String,
    pub input_box: Vec<(Rat, Rat)>,
    pub input_linear: Vec<LinIneq>,
    pub post: Formula,
    pub output_dim: usize,
    pub polarity: Polarity,
}

/// Upper bound on DNF branches when deciding a query.
pub const MAX_BRANCHES: usize = 4096;

impl Query {
    pub fn input_dim(&self) -> usize {
        self.input_box.len()
    }

    /// The formula a counterexample must satisfy.
    pub fn target(&self) -> Formula {
        match self.polarity {
            Polarity::FindCounterexampleTo => self.post.clone(),
            Polarity::Prove => self.post.negate_weak(),
        }
        .flatten()
    }

    /// Target in DNF; each branch is decided separately.
    pub fn target_branches(&self) -> Option<Vec<Vec<LinIneq>>> {
        self.target().dnf(MAX_BRANCHES)
    }

    /// Whether target atoms are strict: negating a postcondition `e ≤ 0`
    /// gives `e > 0`, while a stated target is taken as written.
    pub fn strict_target(&self) -> bool {
        self.polarity == Polarity::Prove
    }

    /// Target branches as `≥ 0` (or `> 0` when strict) conditions.
    pub fn counterexample_branches(&self) -> Option<Vec<Vec<Cond>>> {
        let strict = self.strict_target();
        Some(
            self.target_branches()?
                .into_iter()
                .map(|b| b.iter().map(|a| Cond { expr: a.to_ge(), strict }).collect())
                .collect(),
        )
    }

    /// `¬Q(y)` with exact strictness.
    pub fn is_counterexample(&self, x: &[Rat], y: &[Rat]) -> bool {
        fn go(f: &Formula, strict: bool, x: &[Rat], y: &[Rat]) -> bool {
            match f {
                Formula::Atom(a) => Cond { expr: a.to_ge(), strict }.holds(x, y),
                Formula::And(fs) => fs.iter().all(|g| go(g, strict, x, y)),
                Formula::Or(fs) => fs.iter().any(|g| go(g, strict, x, y)),
            }
        }
        go(&self.target(), self.strict_target(), x, y)
    }

    /// `P(x)`: inside the box and all linear input constraints hold.
    pub fn precondition_holds(&self, x: &[Rat]) -> bool {
        x.len() == self.input_dim()
            && x.iter().zip(&self.input_box).all(|(v, (lo, hi))| lo <= v && v <= hi)
            && self.input_linear.iter().all(|c| c.holds(x, &[]))
    }

    /// Same query with single-variable input constraints folded into the box.
    pub fn normalized(&self) -> Query {
        let mut q = self.clone();
        q.post = self.target();
        q.polarity = Polarity::FindCounterexampleTo;
        let mut rest = Vec::new();
        for c in &self.input_linear {
            let single = (c.expr.terms.len() == 1)
                .then(|| c.expr.terms.iter().next().unwrap())
                .and_then(|(v, k)| match v {
                    Var::Input(i) => Some((*i, k.clone())),
                    Var::Output(_) => None,
                });
            match single {
                Some((i, k)) if i < q.input_box.len() => {
                    // k·x + d ⋈ 0  ⇒  x ⋈' -d/k
                    let bound = -&c.expr.constant / &k;
                    let upper = (c.rel == Rel::Le) == k.is_positive();
                    let (lo, hi) = &mut q.input_box[i];
                    if upper {
                        if bound < *hi {
                            *hi = bound;
                        }
                    } else if bound > *lo {
                        *lo = bound;
                    }
                }
                _ => rest.push(c.clone()),
            }
        }
        q.input_linear = rest;
        q
    }

    /// Equality up to constraint order, positive rescaling and box folding.
    pub fn semantically_eq(&self, other: &Query) -> bool {
        let a = self.normalized();
        let b = other.normalized();
        let lin = |q: &Query| q.input_linear.iter().map(LinIneq::canonical).collect::<BTreeSet<_>>();
        a.input_box == b.input_box
            && a.output_dim == b.output_dim
            && lin(&a) == lin(&b)
            && a.post.canonical() == b.post.canonical()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};

    fn y(k: usize) -> LinExpr {
        LinExpr::var(Var::Output(k))
    }

    #[test]
    fn weak_negation_of_strict_dominance() {
        // ¬(y0 ≥ y1) searched as y0 − y1 ≤ 0
        let a = LinIneq::compare(&y(0), Rel::Ge, &y(1));
        let n = a.negate_weak();
        assert!(n.holds(&[], &[int(1), int(1)]));
        assert!(a.holds(&[], &[int(1), int(1)]));
    }

    #[test]
    fn canonical_ignores_scaling() {
        let a = LinIneq::compare(&y(0).scale(&ratio(1, 2)), Rel::Ge, &LinExpr::constant(ratio(1, 4)));
        let b = LinIneq::compare(&LinExpr::constant(int(1)), Rel::Le, &y(0).scale(&int(2)));
        assert_eq!(a.canonical(), b.canonical());
    }

    #[test]
    fn dnf_distributes() {
        let at = |k| Formula::Atom(LinIneq::new(y(k), Rel::Ge));
        let f = Formula::And(vec![Formula::Or(vec![at(0), at(1)]), Formula::Or(vec![at(2), at(3)])]);
        assert_eq!(f.dnf(100).unwrap().len(), 4);
        assert!(f.dnf(3).is_none());
    }

    #[test]
    fn normalized_folds_single_variable_constraints() {
        let q = Query {
            name: "q".into(),
            network: "n".into(),
            input_box: vec![(int(0), int(1))],
            input_linear: vec![LinIneq::new(
                LinExpr::term(Var::Input(0), int(2)).add(&LinExpr::constant(int(-1))),
                Rel::Le,
            )],
            post: Formula::Atom(LinIneq::new(y(0), Rel::Ge)),
            output_dim: 1,
            polarity: Polarity::FindCounterexampleTo,
        };
        let n = q.normalized();
        assert!(n.input_linear.is_empty());
        assert_eq!(n.input_box[0], (int(0), ratio(1, 2)));
    }
}
