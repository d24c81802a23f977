//! VNN-LIB emission and a parser for the emitted subset.
//!
//! Numerals are exact decimals: `0.01` denotes 1/100, as in SMT-LIB.
//! A document declares `X_0..X_{m-1}` and `Y_0..Y_{n-1}`, bounds every
//! input, and asserts the counterexample target.

use crate::query::{Formula, LinExpr, LinIneq, Polarity, Query, Rel, Var};
use crate::rational::{self, Rat};
use num_traits::{One, Signed, Zero};
use std::fmt::{self, Write as _};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EmitError {
    #[error("query `{0}` has no inputs")]
    NoInputs(String),
    #[error("query `{0}` refers to more than one network")]
    MultipleNetworks(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SExpr {
    Atom(String),
    List(Vec<SExpr>),
}

impl fmt::Display for SExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SExpr::Atom(a) => f.write_str(a),
            SExpr::List(items) => {
                f.write_char('(')?;
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_char(' ')?;
                    }
                    write!(f, "{it}")?;
                }
                f.write_char(')')
            }
        }
    }
}

fn atom(s: impl Into<String>) -> SExpr {
    SExpr::Atom(s.into())
}

fn list(items: Vec<SExpr>) -> SExpr {
    SExpr::List(items)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VnnLibDoc {
    /// Leading `;` comment lines (without the `; ` prefix).
    pub comments: Vec<String>,
    /// Declared variables, all of sort `Real`.
    pub decls: Vec<Var>,
    /// Bodies of the `assert` commands.
    pub asserts: Vec<SExpr>,
}

impl fmt::Display for VnnLibDoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.comments {
            writeln!(f, "; {c}")?;
        }
        for v in &self.decls {
            writeln!(f, "(declare-const {v} Real)")?;
        }
        for a in &self.asserts {
            writeln!(f, "(assert {a})")?;
        }
        Ok(())
    }
}

impl VnnLibDoc {
    pub fn file_name(query: &Query) -> String {
        format!("{}.vnnlib", query.name)
    }
}

fn number(r: &Rat) -> Option<SExpr> {
    rational::exact_decimal(r).map(atom)
}

fn int_atom(r: &Rat) -> SExpr {
    debug_assert!(r.is_integer());
    atom(r.to_integer().to_string())
}

fn rel_symbol(rel: Rel) -> &'static str {
    match rel {
        Rel::Le => "<=",
        Rel::Ge => ">=",
    }
}

fn flip(rel: Rel) -> Rel {
    match rel {
        Rel::Le => Rel::Ge,
        Rel::Ge => Rel::Le,
    }
}

/// `v ⋈ bound`, falling back to an integer-scaled form for bounds without a
/// terminating decimal expansion.
fn bound(v: Var, rel: Rel, b: &Rat) -> SExpr {
    match number(b) {
        Some(n) => list(vec![atom(rel_symbol(rel)), atom(v.to_string()), n]),
        None => {
            let d = Rat::from_integer(b.denom().clone());
            let n = Rat::from_integer(b.numer().clone());
            list(vec![
                atom(rel_symbol(rel)),
                list(vec![atom("*"), int_atom(&d), atom(v.to_string())]),
                int_atom(&n),
            ])
        }
    }
}

fn ineq(c: &LinIneq) -> SExpr {
    let e = &c.expr;
    let terms: Vec<(&Var, &Rat)> = e.terms.iter().collect();
    match terms.as_slice() {
        // c·v + d ⋈ 0  ⇒  v ⋈' −d/c
        [(v, k)] => {
            let rel = if k.is_positive() { c.rel } else { flip(c.rel) };
            return bound(**v, rel, &(-&e.constant / *k));
        }
        // k·(a − b) ⋈ 0, written `(>= a b)` with the positive side first.
        [(a, ka), (b, kb)] if e.constant.is_zero() && (*ka + *kb).is_zero() => {
            let ge = c.to_ge();
            let (p, q) = if ge.terms[a].is_positive() { (a, b) } else { (b, a) };
            return list(vec![atom(">="), atom(p.to_string()), atom(q.to_string())]);
        }
        _ => {}
    }
    let cl = c.cleared();
    let mut sum = vec![atom("+")];
    for (v, k) in &cl.expr.terms {
        if k.is_one() {
            sum.push(atom(v.to_string()));
        } else {
            sum.push(list(vec![atom("*"), int_atom(k), atom(v.to_string())]));
        }
    }
    let lhs = match sum.len() {
        1 => atom("0.0"),
        2 => sum.pop().unwrap(),
        _ => list(sum),
    };
    list(vec![atom(rel_symbol(cl.rel)), lhs, int_atom(&-&cl.expr.constant)])
}

fn formula(f: &Formula) -> SExpr {
    match f {
        Formula::Atom(c) => ineq(c),
        Formula::And(fs) => list(std::iter::once(atom("and")).chain(fs.iter().map(formula)).collect()),
        Formula::Or(fs) => list(std::iter::once(atom("or")).chain(fs.iter().map(formula)).collect()),
    }
}

/// Writes the counterexample-search form of `q`: declarations, then the box
/// (`<=` before `>=`, ascending by input), then linear input constraints,
/// then the target.
pub fn emit(q: &Query) -> Result<VnnLibDoc, EmitError> {
    if q.input_box.is_empty() {
        return Err(EmitError::NoInputs(q.name.clone()));
    }
    if q.network.contains(',') {
        return Err(EmitError::MultipleNetworks(q.name.clone()));
    }
    let mut decls: Vec<Var> = (0..q.input_dim()).map(Var::Input).collect();
    decls.extend((0..q.output_dim).map(Var::Output));
    let mut asserts = Vec::new();
    for (k, (lo, hi)) in q.input_box.iter().enumerate() {
        asserts.push(bound(Var::Input(k), Rel::Le, hi));
        asserts.push(bound(Var::Input(k), Rel::Ge, lo));
    }
    asserts.extend(q.input_linear.iter().map(ineq));
    match q.target() {
        Formula::And(fs) => asserts.extend(fs.iter().map(formula)),
        f => asserts.push(formula(&f)),
    }
    Ok(VnnLibDoc {
        comments: vec![format!("query: {}", q.name), format!("network: {}", q.network)],
        decls,
        asserts,
    })
}

pub fn emit_string(q: &Query) -> Result<String, EmitError> {
    emit(q).map(|d| d.to_string())
}

// ---------------------------------------------------------------- parsing

struct Reader<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    comments: Vec<String>,
}

impl Reader<'_> {
    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            message: message.into(),
        }
    }

    fn skip(&mut self) {
        while let Some(&c) = self.chars.peek() {
            match c {
                '\n' => {
                    self.line += 1;
                    self.chars.next();
                }
                c if c.is_whitespace() => {
                    self.chars.next();
                }
                ';' => {
                    let mut text = String::new();
                    while let Some(&c) = self.chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        text.push(c);
                        self.chars.next();
                    }
                    self.comments.push(text.trim_start_matches(';').trim().to_string());
                }
                _ => break,
            }
        }
    }

    fn sexpr(&mut self) -> Result<Option<(SExpr, usize)>, ParseError> {
        self.skip();
        let line = self.line;
        match self.chars.peek() {
            None => Ok(None),
            Some(')') => Err(self.err("unbalanced `)`")),
            Some('(') => {
                self.chars.next();
                let mut items = Vec::new();
                loop {
                    self.skip();
                    match self.chars.peek() {
                        None => return Err(self.err("unterminated list")),
                        Some(')') => {
                            self.chars.next();
                            return Ok(Some((SExpr::List(items), line)));
                        }
                        _ => items.push(self.sexpr()?.unwrap().0),
                    }
                }
            }
            Some(_) => {
                let mut s = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    s.push(c);
                    self.chars.next();
                }
                Ok(Some((SExpr::Atom(s), line)))
            }
        }
    }
}

fn parse_var(s: &str) -> Option<Var> {
    let (kind, idx) = s.split_once('_')?;
    let k: usize = idx.parse().ok()?;
    if idx.starts_with('+') || (idx.len() > 1 && idx.starts_with('0')) {
        return None;
    }
    match kind {
        "X" => Some(Var::Input(k)),
        "Y" => Some(Var::Output(k)),
        _ => None,
    }
}

fn term(e: &SExpr, declared: &std::collections::BTreeSet<Var>) -> Result<LinExpr, String> {
    match e {
        SExpr::Atom(a) => {
            if let Some(v) = parse_var(a) {
                if !declared.contains(&v) {
                    return Err(format!("`{a}` is not declared"));
                }
                return Ok(LinExpr::var(v));
            }
            rational::parse_decimal(a)
                .map(LinExpr::constant)
                .ok_or_else(|| format!("`{a}` is neither a variable nor a numeral"))
        }
        SExpr::List(items) => {
            let Some((SExpr::Atom(op), args)) = items.split_first() else {
                return Err("malformed term".into());
            };
            let args: Vec<LinExpr> = args.iter().map(|a| term(a, declared)).collect::<Result<_, _>>()?;
            match (op.as_str(), args.as_slice()) {
                ("+", _) if !args.is_empty() => Ok(args.iter().fold(LinExpr::default(), |acc, a| acc.add(a))),
                ("-", [a]) => Ok(a.neg()),
                ("-", [a, rest @ ..]) => Ok(rest.iter().fold(a.clone(), |acc, b| acc.sub(b))),
                ("*", [a, b]) if a.is_constant() => Ok(b.scale(&a.constant)),
                ("*", [a, b]) if b.is_constant() => Ok(a.scale(&b.constant)),
                ("*", _) => Err("nonlinear product".into()),
                ("/", [a, b]) if b.is_constant() && !b.constant.is_zero() => {
                    Ok(a.scale(&(Rat::one() / &b.constant)))
                }
                _ => Err(format!("operator `{op}` is outside the supported subset")),
            }
        }
    }
}

fn constraint(e: &SExpr, declared: &std::collections::BTreeSet<Var>) -> Result<Formula, String> {
    let SExpr::List(items) = e else {
        return Err(format!("`{e}` is not a constraint"));
    };
    let Some((SExpr::Atom(op), args)) = items.split_first() else {
        return Err("malformed constraint".into());
    };
    match op.as_str() {
        "and" | "or" => {
            let fs = args.iter().map(|a| constraint(a, declared)).collect::<Result<Vec<_>, _>>()?;
            Ok(if op == "and" { Formula::And(fs) } else { Formula::Or(fs) })
        }
        "<=" | ">=" => {
            let [a, b] = args else {
                return Err(format!("`{op}` takes two arguments"));
            };
            let rel = if op == "<=" { Rel::Le } else { Rel::Ge };
            Ok(Formula::Atom(LinIneq::compare(&term(a, declared)?, rel, &term(b, declared)?)))
        }
        other => Err(format!("operator `{other}` is outside the supported subset")),
    }
}

/// Parses a document in the emitted subset back into a query with polarity
/// [`Polarity::FindCounterexampleTo`]. Every input must be bounded.
pub fn parse_vnnlib(text: &str) -> Result<Query, ParseError> {
    let mut r = Reader {
        chars: text.chars().peekable(),
        line: 1,
        comments: Vec::new(),
    };
    let mut declared = std::collections::BTreeSet::new();
    let mut constraints = Vec::new();
    let mut seen_assert = false;
    while let Some((cmd, line)) = r.sexpr()? {
        let fail = |m: String| ParseError { line, message: m };
        let SExpr::List(items) = &cmd else {
            return Err(fail(format!("expected a command, found `{cmd}`")));
        };
        match items.as_slice() {
            [SExpr::Atom(c), SExpr::Atom(name), SExpr::Atom(sort)] if c == "declare-const" => {
                let v = parse_var(name).ok_or_else(|| fail(format!("variable `{name}` is not X_i or Y_j")))?;
                if sort != "Real" {
                    return Err(fail(format!("sort `{sort}` is not supported")));
                }
                if seen_assert {
                    return Err(fail("declarations must precede assertions".into()));
                }
                if !declared.insert(v) {
                    return Err(fail(format!("`{name}` declared twice")));
                }
            }
            [SExpr::Atom(c), body] if c == "assert" => {
                seen_assert = true;
                constraints.push(constraint(body, &declared).map_err(fail)?);
            }
            [SExpr::Atom(c), ..] => return Err(fail(format!("command `{c}` is outside the supported subset"))),
            _ => return Err(fail("malformed command".into())),
        }
    }
    let m = declared.iter().filter(|v| matches!(v, Var::Input(_))).count();
    let n = declared.len() - m;
    if declared.iter().any(|v| match v {
        Var::Input(k) => *k >= m,
        Var::Output(k) => *k >= n,
    }) {
        return Err(r.err("variables must be numbered densely from 0"));
    }
    if m == 0 {
        return Err(r.err("no input variables declared"));
    }

    let mut lo: Vec<Option<Rat>> = vec![None; m];
    let mut hi: Vec<Option<Rat>> = vec![None; m];
    let mut input_linear = Vec::new();
    let mut target = Vec::new();
    for c in constraints.into_iter().flat_map(|f| match f {
        Formula::And(fs) => fs,
        f => vec![f],
    }) {
        let single_input = match &c {
            Formula::Atom(a) if !a.expr.mentions_outputs() && a.expr.terms.len() == 1 => Some(a.clone()),
            _ => None,
        };
        match (single_input, &c) {
            (Some(a), _) => {
                let (v, k) = a.expr.terms.iter().next().unwrap();
                let Var::Input(i) = v else { unreachable!() };
                let b = -&a.expr.constant / k;
                let upper = (a.rel == Rel::Le) == k.is_positive();
                let slot = if upper { &mut hi[*i] } else { &mut lo[*i] };
                let tighter = match slot {
                    None => true,
                    Some(old) => (upper && b < *old) || (!upper && b > *old),
                };
                if tighter {
                    *slot = Some(b);
                }
            }
            (None, Formula::Atom(a)) if a.expr.mentions_inputs() && !a.expr.mentions_outputs() => {
                input_linear.push(a.clone())
            }
            _ => target.push(c),
        }
    }
    let mut input_box = Vec::new();
    for k in 0..m {
        match (lo[k].take(), hi[k].take()) {
            (Some(l), Some(h)) => input_box.push((l, h)),
            _ => return Err(r.err(format!("X_{k} is not bounded above and below"))),
        }
    }
    let field = |key: &str| {
        r.comments
            .iter()
            .find_map(|c| c.strip_prefix(key).map(|v| v.trim().to_string()))
            .unwrap_or_default()
    };
    Ok(Query {
        name: field("query:"),
        network: field("network:"),
        input_box,
        input_linear,
        post: Formula::And(target).flatten(),
        output_dim: n,
        polarity: Polarity::FindCounterexampleTo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::int;

    fn minimal() -> Query {
        Query {
            name: "q".into(),
            network: "f".into(),
            input_box: vec![(int(0), int(1))],
            input_linear: vec![],
            post: Formula::Atom(LinIneq::new(LinExpr::var(Var::Output(0)), Rel::Ge)),
            output_dim: 1,
            polarity: Polarity::Prove,
        }
    }

    #[test]
    fn minimal_query_has_two_declarations_and_three_asserts() {
        let doc = emit(&minimal()).unwrap();
        assert_eq!(doc.decls.len(), 2);
        assert_eq!(doc.asserts.len(), 3);
        let text = doc.to_string();
        assert!(text.contains("(assert (<= X_0 1.0))\n(assert (>= X_0 0.0))\n(assert (<= Y_0 0.0))\n"), "{text}");
    }

    #[test]
    fn rejects_unbounded_and_foreign_commands() {
        assert!(parse_vnnlib("(declare-const X_0 Real)\n(declare-const Y_0 Real)\n").is_err());
        let e = parse_vnnlib("(declare-fun X_0 () Real)").unwrap_err();
        assert!(e.message.contains("declare-fun"));
    }

    #[test]
    fn non_terminating_bounds_are_scaled() {
        let mut q = minimal();
        q.input_box = vec![(Rat::new(1.into(), 3.into()), int(1))];
        let text = emit_string(&q).unwrap();
        assert!(text.contains("(assert (>= (* 3 X_0) 1))"), "{text}");
        assert!(parse_vnnlib(&text).unwrap().semantically_eq(&q));
    }
}
