use std::fmt;

/// A tensor dimension: a literal, or a `Nat` parameter fixed at bind time.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dim {
    Lit(u64),
    Param(String),
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Lit(n) => write!(f, "{n}"),
            Dim::Param(p) => f.write_str(p),
        }
    }
}

/// Resolved (or partially resolved) type of an expression.
///
/// Tensors are kept flat: the element of a `Tensor` is never itself a tensor
/// once all metavariables are solved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Ty {
    Rat,
    Bool,
    Nat,
    Index(Dim),
    Tensor(Box<Ty>, Vec<Dim>),
    Fun(Vec<Ty>, Box<Ty>),
    Meta(u32),
    /// Poison type produced after a reported error; unifies with everything.
    Error,
}

pub const MAX_RANK: usize = 4;

impl Ty {
    pub fn tensor(elem: Ty, dims: Vec<Dim>) -> Ty {
        if dims.is_empty() {
            return elem;
        }
        match elem {
            Ty::Tensor(inner, rest) => {
                let mut all = dims;
                all.extend(rest);
                Ty::Tensor(inner, all)
            }
            other => Ty::Tensor(Box::new(other), dims),
        }
    }

    /// Shape as a list of dimensions (empty for scalars).
    pub fn shape(&self) -> &[Dim] {
        match self {
            Ty::Tensor(_, ds) => ds,
            _ => &[],
        }
    }

    pub fn elem(&self) -> &Ty {
        match self {
            Ty::Tensor(e, _) => e,
            other => other,
        }
    }

    /// The type obtained by indexing once into the leading dimension.
    pub fn indexed(&self) -> Option<(Dim, Ty)> {
        match self {
            Ty::Tensor(e, ds) => {
                let rest = ds[1..].to_vec();
                Some((ds[0].clone(), Ty::tensor((**e).clone(), rest)))
            }
            _ => None,
        }
    }

    pub fn is_numeric_scalar(&self) -> bool {
        matches!(self, Ty::Rat | Ty::Nat)
    }

    pub fn contains_meta(&self) -> bool {
        match self {
            Ty::Meta(_) => true,
            Ty::Tensor(e, _) => e.contains_meta(),
            Ty::Fun(ps, r) => ps.iter().any(Ty::contains_meta) || r.contains_meta(),
            _ => false,
        }
    }
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ty::Rat => f.write_str("Rat"),
            Ty::Bool => f.write_str("Bool"),
            Ty::Nat => f.write_str("Nat"),
            Ty::Index(d) => write!(f, "Index {d}"),
            Ty::Tensor(e, ds) => {
                let ds: Vec<String> = ds.iter().map(ToString::to_string).collect();
                match **e {
                    Ty::Index(_) => write!(f, "Tensor ({e}) [{}]", ds.join(", ")),
                    _ => write!(f, "Tensor {e} [{}]", ds.join(", ")),
                }
            }
            Ty::Fun(ps, r) => {
                for p in ps {
                    match p {
                        Ty::Fun(..) => write!(f, "({p}) -> ")?,
                        _ => write!(f, "{p} -> ")?,
                    }
                }
                write!(f, "{r}")
            }
            Ty::Meta(_) => f.write_str("?"),
            Ty::Error => f.write_str("<error>"),
        }
    }
}
