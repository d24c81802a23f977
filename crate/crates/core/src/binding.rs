//! Binding `@network`, `@dataset` and `@parameter` declarations to concrete
//! models, CSV files and values.

use crate::frontend::{Dim, Global, Ty, TypedModule};
use crate::model::{self, Network};
use crate::rational::{self, Rat};
use num_traits::{Signed, ToPrimitive};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BindError {
    #[error("no binding for {kind} `{name}`")]
    Missing { kind: &'static str, name: String },
    #[error("`{name}`: {detail}")]
    Shape { name: String, detail: String },
    #[error("cannot read {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("`{name}`: {detail}")]
    Value { name: String, detail: String },
    #[error("manifest: {0}")]
    Manifest(String),
}

/// Which columns of a CSV file make up a dataset.
#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Select {
    #[default]
    Features,
    Labels,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub path: PathBuf,
    #[serde(default)]
    pub header: bool,
    #[serde(default)]
    pub label_column: Option<ColumnRef>,
    #[serde(default)]
    pub select: Select,
    /// Declared per-feature range `[lo, hi]`, checked by [`validate`].
    #[serde(default)]
    pub bounds: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum DatasetEntry {
    Path(PathBuf),
    Source(DatasetSource),
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Number(f64),
    /// Exact decimal or `p/q` text.
    Text(String),
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub networks: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetEntry>,
    #[serde(default)]
    pub parameters: BTreeMap<String, ParamValue>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Manifest, BindError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| BindError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| BindError::Manifest(e.to_string()))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Rat(Rat),
    Nat(u64),
    Bool(bool),
}

/// A dataset: one flattened element (row-major) per CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Vec<Rat>>,
    /// Element shape (the declared type without the leading length).
    pub elem_shape: Vec<usize>,
    pub bounds: Option<(Rat, Rat)>,
}

#[derive(Clone, Debug, Default)]
pub struct Bindings {
    pub networks: BTreeMap<String, Network>,
    pub datasets: BTreeMap<String, Dataset>,
    pub parameters: BTreeMap<String, Value>,
    /// `infer=True` parameters resolved from data.
    pub inferred: BTreeMap<String, u64>,
}

impl Bindings {
    pub fn nat(&self, name: &str) -> Option<u64> {
        match self.parameters.get(name) {
            Some(Value::Nat(n)) => Some(*n),
            _ => self.inferred.get(name).copied(),
        }
    }

    pub fn dim(&self, d: &Dim) -> Option<u64> {
        match d {
            Dim::Lit(n) => Some(*n),
            Dim::Param(p) => self.nat(p),
        }
    }

    pub fn shape(&self, t: &Ty) -> Option<Vec<usize>> {
        t.shape().iter().map(|d| self.dim(d).map(|n| n as usize)).collect()
    }
}

/// Text of a manifest number: the shortest decimal that reads back as the
/// same `f64`, so `0.01` in JSON means exactly 1/100.
fn number_value(v: f64) -> Option<Rat> {
    v.is_finite()
        .then(|| rational::parse_decimal(&rational::shortest_f64(v)))
        .flatten()
}

fn convert_param(name: &str, ty: &Ty, v: &ParamValue) -> Result<Value, BindError> {
    let bad = |detail: String| BindError::Value {
        name: name.to_string(),
        detail,
    };
    let exact = match v {
        ParamValue::Bool(b) => {
            return match ty {
                Ty::Bool => Ok(Value::Bool(*b)),
                _ => Err(bad(format!("expected {ty}, found a boolean"))),
            }
        }
        ParamValue::Number(x) => number_value(*x).ok_or_else(|| bad("non-finite number".into()))?,
        ParamValue::Text(s) => {
            rational::parse_fraction(s).ok_or_else(|| bad(format!("`{s}` is not a number")))?
        }
    };
    match ty {
        Ty::Rat => Ok(Value::Rat(exact)),
        Ty::Nat if exact.is_integer() && !exact.is_negative() => exact
            .to_integer()
            .to_u64()
            .map(Value::Nat)
            .ok_or_else(|| bad("value too large".into())),
        Ty::Nat => Err(bad(format!("{exact} is not a natural number"))),
        _ => Err(bad(format!("expected {ty}, found a number"))),
    }
}

fn read_csv(name: &str, path: &Path, src: &DatasetSource) -> Result<Vec<Vec<Rat>>, BindError> {
    let io = |detail: String| BindError::Io {
        path: path.display().to_string(),
        detail,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(src.header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io(e.to_string()))?;
    let label_idx = match &src.label_column {
        None => None,
        Some(ColumnRef::Index(i)) => Some(*i),
        Some(ColumnRef::Name(col)) => {
            let headers = reader.headers().map_err(|e| io(e.to_string()))?;
            Some(headers.iter().position(|h| h == col).ok_or_else(|| BindError::Manifest(format!(
                "dataset `{name}`: no column named `{col}`"
            )))?)
        }
    };
    if src.select == Select::Labels && label_idx.is_none() {
        return Err(BindError::Manifest(format!(
            "dataset `{name}` selects labels but names no label_column"
        )));
    }
    let mut rows = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| io(e.to_string()))?;
        let mut row = Vec::new();
        for (c, field) in rec.iter().enumerate() {
            let keep = match src.select {
                Select::Features => Some(c) != label_idx,
                Select::Labels => Some(c) == label_idx,
            };
            if keep {
                let v = rational::parse_decimal(field)
                    .ok_or_else(|| io(format!("row {r}, column {c}: `{field}` is not a decimal number")))?;
                row.push(v);
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Binds every declaration of `m` using `manifest`, with `overrides` (from
/// command-line flags) taking precedence over manifest parameters.
pub fn bind(
    m: &TypedModule,
    manifest: &Manifest,
    overrides: &BTreeMap<String, ParamValue>,
) -> Result<Bindings, BindError> {
    let mut b = Bindings::default();
    let mut raw_datasets = BTreeMap::new();
    for name in &m.order {
        match &m.globals[name] {
            Global::Network { .. } => {
                let path = manifest.networks.get(name).ok_or_else(|| BindError::Missing {
                    kind: "network",
                    name: name.clone(),
                })?;
                let net = model::load_network(manifest.resolve(path)).map_err(|e| BindError::Io {
                    path: path.display().to_string(),
                    detail: e.to_string(),
                })?;
                b.networks.insert(name.clone(), net);
            }
            Global::Dataset { .. } => {
                let entry = manifest.datasets.get(name).ok_or_else(|| BindError::Missing {
                    kind: "dataset",
                    name: name.clone(),
                })?;
                let src = match entry {
                    DatasetEntry::Path(p) => DatasetSource {
                        path: p.clone(),
                        header: false,
                        label_column: None,
                        select: Select::Features,
                        bounds: None,
                    },
                    DatasetEntry::Source(s) => s.clone(),
                };
                let rows = read_csv(name, &manifest.resolve(&src.path), &src)?;
                raw_datasets.insert(name.clone(), (rows, src.bounds));
            }
            Global::Parameter { ty, infer } => {
                let given = overrides.get(name).or_else(|| manifest.parameters.get(name));
                match given {
                    Some(v) => {
                        b.parameters.insert(name.clone(), convert_param(name, ty, v)?);
                    }
                    None if *infer => {}
                    None => {
                        return Err(BindError::Missing {
                            kind: "parameter",
                            name: name.clone(),
                        })
                    }
                }
            }
            _ => {}
        }
    }
    for (name, (rows, _)) in &raw_datasets {
        let Global::Dataset { ty } = &m.globals[name] else { unreachable!() };
        if let Some(Dim::Param(p)) = ty.shape().first() {
            let n = rows.len() as u64;
            if let Some(given) = b.nat(p) {
                if given != n {
                    return Err(BindError::Shape {
                        name: name.clone(),
                        detail: format!("has {n} rows but `{p}` is {given}"),
                    });
                }
            } else {
                b.inferred.insert(p.clone(), n);
            }
        }
    }
    for name in &m.order {
        if let Global::Parameter { infer: true, .. } = &m.globals[name] {
            if b.nat(name).is_none() {
                return Err(BindError::Missing {
                    kind: "parameter (not inferable from any dataset)",
                    name: name.clone(),
                });
            }
        }
    }
    for (name, (rows, bounds)) in raw_datasets {
        let Global::Dataset { ty } = &m.globals[&name] else { unreachable!() };
        let shape = b.shape(ty).ok_or_else(|| BindError::Shape {
            name: name.clone(),
            detail: "shape mentions an unbound parameter".into(),
        })?;
        if shape[0] != rows.len() {
            return Err(BindError::Shape {
                name: name.clone(),
                detail: format!("declared {} rows, file has {}", shape[0], rows.len()),
            });
        }
        let elem_shape = shape[1..].to_vec();
        let width: usize = elem_shape.iter().product();
        if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != width) {
            return Err(BindError::Shape {
                name: name.clone(),
                detail: format!("row {r} has {} values, element type needs {width}", row.len()),
            });
        }
        let bounds = match bounds {
            Some((lo, hi)) => Some((
                number_value(lo).ok_or_else(|| BindError::Manifest(format!("dataset `{name}`: bad bounds")))?,
                number_value(hi).ok_or_else(|| BindError::Manifest(format!("dataset `{name}`: bad bounds")))?,
            )),
            None => None,
        };
        b.datasets.insert(
            name,
            Dataset {
                rows,
                elem_shape,
                bounds,
            },
        );
    }
    for name in &m.order {
        if let Global::Network { input, output } = &m.globals[name] {
            let net = &b.networks[name];
            for (t, actual, side) in [(input, net.input_dim(), "input"), (output, net.output_dim(), "output")] {
                let declared: usize = b.shape(t).map(|s| s.iter().product()).unwrap_or(0);
                if declared != actual {
                    return Err(BindError::Shape {
                        name: name.clone(),
                        detail: format!("declared {side} {t} has {declared} components, model has {actual}"),
                    });
                }
            }
        }
    }
    for ob in &m.dim_obligations {
        let (l, r) = (b.dim(&ob.left), b.dim(&ob.right));
        if l != r {
            return Err(BindError::Shape {
                name: format!("{}", ob.span),
                detail: format!("dimension {} (= {l:?}) does not match {} (= {r:?})", ob.left, ob.right),
            });
        }
    }
    Ok(b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub dataset: String,
    pub row: usize,
    pub feature: usize,
    pub value: Rat,
    pub bound: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Reports every dataset value outside its declared range. `Index k`
/// elements must be integers in `0..k`; `Rat` elements are checked against
/// the manifest's `bounds`, when given.
pub fn validate(b: &Bindings, m: &TypedModule) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (name, ds) in &b.datasets {
        let Some(Global::Dataset { ty }) = m.globals.get(name) else { continue };
        let index_bound = match ty.elem() {
            Ty::Index(d) => b.dim(d),
            _ => None,
        };
        for (r, row) in ds.rows.iter().enumerate() {
            for (f, v) in row.iter().enumerate() {
                let bad = if let Some(k) = index_bound {
                    let ok = v.is_integer() && !v.is_negative() && *v < Rat::from_integer((k as i64).into());
                    (!ok).then(|| format!("Index {k} (valid 0..{})", k.saturating_sub(1)))
                } else if let Some((lo, hi)) = &ds.bounds {
                    (v < lo || v > hi).then(|| format!("[{}, {}]", rational::to_fraction(lo), rational::to_fraction(hi)))
                } else {
                    None
                };
                if let Some(bound) = bad {
                    report.violations.push(Violation {
                        dataset: name.clone(),
                        row: r,
                        feature: f,
                        value: v.clone(),
                        bound,
                    });
                }
            }
        }
    }
    report
}
