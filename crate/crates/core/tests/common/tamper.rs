//! Single-field mutations of a certificate's JSON.

use nnspec::rational::{parse_fraction, ratio, to_fraction};
use rand::Rng;
use serde_json::Value;

fn leaves<'a>(v: &'a mut Value, out: &mut Vec<&'a mut Value>) {
    match v {
        Value::Array(xs) => xs.iter_mut().for_each(|x| leaves(x, out)),
        Value::Object(m) => m.values_mut().for_each(|x| leaves(x, out)),
        _ => out.push(v),
    }
}

pub fn leaf_count(json: &str) -> usize {
    let mut v: Value = serde_json::from_str(json).unwrap();
    let mut out = Vec::new();
    leaves(&mut v, &mut out);
    out.len()
}

/// Mutates leaf `k` (in document order): rationals get `+1/1000`, other
/// strings an extra character, integers `+1`, booleans are flipped.
pub fn mutate(json: &str, k: usize) -> String {
    let mut v: Value = serde_json::from_str(json).unwrap();
    {
        let mut out = Vec::new();
        leaves(&mut v, &mut out);
        let leaf = &mut out[k];
        let new = match &**leaf {
            Value::String(s) => match parse_fraction(s) {
                Some(r) if s.contains('/') => Value::String(to_fraction(&(r + ratio(1, 1000)))),
                _ => Value::String(format!("{s}x")),
            },
            Value::Number(n) => Value::from(n.as_u64().unwrap_or(0) + 1),
            Value::Bool(b) => Value::Bool(!b),
            Value::Null => Value::from(0),
            _ => unreachable!(),
        };
        **leaf = new;
    }
    serde_json::to_string(&v).unwrap()
}

pub fn random_mutation(r: &mut impl Rng, json: &str) -> (usize, String) {
    let k = r.gen_range(0..leaf_count(json));
    (k, mutate(json, k))
}
