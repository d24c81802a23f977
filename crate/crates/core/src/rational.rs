//! Exact rational numbers and their textual forms.
//!
//! Every decision procedure in the crate works over [`Rat`]. Floating-point
//! literals are promoted exactly (a finite `f64` is a dyadic rational), and
//! rationals are written back either as `"p/q"` strings (certificates) or as
//! positional decimals (VNN-LIB).

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rat = BigRational;

pub fn int(v: i64) -> Rat {
    Rat::from_integer(BigInt::from(v))
}

pub fn ratio(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// Exact value of a finite `f64`. `None` for NaN and infinities.
pub fn from_f64(v: f64) -> Option<Rat> {
    if !v.is_finite() {
        return None;
    }
    Rat::from_float(v)
}

pub fn from_f32(v: f32) -> Option<Rat> {
    from_f64(v as f64)
}

/// Nearest `f64` (ties to even), computed with an exact neighbour check.
pub fn to_f64(r: &Rat) -> f64 {
    let guess = r.to_f64().unwrap_or(if r.is_negative() {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    });
    if !guess.is_finite() {
        return guess;
    }
    let mut best = guess;
    let mut best_err = (from_f64(guess).unwrap() - r).abs();
    for cand in [guess.next_down(), guess.next_up()] {
        if let Some(c) = from_f64(cand) {
            let err = (c - r).abs();
            if err < best_err {
                best = cand;
                best_err = err;
            }
        }
    }
    best
}

/// Largest `f64` that is `<= r`.
pub fn f64_floor(r: &Rat) -> f64 {
    let f = to_f64(r);
    match from_f64(f) {
        Some(v) if &v > r => f.next_down(),
        _ => f,
    }
}

/// Smallest `f64` that is `>= r`.
pub fn f64_ceil(r: &Rat) -> f64 {
    let f = to_f64(r);
    match from_f64(f) {
        Some(v) if &v < r => f.next_up(),
        _ => f,
    }
}

/// Nearest `f32` of an exact rational (via the nearest `f64`; double rounding
/// cannot occur for values that are already `f32`-representable).
pub fn to_f32(r: &Rat) -> f32 {
    to_f64(r) as f32
}

/// `true` when `r` is exactly some finite `f64`.
pub fn is_f64_exact(r: &Rat) -> bool {
    let f = to_f64(r);
    f.is_finite() && from_f64(f).as_ref() == Some(r)
}

/// `"p/q"` with `q >= 1`.
pub fn to_fraction(r: &Rat) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Parses `"p/q"`, a bare integer, or a decimal literal.
pub fn parse_fraction(s: &str) -> Option<Rat> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(Rat::new(n, d));
    }
    parse_decimal(s)
}

/// Exact value of a decimal literal such as `-58.23`, `1e-3` or `7`.
pub fn parse_decimal(s: &str) -> Option<Rat> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(pos) => {
            let exp: i64 = s[pos + 1..].parse().ok()?;
            (&s[..pos], exp)
        }
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.as_bytes().first()? {
        b'-' => (true, &mantissa[1..]),
        b'+' => (false, &mantissa[1..]),
        _ => (false, mantissa),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let all: String = format!("{int_part}{frac_part}");
    let mut value = Rat::from_integer(all.parse::<BigInt>().unwrap_or_default());
    let scale = exponent - frac_part.len() as i64;
    let ten = BigInt::from(10u32);
    if scale >= 0 {
        value *= Rat::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        value /= Rat::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    if negative {
        value = -value;
    }
    Some(value)
}

/// Positional decimal text for `r`.
///
/// Values that are exactly an `f64` use the shortest digit string that
/// round-trips through `f64`; other values with a terminating expansion are
/// written exactly. Returns `None` when the expansion does not terminate.
pub fn to_decimal(r: &Rat) -> Option<String> {
    if is_f64_exact(r) {
        return Some(shortest_f64(to_f64(r)));
    }
    exact_decimal(r)
}

/// Exact positional expansion of `r`, if it terminates.
pub fn exact_decimal(r: &Rat) -> Option<String> {
    let mut d = r.denom().clone();
    let two = BigInt::from(2u32);
    let five = BigInt::from(5u32);
    let (mut twos, mut fives) = (0usize, 0usize);
    while d.is_even() {
        d /= &two;
        twos += 1;
    }
    while (&d % &five).is_zero() {
        d /= &five;
        fives += 1;
    }
    if !d.is_one() {
        return None;
    }
    let places = twos.max(fives);
    let scaled = r * Rat::from_integer(num_traits::pow(BigInt::from(10u32), places));
    let digits = scaled.to_integer().abs().to_string();
    let sign = if r.is_negative() { "-" } else { "" };
    if places == 0 {
        return Some(format!("{sign}{digits}.0"));
    }
    let padded = format!("{digits:0>width$}", width = places + 1);
    let (i, f) = padded.split_at(padded.len() - places);
    Some(format!("{sign}{i}.{f}"))
}

/// Shortest round-trip digits of `v`, in positional notation with at least
/// one fractional digit (`0.0`, `-58.231295852661134`, `0.0001`).
pub fn shortest_f64(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    let sci = format!("{v:e}");
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i64 = exp.parse().expect("exponent");
    let (sign, mant) = match mant.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mant),
    };
    let digits: String = mant.chars().filter(|c| *c != '.').collect();
    // value = 0.d1d2d3... * 10^(exp + 1)
    let point = exp + 1;
    let body = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point as usize >= digits.len() {
        format!("{}{}.0", digits, "0".repeat(point as usize - digits.len()))
    } else {
        let (i, f) = digits.split_at(point as usize);
        format!("{i}.{f}")
    };
    format!("{sign}{body}")
}

/// Least common multiple of the denominators, used to clear fractions.
pub fn denominator_lcm<'a>(values: impl IntoIterator<Item = &'a Rat>) -> BigInt {
    values
        .into_iter()
        .fold(BigInt::one(), |acc, r| acc.lcm(r.denom()))
}

/// Serde adapters writing rationals as `"p/q"` strings.
pub mod serde_frac {
    use super::{parse_fraction, to_fraction, Rat};
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Rat, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&to_fraction(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rat, D::Error> {
        let s = String::deserialize(d)?;
        parse_fraction(&s).ok_or_else(|| D::Error::custom(format!("bad rational `{s}`")))
    }

    pub mod vec {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<S: Serializer>(v: &[Rat], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for r in v {
                seq.serialize_element(&to_fraction(r))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Rat>, D::Error> {
            let v = Vec::<String>::deserialize(d)?;
            v.iter()
                .map(|s| {
                    parse_fraction(s).ok_or_else(|| D::Error::custom(format!("bad rational `{s}`")))
                })
                .collect()
        }
    }

    pub mod pairs {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<S: Serializer>(v: &[(Rat, Rat)], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for (a, b) in v {
                seq.serialize_element(&[to_fraction(a), to_fraction(b)])?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(Rat, Rat)>, D::Error> {
            let v = Vec::<[String; 2]>::deserialize(d)?;
            v.iter()
                .map(|[a, b]| {
                    let pa = parse_fraction(a);
                    let pb = parse_fraction(b);
                    match (pa, pb) {
                        (Some(a), Some(b)) => Ok((a, b)),
                        _ => Err(D::Error::custom(format!("bad interval [{a}, {b}]"))),
                    }
                })
                .collect()
        }
    }
}
