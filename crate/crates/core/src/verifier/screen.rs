//! Float32 screening: the cheap check a deployed pipeline might run, compared
//! against the exact decision.

use super::{probes, Verdict};
use crate::model::Network;
use crate::query::Query;
use crate::rational::{self, Rat};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "screen", rename_all = "snake_case")]
pub enum ScreenVerdict {
    /// A probe whose `f32` outputs satisfy the target.
    Counterexample {
        #[serde(with = "rational::serde_frac::vec")]
        point: Vec<Rat>,
        outputs: Vec<f32>,
    },
    NoneFound,
}

/// A query on which float screening and the exact verdict disagree.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Divergence {
    pub query: String,
    #[serde(with = "rational::serde_frac::vec")]
    pub point: Vec<Rat>,
    pub float_outputs: Vec<f32>,
    #[serde(with = "rational::serde_frac::vec")]
    pub exact_outputs: Vec<Rat>,
    pub exact_verdict: &'static str,
    pub detail: String,
}

fn round_point(x: &[Rat]) -> (Vec<f32>, Vec<Rat>) {
    let xf: Vec<f32> = x.iter().map(rational::to_f32).collect();
    let xr = xf.iter().map(|v| rational::from_f32(*v).unwrap_or_default()).collect();
    (xf, xr)
}

fn float_target_holds(q: &Query, x: &[Rat], y: &[f32]) -> bool {
    let Some(yr) = y.iter().map(|v| rational::from_f32(*v)).collect::<Option<Vec<_>>>() else {
        return false;
    };
    q.is_counterexample(x, &yr)
}

/// Evaluates the root-box probes (rounded to `f32`) in float32 fixed order.
pub fn screen_f32(net: &Network, q: &Query) -> ScreenVerdict {
    for p in probes(&q.input_box) {
        let (xf, xr) = round_point(&p);
        if !q.precondition_holds(&xr) {
            continue;
        }
        let Ok(y) = net.eval_f32(&xf) else { continue };
        if float_target_holds(q, &xr, &y) {
            return ScreenVerdict::Counterexample { point: xr, outputs: y };
        }
    }
    ScreenVerdict::NoneFound
}

/// Flags the query when float screening contradicts the exact verdict: a
/// float counterexample to a property proven exactly, or an exact
/// counterexample the float implementation does not reproduce.
pub fn divergence(net: &Network, q: &Query, verdict: &Verdict) -> Option<Divergence> {
    let build = |point: Vec<Rat>, float_outputs: Vec<f32>, detail: &str| {
        let exact_outputs = net.eval_exact(&point).ok()?;
        Some(Divergence {
            query: q.name.clone(),
            point,
            float_outputs,
            exact_outputs,
            exact_verdict: verdict.label(),
            detail: detail.to_string(),
        })
    };
    match verdict {
        Verdict::Unsat(_) => match screen_f32(net, q) {
            ScreenVerdict::Counterexample { point, outputs } => build(
                point,
                outputs,
                "float32 evaluation violates the property at a point where exact evaluation satisfies it",
            ),
            ScreenVerdict::NoneFound => None,
        },
        Verdict::Sat(w) => {
            let (xf, xr) = round_point(w);
            if &xr != w {
                return None;
            }
            let y = net.eval_f32(&xf).ok()?;
            if float_target_holds(q, &xr, &y) {
                None
            } else {
                build(
                    xr,
                    y,
                    "exact counterexample is not a counterexample for the float32 implementation",
                )
            }
        }
        Verdict::Unknown(_) => None,
    }
}
