//! Exhaustive ReLU-phase enumeration: for every activation pattern the
//! network is affine on the region where the pattern holds, so the query
//! reduces to exact linear feasibility, decided by Fourier–Motzkin
//! elimination. Exponential, and only meant for tiny networks.

use nnspec::model::{ExactLayer, ExactNetwork, Network};
use nnspec::query::{Query, Var};
use nnspec::rational::Rat;
use num_traits::{One, Signed, Zero};

/// `a·x + c ≥ 0`
#[derive(Clone, Debug)]
pub struct Ge {
    pub a: Vec<Rat>,
    pub c: Rat,
}

/// Whether the conjunction of `cs` has a real solution.
pub fn feasible(mut cs: Vec<Ge>, m: usize) -> bool {
    for j in 0..m {
        let (mut pos, mut neg, mut rest) = (Vec::new(), Vec::new(), Vec::new());
        for g in cs {
            if g.a[j].is_positive() {
                pos.push(g);
            } else if g.a[j].is_negative() {
                neg.push(g);
            } else {
                rest.push(g);
            }
        }
        for p in &pos {
            for n in &neg {
                let (kp, kn) = (-&n.a[j], p.a[j].clone());
                let a: Vec<Rat> = p.a.iter().zip(&n.a).map(|(x, y)| x * &kp + y * &kn).collect();
                let c = &p.c * &kp + &n.c * &kn;
                if a.iter().all(Zero::is_zero) {
                    if c.is_negative() {
                        return false;
                    }
                } else {
                    rest.push(Ge { a, c });
                }
            }
        }
        cs = rest;
        if cs.len() > 20_000 {
            panic!("Fourier-Motzkin blow-up");
        }
    }
    cs.iter().all(|g| !g.c.is_negative())
}

#[derive(Clone)]
struct Aff {
    a: Vec<Rat>,
    c: Rat,
}

/// `true` iff some input satisfies `P ∧ target`.
pub fn phase_oracle(net: &Network, q: &Query) -> bool {
    let exact = ExactNetwork::from_network(net);
    let m = q.input_dim();
    let relus: usize = {
        let mut width = m;
        let mut count = 0;
        for l in &exact.layers {
            match l {
                ExactLayer::Affine { bias, .. } => width = bias.len(),
                ExactLayer::Relu => count += width,
                ExactLayer::Softmax => panic!("softmax"),
            }
        }
        count
    };
    assert!(relus <= 16, "too many patterns");
    let mut base = Vec::new();
    for (i, (lo, hi)) in q.input_box.iter().enumerate() {
        let mut e = vec![Rat::zero(); m];
        e[i] = Rat::one();
        base.push(Ge { a: e.clone(), c: -lo });
        base.push(Ge { a: e.iter().map(|v| -v).collect(), c: hi.clone() });
    }
    for c in &q.input_linear {
        let g = c.to_ge();
        let mut a = vec![Rat::zero(); m];
        for (v, k) in &g.terms {
            if let Var::Input(i) = v {
                a[*i] = k.clone();
            }
        }
        base.push(Ge { a, c: g.constant.clone() });
    }
    let branches = q.target_branches().unwrap();
    for pattern in 0u32..(1 << relus) {
        let mut cs = base.clone();
        let mut cur: Vec<Aff> = (0..m)
            .map(|i| {
                let mut a = vec![Rat::zero(); m];
                a[i] = Rat::one();
                Aff { a, c: Rat::zero() }
            })
            .collect();
        let mut bit = 0;
        for l in &exact.layers {
            cur = match l {
                ExactLayer::Affine { weights, bias } => weights
                    .iter()
                    .zip(bias)
                    .map(|(row, b)| {
                        let mut out = Aff { a: vec![Rat::zero(); m], c: b.clone() };
                        for (w, h) in row.iter().zip(&cur) {
                            for (o, x) in out.a.iter_mut().zip(&h.a) {
                                *o += w * x;
                            }
                            out.c += w * &h.c;
                        }
                        out
                    })
                    .collect(),
                ExactLayer::Relu => cur
                    .into_iter()
                    .map(|z| {
                        let active = pattern >> bit & 1 == 1;
                        bit += 1;
                        if active {
                            cs.push(Ge { a: z.a.clone(), c: z.c.clone() });
                            z
                        } else {
                            cs.push(Ge { a: z.a.iter().map(|v| -v).collect(), c: -&z.c });
                            Aff { a: vec![Rat::zero(); m], c: Rat::zero() }
                        }
                    })
                    .collect(),
                ExactLayer::Softmax => unreachable!(),
            };
        }
        if !feasible(cs.clone(), m) {
            continue;
        }
        for br in &branches {
            let mut all = cs.clone();
            for atom in br {
                let g = atom.to_ge();
                let mut a = vec![Rat::zero(); m];
                let mut c = g.constant.clone();
                for (v, k) in &g.terms {
                    match v {
                        Var::Input(i) => a[*i] += k,
                        Var::Output(j) => {
                            for (o, x) in a.iter_mut().zip(&cur[*j].a) {
                                *o += k * x;
                            }
                            c += k * &cur[*j].c;
                        }
                    }
                }
                all.push(Ge { a, c });
            }
            if feasible(all, m) {
                return true;
            }
        }
    }
    false
}
