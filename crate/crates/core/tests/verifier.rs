mod common;

use common::oracle::phase_oracle;
use common::{random_net, random_point, rng, robustness_query};
use nnspec::checker::{check_certificate, check_witness};
use nnspec::model::{Affine, Layer, Network};
use nnspec::par::{with_jobs, Exec};
use nnspec::query::{Formula, LinExpr, LinIneq, Polarity, Query, Rel, Var};
use nnspec::rational::{from_f64, int, ratio, Rat};
use nnspec::verifier::{
    divergence, propagate_bounds, verify, Budget, LayerBounds, ProofNode, Verdict, VerifyOptions,
};
use proptest::prelude::*;
use rand::Rng;

fn opts(exec: Exec) -> VerifyOptions {
    VerifyOptions {
        budget: Budget::default(),
        exec,
    }
}

fn query(bx: Vec<(Rat, Rat)>, post: Formula, n: usize) -> Query {
    Query {
        name: "q".into(),
        network: "f".into(),
        input_box: bx,
        input_linear: Vec::new(),
        post,
        output_dim: n,
        polarity: Polarity::Prove,
    }
}

fn y_ge(k: usize, c: Rat) -> Formula {
    Formula::Atom(LinIneq::compare(&LinExpr::var(Var::Output(k)), Rel::Ge, &LinExpr::constant(c)))
}

fn identity() -> Network {
    Network::new(1, vec![Layer::Affine(Affine::new(vec![vec![1.0]], vec![0.0]))]).unwrap()
}

#[test]
fn identity_net_is_proven_with_one_leaf() {
    let net = identity();
    let q = query(vec![(int(0), int(1))], y_ge(0, int(0)), 1);
    let Verdict::Unsat(cert) = verify(&net, &q, &opts(Exec::Sequential)).unwrap() else {
        panic!("expected UNSAT")
    };
    assert_eq!(cert.leaves(), 1);
    assert!(check_certificate(&net, &q, &cert).is_accept());
}

#[test]
fn relu_output_is_nonnegative() {
    let net = Network::new(
        1,
        vec![Layer::Affine(Affine::new(vec![vec![1.0]], vec![0.0])), Layer::Relu],
    )
    .unwrap();
    let q = query(vec![(int(-1), int(1))], y_ge(0, ratio(-1, 2)), 1);
    let v = verify(&net, &q, &opts(Exec::Sequential)).unwrap();
    assert_eq!(v.label(), "UNSAT");
    // y ≥ 0.5 fails at x = 0 (the centre probe)
    let q = query(vec![(int(-1), int(1))], y_ge(0, ratio(1, 2)), 1);
    let Verdict::Sat(w) = verify(&net, &q, &opts(Exec::Sequential)).unwrap() else { panic!() };
    assert_eq!(w, vec![int(0)]);
    assert!(check_witness(&net, &q, &w).is_accept());
}

#[test]
fn affine_range_and_relu_relaxation() {
    let net = Network::new(2, vec![Layer::Affine(Affine::new(vec![vec![1.0, -1.0]], vec![0.0]))]).unwrap();
    let bx = vec![(int(0), int(1)), (int(0), int(1))];
    let b = propagate_bounds(&net, &bx).unwrap();
    assert_eq!(b[0].lower(0).min_over(&bx), int(-1));
    assert_eq!(b[0].upper(0).max_over(&bx), int(1));

    let relu = Network::new(1, vec![Layer::Affine(Affine::new(vec![vec![1.0]], vec![0.0])), Layer::Relu]).unwrap();
    let bx = vec![(int(-1), int(1))];
    let b = propagate_bounds(&relu, &bx).unwrap();
    let LayerBounds::Relu { neurons } = &b[1] else { panic!() };
    assert_eq!((neurons[0].lo.clone(), neurons[0].hi.clone()), (int(-1), int(1)));
    // upper (x+1)/2, lower x/2
    assert_eq!(neurons[0].upper.eval(&[int(1)]), int(1));
    assert_eq!(neurons[0].upper.eval(&[int(-1)]), int(0));
    assert_eq!(neurons[0].lower.coeffs, vec![ratio(1, 2)]);
    assert_eq!(neurons[0].lower.constant, int(0));
}

#[test]
fn sampled_values_lie_within_symbolic_bounds() {
    let mut r = rng(11);
    let net = random_net(&mut r, &[2, 4, 2]);
    let exact = nnspec::model::ExactNetwork::from_network(&net);
    let bx = vec![(ratio(-1, 2), ratio(3, 4)), (ratio(-1, 1), ratio(1, 4))];
    let b = propagate_bounds(&net, &bx).unwrap();
    for _ in 0..10_000 {
        let x: Vec<Rat> = bx
            .iter()
            .map(|(lo, hi)| lo + (hi - lo) * ratio(r.gen_range(0..=1024), 1024))
            .collect();
        let vals = exact.eval_layers(&x).unwrap();
        for (layer, v) in b.iter().zip(&vals) {
            for (i, z) in v.iter().enumerate() {
                assert!(layer.lower(i).eval(&x) <= *z && *z <= layer.upper(i).eval(&x));
            }
        }
    }
}

#[test]
fn agrees_with_phase_enumeration() {
    let mut r = rng(2024);
    let eps = [ratio(1, 16), ratio(1, 8), ratio(1, 4), ratio(1, 2)];
    let (mut sat, mut unsat) = (0, 0);
    for i in 0..40 {
        let net = random_net(&mut r, &[2, 4, 4, 2]);
        let c = random_point(&mut r, 2);
        let q = robustness_query(&format!("q{i}"), &net, &c, &eps[i % 4]);
        let oracle = phase_oracle(&net, &q);
        match verify(&net, &q, &opts(Exec::Parallel)).unwrap() {
            Verdict::Sat(w) => {
                assert!(oracle, "query {i}: SAT but oracle says UNSAT");
                assert!(check_witness(&net, &q, &w).is_accept());
                sat += 1;
            }
            Verdict::Unsat(cert) => {
                assert!(!oracle, "query {i}: UNSAT but oracle says SAT");
                assert!(check_certificate(&net, &q, &cert).is_accept());
                unsat += 1;
            }
            Verdict::Unknown(s) => panic!("query {i} unknown: {s:?}"),
        }
    }
    assert!(sat > 0 && unsat > 0, "{sat} sat, {unsat} unsat");
}

fn leaf_boxes(n: &ProofNode, out: &mut Vec<Vec<(Rat, Rat)>>) {
    match n {
        ProofNode::Split { left, right, .. } => {
            leaf_boxes(left, out);
            leaf_boxes(right, out);
        }
        ProofNode::Leaf { bx, .. } => out.push(bx.clone()),
    }
}

fn volume(bx: &[(Rat, Rat)]) -> Rat {
    bx.iter().fold(int(1), |acc, (lo, hi)| acc * (hi - lo))
}

#[test]
fn leaves_partition_the_root_box() {
    let mut r = rng(5);
    let mut checked = 0;
    while checked < 10 {
        let net = random_net(&mut r, &[2, 4, 4, 2]);
        let c = random_point(&mut r, 2);
        let q = robustness_query("p", &net, &c, &ratio(1, 4));
        let Verdict::Unsat(cert) = verify(&net, &q, &opts(Exec::Parallel)).unwrap() else { continue };
        for b in &cert.branches {
            let mut boxes = Vec::new();
            leaf_boxes(&b.tree, &mut boxes);
            let total = boxes.iter().map(|bx| volume(bx)).fold(int(0), |a, v| a + v);
            assert_eq!(total, volume(&q.input_box));
            for (i, a) in boxes.iter().enumerate() {
                assert!(a.iter().zip(&q.input_box).all(|((l, h), (rl, rh))| rl <= l && h <= rh));
                for bb in &boxes[i + 1..] {
                    // interiors disjoint: separated in some dimension
                    assert!(a.iter().zip(bb).any(|((l1, h1), (l2, h2))| h1 <= l2 || h2 <= l1));
                }
            }
        }
        checked += 1;
    }
}

#[test]
fn search_is_schedule_independent() {
    let mut r = rng(77);
    for i in 0..8 {
        let net = random_net(&mut r, &[2, 4, 4, 2]);
        let c = random_point(&mut r, 2);
        let q = robustness_query("d", &net, &c, &ratio(1, 4));
        let seq = verify(&net, &q, &opts(Exec::Sequential)).unwrap();
        let par = with_jobs(8, || verify(&net, &q, &opts(Exec::Parallel)).unwrap());
        assert_eq!(seq, par, "query {i}");
        if let (Verdict::Unsat(a), Verdict::Unsat(b)) = (&seq, &par) {
            assert_eq!(a.to_json(), b.to_json());
        }
    }
}

#[test]
fn budget_exhaustion_is_unknown() {
    let mut r = rng(3);
    loop {
        let net = random_net(&mut r, &[2, 4, 4, 2]);
        let c = random_point(&mut r, 2);
        let q = robustness_query("u", &net, &c, &ratio(1, 2));
        let full = verify(&net, &q, &opts(Exec::Sequential)).unwrap();
        let Verdict::Unsat(cert) = full else { continue };
        if cert.leaves() < 4 {
            continue;
        }
        let tight = VerifyOptions {
            budget: Budget { max_nodes: 2, max_depth: 64 },
            exec: Exec::Sequential,
        };
        assert!(matches!(verify(&net, &q, &tight).unwrap(), Verdict::Unknown(_)));
        let shallow = VerifyOptions {
            budget: Budget { max_nodes: 1000, max_depth: 0 },
            exec: Exec::Sequential,
        };
        assert!(matches!(verify(&net, &q, &shallow).unwrap(), Verdict::Unknown(_)));
        break;
    }
}

#[test]
fn input_constraints_close_leaves() {
    // y = x0 + x1 on [0,1]², P adds x0 + x1 ≤ 1/2, Q: y ≤ 3/4
    let net = Network::new(2, vec![Layer::Affine(Affine::new(vec![vec![1.0, 1.0]], vec![0.0]))]).unwrap();
    let mut q = query(
        vec![(int(0), int(1)), (int(0), int(1))],
        Formula::Atom(LinIneq::compare(&LinExpr::var(Var::Output(0)), Rel::Le, &LinExpr::constant(ratio(3, 4)))),
        1,
    );
    let sum = LinExpr::var(Var::Input(0)).add(&LinExpr::var(Var::Input(1)));
    q.input_linear.push(LinIneq::compare(&sum, Rel::Le, &LinExpr::constant(ratio(1, 2))));
    let Verdict::Unsat(cert) = verify(&net, &q, &opts(Exec::Sequential)).unwrap() else { panic!() };
    assert!(check_certificate(&net, &q, &cert).is_accept());
    q.input_linear.clear();
    let Verdict::Sat(w) = verify(&net, &q, &opts(Exec::Sequential)).unwrap() else { panic!() };
    assert!(check_witness(&net, &q, &w).is_accept());
}

#[test]
fn float_screening_divergence_is_flagged() {
    // y = 1e8·x0 + x1 − 1e8·x2: exactly 1 at (1,1,1), 0 in float32.
    let net = Network::new(3, vec![Layer::Affine(Affine::new(vec![vec![1e8, 1.0, -1e8]], vec![0.0]))]).unwrap();
    let gap = net.eval_gap(&[1.0, 1.0, 1.0]).unwrap();
    assert_eq!(gap.max_abs_diff, int(1));
    let one = from_f64(1.0).unwrap();
    let q = query(vec![(one.clone(), one.clone()); 3], y_ge(0, ratio(1, 2)), 1);
    let v = verify(&net, &q, &opts(Exec::Sequential)).unwrap();
    assert_eq!(v.label(), "UNSAT");
    let d = divergence(&net, &q, &v).expect("flagged");
    assert_eq!(d.exact_outputs, vec![int(1)]);
    assert_eq!(d.float_outputs, vec![0.0]);
    // No flag where float and exact agree.
    let q = query(vec![(int(0), int(0)); 3], y_ge(0, ratio(-1, 2)), 1);
    let v = verify(&net, &q, &opts(Exec::Sequential)).unwrap();
    assert!(divergence(&net, &q, &v).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shrinking_the_box_never_breaks_a_proof(seed in any::<u64>(), k in 0usize..4) {
        let mut r = rng(seed);
        let net = random_net(&mut r, &[2, 4, 4, 2]);
        let c = random_point(&mut r, 2);
        let q = robustness_query("m", &net, &c, &ratio(1, 4));
        let inner = robustness_query("m", &net, &c, &ratio(1, 4 + k as i64 * 4));
        let outer = verify(&net, &q, &opts(Exec::Sequential)).unwrap();
        let small = verify(&net, &inner, &opts(Exec::Sequential)).unwrap();
        if outer.label() == "UNSAT" {
            prop_assert_ne!(small.label(), "SAT");
        }
    }

    #[test]
    fn witnesses_are_exact_counterexamples(seed in any::<u64>()) {
        let mut r = rng(seed);
        let net = random_net(&mut r, &[2, 4, 2]);
        let c = random_point(&mut r, 2);
        let q = robustness_query("w", &net, &c, &ratio(1, 2));
        if let Verdict::Sat(w) = verify(&net, &q, &opts(Exec::Sequential)).unwrap() {
            prop_assert!(check_witness(&net, &q, &w).is_accept());
            prop_assert!(phase_oracle(&net, &q));
        }
    }
}
