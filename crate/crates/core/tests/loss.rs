mod common;

use common::lossgen::*;
use common::*;
use nnspec::loss::{
    compile_loss, loss_and_grad, train, Affine as Aff, Cmp, CompileError, LossNode, LossOptions, LossTerm,
    Reduction, TrainError,
};
use nnspec::model::{Affine, Layer, Network};
use nnspec::par::{self, Exec};
use nnspec::rational::{ratio, Rat};
use proptest::prelude::*;
use rand::Rng;

fn identity(b: f64) -> Network {
    Network::new(1, vec![Layer::Affine(Affine::new(vec![vec![1.0]], vec![b]))]).unwrap()
}

const ONE_D: &str = "
@network
f : Tensor Rat [1] -> Tensor Rat [1]
@property
p : Bool
p = forall (x : Tensor Rat [1]) . x ! 0 == 0.5 => f x ! 0 >= 1
";

const Y_NONPOS: &str = "
@network
f : Tensor Rat [1] -> Tensor Rat [1]
@property
p : Bool
p = forall (x : Tensor Rat [1]) . x ! 0 == 2 => f x ! 0 <= 0
";

const ROBUST: &str = "
type Image = Tensor Rat [4]
type Label = Index 3
@network
f : Image -> Tensor Rat [3]
@parameter
epsilon : Rat
@parameter(infer=True)
n : Nat
@dataset
xs : Tensor Image [n]
@dataset
ys : Tensor Label [n]
advises : Image -> Label -> Bool
advises x i = forall j . j != i => f x ! i > f x ! j
robust : Image -> Label -> Bool
robust x0 l = forall (x : Image) . (forall k . x0 ! k - epsilon <= x ! k <= x0 ! k + epsilon) => advises x l
@property
r : Tensor Bool [n]
r = foreach i . robust (xs ! i) (ys ! i)
";

fn compile(src: &str, b: &Bind, opts: &LossOptions) -> LossTerm {
    let m = spec(src);
    let p = m.properties()[0].to_string();
    compile_loss(&m, &b.0, &p, opts).unwrap()
}

fn robust_bindings(rows: usize) -> Bind {
    let mut r = rng(4);
    let xs: Vec<Vec<Rat>> = (0..rows)
        .map(|_| (0..4).map(|_| ratio(r.gen_range(0..=10), 10)).collect())
        .collect();
    let ys = (0..rows).map(|i| vec![ratio((i % 3) as i64, 1)]).collect();
    Bind::new()
        .net("f", random_net(&mut r, &[4, 5, 3]))
        .rat("epsilon", ratio(1, 20))
        .data("xs", xs, vec![4])
        .data("ys", ys, vec![])
}

#[test]
fn hinge_on_a_violated_upper_bound() {
    // T(y ≤ 0) at y = 2.
    let t = compile(Y_NONPOS, &Bind::new().net("f", identity(0.0)), &LossOptions::default());
    assert_eq!(t.groups(), 8);
    assert_eq!(t.loss(&identity(0.0)), 2.0);
    let g = loss_and_grad(&t, &identity(0.0), Exec::Sequential);
    assert_eq!(g.grads[0].bias, vec![1.0]);
    assert_eq!(g.grads[0].weights, vec![vec![2.0]]);
}

#[test]
fn satisfied_formula_has_zero_loss_and_gradient() {
    let t = compile(Y_NONPOS, &Bind::new().net("f", identity(0.0)), &LossOptions::default());
    let net = identity(-2.5);
    let g = loss_and_grad(&t, &net, Exec::Sequential);
    assert_eq!(g.loss, 0.0);
    assert!(g.grads.iter().all(|a| a.bias.iter().chain(a.weights.iter().flatten()).all(|v| *v == 0.0)));
    let trained = train(&net, &t, 50, 0.1, Exec::Sequential).unwrap();
    assert_eq!(trained.net, net);
    assert_eq!(trained.curve, vec![0.0; 51]);
}

#[test]
fn robustness_over_ten_rows_gives_eighty_groups() {
    let b = robust_bindings(10);
    let t = compile(ROBUST, &b, &LossOptions::default());
    assert_eq!(t.instances.len(), 10);
    assert_eq!(t.groups(), 80);
    for (i, inst) in t.instances.iter().enumerate() {
        assert_eq!(inst.name, format!("r_{i}"));
        assert_eq!(inst.samples.len(), 8);
        // advises: two strict comparisons against the label's score.
        assert_eq!(inst.body.leaves(), 2, "{:?}", inst.body);
        for s in &inst.samples {
            for (v, (lo, hi)) in s.iter().zip(&inst.domain) {
                assert!(lo <= v && v <= hi);
            }
        }
        let centre: Vec<f64> = inst.domain.iter().map(|(lo, hi)| (lo + hi) / 2.0).collect();
        assert_eq!(inst.samples[0], centre);
    }
    let json = t.to_json();
    let back: LossTerm = serde_json::from_str(&json).unwrap();
    assert_eq!(back, t);
    assert!(json.contains("\"schema_version\": 1"));
}

#[test]
fn sample_count_is_configurable_and_zero_is_an_error() {
    let b = robust_bindings(3);
    let opts = LossOptions {
        samples: 3,
        ..LossOptions::default()
    };
    assert_eq!(compile(ROBUST, &b, &opts).groups(), 9);
    let err = compile_loss(&spec(ROBUST), &b.0, "r", &LossOptions { samples: 0, ..opts }).unwrap_err();
    assert!(matches!(err, CompileError::SamplingDisabled { .. }), "{err}");
}

#[test]
fn unbounded_quantifier_is_rejected() {
    let src = "
@network
f : Tensor Rat [1] -> Tensor Rat [1]
@property
p : Bool
p = forall (x : Tensor Rat [1]) . x ! 0 >= 0 => f x ! 0 >= 0
";
    let err = compile_loss(&spec(src), &Bind::new().net("f", identity(0.0)).0, "p", &LossOptions::default())
        .unwrap_err();
    assert!(matches!(err, CompileError::Lower(_)), "{err}");
}

#[test]
fn compilation_is_deterministic_given_the_seed() {
    let b = robust_bindings(5);
    let a = compile(ROBUST, &b, &LossOptions::default()).to_json();
    assert_eq!(a, compile(ROBUST, &b, &LossOptions::default()).to_json());
    let other = LossOptions {
        seed: 9,
        ..LossOptions::default()
    };
    assert_ne!(a, compile(ROBUST, &b, &other).to_json());
}

#[test]
fn one_dimensional_training_decreases_loss() {
    // 1-1-1 net whose hidden unit is off at x = 0.5, so f(0.5) = d and only
    // the output bias learns: loss_k = 1 − 0.01·k, positive through step 99.
    let net = Network::new(
        1,
        vec![
            Layer::Affine(Affine::new(vec![vec![1.0]], vec![-1.0])),
            Layer::Relu,
            Layer::Affine(Affine::new(vec![vec![1.0]], vec![0.0])),
        ],
    )
    .unwrap();
    let t = compile(ONE_D, &Bind::new().net("f", net.clone()), &LossOptions::default());
    let tr = train(&net, &t, 100, 0.01, Exec::Sequential).unwrap();
    assert_eq!(tr.curve.len(), 101);
    assert_eq!(tr.curve[0], 1.0);
    for (k, w) in tr.curve.windows(2).enumerate() {
        assert!(w[1] < w[0], "step {k}: {} -> {}", w[0], w[1]);
    }
    for (k, l) in tr.curve.iter().enumerate() {
        assert!((l - (1.0 - 0.01 * k as f64)).abs() < 1e-12, "step {k}: {l}");
    }
}

#[test]
fn affine_one_dimensional_training_reaches_zero() {
    // f(x) = w·x + b from 0: loss 1 − w/2 − b falls by 1.25·lr per step
    // until it reaches 0 at step 80, then stays there.
    let zero = Network::new(1, vec![Layer::Affine(Affine::new(vec![vec![0.0]], vec![0.0]))]).unwrap();
    let t = compile(ONE_D, &Bind::new().net("f", zero.clone()), &LossOptions::default());
    let tr = train(&zero, &t, 100, 0.01, Exec::Sequential).unwrap();
    for (k, l) in tr.curve.iter().enumerate() {
        let want = (1.0 - 0.0125 * k as f64).max(0.0);
        assert!((l - want).abs() < 1e-12, "step {k}: {l}");
    }
}

#[test]
fn divergence_is_reported() {
    let t = compile(ONE_D, &Bind::new().net("f", identity(0.0)), &LossOptions::default());
    let net = Network::new(1, vec![Layer::Affine(Affine::new(vec![vec![f64::MAX]], vec![-f64::MAX]))]).unwrap();
    let err = train(&net, &t, 10, 1e300, Exec::Sequential).unwrap_err();
    assert!(matches!(err, TrainError::Divergence { .. }), "{err}");
}

#[test]
fn reductions() {
    let body = LossNode::Cmp {
        op: Cmp::Le,
        expr: Aff {
            vars: Vec::new(),
            outputs: vec![(0, 1.0)],
            constant: 0.0,
        },
    };
    let samples = vec![vec![1.0], vec![3.0], vec![-1.0]];
    let net = identity(0.0);
    let mean = direct_term(body.clone(), samples.clone(), 1, 1, Reduction::Mean);
    let sum = direct_term(body.clone(), samples.clone(), 1, 1, Reduction::Sum);
    let max = direct_term(body, samples, 1, 1, Reduction::Max);
    assert_eq!(mean.loss(&net), 4.0 / 3.0);
    assert_eq!(sum.loss(&net), 4.0);
    assert_eq!(max.loss(&net), 3.0);
    assert_eq!(loss_and_grad(&max, &net, Exec::Sequential).grads[0].weights, vec![vec![3.0]]);
    assert_eq!(loss_and_grad(&sum, &net, Exec::Sequential).grads[0].bias, vec![2.0]);
}

#[test]
fn zero_loss_iff_satisfied_on_random_formulas() {
    let mut r = rng(21);
    let gamma = 0.25;
    let net = Network::new(3, vec![Layer::Affine(Affine::new(
        vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        vec![0.0; 3],
    ))])
    .unwrap();
    let mut zeros = 0;
    for _ in 0..2000 {
        let body = random_tree(&mut r, 3, 3);
        let y: Vec<f64> = (0..3).map(|_| r.gen_range(-4i32..=4) as f64 / 4.0).collect();
        let mut t = direct_term(body.clone(), vec![y.clone()], 3, 3, Reduction::Mean);
        t.gamma = gamma;
        let l = t.loss(&net);
        assert!(l >= 0.0);
        assert_eq!(l == 0.0, satisfied(&body, &y, gamma), "{body:?} at {y:?}: {l}");
        zeros += (l == 0.0) as usize;
    }
    assert!((200..1800).contains(&zeros), "{zeros}");
}

#[test]
fn gradients_match_finite_differences() {
    let mut r = rng(5);
    let mut checked = 0;
    while checked < 200 {
        let net = smooth_net(&mut r, &[2, 4, 2]);
        let samples = (0..3).map(|_| vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect();
        let t = direct_term(smooth_tree(&mut r, 2, 2), samples, 2, 2, Reduction::Mean);
        if kink_distance(&t, &net) < 1e-2 {
            continue;
        }
        let e = worst_fd_error(&t, &net, 1e-4, 1e-10);
        assert!(e <= 1e-4, "relative error {e}");
        checked += 1;
    }
}

#[test]
fn parallel_and_sequential_gradients_are_identical() {
    let b = robust_bindings(10);
    let t = compile(ROBUST, &b, &LossOptions::default());
    let net = b.0.networks["f"].clone();
    let seq = loss_and_grad(&t, &net, Exec::Sequential);
    let par = par::with_jobs(8, || loss_and_grad(&t, &net, Exec::Parallel));
    assert_eq!(seq, par);
    let a = train(&net, &t, 20, 0.05, Exec::Sequential).unwrap();
    let c = par::with_jobs(3, || train(&net, &t, 20, 0.05, Exec::Parallel).unwrap());
    assert_eq!(a.curve, c.curve);
    assert_eq!(a.net, c.net);
}

fn reassociate(n: &LossNode, r: &mut impl Rng) -> LossNode {
    match n {
        LossNode::And { args } => {
            let args: Vec<LossNode> = args.iter().map(|a| reassociate(a, r)).collect();
            if args.len() >= 3 && r.gen_bool(0.5) {
                let k = r.gen_range(1..args.len() - 1);
                let (head, tail) = args.split_at(k);
                let mut out = head.to_vec();
                out.push(LossNode::And { args: tail.to_vec() });
                LossNode::And { args: out }
            } else {
                LossNode::And { args }
            }
        }
        LossNode::Or { args } => LossNode::Or {
            args: args.iter().map(|a| reassociate(a, r)).collect(),
        },
        other => other.clone(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn loss_is_nonnegative(seed in any::<u64>()) {
        let mut r = rng(seed);
        let net = smooth_net(&mut r, &[2, 3, 2]);
        let samples = (0..4).map(|_| vec![r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)]).collect();
        let t = direct_term(random_tree(&mut r, 2, 3), samples, 2, 2, Reduction::Sum);
        prop_assert!(t.loss(&net) >= 0.0);
    }

    #[test]
    fn conjunction_reassociation_preserves_loss(seed in any::<u64>()) {
        let mut r = rng(seed);
        let net = smooth_net(&mut r, &[2, 3, 2]);
        let samples: Vec<Vec<f64>> = (0..4).map(|_| vec![r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)]).collect();
        let body = LossNode::And { args: (0..5).map(|_| smooth_tree(&mut r, 2, 2)).collect() };
        let re = reassociate(&body, &mut r);
        let a = direct_term(body, samples.clone(), 2, 2, Reduction::Mean).loss(&net);
        let b = direct_term(re, samples, 2, 2, Reduction::Mean).loss(&net);
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE), "{} vs {}", a, b);
    }
}
