mod common;

use common::*;
use nnspec::lowering::{self, lift_verdict, LowerError, Outcome, ProblemSpaceVerdict, Unembedding};
use nnspec::model::{Affine, Layer, Network};
use nnspec::query::{Formula, Var};
use nnspec::rational::{int, ratio, Rat};
use proptest::prelude::*;
use rand::Rng;

const MNIST: &str = include_str!("data/mnist_robustness.vnns");

fn zero_net(m: usize, n: usize) -> Network {
    Network::new(m, vec![Layer::Affine(Affine::new(vec![vec![0.0; m]; n], vec![0.0; n]))]).unwrap()
}

#[test]
fn robustness_over_dataset_gives_one_clipped_query_per_row() {
    let mut r = rng(1);
    let rows: Vec<Vec<Rat>> = (0..100)
        .map(|_| (0..784).map(|_| ratio(r.gen_range(0..=100), 100)).collect())
        .collect();
    let labels: Vec<Vec<Rat>> = (0..100).map(|i| vec![int(i % 10)]).collect();
    let eps = ratio(1, 100);
    let b = Bind::new()
        .net("mnist", zero_net(784, 10))
        .rat("epsilon", eps.clone())
        .data("images", rows.clone(), vec![28, 28])
        .data("labels", labels, vec![]);
    let m = spec(MNIST);
    let qs = lowering::lower(&m, &b.0).unwrap();
    assert_eq!(qs.len(), 100);
    let zero = int(0);
    let one = int(1);
    for (i, lq) in qs.iter().enumerate() {
        let q = &lq.query;
        assert_eq!(q.name, format!("robustness_{i}"));
        assert_eq!(q.input_dim(), 784);
        assert!(q.input_linear.is_empty());
        for (j, (lo, hi)) in q.input_box.iter().enumerate() {
            let x = &rows[i][j];
            let l = x - &eps;
            let h = x + &eps;
            assert_eq!(*lo, if l < zero { zero.clone() } else { l });
            assert_eq!(*hi, if h > one { one.clone() } else { h });
        }
        // ¬advises: some other class reaches the label's score.
        let label = i % 10;
        let Formula::Or(ds) = &q.post else { panic!("{:?}", q.post) };
        assert_eq!(ds.len(), 9);
        for d in ds {
            let Formula::Atom(a) = d else { panic!() };
            assert!(a.expr.terms.contains_key(&Var::Output(label)));
        }
        assert_eq!(lq.embedding.unembed, Unembedding::Argmax);
        assert!(lq.warnings.is_empty());
    }
}

const SMALL: &str = "
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

#[test]
fn zero_epsilon_is_a_point_query_matching_direct_evaluation() {
    let mut r = rng(2);
    for trial in 0..20 {
        let net = random_net(&mut r, &[4, 5, 3]);
        let rows: Vec<Vec<Rat>> = (0..10).map(|_| (0..4).map(|_| ratio(r.gen_range(-8..=8), 4)).collect()).collect();
        let labels: Vec<Vec<Rat>> = (0..10).map(|_| vec![int(r.gen_range(0..3))]).collect();
        let b = Bind::new()
            .net("f", net.clone())
            .rat("epsilon", int(0))
            .data("xs", rows.clone(), vec![4])
            .data("ys", labels.clone(), vec![]);
        let qs = lowering::lower(&spec(SMALL), &b.0).unwrap();
        for (i, lq) in qs.iter().enumerate() {
            let q = &lq.query;
            assert!(q.input_box.iter().zip(&rows[i]).all(|((l, h), x)| l == x && h == x));
            let y = net.eval_exact(&rows[i]).unwrap();
            let l = labels[i][0].to_integer().try_into().unwrap_or(0usize);
            let advises = (0..3).all(|j| j == l || y[l] > y[j]);
            let target = q.target().holds(&rows[i], &y);
            // No strict-boundary ties with these weights: weakening is exact here.
            if (0..3).all(|j| j == l || y[l] != y[j]) {
                assert_eq!(target, !advises, "trial {trial} row {i}");
            } else {
                assert!(target || advises);
            }
        }
    }
}

const YES_NO: &str = "
@network
f : Tensor Rat [2] -> Tensor Rat [1]
@property
p : Bool
p = forall (x : Tensor Rat [2]) . (x ! 0 == 0 or x ! 0 == 1) and 0 <= x ! 1 <= 1 => f x ! 0 >= 0
";

fn yes_no_net() -> Network {
    // y = x1 - 2·(x0 - 0.5)^+ ... linear version: y = x1 - x0 + 0.3
    Network::new(2, vec![Layer::Affine(Affine::new(vec![vec![-1.0, 1.0]], vec![0.3]))]).unwrap()
}

#[test]
fn yes_no_input_is_box_relaxed_with_warning() {
    let b = Bind::new().net("f", yes_no_net());
    let qs = lowering::lower(&spec(YES_NO), &b.0).unwrap();
    assert_eq!(qs.len(), 1);
    let lq = &qs[0];
    assert_eq!(lq.query.input_box, vec![(int(0), int(1)), (int(0), int(1))]);
    assert_eq!(lq.warnings.len(), 1);
    assert!(lq.warnings[0].message.contains("x[0]"));
    assert!(lq.warnings[0].message.contains("disjunct"));
    // A witness at x0 = 0.4 is off the {0, 1} image: spurious, not a violation.
    let x = [ratio(2, 5), int(0)];
    assert!(lq.query.target().holds(&x, &yes_no_net().eval_exact(&x).unwrap()));
    let v = lift_verdict(lq, &yes_no_net(), Outcome::Sat(&x));
    assert!(matches!(v, ProblemSpaceVerdict::SpuriousUnderRelaxation { .. }), "{v}");
    // x0 = 1 is a genuine counterexample.
    let x = [int(1), int(0)];
    let v = lift_verdict(lq, &yes_no_net(), Outcome::Sat(&x));
    assert!(matches!(v, ProblemSpaceVerdict::Counterexample { .. }), "{v}");
}

#[test]
fn unsat_lifts_to_holds() {
    let b = Bind::new().net("f", yes_no_net());
    let lq = &lowering::lower(&spec(YES_NO), &b.0).unwrap()[0];
    assert_eq!(
        lift_verdict(lq, &yes_no_net(), Outcome::Unsat),
        ProblemSpaceVerdict::Holds { instance: "p".into() }
    );
    assert!(lift_verdict(lq, &yes_no_net(), Outcome::Unsat).to_string().contains("holds"));
}

#[test]
fn sat_witness_is_unembedded_to_a_class() {
    // Class 2 overtakes the label 0 once x3 exceeds its reference by 0.005.
    let x_hat = [int(0), int(0), int(0), ratio(1, 2)];
    let net = Network::new(
        4,
        vec![Layer::Affine(Affine::new(
            vec![vec![0.0; 4], vec![0.0; 4], vec![0.0, 0.0, 0.0, 100.0]],
            vec![0.5, 0.0, -50.0],
        ))],
    )
    .unwrap();
    let b = Bind::new()
        .net("f", net.clone())
        .rat("epsilon", ratio(1, 100))
        .data("xs", vec![x_hat.to_vec()], vec![4])
        .data("ys", vec![vec![int(0)]], vec![]);
    let lq = &lowering::lower(&spec(SMALL), &b.0).unwrap()[0];
    // Brute force over a grid of the box finds the counterexample direction.
    let mut found = Vec::new();
    for k in 0..=20 {
        let mut x = x_hat.to_vec();
        x[3] = &x_hat[3] + ratio(k - 10, 1000);
        if lq.query.precondition_holds(&x) && lq.query.target().holds(&x, &net.eval_exact(&x).unwrap()) {
            found.push(x);
        }
    }
    let witness = found.iter().find(|x| x[3] == ratio(509, 1000)).expect("x̂ + 0.009·e3 in the grid");
    match lift_verdict(lq, &net, Outcome::Sat(witness)) {
        ProblemSpaceVerdict::Counterexample { class, assignment, .. } => {
            assert_eq!(class, Some(2));
            assert_eq!(assignment[3], ("x[3]".to_string(), "0.509".to_string()));
        }
        other => panic!("{other}"),
    }
}

#[test]
fn unsupported_shapes_are_rejected() {
    let two_apps = "@network\nf : Rat -> Rat\n@property\np : Bool\np = forall x y . 0 <= x <= 1 and 0 <= y <= 1 => f x <= f y";
    let b = Bind::new().net("f", Network::new(1, vec![Layer::Affine(Affine::new(vec![vec![1.0]], vec![0.0]))]).unwrap());
    let m = spec(two_apps);
    assert!(matches!(lowering::lower(&m, &b.0), Err(LowerError::MultipleApplications { count: 2, .. })));

    let exists = "@network\nf : Rat -> Rat\n@property\np : Bool\np = exists x . 0 <= x <= 1 and f x >= 0";
    assert!(matches!(lowering::lower(&spec(exists), &b.0), Err(LowerError::Alternation { .. })));

    let unbounded = "@network\nf : Rat -> Rat\n@property\np : Bool\np = forall x . 0 <= x => f x >= 0";
    assert!(matches!(lowering::lower(&spec(unbounded), &b.0), Err(LowerError::Unbounded { .. })));

    let mixed = "@network\nf : Rat -> Rat\n@property\np : Bool\np = forall x . 0 <= x <= 1 => f x >= x";
    assert!(matches!(lowering::lower(&spec(mixed), &b.0), Err(LowerError::Mixed { .. })));
}

#[test]
fn delta_form_folds_the_reference_output() {
    // |f(x) − f(x̂)| ≤ δ with x̂ = 1: the constant application is evaluated exactly.
    let src = "@network\nf : Rat -> Rat\n@property\np : Bool\n\
               p = forall x . 0.9 <= x <= 1.1 => f x - f 1 <= 0.5 and f 1 - f x <= 0.5";
    let net = Network::new(1, vec![Layer::Affine(Affine::new(vec![vec![2.0]], vec![1.0]))]).unwrap();
    let b = Bind::new().net("f", net);
    let lq = &lowering::lower(&spec(src), &b.0).unwrap()[0];
    assert_eq!(lq.query.input_box, vec![(ratio(9, 10), ratio(11, 10))]);
    assert_eq!(lq.embedding.unembed, Unembedding::Outputs);
    // y = 2x + 1; f(1) = 3. Target: y − 3 > 0.5 or 3 − y > 0.5 (closed).
    assert!(!lq.query.target().holds(&[ratio(11, 10)], &[ratio(16, 5)]));
    assert!(lq.query.target().holds(&[int(2)], &[ratio(7, 2)]));
}

fn small_pl_net(seed: u64) -> Network {
    random_net(&mut rng(seed), &[2, 3, 2])
}

fn cmp_op() -> impl Strategy<Value = &'static str> {
    prop_oneof![Just("<="), Just(">="), Just("<"), Just(">"), Just("=="), Just("!=")]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// No grid point satisfies the target exactly when Q holds everywhere on
    /// the grid. When ¬Q needs no strict comparison (Q built from `<`, `>`,
    /// `!=`), the target is exactly ¬Q; otherwise it may add boundary points.
    #[test]
    fn negation_is_sound(seed in 0u64..1000, lo in -4i64..=0, w in 1i64..=4,
                         ops in proptest::collection::vec(cmp_op(), 1..3),
                         consts in proptest::collection::vec(-8i64..=8, 2),
                         conj in any::<bool>()) {
        let atoms: Vec<String> = ops.iter().enumerate()
            .map(|(k, op)| format!("f x ! {} {op} {}", k % 2, consts[k % 2] as f64 / 4.0))
            .collect();
        let q = atoms.join(if conj { " and " } else { " or " });
        let src = format!("@network\nf : Tensor Rat [2] -> Tensor Rat [2]\n@property\np : Bool\n\
            p = forall (x : Tensor Rat [2]) . {lo} <= x ! 0 <= {hi} and {lo} <= x ! 1 <= {hi} => {q}", hi = lo + w);
        let net = small_pl_net(seed);
        let b = Bind::new().net("f", net.clone());
        let lq = &lowering::lower(&spec(&src), &b.0).unwrap()[0];
        let weakened = ops.iter().any(|o| matches!(*o, "<=" | ">=" | "=="));
        let mut any_target = false;
        let mut q_everywhere = true;
        for i in 0..=8 {
            for j in 0..=8 {
                let x = vec![int(lo) + ratio(i * w, 8), int(lo) + ratio(j * w, 8)];
                prop_assert!(lq.query.precondition_holds(&x));
                let y = net.eval_exact(&x).unwrap();
                let qv = lq.instance.prop.holds(&x, &y);
                let t = lq.query.target().holds(&x, &y);
                q_everywhere &= qv;
                any_target |= t;
                if !qv { prop_assert!(t); }
                if !weakened { prop_assert_eq!(t, !qv); }
            }
        }
        if !weakened { prop_assert_eq!(!any_target, q_everywhere); }
    }

    /// For an invertible affine embedding, x meets the problem-space
    /// constraints iff e(x) meets the pushed-down precondition.
    #[test]
    fn affine_pushdown_preserves_solutions(s0 in prop_oneof![Just("2"), Just("0.25"), Just("-0.5"), Just("4")],
                                           s1 in prop_oneof![Just("1"), Just("-2"), Just("0.125")],
                                           c0 in -20i64..20, c1 in -20i64..20, bound in -10i64..10,
                                           samples in proptest::collection::vec((-40i64..40, -40i64..40), 32)) {
        let src = format!("@network\nf : Tensor Rat [2] -> Tensor Rat [1]\n\
            @embedding\ne : Tensor Rat [2] -> Tensor Rat [2]\ne x = [{s0} * (x ! 0) + {}, {s1} * (x ! 1) - {}]\n\
            @property\np : Bool\n\
            p = forall (x : Tensor Rat [2]) . -1 <= x ! 0 <= 1 and -2 <= x ! 1 <= 0.5 and x ! 0 + x ! 1 <= {} => f (e x) ! 0 >= 0",
            c0 as f64 / 10.0, c1 as f64 / 10.0, bound as f64 / 10.0);
        let net = Network::new(2, vec![Layer::Affine(Affine::new(vec![vec![1.0, 1.0]], vec![0.0]))]).unwrap();
        let b = Bind::new().net("f", net);
        let lq = &lowering::lower(&spec(&src), &b.0).unwrap()[0];
        let (a0, a1) = (dec(s0), dec(s1));
        let (d0, d1) = (ratio(c0, 10), -ratio(c1, 10));
        for (u, v) in samples {
            let x = [ratio(u, 20), ratio(v, 16)];
            let original = ratio(-1, 1) <= x[0] && x[0] <= int(1) && int(-2) <= x[1] && x[1] <= ratio(1, 2)
                && &x[0] + &x[1] <= ratio(bound, 10);
            let e = vec![&a0 * &x[0] + &d0, &a1 * &x[1] + &d1];
            prop_assert_eq!(lq.query.precondition_holds(&e), original);
        }
    }

    #[test]
    fn expansion_count_is_the_product_of_ranges(a in 1u64..6, c in 1u64..6) {
        let src = format!("@network\nf : Rat -> Rat\n@property\np : Tensor Bool [{a}, {c}]\n\
            p = foreach i j . forall x . 0 <= x <= 1 => f x >= 0\n\
            @property\nq : Bool\nq = forall (k : Index {a}) . forall x . 0 <= x <= 1 => f x >= 0");
        let b = Bind::new().net("f", Network::new(1, vec![Layer::Affine(Affine::new(vec![vec![1.0]], vec![0.0]))]).unwrap());
        let qs = lowering::lower(&spec(&src), &b.0).unwrap();
        prop_assert_eq!(qs.len() as u64, a * c + a);
        prop_assert_eq!(&qs[0].query.name, "p_0_0");
        prop_assert_eq!(&qs.last().unwrap().query.name, &format!("q_{}", a - 1));
    }
}
