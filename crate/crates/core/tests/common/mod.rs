#![allow(dead_code)]

pub mod lossgen;
pub mod oracle;
pub mod tamper;

use nnspec::binding::{Bindings, Dataset, Value};
use nnspec::frontend::{load_spec, TypedModule};
use nnspec::model::{Affine, Layer, Network};
use nnspec::rational::{parse_decimal, Rat};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn spec(src: &str) -> TypedModule {
    load_spec(src).unwrap_or_else(|e| panic!("{}", e.join("\n")))
}

pub fn dec(s: &str) -> Rat {
    parse_decimal(s).unwrap()
}

/// Random ReLU network with the given layer widths; weights are multiples
/// of 1/8 so exact arithmetic stays small.
pub fn random_net(r: &mut impl Rng, widths: &[usize]) -> Network {
    let mut layers = Vec::new();
    for w in widths.windows(2) {
        let weights = (0..w[1])
            .map(|_| (0..w[0]).map(|_| r.gen_range(-16i32..=16) as f64 / 8.0).collect())
            .collect();
        let bias = (0..w[1]).map(|_| r.gen_range(-8i32..=8) as f64 / 8.0).collect();
        layers.push(Layer::Affine(Affine::new(weights, bias)));
        layers.push(Layer::Relu);
    }
    layers.pop();
    Network::new(widths[0], layers).unwrap()
}

pub struct Bind(pub Bindings);

impl Bind {
    pub fn new() -> Self {
        Bind(Bindings::default())
    }
    pub fn net(mut self, name: &str, n: Network) -> Self {
        self.0.networks.insert(name.into(), n);
        self
    }
    pub fn rat(mut self, name: &str, v: Rat) -> Self {
        self.0.parameters.insert(name.into(), Value::Rat(v));
        self
    }
    pub fn data(mut self, name: &str, rows: Vec<Vec<Rat>>, elem_shape: Vec<usize>) -> Self {
        if !self.0.inferred.contains_key("n") {
            self.0.inferred.insert("n".into(), rows.len() as u64);
        }
        self.0.datasets.insert(
            name.into(),
            Dataset {
                rows,
                elem_shape,
                bounds: None,
            },
        );
        self
    }
    pub fn nat(mut self, name: &str, v: u64) -> Self {
        self.0.parameters.insert(name.into(), Value::Nat(v));
        self
    }
}

/// Robustness target around `center`: some other class scores at least as
/// high as the exactly-computed label anywhere in the `eps` box.
pub fn robustness_query(name: &str, net: &Network, center: &[Rat], eps: &Rat) -> nnspec::query::Query {
    use nnspec::query::{Formula, LinExpr, LinIneq, Polarity, Query, Rel, Var};
    let y = net.eval_exact(center).unwrap();
    let label = nnspec::lowering::argmax(&y);
    let post = Formula::Or(
        (0..y.len())
            .filter(|&j| j != label)
            .map(|j| {
                Formula::Atom(LinIneq::compare(
                    &LinExpr::var(Var::Output(j)),
                    Rel::Ge,
                    &LinExpr::var(Var::Output(label)),
                ))
            })
            .collect(),
    )
    .flatten();
    Query {
        name: name.into(),
        network: "f".into(),
        input_box: center.iter().map(|c| (c - eps, c + eps)).collect(),
        input_linear: Vec::new(),
        post,
        output_dim: y.len(),
        polarity: Polarity::FindCounterexampleTo,
    }
}

pub fn random_point(r: &mut impl Rng, m: usize) -> Vec<Rat> {
    (0..m).map(|_| nnspec::rational::ratio(r.gen_range(-8..=8), 8)).collect()
}
