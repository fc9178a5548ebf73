use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Parameters of a store bound to tape leaves for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Bound<'a>(pub &'a [Var]);

impl Bound<'_> {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.index()]
    }
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: [usize; 2], bound: f64) -> Tensor {
    let n = shape[0] * shape[1];
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("positive shape")
}

/// Weight initialized uniform in ±1/√fan_in.
pub(crate) fn fan_in_weight(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    uniform(rng, [fan_in, fan_out], 1.0 / (fan_in as f64).sqrt())
}

pub(crate) fn zeros(shape: [usize; 2]) -> Tensor {
    Tensor::zeros(shape).expect("positive shape")
}

/// Dense layer `x·w + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, w: Tensor, b: Tensor) -> Result<Self> {
        Ok(Linear {
            w: store.add(format!("{name}.w"), w)?,
            b: store.add(format!("{name}.b"), b)?,
        })
    }

    pub fn init(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let w = fan_in_weight(rng, fan_in, fan_out);
        Linear::new(store, name, w, zeros([1, fan_out]))
    }

    pub fn forward(&self, tape: &mut Tape, p: Bound, x: Var) -> Result<Var> {
        tape.affine(x, p.get(self.w), p.get(self.b))
    }
}

/// Two-layer perceptron with a tanh hidden layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn init(store: &mut ParamStore, name: &str, input: usize, width: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Mlp {
            hidden: Linear::init(store, &format!("{name}.l1"), input, width, rng)?,
            out: Linear::init(store, &format!("{name}.l2"), width, width, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: Bound, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, p, x)?;
        let h = tape.tanh(h)?;
        self.out.forward(tape, p, h)
    }
}

/// Stack of `H' = A·H·W` graph convolutions with a dense learnable
/// adjacency per layer and tanh between layers.
#[derive(Clone, Debug)]
pub struct Gcn {
    pub adjacency: Vec<ParamId>,
    pub weights: Vec<ParamId>,
}

impl Gcn {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        nodes: usize,
        widths: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut adjacency = Vec::new();
        let mut weights = Vec::new();
        for (l, pair) in widths.windows(2).enumerate() {
            let mut a = uniform(rng, [nodes, nodes], 0.01).into_data();
            for i in 0..nodes {
                a[i * nodes + i] += 1.0;
            }
            adjacency.push(store.add(format!("{name}.{l}.adj"), Tensor::new([nodes, nodes], a)?)?);
            weights.push(store.add(format!("{name}.{l}.w"), fan_in_weight(rng, pair[0], pair[1]))?);
        }
        Ok(Gcn { adjacency, weights })
    }

    pub fn forward(&self, tape: &mut Tape, p: Bound, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.weights.len() - 1;
        for (l, (&a, &w)) in self.adjacency.iter().zip(&self.weights).enumerate() {
            let ah = tape.matmul(p.get(a), h)?;
            h = tape.matmul(ah, p.get(w))?;
            if l != last {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }
}
