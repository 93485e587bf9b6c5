use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Graph, ParamStore, Real, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamInit {
    Zeros,
    /// Uniform on `[-a, a]`.
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: ParamInit,
    pub frozen: bool,
}

impl ParamSpec {
    pub fn new(name: &str, shape: &[usize], init: ParamInit, frozen: bool) -> Self {
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            init,
            frozen,
        }
    }

    /// Weights `{prefix}.l{i}.w` of shape `[dims[i], dims[i+1]]` and biases
    /// `{prefix}.l{i}.b`. Hidden layers use He-uniform bounds, the output
    /// layer Glorot-uniform.
    pub fn mlp(prefix: &str, dims: &[usize], frozen: bool) -> Vec<ParamSpec> {
        let last = dims.len() - 2;
        let mut out = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            let bound = if i == last {
                (6.0 / (w[0] + w[1]) as f64).sqrt()
            } else {
                (6.0 / w[0] as f64).sqrt()
            };
            out.push(Self::new(&format!("{prefix}.l{i}.w"), &[w[0], w[1]], ParamInit::Uniform(bound), frozen));
            out.push(Self::new(&format!("{prefix}.l{i}.b"), &[w[1]], ParamInit::Zeros, frozen));
        }
        out
    }
}

fn name_key(name: &str) -> u64 {
    // FNV-1a
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn init_params_by_spec<T: Real>(specs: &[ParamSpec], seed: u64) -> ParamStore<T> {
    let mut store = ParamStore::new();
    for s in specs {
        let n: usize = s.shape.iter().product();
        let values = match s.init {
            ParamInit::Zeros => vec![T::zero(); n],
            ParamInit::Uniform(a) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_key(&s.name));
                (0..n).map(|_| T::of(rng.random_range(-a..=a))).collect()
            }
        };
        let t = Tensor::new(&s.shape, values).expect("spec shapes are positive");
        store.insert(s.name.clone(), t, s.frozen).expect("spec names are unique");
    }
    store
}

/// `layers` linear layers with ReLU between them and a linear output.
pub fn mlp_forward<'p, T: Real>(
    g: &mut Graph<'p, T>,
    params: &'p ParamStore<T>,
    prefix: &str,
    layers: usize,
    x: Var,
) -> Result<Var> {
    let mut h = x;
    for i in 0..layers {
        let w = g.param(params, &format!("{prefix}.l{i}.w"))?;
        let b = g.param(params, &format!("{prefix}.l{i}.b"))?;
        h = g.linear(h, w, Some(b))?;
        if i + 1 < layers {
            h = g.relu(h);
        }
    }
    Ok(h)
}
