use serde::{Deserialize, Serialize};

use crate::diffcore::{CustomOp, Graph, Real, Var};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HashEncodingConfig {
    pub table_size: usize,
    pub features_per_entry: usize,
    /// Grid vertices per axis spanning `[-2, 2]`.
    pub grid_resolution: usize,
    pub hash_primes: [u32; 3],
}

impl Default for HashEncodingConfig {
    fn default() -> Self {
        Self {
            table_size: 1 << 19,
            features_per_entry: 4,
            grid_resolution: 128,
            hash_primes: [1, 2_654_435_761, 805_459_861],
        }
    }
}

impl HashEncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.table_size.is_power_of_two() {
            return Err(Error::Config(format!("hash table_size {} is not a power of two", self.table_size)));
        }
        if self.grid_resolution < 2 {
            return Err(Error::Config("hash grid_resolution must be at least 2".into()));
        }
        if self.features_per_entry == 0 {
            return Err(Error::Config("hash features_per_entry must be positive".into()));
        }
        Ok(())
    }

    /// Interpolated features, then the three coordinates, then a constant 1.
    pub fn output_dim(&self) -> usize {
        self.features_per_entry + 4
    }

    pub fn table_shape(&self) -> [usize; 2] {
        [self.table_size, self.features_per_entry]
    }

    pub fn slot(&self, v: [u32; 3]) -> usize {
        let p = self.hash_primes;
        let h = v[0].wrapping_mul(p[0]) ^ v[1].wrapping_mul(p[1]) ^ v[2].wrapping_mul(p[2]);
        h as usize & (self.table_size - 1)
    }

    /// Table rows and trilinear weights of the 8 corners around `x`.
    pub fn corners(&self, x: Vec3) -> Result<HashLookup> {
        if x.iter().any(|c| !(c.abs() <= 2.0)) {
            return Err(Error::InvalidArgument(format!(
                "hash_encode input {x:?} lies outside [-2, 2]^3; contract it first"
            )));
        }
        let last = (self.grid_resolution - 1) as f64;
        let mut base = [0u32; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let p = (x[a] + 2.0) * 0.25 * last;
            let i = p.floor().min(last - 1.0).max(0.0);
            base[a] = i as u32;
            frac[a] = p - i;
        }
        let mut slots = [0usize; 8];
        let mut weights = [0.0; 8];
        for (k, (s, w)) in slots.iter_mut().zip(&mut weights).enumerate() {
            let mut v = base;
            let mut wk = 1.0;
            for a in 0..3 {
                if k >> a & 1 == 1 {
                    v[a] += 1;
                    wk *= frac[a];
                } else {
                    wk *= 1.0 - frac[a];
                }
            }
            *s = self.slot(v);
            *w = wk;
        }
        Ok(HashLookup { slots, weights })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HashLookup {
    pub slots: [usize; 8],
    pub weights: [f64; 8],
}

fn write_row<T: Real>(cfg: &HashEncodingConfig, table: &[T], x: Vec3, lk: &HashLookup, out: &mut [T]) {
    let f = cfg.features_per_entry;
    for c in 0..f {
        let mut acc = 0.0;
        for k in 0..8 {
            acc += lk.weights[k] * table[lk.slots[k] * f + c].f64();
        }
        out[c] = T::of(acc);
    }
    for a in 0..3 {
        out[f + a] = T::of(x[a]);
    }
    out[f + 3] = T::one();
}

/// Encodes one point without building a graph.
pub fn hash_encode_point<T: Real>(cfg: &HashEncodingConfig, table: &[T], x: Vec3) -> Result<Vec<T>> {
    let lk = cfg.corners(x)?;
    let mut out = vec![T::zero(); cfg.output_dim()];
    write_row(cfg, table, x, &lk, &mut out);
    Ok(out)
}

struct HashOp {
    features: usize,
    out_dim: usize,
    lookups: Vec<HashLookup>,
}

impl<T: Real> CustomOp<T> for HashOp {
    fn name(&self) -> &'static str {
        "hash_encode"
    }

    fn backward(&self, _inputs: &[&[T]], _output: &[T], grad_out: &[T], grads: &mut [Option<&mut [T]>]) {
        let Some(gt) = grads[0].as_deref_mut() else { return };
        let f = self.features;
        for (row, lk) in self.lookups.iter().enumerate() {
            let g = &grad_out[row * self.out_dim..row * self.out_dim + f];
            for k in 0..8 {
                let w = T::of(lk.weights[k]);
                let dst = &mut gt[lk.slots[k] * f..(lk.slots[k] + 1) * f];
                for c in 0..f {
                    dst[c] += w * g[c];
                }
            }
        }
    }
}

/// Encodes a batch of contracted points against the table node `table`
/// (shape `[table_size, features_per_entry]`). Returns `[n, output_dim]`.
/// Gradients reach only the table rows each point touches.
pub fn hash_encode<T: Real>(g: &mut Graph<'_, T>, cfg: &HashEncodingConfig, table: Var, xs: &[Vec3]) -> Result<Var> {
    let want = cfg.table_shape();
    if g.shape(table) != want {
        return Err(Error::shape("hash_encode", g.shape(table), &want));
    }
    if xs.is_empty() {
        return Err(Error::InvalidArgument("hash_encode needs at least one point".into()));
    }
    let d = cfg.output_dim();
    let lookups = xs.iter().map(|&x| cfg.corners(x)).collect::<Result<Vec<_>>>()?;
    let mut out = vec![T::zero(); xs.len() * d];
    {
        let tv = g.value(table);
        for ((x, lk), row) in xs.iter().zip(&lookups).zip(out.chunks_mut(d)) {
            write_row(cfg, tv, *x, lk, row);
        }
    }
    let op = HashOp {
        features: cfg.features_per_entry,
        out_dim: d,
        lookups,
    };
    g.custom(&[table], &[xs.len(), d], out, Box::new(op))
}
