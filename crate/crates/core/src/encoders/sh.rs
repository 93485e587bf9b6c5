use serde::{Deserialize, Serialize};

use crate::diffcore::{CustomOp, Graph, Real, Var};
use crate::error::{Error, Result};
use crate::geometry::{norm, Vec3};

/// Number of SH degrees in use: level `l` covers degrees `0..l` and has `l^2`
/// components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ShLevel(u8);

impl ShLevel {
    pub const MAX: u8 = 4;

    pub fn new(l: u8) -> Result<Self> {
        if (1..=Self::MAX).contains(&l) {
            Ok(Self(l))
        } else {
            Err(Error::InvalidArgument(format!("SH level {l} outside 1..=4")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn components(self) -> usize {
        (self.0 as usize).pow(2)
    }
}

impl TryFrom<u8> for ShLevel {
    type Error = Error;
    fn try_from(l: u8) -> Result<Self> {
        Self::new(l)
    }
}

impl From<ShLevel> for u8 {
    fn from(l: ShLevel) -> u8 {
        l.0
    }
}

/// What to do with color components outside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeMode {
    Strict,
    Clamp,
}

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2_0: f64 = 1.092_548_430_592_079_2;
const C2_1: f64 = 0.315_391_565_252_520_05;
const C2_2: f64 = 0.546_274_215_296_039_6;
const C3_0: f64 = 0.590_043_589_926_643_5;
const C3_1: f64 = 2.890_611_442_640_554;
const C3_2: f64 = 0.457_045_799_464_465_8;
const C3_3: f64 = 0.373_176_332_590_115_4;
const C3_4: f64 = 1.445_305_721_320_277;

/// Real SH polynomials written homogeneously (no `x^2 + y^2 + z^2 = 1`
/// substitution), so they are defined for any `v`. On the unit sphere they
/// equal the usual real basis. Order: degree, then order `-l..=l`.
pub fn sh_poly(v: Vec3, level: ShLevel, out: &mut [f64]) {
    let [x, y, z] = v;
    let n = level.components();
    out[0] = C0;
    if n == 1 {
        return;
    }
    out[1] = C1 * y;
    out[2] = C1 * z;
    out[3] = C1 * x;
    if n == 4 {
        return;
    }
    let (x2, y2, z2) = (x * x, y * y, z * z);
    out[4] = C2_0 * x * y;
    out[5] = C2_0 * y * z;
    out[6] = C2_1 * (2.0 * z2 - x2 - y2);
    out[7] = C2_0 * x * z;
    out[8] = C2_2 * (x2 - y2);
    if n == 9 {
        return;
    }
    out[9] = C3_0 * y * (3.0 * x2 - y2);
    out[10] = C3_1 * x * y * z;
    out[11] = C3_2 * y * (4.0 * z2 - x2 - y2);
    out[12] = C3_3 * z * (2.0 * z2 - 3.0 * x2 - 3.0 * y2);
    out[13] = C3_2 * x * (4.0 * z2 - x2 - y2);
    out[14] = C3_4 * z * (x2 - y2);
    out[15] = C3_0 * x * (x2 - 3.0 * y2);
}

/// Rows of `d sh_poly / d v`.
pub fn sh_poly_jacobian(v: Vec3, level: ShLevel) -> Vec<[f64; 3]> {
    let [x, y, z] = v;
    let (x2, y2, z2) = (x * x, y * y, z * z);
    let all = [
        [0.0, 0.0, 0.0],
        [0.0, C1, 0.0],
        [0.0, 0.0, C1],
        [C1, 0.0, 0.0],
        [C2_0 * y, C2_0 * x, 0.0],
        [0.0, C2_0 * z, C2_0 * y],
        [-2.0 * C2_1 * x, -2.0 * C2_1 * y, 4.0 * C2_1 * z],
        [C2_0 * z, 0.0, C2_0 * x],
        [2.0 * C2_2 * x, -2.0 * C2_2 * y, 0.0],
        [6.0 * C3_0 * x * y, 3.0 * C3_0 * (x2 - y2), 0.0],
        [C3_1 * y * z, C3_1 * x * z, C3_1 * x * y],
        [-2.0 * C3_2 * x * y, C3_2 * (4.0 * z2 - x2 - 3.0 * y2), 8.0 * C3_2 * y * z],
        [-6.0 * C3_3 * x * z, -6.0 * C3_3 * y * z, 3.0 * C3_3 * (2.0 * z2 - x2 - y2)],
        [C3_2 * (4.0 * z2 - 3.0 * x2 - y2), -2.0 * C3_2 * x * y, 8.0 * C3_2 * x * z],
        [2.0 * C3_4 * x * z, -2.0 * C3_4 * y * z, C3_4 * (x2 - y2)],
        [3.0 * C3_0 * (x2 - y2), -6.0 * C3_0 * x * y, 0.0],
    ];
    all[..level.components()].to_vec()
}

/// Real SH basis at unit direction `d`.
pub fn sh_basis(d: Vec3, level: ShLevel) -> Result<Vec<f64>> {
    if d.iter().any(|c| !c.is_finite()) || (norm(d) - 1.0).abs() > 1e-5 {
        return Err(Error::InvalidArgument(format!("sh_basis needs a unit direction, got {d:?}")));
    }
    let mut out = vec![0.0; level.components()];
    sh_poly(d, level, &mut out);
    Ok(out)
}

fn check_color(c: &mut Vec3, mode: RangeMode) -> Result<bool> {
    if c.iter().all(|v| (0.0..=1.0).contains(v)) {
        return Ok(false);
    }
    match mode {
        RangeMode::Strict => Err(Error::InvalidArgument(format!("color {c:?} outside [0, 1]"))),
        RangeMode::Clamp => {
            if c.iter().any(|v| v.is_nan()) {
                return Err(Error::NonFinite(format!("color {c:?}")));
            }
            // rounding-level excursions from compositing are not worth a warning
            let loud = c.iter().any(|v| *v < -1e-5 || *v > 1.0 + 1e-5);
            for v in c.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
            Ok(loud)
        }
    }
}

/// SH polynomials evaluated on `2c - 1` without normalizing.
pub fn sh_color_encode(c: Vec3, level: ShLevel, mode: RangeMode) -> Result<Vec<f64>> {
    let mut c = c;
    if check_color(&mut c, mode)? {
        log::warn!("sh_color_encode: color clamped into [0, 1]");
    }
    let mut out = vec![0.0; level.components()];
    sh_poly([2.0 * c[0] - 1.0, 2.0 * c[1] - 1.0, 2.0 * c[2] - 1.0], level, &mut out);
    Ok(out)
}

struct ShColorOp {
    level: ShLevel,
}

impl<T: Real> CustomOp<T> for ShColorOp {
    fn name(&self) -> &'static str {
        "sh_color_encode"
    }

    fn backward(&self, inputs: &[&[T]], _output: &[T], grad_out: &[T], grads: &mut [Option<&mut [T]>]) {
        let Some(gc) = grads[0].as_deref_mut() else { return };
        let k = self.level.components();
        for (r, c) in inputs[0].chunks(3).enumerate() {
            let inside: Vec<bool> = c.iter().map(|v| (0.0..=1.0).contains(&v.f64())).collect();
            let v = [0, 1, 2].map(|a| 2.0 * c[a].f64().clamp(0.0, 1.0) - 1.0);
            let jac = sh_poly_jacobian(v, self.level);
            let g = &grad_out[r * k..(r + 1) * k];
            for a in 0..3 {
                if !inside[a] {
                    continue;
                }
                let s: f64 = jac.iter().zip(g).map(|(j, gk)| j[a] * gk.f64()).sum();
                gc[r * 3 + a] += T::of(2.0 * s);
            }
        }
    }
}

/// Row-wise [`sh_color_encode`] of an `[n, 3]` color node, giving `[n, l^2]`.
/// Clamped components receive no gradient.
pub fn sh_color_encode_graph<T: Real>(g: &mut Graph<'_, T>, c: Var, level: ShLevel, mode: RangeMode) -> Result<Var> {
    if g.cols(c) != 3 {
        return Err(Error::shape("sh_color_encode", g.shape(c), &[g.rows(c), 3]));
    }
    let k = level.components();
    let rows = g.rows(c);
    let mut out = vec![T::zero(); rows * k];
    let mut clamped = 0usize;
    let mut buf = vec![0.0; k];
    for (r, cv) in g.value(c).chunks(3).enumerate() {
        let mut col = [cv[0].f64(), cv[1].f64(), cv[2].f64()];
        if check_color(&mut col, mode)? {
            clamped += 1;
        }
        sh_poly(col.map(|v| 2.0 * v - 1.0), level, &mut buf);
        for (o, b) in out[r * k..(r + 1) * k].iter_mut().zip(&buf) {
            *o = T::of(*b);
        }
    }
    if clamped > 0 {
        log::warn!("sh_color_encode: clamped {clamped} colors into [0, 1]");
    }
    g.custom(&[c], &[rows, k], out, Box::new(ShColorOp { level }))
}
