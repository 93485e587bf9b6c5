//! Position and color encodings: a single-level hash grid over the
//! contraction cube and real spherical harmonics in Cartesian form.

mod hash;
mod sh;

pub use hash::{hash_encode, hash_encode_point, HashEncodingConfig, HashLookup};
pub use sh::{
    sh_basis, sh_color_encode, sh_color_encode_graph, sh_poly, sh_poly_jacobian, RangeMode, ShLevel,
};
