//! Seeded random generators for expressions, points and small forms.
//!
//! Used by property tests and by the numeric validators in `kernel` (weight
//! axioms are checked on sampled point clouds). Everything takes an explicit
//! RNG so runs are reproducible from a seed.

use crate::expr::{Assignment, Expr, ExprError, Space, VarId};
use num_complex::Complex64;
use rand::Rng;

/// Uniform complex number in the centered square [-1,1]².
pub fn random_complex<R: Rng>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

/// Complex vector of length `dim`, entries in the unit square.
pub fn random_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<Complex64> {
    (0..dim).map(|_| random_complex(rng)).collect()
}

/// Point with `dim` coordinates in every space.
pub fn random_assignment<R: Rng>(rng: &mut R, dim: usize) -> Assignment {
    let mut at = Assignment::new();
    for s in Space::ALL {
        at.set(s, random_vector(rng, dim));
    }
    at
}

/// Point on the sphere |v| = radius in ℂ^dim.
pub fn random_sphere_point<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vec<Complex64> {
    loop {
        let v = random_vector(rng, dim);
        let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x * (radius / n)).collect();
        }
    }
}

/// Random expression tree over ζ and z with up to 2 coordinates per space.
/// Depth-bounded; leaves are small-integer constants and variables so that
/// finite differencing stays well conditioned.
pub fn random_expr<R: Rng>(rng: &mut R, depth: usize) -> Expr {
    if depth == 0 {
        return match rng.gen_range(0..4) {
            0 => Expr::constant(Complex64::new(
                rng.gen_range(-2..3) as f64,
                rng.gen_range(-2..3) as f64,
            )),
            _ => {
                let space = if rng.gen_bool(0.5) { Space::Zeta } else { Space::Z };
                let v = VarId {
                    space,
                    index: rng.gen_range(0..2),
                    conjugated: rng.gen_bool(0.5),
                };
                Expr::var_id(v)
            }
        };
    }
    match rng.gen_range(0..6) {
        0 => Expr::add(vec![random_expr(rng, depth - 1), random_expr(rng, depth - 1)]),
        1 => Expr::mul(vec![random_expr(rng, depth - 1), random_expr(rng, depth - 1)]),
        2 => Expr::div(random_expr(rng, depth - 1), random_expr(rng, depth - 1)),
        3 => Expr::pow(random_expr(rng, depth - 1), rng.gen_range(-2..4)),
        4 => Expr::conj(random_expr(rng, depth - 1)),
        _ => random_expr(rng, 0),
    }
}

/// Central finite-difference Wirtinger derivative. For ∂/∂v with v a base
/// variable this is (∂_x − i∂_y)/2 on the underlying real coordinates; for a
/// conjugated v it is (∂_x + i∂_y)/2.
pub fn fd_wirtinger(
    e: &Expr,
    v: VarId,
    at: &Assignment,
    h: f64,
) -> Result<Complex64, ExprError> {
    let base = VarId { conjugated: false, ..v };
    let shifted = |dre: f64, dim: f64| -> Result<Complex64, ExprError> {
        let mut a = at.clone();
        let mut vals = a.space(base.space).to_vec();
        if vals.len() <= base.index {
            return Err(ExprError::UnboundVariable(base));
        }
        vals[base.index] += Complex64::new(dre, dim);
        a.set(base.space, vals);
        e.eval(&a)
    };
    let dx = (shifted(h, 0.0)? - shifted(-h, 0.0)?) / (2.0 * h);
    let dy = (shifted(0.0, h)? - shifted(0.0, -h)?) / (2.0 * h);
    let i = Complex64::new(0.0, 1.0);
    Ok(if v.conjugated {
        (dx + i * dy) / 2.0
    } else {
        (dx - i * dy) / 2.0
    })
}
