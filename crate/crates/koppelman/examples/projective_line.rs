//! The projective line: the twist-one weight alpha is nabla-closed and equals
//! one on the diagonal, the Chern block (D eta - Theta~)/(2 pi i) is
//! nabla-closed, and the projection kernel P integrates the constant function
//! to exactly one (it realizes the Fubini-Study class).

use koppelman::expr::{Assignment, Expr, Space};
use koppelman::form::Form;
use koppelman::kernel::{pn_geometry, pn_kernels};
use koppelman::quad::{koppelman_eval, Domain, KoppelmanOptions};
use koppelman::sample;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let geo = pn_geometry(1).expect("geometry");

    // weight axioms for alpha at random points of the homogeneous chart
    let nabla_alpha = geo.eta_map.nabla(&geo.alpha).expect("nabla").compile();
    let block = geo.chern.block().expect("block");
    let nabla_block = geo.eta_map.nabla(&block).expect("nabla").compile();
    let scalar = geo.alpha.coeff(&[]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut buf = Vec::new();
    let mut worst_nabla = 0.0f64;
    let mut worst_diag = 0.0f64;
    let mut checked = 0;
    while checked < 100 {
        let at = sample::random_assignment(&mut rng, 2);
        let (Ok(a), Ok(b)) = (
            nabla_alpha.eval_with(&at, &mut buf),
            nabla_block.eval_with(&at, &mut buf),
        ) else {
            continue;
        };
        worst_nabla = worst_nabla.max(a.norm_inf()).max(b.norm_inf());
        let mut diag = at.clone();
        diag.set(Space::Z, at.space(Space::Zeta).to_vec());
        if let Ok(v) = scalar.eval(&diag) {
            worst_diag = worst_diag.max((v - Complex64::new(1.0, 0.0)).norm());
        }
        checked += 1;
    }
    println!("max |nabla alpha|, |nabla block| over 100 points: {worst_nabla:.3e}");
    println!("max |alpha(z,z) - 1| over 100 points: {worst_diag:.3e}");
    assert!(worst_nabla < 1e-9);
    assert!(worst_diag < 1e-12);

    // reproduction of the constant function: only the projection term
    // survives on the (0,0) slice, and it integrates to one
    let pair = pn_kernels(1, 0, 0).expect("kernel pair");
    let phi = Form::scalar(pair.ambient, Expr::one());
    let domain = Domain::ProjectiveChart { n: 1 };
    let mut z = Assignment::new();
    z.set(Space::Z, vec![Complex64::new(1.0, 0.0), Complex64::new(0.3, -0.2)]);
    let terms = koppelman_eval(&pair, &phi, &domain, &z, 16, &KoppelmanOptions::default())
        .expect("evaluation");
    let p = terms.p_term.coeff(&[]);
    println!("projection of the constant 1 over P1: {p:.12}");
    assert!((p - Complex64::new(1.0, 0.0)).norm() < 1e-6);
    println!("residual of the full formula: {:.3e}", terms.residual);
    assert!(terms.residual < 1e-6);
}
