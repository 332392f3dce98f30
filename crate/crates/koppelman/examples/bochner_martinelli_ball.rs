//! Bochner-Martinelli reproduction on the unit ball in C^2: for holomorphic
//! data the sphere integral of K against phi recovers phi at interior points.
//! The kernel decays like |zeta - z|^(-3), so plain Gauss-Legendre nodes on
//! the sphere suffice away from the diagonal.

use koppelman::expr::{Assignment, Expr, Space};
use koppelman::form::{Ambient, Form};
use koppelman::kernel::{bm_kernel, WeightSpec};
use koppelman::quad::{koppelman_eval, Domain, KoppelmanOptions};
use num_complex::Complex64;

fn main() {
    let pair = bm_kernel(2, &WeightSpec::Unweighted).expect("kernel pair");
    println!("kernel: {}", pair.label);

    // phi = zeta0 zeta1 + zeta0^2 - 4, holomorphic on the closed ball
    let z0 = Expr::var(Space::Zeta, 0);
    let z1 = Expr::var(Space::Zeta, 1);
    let phi = Form::scalar(
        Ambient::Flat { n: 2 },
        Expr::add(vec![
            Expr::mul(vec![z0.clone(), z1]),
            Expr::pow(z0, 2),
            Expr::constant(Complex64::new(-4.0, 0.0)),
        ]),
    );
    let eval = |w: &[Complex64]| w[0] * w[1] + w[0] * w[0] - Complex64::new(4.0, 0.0);
    let domain = Domain::Ball {
        center: [Complex64::new(0.0, 0.0); 2],
        radius: 1.0,
    };

    let mut worst = 0.0f64;
    for w in [
        [Complex64::new(0.3, 0.1), Complex64::new(-0.2, 0.25)],
        [Complex64::new(-0.15, -0.4), Complex64::new(0.1, 0.3)],
        [Complex64::new(0.05, 0.0), Complex64::new(0.0, -0.55)],
    ] {
        let mut at = Assignment::new();
        at.set(Space::Z, w.to_vec());
        let terms = koppelman_eval(&pair, &phi, &domain, &at, 16, &KoppelmanOptions::default())
            .expect("evaluation");
        let got = terms.boundary_term.coeff(&[]);
        let want = eval(&w);
        let err = (got - want).norm();
        worst = worst.max(err);
        println!("z = ({:.2}, {:.2}): boundary {got:.9}, exact {want:.9}, error {err:.3e}", w[0], w[1]);
    }
    assert!(worst < 1e-3, "sphere reproduction error {worst:.3e}");
    println!("max error {worst:.3e} < 1e-3");
}
