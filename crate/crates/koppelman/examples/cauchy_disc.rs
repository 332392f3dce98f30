//! Cauchy reproduction on the unit disc: the boundary term of the
//! representation formula alone recovers a holomorphic polynomial at
//! interior points, and the kernel is the classical Cauchy kernel
//! dzeta / (2 pi i (zeta - z)).

use koppelman::expr::{Assignment, Expr, Space};
use koppelman::form::{Ambient, Form};
use koppelman::kernel::{bm_kernel, WeightSpec};
use koppelman::quad::{koppelman_eval, Domain, KoppelmanOptions};
use num_complex::Complex64;

fn main() {
    let pair = bm_kernel(1, &WeightSpec::Unweighted).expect("kernel pair");
    println!("kernel: {}", pair.label);
    println!("K components by z-bidegree:");
    println!("{}", pair.k_component(0, 0));

    // phi = 3 zeta^2 - zeta + 2, evaluated from 256 boundary nodes only
    let zeta = Expr::var(Space::Zeta, 0);
    let phi = Form::scalar(
        Ambient::Flat { n: 1 },
        Expr::add(vec![
            Expr::mul(vec![Expr::constant(Complex64::new(3.0, 0.0)), Expr::pow(zeta.clone(), 2)]),
            Expr::mul(vec![Expr::constant(Complex64::new(-1.0, 0.0)), zeta]),
            Expr::constant(Complex64::new(2.0, 0.0)),
        ]),
    );
    let eval = |w: Complex64| {
        Complex64::new(3.0, 0.0) * w * w - w + Complex64::new(2.0, 0.0)
    };
    let domain = Domain::Disc {
        center: Complex64::new(0.0, 0.0),
        radius: 1.0,
    };

    let mut worst = 0.0f64;
    for w in [
        Complex64::new(0.3, 0.0),
        Complex64::new(-0.52, 0.41),
        Complex64::new(0.05, -0.83),
        Complex64::new(0.55, 0.55),
    ] {
        let mut at = Assignment::new();
        at.set(Space::Z, vec![w]);
        let terms = koppelman_eval(&pair, &phi, &domain, &at, 256, &KoppelmanOptions::default())
            .expect("evaluation");
        let got = terms.boundary_term.coeff(&[]);
        let want = eval(w);
        let err = (got - want).norm();
        worst = worst.max(err);
        println!("z = {w:>24}: boundary {got:.12}, exact {want:.12}, error {err:.3e}");
    }
    assert!(worst < 1e-10, "boundary reproduction error {worst:.3e}");
    println!("max error {worst:.3e} < 1e-10");
}
