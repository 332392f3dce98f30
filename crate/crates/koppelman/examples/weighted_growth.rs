//! Polynomial growth on C: the unweighted Cauchy formula needs boundary data,
//! but the weight (1 + nabla Q)^k with Q = zetabar e* / (2 pi i (1 + |zeta|^2))
//! decays along the boundary circle, so as the truncation radius R grows the
//! boundary contribution shrinks and the volume projection term takes over.

use koppelman::expr::{Assignment, Expr, Space};
use koppelman::form::{Ambient, Form};
use koppelman::kernel::{bm_kernel, WeightSpec};
use koppelman::quad::{convergence_study, koppelman_eval, Domain, KoppelmanOptions};
use num_complex::Complex64;

fn main() {
    // degree-2 data with mixed monomials so every kernel term participates
    let zeta = Expr::var(Space::Zeta, 0);
    let phi = Form::scalar(
        Ambient::Flat { n: 1 },
        Expr::add(vec![Expr::one(), zeta.clone(), Expr::pow(zeta, 2)]),
    );
    let z0 = Complex64::new(0.4, -0.3);
    let mut z = Assignment::new();
    z.set(Space::Z, vec![z0]);

    for k in [2u32, 3] {
        let pair = bm_kernel(1, &WeightSpec::PolynomialGrowth { k }).expect("kernel pair");
        println!("weight power k = {k}:");
        let trace = convergence_study(&[5.0, 10.0, 20.0], |radius| {
            let domain = Domain::TruncatedCn { n: 1, radius };
            koppelman_eval(&pair, &phi, &domain, &z, 48, &KoppelmanOptions::default())
        })
        .expect("study");
        for pt in &trace.points {
            println!(
                "  R = {:>4}: residual {:.3e}, |boundary| {:.6e}",
                pt.parameter, pt.residual, pt.boundary_magnitude
            );
        }
        let last = trace.points.last().expect("points");
        assert!(last.residual < 1e-4, "residual {:.3e}", last.residual);
        assert!(
            trace.boundary_monotone,
            "boundary must decrease as R grows"
        );
        println!("  residual {:.3e} < 1e-4, boundary monotone decreasing", last.residual);
    }
}
