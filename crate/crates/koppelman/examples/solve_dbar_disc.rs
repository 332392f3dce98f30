//! Solve dbar u = phi on the unit disc for phi = zetabar dzetabar. The volume
//! potential u(z) = integral of K wedge phi solves the equation and here
//! equals zbar^2 / 2; the solver certifies dbar u = phi through a
//! finite-difference residual without knowing that closed form.

use koppelman::cohomology::{solve_dbar, DbarSpace, DbarStatus};
use koppelman::expr::{Expr, Space};
use koppelman::form::{Ambient, Form, Generator};

fn main() {
    let ambient = Ambient::Flat { n: 1 };
    let phi = Form::gen_1(ambient, Generator::dbar(Space::Zeta, 0))
        .expect("generator")
        .scale(&Expr::var_conj(Space::Zeta, 0));
    println!("phi =\n{phi}");

    let out = solve_dbar(&DbarSpace::Disc { radius: 1.0 }, 0, 1, 0, &phi, 24).expect("solve");
    println!("status: {:?}", out.status);
    println!("finite-difference residual of dbar u - phi: {:.3e}", out.residual);
    println!("potential samples against the exact solution zbar^2/2:");
    let mut worst = 0.0f64;
    for (pt, u) in &out.samples {
        let exact = pt[0].conj() * pt[0].conj() * 0.5;
        let diff = (u - exact).norm();
        worst = worst.max(diff);
        println!("  z = {:>24}: u = {u:.9}, exact {exact:.9}, difference {diff:.3e}", pt[0]);
    }
    assert_eq!(out.status, DbarStatus::Solved);
    assert!(out.residual < 1e-3, "residual {:.3e}", out.residual);
    assert!(worst < 1e-4, "potential mismatch {worst:.3e}");
    println!("dbar u = phi verified, residual {:.3e} < 1e-3", out.residual);
}
