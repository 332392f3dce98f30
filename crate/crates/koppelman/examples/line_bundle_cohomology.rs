//! Line bundles O(r) on the projective line: classify H^(p,q)(P1, O(r)) for
//! |r| <= 3, verify the vanishing mechanism behind each covered entry, check
//! the verdicts against an independent Cech dimension count, and exhibit the
//! obstruction for r = -2: the Serre pairing of the (0,1) generator against
//! the dual section is one, so dbar u = phi has no solution.

use koppelman::cohomology::{
    cech_dimension, classify_pn, h01_representative, mechanism_check_pn, obstruction_pairings,
    solve_dbar, DbarSpace, DbarStatus,
};

fn main() {
    println!("{:>4} {:>4} {:>4} | {:>4} {:>9} | mechanism", "p", "q", "r", "case", "cech dim");
    for p in 0..=1usize {
        for q in 0..=1usize {
            for r in -3i64..=3 {
                let cech = cech_dimension(p, q, r).expect("oracle");
                match classify_pn(1, p, q, r).expect("classify") {
                    Some(case) => {
                        let mech = mechanism_check_pn(1, p, q, r).expect("mechanism");
                        println!(
                            "{p:>4} {q:>4} {r:>4} | {:>4} {cech:>9} | {} (residual {:.2e})",
                            case.letter(),
                            mech.route,
                            mech.residual
                        );
                        assert!(mech.pass, "mechanism failed at ({p},{q},{r})");
                        assert_eq!(cech, 0, "covered entry must be trivial ({p},{q},{r})");
                    }
                    None => {
                        println!("{p:>4} {q:>4} {r:>4} | {:>4} {cech:>9} | not covered", "-");
                        assert!(cech > 0, "uncovered entry should be nontrivial ({p},{q},{r})");
                    }
                }
            }
        }
    }

    // the first obstructed twist: H^(0,1)(P1, O(-2)) is one-dimensional
    let phi = h01_representative(-2).expect("representative");
    let pairings = obstruction_pairings(&phi, -2, 64).expect("pairings");
    for (section, value) in &pairings {
        println!("Serre pairing against {section}: {value:.9}");
        assert!(value.norm() > 0.1, "pairing should obstruct");
    }

    // and the solver reports the obstruction instead of a bogus potential
    let out = solve_dbar(&DbarSpace::ProjectiveLine, 0, 1, -2, &phi, 20).expect("solve");
    println!("solver status for the r = -2 generator: {:?}", out.status);
    assert_eq!(out.status, DbarStatus::Obstructed);
}
