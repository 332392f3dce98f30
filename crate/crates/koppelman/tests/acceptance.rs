//! End-to-end acceptance suite. Each test prints one PASS/FAIL line for the
//! capability it certifies and enforces both the stated tolerance and a
//! wall-clock budget. Run with `cargo test --test acceptance -- --nocapture`
//! to see every line.

use std::time::{Duration, Instant};

use koppelman::cohomology::{
    cech_dimension, classify_pn, h01_representative, mechanism_check_pn, obstruction_pairings,
    solve_dbar, DbarSpace, DbarStatus,
};
use koppelman::expr::{Assignment, Expr, Space};
use koppelman::form::{Ambient, Form, Generator};
use koppelman::kernel::{
    self, bm_kernel, flat_geometry, pn_geometry, pn_kernels, polynomial_growth_q,
    product_geometry, product_kernels, two_pi_i, EtaMap, WeightSpec,
};
use koppelman::quad::{
    convergence_study, integrate, iterated_product_integral, koppelman_eval, Domain,
    KoppelmanOptions, QuadratureRule,
};
use koppelman::sample;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn finish(name: &str, budget: Duration, started: Instant, outcome: Result<String, String>) {
    let elapsed = started.elapsed();
    let in_budget = elapsed <= budget;
    match &outcome {
        Ok(detail) => println!(
            "{} {name}: {detail} [{:.2}s of {:.0}s budget]",
            if in_budget { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs_f64()
        ),
        Err(detail) => println!(
            "FAIL {name}: {detail} [{:.2}s of {:.0}s budget]",
            elapsed.as_secs_f64(),
            budget.as_secs_f64()
        ),
    }
    if let Err(detail) = outcome {
        panic!("{name}: {detail}");
    }
    assert!(
        in_budget,
        "{name} exceeded its {budget:?} budget: {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// random form generation with tame polynomial coefficients
// ---------------------------------------------------------------------------

fn tame_expr<R: Rng>(rng: &mut R) -> Expr {
    let var = |rng: &mut R| {
        let space = if rng.gen::<bool>() { Space::Zeta } else { Space::Z };
        let index = rng.gen_range(0..2);
        if rng.gen::<bool>() {
            Expr::var(space, index)
        } else {
            Expr::var_conj(space, index)
        }
    };
    let monomial = |rng: &mut R| {
        let mut factors = vec![Expr::constant(Complex64::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        ))];
        for _ in 0..rng.gen_range(0..3) {
            factors.push(var(rng));
        }
        Expr::mul(factors)
    };
    let terms = (0..rng.gen_range(1..4)).map(|_| monomial(rng)).collect();
    Expr::add(terms)
}

fn random_generator<R: Rng>(rng: &mut R) -> Generator {
    match rng.gen_range(0..6) {
        0 => Generator::d(Space::Zeta, rng.gen_range(0..2)),
        1 => Generator::dbar(Space::Zeta, rng.gen_range(0..2)),
        2 => Generator::d(Space::Z, rng.gen_range(0..2)),
        3 => Generator::dbar(Space::Z, rng.gen_range(0..2)),
        4 => Generator::e(rng.gen_range(0..2)),
        _ => Generator::estar(rng.gen_range(0..2)),
    }
}

fn random_form<R: Rng>(rng: &mut R, ambient: Ambient, factors: usize) -> Form {
    let mut f = Form::scalar(ambient, tame_expr(rng));
    for _ in 0..factors {
        let g = Form::gen_1(ambient, random_generator(rng))
            .expect("generator")
            .scale(&tame_expr(rng));
        f = f.wedge(&g).expect("wedge");
    }
    f
}

/// Pointwise sup-norm of a form at a few random points, relative to scale 1.
fn max_eval<R: Rng>(f: &Form, rng: &mut R, points: usize) -> f64 {
    let compiled = f.compile();
    let mut buf = Vec::new();
    let mut worst = 0.0f64;
    let mut seen = 0;
    while seen < points {
        let at = sample::random_assignment(rng, 2);
        if let Ok(nf) = compiled.eval_with(&at, &mut buf) {
            worst = worst.max(nf.norm_inf());
            seen += 1;
        }
    }
    worst
}

#[test]
fn algebraic_identities_hold_pointwise() {
    let started = Instant::now();
    let outcome = (|| {
        let ambient = Ambient::Flat { n: 2 };
        let spaces = [Space::Zeta, Space::Z];
        let eta = flat_geometry(2).map_err(|e| e.to_string())?.eta_map;
        let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
        let tol = 1e-12;
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let f = random_form(&mut rng, ambient, 2);
            let g = random_form(&mut rng, ambient, 1);

            // dbar^2 = 0
            let ddf = f.dbar(&spaces).dbar(&spaces);
            worst = worst.max(max_eval(&ddf, &mut rng, 3));

            // delta^2 = 0
            let ccf = eta.contract(&eta.contract(&f));
            worst = worst.max(max_eval(&ccf, &mut rng, 3));

            // nabla^2 = 0
            let nnf = eta
                .nabla(&eta.nabla(&f).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            worst = worst.max(max_eval(&nnf, &mut rng, 3));

            // anticommutation: delta(dbar f) + dbar(delta f) = 0
            let anti = eta
                .contract(&f.dbar(&spaces))
                .add(&eta.contract(&f).dbar(&spaces))
                .map_err(|e| e.to_string())?;
            worst = worst.max(max_eval(&anti, &mut rng, 3));

            // Leibniz: dbar(g wedge f) = dbar g wedge f - g wedge dbar f
            // for g of odd degree 1
            let g1 = Form::gen_1(ambient, random_generator(&mut rng))
                .map_err(|e| e.to_string())?
                .scale(&tame_expr(&mut rng));
            let lhs = g1.wedge(&g).map_err(|e| e.to_string())?.dbar(&spaces);
            let rhs = g1
                .dbar(&spaces)
                .wedge(&g)
                .map_err(|e| e.to_string())?
                .sub(&g1.wedge(&g.dbar(&spaces)).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            let leib = lhs.sub(&rhs).map_err(|e| e.to_string())?;
            worst = worst.max(max_eval(&leib, &mut rng, 3));
        }
        if worst < tol {
            Ok(format!(
                "dbar^2, delta^2, nabla^2, anticommutation, Leibniz all vanish; max residual {worst:.2e} < {tol:.0e}"
            ))
        } else {
            Err(format!("identity residual {worst:.2e} >= {tol:.0e}"))
        }
    })();
    finish(
        "algebraic identity suite (200 random forms per law)",
        Duration::from_secs(10),
        started,
        outcome,
    );
}

#[test]
fn cauchy_boundary_reproduces_low_degree_polynomials() {
    let started = Instant::now();
    let outcome = (|| {
        let pair = bm_kernel(1, &WeightSpec::Unweighted).map_err(|e| e.to_string())?;
        let zeta = Expr::var(Space::Zeta, 0);
        // all monomials up to degree 5 with distinct coefficients
        let coeffs = [
            Complex64::new(2.0, 0.0),
            Complex64::new(-1.0, 0.5),
            Complex64::new(3.0, 0.0),
            Complex64::new(0.0, -2.0),
            Complex64::new(1.5, 1.0),
            Complex64::new(-0.5, 0.0),
        ];
        let phi = Form::scalar(
            Ambient::Flat { n: 1 },
            Expr::add(
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(d, c)| {
                        Expr::mul(vec![Expr::constant(*c), Expr::pow(zeta.clone(), d as i32)])
                    })
                    .collect(),
            ),
        );
        let eval = |w: Complex64| {
            coeffs
                .iter()
                .enumerate()
                .map(|(d, c)| c * w.powu(d as u32))
                .fold(Complex64::new(0.0, 0.0), |a, b| a + b)
        };
        let domain = Domain::Disc {
            center: Complex64::new(0.0, 0.0),
            radius: 1.0,
        };
        let opts = KoppelmanOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0xCA0C37);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let r = 0.85 * rng.gen::<f64>().sqrt();
            let t = rng.gen::<f64>() * std::f64::consts::TAU;
            let w = Complex64::from_polar(r, t);
            let mut at = Assignment::new();
            at.set(Space::Z, vec![w]);
            let terms =
                koppelman_eval(&pair, &phi, &domain, &at, 256, &opts).map_err(|e| e.to_string())?;
            worst = worst.max((terms.boundary_term.coeff(&[]) - eval(w)).norm());
        }
        if worst < 1e-10 {
            Ok(format!(
                "degree-5 polynomial recovered at 20 interior points, max error {worst:.2e} < 1e-10"
            ))
        } else {
            Err(format!("boundary reproduction error {worst:.2e} >= 1e-10"))
        }
    })();
    finish(
        "Cauchy boundary reproduction on the unit disc",
        Duration::from_secs(5),
        started,
        outcome,
    );
}

#[test]
fn bochner_martinelli_reduces_to_cauchy_kernel() {
    let started = Instant::now();
    let outcome = (|| {
        let pair = bm_kernel(1, &WeightSpec::Unweighted).map_err(|e| e.to_string())?;
        let compiled = pair.k.compile();
        let mut buf = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0xBEAC);
        let mut worst = 0.0f64;
        let mut seen = 0;
        while seen < 100 {
            let at = sample::random_assignment(&mut rng, 1);
            let zeta = at.space(Space::Zeta)[0];
            let z = at.space(Space::Z)[0];
            if (zeta - z).norm() < 1e-2 {
                continue;
            }
            let num = match compiled.eval_with(&at, &mut buf) {
                Ok(nf) => nf,
                Err(_) => continue,
            };
            let want = 1.0 / (two_pi_i() * (zeta - z));
            let got = num.coeff(&[Generator::d(Space::Zeta, 0)]);
            let rel = (got - want).norm() / want.norm();
            let opposite = (num.coeff(&[Generator::d(Space::Z, 0)]) + want).norm() / want.norm();
            worst = worst.max(rel).max(opposite);
            seen += 1;
        }
        if worst < 1e-13 {
            Ok(format!(
                "kernel equals dzeta/(2 pi i (zeta - z)) at 100 points, max relative error {worst:.2e} < 1e-13"
            ))
        } else {
            Err(format!("kernel mismatch {worst:.2e} >= 1e-13"))
        }
    })();
    finish(
        "Bochner-Martinelli kernel reduces to Cauchy at n = 1",
        Duration::from_secs(1),
        started,
        outcome,
    );
}

#[test]
fn ball_boundary_reproduces_holomorphic_data() {
    let started = Instant::now();
    let outcome = (|| {
        let pair = bm_kernel(2, &WeightSpec::Unweighted).map_err(|e| e.to_string())?;
        let z0 = Expr::var(Space::Zeta, 0);
        let z1 = Expr::var(Space::Zeta, 1);
        let phi = Form::scalar(
            Ambient::Flat { n: 2 },
            Expr::add(vec![
                Expr::mul(vec![z0.clone(), z1.clone()]),
                Expr::pow(z0, 2),
                z1,
                Expr::constant(Complex64::new(-4.0, 0.0)),
            ]),
        );
        let eval =
            |w: &[Complex64]| w[0] * w[1] + w[0] * w[0] + w[1] - Complex64::new(4.0, 0.0);
        let domain = Domain::Ball {
            center: [Complex64::new(0.0, 0.0); 2],
            radius: 1.0,
        };
        let opts = KoppelmanOptions::default();
        let mut worst = 0.0f64;
        for w in [
            [Complex64::new(0.3, 0.1), Complex64::new(-0.2, 0.25)],
            [Complex64::new(-0.15, -0.4), Complex64::new(0.1, 0.3)],
            [Complex64::new(0.05, 0.0), Complex64::new(0.0, -0.55)],
        ] {
            let mut at = Assignment::new();
            at.set(Space::Z, w.to_vec());
            let terms =
                koppelman_eval(&pair, &phi, &domain, &at, 16, &opts).map_err(|e| e.to_string())?;
            worst = worst.max((terms.boundary_term.coeff(&[]) - eval(&w)).norm());
        }
        if worst < 1e-3 {
            Ok(format!(
                "holomorphic data recovered from the sphere, max error {worst:.2e} < 1e-3"
            ))
        } else {
            Err(format!("sphere reproduction error {worst:.2e} >= 1e-3"))
        }
    })();
    finish(
        "Bochner-Martinelli reproduction on the unit ball in C^2",
        Duration::from_secs(120),
        started,
        outcome,
    );
}

struct WeightCase {
    label: String,
    g: Form,
    eta: EtaMap,
    dims: Vec<(Space, usize)>,
}

fn weight_sweep(case: &WeightCase, points: usize, seed: u64) -> Result<(f64, f64), String> {
    let nabla = case.eta.nabla(&case.g).map_err(|e| e.to_string())?.compile();
    let scalar = case.g.coeff(&[]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = Vec::new();
    let mut max_nabla = 0.0f64;
    let mut max_diag = 0.0f64;
    let mut checked = 0;
    while checked < points {
        let mut at = Assignment::new();
        let mut ok = true;
        for &(space, dim) in &case.dims {
            let v = sample::random_vector(&mut rng, dim);
            if v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt() < 0.3 {
                ok = false;
            }
            at.set(space, v);
        }
        if !ok {
            continue;
        }
        let closed = match nabla.eval_with(&at, &mut buf) {
            Ok(nf) => nf,
            Err(_) => continue,
        };
        let mut diag = at.clone();
        diag.set(Space::Z, at.space(Space::Zeta).to_vec());
        diag.set(Space::ZTilde, at.space(Space::ZetaTilde).to_vec());
        let on_diag = match scalar.eval(&diag) {
            Ok(v) => v,
            Err(_) => continue,
        };
        max_nabla = max_nabla.max(closed.norm_inf());
        max_diag = max_diag.max((on_diag - Complex64::new(1.0, 0.0)).norm());
        checked += 1;
    }
    Ok((max_nabla, max_diag))
}

#[test]
fn weight_axioms_hold_for_every_realization() {
    let started = Instant::now();
    let outcome = (|| {
        let mut cases = Vec::new();
        for n in 1..=2usize {
            let geo = flat_geometry(n).map_err(|e| e.to_string())?;
            let all_spaces = vec![
                (Space::Zeta, n),
                (Space::Z, n),
                (Space::ZetaTilde, n),
                (Space::ZTilde, n),
            ];
            let mut specs = vec![
                WeightSpec::Unweighted,
                WeightSpec::OnePlusNablaQ {
                    q: polynomial_growth_q(n).map_err(|e| e.to_string())?,
                    label: "1 + nabla Q".into(),
                },
                WeightSpec::FunctionOfWeight {
                    series: vec![
                        Complex64::new(1.0, 0.0),
                        Complex64::new(2.0, 0.0),
                        Complex64::new(1.0, 0.0),
                    ],
                    q: polynomial_growth_q(n).map_err(|e| e.to_string())?,
                    label: "(1 + t)^2 at t = nabla Q".into(),
                },
            ];
            for k in 1..=3u32 {
                specs.push(WeightSpec::PolynomialGrowth { k });
            }
            for spec in specs {
                let w = kernel::weight(&spec, n).map_err(|e| e.to_string())?;
                cases.push(WeightCase {
                    label: format!("{} on C^{n}", w.label),
                    g: w.g,
                    eta: geo.eta_map.clone(),
                    dims: all_spaces.clone(),
                });
            }
        }
        for n in 1..=2usize {
            let geo = pn_geometry(n).map_err(|e| e.to_string())?;
            cases.push(WeightCase {
                label: format!("alpha on P^{n}"),
                g: geo.alpha,
                eta: geo.eta_map,
                dims: vec![(Space::Zeta, n + 1), (Space::Z, n + 1)],
            });
        }
        let geo = product_geometry(1, 1).map_err(|e| e.to_string())?;
        let product_dims = vec![
            (Space::Zeta, 2),
            (Space::Z, 2),
            (Space::ZetaTilde, 2),
            (Space::ZTilde, 2),
        ];
        cases.push(WeightCase {
            label: "alpha on P^1 x P^1".into(),
            g: geo.alpha,
            eta: geo.eta_map.clone(),
            dims: product_dims.clone(),
        });
        cases.push(WeightCase {
            label: "alpha-tilde on P^1 x P^1".into(),
            g: geo.alpha_tilde,
            eta: geo.eta_map,
            dims: product_dims,
        });

        let mut worst_nabla = 0.0f64;
        let mut worst_diag = 0.0f64;
        let count = cases.len();
        for case in &cases {
            let (n, d) = weight_sweep(case, 100, 0x313)?;
            if n >= 1e-10 || d >= 1e-12 {
                return Err(format!(
                    "{}: nabla residual {n:.2e}, diagonal defect {d:.2e}",
                    case.label
                ));
            }
            worst_nabla = worst_nabla.max(n);
            worst_diag = worst_diag.max(d);
        }
        Ok(format!(
            "{count} realizations: max |nabla g| {worst_nabla:.2e} < 1e-10, max |g(z,z) - 1| {worst_diag:.2e} < 1e-12"
        ))
    })();
    finish(
        "weight axioms across all realizations",
        Duration::from_secs(30),
        started,
        outcome,
    );
}

#[test]
fn growth_weight_compensates_polynomial_data() {
    let started = Instant::now();
    let outcome = (|| {
        let zeta = Expr::var(Space::Zeta, 0);
        let phi = Form::scalar(
            Ambient::Flat { n: 1 },
            Expr::add(vec![Expr::one(), zeta.clone(), Expr::pow(zeta, 2)]),
        );
        let mut z = Assignment::new();
        z.set(Space::Z, vec![Complex64::new(0.4, -0.3)]);
        let opts = KoppelmanOptions::default();
        let mut detail = String::new();
        for k in [2u32, 3] {
            let pair =
                bm_kernel(1, &WeightSpec::PolynomialGrowth { k }).map_err(|e| e.to_string())?;
            let trace = convergence_study(&[5.0, 10.0, 20.0], |radius| {
                let domain = Domain::TruncatedCn { n: 1, radius };
                koppelman_eval(&pair, &phi, &domain, &z, 48, &opts)
            })
            .map_err(|e| e.to_string())?;
            let max_residual = trace
                .points
                .iter()
                .map(|p| p.residual)
                .fold(0.0f64, f64::max);
            if max_residual >= 1e-4 {
                return Err(format!("k = {k}: residual {max_residual:.2e} >= 1e-4"));
            }
            if !trace.boundary_monotone {
                let mags: Vec<String> = trace
                    .points
                    .iter()
                    .map(|p| format!("{:.2e}", p.boundary_magnitude))
                    .collect();
                return Err(format!(
                    "k = {k}: boundary magnitudes not decreasing: {}",
                    mags.join(" -> ")
                ));
            }
            detail.push_str(&format!(
                "k={k}: residual {max_residual:.2e}, boundary {:.2e} -> {:.2e}; ",
                trace.points.first().map(|p| p.boundary_magnitude).unwrap_or(0.0),
                trace.points.last().map(|p| p.boundary_magnitude).unwrap_or(0.0),
            ));
        }
        Ok(format!(
            "{detail}residual < 1e-4 at R in {{5, 10, 20}} with monotone boundary decay"
        ))
    })();
    finish(
        "growth weight compensates degree-2 data on truncated C",
        Duration::from_secs(60),
        started,
        outcome,
    );
}

#[test]
fn dbar_solvers_produce_certified_potentials() {
    let started = Instant::now();
    let outcome = (|| {
        // flat: phi = zetabar dzetabar on the unit disc, u = zbar^2/2
        let ambient = Ambient::Flat { n: 1 };
        let phi = Form::gen_1(ambient, Generator::dbar(Space::Zeta, 0))
            .map_err(|e| e.to_string())?
            .scale(&Expr::var_conj(Space::Zeta, 0));
        let flat = solve_dbar(&DbarSpace::Disc { radius: 1.0 }, 0, 1, 0, &phi, 48)
            .map_err(|e| e.to_string())?;
        if flat.status != DbarStatus::Solved || flat.residual >= 1e-3 {
            return Err(format!(
                "disc solve: status {:?}, residual {:.2e}",
                flat.status, flat.residual
            ));
        }
        let mut flat_exact = 0.0f64;
        for (pt, u) in &flat.samples {
            flat_exact = flat_exact.max((u - pt[0].conj() * pt[0].conj() * 0.5).norm());
        }

        // projective line: phi = dbar of the O(-1)-valued section
        // zetabar_0/|zeta|^2, recovered by the twisted volume potential
        let ambient = Ambient::Projective { n: 1 };
        let section = Expr::div(
            Expr::var_conj(Space::Zeta, 0),
            Expr::norm_sq(Space::Zeta, 2),
        );
        let phi = Form::scalar(ambient, section).dbar(&[Space::Zeta]);
        let line = solve_dbar(&DbarSpace::ProjectiveLine, 0, 1, -1, &phi, 48)
            .map_err(|e| e.to_string())?;
        if line.status != DbarStatus::Solved || line.residual >= 1e-3 {
            return Err(format!(
                "projective solve: status {:?}, residual {:.2e}",
                line.status, line.residual
            ));
        }
        Ok(format!(
            "disc residual {:.2e} (exact-potential error {flat_exact:.2e}), projective-line residual {:.2e}, both < 1e-3",
            flat.residual, line.residual
        ))
    })();
    finish(
        "dbar solvers on the disc and the projective line",
        Duration::from_secs(120),
        started,
        outcome,
    );
}

#[test]
fn curvature_identities_and_projection_normalization() {
    let started = Instant::now();
    let outcome = (|| {
        let mut worst = 0.0f64;
        for n in 1..=2usize {
            let geo = pn_geometry(n).map_err(|e| e.to_string())?;
            let dbar_theta = geo.chern.theta_tilde.dbar(&[Space::Zeta]).compile();
            let block = geo.chern.block().map_err(|e| e.to_string())?;
            let nabla_block = geo.eta_map.nabla(&block).map_err(|e| e.to_string())?.compile();
            let mut rng = ChaCha8Rng::seed_from_u64(0xC11E);
            let mut buf = Vec::new();
            let mut checked = 0;
            while checked < 100 {
                let at = sample::random_assignment(&mut rng, n + 1);
                let norm = at.space(Space::Zeta)
                    .iter()
                    .map(|x| x.norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                if norm < 0.3 {
                    continue;
                }
                let (Ok(a), Ok(b)) = (
                    dbar_theta.eval_with(&at, &mut buf),
                    nabla_block.eval_with(&at, &mut buf),
                ) else {
                    continue;
                };
                worst = worst.max(a.norm_inf()).max(b.norm_inf());
                checked += 1;
            }
        }
        if worst >= 1e-9 {
            return Err(format!("curvature identity residual {worst:.2e} >= 1e-9"));
        }

        // the projection kernel integrates the constant 1 over P1 to 1
        let pair = pn_kernels(1, 0, 0).map_err(|e| e.to_string())?;
        let phi = Form::scalar(pair.ambient, Expr::one());
        let domain = Domain::ProjectiveChart { n: 1 };
        let mut z = Assignment::new();
        z.set(
            Space::Z,
            vec![Complex64::new(1.0, 0.0), Complex64::new(0.3, -0.2)],
        );
        let terms = koppelman_eval(&pair, &phi, &domain, &z, 16, &KoppelmanOptions::default())
            .map_err(|e| e.to_string())?;
        let p = terms.p_term.coeff(&[]);
        let defect = (p - Complex64::new(1.0, 0.0)).norm();
        if defect >= 1e-6 {
            return Err(format!("projection of 1 is {p}, defect {defect:.2e} >= 1e-6"));
        }
        Ok(format!(
            "dbar Theta~ and nabla block vanish on P^1 and P^2 ({worst:.2e} < 1e-9); projection of 1 is 1 ({defect:.2e} < 1e-6)"
        ))
    })();
    finish(
        "curvature identities and projection normalization",
        Duration::from_secs(60),
        started,
        outcome,
    );
}

#[test]
fn line_bundle_table_matches_cech_oracle() {
    let started = Instant::now();
    let outcome = (|| {
        let mut covered = 0;
        for p in 0..=1usize {
            for q in 0..=1usize {
                for r in -3i64..=3 {
                    let cech = cech_dimension(p, q, r).map_err(|e| e.to_string())?;
                    match classify_pn(1, p, q, r).map_err(|e| e.to_string())? {
                        Some(case) => {
                            covered += 1;
                            let mech = mechanism_check_pn(1, p, q, r).map_err(|e| e.to_string())?;
                            if !mech.pass {
                                return Err(format!(
                                    "mechanism failed at ({p},{q},{r}) case {}: {} residual {:.2e}",
                                    case.letter(),
                                    mech.route,
                                    mech.residual
                                ));
                            }
                            if cech != 0 {
                                return Err(format!(
                                    "({p},{q},{r}) classified trivial but Cech dimension is {cech}"
                                ));
                            }
                        }
                        None => {
                            if cech == 0 {
                                return Err(format!(
                                    "({p},{q},{r}) uncovered yet Cech-trivial: a clause is missing"
                                ));
                            }
                        }
                    }
                }
            }
        }

        // the first obstructed twist, cross-checked against the oracle
        let cech = cech_dimension(0, 1, -2).map_err(|e| e.to_string())?;
        if cech != 1 {
            return Err(format!("Cech oracle gives {cech} for (0,1,-2), want 1"));
        }
        let phi = h01_representative(-2).map_err(|e| e.to_string())?;
        let pairings = obstruction_pairings(&phi, -2, 64).map_err(|e| e.to_string())?;
        let max_pairing = pairings.iter().map(|(_, v)| v.norm()).fold(0.0, f64::max);
        if max_pairing <= 0.1 {
            return Err(format!("obstruction pairing {max_pairing:.2e} <= 0.1"));
        }
        Ok(format!(
            "{covered} covered entries verified with mechanisms, uncovered entries all Cech-nontrivial, (0,1,-2) obstructed with pairing {max_pairing:.3}"
        ))
    })();
    finish(
        "line bundle cohomology table against the Cech oracle",
        Duration::from_secs(180),
        started,
        outcome,
    );
}

#[test]
fn product_kernel_reproduces_and_splits() {
    let started = Instant::now();
    let outcome = (|| {
        let pair = product_kernels(1, 1, 0, 0).map_err(|e| e.to_string())?;
        let phi = Form::scalar(pair.ambient, Expr::one());
        let chart = Domain::ProjectiveChart { n: 1 };
        let domain = Domain::Product(Box::new(chart.clone()), Box::new(chart.clone()));
        let mut z = Assignment::new();
        z.set(
            Space::Z,
            vec![Complex64::new(1.0, 0.0), Complex64::new(0.3, 0.1)],
        );
        z.set(
            Space::ZTilde,
            vec![Complex64::new(1.0, 0.0), Complex64::new(-0.2, 0.4)],
        );
        let terms = koppelman_eval(&pair, &phi, &domain, &z, 12, &KoppelmanOptions::default())
            .map_err(|e| e.to_string())?;
        let p = terms.p_term.coeff(&[]);
        let defect = (p - Complex64::new(1.0, 0.0)).norm();
        if defect >= 1e-5 {
            return Err(format!("constant reproduction {p}, defect {defect:.2e} >= 1e-5"));
        }

        let ambient = Ambient::Product { n: 1, m: 1 };
        let omega = kernel::fubini_study(ambient, Space::Zeta).map_err(|e| e.to_string())?;
        let omega_t =
            kernel::fubini_study(ambient, Space::ZetaTilde).map_err(|e| e.to_string())?;
        let density = omega.wedge(&omega_t).map_err(|e| e.to_string())?;
        let rule = QuadratureRule::tensor(16);
        let direct =
            integrate(&density, &domain, &rule, &Assignment::new()).map_err(|e| e.to_string())?;
        let iterated =
            iterated_product_integral(&density, &chart, &chart, &rule, &Assignment::new())
                .map_err(|e| e.to_string())?;
        let split = (direct.coeff(&[]) - iterated.coeff(&[])).norm();
        if split >= 1e-8 {
            return Err(format!("Fubini split mismatch {split:.2e} >= 1e-8"));
        }
        Ok(format!(
            "constants reproduce (defect {defect:.2e} < 1e-5); direct and iterated integrals agree ({split:.2e} < 1e-8)"
        ))
    })();
    finish(
        "product-space reproduction and Fubini split",
        Duration::from_secs(180),
        started,
        outcome,
    );
}
