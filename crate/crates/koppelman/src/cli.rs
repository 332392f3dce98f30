//! Command-line front end: five verbs that build kernels, run verification
//! sweeps, and emit JSON reports plus optional CSV traces.
//!
//! Exit codes: 0 when every check the run performs passes (a correctly
//! detected obstruction is a pass), 1 when a verification fails or stays
//! inconclusive, 2 on configuration errors. The seed fixes every sampled
//! point and timings are zeroed by default, so reports are byte-identical
//! across runs with the same flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cohomology::{
    cech_dimension, classify_pn, classify_product, h01_representative, mechanism_check_pn,
    mechanism_check_product, obstruction_pairings, solve_dbar, DbarSpace, DbarStatus,
};
use crate::expr::{parse_complex, Assignment, Expr, Space};
use crate::form::{Ambient, Form};
use crate::kernel::{
    bm_kernel, flat_geometry, pn_geometry, pn_kernels, polynomial_growth_q, product_geometry,
    product_kernels, weight, EtaMap, KernelPair, WeightSpec,
};
use crate::quad::{convergence_study, koppelman_eval, Domain, KoppelmanOptions, KoppelmanTerms};
use crate::report::{
    self, complex_pair, finite, CohomologyReport, ComponentDump, KernelDump,
    KoppelmanReport, MechanismEntry, PairingEntry, SolveReport, SolveSample, Terms, WeightReport,
};
use crate::sample;

#[derive(Parser)]
#[command(
    name = "koppelman",
    version,
    about = "Weighted integral representation formulas: verify kernels, solve dbar, probe cohomology"
)]
pub struct Cli {
    /// Seed for every randomly sampled point; fixes the report bytes.
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    /// Record wall-clock timings (off by default so reports are reproducible).
    #[arg(long, global = true)]
    pub timings: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    pub json: Option<PathBuf>,
    /// Write a mesh,residual,runtime_ms convergence trace here.
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Reproduce a holomorphic monomial on a disc from the boundary integral.
    VerifyCauchy {
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        /// Interior evaluation point, e.g. "0.3" or "0.1+0.2i".
        #[arg(long, default_value = "0.3", allow_hyphen_values = true)]
        z: String,
        /// Monomial degree of the test function zeta^degree.
        #[arg(long, default_value_t = 2)]
        degree: u32,
        /// Boundary quadrature nodes.
        #[arg(long, default_value_t = 256)]
        points: usize,
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
        /// Extra random interior points to verify with the same mesh.
        #[arg(long, default_value_t = 0)]
        interior: usize,
    },
    /// Check the two weight axioms for a chosen weight realization.
    VerifyWeight {
        #[arg(long, value_enum, ignore_case = true)]
        kind: WeightKind,
        /// Weight power for polynomial-growth.
        #[arg(long, default_value_t = 0)]
        k: u32,
        /// Complex dimension (flat kinds) or projective dimension.
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Second-factor dimension for the product kind.
        #[arg(long, default_value_t = 1)]
        m: usize,
        /// Random sample points.
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 1e-10)]
        nabla_tolerance: f64,
        #[arg(long, default_value_t = 1e-12)]
        diagonal_tolerance: f64,
    },
    /// Solve dbar u = phi through the volume potential and verify the residual.
    SolveDbar {
        #[arg(long, value_enum, ignore_case = true)]
        space: SolveSpace,
        #[arg(long, default_value_t = 0)]
        p: usize,
        #[arg(long, default_value_t = 1)]
        q: usize,
        /// Line-bundle twist (projective line only).
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        r: i64,
        /// Form text file: one "coeff ^ generator ^ ..." line per monomial.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        /// Quadrature resolution per real dimension.
        #[arg(long, default_value_t = 24)]
        mesh: usize,
    },
    /// Classify a cohomology group and test the mechanism behind the verdict.
    Cohomology {
        #[arg(long, value_enum, ignore_case = true)]
        space: CohomSpace,
        #[arg(long, default_value_t = 0)]
        p: usize,
        #[arg(long, default_value_t = 1)]
        q: usize,
        /// Line-bundle twist on P1 or P2.
        #[arg(long, allow_hyphen_values = true)]
        r: Option<i64>,
        /// First-factor twist on P1xP1.
        #[arg(long, allow_hyphen_values = true)]
        k: Option<i64>,
        /// Second-factor twist on P1xP1.
        #[arg(long, allow_hyphen_values = true)]
        l: Option<i64>,
        /// Quadrature points for obstruction pairings.
        #[arg(long, default_value_t = 64)]
        mesh: usize,
    },
    /// Write the symbolic kernel pair, one text block per z-bidegree.
    DumpKernel {
        #[arg(long, value_enum, ignore_case = true)]
        space: KernelSpace,
        /// Holomorphic degree index of the projective kernel pair.
        #[arg(long, default_value_t = 0)]
        p: usize,
        /// Line-bundle twist on P1 or P2.
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        r: i64,
        /// First-factor twist on P1xP1.
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        k: i64,
        /// Second-factor twist on P1xP1.
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        l: i64,
        /// Weight for flat-space kernels (defaults to unweighted).
        #[arg(long, value_enum, ignore_case = true)]
        weight: Option<WeightKind>,
        /// Weight power when --weight polynomial-growth is chosen.
        #[arg(long, default_value_t = 1)]
        weight_k: u32,
        /// Directory that receives one text file per component.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory of golden component files to compare against byte for byte.
        #[arg(long)]
        golden: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightKind {
    Unweighted,
    OnePlusNablaQ,
    PolynomialGrowth,
    FunctionOfWeight,
    /// The twist-one weight alpha on projective space.
    Projective,
    /// The pair (alpha, alpha-tilde) on a product of projective lines.
    Product,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SolveSpace {
    Disc,
    Ball,
    P1,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum CohomSpace {
    P1,
    P2,
    #[value(name = "p1xp1")]
    P1xP1,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum KernelSpace {
    C1,
    C2,
    P1,
    P2,
    #[value(name = "p1xp1")]
    P1xP1,
}

/// Parse arguments, honor KOPPELMAN_THREADS, dispatch, and map errors to the
/// exit-code convention.
pub fn run() -> i32 {
    let cli = Cli::parse();
    configure_threads();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn configure_threads() {
    if let Ok(text) = std::env::var("KOPPELMAN_THREADS") {
        if let Ok(n) = text.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn elapsed_ms(started: Instant, timings: bool) -> u64 {
    if timings {
        started.elapsed().as_millis() as u64
    } else {
        0
    }
}

fn verdict(pass: bool) -> String {
    if pass { "pass" } else { "fail" }.to_string()
}

fn dispatch(cli: &Cli) -> Result<i32, String> {
    match &cli.command {
        Command::VerifyCauchy {
            radius,
            z,
            degree,
            points,
            tolerance,
            interior,
        } => run_verify_cauchy(cli, *radius, z, *degree, *points, *tolerance, *interior),
        Command::VerifyWeight {
            kind,
            k,
            n,
            m,
            points,
            nabla_tolerance,
            diagonal_tolerance,
        } => run_verify_weight(
            cli,
            *kind,
            *k,
            *n,
            *m,
            *points,
            *nabla_tolerance,
            *diagonal_tolerance,
        ),
        Command::SolveDbar {
            space,
            p,
            q,
            r,
            input,
            radius,
            mesh,
        } => run_solve_dbar(cli, *space, *p, *q, *r, input, *radius, *mesh),
        Command::Cohomology {
            space,
            p,
            q,
            r,
            k,
            l,
            mesh,
        } => run_cohomology(cli, *space, *p, *q, *r, *k, *l, *mesh),
        Command::DumpKernel {
            space,
            p,
            r,
            k,
            l,
            weight,
            weight_k,
            out,
            golden,
        } => run_dump_kernel(
            cli,
            *space,
            *p,
            *r,
            *k,
            *l,
            *weight,
            *weight_k,
            out.as_deref(),
            golden.as_deref(),
        ),
    }
}

// ---------------------------------------------------------------------------
// verify-cauchy
// ---------------------------------------------------------------------------

fn disc_point<R: Rng>(rng: &mut R, radius: f64) -> Complex64 {
    let r = radius * rng.gen::<f64>().sqrt();
    let t = rng.gen::<f64>() * std::f64::consts::TAU;
    Complex64::from_polar(r, t)
}

fn run_verify_cauchy(
    cli: &Cli,
    radius: f64,
    z_text: &str,
    degree: u32,
    points: usize,
    tolerance: f64,
    interior: usize,
) -> Result<i32, String> {
    if radius <= 0.0 {
        return Err("radius must be positive".into());
    }
    let z = parse_complex(z_text).map_err(|e| format!("bad --z: {e}"))?;
    if z.norm() >= radius * (1.0 - 1e-9) {
        return Err(format!(
            "z = {z} is not interior to |z| < {radius}; the representation needs an interior point"
        ));
    }
    let started = Instant::now();
    let pair = bm_kernel(1, &WeightSpec::Unweighted).map_err(err)?;
    let phi = Form::scalar(
        Ambient::Flat { n: 1 },
        Expr::pow(Expr::var(Space::Zeta, 0), degree as i32),
    );
    let domain = Domain::Disc {
        center: Complex64::new(0.0, 0.0),
        radius,
    };
    let opts = KoppelmanOptions::default();
    let eval_at = |w: Complex64, mesh: usize| -> Result<KoppelmanTerms, String> {
        let mut at = Assignment::new();
        at.set(Space::Z, vec![w]);
        koppelman_eval(&pair, &phi, &domain, &at, mesh, &opts).map_err(err)
    };

    let terms = eval_at(z, points)?;
    let got = terms.boundary_term.coeff(&[]);
    let expected = z.powu(degree);
    let residual = (got - expected).norm();

    let mut interior_max = None;
    if interior > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
        let mut worst = 0.0f64;
        for _ in 0..interior {
            let w = disc_point(&mut rng, radius * 0.9);
            let t = eval_at(w, points)?;
            worst = worst.max((t.boundary_term.coeff(&[]) - w.powu(degree)).norm());
        }
        interior_max = Some(worst);
    }

    if let Some(path) = &cli.csv {
        let meshes: Vec<f64> = [16usize, 32, 64, 128, 256]
            .iter()
            .map(|&m| m as f64)
            .filter(|&m| m <= points as f64)
            .collect();
        let trace = convergence_study(&meshes, |m| {
            let mut at = Assignment::new();
            at.set(Space::Z, vec![z]);
            koppelman_eval(&pair, &phi, &domain, &at, m as usize, &opts)
        })
        .map_err(err)?;
        report::emit_trace_csv(&trace.points, cli.timings, path).map_err(err)?;
    }

    let pass = residual < tolerance && interior_max.map_or(true, |m| m < tolerance);
    let rep = KoppelmanReport {
        schema: report::SCHEMA,
        command: "verify-cauchy".into(),
        kernel: pair.label.clone(),
        z: complex_pair(z),
        value: complex_pair(got),
        expected: complex_pair(expected),
        terms: Terms::from_eval(&terms),
        residual,
        interior_max_residual: interior_max,
        tolerance,
        mesh: points,
        runtime_ms: elapsed_ms(started, cli.timings),
        verdict: verdict(pass),
    };
    report::emit_json(&rep, cli.json.as_deref()).map_err(err)?;
    Ok(if pass { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// verify-weight
// ---------------------------------------------------------------------------

struct WeightTarget {
    g: Form,
    eta: EtaMap,
}

struct AxiomSweep {
    max_nabla: f64,
    max_diag: f64,
    scalar_diag: Complex64,
}

/// Check nabla g = 0 and scalar(g)(z, z) = 1 at seeded random points. Points
/// where the realization is singular (tiny homogeneous vectors) are resampled.
fn weight_axiom_sweep(
    targets: &[WeightTarget],
    points: usize,
    seed: u64,
    sample_at: &dyn Fn(&mut ChaCha8Rng) -> Assignment,
) -> Result<AxiomSweep, String> {
    let mut out = AxiomSweep {
        max_nabla: 0.0,
        max_diag: 0.0,
        scalar_diag: Complex64::new(0.0, 0.0),
    };
    for target in targets {
        let nabla = target.eta.nabla(&target.g).map_err(err)?.compile();
        let scalar = target.g.coeff(&[]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = Vec::new();
        let mut checked = 0usize;
        let mut attempts = 0usize;
        while checked < points {
            attempts += 1;
            if attempts > points * 50 {
                return Err("weight sampling kept hitting singular points".into());
            }
            let at = sample_at(&mut rng);
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
            out.max_nabla = out.max_nabla.max(closed.norm_inf());
            out.max_diag = out
                .max_diag
                .max((on_diag - Complex64::new(1.0, 0.0)).norm());
            out.scalar_diag = on_diag;
            checked += 1;
        }
    }
    Ok(out)
}

fn flat_sampler(dim: usize) -> impl Fn(&mut ChaCha8Rng) -> Assignment {
    move |rng| sample::random_assignment(rng, dim)
}

/// Rejection-sample assignments whose listed space vectors stay away from the
/// origin, where homogeneous denominators degenerate.
fn away_from_zero_sampler(
    dims: Vec<(Space, usize)>,
) -> impl Fn(&mut ChaCha8Rng) -> Assignment {
    move |rng| loop {
        let mut at = Assignment::new();
        let mut ok = true;
        for &(space, dim) in &dims {
            let v = sample::random_vector(rng, dim);
            let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if norm < 0.3 {
                ok = false;
            }
            at.set(space, v);
        }
        if ok {
            return at;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_verify_weight(
    cli: &Cli,
    kind: WeightKind,
    k: u32,
    n: usize,
    m: usize,
    points: usize,
    nabla_tolerance: f64,
    diagonal_tolerance: f64,
) -> Result<i32, String> {
    if n == 0 || m == 0 {
        return Err("dimensions must be at least 1".into());
    }
    let started = Instant::now();
    let flat_spec = |kind: WeightKind| -> Result<WeightSpec, String> {
        Ok(match kind {
            WeightKind::Unweighted => WeightSpec::Unweighted,
            WeightKind::OnePlusNablaQ => WeightSpec::OnePlusNablaQ {
                q: polynomial_growth_q(n).map_err(err)?,
                label: "1 + nabla Q".into(),
            },
            WeightKind::PolynomialGrowth => WeightSpec::PolynomialGrowth { k },
            WeightKind::FunctionOfWeight => WeightSpec::FunctionOfWeight {
                series: vec![
                    Complex64::new(1.0, 0.0),
                    Complex64::new(2.0, 0.0),
                    Complex64::new(1.0, 0.0),
                ],
                q: polynomial_growth_q(n).map_err(err)?,
                label: "(1 + t)^2 at t = nabla Q".into(),
            },
            _ => unreachable!("flat_spec is only called for flat kinds"),
        })
    };

    let (targets, space_label, kind_label, sampler): (
        Vec<WeightTarget>,
        String,
        String,
        Box<dyn Fn(&mut ChaCha8Rng) -> Assignment>,
    ) = match kind {
        WeightKind::Unweighted
        | WeightKind::OnePlusNablaQ
        | WeightKind::PolynomialGrowth
        | WeightKind::FunctionOfWeight => {
            let spec = flat_spec(kind)?;
            let w = weight(&spec, n).map_err(err)?;
            let geo = flat_geometry(n).map_err(err)?;
            (
                vec![WeightTarget {
                    g: w.g,
                    eta: geo.eta_map,
                }],
                format!("C^{n}"),
                w.label,
                Box::new(flat_sampler(n)),
            )
        }
        WeightKind::Projective => {
            let geo = pn_geometry(n).map_err(err)?;
            (
                vec![WeightTarget {
                    g: geo.alpha,
                    eta: geo.eta_map,
                }],
                format!("P^{n}"),
                "alpha".into(),
                Box::new(away_from_zero_sampler(vec![
                    (Space::Zeta, n + 1),
                    (Space::Z, n + 1),
                ])),
            )
        }
        WeightKind::Product => {
            let geo = product_geometry(n, m).map_err(err)?;
            (
                vec![
                    WeightTarget {
                        g: geo.alpha,
                        eta: geo.eta_map.clone(),
                    },
                    WeightTarget {
                        g: geo.alpha_tilde,
                        eta: geo.eta_map,
                    },
                ],
                format!("P^{n}xP^{m}"),
                "alpha, alpha-tilde".into(),
                Box::new(away_from_zero_sampler(vec![
                    (Space::Zeta, n + 1),
                    (Space::Z, n + 1),
                    (Space::ZetaTilde, m + 1),
                    (Space::ZTilde, m + 1),
                ])),
            )
        }
    };

    let sweep = weight_axiom_sweep(&targets, points, cli.seed, sampler.as_ref())?;
    let pass = sweep.max_nabla < nabla_tolerance && sweep.max_diag < diagonal_tolerance;
    let rep = WeightReport {
        schema: report::SCHEMA,
        command: "verify-weight".into(),
        kind: kind_label,
        space: space_label,
        points,
        scalar_at_diagonal: complex_pair(sweep.scalar_diag),
        max_nabla_residual: sweep.max_nabla,
        max_diagonal_defect: sweep.max_diag,
        nabla_tolerance,
        diagonal_tolerance,
        runtime_ms: elapsed_ms(started, cli.timings),
        verdict: verdict(pass),
    };
    report::emit_json(&rep, cli.json.as_deref()).map_err(err)?;
    Ok(if pass { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// solve-dbar
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn run_solve_dbar(
    cli: &Cli,
    space: SolveSpace,
    p: usize,
    q: usize,
    r: i64,
    input: &Path,
    radius: f64,
    mesh: usize,
) -> Result<i32, String> {
    let started = Instant::now();
    let (ambient, dspace, label) = match space {
        SolveSpace::Disc => (
            Ambient::Flat { n: 1 },
            DbarSpace::Disc { radius },
            "disc".to_string(),
        ),
        SolveSpace::Ball => (
            Ambient::Flat { n: 2 },
            DbarSpace::Ball { radius },
            "ball".to_string(),
        ),
        SolveSpace::P1 => (
            Ambient::Projective { n: 1 },
            DbarSpace::ProjectiveLine,
            "P1".to_string(),
        ),
    };
    let text = fs::read_to_string(input).map_err(|e| format!("{}: {e}", input.display()))?;
    let phi = Form::parse(ambient, &text).map_err(err)?;
    let out = solve_dbar(&dspace, p, q, r, &phi, mesh).map_err(err)?;

    let status = match out.status {
        DbarStatus::Solved => "solved",
        DbarStatus::Obstructed => "obstructed",
        DbarStatus::Inconclusive => "inconclusive",
    };
    let samples = out
        .samples
        .iter()
        .map(|(pt, v)| SolveSample {
            point: pt.iter().copied().map(complex_pair).collect(),
            value: complex_pair(*v),
        })
        .collect();
    let conclusive = out.status != DbarStatus::Inconclusive;
    let rep = SolveReport {
        schema: report::SCHEMA,
        command: "solve-dbar".into(),
        space: label,
        p,
        q,
        r,
        status: status.into(),
        residual: out.residual,
        pairings: out.pairings.clone(),
        mesh: out.mesh,
        samples,
        runtime_ms: elapsed_ms(started, cli.timings),
        verdict: verdict(conclusive),
    };
    report::emit_json(&rep, cli.json.as_deref()).map_err(err)?;
    Ok(if conclusive { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// cohomology
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn run_cohomology(
    cli: &Cli,
    space: CohomSpace,
    p: usize,
    q: usize,
    r: Option<i64>,
    k: Option<i64>,
    l: Option<i64>,
    mesh: usize,
) -> Result<i32, String> {
    let started = Instant::now();
    match space {
        CohomSpace::P1 | CohomSpace::P2 => {
            let n = if matches!(space, CohomSpace::P1) { 1 } else { 2 };
            let r = r.ok_or("projective spaces need --r")?;
            let space_name = format!("P{n}");
            let oracle = if n == 1 { cech_dimension(p, q, r).ok() } else { None };
            let classified = classify_pn(n, p, q, r).map_err(err)?;
            let (case, verdict_text, mechanism, residual, pairings, pass) = match classified {
                Some(case) => {
                    let mech = mechanism_check_pn(n, p, q, r).map_err(err)?;
                    let mut pass = mech.pass;
                    let mut text = if pass { "trivial" } else { "mechanism-failed" };
                    if pass && oracle.map_or(false, |d| d != 0) {
                        pass = false;
                        text = "oracle-mismatch";
                    }
                    (
                        Some(case.letter().to_string()),
                        text.to_string(),
                        Some(MechanismEntry {
                            route: mech.route.clone(),
                            residual: finite(mech.residual),
                            pass: mech.pass,
                        }),
                        finite(mech.residual),
                        Vec::new(),
                        pass,
                    )
                }
                None if n == 1 && p == 0 && q == 1 && r <= -2 => {
                    let rep_form = h01_representative(r).map_err(err)?;
                    let pairs = obstruction_pairings(&rep_form, r, mesh).map_err(err)?;
                    let max = pairs.iter().map(|(_, v)| v.norm()).fold(0.0, f64::max);
                    let obstructed = max > 0.1;
                    let consistent = oracle.map_or(true, |d| obstructed == (d > 0));
                    let text = if obstructed { "obstructed" } else { "unresolved" };
                    (
                        None,
                        text.to_string(),
                        None,
                        finite(max),
                        pairs
                            .iter()
                            .map(|(name, v)| PairingEntry {
                                section: name.clone(),
                                value: complex_pair(*v),
                            })
                            .collect(),
                        obstructed && consistent,
                    )
                }
                None => {
                    let text = match oracle {
                        Some(0) => "trivial",
                        Some(_) => "nontrivial",
                        None => "uncovered",
                    };
                    (None, text.to_string(), None, None, Vec::new(), true)
                }
            };
            let rep = CohomologyReport {
                schema: report::SCHEMA,
                command: "cohomology".into(),
                space: space_name,
                p,
                q,
                r: Some(r),
                k: None,
                l: None,
                case,
                verdict: verdict_text,
                mechanism,
                residual,
                cech_dimension: oracle,
                pairings,
                runtime_ms: elapsed_ms(started, cli.timings),
            };
            report::emit_json(&rep, cli.json.as_deref()).map_err(err)?;
            Ok(if pass { 0 } else { 1 })
        }
        CohomSpace::P1xP1 => {
            let k = k.ok_or("P1xP1 needs --k")?;
            let l = l.ok_or("P1xP1 needs --l")?;
            if p != 0 {
                return Err("the product classification covers (0, q) forms only".into());
            }
            let classified = classify_product(1, 1, q, k, l).map_err(err)?;
            let (case, verdict_text, mechanism, residual, pass) = match classified {
                Some(case) => {
                    let mech = mechanism_check_product(1, 1, q, k, l).map_err(err)?;
                    let text = if mech.pass { "trivial" } else { "mechanism-failed" };
                    let pass = mech.pass;
                    (
                        Some(case.letter().to_string()),
                        text.to_string(),
                        Some(MechanismEntry {
                            route: mech.route.clone(),
                            residual: finite(mech.residual),
                            pass: mech.pass,
                        }),
                        finite(mech.residual),
                        pass,
                    )
                }
                None => (None, "uncovered".to_string(), None, None, true),
            };
            let rep = CohomologyReport {
                schema: report::SCHEMA,
                command: "cohomology".into(),
                space: "P1xP1".into(),
                p,
                q,
                r: None,
                k: Some(k),
                l: Some(l),
                case,
                verdict: verdict_text,
                mechanism,
                residual,
                cech_dimension: None,
                pairings: Vec::new(),
                runtime_ms: elapsed_ms(started, cli.timings),
            };
            report::emit_json(&rep, cli.json.as_deref()).map_err(err)?;
            Ok(if pass { 0 } else { 1 })
        }
    }
}

// ---------------------------------------------------------------------------
// dump-kernel
// ---------------------------------------------------------------------------

fn dump_components(pair: &KernelPair) -> Vec<ComponentDump> {
    let z_dim = pair.ambient.coords(Space::Z);
    let zt_dim = pair.ambient.coords(Space::ZTilde);
    let mut out = Vec::new();
    for (part, form) in [("k", &pair.k), ("p", &pair.p)] {
        for zp in 0..=z_dim {
            for zq in 0..=z_dim {
                let slice = form.pick_bidegree(Space::Z, zp, zq);
                if zt_dim == 0 {
                    if !slice.is_zero() {
                        out.push(ComponentDump {
                            part: part.into(),
                            bidegree: format!("z{zp}{zq}"),
                            text: slice.to_string(),
                        });
                    }
                    continue;
                }
                for tp in 0..=zt_dim {
                    for tq in 0..=zt_dim {
                        let piece = slice.pick_bidegree(Space::ZTilde, tp, tq);
                        if !piece.is_zero() {
                            out.push(ComponentDump {
                                part: part.into(),
                                bidegree: format!("z{zp}{zq}_zt{tp}{tq}"),
                                text: piece.to_string(),
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn run_dump_kernel(
    cli: &Cli,
    space: KernelSpace,
    p: usize,
    r: i64,
    k: i64,
    l: i64,
    weight_kind: Option<WeightKind>,
    weight_k: u32,
    out_dir: Option<&Path>,
    golden: Option<&Path>,
) -> Result<i32, String> {
    let flat_weight = |n: usize| -> Result<WeightSpec, String> {
        Ok(match weight_kind {
            None | Some(WeightKind::Unweighted) => WeightSpec::Unweighted,
            Some(WeightKind::PolynomialGrowth) => WeightSpec::PolynomialGrowth { k: weight_k },
            Some(WeightKind::OnePlusNablaQ) => WeightSpec::OnePlusNablaQ {
                q: polynomial_growth_q(n).map_err(err)?,
                label: "1 + nabla Q".into(),
            },
            Some(WeightKind::FunctionOfWeight) => WeightSpec::FunctionOfWeight {
                series: vec![
                    Complex64::new(1.0, 0.0),
                    Complex64::new(2.0, 0.0),
                    Complex64::new(1.0, 0.0),
                ],
                q: polynomial_growth_q(n).map_err(err)?,
                label: "(1 + t)^2 at t = nabla Q".into(),
            },
            Some(_) => return Err("projective/product weights are built into those kernels".into()),
        })
    };
    let (pair, space_name) = match space {
        KernelSpace::C1 => (bm_kernel(1, &flat_weight(1)?).map_err(err)?, "C1"),
        KernelSpace::C2 => (bm_kernel(2, &flat_weight(2)?).map_err(err)?, "C2"),
        KernelSpace::P1 => (pn_kernels(1, p, r).map_err(err)?, "P1"),
        KernelSpace::P2 => (pn_kernels(2, p, r).map_err(err)?, "P2"),
        KernelSpace::P1xP1 => (product_kernels(1, 1, k, l).map_err(err)?, "P1xP1"),
    };

    let components = dump_components(&pair);
    let mut files = None;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(err)?;
        let mut written = Vec::new();
        for c in &components {
            let name = format!("{}_{}.txt", c.part, c.bidegree);
            fs::write(dir.join(&name), format!("{}\n", c.text)).map_err(err)?;
            written.push(name);
        }
        files = Some(written);
    }

    let mut mismatches = Vec::new();
    if let Some(dir) = golden {
        for c in &components {
            let name = format!("{}_{}.txt", c.part, c.bidegree);
            match fs::read_to_string(dir.join(&name)) {
                Ok(reference) => {
                    if reference.trim_end() != c.text.trim_end() {
                        mismatches.push(name);
                    }
                }
                Err(_) => mismatches.push(format!("{name} (missing)")),
            }
        }
    }

    let rep = KernelDump {
        schema: report::SCHEMA,
        command: "dump-kernel".into(),
        space: space_name.into(),
        kernel: pair.label.clone(),
        components,
        files,
    };
    report::emit_json(&rep, cli.json.as_deref()).map_err(err)?;
    if !mismatches.is_empty() {
        eprintln!("golden mismatch: {}", mismatches.join(", "));
        return Ok(1);
    }
    Ok(0)
}
