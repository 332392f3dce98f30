//! Construction of integral kernel pairs (K, P).
//!
//! The common scheme on every geometry: pick a section η of a rank-ρ bundle
//! vanishing exactly on the diagonal, express the contraction δ_η on frame
//! generators, build
//!
//! * a normalized section u = σ + σ∧∂̄σ + σ∧(∂̄σ)² + … with δ_η σ = 1, which
//!   satisfies ∇u = 1 away from the diagonal (∇ = δ_η − ∂̄),
//! * a weight g: an even form with ∇g = 0 whose scalar part is 1 on the
//!   diagonal,
//!
//! and assemble K and P from g∧u and g by extracting the full frame volume.
//! On ℂⁿ the frame is trivial and extraction is the substitution
//! e*ⱼ ↦ dzⱼ−dζⱼ; on ℙⁿ it is a genuine fiber projection preceded by the
//! rewrite with the prefactor (ζ̄·e)∧(ζ·e*)/|ζ|²; on ℙⁿ×ℙᵐ the frame is
//! carried by the dζ differentials themselves and no projection is needed.
//!
//! Degenerate conventions (2πi placement, contraction constants, overall
//! normalization) are pinned here once and validated by the reproduction
//! tests in `quad`: the Cauchy and Bochner–Martinelli kernels must come out
//! with unit mass, and the curvature data must satisfy ∇(Dη − Θ̃) = 0.

use crate::expr::{Assignment, Expr, ExprError, Space};
use crate::form::{Ambient, Form, FormError, GenKind, Generator};
use crate::sample;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const TAU: f64 = std::f64::consts::TAU;

pub fn two_pi_i() -> Complex64 {
    Complex64::new(0.0, TAU)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error(transparent)]
    Form(#[from] FormError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("support function degenerates: {detail}")]
    SupportFunctionInvalid { detail: String },
    #[error("weight axiom violated for {label}: {detail}")]
    WeightAxiomViolation { label: String, detail: String },
    #[error("curvature data inconsistent: residual {residual:.3e} exceeds 1e-8")]
    ChernInconsistent { residual: f64 },
    #[error(
        "kernel ({p},{r}) needs a negative weight power; use the dual pair ({dual_p},{dual_r})"
    )]
    DualityRequired { p: usize, r: i64, dual_p: usize, dual_r: i64 },
    #[error("degree out of range: {detail}")]
    DegreeOutOfRange { detail: String },
}

/// Bundle twist attached to a kernel pair.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Twist {
    /// Flat space, no bundle.
    None,
    /// ℙⁿ, form degree p, acting on O(r)-valued forms.
    Pn { p: usize, r: i64 },
    /// ℙⁿ×ℙᵐ, acting on O(k,l)-valued (0,q) forms.
    Product { k: i64, l: i64 },
}

/// Contraction δ_η, described by what it does to single generators.
#[derive(Clone)]
pub enum EtaMap {
    /// e*ᵢ ↦ values[i].
    EStar(Vec<Expr>),
    /// Holomorphic differentials contract: d(space)ᵢ ↦ c·values[i].
    Diff(Vec<(Space, Vec<Expr>, Complex64)>),
}

impl EtaMap {
    pub fn action(&self, g: &Generator) -> Option<Expr> {
        match self {
            EtaMap::EStar(vals) => {
                if g.kind == GenKind::EStar && g.space == Space::Zeta {
                    vals.get(g.index).cloned()
                } else {
                    None
                }
            }
            EtaMap::Diff(entries) => {
                if g.kind != GenKind::D {
                    return None;
                }
                for (space, vals, c) in entries {
                    if g.space == *space {
                        return vals
                            .get(g.index)
                            .map(|v| Expr::constant(*c) * v.clone());
                    }
                }
                None
            }
        }
    }

    pub fn contract(&self, f: &Form) -> Form {
        f.contract(|g| self.action(g))
    }

    /// ∇ = δ_η − ∂̄ over all active spaces.
    pub fn nabla(&self, f: &Form) -> Result<Form, FormError> {
        self.contract(f).sub(&f.dbar_all())
    }
}

/// A kernel pair: K with the diagonal singularity, P smooth.
/// ∂̄K = [diagonal] − P in the current sense; the representation formula in
/// `quad` consumes both.
#[derive(Clone)]
pub struct KernelPair {
    pub ambient: Ambient,
    pub k: Form,
    pub p: Form,
    pub twist: Twist,
    pub label: String,
}

impl KernelPair {
    /// z-bidegree slice of K.
    pub fn k_component(&self, p: usize, q: usize) -> Form {
        self.k.pick_bidegree(Space::Z, p, q)
    }

    pub fn p_component(&self, p: usize, q: usize) -> Form {
        self.p.pick_bidegree(Space::Z, p, q)
    }
}

/// Curvature data for the frame bundle: Dη with δDη = 0, Θ̃ with ∂̄Θ̃ = 0 and
/// ∂̄Dη = −δΘ̃, so that Dη − Θ̃ is ∇-closed. `prefactor`, when present,
/// rewrites the fiber integral before projecting.
#[derive(Clone)]
pub struct ChernData {
    pub d_eta: Form,
    pub theta_tilde: Form,
    pub fiber_rank: usize,
    pub prefactor: Option<Form>,
}

impl ChernData {
    /// (Dη − Θ̃)/(2πi), the building block whose divided powers enter K and P.
    pub fn block(&self) -> Result<Form, FormError> {
        self.d_eta
            .sub(&self.theta_tilde)?
            .scale_c(Complex64::new(1.0, 0.0) / two_pi_i())
            .add(&Form::zero(self.d_eta.ambient))
    }

    fn prefactor_e_degree(&self) -> usize {
        self.prefactor
            .as_ref()
            .and_then(|p| {
                p.terms()
                    .map(|(m, _)| {
                        m.iter()
                            .filter(|g| g.kind == GenKind::E)
                            .count()
                    })
                    .max()
            })
            .unwrap_or(0)
    }
}

/// σ + σ∧∂̄σ + … + σ∧(∂̄σ)^cap, the normalized inverse of η along s.
/// δ_η s must be `delta` (a scalar); σ = s/δ.
pub fn sigma_series(s: &Form, delta: &Expr, cap: usize) -> Result<Form, FormError> {
    let sigma = s.div_scalar(delta);
    let dsigma = sigma.dbar_all();
    let mut u = Form::zero(s.ambient);
    let mut pow = Form::one(s.ambient);
    for _ in 0..=cap {
        u = u.add(&sigma.wedge(&pow)?)?;
        pow = pow.wedge(&dsigma)?;
    }
    Ok(u)
}

// ---------------------------------------------------------------------------
// flat space ℂⁿ
// ---------------------------------------------------------------------------

pub struct FlatGeometry {
    pub n: usize,
    pub ambient: Ambient,
    pub eta: Vec<Expr>,
    pub eta_map: EtaMap,
    /// b = η̄·e*/|η|², with δ_η b = 1.
    pub b: Form,
    pub u: Form,
    pub chern: ChernData,
}

/// ηⱼ = 2πi(zⱼ − ζⱼ). The 2πi lives in η so that all kernels reproduce with
/// mass +1 and no stray constants appear in the assembly.
pub fn flat_eta(n: usize) -> Vec<Expr> {
    (0..n)
        .map(|j| {
            Expr::constant(two_pi_i())
                * (Expr::var(Space::Z, j) - Expr::var(Space::Zeta, j))
        })
        .collect()
}

pub fn flat_geometry(n: usize) -> Result<FlatGeometry, KernelError> {
    let ambient = Ambient::Flat { n };
    let eta = flat_eta(n);
    let eta_norm_sq = Expr::add(
        eta.iter()
            .map(|e| e.clone() * Expr::conj(e.clone()))
            .collect(),
    );
    let b_coeffs: Vec<Expr> = eta
        .iter()
        .map(|e| Expr::div(Expr::conj(e.clone()), eta_norm_sq.clone()))
        .collect();
    let b = Form::vector(ambient, &b_coeffs, Generator::estar)?;
    let u = sigma_series(&b, &Expr::one(), n.saturating_sub(1))?;
    let d_eta = {
        // Σ dηⱼ ∧ eⱼ = 2πi Σ (dzⱼ − dζⱼ) ∧ eⱼ
        let mut f = Form::zero(ambient);
        for j in 0..n {
            let dz = Form::gen_1(ambient, Generator::d(Space::Z, j))?;
            let dzeta = Form::gen_1(ambient, Generator::d(Space::Zeta, j))?;
            let e = Form::gen_1(ambient, Generator::e(j))?;
            f = f.add(&dz.sub(&dzeta)?.scale_c(two_pi_i()).wedge(&e)?)?;
        }
        f
    };
    Ok(FlatGeometry {
        n,
        ambient,
        eta_map: EtaMap::EStar(eta.clone()),
        eta,
        b,
        u,
        chern: ChernData {
            d_eta,
            theta_tilde: Form::zero(ambient),
            fiber_rank: n,
            prefactor: None,
        },
    })
}

// ---------------------------------------------------------------------------
// weights
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub enum WeightSpec {
    Unweighted,
    /// g = 1 + ∇Q for a supplied potential Q (odd, one e* per term).
    OnePlusNablaQ { q: Form, label: String },
    /// g = (1 + ∇Q)^k with Q = ζ̄·e*/(2πi(1+|ζ|²)); reproduces polynomials
    /// of degree < k on ℂⁿ.
    PolynomialGrowth { k: u32 },
    /// g = G(∇Q) for an analytic G given by its polynomial coefficients
    /// (G(0) must be 1). Expanded as Σ G⁽ᵏ⁾(δ_ηQ)·(−∂̄Q)^k / k!.
    FunctionOfWeight { series: Vec<Complex64>, q: Form, label: String },
}

impl WeightSpec {
    pub fn label(&self) -> String {
        match self {
            WeightSpec::Unweighted => "unweighted".into(),
            WeightSpec::OnePlusNablaQ { label, .. } => label.clone(),
            WeightSpec::PolynomialGrowth { k } => format!("polynomial-growth k={k}"),
            WeightSpec::FunctionOfWeight { label, .. } => label.clone(),
        }
    }
}

pub struct Weight {
    pub g: Form,
    pub label: String,
}

/// Q = ζ̄·e*/(2πi(1+|ζ|²)): the potential behind the polynomial-growth
/// weight. δ_ηQ = (ζ̄·z − |ζ|²)/(1+|ζ|²), so the scalar part of 1+∇Q is
/// (1 + ζ̄·z)/(1+|ζ|²).
pub fn polynomial_growth_q(n: usize) -> Result<Form, FormError> {
    let ambient = Ambient::Flat { n };
    let den = Expr::constant(two_pi_i()) * (Expr::one() + Expr::norm_sq(Space::Zeta, n));
    let coeffs: Vec<Expr> = (0..n)
        .map(|j| Expr::div(Expr::var_conj(Space::Zeta, j), den.clone()))
        .collect();
    Form::vector(ambient, &coeffs, Generator::estar)
}

pub fn weight(spec: &WeightSpec, n: usize) -> Result<Weight, KernelError> {
    let ambient = Ambient::Flat { n };
    let geo = flat_geometry(n)?;
    let label = spec.label();
    let g = match spec {
        WeightSpec::Unweighted => Form::one(ambient),
        WeightSpec::OnePlusNablaQ { q, .. } => {
            Form::one(ambient).add(&geo.eta_map.nabla(q)?)?
        }
        WeightSpec::PolynomialGrowth { k } => {
            let q = polynomial_growth_q(n)?;
            Form::one(ambient)
                .add(&geo.eta_map.nabla(&q)?)?
                .wedge_pow(*k as usize)?
        }
        WeightSpec::FunctionOfWeight { series, q, .. } => {
            if series.first().copied() != Some(Complex64::new(1.0, 0.0)) {
                return Err(KernelError::WeightAxiomViolation {
                    label,
                    detail: "series constant term must be 1".into(),
                });
            }
            let delta_q = geo.eta_map.contract(q).coeff(&[]);
            let dbar_q = q.dbar_all();
            let mut g = Form::zero(ambient);
            let mut nilpotent = Form::one(ambient); // (−∂̄Q)^k
            let mut k_fact = 1.0f64;
            for k in 0..=n {
                if k > 0 {
                    nilpotent = nilpotent.wedge(&dbar_q.scale_c(Complex64::new(-1.0, 0.0)))?;
                    k_fact *= k as f64;
                }
                // G⁽ᵏ⁾(x) = Σ_{j≥k} aⱼ · j!/(j−k)! · x^{j−k}
                let mut deriv_terms = Vec::new();
                for (j, a) in series.iter().enumerate() {
                    if j < k {
                        continue;
                    }
                    let mut falling = 1.0f64;
                    for t in 0..k {
                        falling *= (j - t) as f64;
                    }
                    deriv_terms.push(
                        Expr::constant(a * falling)
                            * Expr::pow(delta_q.clone(), (j - k) as i32),
                    );
                }
                let deriv = Expr::add(deriv_terms);
                g = g.add(
                    &nilpotent
                        .scale(&deriv)
                        .scale_c(Complex64::new(1.0 / k_fact, 0.0)),
                )?;
            }
            g
        }
    };
    validate_weight(&g, n, &label)?;
    Ok(Weight { g, label })
}

/// Both weight axioms, checked on a seeded point cloud: ∇g = 0 everywhere
/// and scalar part 1 on the diagonal. Public so that hand-built weights can
/// be validated before use.
pub fn validate_weight(g: &Form, n: usize, label: &str) -> Result<(), KernelError> {
    let geo = flat_geometry(n)?;
    let nabla_g = geo.eta_map.nabla(g)?.compile();
    let scalar = g.coeff(&[]);
    let mut rng = ChaCha8Rng::seed_from_u64(0x77_11_22);
    let mut buf = Vec::new();
    let mut checked = 0usize;
    while checked < 100 {
        let at = sample::random_assignment(&mut rng, n);
        let closed = match nabla_g.eval_with(&at, &mut buf) {
            Ok(nf) => nf,
            Err(_) => continue,
        };
        if closed.norm_inf() > 1e-8 {
            return Err(KernelError::WeightAxiomViolation {
                label: label.to_string(),
                detail: format!("nabla g = {:.3e} off zero", closed.norm_inf()),
            });
        }
        let mut diag = at.clone();
        diag.set(Space::Z, at.space(Space::Zeta).to_vec());
        let on_diag = match scalar.eval(&diag) {
            Ok(v) => v,
            Err(_) => continue,
        };
        if (on_diag - Complex64::new(1.0, 0.0)).norm() > 1e-10 {
            return Err(KernelError::WeightAxiomViolation {
                label: label.to_string(),
                detail: format!("scalar part {on_diag} on the diagonal"),
            });
        }
        checked += 1;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// kernel assembly on ℂⁿ
// ---------------------------------------------------------------------------

/// e*ⱼ ↦ dzⱼ − dζⱼ: the trivial-frame realization on ℂⁿ.
fn substitute_estar_flat(f: &Form) -> Result<Form, FormError> {
    let ambient = f.ambient;
    f.substitute(|g| {
        if g.kind == GenKind::EStar && g.space == Space::Zeta {
            Some(
                Form::gen_1(ambient, Generator::d(Space::Z, g.index))
                    .and_then(|dz| {
                        dz.sub(&Form::gen_1(ambient, Generator::d(Space::Zeta, g.index))?)
                    })
                    .expect("flat ambient has matching dz/dzeta generators"),
            )
        } else {
            None
        }
    })
}

/// Weighted Bochner–Martinelli pair on ℂⁿ. K reproduces from the boundary
/// and volume terms, P is 0 exactly when unweighted.
pub fn bm_kernel(n: usize, spec: &WeightSpec) -> Result<KernelPair, KernelError> {
    let geo = flat_geometry(n)?;
    let w = weight(spec, n)?;
    let k = substitute_estar_flat(&w.g.wedge(&geo.u)?.pick_estar_degree(n))?;
    let p = substitute_estar_flat(&w.g.pick_estar_degree(n))?;
    Ok(KernelPair {
        ambient: geo.ambient,
        k,
        p,
        twist: Twist::None,
        label: format!("bm n={n} weight {}", w.label),
    })
}

/// Cauchy–Fantappiè–Leray pair from a support section s = Σ sⱼ e*ⱼ.
/// δ_η s must be nonvanishing at every supplied (ζ, z) sample; those samples
/// stand in for ∂D × D.
pub fn cfl_kernel(
    n: usize,
    s_coeffs: &[Expr],
    spec: &WeightSpec,
    samples: &[(Vec<Complex64>, Vec<Complex64>)],
) -> Result<KernelPair, KernelError> {
    if s_coeffs.len() != n {
        return Err(KernelError::DegreeOutOfRange {
            detail: format!("support section has {} components, ambient needs {n}", s_coeffs.len()),
        });
    }
    let geo = flat_geometry(n)?;
    let s = Form::vector(geo.ambient, s_coeffs, Generator::estar)?;
    let delta_s = geo.eta_map.contract(&s).coeff(&[]);
    for (zeta, z) in samples {
        let at = Assignment::new()
            .with(Space::Zeta, zeta.clone())
            .with(Space::Z, z.clone());
        let v = delta_s
            .eval(&at)
            .map_err(|e| KernelError::SupportFunctionInvalid {
                detail: format!("evaluation failed at a sample: {e}"),
            })?;
        if v.norm() < 1e-9 {
            return Err(KernelError::SupportFunctionInvalid {
                detail: format!("contraction vanishes at sample zeta={zeta:?}, z={z:?}"),
            });
        }
    }
    let u = sigma_series(&s, &delta_s, n.saturating_sub(1))?;
    let w = weight(spec, n)?;
    let k = substitute_estar_flat(&w.g.wedge(&u)?.pick_estar_degree(n))?;
    let p = substitute_estar_flat(&w.g.pick_estar_degree(n))?;
    Ok(KernelPair {
        ambient: geo.ambient,
        k,
        p,
        twist: Twist::None,
        label: format!("cfl n={n} weight {}", w.label),
    })
}

/// Default (ζ, z) validation samples for a ball of radius `r`: ζ on the
/// sphere, z well inside.
pub fn ball_support_samples(
    n: usize,
    r: f64,
    count: usize,
    seed: u64,
) -> Vec<(Vec<Complex64>, Vec<Complex64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let zeta = sample::random_sphere_point(&mut rng, n, r);
            let z = sample::random_sphere_point(&mut rng, n, 0.6 * r)
                .into_iter()
                .map(|x| x * 0.9)
                .collect();
            (zeta, z)
        })
        .collect()
}

/// Generic block assembly: K = proj(pre∧g∧u∧(block)_power),
/// P = proj(pre∧g∧(block)_power), power = rank − (e-degree of prefactor).
/// Validates ∇(Dη − Θ̃) = 0 on sampled points first.
pub fn curvature_block_kernels(
    chern: &ChernData,
    g: &Form,
    u: &Form,
    eta_map: &EtaMap,
) -> Result<(Form, Form), KernelError> {
    let closed = eta_map.nabla(&chern.d_eta.sub(&chern.theta_tilde)?)?.compile();
    let mut rng = ChaCha8Rng::seed_from_u64(0xd1a);
    let dim_zeta = chern.d_eta.ambient.coords(Space::Zeta);
    let mut residual = 0.0f64;
    let mut buf = Vec::new();
    let mut checked = 0usize;
    while checked < 60 {
        let at = sample::random_assignment(&mut rng, dim_zeta);
        match closed.eval_with(&at, &mut buf) {
            Ok(nf) => {
                residual = residual.max(nf.norm_inf());
                checked += 1;
            }
            Err(_) => continue,
        }
    }
    if residual > 1e-8 {
        return Err(KernelError::ChernInconsistent { residual });
    }
    let block = chern.block()?;
    let power = chern.fiber_rank - chern.prefactor_e_degree();
    let blk = block.divided_power(power)?;
    let pre = match &chern.prefactor {
        Some(p) => p.clone(),
        None => Form::one(chern.d_eta.ambient),
    };
    let k = pre
        .wedge(g)?
        .wedge(u)?
        .wedge(&blk)?
        .project_fiber(chern.fiber_rank);
    let p = pre.wedge(g)?.wedge(&blk)?.project_fiber(chern.fiber_rank);
    Ok((k, p))
}

// ---------------------------------------------------------------------------
// projective space ℙⁿ
// ---------------------------------------------------------------------------

/// ∂∂̄ log|v|² for the homogeneous coordinates of `space`, written out as a
/// rational (1,1)-form (no logarithms appear).
pub fn log_norm_ddbar(ambient: Ambient, space: Space) -> Result<Form, FormError> {
    let dim = ambient.coords(space);
    let norm = Expr::norm_sq(space, dim);
    let mut first = Form::zero(ambient);
    for i in 0..dim {
        let dv = Form::gen_1(ambient, Generator::d(space, i))?;
        let dvbar = Form::gen_1(ambient, Generator::dbar(space, i))?;
        first = first.add(&dv.wedge(&dvbar)?)?;
    }
    let vbar_dv = Form::vector(
        ambient,
        &Expr::coords_conj(space, dim),
        |i| Generator::d(space, i),
    )?;
    let v_dvbar = Form::vector(ambient, &Expr::coords(space, dim), |i| {
        Generator::dbar(space, i)
    })?;
    first
        .div_scalar(&norm)
        .sub(&vbar_dv.wedge(&v_dvbar)?.div_scalar(&Expr::pow(norm.clone(), 2)))
}

/// Fubini–Study form (i/2π)·∂∂̄log|v|², normalized so ∫_{ℙ¹} ω = 1.
pub fn fubini_study(ambient: Ambient, space: Space) -> Result<Form, FormError> {
    Ok(log_norm_ddbar(ambient, space)?.scale_c(Complex64::new(0.0, 1.0 / TAU)))
}

pub struct PnGeometry {
    pub n: usize,
    pub ambient: Ambient,
    /// δ_η: e*ᵢ ↦ zᵢ (homogeneous coordinates, no constants).
    pub eta_map: EtaMap,
    pub s: Form,
    pub delta_s: Expr,
    pub u: Form,
    /// α = z·ζ̄/|ζ|² − ∂̄(ζ̄·e*/|ζ|²), the ∇-closed weight of twist one.
    pub alpha: Form,
    /// β = dζ·e.
    pub beta: Form,
    pub chern: ChernData,
    pub omega_z: Form,
    pub omega_zeta: Form,
}

pub fn pn_geometry(n: usize) -> Result<PnGeometry, KernelError> {
    let ambient = Ambient::Projective { n };
    let dim = n + 1;
    let z = Expr::coords(Space::Z, dim);
    let zbar = Expr::coords_conj(Space::Z, dim);
    let zeta = Expr::coords(Space::Zeta, dim);
    let zetabar = Expr::coords_conj(Space::Zeta, dim);
    let z_norm = Expr::norm_sq(Space::Z, dim);
    let zeta_norm = Expr::norm_sq(Space::Zeta, dim);

    let eta_map = EtaMap::EStar(z.clone());

    // s = z̄·e*/|z|² − (z̄·ζ)/(|ζ|²|z|²) ζ̄·e*, with
    // δ_η s = 1 − |⟨z,ζ⟩|²/(|ζ|²|z|²), vanishing exactly on the diagonal
    let zbar_zeta = Expr::dot(&zbar, &zeta);
    let s_coeffs: Vec<Expr> = (0..dim)
        .map(|i| {
            Expr::div(zbar[i].clone(), z_norm.clone())
                - Expr::div(
                    zbar_zeta.clone() * zetabar[i].clone(),
                    zeta_norm.clone() * z_norm.clone(),
                )
        })
        .collect();
    let s = Form::vector(ambient, &s_coeffs, Generator::estar)?;
    let delta_s = eta_map.contract(&s).coeff(&[]);
    let u = sigma_series(&s, &delta_s, n)?;

    // q̂ = ζ̄·e*/|ζ|²; α = δ_η q̂ − ∂̄q̂ = z·ζ̄/|ζ|² − ∂̄q̂
    let q_hat = Form::vector(
        ambient,
        &zetabar
            .iter()
            .map(|c| Expr::div(c.clone(), zeta_norm.clone()))
            .collect::<Vec<_>>(),
        Generator::estar,
    )?;
    let alpha = Form::scalar(ambient, Expr::div(Expr::dot(&z, &zetabar), zeta_norm.clone()))
        .sub(&q_hat.dbar_all())?;

    // β = Σ dζᵢ ∧ eᵢ
    let mut beta = Form::zero(ambient);
    for i in 0..dim {
        beta = beta.add(
            &Form::gen_1(ambient, Generator::d(Space::Zeta, i))?
                .wedge(&Form::gen_1(ambient, Generator::e(i))?)?,
        )?;
    }

    // Dη = dz·e − (z·ζ̄/|ζ|²) dζ·e − (z̄·dz/|z|²)∧(z·e)
    let mut dz_e = Form::zero(ambient);
    let mut z_e = Form::zero(ambient);
    for i in 0..dim {
        dz_e = dz_e.add(
            &Form::gen_1(ambient, Generator::d(Space::Z, i))?
                .wedge(&Form::gen_1(ambient, Generator::e(i))?)?,
        )?;
        z_e = z_e.add(&Form::gen_1(ambient, Generator::e(i))?.scale(&z[i].clone()))?;
    }
    let zbar_dz = Form::vector(ambient, &zbar, |i| Generator::d(Space::Z, i))?;
    let scalar_zw = Expr::div(Expr::dot(&z, &zetabar), zeta_norm.clone());
    let d_eta = dz_e
        .sub(&beta.scale(&scalar_zw))?
        .sub(&zbar_dz.div_scalar(&z_norm).wedge(&z_e)?)?;

    // Θ̃ = L_z ∧ Σ eᵢ∧e*ᵢ − ∂̄q̂ ∧ (dζ·e)
    let l_z = log_norm_ddbar(ambient, Space::Z)?;
    let mut frame_pairs = Form::zero(ambient);
    for i in 0..dim {
        frame_pairs = frame_pairs.add(
            &Form::gen_1(ambient, Generator::e(i))?
                .wedge(&Form::gen_1(ambient, Generator::estar(i))?)?,
        )?;
    }
    let theta_tilde = l_z
        .wedge(&frame_pairs)?
        .sub(&q_hat.dbar_all().wedge(&beta)?)?;

    // Fiber-integral prefactor (ζ·e)∧(ζ·e*)/(ζ·ζ). The bilinear pairing keeps
    // the reduction compatible with the quotient by the ζ-line: e-type classes
    // are represented modulo ζ·e, matching the e*ᵢ ↦ dζᵢ replacement rule that
    // the (0,q) kernels are built on. The hermitian variant (ζ̄·e with |ζ|²)
    // would change class representatives and scale the kernel by ζ·ζ/|ζ|².
    let zeta_e = Form::vector(ambient, &zeta, |i| Generator::e(i))?;
    let zeta_estar = Form::vector(ambient, &zeta, Generator::estar)?;
    let zeta_sq = Expr::dot(&zeta, &zeta);
    let prefactor = zeta_e.wedge(&zeta_estar)?.div_scalar(&zeta_sq);

    Ok(PnGeometry {
        n,
        ambient,
        eta_map,
        s,
        delta_s,
        u,
        alpha,
        beta,
        chern: ChernData {
            d_eta,
            theta_tilde,
            fiber_rank: dim,
            prefactor: Some(prefactor),
        },
        omega_z: fubini_study(ambient, Space::Z)?,
        omega_zeta: fubini_study(ambient, Space::Zeta)?,
    })
}

/// Kernel pair on ℙⁿ for (p, ·)-forms with values in O(r). The weight power
/// is n−p+r; when it is negative no direct kernel exists and the dual pair
/// (n−p, −r) must be used instead.
pub fn pn_kernels(n: usize, p: usize, r: i64) -> Result<KernelPair, KernelError> {
    if p > n {
        return Err(KernelError::DegreeOutOfRange {
            detail: format!("form degree p={p} exceeds n={n}"),
        });
    }
    let j = (n - p) as i64 + r;
    if j < 0 {
        return Err(KernelError::DualityRequired {
            p,
            r,
            dual_p: n - p,
            dual_r: -r,
        });
    }
    let geo = pn_geometry(n)?;
    let block = geo.chern.block()?;
    let alpha_j = geo.alpha.wedge_pow(j as usize)?;
    let beta_pow = geo.beta.divided_power(n - p)?;
    let block_pow = block.divided_power(p)?;
    let core = alpha_j.wedge(&beta_pow)?.wedge(&block_pow)?;
    let pre = geo.chern.prefactor.clone().expect("projective prefactor");
    let norm = (-two_pi_i()).powi(p as i32 - n as i32);
    let k = pre
        .wedge(&geo.u)?
        .wedge(&core)?
        .project_fiber(n + 1)
        .scale_c(norm);
    let p_form = pre.wedge(&core)?.project_fiber(n + 1).scale_c(norm);
    Ok(KernelPair {
        ambient: geo.ambient,
        k,
        p: p_form,
        twist: Twist::Pn { p, r },
        label: format!("pn n={n} p={p} r={r}"),
    })
}

// ---------------------------------------------------------------------------
// products ℙⁿ×ℙᵐ
// ---------------------------------------------------------------------------

pub struct ProductGeometry {
    pub n: usize,
    pub m: usize,
    pub ambient: Ambient,
    /// δ contracts holomorphic differentials: dζᵢ ↦ −2πi·zᵢ, dζ̃ᵢ ↦ −2πi·z̃ᵢ.
    pub eta_map: EtaMap,
    pub u: Form,
    pub alpha: Form,
    pub alpha_tilde: Form,
}

fn product_half_s(
    ambient: Ambient,
    zeta_space: Space,
    z_space: Space,
) -> Result<Form, FormError> {
    let dim = ambient.coords(zeta_space);
    let zbar = Expr::coords_conj(z_space, dim);
    let zeta = Expr::coords(zeta_space, dim);
    let zetabar = Expr::coords_conj(zeta_space, dim);
    let z_norm = Expr::norm_sq(z_space, dim);
    let zeta_norm = Expr::norm_sq(zeta_space, dim);
    let zbar_zeta = Expr::dot(&zbar, &zeta);
    let coeffs: Vec<Expr> = (0..dim)
        .map(|i| {
            Expr::div(zbar[i].clone(), z_norm.clone())
                - Expr::div(
                    zbar_zeta.clone() * zetabar[i].clone(),
                    z_norm.clone() * zeta_norm.clone(),
                )
        })
        .collect();
    Form::vector(ambient, &coeffs, |i| Generator::d(zeta_space, i))
}

fn product_alpha(
    ambient: Ambient,
    zeta_space: Space,
    z_space: Space,
) -> Result<Form, FormError> {
    let dim = ambient.coords(zeta_space);
    let z = Expr::coords(z_space, dim);
    let zetabar = Expr::coords_conj(zeta_space, dim);
    let zeta_norm = Expr::norm_sq(zeta_space, dim);
    let scalar = Expr::div(Expr::dot(&z, &zetabar), zeta_norm);
    // ∇α = 0 forces the (1,1) coefficient to be the reciprocal of the
    // contraction constant −2πi, i.e. +ω_FS on the integration side
    let l = log_norm_ddbar(ambient, zeta_space)?;
    Form::scalar(ambient, scalar)
        .add(&l.scale_c(Complex64::new(1.0, 0.0) / (-two_pi_i())))
}

pub fn product_geometry(n: usize, m: usize) -> Result<ProductGeometry, KernelError> {
    let ambient = Ambient::Product { n, m };
    let eta_map = EtaMap::Diff(vec![
        (Space::Zeta, Expr::coords(Space::Z, n + 1), -two_pi_i()),
        (Space::ZetaTilde, Expr::coords(Space::ZTilde, m + 1), -two_pi_i()),
    ]);
    let s = product_half_s(ambient, Space::Zeta, Space::Z)?
        .add(&product_half_s(ambient, Space::ZetaTilde, Space::ZTilde)?)?;
    let delta_s = eta_map.contract(&s).coeff(&[]);
    let u = sigma_series(&s, &delta_s, n + m + 1)?;
    Ok(ProductGeometry {
        n,
        m,
        ambient,
        eta_map,
        u,
        alpha: product_alpha(ambient, Space::Zeta, Space::Z)?,
        alpha_tilde: product_alpha(ambient, Space::ZetaTilde, Space::ZTilde)?,
    })
}

/// Kernel pair on ℙⁿ×ℙᵐ for (0, ·)-forms with values in O(k, l).
/// K = u∧α^{n+k}∧α̃^{m+l}, P = α^{n+k}∧α̃^{m+l}; both weight powers must be
/// nonnegative.
pub fn product_kernels(n: usize, m: usize, k: i64, l: i64) -> Result<KernelPair, KernelError> {
    if n as i64 + k < 0 || m as i64 + l < 0 {
        return Err(KernelError::DegreeOutOfRange {
            detail: format!(
                "weight powers n+k={} and m+l={} must both be nonnegative",
                n as i64 + k,
                m as i64 + l
            ),
        });
    }
    let geo = product_geometry(n, m)?;
    let weight = geo
        .alpha
        .wedge_pow((n as i64 + k) as usize)?
        .wedge(&geo.alpha_tilde.wedge_pow((m as i64 + l) as usize)?)?;
    Ok(KernelPair {
        ambient: geo.ambient,
        k: geo.u.wedge(&weight)?,
        p: weight,
        twist: Twist::Product { k, l },
        label: format!("product n={n} m={m} twist ({k},{l})"),
    })
}

// ---------------------------------------------------------------------------
// homogeneity bookkeeping
// ---------------------------------------------------------------------------

/// Expected coefficient homogeneity of a twisted kernel monomial: with
/// (a, b, c, d) = (#dζ, #dζ̄, #dz, #dz̄) the ζ-degrees are (−r−a, −b) and the
/// z-degrees (r−c, −d). Checked numerically by scaling each side.
pub fn check_pn_kernel_homogeneity(kp: &KernelPair) -> Result<(), String> {
    let r = match kp.twist {
        Twist::Pn { r, .. } => r,
        _ => return Err("homogeneity rule applies to projective kernels".into()),
    };
    let dim = kp.ambient.coords(Space::Zeta);
    let mut rng = ChaCha8Rng::seed_from_u64(0x40de);
    let mut buf = Vec::new();
    for form in [&kp.k, &kp.p] {
        let compiled = form.compile();
        for _ in 0..4 {
            let at = sample::random_assignment(&mut rng, dim);
            let lambda = sample::random_complex(&mut rng) + Complex64::new(1.5, 0.0);
            let mu = sample::random_complex(&mut rng) + Complex64::new(1.5, 0.0);
            let mut scaled = at.clone();
            scaled.set(
                Space::Zeta,
                at.space(Space::Zeta).iter().map(|v| v * lambda).collect(),
            );
            scaled.set(Space::Z, at.space(Space::Z).iter().map(|v| v * mu).collect());
            let (base, sc) = match (
                compiled.eval_with(&at, &mut buf),
                compiled.eval_with(&scaled, &mut buf),
            ) {
                (Ok(x), Ok(y)) => (x, y),
                _ => continue,
            };
            for (monomial, coeff) in base.terms() {
                if coeff.norm() < 1e-12 {
                    continue;
                }
                let (a, b, c, d) = count_diffs(monomial);
                let want_zeta = (-r - a as i64, -(b as i64));
                let want_z = (r - c as i64, -(d as i64));
                let want = coeff
                    * lambda.powi(want_zeta.0 as i32)
                    * lambda.conj().powi(want_zeta.1 as i32)
                    * mu.powi(want_z.0 as i32)
                    * mu.conj().powi(want_z.1 as i32);
                if (sc.coeff(monomial) - want).norm() / want.norm().max(1e-12) > 1e-8 {
                    return Err(format!(
                        "monomial {:?} does not scale as ({},{})ζ ({},{})z",
                        monomial.iter().map(|g| g.name()).collect::<Vec<_>>(),
                        want_zeta.0,
                        want_zeta.1,
                        want_z.0,
                        want_z.1,
                    ));
                }
            }
        }
    }
    Ok(())
}

fn count_diffs(monomial: &[Generator]) -> (usize, usize, usize, usize) {
    let mut a = 0;
    let mut b = 0;
    let mut c = 0;
    let mut d = 0;
    for g in monomial {
        match (g.space, g.kind) {
            (Space::Zeta, GenKind::D) => a += 1,
            (Space::Zeta, GenKind::DBar) => b += 1,
            (Space::Z, GenKind::D) => c += 1,
            (Space::Z, GenKind::DBar) => d += 1,
            _ => {}
        }
    }
    (a, b, c, d)
}

/// Check that a (0,q) input form carries the homogeneity of an O(r)-valued
/// form: coefficients of a q-fold dζ̄ monomial scale as (r, −q) in ζ.
pub fn check_phi_twist(phi: &Form, twist: Twist) -> Result<(), KernelError> {
    let (r_zeta, r_tilde) = match twist {
        Twist::None => return Ok(()),
        Twist::Pn { r, .. } => (r, 0),
        Twist::Product { k, l } => (k, l),
    };
    let dim = phi.ambient.coords(Space::Zeta);
    let dim_tilde = phi.ambient.coords(Space::ZetaTilde);
    let mut rng = ChaCha8Rng::seed_from_u64(0x7157);
    for (monomial, coeff) in phi.terms() {
        let count = |space: Space, kind: GenKind| {
            monomial
                .iter()
                .filter(|g| g.space == space && g.kind == kind)
                .count() as i64
        };
        if count(Space::Zeta, GenKind::D) != 0 || count(Space::ZetaTilde, GenKind::D) != 0 {
            return Err(KernelError::DegreeOutOfRange {
                detail: "input form must have bidegree (0, q)".into(),
            });
        }
        let want_zeta = (r_zeta, -count(Space::Zeta, GenKind::DBar));
        let want_tilde = (r_tilde, -count(Space::ZetaTilde, GenKind::DBar));
        let mut ok_checks = 0;
        for _ in 0..8 {
            let at = sample::random_assignment(&mut rng, dim.max(dim_tilde).max(1));
            let lambda = sample::random_complex(&mut rng) + Complex64::new(1.5, 0.0);
            let mut scaled = at.clone();
            scaled.set(
                Space::Zeta,
                at.space(Space::Zeta).iter().map(|v| v * lambda).collect(),
            );
            if dim_tilde > 0 {
                scaled.set(
                    Space::ZetaTilde,
                    at.space(Space::ZetaTilde).iter().map(|v| v * lambda).collect(),
                );
            }
            let (base, sc) = match (coeff.eval(&at), coeff.eval(&scaled)) {
                (Ok(x), Ok(y)) => (x, y),
                _ => continue,
            };
            if base.norm() < 1e-14 {
                continue;
            }
            let want = base
                * lambda.powi((want_zeta.0 + want_tilde.0) as i32)
                * lambda.conj().powi((want_zeta.1 + want_tilde.1) as i32);
            if (sc - want).norm() / want.norm().max(1e-12) > 1e-8 {
                return Err(KernelError::DegreeOutOfRange {
                    detail: format!(
                        "coefficient does not scale like an O({r_zeta}{}) section",
                        if dim_tilde > 0 {
                            format!(",{r_tilde}")
                        } else {
                            String::new()
                        }
                    ),
                });
            }
            ok_checks += 1;
        }
        if ok_checks == 0 {
            return Err(KernelError::DegreeOutOfRange {
                detail: "could not sample the input form for the twist check".into(),
            });
        }
    }
    Ok(())
}
