//! Quadrature over the desk-scale domains and assembly of the four
//! representation-formula terms.
//!
//! Conventions pinned here, used by every golden constant downstream:
//! - volume: dζ∧dζ̄ = −2i dx∧dy per coordinate, extended multiplicatively;
//! - circles/spheres carry the Stokes-induced boundary orientation;
//! - the projective chart has ∫ω_FS = +1;
//! - every tensor axis carries `points` nodes;
//! - accumulation order is fixed (4096-node chunks, compensated summation
//!   inside a chunk, sequential fold over chunks), so results do not depend
//!   on thread count.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{Assignment, ExprError, Space};
use crate::form::{
    merge_monomials, Form, FormError, GenKind, Generator, NumForm,
};
use crate::kernel::{self, KernelPair};

#[derive(Debug, Error)]
pub enum QuadError {
    /// Integrand degree does not match the domain dimension.
    #[error("integrand degree mismatch: {0}")]
    DegreeMismatch(String),
    /// A quadrature node hit a pole (or produced a non-finite value).
    #[error("singular integrand: {0}")]
    SingularityUnhandled(String),
    /// Line-bundle multidegrees of the input form and kernel disagree.
    #[error("twist mismatch: {0}")]
    TwistMismatch(String),
    #[error("domain: {0}")]
    Domain(String),
    #[error(transparent)]
    Form(#[from] FormError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Integration domains. Flat domains live in the ζ coordinates; the second
/// factor of a product is bound to the ζ̃ coordinates.
#[derive(Clone, Debug)]
pub enum Domain {
    Disc { center: Complex64, radius: f64 },
    Circle { center: Complex64, radius: f64 },
    Annulus { center: Complex64, inner: f64, outer: f64 },
    Ball { center: [Complex64; 2], radius: f64 },
    Sphere { center: [Complex64; 2], radius: f64 },
    /// ℂⁿ truncated at |ζ| = radius; stands in for ℂⁿ in R → ∞ studies.
    TruncatedCn { n: usize, radius: f64 },
    /// All of ℙⁿ through one affine chart (covers ℙⁿ minus a point).
    ProjectiveChart { n: usize },
    Product(Box<Domain>, Box<Domain>),
}

impl Domain {
    pub fn real_dim(&self) -> usize {
        match self {
            Domain::Disc { .. } | Domain::Annulus { .. } => 2,
            Domain::Circle { .. } => 1,
            Domain::Ball { .. } => 4,
            Domain::Sphere { .. } => 3,
            Domain::TruncatedCn { n, .. } => 2 * n,
            Domain::ProjectiveChart { n } => 2 * n,
            Domain::Product(a, b) => a.real_dim() + b.real_dim(),
        }
    }

    /// Spaces whose generators get integrated out.
    pub fn spaces(&self) -> Vec<Space> {
        match self {
            Domain::Product(a, _) => {
                let mut s = a.spaces();
                s.push(Space::ZetaTilde);
                s
            }
            _ => vec![Space::Zeta],
        }
    }

    /// Boundary with the Stokes-induced orientation, when it is a single
    /// smooth sphere.
    pub fn boundary(&self) -> Option<Domain> {
        match self {
            Domain::Disc { center, radius } => Some(Domain::Circle {
                center: *center,
                radius: *radius,
            }),
            Domain::Ball { center, radius } => Some(Domain::Sphere {
                center: *center,
                radius: *radius,
            }),
            Domain::TruncatedCn { n: 1, radius } => Some(Domain::Circle {
                center: Complex64::new(0.0, 0.0),
                radius: *radius,
            }),
            Domain::TruncatedCn { n: 2, radius } => Some(Domain::Sphere {
                center: [Complex64::new(0.0, 0.0); 2],
                radius: *radius,
            }),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RuleKind {
    #[default]
    GaussLegendreTensor,
    PolarSingularityCentered,
}

/// Tensor quadrature description. `points` is the node count on every axis.
/// `singular_center` recenters polar charts on the kernel singularity;
/// `exclusion_radius` optionally discards nodes near it (cross-check mode —
/// the polar Jacobian already handles the integrable singularity).
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub kind: RuleKind,
    pub points: usize,
    pub singular_center: Option<Assignment>,
    pub exclusion_radius: f64,
}

impl QuadratureRule {
    pub fn tensor(points: usize) -> QuadratureRule {
        QuadratureRule {
            kind: RuleKind::GaussLegendreTensor,
            points,
            singular_center: None,
            exclusion_radius: 0.0,
        }
    }

    pub fn polar(points: usize, singular_center: Assignment) -> QuadratureRule {
        QuadratureRule {
            kind: RuleKind::PolarSingularityCentered,
            points,
            singular_center: Some(singular_center),
            exclusion_radius: 0.0,
        }
    }

    pub fn with_exclusion(mut self, eps: f64) -> QuadratureRule {
        self.exclusion_radius = eps;
        self
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n, p0 = P_{n-1}
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        xs[i] = x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

#[derive(Clone)]
struct Axis {
    vals: Vec<f64>,
    wts: Vec<f64>,
}

impl Axis {
    fn gl(a: f64, b: f64, n: usize) -> Axis {
        let (xs, ws) = gauss_legendre(n);
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        Axis {
            vals: xs.iter().map(|x| mid + half * x).collect(),
            wts: ws.iter().map(|w| half * w).collect(),
        }
    }

    /// Midpoint-offset trapezoid on [0, 2π); spectrally accurate for
    /// periodic integrands and never lands on θ = 0.
    fn periodic(n: usize) -> Axis {
        let w = TAU / n as f64;
        Axis {
            vals: (0..n).map(|k| TAU * ((k as f64 + 0.5) / n as f64)).collect(),
            wts: vec![w; n],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Metric {
    Euclid,
    Chordal,
}

/// One space's worth of chart data at a node: the point and the complex
/// partials of each coordinate with respect to every (global) parameter.
struct Patch {
    space: Space,
    coords: Vec<Complex64>,
    jac: Vec<Vec<Complex64>>,
}

enum ChartMap {
    Circle {
        space: Space,
        center: Complex64,
        radius: f64,
    },
    /// Polar chart over a disc, recentered on `pivot`; the radial parameter
    /// is scaled so ρ runs to the chord length ρmax(θ).
    DiscPolar {
        space: Space,
        center: Complex64,
        pivot: Complex64,
        radius: f64,
    },
    Ring {
        space: Space,
        center: Complex64,
    },
    Sphere {
        space: Space,
        center: [Complex64; 2],
        radius: f64,
    },
    BallPolar {
        space: Space,
        center: [Complex64; 2],
        pivot: [Complex64; 2],
        radius: f64,
    },
    /// σ(u,θ) = col0 + tan(u)e^{iθ}·col1 with (col0, col1) unitary, so u = 0
    /// is the recentered point and u = π/2 the antipodal one.
    P1Tan {
        space: Space,
        col0: [Complex64; 2],
        col1: [Complex64; 2],
    },
    Pair {
        a: Box<ChartMap>,
        b: Box<ChartMap>,
        split: usize,
    },
}

impl ChartMap {
    fn layout(&self) -> Vec<(Space, usize)> {
        match self {
            ChartMap::Circle { space, .. }
            | ChartMap::DiscPolar { space, .. }
            | ChartMap::Ring { space, .. } => vec![(*space, 1)],
            ChartMap::Sphere { space, .. } | ChartMap::BallPolar { space, .. } => {
                vec![(*space, 2)]
            }
            ChartMap::P1Tan { space, .. } => vec![(*space, 2)],
            ChartMap::Pair { a, b, .. } => {
                let mut l = a.layout();
                l.extend(b.layout());
                l
            }
        }
    }

    /// Fill `out` for local parameters `t`, writing Jacobian entries at
    /// column offset `off`. Columns outside a map's own range stay zero.
    fn eval(&self, t: &[f64], off: usize, out: &mut [Patch]) {
        match self {
            ChartMap::Circle { center, radius, .. } => {
                let eit = Complex64::new(t[0].cos(), t[0].sin());
                out[0].coords[0] = center + radius * eit;
                out[0].jac[0][off] = Complex64::new(0.0, *radius) * eit;
            }
            ChartMap::DiscPolar {
                center,
                pivot,
                radius,
                ..
            } => {
                let (s, th) = (t[0], t[1]);
                let eit = Complex64::new(th.cos(), th.sin());
                let v = pivot - center;
                let c = (v.conj() * eit).re;
                let dc = -(v.conj() * eit).im;
                let sq = (radius * radius - v.norm_sqr() + c * c).sqrt();
                let rho_max = -c + sq;
                let drho_max = dc * (c / sq - 1.0);
                out[0].coords[0] = pivot + s * rho_max * eit;
                out[0].jac[0][off] = rho_max * eit;
                out[0].jac[0][off + 1] =
                    s * (Complex64::new(drho_max, 0.0) + Complex64::new(0.0, rho_max)) * eit;
            }
            ChartMap::Ring { center, .. } => {
                let (rho, th) = (t[0], t[1]);
                let eit = Complex64::new(th.cos(), th.sin());
                out[0].coords[0] = center + rho * eit;
                out[0].jac[0][off] = eit;
                out[0].jac[0][off + 1] = Complex64::new(0.0, rho) * eit;
            }
            ChartMap::Sphere { center, radius, .. } => {
                let (chi, th1, th2) = (t[0], t[1], t[2]);
                let e1 = Complex64::new(th1.cos(), th1.sin());
                let e2 = Complex64::new(th2.cos(), th2.sin());
                let (sc, cc) = (chi.sin(), chi.cos());
                out[0].coords[0] = center[0] + radius * cc * e1;
                out[0].coords[1] = center[1] + radius * sc * e2;
                out[0].jac[0][off] = -radius * sc * e1;
                out[0].jac[0][off + 1] = Complex64::new(0.0, radius * cc) * e1;
                out[0].jac[0][off + 2] = Complex64::new(0.0, 0.0);
                out[0].jac[1][off] = radius * cc * e2;
                out[0].jac[1][off + 1] = Complex64::new(0.0, 0.0);
                out[0].jac[1][off + 2] = Complex64::new(0.0, radius * sc) * e2;
            }
            ChartMap::BallPolar {
                center,
                pivot,
                radius,
                ..
            } => {
                let (s, chi, th1, th2) = (t[0], t[1], t[2], t[3]);
                let e1 = Complex64::new(th1.cos(), th1.sin());
                let e2 = Complex64::new(th2.cos(), th2.sin());
                let (sc, cc) = (chi.sin(), chi.cos());
                let omega = [cc * e1, sc * e2];
                // direction derivatives per angular parameter (χ, θ1, θ2)
                let domega = [
                    [-sc * e1, cc * e2],
                    [Complex64::new(0.0, cc) * e1, Complex64::new(0.0, 0.0)],
                    [Complex64::new(0.0, 0.0), Complex64::new(0.0, sc) * e2],
                ];
                let v = [pivot[0] - center[0], pivot[1] - center[1]];
                let vnorm2 = v[0].norm_sqr() + v[1].norm_sqr();
                let c = (v[0].conj() * omega[0] + v[1].conj() * omega[1]).re;
                let sq = (radius * radius - vnorm2 + c * c).sqrt();
                let rho_max = -c + sq;
                for k in 0..2 {
                    out[0].coords[k] = pivot[k] + s * rho_max * omega[k];
                    out[0].jac[k][off] = rho_max * omega[k];
                    for a in 0..3 {
                        let dc = (v[0].conj() * domega[a][0] + v[1].conj() * domega[a][1]).re;
                        let drho = dc * (c / sq - 1.0);
                        out[0].jac[k][off + 1 + a] = s * (drho * omega[k] + rho_max * domega[a][k]);
                    }
                }
            }
            ChartMap::P1Tan { col0, col1, .. } => {
                let (u, th) = (t[0], t[1]);
                let eit = Complex64::new(th.cos(), th.sin());
                let tn = u.tan();
                let tau = tn * eit;
                let dtau_du = (1.0 + tn * tn) * eit;
                let dtau_dth = Complex64::new(0.0, 1.0) * tau;
                for k in 0..2 {
                    out[0].coords[k] = col0[k] + tau * col1[k];
                    out[0].jac[k][off] = dtau_du * col1[k];
                    out[0].jac[k][off + 1] = dtau_dth * col1[k];
                }
            }
            ChartMap::Pair { a, b, split } => {
                let na = a.layout().len();
                a.eval(&t[..*split], off, &mut out[..na]);
                b.eval(&t[*split..], off + split, &mut out[na..]);
            }
        }
    }
}

struct Chart {
    axes: Vec<Axis>,
    map: ChartMap,
    orient: f64,
    metrics: Vec<(Space, Metric)>,
}

impl Chart {
    fn len(&self) -> usize {
        self.axes.iter().map(|a| a.vals.len()).product()
    }

    fn dim(&self) -> usize {
        self.axes.len()
    }

    fn alloc_patches(&self) -> Vec<Patch> {
        let d = self.dim();
        self.map
            .layout()
            .into_iter()
            .map(|(space, nc)| Patch {
                space,
                coords: vec![Complex64::new(0.0, 0.0); nc],
                jac: vec![vec![Complex64::new(0.0, 0.0); d]; nc],
            })
            .collect()
    }

    /// Weight of node `idx` (row-major over axes); fills `t` and `patches`.
    fn node(&self, idx: usize, t: &mut [f64], patches: &mut [Patch]) -> f64 {
        let mut rest = idx;
        let mut w = self.orient;
        for (j, ax) in self.axes.iter().enumerate().rev() {
            let n = ax.vals.len();
            let i = rest % n;
            rest /= n;
            t[j] = ax.vals[i];
            w *= ax.wts[i];
        }
        self.map.eval(t, 0, patches);
        w
    }
}

fn singular_point(rule: &QuadratureRule, space: Space) -> Option<Vec<Complex64>> {
    let sc = rule.singular_center.as_ref()?;
    let v = sc.space(space);
    if v.is_empty() {
        None
    } else {
        Some(v.to_vec())
    }
}

fn build_chart_in(
    domain: &Domain,
    rule: &QuadratureRule,
    space: Space,
) -> Result<Chart, QuadError> {
    let n = rule.points;
    if n == 0 {
        return Err(QuadError::Domain("rule needs at least one point per axis".into()));
    }
    let polar = rule.kind == RuleKind::PolarSingularityCentered;
    match domain {
        Domain::Circle { center, radius } => Ok(Chart {
            axes: vec![Axis::periodic(n)],
            map: ChartMap::Circle {
                space,
                center: *center,
                radius: *radius,
            },
            orient: 1.0,
            metrics: vec![(space, Metric::Euclid)],
        }),
        Domain::Disc { center, radius } => {
            let mut pivot = *center;
            if polar {
                if let Some(p) = singular_point(rule, space) {
                    if (p[0] - center).norm() < 0.98 * radius {
                        pivot = p[0];
                    }
                }
            }
            Ok(Chart {
                axes: vec![Axis::gl(0.0, 1.0, n), Axis::periodic(n)],
                map: ChartMap::DiscPolar {
                    space,
                    center: *center,
                    pivot,
                    radius: *radius,
                },
                orient: 1.0,
                metrics: vec![(space, Metric::Euclid)],
            })
        }
        Domain::Annulus {
            center,
            inner,
            outer,
        } => {
            if !(0.0 < *inner && inner < outer) {
                return Err(QuadError::Domain("annulus needs 0 < inner < outer".into()));
            }
            Ok(Chart {
                axes: vec![Axis::gl(*inner, *outer, n), Axis::periodic(n)],
                map: ChartMap::Ring {
                    space,
                    center: *center,
                },
                orient: 1.0,
                metrics: vec![(space, Metric::Euclid)],
            })
        }
        Domain::Sphere { center, radius } => Ok(Chart {
            axes: vec![
                Axis::gl(0.0, PI / 2.0, n),
                Axis::periodic(n),
                Axis::periodic(n),
            ],
            map: ChartMap::Sphere {
                space,
                center: *center,
                radius: *radius,
            },
            // pinned by the Stokes pairing with the ball chart
            orient: -1.0,
            metrics: vec![(space, Metric::Euclid)],
        }),
        Domain::Ball { center, radius } => {
            let mut pivot = *center;
            if polar {
                if let Some(p) = singular_point(rule, space) {
                    let d2 = (p[0] - center[0]).norm_sqr() + (p[1] - center[1]).norm_sqr();
                    if d2.sqrt() < 0.98 * radius {
                        pivot = [p[0], p[1]];
                    }
                }
            }
            Ok(Chart {
                axes: vec![
                    Axis::gl(0.0, 1.0, n),
                    Axis::gl(0.0, PI / 2.0, n),
                    Axis::periodic(n),
                    Axis::periodic(n),
                ],
                map: ChartMap::BallPolar {
                    space,
                    center: *center,
                    pivot,
                    radius: *radius,
                },
                // pinned by ∫ dζ₁∧dζ̄₁∧dζ₂∧dζ̄₂ = −4·Vol
                orient: -1.0,
                metrics: vec![(space, Metric::Euclid)],
            })
        }
        Domain::TruncatedCn { n: 1, radius } => build_chart_in(
            &Domain::Disc {
                center: Complex64::new(0.0, 0.0),
                radius: *radius,
            },
            rule,
            space,
        ),
        Domain::TruncatedCn { n: 2, radius } => build_chart_in(
            &Domain::Ball {
                center: [Complex64::new(0.0, 0.0); 2],
                radius: *radius,
            },
            rule,
            space,
        ),
        Domain::TruncatedCn { n, .. } => Err(QuadError::Domain(format!(
            "truncated C^{n} volume quadrature not supported"
        ))),
        Domain::ProjectiveChart { n: 1 } => {
            let (col0, col1) = if polar {
                match singular_point(rule, space) {
                    Some(w) if w.len() == 2 => {
                        let norm = (w[0].norm_sqr() + w[1].norm_sqr()).sqrt();
                        if norm < 1e-12 {
                            return Err(QuadError::Domain(
                                "projective singular center must be nonzero".into(),
                            ));
                        }
                        (
                            [w[0] / norm, w[1] / norm],
                            [-w[1].conj() / norm, w[0].conj() / norm],
                        )
                    }
                    _ => (
                        [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
                        [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
                    ),
                }
            } else {
                (
                    [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
                    [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
                )
            };
            Ok(Chart {
                axes: vec![Axis::gl(0.0, PI / 2.0, n), Axis::periodic(n)],
                map: ChartMap::P1Tan { space, col0, col1 },
                orient: 1.0,
                metrics: vec![(space, Metric::Chordal)],
            })
        }
        Domain::ProjectiveChart { n } => Err(QuadError::Domain(format!(
            "projective volume quadrature only implemented for n = 1, got n = {n}"
        ))),
        Domain::Product(a, b) => {
            let ca = build_chart_in(a, rule, space)?;
            let cb = build_chart_in(b, rule, Space::ZetaTilde)?;
            let split = ca.dim();
            let mut axes = ca.axes;
            axes.extend(cb.axes);
            let mut metrics = ca.metrics;
            metrics.extend(cb.metrics);
            Ok(Chart {
                axes,
                map: ChartMap::Pair {
                    a: Box::new(ca.map),
                    b: Box::new(cb.map),
                    split,
                },
                orient: ca.orient * cb.orient,
                metrics,
            })
        }
    }
}

/// Complex determinant by in-place LU with partial pivoting; `m` is d×d
/// row-major scratch.
fn det_in_place(m: &mut [Complex64], d: usize) -> Complex64 {
    match d {
        0 => return Complex64::new(1.0, 0.0),
        1 => return m[0],
        2 => return m[0] * m[3] - m[1] * m[2],
        _ => {}
    }
    let mut det = Complex64::new(1.0, 0.0);
    for k in 0..d {
        let mut piv = k;
        let mut best = m[k * d + k].norm_sqr();
        for r in k + 1..d {
            let cand = m[r * d + k].norm_sqr();
            if cand > best {
                best = cand;
                piv = r;
            }
        }
        if best == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if piv != k {
            for c in 0..d {
                m.swap(k * d + c, piv * d + c);
            }
            det = -det;
        }
        let diag = m[k * d + k];
        det *= diag;
        for r in k + 1..d {
            let f = m[r * d + k] / diag;
            for c in k + 1..d {
                let sub = f * m[k * d + c];
                m[r * d + c] -= sub;
            }
        }
    }
    det
}

#[derive(Clone, Copy, Default)]
struct Kahan {
    s: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.s + y;
        self.c = (t - self.s) - y;
        self.s = t;
    }
}

#[derive(Clone, Copy, Default)]
struct KahanC {
    re: Kahan,
    im: Kahan,
}

impl KahanC {
    fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    fn value(&self) -> Complex64 {
        Complex64::new(self.re.s, self.im.s)
    }
}

struct RowSpec {
    space: Space,
    coord: usize,
    conj: bool,
}

struct Plan {
    slot: usize,
    residual_idx: usize,
    sign: f64,
    rows: Vec<RowSpec>,
}

/// An integrand compiled against a domain: evaluation tape plus one
/// pullback plan per top-degree monomial.
pub struct PreparedIntegral {
    compiled: crate::form::CompiledForm,
    plans: Vec<Plan>,
    residuals: Vec<Vec<Generator>>,
    domain: Domain,
    rule: QuadratureRule,
    /// Monomials below top degree in the integrated variables (dropped).
    pub discarded_monomials: usize,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunStats {
    pub nodes: usize,
    pub excluded_nodes: usize,
}

/// Split a monomial into integrated rows and residual generators; the sign
/// is the parity of pulling the integrated generators to the front.
fn split_monomial(
    monomial: &[Generator],
    spaces: &[Space],
) -> Result<(Vec<RowSpec>, Vec<Generator>, f64), QuadError> {
    let mut rows = Vec::new();
    let mut residual = Vec::new();
    let mut inversions = 0usize;
    for g in monomial {
        if spaces.contains(&g.space) {
            match g.kind {
                GenKind::D | GenKind::DBar => {
                    rows.push(RowSpec {
                        space: g.space,
                        coord: g.index,
                        conj: g.kind == GenKind::DBar,
                    });
                    inversions += residual.len();
                }
                GenKind::E | GenKind::EStar => {
                    return Err(QuadError::DegreeMismatch(format!(
                        "frame generator {} cannot be integrated; project the kernel first",
                        g.name()
                    )));
                }
            }
        } else {
            residual.push(*g);
        }
    }
    let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
    Ok((rows, residual, sign))
}

pub fn prepare(
    density: &Form,
    domain: &Domain,
    rule: &QuadratureRule,
) -> Result<PreparedIntegral, QuadError> {
    let d = domain.real_dim();
    let spaces = domain.spaces();
    let compiled = density.compile();
    let mut plans = Vec::new();
    let mut residuals: Vec<Vec<Generator>> = Vec::new();
    let mut index: BTreeMap<Vec<Generator>, usize> = BTreeMap::new();
    let mut max_count = 0usize;
    let mut discarded = 0usize;
    for (monomial, slot) in compiled.slots() {
        let (rows, residual, sign) = split_monomial(monomial, &spaces)?;
        max_count = max_count.max(rows.len());
        if rows.len() != d {
            discarded += 1;
            continue;
        }
        let residual_idx = *index.entry(residual.clone()).or_insert_with(|| {
            residuals.push(residual.clone());
            residuals.len() - 1
        });
        plans.push(Plan {
            slot: *slot,
            residual_idx,
            sign,
            rows,
        });
    }
    if !density.is_zero() && max_count != d {
        return Err(QuadError::DegreeMismatch(format!(
            "integrand has top degree {max_count} in the integrated variables, domain needs {d}"
        )));
    }
    // every counted monomial is top degree; the discard counter only tracks
    // genuinely lower components
    discarded = if max_count == d { discarded } else { 0 };
    Ok(PreparedIntegral {
        compiled,
        plans,
        residuals,
        domain: domain.clone(),
        rule: rule.clone(),
        discarded_monomials: discarded,
    })
}

impl PreparedIntegral {
    pub fn run(&self, fixed: &Assignment) -> Result<NumForm, QuadError> {
        Ok(self.run_stats(fixed, None)?.0)
    }

    /// Run with the singular center taken from `recenter` (falls back to the
    /// rule's own); used when the evaluation point moves, e.g. under finite
    /// differences in z.
    pub fn run_centered(
        &self,
        fixed: &Assignment,
        recenter: Option<&Assignment>,
    ) -> Result<NumForm, QuadError> {
        Ok(self.run_stats(fixed, recenter)?.0)
    }

    pub fn run_stats(
        &self,
        fixed: &Assignment,
        recenter: Option<&Assignment>,
    ) -> Result<(NumForm, RunStats), QuadError> {
        let mut out = NumForm::default();
        if self.plans.is_empty() {
            return Ok((out, RunStats::default()));
        }
        let mut rule = self.rule.clone();
        if let Some(c) = recenter {
            rule.singular_center = Some(c.clone());
        }
        let chart = build_chart_in(&self.domain, &rule, Space::Zeta)?;
        let d = chart.dim();
        let total = chart.len();
        let nres = self.residuals.len();

        // patch slot per space, and the exclusion data per space
        let layout = chart.map.layout();
        let mut space_slot = [usize::MAX; 4];
        for (i, (s, _)) in layout.iter().enumerate() {
            space_slot[s.idx()] = i;
        }
        let exclusion: Vec<(usize, Vec<Complex64>, Metric)> = if rule.exclusion_radius > 0.0 {
            chart
                .metrics
                .iter()
                .filter_map(|(s, m)| {
                    singular_point(&rule, *s).map(|p| (space_slot[s.idx()], p, *m))
                })
                .collect()
        } else {
            Vec::new()
        };

        const CHUNK: usize = 4096;
        let nchunks = total.div_ceil(CHUNK);
        let chunk_results: Vec<Result<(Vec<KahanC>, usize), QuadError>> = (0..nchunks)
            .into_par_iter()
            .map(|ci| {
                let mut acc = vec![KahanC::default(); nres];
                let mut excluded = 0usize;
                let mut patches = chart.alloc_patches();
                let mut t = vec![0.0; d];
                let mut buf: Vec<Complex64> = Vec::new();
                let mut mat = vec![Complex64::new(0.0, 0.0); d * d];
                let mut at = fixed.clone();
                let lo = ci * CHUNK;
                let hi = (lo + CHUNK).min(total);
                'node: for i in lo..hi {
                    let w = chart.node(i, &mut t, &mut patches);
                    for p in &patches {
                        let vals = &mut at.vals[p.space.idx()];
                        vals.clear();
                        vals.extend_from_slice(&p.coords);
                    }
                    for (slot, pt, metric) in &exclusion {
                        let q = &patches[*slot].coords;
                        let dist = match metric {
                            Metric::Euclid => q
                                .iter()
                                .zip(pt)
                                .map(|(a, b)| (a - b).norm_sqr())
                                .sum::<f64>()
                                .sqrt(),
                            Metric::Chordal => {
                                let qq: f64 = q.iter().map(|a| a.norm_sqr()).sum();
                                let pp: f64 = pt.iter().map(|a| a.norm_sqr()).sum();
                                let ip: Complex64 =
                                    q.iter().zip(pt).map(|(a, b)| a * b.conj()).sum();
                                (1.0 - ip.norm_sqr() / (qq * pp)).max(0.0).sqrt()
                            }
                        };
                        if dist < rule.exclusion_radius {
                            excluded += 1;
                            continue 'node;
                        }
                    }
                    match self.compiled.eval_raw(&at, &mut buf) {
                        Ok(()) => {}
                        Err(ExprError::DivisionByZero) => {
                            return Err(QuadError::SingularityUnhandled(
                                "quadrature node hit a pole; use a singularity-centered rule"
                                    .into(),
                            ));
                        }
                        Err(e) => return Err(e.into()),
                    }
                    for plan in &self.plans {
                        let coeff = buf[plan.slot];
                        if coeff == Complex64::new(0.0, 0.0) {
                            continue;
                        }
                        for (r, rs) in plan.rows.iter().enumerate() {
                            let patch = &patches[space_slot[rs.space.idx()]];
                            let row = &patch.jac[rs.coord];
                            for c in 0..d {
                                mat[r * d + c] = if rs.conj { row[c].conj() } else { row[c] };
                            }
                        }
                        let det = det_in_place(&mut mat, d);
                        let val = coeff * det * (w * plan.sign);
                        if !val.re.is_finite() || !val.im.is_finite() {
                            return Err(QuadError::SingularityUnhandled(
                                "non-finite integrand value; use a singularity-centered rule"
                                    .into(),
                            ));
                        }
                        acc[plan.residual_idx].add(val);
                    }
                }
                Ok((acc, excluded))
            })
            .collect();

        let mut totals = vec![KahanC::default(); nres];
        let mut excluded = 0usize;
        for cr in chunk_results {
            let (acc, ex) = cr?;
            excluded += ex;
            for (tot, a) in totals.iter_mut().zip(&acc) {
                tot.add(a.value());
            }
        }
        for (idx, tot) in totals.iter().enumerate() {
            out.add_term(self.residuals[idx].clone(), tot.value());
        }
        Ok((
            out,
            RunStats {
                nodes: total,
                excluded_nodes: excluded,
            },
        ))
    }
}

/// One-shot oriented integral of `density` over `domain`. Components below
/// top degree in the integrated variables are discarded (with a warning on
/// stderr); the result keys the surviving residual monomials.
pub fn integrate(
    density: &Form,
    domain: &Domain,
    rule: &QuadratureRule,
    fixed: &Assignment,
) -> Result<NumForm, QuadError> {
    let prep = prepare(density, domain, rule)?;
    if prep.discarded_monomials > 0 {
        eprintln!(
            "integrate: discarded {} component(s) below top degree in the integrated variables",
            prep.discarded_monomials
        );
    }
    prep.run(fixed)
}

/// The four terms of the representation formula
/// φ(z) = ∫_{∂D} K∧φ + ∫_D K∧∂̄φ + ∂̄_z ∫_D K∧φ + ∫_D P∧φ
/// evaluated at one point z, plus the defect of the identity.
#[derive(Clone, Debug)]
pub struct KoppelmanTerms {
    pub boundary_term: NumForm,
    pub dbar_phi_term: NumForm,
    /// ∫_D K∧φ before ∂̄_z is applied.
    pub potential_term: NumForm,
    pub dbar_z_term: NumForm,
    pub p_term: NumForm,
    pub phi_at_z: NumForm,
    /// ∞-norm of (sum of the four terms − φ(z)) on the (p,q) slice in z.
    pub residual: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct KoppelmanOptions {
    /// Central finite-difference step for ∂̄_z of the potential.
    pub fd_step: f64,
    /// Differentiate K in z̄ symbolically instead (cross-validation mode;
    /// misses the diagonal residue, so only comparable where φ(z) ≈ 0).
    pub symbolic_dbar_z: bool,
    /// ε-exclusion around the kernel singularity (cross-check mode).
    pub exclusion_radius: f64,
}

impl Default for KoppelmanOptions {
    fn default() -> KoppelmanOptions {
        KoppelmanOptions {
            fd_step: 1e-4,
            symbolic_dbar_z: false,
            exclusion_radius: 0.0,
        }
    }
}

/// z-side (p,q) slice of an evaluated form.
pub fn pick_z_bidegree(nf: &NumForm, p: usize, q: usize) -> NumForm {
    let mut out = NumForm::default();
    for (m, c) in nf.terms() {
        let zside = m
            .iter()
            .all(|g| matches!(g.space, Space::Z | Space::ZTilde));
        if !zside {
            continue;
        }
        let dp = m.iter().filter(|g| g.kind == GenKind::D).count();
        let dq = m.iter().filter(|g| g.kind == GenKind::DBar).count();
        if dp == p && dq == q {
            out.add_term(m.clone(), *c);
        }
    }
    out
}

/// Bidegree of a form in its ζ-side variables; all monomials must agree.
fn phi_bidegree(phi: &Form, zeta_spaces: &[Space]) -> Result<(usize, usize), QuadError> {
    let mut seen: Option<(usize, usize)> = None;
    for (m, _) in phi.terms() {
        for g in m {
            if !zeta_spaces.contains(&g.space) {
                return Err(QuadError::DegreeMismatch(format!(
                    "input form must live in the ζ variables, found {}",
                    g.name()
                )));
            }
        }
        let p = m.iter().filter(|g| g.kind == GenKind::D).count();
        let q = m.iter().filter(|g| g.kind == GenKind::DBar).count();
        match seen {
            None => seen = Some((p, q)),
            Some(pq) if pq == (p, q) => {}
            Some(pq) => {
                return Err(QuadError::DegreeMismatch(format!(
                    "input form mixes bidegrees ({},{}) and ({p},{q})",
                    pq.0, pq.1
                )));
            }
        }
    }
    Ok(seen.unwrap_or((0, 0)))
}

fn wedge_left(g: Generator, nf: &NumForm) -> NumForm {
    let mut out = NumForm::default();
    for (m, c) in nf.terms() {
        if let Some((merged, sign)) = merge_monomials(&[g], m) {
            out.add_term(merged, c * f64::from(sign));
        }
    }
    out
}

fn singular_from(z: &Assignment) -> Assignment {
    let mut sc = Assignment::new();
    let zv = z.space(Space::Z);
    if !zv.is_empty() {
        sc.set(Space::Zeta, zv.to_vec());
    }
    let ztv = z.space(Space::ZTilde);
    if !ztv.is_empty() {
        sc.set(Space::ZetaTilde, ztv.to_vec());
    }
    sc
}

/// Prepare only the top-degree-in-ζ part of `density`; `None` when there is
/// no such component (the integral is zero for degree reasons).
pub fn prepare_top(
    density: &Form,
    domain: &Domain,
    rule: &QuadratureRule,
) -> Result<Option<PreparedIntegral>, QuadError> {
    let d = domain.real_dim();
    let spaces = domain.spaces();
    let top = density.pick_by(|m| {
        m.iter()
            .filter(|g| spaces.contains(&g.space))
            .count()
            == d
    });
    if top.is_zero() {
        return Ok(None);
    }
    Ok(Some(prepare(&top, domain, rule)?))
}

/// Evaluate the four representation-formula terms for `phi` at the point
/// held in the z (and z̃) entries of `z`.
pub fn koppelman_eval(
    pair: &KernelPair,
    phi: &Form,
    domain: &Domain,
    z: &Assignment,
    points: usize,
    opts: &KoppelmanOptions,
) -> Result<KoppelmanTerms, QuadError> {
    kernel::check_phi_twist(phi, pair.twist)
        .map_err(|e| QuadError::TwistMismatch(e.to_string()))?;
    let zeta_spaces = pair.ambient.integration_spaces();
    let z_spaces: Vec<Space> = zeta_spaces.iter().map(|s| s.partner()).collect();
    let (p, q) = phi_bidegree(phi, &zeta_spaces)?;

    let k_phi = pair.k.wedge(phi)?;
    let k_dphi = pair.k.wedge(&phi.dbar(&zeta_spaces))?;
    let p_phi = pair.p.wedge(phi)?;

    let sc = singular_from(z);
    let vol_rule = QuadratureRule {
        kind: RuleKind::PolarSingularityCentered,
        points,
        singular_center: Some(sc.clone()),
        exclusion_radius: opts.exclusion_radius,
    };
    let smooth_rule = QuadratureRule::tensor(points);

    let boundary_term = match domain.boundary() {
        Some(b) => match prepare_top(&k_phi, &b, &smooth_rule)? {
            Some(prep) => prep.run(z)?,
            None => NumForm::default(),
        },
        None => NumForm::default(),
    };

    let dbar_phi_term = match prepare_top(&k_dphi, domain, &vol_rule)? {
        Some(prep) => prep.run(z)?,
        None => NumForm::default(),
    };

    let p_term = match prepare_top(&p_phi, domain, &smooth_rule)? {
        Some(prep) => prep.run(z)?,
        None => NumForm::default(),
    };

    let pot_prep = prepare_top(&k_phi, domain, &vol_rule)?;
    let potential_term = match &pot_prep {
        Some(prep) => prep.run(z)?,
        None => NumForm::default(),
    };

    let dbar_z_term = if opts.symbolic_dbar_z {
        let dk = pair.k.dbar(&z_spaces);
        let density = dk.wedge(phi)?;
        match prepare_top(&density, domain, &vol_rule)? {
            Some(prep) => prep.run(z)?,
            None => NumForm::default(),
        }
    } else if let Some(prep) = &pot_prep {
        let h = opts.fd_step;
        let mut total = NumForm::default();
        for &zs in &z_spaces {
            let base = z.space(zs).to_vec();
            for j in 0..base.len() {
                let run_at = |delta: Complex64| -> Result<NumForm, QuadError> {
                    let mut shifted = z.clone();
                    let mut v = base.clone();
                    v[j] += delta;
                    shifted.set(zs, v);
                    prep.run_centered(&shifted, Some(&singular_from(&shifted)))
                };
                let uxp = run_at(Complex64::new(h, 0.0))?;
                let uxm = run_at(Complex64::new(-h, 0.0))?;
                let uyp = run_at(Complex64::new(0.0, h))?;
                let uym = run_at(Complex64::new(0.0, -h))?;
                // ∂/∂z̄ = (∂_x + i∂_y)/2 per coordinate
                let du = uxp
                    .sub(&uxm)
                    .scale(Complex64::new(0.25 / h, 0.0))
                    .add(&uyp.sub(&uym).scale(Complex64::new(0.0, 0.25 / h)));
                total = total.add(&wedge_left(Generator::dbar(zs, j), &du));
            }
        }
        total
    } else {
        NumForm::default()
    };

    let mut zeta_at = z.clone();
    for (zeta, zside) in zeta_spaces.iter().zip(&z_spaces) {
        zeta_at.set(*zeta, z.space(*zside).to_vec());
    }
    let mut phi_at_z = phi.eval(&zeta_at)?;
    for (zeta, zside) in zeta_spaces.iter().zip(&z_spaces) {
        phi_at_z = phi_at_z.relabel_space(*zeta, *zside);
    }

    let sum = boundary_term
        .add(&dbar_phi_term)
        .add(&dbar_z_term)
        .add(&p_term);
    let residual = pick_z_bidegree(&sum, p, q)
        .sub(&pick_z_bidegree(&phi_at_z, p, q))
        .norm_inf();

    Ok(KoppelmanTerms {
        boundary_term,
        dbar_phi_term,
        potential_term,
        dbar_z_term,
        p_term,
        phi_at_z,
        residual,
    })
}

/// Iterated integral over a product: the ζ variables are integrated out
/// first at each fixed ζ̃ node, then the ζ̃ variables. Used to check the
/// Fubini split of the product-space projection term against the direct
/// product-domain quadrature.
pub fn iterated_product_integral(
    density: &Form,
    inner: &Domain,
    outer: &Domain,
    rule: &QuadratureRule,
    fixed: &Assignment,
) -> Result<NumForm, QuadError> {
    let inner_prep = prepare(density, inner, rule)?;
    let chart = build_chart_in(outer, rule, Space::ZetaTilde)?;
    let d = chart.dim();
    let total = chart.len();
    let mut patches = chart.alloc_patches();
    let mut t = vec![0.0; d];
    let mut mat = vec![Complex64::new(0.0, 0.0); d * d];
    let mut acc: BTreeMap<Vec<Generator>, KahanC> = BTreeMap::new();
    let outer_spaces = [Space::ZetaTilde];
    let mut at = fixed.clone();
    for i in 0..total {
        let w = chart.node(i, &mut t, &mut patches);
        for p in &patches {
            let vals = &mut at.vals[p.space.idx()];
            vals.clear();
            vals.extend_from_slice(&p.coords);
        }
        let inner_val = inner_prep.run(&at)?;
        for (m, c) in inner_val.terms() {
            let (rows, residual, sign) = split_monomial(m, &outer_spaces)?;
            if rows.len() != d {
                continue;
            }
            for (r, rs) in rows.iter().enumerate() {
                let row = &patches[0].jac[rs.coord];
                for col in 0..d {
                    mat[r * d + col] = if rs.conj { row[col].conj() } else { row[col] };
                }
            }
            let det = det_in_place(&mut mat, d);
            acc.entry(residual)
                .or_default()
                .add(c * det * (w * sign));
        }
    }
    let mut out = NumForm::default();
    for (m, k) in acc {
        out.add_term(m, k.value());
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct ConvergencePoint {
    pub parameter: f64,
    pub residual: f64,
    pub boundary_magnitude: f64,
    pub runtime_ms: u128,
}

#[derive(Clone, Debug)]
pub struct ConvergenceTrace {
    pub points: Vec<ConvergencePoint>,
    pub residual_monotone: bool,
    pub boundary_monotone: bool,
    /// Largest residual growth factor between consecutive parameters.
    pub max_residual_uptick: f64,
}

/// Run a representation-formula evaluation over a parameter sweep (mesh
/// size, truncation radius, ...) and record the decay of the defect and of
/// the boundary term.
pub fn convergence_study(
    params: &[f64],
    mut run: impl FnMut(f64) -> Result<KoppelmanTerms, QuadError>,
) -> Result<ConvergenceTrace, QuadError> {
    let mut points = Vec::new();
    for &p in params {
        let start = Instant::now();
        let terms = run(p)?;
        points.push(ConvergencePoint {
            parameter: p,
            residual: terms.residual,
            boundary_magnitude: terms.boundary_term.norm_inf(),
            runtime_ms: start.elapsed().as_millis(),
        });
    }
    let residual_monotone = points.windows(2).all(|w| w[1].residual < w[0].residual);
    let boundary_monotone = points
        .windows(2)
        .all(|w| w[1].boundary_magnitude < w[0].boundary_magnitude);
    let max_residual_uptick = points
        .windows(2)
        .map(|w| {
            if w[0].residual == 0.0 {
                1.0
            } else {
                w[1].residual / w[0].residual
            }
        })
        .fold(0.0f64, f64::max);
    Ok(ConvergenceTrace {
        points,
        residual_monotone,
        boundary_monotone,
        max_residual_uptick,
    })
}
