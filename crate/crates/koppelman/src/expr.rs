//! Scalar expression engine over complex variables with Wirtinger calculus.
//!
//! Every coefficient of every differential form in this crate is an [`Expr`]:
//! an immutable tree with complex constants, variables from the four spaces
//! ζ, z, ζ̃, z̃, sums, products, quotients, integer powers and conjugation.
//!
//! Design rules:
//!
//! * construction canonicalizes — sums and products are flattened, constants
//!   folded, `conj` pushed down to the leaves — and nothing else is ever
//!   simplified; equality of expressions is decided by pointwise numeric
//!   sampling, not structurally;
//! * a variable and its conjugate are distinct leaves, so the Wirtinger
//!   derivatives ∂/∂ζ and ∂/∂ζ̄ are leaf-level rules;
//! * evaluation at a pole is an error ([`ExprError::DivisionByZero`]), never
//!   a limit. Quadrature is responsible for staying off singular sets.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Variable space. `Zeta`/`Z` are the integration and evaluation variables;
/// the tilde copies are the second factor of a product space.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Space {
    Zeta,
    Z,
    ZetaTilde,
    ZTilde,
}

impl Space {
    pub const ALL: [Space; 4] = [Space::Zeta, Space::Z, Space::ZetaTilde, Space::ZTilde];

    pub fn name(self) -> &'static str {
        match self {
            Space::Zeta => "zeta",
            Space::Z => "z",
            Space::ZetaTilde => "zetat",
            Space::ZTilde => "zt",
        }
    }

    pub fn from_name(s: &str) -> Option<Space> {
        match s {
            "zeta" => Some(Space::Zeta),
            "z" => Some(Space::Z),
            "zetat" => Some(Space::ZetaTilde),
            "zt" => Some(Space::ZTilde),
            _ => None,
        }
    }

    pub fn idx(self) -> usize {
        match self {
            Space::Zeta => 0,
            Space::Z => 1,
            Space::ZetaTilde => 2,
            Space::ZTilde => 3,
        }
    }

    /// The evaluation-side partner: ζ ↦ z, ζ̃ ↦ z̃ (and fixed points for z-spaces).
    pub fn partner(self) -> Space {
        match self {
            Space::Zeta => Space::Z,
            Space::Z => Space::Zeta,
            Space::ZetaTilde => Space::ZTilde,
            Space::ZTilde => Space::ZetaTilde,
        }
    }
}

/// A scalar complex variable: one coordinate of one space, possibly conjugated.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct VarId {
    pub space: Space,
    pub index: usize,
    pub conjugated: bool,
}

impl VarId {
    pub fn new(space: Space, index: usize) -> VarId {
        VarId { space, index, conjugated: false }
    }

    pub fn conj(self) -> VarId {
        VarId { conjugated: !self.conjugated, ..self }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    /// Evaluation met a vanishing denominator (or 0 to a negative power);
    /// this is how landing on a kernel's singular set surfaces.
    #[error("division by zero while evaluating expression")]
    DivisionByZero,
    /// A variable had no assigned value at the evaluation point.
    #[error("unbound variable {space}[{index}]", space = .0.space.name(), index = .0.index)]
    UnboundVariable(VarId),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Immutable expression tree. Construct through the methods below (or the
/// `+ - *` operators), which keep the canonical shape: no nested
/// `Add`/`Mul`, no constant-only branches, no `Conj` above a non-leaf.
#[derive(Clone, Debug)]
pub enum Expr {
    Const(Complex64),
    Var(VarId),
    Add(Arc<Vec<Expr>>),
    Mul(Arc<Vec<Expr>>),
    Div(Arc<Expr>, Arc<Expr>),
    Pow(Arc<Expr>, i32),
    Conj(Arc<Expr>),
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

impl Expr {
    pub fn constant(c: Complex64) -> Expr {
        Expr::Const(c)
    }

    pub fn real(x: f64) -> Expr {
        Expr::Const(Complex64::new(x, 0.0))
    }

    pub fn zero() -> Expr {
        Expr::Const(ZERO)
    }

    pub fn one() -> Expr {
        Expr::Const(ONE)
    }

    pub fn var(space: Space, index: usize) -> Expr {
        Expr::Var(VarId::new(space, index))
    }

    pub fn var_conj(space: Space, index: usize) -> Expr {
        Expr::Var(VarId::new(space, index).conj())
    }

    pub fn var_id(v: VarId) -> Expr {
        Expr::Var(v)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == ZERO)
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == ONE)
    }

    pub fn add(terms: Vec<Expr>) -> Expr {
        let mut flat = Vec::with_capacity(terms.len());
        let mut konst = ZERO;
        for t in terms {
            match t {
                Expr::Add(xs) => {
                    for x in xs.iter() {
                        match x {
                            Expr::Const(c) => konst += c,
                            other => flat.push(other.clone()),
                        }
                    }
                }
                Expr::Const(c) => konst += c,
                other => flat.push(other),
            }
        }
        if konst != ZERO {
            flat.push(Expr::Const(konst));
        }
        match flat.len() {
            0 => Expr::zero(),
            1 => flat.pop().unwrap(),
            _ => Expr::Add(Arc::new(flat)),
        }
    }

    pub fn mul(factors: Vec<Expr>) -> Expr {
        let mut flat = Vec::with_capacity(factors.len());
        let mut konst = ONE;
        for f in factors {
            match f {
                Expr::Mul(xs) => {
                    for x in xs.iter() {
                        match x {
                            Expr::Const(c) => konst *= c,
                            other => flat.push(other.clone()),
                        }
                    }
                }
                Expr::Const(c) => konst *= c,
                other => flat.push(other),
            }
        }
        if konst == ZERO {
            return Expr::zero();
        }
        if konst != ONE {
            flat.insert(0, Expr::Const(konst));
        }
        match flat.len() {
            0 => Expr::one(),
            1 => flat.pop().unwrap(),
            _ => Expr::Mul(Arc::new(flat)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::add(vec![a, Expr::neg(b)])
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::mul(vec![Expr::Const(-ONE), a])
    }

    pub fn div(num: Expr, den: Expr) -> Expr {
        if num.is_zero() {
            return Expr::zero();
        }
        if let Expr::Const(c) = den {
            if c != ZERO {
                return Expr::mul(vec![Expr::Const(ONE / c), num]);
            }
        }
        Expr::Div(Arc::new(num), Arc::new(den))
    }

    pub fn pow(base: Expr, k: i32) -> Expr {
        match (base, k) {
            (_, 0) => Expr::one(),
            (b, 1) => b,
            (Expr::Const(c), k) if c != ZERO || k > 0 => Expr::Const(c.powi(k)),
            (Expr::Pow(inner, j), k) => Expr::pow(inner.as_ref().clone(), j * k),
            (b, k) => Expr::Pow(Arc::new(b), k),
        }
    }

    /// Complex conjugation, pushed down to the leaves on construction.
    pub fn conj(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(c.conj()),
            Expr::Var(v) => Expr::Var(v.conj()),
            Expr::Add(xs) => Expr::add(xs.iter().cloned().map(Expr::conj).collect()),
            Expr::Mul(xs) => Expr::mul(xs.iter().cloned().map(Expr::conj).collect()),
            Expr::Div(n, d) => Expr::div(Expr::conj(n.as_ref().clone()), Expr::conj(d.as_ref().clone())),
            Expr::Pow(b, k) => Expr::pow(Expr::conj(b.as_ref().clone()), k),
            Expr::Conj(inner) => inner.as_ref().clone(),
        }
    }

    /// Σ aᵢ·bᵢ (plain bilinear pairing, no conjugation).
    pub fn dot(a: &[Expr], b: &[Expr]) -> Expr {
        assert_eq!(a.len(), b.len());
        Expr::add(a.iter().zip(b).map(|(x, y)| x.clone() * y.clone()).collect())
    }

    /// |v|² = Σ vᵢ·v̄ᵢ for the coordinate vector of `space` with `dim` entries.
    pub fn norm_sq(space: Space, dim: usize) -> Expr {
        Expr::add(
            (0..dim)
                .map(|i| Expr::var(space, i) * Expr::var_conj(space, i))
                .collect(),
        )
    }

    /// Coordinate vector (v₀, …, v_{dim−1}) of `space`.
    pub fn coords(space: Space, dim: usize) -> Vec<Expr> {
        (0..dim).map(|i| Expr::var(space, i)).collect()
    }

    /// Conjugated coordinate vector (v̄₀, …, v̄_{dim−1}) of `space`.
    pub fn coords_conj(space: Space, dim: usize) -> Vec<Expr> {
        (0..dim).map(|i| Expr::var_conj(space, i)).collect()
    }

    pub fn eval(&self, at: &Assignment) -> Result<Complex64, ExprError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(v) => at.get(*v),
            Expr::Add(xs) => {
                let mut acc = ZERO;
                for x in xs.iter() {
                    acc += x.eval(at)?;
                }
                Ok(acc)
            }
            Expr::Mul(xs) => {
                let mut acc = ONE;
                for x in xs.iter() {
                    acc *= x.eval(at)?;
                }
                Ok(acc)
            }
            Expr::Div(n, d) => {
                let den = d.eval(at)?;
                if den == ZERO {
                    return Err(ExprError::DivisionByZero);
                }
                Ok(n.eval(at)? / den)
            }
            Expr::Pow(b, k) => {
                let base = b.eval(at)?;
                if *k < 0 && base == ZERO {
                    return Err(ExprError::DivisionByZero);
                }
                Ok(base.powi(*k))
            }
            Expr::Conj(x) => Ok(x.eval(at)?.conj()),
        }
    }

    /// Wirtinger derivative with respect to the leaf `wrt`, treating a
    /// variable and its conjugate as independent.
    pub fn wirtinger(&self, wrt: VarId) -> Expr {
        match self {
            Expr::Const(_) => Expr::zero(),
            Expr::Var(v) => {
                if *v == wrt {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Add(xs) => Expr::add(xs.iter().map(|x| x.wirtinger(wrt)).collect()),
            Expr::Mul(xs) => {
                let mut terms = Vec::with_capacity(xs.len());
                for (i, xi) in xs.iter().enumerate() {
                    let di = xi.wirtinger(wrt);
                    if di.is_zero() {
                        continue;
                    }
                    let mut fac = vec![di];
                    for (j, xj) in xs.iter().enumerate() {
                        if j != i {
                            fac.push(xj.clone());
                        }
                    }
                    terms.push(Expr::mul(fac));
                }
                Expr::add(terms)
            }
            Expr::Div(n, d) => {
                let dn = n.wirtinger(wrt);
                let dd = d.wirtinger(wrt);
                if dd.is_zero() {
                    return Expr::div(dn, d.as_ref().clone());
                }
                let num = Expr::sub(
                    dn * d.as_ref().clone(),
                    n.as_ref().clone() * dd,
                );
                Expr::div(num, Expr::pow(d.as_ref().clone(), 2))
            }
            Expr::Pow(b, k) => {
                let db = b.wirtinger(wrt);
                if db.is_zero() {
                    return Expr::zero();
                }
                Expr::mul(vec![
                    Expr::real(*k as f64),
                    Expr::pow(b.as_ref().clone(), k - 1),
                    db,
                ])
            }
            Expr::Conj(x) => Expr::conj(x.wirtinger(wrt.conj())),
        }
    }

    /// Joint homogeneity multidegree, or `Inhomogeneous` when monomials
    /// disagree. The structural zero is homogeneous of every degree.
    pub fn homogeneity(&self) -> Homogeneity {
        match self {
            Expr::Const(c) => {
                if *c == ZERO {
                    Homogeneity::Zero
                } else {
                    Homogeneity::Degrees(DegreeVec::default())
                }
            }
            Expr::Var(v) => {
                let mut d = DegreeVec::default();
                d.deg[v.space.idx()][v.conjugated as usize] = 1;
                Homogeneity::Degrees(d)
            }
            Expr::Add(xs) => {
                let mut agreed: Option<DegreeVec> = None;
                for x in xs.iter() {
                    match x.homogeneity() {
                        Homogeneity::Zero => {}
                        Homogeneity::Inhomogeneous => return Homogeneity::Inhomogeneous,
                        Homogeneity::Degrees(d) => match &agreed {
                            None => agreed = Some(d),
                            Some(prev) if *prev == d => {}
                            Some(_) => return Homogeneity::Inhomogeneous,
                        },
                    }
                }
                match agreed {
                    None => Homogeneity::Zero,
                    Some(d) => Homogeneity::Degrees(d),
                }
            }
            Expr::Mul(xs) => {
                let mut acc = DegreeVec::default();
                for x in xs.iter() {
                    match x.homogeneity() {
                        Homogeneity::Zero => return Homogeneity::Zero,
                        Homogeneity::Inhomogeneous => return Homogeneity::Inhomogeneous,
                        Homogeneity::Degrees(d) => acc = acc.plus(&d, 1),
                    }
                }
                Homogeneity::Degrees(acc)
            }
            Expr::Div(n, d) => match (n.homogeneity(), d.homogeneity()) {
                (Homogeneity::Zero, _) => Homogeneity::Zero,
                (_, Homogeneity::Zero) => Homogeneity::Inhomogeneous,
                (Homogeneity::Degrees(a), Homogeneity::Degrees(b)) => {
                    Homogeneity::Degrees(a.plus(&b, -1))
                }
                _ => Homogeneity::Inhomogeneous,
            },
            Expr::Pow(b, k) => match b.homogeneity() {
                Homogeneity::Zero => {
                    if *k > 0 {
                        Homogeneity::Zero
                    } else {
                        Homogeneity::Inhomogeneous
                    }
                }
                Homogeneity::Degrees(d) => Homogeneity::Degrees(d.scaled(*k as i64)),
                Homogeneity::Inhomogeneous => Homogeneity::Inhomogeneous,
            },
            Expr::Conj(x) => match x.homogeneity() {
                Homogeneity::Degrees(d) => Homogeneity::Degrees(d.swapped()),
                other => other,
            },
        }
    }

    /// Collect every variable leaf occurring in the expression.
    pub fn variables(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<VarId>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => out.push(*v),
            Expr::Add(xs) | Expr::Mul(xs) => {
                for x in xs.iter() {
                    x.collect_vars(out);
                }
            }
            Expr::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Pow(b, _) => b.collect_vars(out),
            Expr::Conj(x) => x.collect_vars(out),
        }
    }

    /// Parse the prefix text grammar produced by `Display`.
    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        let mut p = Parser { s: text.as_bytes(), pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.s.len() {
            return Err(ExprError::Parse(format!("trailing input at byte {}", p.pos)));
        }
        Ok(e)
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::add(vec![self, rhs])
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::sub(self, rhs)
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::mul(vec![self, rhs])
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

/// Homogeneity multidegree per (space, holomorphic/antiholomorphic) slot.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct DegreeVec {
    /// deg[space][0] = holomorphic degree, deg[space][1] = antiholomorphic.
    pub deg: [[i64; 2]; 4],
}

impl DegreeVec {
    pub fn plus(&self, other: &DegreeVec, sign: i64) -> DegreeVec {
        let mut out = *self;
        for s in 0..4 {
            for c in 0..2 {
                out.deg[s][c] += sign * other.deg[s][c];
            }
        }
        out
    }

    pub fn scaled(&self, k: i64) -> DegreeVec {
        let mut out = *self;
        for s in 0..4 {
            for c in 0..2 {
                out.deg[s][c] *= k;
            }
        }
        out
    }

    /// Swap holomorphic and antiholomorphic degrees in every space.
    pub fn swapped(&self) -> DegreeVec {
        let mut out = *self;
        for s in 0..4 {
            out.deg[s].swap(0, 1);
        }
        out
    }

    pub fn get(&self, space: Space, conjugated: bool) -> i64 {
        self.deg[space.idx()][conjugated as usize]
    }

    pub fn of(pairs: &[(Space, bool, i64)]) -> DegreeVec {
        let mut out = DegreeVec::default();
        for &(s, c, d) in pairs {
            out.deg[s.idx()][c as usize] += d;
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Homogeneity {
    /// The structural zero: homogeneous of every degree.
    Zero,
    Degrees(DegreeVec),
    Inhomogeneous,
}

impl Homogeneity {
    /// Degrees when homogeneous; `Zero` is compatible with anything.
    pub fn matches(&self, want: &DegreeVec) -> bool {
        match self {
            Homogeneity::Zero => true,
            Homogeneity::Degrees(d) => d == want,
            Homogeneity::Inhomogeneous => false,
        }
    }
}

/// Point assignment: one complex vector per variable space. Conjugated
/// variables evaluate to the conjugate of the assigned base value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    pub vals: [Vec<Complex64>; 4],
}

impl Assignment {
    pub fn new() -> Assignment {
        Assignment::default()
    }

    pub fn with(mut self, space: Space, vals: Vec<Complex64>) -> Assignment {
        self.vals[space.idx()] = vals;
        self
    }

    pub fn set(&mut self, space: Space, vals: Vec<Complex64>) {
        self.vals[space.idx()] = vals;
    }

    pub fn space(&self, space: Space) -> &[Complex64] {
        &self.vals[space.idx()]
    }

    pub fn get(&self, v: VarId) -> Result<Complex64, ExprError> {
        let vals = &self.vals[v.space.idx()];
        let x = vals.get(v.index).copied().ok_or(ExprError::UnboundVariable(v))?;
        Ok(if v.conjugated { x.conj() } else { x })
    }

    /// Merge: values of `other` override per space when nonempty.
    pub fn overlaid(&self, other: &Assignment) -> Assignment {
        let mut out = self.clone();
        for s in 0..4 {
            if !other.vals[s].is_empty() {
                out.vals[s] = other.vals[s].clone();
            }
        }
        out
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "const({})", fmt_complex(*c)),
            Expr::Var(v) => {
                if v.conjugated {
                    write!(f, "conj(var({}, {}))", v.space.name(), v.index)
                } else {
                    write!(f, "var({}, {})", v.space.name(), v.index)
                }
            }
            Expr::Add(xs) => write_node(f, "add", xs.iter()),
            Expr::Mul(xs) => write_node(f, "mul", xs.iter()),
            Expr::Div(a, b) => write!(f, "div({}, {})", a, b),
            Expr::Pow(b, k) => write!(f, "pow({}, {})", b, k),
            Expr::Conj(x) => write!(f, "conj({})", x),
        }
    }
}

fn write_node<'a>(
    f: &mut fmt::Formatter<'_>,
    name: &str,
    args: impl Iterator<Item = &'a Expr>,
) -> fmt::Result {
    write!(f, "{}(", name)?;
    for (i, a) in args.enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{}", a)?;
    }
    write!(f, ")")
}

/// Full-precision "a+bi" rendering (round-trips through `parse_complex`).
pub fn fmt_complex(c: Complex64) -> String {
    if c.im.is_sign_negative() && !c.im.is_nan() {
        format!("{}-{}i", c.re, -c.im)
    } else {
        format!("{}+{}i", c.re, c.im)
    }
}

/// Parse "a+bi" / "a-bi" / bare real "a" / bare imaginary "bi".
pub fn parse_complex(s: &str) -> Result<Complex64, ExprError> {
    let s = s.trim();
    let bad = |m: &str| ExprError::Parse(format!("bad complex literal {s:?}: {m}"));
    if let Some(body) = s.strip_suffix('i') {
        // find the split between real and imaginary parts: a sign that is not
        // at position 0 and does not follow an exponent marker
        let bytes = body.as_bytes();
        let mut split = None;
        for i in (1..bytes.len()).rev() {
            if (bytes[i] == b'+' || bytes[i] == b'-')
                && bytes[i - 1] != b'e'
                && bytes[i - 1] != b'E'
            {
                split = Some(i);
                break;
            }
        }
        match split {
            Some(i) => {
                let re: f64 = body[..i].parse().map_err(|_| bad("real part"))?;
                let im: f64 = body[i..].parse().map_err(|_| bad("imaginary part"))?;
                Ok(Complex64::new(re, im))
            }
            None => {
                let im: f64 = body.parse().map_err(|_| bad("imaginary part"))?;
                Ok(Complex64::new(0.0, im))
            }
        }
    } else {
        let re: f64 = s.parse().map_err(|_| bad("real part"))?;
        Ok(Complex64::new(re, 0.0))
    }
}

/// One instruction of a compiled expression tape. Arguments are indices of
/// earlier instructions.
#[derive(Clone, Debug)]
enum Instr {
    Const(Complex64),
    Var(VarId),
    Add(Vec<usize>),
    Mul(Vec<usize>),
    Div(usize, usize),
    Pow(usize, i32),
    Conj(usize),
}

/// Identity key for common-subexpression elimination. Shared `Arc`s come
/// out as the same key, so a DAG-shaped expression tree compiles to one
/// instruction per distinct node instead of one per path.
#[derive(Clone, PartialEq, Eq, Hash)]
enum NodeKey {
    Const(u64, u64),
    Var(VarId),
    Add(usize),
    Mul(usize),
    Div(usize, usize),
    Pow(usize, i32),
    Conj(usize),
}

/// Compiles expressions into a flat instruction list evaluated as one linear
/// pass per point. Push any number of expressions; each returns the slot
/// that will hold its value.
#[derive(Default)]
pub struct TapeBuilder {
    instrs: Vec<Instr>,
    seen: HashMap<NodeKey, usize>,
}

impl TapeBuilder {
    pub fn new() -> TapeBuilder {
        TapeBuilder::default()
    }

    pub fn push(&mut self, e: &Expr) -> usize {
        let key = match e {
            Expr::Const(c) => NodeKey::Const(c.re.to_bits(), c.im.to_bits()),
            Expr::Var(v) => NodeKey::Var(*v),
            Expr::Add(xs) => NodeKey::Add(Arc::as_ptr(xs) as usize),
            Expr::Mul(xs) => NodeKey::Mul(Arc::as_ptr(xs) as usize),
            Expr::Div(a, b) => NodeKey::Div(Arc::as_ptr(a) as usize, Arc::as_ptr(b) as usize),
            Expr::Pow(b, k) => NodeKey::Pow(Arc::as_ptr(b) as usize, *k),
            Expr::Conj(x) => NodeKey::Conj(Arc::as_ptr(x) as usize),
        };
        if let Some(&slot) = self.seen.get(&key) {
            return slot;
        }
        let instr = match e {
            Expr::Const(c) => Instr::Const(*c),
            Expr::Var(v) => Instr::Var(*v),
            Expr::Add(xs) => Instr::Add(xs.iter().map(|x| self.push(x)).collect()),
            Expr::Mul(xs) => Instr::Mul(xs.iter().map(|x| self.push(x)).collect()),
            Expr::Div(a, b) => {
                let ia = self.push(a);
                let ib = self.push(b);
                Instr::Div(ia, ib)
            }
            Expr::Pow(b, k) => Instr::Pow(self.push(b), *k),
            Expr::Conj(x) => Instr::Conj(self.push(x)),
        };
        let slot = self.instrs.len();
        self.instrs.push(instr);
        self.seen.insert(key, slot);
        slot
    }

    pub fn finish(self) -> Tape {
        Tape { instrs: self.instrs }
    }
}

pub struct Tape {
    instrs: Vec<Instr>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    /// Evaluate all instructions at a point; `buf` is reused between calls
    /// and holds one value per instruction afterwards.
    pub fn eval_into(&self, at: &Assignment, buf: &mut Vec<Complex64>) -> Result<(), ExprError> {
        buf.clear();
        buf.reserve(self.instrs.len());
        for instr in &self.instrs {
            let v = match instr {
                Instr::Const(c) => *c,
                Instr::Var(v) => at.get(*v)?,
                Instr::Add(args) => {
                    let mut acc = ZERO;
                    for &a in args {
                        acc += buf[a];
                    }
                    acc
                }
                Instr::Mul(args) => {
                    let mut acc = ONE;
                    for &a in args {
                        acc *= buf[a];
                    }
                    acc
                }
                Instr::Div(a, b) => {
                    let den = buf[*b];
                    if den == ZERO {
                        return Err(ExprError::DivisionByZero);
                    }
                    buf[*a] / den
                }
                Instr::Pow(a, k) => {
                    let base = buf[*a];
                    if *k < 0 && base == ZERO {
                        return Err(ExprError::DivisionByZero);
                    }
                    base.powi(*k)
                }
                Instr::Conj(a) => buf[*a].conj(),
            };
            buf.push(v);
        }
        Ok(())
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && (self.s[self.pos] as char).is_whitespace() {
            self.pos += 1;
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.s.len()
            && ((self.s[self.pos] as char).is_ascii_alphanumeric() || self.s[self.pos] == b'_')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.s[start..self.pos]).into_owned()
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        self.skip_ws();
        if self.pos < self.s.len() && self.s[self.pos] == c {
            self.pos += 1;
            Ok(())
        } else {
            Err(ExprError::Parse(format!(
                "expected '{}' at byte {}",
                c as char, self.pos
            )))
        }
    }

    /// Raw argument text up to the matching close paren or comma (depth 0).
    fn raw_arg(&mut self) -> String {
        let start = self.pos;
        let mut depth = 0usize;
        while self.pos < self.s.len() {
            match self.s[self.pos] {
                b'(' => depth += 1,
                b')' if depth == 0 => break,
                b')' => depth -= 1,
                b',' if depth == 0 => break,
                _ => {}
            }
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.s[start..self.pos]).into_owned()
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        let name = self.ident();
        if name.is_empty() {
            return Err(ExprError::Parse(format!("expected node at byte {}", self.pos)));
        }
        self.expect(b'(')?;
        let e = match name.as_str() {
            "const" => {
                self.skip_ws();
                let raw = self.raw_arg();
                Expr::constant(parse_complex(&raw)?)
            }
            "var" => {
                self.skip_ws();
                let sp = self.ident();
                let space = Space::from_name(&sp)
                    .ok_or_else(|| ExprError::Parse(format!("unknown space {sp:?}")))?;
                self.expect(b',')?;
                self.skip_ws();
                let idx_raw = self.raw_arg();
                let index: usize = idx_raw
                    .trim()
                    .parse()
                    .map_err(|_| ExprError::Parse(format!("bad index {idx_raw:?}")))?;
                Expr::var(space, index)
            }
            "add" | "mul" => {
                let mut args = vec![self.expr()?];
                loop {
                    self.skip_ws();
                    if self.pos < self.s.len() && self.s[self.pos] == b',' {
                        self.pos += 1;
                        args.push(self.expr()?);
                    } else {
                        break;
                    }
                }
                if name == "add" {
                    Expr::add(args)
                } else {
                    Expr::mul(args)
                }
            }
            "div" => {
                let a = self.expr()?;
                self.expect(b',')?;
                let b = self.expr()?;
                Expr::div(a, b)
            }
            "pow" => {
                let b = self.expr()?;
                self.expect(b',')?;
                self.skip_ws();
                let raw = self.raw_arg();
                let k: i32 = raw
                    .trim()
                    .parse()
                    .map_err(|_| ExprError::Parse(format!("bad exponent {raw:?}")))?;
                Expr::pow(b, k)
            }
            "conj" => Expr::conj(self.expr()?),
            other => return Err(ExprError::Parse(format!("unknown node {other:?}"))),
        };
        self.expect(b')')?;
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// |η|² for η = 2πi(z−ζ) in one variable.
    fn eta_norm_sq_c1() -> Expr {
        let eta = Expr::real(std::f64::consts::TAU)
            * Expr::constant(c(0.0, 1.0))
            * (Expr::var(Space::Z, 0) - Expr::var(Space::Zeta, 0));
        eta.clone() * Expr::conj(eta)
    }

    #[test]
    fn eval_diagonal_zero_of_eta() {
        let at = Assignment::new()
            .with(Space::Zeta, vec![c(1.0, 0.0)])
            .with(Space::Z, vec![c(1.0, 0.0)]);
        assert_eq!(eta_norm_sq_c1().eval(&at).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn eval_weight_scalar_on_diagonal() {
        // z·ζ̄/|ζ|² at ζ = z = (1,0) in two variables
        let num = Expr::dot(
            &Expr::coords(Space::Z, 2),
            &Expr::coords_conj(Space::Zeta, 2),
        );
        let e = Expr::div(num, Expr::norm_sq(Space::Zeta, 2));
        let at = Assignment::new()
            .with(Space::Zeta, vec![c(1.0, 0.0), c(0.0, 0.0)])
            .with(Space::Z, vec![c(1.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(e.eval(&at).unwrap(), c(1.0, 0.0));
    }

    #[test]
    fn eval_rational_with_conjugates() {
        // (1 + z̄·ζ)/(1 + |ζ|²) at ζ=2, z=3i equals (1−6i)/5
        let e = Expr::div(
            Expr::one() + Expr::var_conj(Space::Z, 0) * Expr::var(Space::Zeta, 0),
            Expr::one() + Expr::norm_sq(Space::Zeta, 1),
        );
        let at = Assignment::new()
            .with(Space::Zeta, vec![c(2.0, 0.0)])
            .with(Space::Z, vec![c(0.0, 3.0)]);
        let got = e.eval(&at).unwrap();
        assert!((got - c(0.2, -1.2)).norm() < 1e-15);
    }

    #[test]
    fn eval_errors() {
        let e = Expr::div(Expr::one(), Expr::var(Space::Zeta, 0));
        let at = Assignment::new().with(Space::Zeta, vec![c(0.0, 0.0)]);
        assert_eq!(e.eval(&at), Err(ExprError::DivisionByZero));
        let unbound = Expr::var(Space::Z, 3);
        assert!(matches!(
            unbound.eval(&at),
            Err(ExprError::UnboundVariable(_))
        ));
    }

    #[test]
    fn wirtinger_leaf_rules() {
        // ∂(ζζ̄)/∂ζ̄ = ζ
        let e = Expr::var(Space::Zeta, 0) * Expr::var_conj(Space::Zeta, 0);
        let d = e.wirtinger(VarId::new(Space::Zeta, 0).conj());
        let at = Assignment::new().with(Space::Zeta, vec![c(1.5, -2.0)]);
        assert_eq!(d.eval(&at).unwrap(), c(1.5, -2.0));
        // ∂(ζ²)/∂ζ̄ = 0 structurally
        let h = Expr::pow(Expr::var(Space::Zeta, 0), 2);
        assert!(h.wirtinger(VarId::new(Space::Zeta, 0).conj()).is_zero());
    }

    #[test]
    fn wirtinger_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0usize;
        while checked < 1000 {
            let e = sample::random_expr(&mut rng, 3);
            let vars = e.variables();
            if vars.is_empty() {
                continue;
            }
            let v = vars[checked % vars.len()];
            let at = sample::random_assignment(&mut rng, 2);
            let sym = match e.wirtinger(v).eval(&at) {
                Ok(x) => x,
                Err(_) => continue,
            };
            let fd = match sample::fd_wirtinger(&e, v, &at, 1e-6) {
                Ok(x) => x,
                Err(_) => continue,
            };
            let scale = sym.norm().max(fd.norm()).max(1.0);
            assert!(
                (sym - fd).norm() / scale < 1e-6,
                "expr {e} at var {v:?}: sym {sym} vs fd {fd}"
            );
            checked += 1;
        }
    }

    #[test]
    fn mixed_partials_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let e = sample::random_expr(&mut rng, 3);
            let v1 = VarId::new(Space::Zeta, 0);
            let v2 = VarId::new(Space::Z, 0).conj();
            let d12 = e.wirtinger(v1).wirtinger(v2);
            let d21 = e.wirtinger(v2).wirtinger(v1);
            let mut points = 0usize;
            while points < 100 {
                let at = sample::random_assignment(&mut rng, 2);
                let (a, b) = match (d12.eval(&at), d21.eval(&at)) {
                    (Ok(a), Ok(b)) => (a, b),
                    _ => continue,
                };
                let scale = a.norm().max(b.norm()).max(1.0);
                assert!((a - b).norm() / scale < 1e-12);
                points += 1;
            }
        }
    }

    #[test]
    fn homogeneity_examples() {
        // z·ζ̄/|ζ|² → deg_z 1, deg_ζ −1, antiholomorphic degrees 0
        let e = Expr::div(
            Expr::dot(&Expr::coords(Space::Z, 2), &Expr::coords_conj(Space::Zeta, 2)),
            Expr::norm_sq(Space::Zeta, 2),
        );
        let want = DegreeVec::of(&[(Space::Z, false, 1), (Space::Zeta, false, -1)]);
        assert_eq!(e.homogeneity(), Homogeneity::Degrees(want));

        let want = DegreeVec::of(&[(Space::Z, false, 1), (Space::Z, true, 1)]);
        assert_eq!(
            Expr::norm_sq(Space::Z, 2).homogeneity(),
            Homogeneity::Degrees(want)
        );

        let inhom = Expr::var(Space::Zeta, 0) + Expr::pow(Expr::var(Space::Zeta, 0), 2);
        assert_eq!(inhom.homogeneity(), Homogeneity::Inhomogeneous);
    }

    #[test]
    fn homogeneity_additive_over_mul() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let a = sample::random_expr(&mut rng, 2);
            let b = sample::random_expr(&mut rng, 2);
            let (ha, hb) = (a.homogeneity(), b.homogeneity());
            let hab = (a * b).homogeneity();
            if let (Homogeneity::Degrees(da), Homogeneity::Degrees(db)) = (ha, hb) {
                let want = da.plus(&db, 1);
                assert!(
                    matches!(hab, Homogeneity::Degrees(d) if d == want)
                        || matches!(hab, Homogeneity::Zero)
                );
            }
        }
    }

    #[test]
    fn conj_canonicalization_idempotent() {
        let e = Expr::conj(Expr::conj(Expr::var(Space::Zeta, 1)));
        assert!(matches!(e, Expr::Var(v) if !v.conjugated));
        let f = Expr::conj(
            Expr::var(Space::Zeta, 0) * Expr::var(Space::Z, 0) + Expr::constant(c(0.0, 2.0)),
        );
        // conj pushed to leaves: no Conj node survives over non-leaves
        fn no_conj_over_nonleaf(e: &Expr) -> bool {
            match e {
                Expr::Conj(inner) => matches!(inner.as_ref(), Expr::Var(_)),
                Expr::Add(xs) | Expr::Mul(xs) => xs.iter().all(no_conj_over_nonleaf),
                Expr::Div(a, b) => no_conj_over_nonleaf(a) && no_conj_over_nonleaf(b),
                Expr::Pow(b, _) => no_conj_over_nonleaf(b),
                _ => true,
            }
        }
        assert!(no_conj_over_nonleaf(&f));
    }

    #[test]
    fn display_parse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let e = sample::random_expr(&mut rng, 3);
            let text = e.to_string();
            let back = Expr::parse(&text).expect("parse back");
            let at = sample::random_assignment(&mut rng, 2);
            match (e.eval(&at), back.eval(&at)) {
                (Ok(a), Ok(b)) => {
                    let scale = a.norm().max(1.0);
                    assert!((a - b).norm() / scale < 1e-14, "{text}");
                }
                (Err(_), Err(_)) => {}
                other => panic!("eval disagreement {other:?} for {text}"),
            }
        }
    }

    #[test]
    fn tape_matches_tree_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        for _ in 0..200 {
            let e = sample::random_expr(&mut rng, 4);
            let mut b = TapeBuilder::new();
            let slot = b.push(&e);
            let tape = b.finish();
            let mut buf = Vec::new();
            for _ in 0..5 {
                let at = sample::random_assignment(&mut rng, 2);
                let tree = e.eval(&at);
                let taped = tape.eval_into(&at, &mut buf).map(|()| buf[slot]);
                match (tree, taped) {
                    (Ok(a), Ok(b)) => {
                        assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0), "{e}")
                    }
                    (Err(_), Err(_)) => {}
                    other => panic!("tape/tree disagree: {other:?} for {e}"),
                }
            }
        }
    }

    #[test]
    fn complex_literal_round_trip() {
        for &x in &[
            c(1.0, 2.0),
            c(-1.5e-7, 0.0),
            c(0.0, -1.0),
            c(6.123233995736766e-17, -3.0),
        ] {
            assert_eq!(parse_complex(&fmt_complex(x)).unwrap(), x);
        }
    }
}
