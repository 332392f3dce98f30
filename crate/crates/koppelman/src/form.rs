//! Exterior algebra over coordinate differentials and frame generators.
//!
//! A [`Form`] is a finite sum of monomials, each a strictly increasing list
//! of [`Generator`]s with an [`Expr`] coefficient. Every generator is odd
//! (degree 1): differentials dζ, dζ̄, dz, dz̄ in any of the four variable
//! spaces, and the frame pair e, e* used while assembling kernels. All of
//! them anticommute and square to zero.
//!
//! Canonical generator order is (space, kind, index); signs from reordering
//! are tracked by counting inversions during monomial merges.
//!
//! ∂̄ and the contraction δ both act as antiderivations: ∂̄ differentiates
//! coefficients and wedges the new differential on the left, δ removes one
//! generator at position k with sign (−1)^k. Their anticommutator vanishes
//! when the contraction values are holomorphic, which makes ∇ = δ − ∂̄
//! square to zero; `kernel` relies on that identity.

use crate::expr::{Assignment, Expr, ExprError, Space, VarId};
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum GenKind {
    /// Holomorphic differential dv.
    D,
    /// Antiholomorphic differential dv̄.
    DBar,
    /// Frame generator e.
    E,
    /// Dual frame generator e*.
    EStar,
}

/// One odd generator of the algebra.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Generator {
    pub space: Space,
    pub kind: GenKind,
    pub index: usize,
}

impl Generator {
    pub fn d(space: Space, index: usize) -> Generator {
        Generator { space, kind: GenKind::D, index }
    }

    pub fn dbar(space: Space, index: usize) -> Generator {
        Generator { space, kind: GenKind::DBar, index }
    }

    /// Frame generators live on the integration side by convention.
    pub fn e(index: usize) -> Generator {
        Generator { space: Space::Zeta, kind: GenKind::E, index }
    }

    pub fn estar(index: usize) -> Generator {
        Generator { space: Space::Zeta, kind: GenKind::EStar, index }
    }

    pub fn name(&self) -> String {
        match (self.space, self.kind) {
            (Space::Zeta, GenKind::D) => format!("dzeta{}", self.index),
            (Space::Zeta, GenKind::DBar) => format!("dzetabar{}", self.index),
            (Space::Z, GenKind::D) => format!("dz{}", self.index),
            (Space::Z, GenKind::DBar) => format!("dzbar{}", self.index),
            (Space::ZetaTilde, GenKind::D) => format!("dzetat{}", self.index),
            (Space::ZetaTilde, GenKind::DBar) => format!("dzetatbar{}", self.index),
            (Space::ZTilde, GenKind::D) => format!("dzt{}", self.index),
            (Space::ZTilde, GenKind::DBar) => format!("dztbar{}", self.index),
            (Space::Zeta, GenKind::E) => format!("e{}", self.index),
            (Space::Zeta, GenKind::EStar) => format!("estar{}", self.index),
            (s, k) => format!("{}_{:?}{}", s.name(), k, self.index),
        }
    }

    pub fn from_name(name: &str) -> Option<Generator> {
        // longest prefix first so "dzetatbar" is not read as "dzeta"+"tbar"
        const TABLE: [(&str, Space, GenKind); 10] = [
            ("dzetatbar", Space::ZetaTilde, GenKind::DBar),
            ("dzetabar", Space::Zeta, GenKind::DBar),
            ("dzetat", Space::ZetaTilde, GenKind::D),
            ("dzeta", Space::Zeta, GenKind::D),
            ("dztbar", Space::ZTilde, GenKind::DBar),
            ("dzbar", Space::Z, GenKind::DBar),
            ("dzt", Space::ZTilde, GenKind::D),
            ("dz", Space::Z, GenKind::D),
            ("estar", Space::Zeta, GenKind::EStar),
            ("e", Space::Zeta, GenKind::E),
        ];
        for (prefix, space, kind) in TABLE {
            if let Some(rest) = name.strip_prefix(prefix) {
                if let Ok(index) = rest.parse::<usize>() {
                    return Some(Generator { space, kind, index });
                }
            }
        }
        None
    }
}

/// Ambient geometry: fixes coordinate counts per space and the frame rank.
/// Projective spaces use homogeneous coordinates, so `Projective { n }` has
/// n+1 coordinates per space.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Ambient {
    Flat { n: usize },
    Projective { n: usize },
    Product { n: usize, m: usize },
}

impl Ambient {
    /// Number of scalar coordinates carried by `space`.
    pub fn coords(&self, space: Space) -> usize {
        match (self, space) {
            (Ambient::Flat { n }, Space::Zeta | Space::Z) => *n,
            (Ambient::Flat { .. }, _) => 0,
            (Ambient::Projective { n }, Space::Zeta | Space::Z) => *n + 1,
            (Ambient::Projective { .. }, _) => 0,
            (Ambient::Product { n, .. }, Space::Zeta | Space::Z) => *n + 1,
            (Ambient::Product { m, .. }, Space::ZetaTilde | Space::ZTilde) => *m + 1,
        }
    }

    /// Rank of the frame bundle (number of e/e* pairs available).
    pub fn fiber_rank(&self) -> usize {
        match self {
            Ambient::Flat { n } => *n,
            Ambient::Projective { n } => *n + 1,
            Ambient::Product { .. } => 0,
        }
    }

    /// Spaces with at least one coordinate.
    pub fn active_spaces(&self) -> Vec<Space> {
        Space::ALL
            .into_iter()
            .filter(|s| self.coords(*s) > 0)
            .collect()
    }

    /// Integration-side spaces (ζ and, on products, ζ̃).
    pub fn integration_spaces(&self) -> Vec<Space> {
        [Space::Zeta, Space::ZetaTilde]
            .into_iter()
            .filter(|s| self.coords(*s) > 0)
            .collect()
    }

    pub fn check_gen(&self, g: Generator) -> Result<(), FormError> {
        let limit = match g.kind {
            GenKind::D | GenKind::DBar => self.coords(g.space),
            GenKind::E | GenKind::EStar => {
                if g.space == Space::Zeta {
                    self.fiber_rank()
                } else {
                    0
                }
            }
        };
        if g.index < limit {
            Ok(())
        } else {
            Err(FormError::RankExceeded { gen: g.name(), limit })
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormError {
    #[error("ambient mismatch: {0:?} vs {1:?}")]
    AmbientMismatch(Ambient, Ambient),
    #[error("generator {gen} out of range for ambient (limit {limit})")]
    RankExceeded { gen: String, limit: usize },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("form parse error: {0}")]
    Parse(String),
}

/// Finite sum of generator monomials with expression coefficients.
#[derive(Clone, Debug)]
pub struct Form {
    pub ambient: Ambient,
    terms: BTreeMap<Vec<Generator>, Expr>,
}

/// Generator counts per (space, kind); the multidegree of a monomial.
#[derive(Clone, Copy, PartialEq, Eq, Default, Debug)]
pub struct GenCount {
    counts: [[usize; 4]; 4],
}

impl GenCount {
    pub fn of(monomial: &[Generator]) -> GenCount {
        let mut out = GenCount::default();
        for g in monomial {
            out.counts[g.space.idx()][kind_idx(g.kind)] += 1;
        }
        out
    }

    pub fn get(&self, space: Space, kind: GenKind) -> usize {
        self.counts[space.idx()][kind_idx(kind)]
    }
}

fn kind_idx(k: GenKind) -> usize {
    match k {
        GenKind::D => 0,
        GenKind::DBar => 1,
        GenKind::E => 2,
        GenKind::EStar => 3,
    }
}

/// Merge two strictly increasing monomials; `None` if they share a
/// generator. The sign is (−1)^inversions of the interleaving.
pub fn merge_monomials(a: &[Generator], b: &[Generator]) -> Option<(Vec<Generator>, i32)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    let mut inversions = 0usize;
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                inversions += a.len() - i;
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => return None,
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    let sign = if inversions % 2 == 0 { 1 } else { -1 };
    Some((out, sign))
}

/// Parity of the permutation sorting `perm` ascending (+1 even, −1 odd).
pub fn permutation_parity(perm: &[usize]) -> i32 {
    let mut p = perm.to_vec();
    let mut sign = 1;
    for i in 0..p.len() {
        while p[i] != i {
            let j = p[i];
            p.swap(i, j);
            sign = -sign;
        }
    }
    sign
}

impl Form {
    pub fn zero(ambient: Ambient) -> Form {
        Form { ambient, terms: BTreeMap::new() }
    }

    pub fn scalar(ambient: Ambient, coeff: Expr) -> Form {
        let mut f = Form::zero(ambient);
        if !coeff.is_zero() {
            f.terms.insert(Vec::new(), coeff);
        }
        f
    }

    pub fn one(ambient: Ambient) -> Form {
        Form::scalar(ambient, Expr::one())
    }

    /// Single generator with coefficient 1.
    pub fn gen_1(ambient: Ambient, g: Generator) -> Result<Form, FormError> {
        ambient.check_gen(g)?;
        let mut f = Form::zero(ambient);
        f.terms.insert(vec![g], Expr::one());
        Ok(f)
    }

    /// Σᵢ coeffs[i] · gen(i), a coordinate-vector 1-form.
    pub fn vector(
        ambient: Ambient,
        coeffs: &[Expr],
        gen: impl Fn(usize) -> Generator,
    ) -> Result<Form, FormError> {
        let mut f = Form::zero(ambient);
        for (i, c) in coeffs.iter().enumerate() {
            let g = gen(i);
            ambient.check_gen(g)?;
            if !c.is_zero() {
                f.add_term(vec![g], c.clone());
            }
        }
        Ok(f)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<Generator>, &Expr)> {
        self.terms.iter()
    }

    pub fn coeff(&self, monomial: &[Generator]) -> Expr {
        self.terms.get(monomial).cloned().unwrap_or_else(Expr::zero)
    }

    fn add_term(&mut self, monomial: Vec<Generator>, coeff: Expr) {
        debug_assert!(monomial.windows(2).all(|w| w[0] < w[1]));
        if coeff.is_zero() {
            return;
        }
        match self.terms.entry(monomial) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(coeff);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let sum = e.get().clone() + coeff;
                if sum.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
        }
    }

    pub fn check_same_ambient(&self, other: &Form) -> Result<(), FormError> {
        if self.ambient == other.ambient {
            Ok(())
        } else {
            Err(FormError::AmbientMismatch(self.ambient, other.ambient))
        }
    }

    pub fn add(&self, other: &Form) -> Result<Form, FormError> {
        self.check_same_ambient(other)?;
        let mut out = self.clone();
        for (m, c) in other.terms() {
            out.add_term(m.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Form) -> Result<Form, FormError> {
        self.add(&other.scale_c(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, c: &Expr) -> Form {
        let mut out = Form::zero(self.ambient);
        for (m, x) in self.terms() {
            out.add_term(m.clone(), c.clone() * x.clone());
        }
        out
    }

    pub fn scale_c(&self, c: Complex64) -> Form {
        self.scale(&Expr::constant(c))
    }

    /// Divide every coefficient by a scalar expression.
    pub fn div_scalar(&self, den: &Expr) -> Form {
        let mut out = Form::zero(self.ambient);
        for (m, x) in self.terms() {
            out.add_term(m.clone(), Expr::div(x.clone(), den.clone()));
        }
        out
    }

    pub fn map_coeffs(&self, f: impl Fn(&Expr) -> Expr) -> Form {
        let mut out = Form::zero(self.ambient);
        for (m, x) in self.terms() {
            out.add_term(m.clone(), f(x));
        }
        out
    }

    pub fn wedge(&self, other: &Form) -> Result<Form, FormError> {
        self.check_same_ambient(other)?;
        let mut out = Form::zero(self.ambient);
        for (ma, ca) in self.terms() {
            for (mb, cb) in other.terms() {
                if let Some((m, sign)) = merge_monomials(ma, mb) {
                    let mut c = ca.clone() * cb.clone();
                    if sign < 0 {
                        c = -c;
                    }
                    out.add_term(m, c);
                }
            }
        }
        Ok(out)
    }

    pub fn wedge_pow(&self, k: usize) -> Result<Form, FormError> {
        let mut out = Form::one(self.ambient);
        for _ in 0..k {
            out = out.wedge(self)?;
        }
        Ok(out)
    }

    /// Divided power X^k / k!.
    pub fn divided_power(&self, k: usize) -> Result<Form, FormError> {
        let mut fact = 1.0f64;
        for j in 2..=k {
            fact *= j as f64;
        }
        Ok(self.wedge_pow(k)?.scale_c(Complex64::new(1.0 / fact, 0.0)))
    }

    /// ∂̄ over the given spaces: differentiate coefficients by v̄ and wedge
    /// the new dv̄ on the left.
    pub fn dbar(&self, spaces: &[Space]) -> Form {
        let mut out = Form::zero(self.ambient);
        for (m, c) in self.terms() {
            for &space in spaces {
                for i in 0..self.ambient.coords(space) {
                    let dc = c.wirtinger(VarId::new(space, i).conj());
                    if dc.is_zero() {
                        continue;
                    }
                    let g = Generator::dbar(space, i);
                    if let Some((mm, sign)) = merge_monomials(&[g], m) {
                        let coeff = if sign < 0 { -dc } else { dc };
                        out.add_term(mm, coeff);
                    }
                }
            }
        }
        out
    }

    /// ∂̄ over every active space of the ambient.
    pub fn dbar_all(&self) -> Form {
        self.dbar(&self.ambient.active_spaces())
    }

    /// Interior contraction: remove each generator g with
    /// `action(g) = Some(v)`, at position k contributing sign (−1)^k.
    pub fn contract(&self, action: impl Fn(&Generator) -> Option<Expr>) -> Form {
        let mut out = Form::zero(self.ambient);
        for (m, c) in self.terms() {
            for (k, g) in m.iter().enumerate() {
                if let Some(v) = action(g) {
                    let mut rest = m.clone();
                    rest.remove(k);
                    let mut coeff = c.clone() * v;
                    if k % 2 == 1 {
                        coeff = -coeff;
                    }
                    out.add_term(rest, coeff);
                }
            }
        }
        out
    }

    /// δ_η for the frame convention: e*ᵢ ↦ ηᵢ, everything else untouched.
    pub fn contract_estar(&self, eta: &[Expr]) -> Form {
        self.contract(|g| {
            if g.kind == GenKind::EStar && g.space == Space::Zeta {
                eta.get(g.index).cloned()
            } else {
                None
            }
        })
    }

    /// ∇ = δ_η − ∂̄ with δ given by `action` and ∂̄ over `spaces`.
    pub fn nabla(
        &self,
        action: impl Fn(&Generator) -> Option<Expr>,
        spaces: &[Space],
    ) -> Result<Form, FormError> {
        self.contract(action).sub(&self.dbar(spaces))
    }

    /// Keep only terms whose monomial satisfies the predicate.
    pub fn pick_by(&self, pred: impl Fn(&[Generator]) -> bool) -> Form {
        let mut out = Form::zero(self.ambient);
        for (m, c) in self.terms() {
            if pred(m) {
                out.add_term(m.clone(), c.clone());
            }
        }
        out
    }

    /// Terms with exactly `k` e* generators.
    pub fn pick_estar_degree(&self, k: usize) -> Form {
        self.pick_by(|m| GenCount::of(m).get(Space::Zeta, GenKind::EStar) == k)
    }

    /// Terms whose (holomorphic, antiholomorphic) differential counts in
    /// `space` are exactly (p, q). Other spaces and frame degrees are free.
    pub fn pick_bidegree(&self, space: Space, p: usize, q: usize) -> Form {
        self.pick_by(|m| {
            let c = GenCount::of(m);
            c.get(space, GenKind::D) == p && c.get(space, GenKind::DBar) == q
        })
    }

    /// Coefficient of the full fiber volume e₀∧e*₀∧…∧e_{r−1}∧e*_{r−1}:
    /// keep terms containing every fiber generator, strip them, and apply
    /// the parity of moving them (interleaved, to the right of the rest).
    pub fn project_fiber(&self, rank: usize) -> Form {
        let mut fiber = Vec::with_capacity(2 * rank);
        for i in 0..rank {
            fiber.push(Generator::e(i));
            fiber.push(Generator::estar(i));
        }
        let mut out = Form::zero(self.ambient);
        'terms: for (m, c) in self.terms() {
            let mut base = Vec::with_capacity(m.len());
            let mut fiber_positions = vec![usize::MAX; 2 * rank];
            for (pos, g) in m.iter().enumerate() {
                if let Some(slot) = fiber.iter().position(|f| f == g) {
                    fiber_positions[slot] = pos;
                } else if matches!(g.kind, GenKind::E | GenKind::EStar) {
                    continue 'terms;
                } else {
                    base.push((pos, *g));
                }
            }
            if fiber_positions.contains(&usize::MAX) {
                continue;
            }
            // target order: base (ascending) then interleaved fiber pairs
            let perm: Vec<usize> = base
                .iter()
                .map(|(pos, _)| *pos)
                .chain(fiber_positions.iter().copied())
                .collect();
            let sign = permutation_parity(&perm);
            let coeff = if sign < 0 { -c.clone() } else { c.clone() };
            out.add_term(base.into_iter().map(|(_, g)| g).collect(), coeff);
        }
        out
    }

    /// Replace generators by degree-1 forms; generators not in the map stay.
    /// Works term by term as an ordered product, which is sound because all
    /// images are odd.
    pub fn substitute(
        &self,
        image: impl Fn(&Generator) -> Option<Form>,
    ) -> Result<Form, FormError> {
        let mut out = Form::zero(self.ambient);
        for (m, c) in self.terms() {
            let mut acc = Form::scalar(self.ambient, c.clone());
            for g in m {
                let factor = match image(g) {
                    Some(f) => {
                        debug_assert!(f.terms().all(|(mm, _)| mm.len() == 1));
                        f
                    }
                    None => Form::gen_1(self.ambient, *g)?,
                };
                acc = acc.wedge(&factor)?;
            }
            out = out.add(&acc)?;
        }
        Ok(out)
    }

    /// Numeric evaluation at a point.
    pub fn eval(&self, at: &Assignment) -> Result<NumForm, ExprError> {
        let mut out = NumForm::default();
        for (m, c) in self.terms() {
            out.add_term(m.clone(), c.eval(at)?);
        }
        Ok(out)
    }

    /// Largest generator index in use per (space, kind) is implied by the
    /// ambient; this reports the maximal monomial length (total degree).
    pub fn max_degree(&self) -> usize {
        self.terms.keys().map(|m| m.len()).max().unwrap_or(0)
    }

    /// Compile every coefficient into one shared tape. Use this whenever the
    /// form is evaluated at many points: shared subexpressions across
    /// monomials are computed once per point.
    pub fn compile(&self) -> CompiledForm {
        let mut builder = crate::expr::TapeBuilder::new();
        let slots: Vec<(Vec<Generator>, usize)> = self
            .terms()
            .map(|(m, c)| (m.clone(), builder.push(c)))
            .collect();
        CompiledForm {
            tape: builder.finish(),
            slots,
        }
    }

    pub fn parse(ambient: Ambient, text: &str) -> Result<Form, FormError> {
        let mut out = Form::zero(ambient);
        let body = text.trim();
        if body == "0" || body.is_empty() {
            return Ok(out);
        }
        for (lineno, line) in body.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let line = line.strip_prefix('+').unwrap_or(line).trim();
            let mut pieces = line.split(['^', '∧']);
            let coeff_text = pieces
                .next()
                .ok_or_else(|| FormError::Parse(format!("line {}: empty term", lineno + 1)))?;
            let coeff = Expr::parse(coeff_text.trim())?;
            let mut monomial = Form::scalar(ambient, coeff);
            for p in pieces {
                let name = p.trim();
                let g = Generator::from_name(name).ok_or_else(|| {
                    FormError::Parse(format!("line {}: unknown generator {name:?}", lineno + 1))
                })?;
                monomial = monomial.wedge(&Form::gen_1(ambient, g)?)?;
            }
            out = out.add(&monomial)?;
        }
        Ok(out)
    }
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.terms().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "+ {}", c)?;
            for g in m {
                write!(f, " ^ {}", g.name())?;
            }
        }
        Ok(())
    }
}

/// A form with coefficients compiled to an evaluation tape.
pub struct CompiledForm {
    tape: crate::expr::Tape,
    slots: Vec<(Vec<Generator>, usize)>,
}

impl CompiledForm {
    pub fn eval(&self, at: &Assignment) -> Result<NumForm, ExprError> {
        let mut buf = Vec::new();
        self.eval_with(at, &mut buf)
    }

    /// Evaluation with a caller-owned scratch buffer (hot loops).
    pub fn eval_with(
        &self,
        at: &Assignment,
        buf: &mut Vec<Complex64>,
    ) -> Result<NumForm, ExprError> {
        self.tape.eval_into(at, buf)?;
        let mut out = NumForm::default();
        for (m, slot) in &self.slots {
            out.add_term(m.clone(), buf[*slot]);
        }
        Ok(out)
    }

    pub fn tape_len(&self) -> usize {
        self.tape.len()
    }

    /// Monomials with their tape output slots, in coefficient-push order.
    pub fn slots(&self) -> &[(Vec<Generator>, usize)] {
        &self.slots
    }

    /// Fill `buf` with tape values only; callers index via `slots()`.
    pub fn eval_raw(
        &self,
        at: &Assignment,
        buf: &mut Vec<Complex64>,
    ) -> Result<(), ExprError> {
        self.tape.eval_into(at, buf)
    }
}

/// Numeric snapshot of a form at a point: complex coefficient per monomial.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NumForm {
    terms: BTreeMap<Vec<Generator>, Complex64>,
}

impl NumForm {
    pub fn add_term(&mut self, monomial: Vec<Generator>, c: Complex64) {
        if c == Complex64::new(0.0, 0.0) {
            return;
        }
        match self.terms.entry(monomial) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if *e.get() == Complex64::new(0.0, 0.0) {
                    e.remove();
                }
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<Generator>, &Complex64)> {
        self.terms.iter()
    }

    pub fn coeff(&self, monomial: &[Generator]) -> Complex64 {
        self.terms.get(monomial).copied().unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn add(&self, other: &NumForm) -> NumForm {
        let mut out = self.clone();
        for (m, c) in other.terms() {
            out.add_term(m.clone(), *c);
        }
        out
    }

    pub fn sub(&self, other: &NumForm) -> NumForm {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, c: Complex64) -> NumForm {
        NumForm {
            terms: self.terms.iter().map(|(m, x)| (m.clone(), x * c)).collect(),
        }
    }

    pub fn norm_inf(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Rename generator spaces (dζ̄ ↦ dz̄ when comparing an integration-side
    /// form with its evaluation-side counterpart). Order-preserving per
    /// index, so no sign is introduced as long as only one space moves.
    pub fn relabel_space(&self, from: Space, to: Space) -> NumForm {
        let mut out = NumForm::default();
        for (m, c) in self.terms() {
            let mm: Vec<Generator> = m
                .iter()
                .map(|g| {
                    if g.space == from {
                        Generator { space: to, ..*g }
                    } else {
                        *g
                    }
                })
                .collect();
            let mut sorted = mm.clone();
            sorted.sort();
            debug_assert_eq!(sorted, mm, "relabel must preserve monomial order");
            out.add_term(mm, *c);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample;
    use num_complex::Complex64;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const AMB2: Ambient = Ambient::Flat { n: 2 };

    fn c64(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_one_form<R: Rng>(rng: &mut R, ambient: Ambient) -> Form {
        let mut f = Form::zero(ambient);
        for space in [Space::Zeta, Space::Z] {
            for i in 0..ambient.coords(space) {
                for kind in [GenKind::D, GenKind::DBar] {
                    if rng.gen_bool(0.6) {
                        let g = Generator { space, kind, index: i };
                        f = f
                            .add(&Form::gen_1(ambient, g).unwrap().scale(&sample::random_expr(rng, 1)))
                            .unwrap();
                    }
                }
            }
        }
        f
    }

    fn random_form<R: Rng>(rng: &mut R, ambient: Ambient, factors: usize) -> Form {
        let mut f = Form::scalar(ambient, sample::random_expr(rng, 1));
        for _ in 0..factors {
            f = f.wedge(&random_one_form(rng, ambient)).unwrap();
        }
        f
    }

    fn assert_forms_match(a: &Form, b: &Form, rng: &mut ChaCha8Rng, tol: f64) {
        for _ in 0..20 {
            let at = sample::random_assignment(rng, 2);
            let (na, nb) = match (a.eval(&at), b.eval(&at)) {
                (Ok(x), Ok(y)) => (x, y),
                _ => continue,
            };
            let diff = na.sub(&nb).norm_inf();
            let scale = na.norm_inf().max(nb.norm_inf()).max(1.0);
            assert!(diff / scale < tol, "forms differ by {diff}\nA: {a}\nB: {b}");
        }
    }

    #[test]
    fn wedge_sign_matches_permutation_parity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gens = [
            Generator::d(Space::Zeta, 0),
            Generator::dbar(Space::Zeta, 1),
            Generator::e(0),
            Generator::estar(1),
            Generator::d(Space::Z, 1),
            Generator::dbar(Space::Z, 0),
        ];
        for _ in 0..100 {
            let mut order: Vec<usize> = (0..gens.len()).collect();
            order.shuffle(&mut rng);
            let mut f = Form::one(AMB2);
            for &i in &order {
                f = f.wedge(&Form::gen_1(AMB2, gens[i]).unwrap()).unwrap();
            }
            // rank of each generator in canonical order
            let mut sorted_gens = gens.to_vec();
            sorted_gens.sort();
            let perm: Vec<usize> = order
                .iter()
                .map(|&i| sorted_gens.iter().position(|g| *g == gens[i]).unwrap())
                .collect();
            let want = permutation_parity(&perm);
            assert_eq!(f.num_terms(), 1);
            let (m, coeff) = f.terms().next().unwrap();
            assert_eq!(*m, sorted_gens);
            let at = Assignment::new();
            assert_eq!(coeff.eval(&at).unwrap(), c64(want as f64, 0.0));
        }
    }

    #[test]
    fn wedge_repeated_generator_vanishes() {
        let g = Form::gen_1(AMB2, Generator::d(Space::Zeta, 0)).unwrap();
        assert!(g.wedge(&g).unwrap().is_zero());
    }

    #[test]
    fn wedge_graded_commutativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let a = random_one_form(&mut rng, AMB2);
            let b = random_one_form(&mut rng, AMB2);
            // odd ∧ odd anticommutes
            let ab = a.wedge(&b).unwrap();
            let ba = b.wedge(&a).unwrap().scale_c(c64(-1.0, 0.0));
            assert_forms_match(&ab, &ba, &mut rng, 1e-12);
            // even (degree 2) commutes with odd
            let aa = a.wedge(&b).unwrap();
            let c = random_one_form(&mut rng, AMB2);
            let lhs = aa.wedge(&c).unwrap();
            let rhs = c.wedge(&aa).unwrap();
            assert_forms_match(&lhs, &rhs, &mut rng, 1e-12);
        }
    }

    #[test]
    fn wedge_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let a = random_form(&mut rng, AMB2, 1);
            let b = random_form(&mut rng, AMB2, 2);
            let c = random_form(&mut rng, AMB2, 1);
            let lhs = a.wedge(&b).unwrap().wedge(&c).unwrap();
            let rhs = a.wedge(&b.wedge(&c).unwrap()).unwrap();
            assert_forms_match(&lhs, &rhs, &mut rng, 1e-12);
        }
    }

    #[test]
    fn dbar_squares_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let spaces = [Space::Zeta, Space::Z];
        for _ in 0..25 {
            let f = random_form(&mut rng, AMB2, 2);
            let ddf = f.dbar(&spaces).dbar(&spaces);
            let zero = Form::zero(AMB2);
            assert_forms_match(&ddf, &zero, &mut rng, 1e-10);
        }
    }

    #[test]
    fn dbar_leibniz() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let spaces = [Space::Zeta, Space::Z];
        for _ in 0..25 {
            // a homogeneous of odd degree 1, b arbitrary
            let a = random_one_form(&mut rng, AMB2);
            let b = random_form(&mut rng, AMB2, 2);
            let lhs = a.wedge(&b).unwrap().dbar(&spaces);
            let rhs = a
                .dbar(&spaces)
                .wedge(&b)
                .unwrap()
                .sub(&a.wedge(&b.dbar(&spaces)).unwrap())
                .unwrap();
            assert_forms_match(&lhs, &rhs, &mut rng, 1e-10);
        }
    }

    #[test]
    fn contraction_is_antiderivation() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        // δ maps e*ᵢ to ηᵢ = zᵢ − ζᵢ
        let eta: Vec<Expr> = (0..2)
            .map(|i| Expr::var(Space::Z, i) - Expr::var(Space::Zeta, i))
            .collect();
        let amb = AMB2;
        for _ in 0..25 {
            let mut a = random_one_form(&mut rng, amb);
            if rng.gen_bool(0.7) {
                a = a
                    .add(
                        &Form::gen_1(amb, Generator::estar(rng.gen_range(0..2)))
                            .unwrap()
                            .scale(&sample::random_expr(&mut rng, 1)),
                    )
                    .unwrap();
            }
            let mut b = random_form(&mut rng, amb, 1);
            b = b
                .wedge(
                    &Form::gen_1(amb, Generator::estar(rng.gen_range(0..2)))
                        .unwrap()
                        .add(&random_one_form(&mut rng, amb))
                        .unwrap(),
                )
                .unwrap();
            let lhs = a.wedge(&b).unwrap().contract_estar(&eta);
            let rhs = a
                .contract_estar(&eta)
                .wedge(&b)
                .unwrap()
                .sub(&a.wedge(&b.contract_estar(&eta)).unwrap())
                .unwrap();
            assert_forms_match(&lhs, &rhs, &mut rng, 1e-10);
        }
    }

    #[test]
    fn contraction_squares_to_zero_and_nabla_squares_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        // holomorphic contraction values so that δ∂̄ + ∂̄δ = 0
        let eta: Vec<Expr> = (0..2)
            .map(|i| {
                Expr::constant(c64(0.0, std::f64::consts::TAU))
                    * (Expr::var(Space::Z, i) - Expr::var(Space::Zeta, i))
            })
            .collect();
        let spaces = [Space::Zeta, Space::Z];
        for _ in 0..20 {
            let mut f = random_form(&mut rng, AMB2, 1);
            for i in 0..2 {
                if rng.gen_bool(0.6) {
                    f = f
                        .wedge(
                            &Form::gen_1(AMB2, Generator::estar(i))
                                .unwrap()
                                .add(&random_one_form(&mut rng, AMB2))
                                .unwrap(),
                        )
                        .unwrap();
                }
            }
            let dd = f.contract_estar(&eta).contract_estar(&eta);
            assert!(dd.is_zero() || {
                let zero = Form::zero(AMB2);
                assert_forms_match(&dd, &zero, &mut rng, 1e-10);
                true
            });
            let nabla = |x: &Form| {
                x.contract_estar(&eta)
                    .sub(&x.dbar(&spaces))
                    .unwrap()
            };
            let nn = nabla(&nabla(&f));
            let zero = Form::zero(AMB2);
            assert_forms_match(&nn, &zero, &mut rng, 1e-10);
        }
    }

    #[test]
    fn project_fiber_hand_cases() {
        let amb = AMB2;
        let e0 = Form::gen_1(amb, Generator::e(0)).unwrap();
        let e1 = Form::gen_1(amb, Generator::e(1)).unwrap();
        let s0 = Form::gen_1(amb, Generator::estar(0)).unwrap();
        let s1 = Form::gen_1(amb, Generator::estar(1)).unwrap();
        // interleaved volume comes back with coefficient +1
        let vol = e0
            .wedge(&s0)
            .unwrap()
            .wedge(&e1)
            .unwrap()
            .wedge(&s1)
            .unwrap();
        let p = vol.project_fiber(2);
        assert_eq!(p.num_terms(), 1);
        assert_eq!(p.coeff(&[]).eval(&Assignment::new()).unwrap(), c64(1.0, 0.0));
        // canonically sorted e0∧e1∧e*0∧e*1 is one transposition away
        let sorted = e0
            .wedge(&e1)
            .unwrap()
            .wedge(&s0)
            .unwrap()
            .wedge(&s1)
            .unwrap();
        let p = sorted.project_fiber(2);
        assert_eq!(p.coeff(&[]).eval(&Assignment::new()).unwrap(), c64(-1.0, 0.0));
        // missing one fiber generator projects to zero
        let partial = e0.wedge(&s0).unwrap().wedge(&e1).unwrap();
        assert!(partial.project_fiber(2).is_zero());
        // base differentials ride along: dζ0 ∧ vol ↦ dζ0
        let dz = Form::gen_1(amb, Generator::d(Space::Zeta, 0)).unwrap();
        let t = dz.wedge(&vol).unwrap();
        let p = t.project_fiber(2);
        assert_eq!(p.num_terms(), 1);
        let key = vec![Generator::d(Space::Zeta, 0)];
        assert_eq!(p.coeff(&key).eval(&Assignment::new()).unwrap(), c64(1.0, 0.0));
    }

    #[test]
    fn project_fiber_consistent_with_contraction_order() {
        // moving the volume through an odd generator costs one sign flip
        // per fiber generator (even count), so left and right placement agree
        let amb = AMB2;
        let mut vol = Form::one(amb);
        for i in 0..2 {
            vol = vol
                .wedge(&Form::gen_1(amb, Generator::e(i)).unwrap())
                .unwrap()
                .wedge(&Form::gen_1(amb, Generator::estar(i)).unwrap())
                .unwrap();
        }
        let dz = Form::gen_1(amb, Generator::d(Space::Z, 1)).unwrap();
        let left = vol.wedge(&dz).unwrap().project_fiber(2);
        let right = dz.wedge(&vol).unwrap().project_fiber(2);
        let at = Assignment::new();
        assert_eq!(
            left.coeff(&[Generator::d(Space::Z, 1)]).eval(&at).unwrap(),
            right.coeff(&[Generator::d(Space::Z, 1)]).eval(&at).unwrap()
        );
    }

    #[test]
    fn substitute_estar_reproduces_cauchy_kernel() {
        // flat n=1: u = e*/η with η = 2πi(z−ζ); substituting e* ↦ dz−dζ
        // must give the Cauchy kernel, whose dζ part is dζ/(2πi(ζ−z))
        let amb = Ambient::Flat { n: 1 };
        let tau_i = Expr::constant(c64(0.0, std::f64::consts::TAU));
        let eta = tau_i * (Expr::var(Space::Z, 0) - Expr::var(Space::Zeta, 0));
        let u = Form::gen_1(amb, Generator::estar(0))
            .unwrap()
            .div_scalar(&eta);
        let k = u
            .substitute(|g| {
                if g.kind == GenKind::EStar {
                    Some(
                        Form::gen_1(amb, Generator::d(Space::Z, g.index))
                            .unwrap()
                            .sub(&Form::gen_1(amb, Generator::d(Space::Zeta, g.index)).unwrap())
                            .unwrap(),
                    )
                } else {
                    None
                }
            })
            .unwrap();
        let at = Assignment::new()
            .with(Space::Zeta, vec![c64(0.5, 0.25)])
            .with(Space::Z, vec![c64(-0.25, 0.75)]);
        let num = k.eval(&at).unwrap();
        let zeta = c64(0.5, 0.25);
        let z = c64(-0.25, 0.75);
        let want = 1.0 / (c64(0.0, std::f64::consts::TAU) * (zeta - z));
        let got = num.coeff(&[Generator::d(Space::Zeta, 0)]);
        assert!((got - want).norm() < 1e-14);
        let got_z = num.coeff(&[Generator::d(Space::Z, 0)]);
        assert!((got_z + want).norm() < 1e-14);
    }

    #[test]
    fn pick_filters() {
        let amb = AMB2;
        let f = Form::gen_1(amb, Generator::d(Space::Z, 0))
            .unwrap()
            .wedge(&Form::gen_1(amb, Generator::dbar(Space::Z, 1)).unwrap())
            .unwrap()
            .add(&Form::gen_1(amb, Generator::estar(0)).unwrap())
            .unwrap();
        assert_eq!(f.pick_bidegree(Space::Z, 1, 1).num_terms(), 1);
        assert_eq!(f.pick_bidegree(Space::Z, 0, 0).num_terms(), 1);
        assert_eq!(f.pick_estar_degree(1).num_terms(), 1);
        assert_eq!(f.pick_estar_degree(0).num_terms(), 1);
        assert_eq!(f.pick_estar_degree(2).num_terms(), 0);
    }

    #[test]
    fn ambient_guards() {
        let f1 = Form::one(Ambient::Flat { n: 1 });
        let f2 = Form::one(AMB2);
        assert!(matches!(f1.add(&f2), Err(FormError::AmbientMismatch(..))));
        assert!(matches!(
            Form::gen_1(Ambient::Flat { n: 1 }, Generator::d(Space::Zeta, 1)),
            Err(FormError::RankExceeded { .. })
        ));
        assert!(matches!(
            Form::gen_1(Ambient::Product { n: 1, m: 1 }, Generator::e(0)),
            Err(FormError::RankExceeded { .. })
        ));
        // projective ambient has n+1 homogeneous coordinates
        assert!(Form::gen_1(Ambient::Projective { n: 1 }, Generator::d(Space::Zeta, 1)).is_ok());
    }

    #[test]
    fn dump_parse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..30 {
            let f = random_form(&mut rng, AMB2, 2);
            let text = f.to_string();
            let back = Form::parse(AMB2, &text).expect("parse form");
            assert_forms_match(&f, &back, &mut rng, 1e-12);
        }
        let zero = Form::zero(AMB2);
        assert!(Form::parse(AMB2, &zero.to_string()).unwrap().is_zero());
    }

    #[test]
    fn num_form_relabel() {
        let mut nf = NumForm::default();
        nf.add_term(vec![Generator::dbar(Space::Zeta, 0), Generator::dbar(Space::Zeta, 1)], c64(2.0, 1.0));
        let moved = nf.relabel_space(Space::Zeta, Space::Z);
        assert_eq!(
            moved.coeff(&[Generator::dbar(Space::Z, 0), Generator::dbar(Space::Z, 1)]),
            c64(2.0, 1.0)
        );
    }
}
