//! Weighted Koppelman integral formulas, from symbols to numbers.
//!
//! The crate is layered bottom-up:
//!
//! * [`expr`] — scalar complex expressions with Wirtinger derivatives;
//! * [`form`] — exterior algebra over differentials and frame generators;
//! * [`kernel`] — construction of integral kernel pairs (K, P) on ℂⁿ, ℙⁿ
//!   and ℙⁿ×ℙᵐ, weighted and unweighted;
//! * [`quad`] — singularity-aware quadrature and evaluation of the
//!   representation formula term by term;
//! * [`cohomology`] — ∂̄-solvers and obstruction checks for line bundles;
//! * [`report`], [`cli`] — deterministic JSON/CSV reports and the thin
//!   command-line front end.
//!
//! Examples under `examples/` exercise one capability each and are the
//! intended entry point for reading the crate.

pub mod cli;
pub mod cohomology;
pub mod expr;
pub mod form;
pub mod kernel;
pub mod quad;
pub mod report;
pub mod sample;

pub use cohomology::{
    classify_pn, classify_product, solve_dbar, Case, CohomologyError, DbarOutcome, DbarSpace,
    DbarStatus, MechanismReport,
};
pub use expr::{Assignment, Expr, ExprError, Space, VarId};
pub use form::{Ambient, Form, FormError, GenKind, Generator, NumForm};
pub use kernel::{KernelError, KernelPair, Twist, WeightSpec};
pub use quad::{
    integrate, koppelman_eval, Domain, KoppelmanOptions, KoppelmanTerms, QuadError,
    QuadratureRule, RuleKind,
};
