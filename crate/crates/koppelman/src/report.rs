//! Machine-readable run reports: one JSON document per command plus an
//! optional CSV convergence trace. Serde writes struct fields in declaration
//! order and `NumForm` iterates a BTreeMap, so reports are byte-identical
//! across runs with the same seed and mesh.

use std::fs;
use std::io::{self, Write as _};
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::form::NumForm;
use crate::quad::{ConvergencePoint, KoppelmanTerms};

pub const SCHEMA: u32 = 1;

/// Complex scalar as `[re, im]`.
pub fn complex_pair(c: Complex64) -> [f64; 2] {
    [c.re, c.im]
}

/// JSON numbers must be finite; infinite residuals (a structurally empty
/// component has nothing to measure) are reported as null.
pub fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Representative scalar of a numeric form: the degree-0 coefficient when
/// present, otherwise the largest coefficient in monomial order (ties break
/// deterministically on the BTreeMap order), zero for the empty form.
pub fn term_value(nf: &NumForm) -> [f64; 2] {
    let scalar = nf.coeff(&[]);
    if scalar != Complex64::new(0.0, 0.0) {
        return complex_pair(scalar);
    }
    let mut best = Complex64::new(0.0, 0.0);
    for (_, c) in nf.terms() {
        if c.norm() > best.norm() {
            best = *c;
        }
    }
    complex_pair(best)
}

#[derive(Serialize)]
pub struct Terms {
    pub boundary: [f64; 2],
    pub dbar_phi: [f64; 2],
    pub dbar_z_potential: [f64; 2],
    pub p_term: [f64; 2],
}

impl Terms {
    pub fn from_eval(t: &KoppelmanTerms) -> Terms {
        Terms {
            boundary: term_value(&t.boundary_term),
            dbar_phi: term_value(&t.dbar_phi_term),
            dbar_z_potential: term_value(&t.dbar_z_term),
            p_term: term_value(&t.p_term),
        }
    }
}

/// Report for one representation-formula evaluation (verify-cauchy).
#[derive(Serialize)]
pub struct KoppelmanReport {
    pub schema: u32,
    pub command: String,
    pub kernel: String,
    pub z: [f64; 2],
    pub value: [f64; 2],
    pub expected: [f64; 2],
    pub terms: Terms,
    pub residual: f64,
    pub interior_max_residual: Option<f64>,
    pub tolerance: f64,
    pub mesh: usize,
    pub runtime_ms: u64,
    pub verdict: String,
}

/// Report for weight-axiom validation (verify-weight).
#[derive(Serialize)]
pub struct WeightReport {
    pub schema: u32,
    pub command: String,
    pub kind: String,
    pub space: String,
    pub points: usize,
    pub scalar_at_diagonal: [f64; 2],
    pub max_nabla_residual: f64,
    pub max_diagonal_defect: f64,
    pub nabla_tolerance: f64,
    pub diagonal_tolerance: f64,
    pub runtime_ms: u64,
    pub verdict: String,
}

#[derive(Serialize)]
pub struct SolveSample {
    pub point: Vec<[f64; 2]>,
    pub value: [f64; 2],
}

/// Report for a ∂̄-solve (solve-dbar).
#[derive(Serialize)]
pub struct SolveReport {
    pub schema: u32,
    pub command: String,
    pub space: String,
    pub p: usize,
    pub q: usize,
    pub r: i64,
    pub status: String,
    pub residual: f64,
    pub pairings: Vec<f64>,
    pub mesh: usize,
    pub samples: Vec<SolveSample>,
    pub runtime_ms: u64,
    pub verdict: String,
}

#[derive(Serialize)]
pub struct MechanismEntry {
    pub route: String,
    pub residual: Option<f64>,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct PairingEntry {
    pub section: String,
    pub value: [f64; 2],
}

/// Report for a cohomology-group verdict (cohomology).
#[derive(Serialize)]
pub struct CohomologyReport {
    pub schema: u32,
    pub command: String,
    pub space: String,
    pub p: usize,
    pub q: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l: Option<i64>,
    pub case: Option<String>,
    pub verdict: String,
    pub mechanism: Option<MechanismEntry>,
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cech_dimension: Option<usize>,
    pub pairings: Vec<PairingEntry>,
    pub runtime_ms: u64,
}

#[derive(Serialize)]
pub struct ComponentDump {
    pub part: String,
    /// z-bidegree slug, e.g. "z01" or "z01_zt10" on a product.
    pub bidegree: String,
    pub text: String,
}

/// Report for a kernel dump (dump-kernel).
#[derive(Serialize)]
pub struct KernelDump {
    pub schema: u32,
    pub command: String,
    pub space: String,
    pub kernel: String,
    pub components: Vec<ComponentDump>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub files: Option<Vec<String>>,
}

/// Write pretty JSON (stable two-space indentation, trailing newline) to the
/// given path, or to stdout when no path is set.
pub fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text),
        None => io::stdout().write_all(text.as_bytes()),
    }
}

/// CSV convergence trace with the fixed column set mesh,residual,runtime_ms.
/// Timings are zeroed unless requested so the bytes stay reproducible.
pub fn emit_trace_csv(points: &[ConvergencePoint], timings: bool, path: &Path) -> io::Result<()> {
    let mut text = String::from("mesh,residual,runtime_ms\n");
    for pt in points {
        let ms = if timings { pt.runtime_ms } else { 0 };
        text.push_str(&format!("{},{:e},{}\n", pt.parameter, pt.residual, ms));
    }
    fs::write(path, text)
}
