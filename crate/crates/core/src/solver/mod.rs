//! Convex QP backend with dual extraction.
//!
//! Lagrangian convention for every program:
//! `f(x) + y'(A x - b) + z'(G x - h) - l'(x - lo) + u'(x - hi)` with
//! `z, l, u >= 0`, so stationarity reads `grad f + A'y + G'z - l + u = 0`.
//! Disc constraints `u^2 + v^2 <= R^2` contribute a 2-vector per disc.

mod cones;
mod ipm;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use cones::{polygonalize_cones, CuttingPlaneBackend, PolygonBackend};
pub use ipm::solve_reference;

/// Sparse row `coeffs . x` compared against `rhs`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn new(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        LinearRow { coeffs, rhs }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

/// `x[u]^2 + x[v]^2 <= radius^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscConstraint {
    pub u: usize,
    pub v: usize,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConicProgram {
    pub n: usize,
    /// Objective terms `c * x[i] * x[j]`; the resulting form must be PSD.
    pub quadratic: Vec<(usize, usize, f64)>,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub equalities: Vec<LinearRow>,
    /// Rows `coeffs . x <= rhs`.
    pub inequalities: Vec<LinearRow>,
    pub discs: Vec<DiscConstraint>,
    /// Per-variable bounds; infinite entries are dropped.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConicProgram {
    pub fn new(n: usize) -> Self {
        ConicProgram {
            n,
            quadratic: Vec::new(),
            linear: vec![0.0; n],
            constant: 0.0,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            discs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let quad: f64 = self.quadratic.iter().map(|&(i, j, c)| c * x[i] * x[j]).sum();
        quad + self.linear.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + self.constant
    }

    /// Gradient of the objective at `x`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.linear.clone();
        for &(i, j, c) in &self.quadratic {
            g[i] += c * x[j];
            g[j] += c * x[i];
        }
        g
    }

    pub fn check(&self) -> Result<(), String> {
        let n = self.n;
        if self.linear.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err("objective or bound vectors do not match the variable count".into());
        }
        let in_range = |j: usize| j < n;
        if !self.quadratic.iter().all(|&(i, j, _)| in_range(i) && in_range(j)) {
            return Err("quadratic term references an unknown variable".into());
        }
        for row in self.equalities.iter().chain(&self.inequalities) {
            if !row.coeffs.iter().all(|&(j, _)| in_range(j)) {
                return Err("constraint row references an unknown variable".into());
            }
        }
        if !self.discs.iter().all(|d| in_range(d.u) && in_range(d.v) && d.radius >= 0.0) {
            return Err("invalid disc constraint".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    NumericalFailure,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::IterationLimit => "iteration-limit",
            Status::NumericalFailure => "numerical-failure",
        })
    }
}

/// Constraint named in an infeasibility certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintRef {
    Equality(usize),
    Inequality(usize),
    Bounds(usize),
    Disc(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: Status,
    pub x: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    /// Multiplier vector acting on `(x[u], x[v])` of each disc.
    pub disc_duals: Vec<[f64; 2]>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    /// Rows that cannot be satisfied simultaneously (infeasible status only).
    pub conflict: Vec<ConstraintRef>,
}

impl SolveResult {
    pub(crate) fn failed(status: Status, program: &ConicProgram, iterations: usize) -> Self {
        SolveResult {
            status,
            x: vec![0.0; program.n],
            eq_duals: vec![0.0; program.equalities.len()],
            ineq_duals: vec![0.0; program.inequalities.len()],
            lower_duals: vec![0.0; program.n],
            upper_duals: vec![0.0; program.n],
            disc_duals: vec![[0.0; 2]; program.discs.len()],
            objective: f64::NAN,
            dual_objective: f64::NAN,
            iterations,
            conflict: Vec::new(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative tolerance on primal/dual residuals and the duality gap.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { tol: 1e-7, max_iter: 200 }
    }
}

/// How disc constraints reach a backend without native cone support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SocMode {
    /// Exact disc via an outer-approximation cutting-plane loop.
    Native,
    /// Inscribed regular polygon with the given number of cuts.
    Polygon,
}

pub trait Backend: Sync {
    fn name(&self) -> &'static str;
    fn supports_discs(&self) -> bool;
    fn solve(&self, program: &ConicProgram) -> SolveResult;
}

/// Plain interior-point backend; rejects programs that still hold discs.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceBackend {
    pub tolerances: Tolerances,
}

impl Backend for ReferenceBackend {
    fn name(&self) -> &'static str {
        "reference-ipm"
    }

    fn supports_discs(&self) -> bool {
        false
    }

    fn solve(&self, program: &ConicProgram) -> SolveResult {
        if !program.discs.is_empty() {
            log::error!("reference backend called with {} disc constraints", program.discs.len());
            return SolveResult::failed(Status::NumericalFailure, program, 0);
        }
        solve_reference(program, &self.tolerances)
    }
}

/// Backend chosen from solver settings.
pub fn backend_for(mode: SocMode, cuts: usize, tolerances: Tolerances) -> Box<dyn Backend> {
    let inner = ReferenceBackend { tolerances };
    match mode {
        SocMode::Native => Box::new(CuttingPlaneBackend::new(inner)),
        SocMode::Polygon => Box::new(PolygonBackend { inner, cuts }),
    }
}
