use serde::{Deserialize, Serialize};

use super::program::ConeProgram;

/// Relative residual bound required for [`ConicStatus::Optimal`].
pub const OPTIMAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConicStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The solver stopped without meeting the residual bounds; the best
    /// iterate is attached.
    NumericalLimit,
}

/// Relative residuals of a primal-dual pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `max(‖Ax - b‖∞, cone violation of x) / (1 + ‖b‖∞)`
    pub primal: f64,
    /// dual cone violation of `c - Aᵀy`, over `1 + ‖c‖∞`
    pub dual: f64,
    /// `|cᵀx - bᵀy| / (1 + |cᵀx| + |bᵀy|)`
    pub gap: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Certificate {
    /// `y` with `Aᵀy` in the dual cone and `bᵀy < 0`.
    Farkas(Vec<f64>),
    /// `x` in the cone with `Ax = 0` and `cᵀx < 0`.
    Ray(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub x: Vec<f64>,
    /// Equality multipliers, one per row of the original program.
    pub y: Vec<f64>,
    pub objective: f64,
    pub residuals: Residuals,
    pub iterations: u32,
    pub certificate: Option<Certificate>,
}

/// A solver for [`ConeProgram`]s.
///
/// Conforming backends return `Optimal` only when [`residuals`] is within
/// [`OPTIMAL_TOL`], attach a checkable certificate to `Infeasible` and
/// `Unbounded`, and are deterministic for a fixed program and settings.
pub trait ConicBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, program: &ConeProgram) -> ConicSolution;
}

fn inf_norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Residuals of `(x, y)` recomputed from the program data.
pub fn residuals(p: &ConeProgram, x: &[f64], y: &[f64]) -> Residuals {
    let b_norm = inf_norm(p.rows.iter().map(|r| r.rhs));
    let c_norm = inf_norm(p.cost.iter().copied());
    let eq = inf_norm(p.residual(x));
    let primal = eq.max(p.cone_violation(x, false)) / (1.0 + b_norm);
    let aty = p.at_y(y);
    let reduced: Vec<f64> = p.cost.iter().zip(&aty).map(|(c, a)| c - a).collect();
    let dual = p.cone_violation(&reduced, true) / (1.0 + c_norm);
    let pobj: f64 = p.cost.iter().zip(x).map(|(c, x)| c * x).sum();
    let dobj: f64 = p.rows.iter().zip(y).map(|(r, y)| r.rhs * y).sum();
    let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
    Residuals { primal, dual, gap }
}

/// Whether `y` proves `Ax = b, x ∈ K` infeasible, up to `tol` relative to `|bᵀy|`.
pub fn check_farkas(p: &ConeProgram, y: &[f64], tol: f64) -> bool {
    let by: f64 = p.rows.iter().zip(y).map(|(r, y)| r.rhs * y).sum();
    if !(by < 0.0) {
        return false;
    }
    let aty = p.at_y(y);
    p.cone_violation(&aty, true) <= tol * by.abs()
}

/// Whether `x` is an improving ray, up to `tol` relative to `|cᵀx|`.
pub fn check_ray(p: &ConeProgram, x: &[f64], tol: f64) -> bool {
    let cx: f64 = p.cost.iter().zip(x).map(|(c, x)| c * x).sum();
    if !(cx < 0.0) {
        return false;
    }
    let ax = p
        .rows
        .iter()
        .map(|r| r.terms.iter().map(|&(j, a)| a * x[j]).sum::<f64>());
    inf_norm(ax).max(p.cone_violation(x, false)) <= tol * cx.abs()
}
