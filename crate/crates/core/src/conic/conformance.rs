//! Probes every [`ConicBackend`] must pass.

use super::backend::{
    check_farkas, check_ray, Certificate, ConicBackend, ConicStatus, OPTIMAL_TOL,
};
use super::program::{ConeProgram, LinExpr, ProgramBuilder};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// `min u + v` with `2uv ≥ z²`, `z = 1`: optimum `√2` at `u = v = 1/√2`.
pub fn feasible_probe() -> ConeProgram {
    let mut b = ProgramBuilder::new();
    let c = b.rotated(1);
    b.add_eq(LinExpr::var(c.z[0]), LinExpr::constant(1.0));
    b.add_cost(&(LinExpr::var(c.u) + LinExpr::var(c.v)));
    b.build()
}

/// `x ≥ 0`, `y ≥ 0`, `x + y = -1`.
pub fn infeasible_probe() -> ConeProgram {
    let mut b = ProgramBuilder::new();
    let x = b.nonneg();
    let y = b.nonneg();
    b.add_eq(LinExpr::var(x) + LinExpr::var(y), LinExpr::constant(-1.0));
    b.build()
}

/// `min -x` with `x - y = 0`, `x, y ≥ 0`.
pub fn unbounded_probe() -> ConeProgram {
    let mut b = ProgramBuilder::new();
    let x = b.nonneg();
    let y = b.nonneg();
    b.add_eq(LinExpr::var(x) - LinExpr::var(y), LinExpr::constant(0.0));
    b.add_cost(&LinExpr::term(x, -1.0));
    b.build()
}

/// A row reading `0 = 1` after fixed variables are folded into constants.
pub fn inconsistent_probe() -> ConeProgram {
    let mut b = ProgramBuilder::new();
    let x = b.free();
    let fixed = b.bounded(2.0, 2.0);
    b.add_eq(fixed, LinExpr::constant(3.0));
    b.add_cost(&LinExpr::var(x));
    b.build()
}

pub fn run(backend: &dyn ConicBackend) -> Vec<ProbeResult> {
    let mut out = Vec::new();

    let p = feasible_probe();
    let s = backend.solve(&p);
    let target = std::f64::consts::SQRT_2;
    out.push(ProbeResult {
        name: "feasible",
        passed: s.status == ConicStatus::Optimal
            && (s.objective - target).abs() <= 1e-7
            && s.residuals.max() <= OPTIMAL_TOL
            && backend.solve(&p) == s,
        detail: format!(
            "{:?}, objective {}, residuals {:?}",
            s.status, s.objective, s.residuals
        ),
    });

    for (name, p) in [
        ("infeasible", infeasible_probe()),
        ("inconsistent", inconsistent_probe()),
    ] {
        let s = backend.solve(&p);
        let cert = match &s.certificate {
            Some(Certificate::Farkas(y)) => check_farkas(&p, y, 1e-6),
            _ => false,
        };
        out.push(ProbeResult {
            name,
            passed: s.status == ConicStatus::Infeasible && cert,
            detail: format!("{:?}, certificate valid: {cert}", s.status),
        });
    }

    let p = unbounded_probe();
    let s = backend.solve(&p);
    let cert = match &s.certificate {
        Some(Certificate::Ray(x)) => check_ray(&p, x, 1e-6),
        _ => false,
    };
    out.push(ProbeResult {
        name: "unbounded",
        passed: s.status == ConicStatus::Unbounded && cert,
        detail: format!("{:?}, certificate valid: {cert}", s.status),
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::ClarabelBackend;

    #[test]
    fn clarabel_conforms() {
        for r in run(&ClarabelBackend::default()) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
