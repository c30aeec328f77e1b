//! Second-order cone programs over a radial feeder.
//!
//! [`program`] holds a minimal standard form with a builder, [`backend`]
//! the solver contract, and [`flow`] the branch-flow relaxation with its
//! exactness check. [`ClarabelBackend`] is the shipped solver.

mod backend;
mod clarabel_backend;
pub mod conformance;
mod flow;
mod program;

pub use backend::{
    check_farkas, check_ray, residuals, Certificate, ConicBackend, ConicSolution, ConicStatus,
    Residuals, OPTIMAL_TOL,
};
pub use clarabel_backend::{ClarabelBackend, ClarabelOptions};
pub use flow::{
    assemble_into, assemble_socp, check_tightness, BranchState, BranchTightness, FlowState,
    FlowVars, Injection, NodeState, TightnessReport, BINDING_TOL, TIGHTNESS_TOL,
};
pub use program::{
    presolve, ConeProgram, LinExpr, Presolved, ProgramBuilder, RotatedCone, SparseRow, VarKind,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::{validate_case, ValidatedCase};

    fn two_bus() -> ValidatedCase {
        let mut case = two_node();
        case.lesms.clear();
        validate_case(case).unwrap()
    }

    /// l = (0.5 + r·l)² by fixed-point iteration, with zero reactive flow.
    fn two_bus_reference() -> (f64, f64) {
        let mut l = 0.0;
        for _ in 0..200 {
            l = (0.5f64 + 0.01 * l).powi(2);
        }
        let p = 0.5 + 0.01 * l;
        let v = 1.0 - 2.0 * 0.01 * p + (0.01f64.powi(2) + 0.02f64.powi(2)) * l;
        (l, v)
    }

    fn solve(case: &ValidatedCase, inj: &[Injection]) -> (ConicSolution, FlowState) {
        let (prog, vars) = assemble_socp(case, inj);
        let sol = ClarabelBackend::default().solve(&prog);
        let state = vars.extract(case, &sol.x);
        (sol, state)
    }

    #[test]
    fn zero_injection() {
        let case = two_bus();
        let (sol, state) = solve(&case, &[Injection::Free, Injection::Fixed(0.0)]);
        assert_eq!(sol.status, ConicStatus::Optimal);
        assert!(sol.objective.abs() < 1e-8);
        for n in &state.nodes {
            assert!((n.v - 1.0).abs() < 1e-6);
        }
        assert!(state.branches[0].l.abs() < 1e-8);
        let report = check_tightness(&state, &case, TIGHTNESS_TOL);
        assert!(report.passed && report.max_residual.abs() < 1e-8);
    }

    #[test]
    fn two_bus_matches_fixed_point() {
        let case = two_bus();
        let (sol, state) = solve(&case, &[Injection::Free, Injection::Fixed(-0.5)]);
        assert_eq!(sol.status, ConicStatus::Optimal);
        let (l, v) = two_bus_reference();
        assert!((l - 0.25254).abs() < 1e-5);
        assert!((state.branches[0].l - l).abs() < 1e-6);
        // losses are quadratic in the reactive flow around its optimum, so the
        // solver pins Q, and with it v, only to about the root of its gap
        assert!((state.nodes[1].v - v).abs() < 1e-5);
        assert!((sol.objective - 0.01 * l).abs() < 1e-6);
        assert!((v - 0.99008).abs() < 1e-5);
        let report = check_tightness(&state, &case, TIGHTNESS_TOL);
        assert!(report.passed, "{report:?}");
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn inflated_current_fails_tightness() {
        let case = two_bus();
        let (_, mut state) = solve(&case, &[Injection::Free, Injection::Fixed(-0.5)]);
        state.branches[0].l += 0.1;
        let report = check_tightness(&state, &case, TIGHTNESS_TOL);
        assert!(!report.passed);
        assert!((report.max_residual - 0.1 * state.nodes[0].v).abs() < 1e-6);
    }

    #[test]
    fn pinned_voltage_is_infeasible() {
        let case = two_bus().with_voltage_band(1.0, 1.0);
        let (prog, _) = assemble_socp(&case, &[Injection::Free, Injection::Fixed(-0.5)]);
        let sol = ClarabelBackend::default().solve(&prog);
        assert_eq!(sol.status, ConicStatus::Infeasible);
        match sol.certificate {
            Some(Certificate::Farkas(ref y)) => assert!(check_farkas(&prog, y, 1e-6)),
            _ => panic!("missing certificate"),
        }
    }

    #[test]
    fn loss_identity_and_voltage_drop() {
        // slack - 1 - 2, with 3 hanging off 1
        let mut case = two_node();
        case.lesms.clear();
        case.nodes.push(node(2, false));
        case.nodes.push(node(3, false));
        case.branches.push(branch(1, 2));
        case.branches.push(branch(3, 1));
        let case = validate_case(case).unwrap();
        let inj = [
            Injection::Free,
            Injection::Fixed(-0.3),
            Injection::Fixed(0.4),
            Injection::Fixed(-0.6),
        ];
        let (sol, state) = solve(&case, &inj);
        assert_eq!(sol.status, ConicStatus::Optimal);
        let total: f64 = state.nodes.iter().map(|n| n.p).sum();
        assert!((total - state.losses).abs() < 1e-6);
        assert!(check_tightness(&state, &case, TIGHTNESS_TOL).passed);
        for (e, br) in state.branches.iter().enumerate() {
            let spec = &case.branches()[e];
            let i = case.index_of(br.from).unwrap();
            let j = case.index_of(br.to).unwrap();
            let vj = state.nodes[i].v - 2.0 * (spec.r * br.p + spec.x * br.q)
                + (spec.r * spec.r + spec.x * spec.x) * br.l;
            assert!((vj - state.nodes[j].v).abs() < 1e-7);
        }
        // branch 3 -> 1 is listed child first but flows parent to child
        assert_eq!((state.branches[2].from, state.branches[2].to), (1, 3));
    }

    #[test]
    fn debug_dump_shape() {
        let (prog, _) = assemble_socp(&two_bus(), &[Injection::Free, Injection::Fixed(-0.5)]);
        let dump = prog.debug_dump();
        assert_eq!(dump["n_vars"], prog.n_vars());
        assert_eq!(dump["cones"]["rotated"].as_array().unwrap().len(), 1);
    }
}
