use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use super::backend::{
    residuals, Certificate, ConicBackend, ConicSolution, ConicStatus, Residuals, OPTIMAL_TOL,
};
use super::program::{presolve, ConeProgram, VarKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClarabelOptions {
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub tol_feas: f64,
    pub max_iter: u32,
    pub time_limit: f64,
}

impl Default for ClarabelOptions {
    fn default() -> Self {
        Self {
            tol_gap_abs: 1e-10,
            tol_gap_rel: 1e-10,
            tol_feas: 1e-10,
            max_iter: 200,
            time_limit: f64::INFINITY,
        }
    }
}

/// Interior-point backend built on the `clarabel` crate.
///
/// Equality rows go to the zero cone, nonnegative variables to a
/// nonnegative cone, and each rotated cone `2uv ≥ ‖z‖²` to the second-order
/// cone `(u + v, u - v, √2·z)`.
#[derive(Debug, Clone, Default)]
pub struct ClarabelBackend {
    pub options: ClarabelOptions,
}

impl ClarabelBackend {
    pub fn new(options: ClarabelOptions) -> Self {
        Self { options }
    }
}

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn solve(&self, program: &ConeProgram) -> ConicSolution {
        let n = program.n_vars();
        let m0 = program.n_rows();
        let pre = presolve(program);
        if let Some(row) = pre.inconsistent {
            // 0 = b with b ≠ 0: the unit vector on that row is a certificate
            let mut y = vec![0.0; m0];
            y[row] = -program.rows[row].rhs.signum();
            return ConicSolution {
                status: ConicStatus::Infeasible,
                x: vec![0.0; n],
                y: y.clone(),
                objective: f64::NAN,
                residuals: Residuals::default(),
                iterations: 0,
                certificate: Some(Certificate::Farkas(y)),
            };
        }

        let (mut ii, mut jj, mut vv) = (Vec::new(), Vec::new(), Vec::new());
        let mut rhs = Vec::new();
        for (k, r) in pre.rows.iter().enumerate() {
            for &(j, a) in &r.terms {
                ii.push(k);
                jj.push(j);
                vv.push(a);
            }
            rhs.push(r.rhs);
        }
        let m_eq = pre.rows.len();
        let mut row = m_eq;
        let mut cones = Vec::new();
        if m_eq > 0 {
            cones.push(SupportedConeT::ZeroConeT(m_eq));
        }
        let nonneg: Vec<usize> = (0..n)
            .filter(|&j| program.kinds[j] == VarKind::Nonneg)
            .collect();
        for &j in &nonneg {
            ii.push(row);
            jj.push(j);
            vv.push(-1.0);
            rhs.push(0.0);
            row += 1;
        }
        if !nonneg.is_empty() {
            cones.push(SupportedConeT::NonnegativeConeT(nonneg.len()));
        }
        for c in &program.cones {
            for (j, s) in [(c.u, 1.0), (c.v, 1.0)] {
                ii.push(row);
                jj.push(j);
                vv.push(-s);
            }
            for (j, s) in [(c.u, 1.0), (c.v, -1.0)] {
                ii.push(row + 1);
                jj.push(j);
                vv.push(-s);
            }
            for (k, &j) in c.z.iter().enumerate() {
                ii.push(row + 2 + k);
                jj.push(j);
                vv.push(-std::f64::consts::SQRT_2);
            }
            let dim = 2 + c.z.len();
            rhs.extend(std::iter::repeat_n(0.0, dim));
            row += dim;
            cones.push(SupportedConeT::SecondOrderConeT(dim));
        }

        let a = CscMatrix::new_from_triplets(row, n, ii, jj, vv);
        let p = CscMatrix::zeros((n, n));
        let o = &self.options;
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_gap_abs(o.tol_gap_abs)
            .tol_gap_rel(o.tol_gap_rel)
            .tol_feas(o.tol_feas)
            .max_iter(o.max_iter)
            .time_limit(o.time_limit)
            .presolve_enable(false)
            .build()
            .expect("valid clarabel settings");
        let mut solver = match DefaultSolver::new(&p, &program.cost, &a, &rhs, &cones, settings) {
            Ok(s) => s,
            Err(e) => {
                log::error!("clarabel rejected the program: {e}");
                return ConicSolution {
                    status: ConicStatus::NumericalLimit,
                    x: vec![0.0; n],
                    y: vec![0.0; m0],
                    objective: f64::NAN,
                    residuals: Residuals::default(),
                    iterations: 0,
                    certificate: None,
                };
            }
        };
        solver.solve();
        let sol = &solver.solution;

        // clarabel's equality multipliers enter as +Aᵀz; ours as c - Aᵀy
        let mut y = vec![0.0; m0];
        for k in 0..m_eq {
            y[pre.origin[k]] = -sol.z[k] * pre.scale[k];
        }
        let x = sol.x.clone();
        let iterations = sol.iterations;
        match sol.status {
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                let cert: Vec<f64> = y.iter().map(|v| -v).collect();
                ConicSolution {
                    status: ConicStatus::Infeasible,
                    x,
                    y: cert.clone(),
                    objective: f64::INFINITY,
                    residuals: Residuals::default(),
                    iterations,
                    certificate: Some(Certificate::Farkas(cert)),
                }
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => ConicSolution {
                status: ConicStatus::Unbounded,
                x: x.clone(),
                y,
                objective: f64::NEG_INFINITY,
                residuals: Residuals::default(),
                iterations,
                certificate: Some(Certificate::Ray(x)),
            },
            status => {
                let res = residuals(program, &x, &y);
                let ok = matches!(status, SolverStatus::Solved | SolverStatus::AlmostSolved)
                    && res.max() <= OPTIMAL_TOL;
                if !ok {
                    log::debug!("clarabel status {status:?}, residuals {res:?}");
                }
                ConicSolution {
                    status: if ok {
                        ConicStatus::Optimal
                    } else {
                        ConicStatus::NumericalLimit
                    },
                    objective: program.objective(&x),
                    x,
                    y,
                    residuals: res,
                    iterations,
                    certificate: None,
                }
            }
        }
    }
}
