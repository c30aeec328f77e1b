//! Brute-force solver for a single lower-layer market.
//!
//! Enumerates every assignment of KKT regimes, solves the scalar linear
//! equation each assignment induces for the aggregate, and keeps the first
//! assignment whose primal bounds and dual signs all hold. The regime
//! formulas are written out here on purpose instead of being shared with
//! [`crate::bestresp`], so the two can check each other.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bestresp::Mode;
use crate::model::{LesmSpec, ProsumerParams};

/// Largest market the enumeration accepts (4^8 assignments).
pub const ENUMERATION_CAP: usize = 8;
/// Absolute tolerance on every validity condition.
pub const VALIDITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("no regime assignment satisfies the optimality conditions at w0 = {w0}")]
    NoValidAssignment { w0: f64 },
    #[error("market has {n} prosumers, enumeration is capped at {cap}")]
    CapExceeded { n: usize, cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsumerSolution {
    pub x: f64,
    pub p: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    pub mode: Mode,
}

impl ProsumerSolution {
    pub const ZERO: ProsumerSolution = ProsumerSolution {
        x: 0.0,
        p: 0.0,
        p_plus: 0.0,
        p_minus: 0.0,
        mode: Mode::M1,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesmSolution {
    pub w0: f64,
    pub per_prosumer: Vec<ProsumerSolution>,
    /// Aggregate shared energy.
    #[serde(rename = "X")]
    pub x: f64,
    /// Aggregate grid exchange, positive when the market exports.
    #[serde(rename = "P")]
    pub p: f64,
    /// Realised sharing price.
    pub w: f64,
}

/// Candidate decision of one prosumer given its regime, as `x = s·X + t`.
struct Linear {
    s: f64,
    t: f64,
}

fn regime_linear(lesm: &LesmSpec, p: &ProsumerParams, mode: Mode, w0: f64) -> Linear {
    let a = lesm.a;
    match mode {
        // (c + a)x + aX = w0 - b - cD
        Mode::M1 => Linear {
            s: -a / (p.c + a),
            t: (w0 - p.b - p.c * p.d) / (p.c + a),
        },
        Mode::M2 => Linear {
            s: -1.0,
            t: (w0 - lesm.w_plus) / a,
        },
        Mode::M3 => Linear {
            s: -1.0,
            t: (w0 - lesm.w_minus) / a,
        },
        Mode::M4 => Linear {
            s: 0.0,
            t: p.p_max - p.d,
        },
    }
}

/// Full decision of a prosumer in `mode` given its share `x` and the
/// aggregate, or `None` if a bound or sign condition fails.
fn accept(
    lesm: &LesmSpec,
    p: &ProsumerParams,
    mode: Mode,
    x: f64,
    agg: f64,
    w0: f64,
) -> Option<ProsumerSolution> {
    let tol = VALIDITY_TOL;
    let lambda = w0 - lesm.a * (x + agg);
    let in_band = lambda >= lesm.w_minus - tol && lambda <= lesm.w_plus + tol;
    match mode {
        Mode::M1 => {
            let g = x + p.d;
            // marginal cost equals the balance price, generator strictly usable
            let ok = in_band && g >= -tol && g <= p.p_max + tol;
            ok.then_some(ProsumerSolution {
                x,
                p: g,
                p_plus: 0.0,
                p_minus: 0.0,
                mode,
            })
        }
        Mode::M2 => {
            let g = p.p_max.min((lesm.w_plus - p.b) / p.c).max(0.0);
            let buy = p.d + x - g;
            (buy >= -tol).then_some(ProsumerSolution {
                x,
                p: g,
                p_plus: buy.max(0.0),
                p_minus: 0.0,
                mode,
            })
        }
        Mode::M3 => {
            let g = p.p_max.min((lesm.w_minus - p.b) / p.c).max(0.0);
            let sell = g - p.d - x;
            (sell >= -tol).then_some(ProsumerSolution {
                x,
                p: g,
                p_plus: 0.0,
                p_minus: sell.max(0.0),
                mode,
            })
        }
        Mode::M4 => {
            // capacity multiplier: balance price minus marginal cost at capacity
            let mu = lambda - (p.c * p.p_max + p.b);
            let ok = in_band && mu >= -tol;
            ok.then_some(ProsumerSolution {
                x,
                p: p.p_max,
                p_plus: 0.0,
                p_minus: 0.0,
                mode,
            })
        }
    }
}

/// Equilibrium of one market at base price `w0`.
pub fn solve_lesm(lesm: &LesmSpec, w0: f64) -> Result<LesmSolution, OracleError> {
    let n = lesm.prosumers.len();
    if n > ENUMERATION_CAP {
        return Err(OracleError::CapExceeded {
            n,
            cap: ENUMERATION_CAP,
        });
    }
    let total = 1usize << (2 * n);
    let mut modes = vec![Mode::M1; n];
    'assign: for code in 0..total {
        // prosumer 0 is the most significant digit
        for (m, slot) in modes.iter_mut().enumerate() {
            let digit = (code >> (2 * (n - 1 - m))) & 3;
            *slot = Mode::ALL[digit];
        }
        let lin: Vec<Linear> = lesm
            .prosumers
            .iter()
            .zip(&modes)
            .map(|(p, &mode)| regime_linear(lesm, p, mode, w0))
            .collect();
        let s: f64 = lin.iter().map(|l| l.s).sum();
        let t: f64 = lin.iter().map(|l| l.t).sum();
        let agg = t / (1.0 - s);
        let mut out = Vec::with_capacity(n);
        for ((p, &mode), l) in lesm.prosumers.iter().zip(&modes).zip(&lin) {
            let x = l.s * agg + l.t;
            match accept(lesm, p, mode, x, agg, w0) {
                Some(sol) => out.push(sol),
                None => continue 'assign,
            }
        }
        return Ok(assemble(lesm, w0, out));
    }
    Err(OracleError::NoValidAssignment { w0 })
}

fn assemble(lesm: &LesmSpec, w0: f64, per_prosumer: Vec<ProsumerSolution>) -> LesmSolution {
    let x: f64 = per_prosumer.iter().map(|s| s.x).sum();
    let p: f64 = per_prosumer
        .iter()
        .map(|s| s.x + s.p_minus - s.p_plus)
        .sum();
    LesmSolution {
        w0,
        per_prosumer,
        x,
        p,
        w: w0 - lesm.a * x,
    }
}

/// Decision of a prosumer that trades only with the utility.
pub fn solve_no_sharing(p: &ProsumerParams, w_plus: f64, w_minus: f64) -> ProsumerSolution {
    let p_sell = p.p_max.min((w_minus - p.b) / p.c).max(0.0);
    let p_buy = p.p_max.min((w_plus - p.b) / p.c).max(0.0);
    let g = p.d.max(p_sell).min(p_buy);
    let net = g - p.d;
    let mode = if net > 0.0 {
        Mode::M3
    } else if net < 0.0 {
        Mode::M2
    } else if g >= p.p_max {
        Mode::M4
    } else {
        Mode::M1
    };
    ProsumerSolution {
        x: 0.0,
        p: g,
        p_plus: (-net).max(0.0),
        p_minus: net.max(0.0),
        mode,
    }
}

/// Cost of a prosumer's decision at realised sharing price `w`.
pub fn prosumer_cost(
    s: &ProsumerSolution,
    p: &ProsumerParams,
    w_plus: f64,
    w_minus: f64,
    w: f64,
) -> f64 {
    0.5 * p.c * s.p * s.p + p.b * s.p + w_plus * s.p_plus - w_minus * s.p_minus - w * s.x
}

/// Potential minimised by the market equilibrium at base price `w0`.
pub fn lesm_objective(lesm: &LesmSpec, w0: f64, sol: &[ProsumerSolution]) -> f64 {
    let mut total = 0.0;
    let mut agg = 0.0;
    for (s, p) in sol.iter().zip(&lesm.prosumers) {
        total += prosumer_cost(s, p, lesm.w_plus, lesm.w_minus, w0) + 0.5 * lesm.a * s.x * s.x;
        agg += s.x;
    }
    total + 0.5 * lesm.a * agg * agg
}

/// Outcome of checking a cleared market against the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    pub node_id: u64,
    pub w0: f64,
    pub x_star: f64,
    pub p_star: f64,
    pub x_oracle: f64,
    pub p_oracle: f64,
    pub x_residual: f64,
    pub p_residual: f64,
    pub passed: bool,
    /// Prosumers checked when the market is too large for full enumeration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled: Option<Vec<usize>>,
}

fn record(
    node_id: u64,
    w0: f64,
    star: (f64, f64),
    oracle: (f64, f64),
    tol: f64,
    sampled: Option<Vec<usize>>,
) -> VerificationRecord {
    let x_residual = (oracle.0 - star.0).abs();
    let p_residual = (oracle.1 - star.1).abs();
    VerificationRecord {
        node_id,
        w0,
        x_star: star.0,
        p_star: star.1,
        x_oracle: oracle.0,
        p_oracle: oracle.1,
        x_residual,
        p_residual,
        passed: x_residual <= tol * (1.0 + star.0.abs())
            && p_residual <= tol * (1.0 + star.1.abs()),
        sampled,
    }
}

/// Re-solve the market at `w0_star` and compare the aggregates.
pub fn verify_aggregates(
    lesm: &LesmSpec,
    w0_star: f64,
    x_star: f64,
    p_star: f64,
    tol: f64,
) -> Result<VerificationRecord, OracleError> {
    let sol = solve_lesm(lesm, w0_star)?;
    Ok(record(
        lesm.node_id,
        w0_star,
        (x_star, p_star),
        (sol.x, sol.p),
        tol,
        None,
    ))
}

/// Check a subset of a large market's allocation.
///
/// Holding the other prosumers' shares fixed, the sampled prosumers face the
/// effective base price `w0 - a·X_rest`, so their equilibrium is a smaller
/// market the oracle can solve. `allocation` holds every prosumer's claimed
/// decision; the record compares the subset's shared energy and grid exchange.
pub fn verify_submarket(
    lesm: &LesmSpec,
    w0_star: f64,
    allocation: &[ProsumerSolution],
    sample: &[usize],
    tol: f64,
) -> Result<VerificationRecord, OracleError> {
    let total: f64 = allocation.iter().map(|s| s.x).sum();
    let sub_x: f64 = sample.iter().map(|&m| allocation[m].x).sum();
    let sub_p: f64 = sample
        .iter()
        .map(|&m| allocation[m].x + allocation[m].p_minus - allocation[m].p_plus)
        .sum();
    let sub = LesmSpec {
        prosumers: sample.iter().map(|&m| lesm.prosumers[m]).collect(),
        ..lesm.clone()
    };
    let w0_eff = w0_star - lesm.a * (total - sub_x);
    let sol = solve_lesm(&sub, w0_eff)?;
    Ok(record(
        lesm.node_id,
        w0_star,
        (sub_x, sub_p),
        (sol.x, sol.p),
        tol,
        Some(sample.to_vec()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(p_max: f64) -> LesmSpec {
        LesmSpec {
            node_id: 1,
            a: 1.0,
            w_plus: 0.2,
            w_minus: 0.05,
            prosumers: vec![ProsumerParams {
                c: 1.0,
                b: 0.0,
                d: 0.0,
                p_max,
            }],
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + b.abs())
    }

    #[test]
    fn selling_regime() {
        let sol = solve_lesm(&single(10.0), 0.1).unwrap();
        let s = sol.per_prosumer[0];
        assert_eq!(s.mode, Mode::M3);
        assert!(
            close(s.x, 0.025) && close(s.p, 0.05) && close(s.p_minus, 0.025) && s.p_plus == 0.0
        );
        assert!(close(sol.x, 0.025) && close(sol.p, 0.05) && close(sol.w, 0.075));
        let cost = prosumer_cost(&s, &single(10.0).prosumers[0], 0.2, 0.05, sol.w);
        assert!(close(cost, -0.001875));
    }

    #[test]
    fn self_balanced_regime() {
        let sol = solve_lesm(&single(10.0), 0.3).unwrap();
        let s = sol.per_prosumer[0];
        assert_eq!(s.mode, Mode::M1);
        assert!(close(s.x, 0.1) && close(s.p, 0.1));
        assert_eq!((s.p_plus, s.p_minus), (0.0, 0.0));
    }

    #[test]
    fn sell_price_boundary() {
        let sol = solve_lesm(&single(10.0), 0.05).unwrap();
        let s = sol.per_prosumer[0];
        assert!(s.x.abs() < 1e-12 && close(s.p, 0.05) && close(s.p_minus, 0.05));
    }

    #[test]
    fn saturated_then_buying() {
        // p_max = 0.1: capacity from w0 = 0.3 until 0.4, then buying
        let lesm = single(0.1);
        let sol = solve_lesm(&lesm, 0.35).unwrap();
        assert_eq!(sol.per_prosumer[0].mode, Mode::M4);
        assert!(close(sol.x, 0.1));
        let sol = solve_lesm(&lesm, 0.5).unwrap();
        assert_eq!(sol.per_prosumer[0].mode, Mode::M2);
        assert!(close(sol.x, 0.15) && close(sol.per_prosumer[0].p_plus, 0.05));
    }

    #[test]
    fn cap_enforced() {
        let mut lesm = single(1.0);
        lesm.prosumers = vec![lesm.prosumers[0]; 9];
        assert_eq!(
            solve_lesm(&lesm, 0.1),
            Err(OracleError::CapExceeded { n: 9, cap: 8 })
        );
    }

    #[test]
    fn no_sharing_examples() {
        let p = ProsumerParams {
            c: 0.001,
            b: 0.01,
            d: 10.0,
            p_max: 40.0,
        };
        let s = solve_no_sharing(&p, 0.2, 0.05);
        assert!(close(s.p, 40.0) && close(s.p_minus, 30.0) && s.x == 0.0);

        let buyer = ProsumerParams {
            c: 1.0,
            b: 0.01,
            d: 5.0,
            p_max: 0.0,
        };
        let s = solve_no_sharing(&buyer, 0.2, 0.05);
        assert!(close(s.p_plus, 5.0));
        assert!(close(prosumer_cost(&s, &buyer, 0.2, 0.05, 0.0), 1.0));

        let seller = ProsumerParams { d: -5.0, ..buyer };
        let s = solve_no_sharing(&seller, 0.2, 0.05);
        assert!(close(s.p_minus, 5.0));
        assert!(close(prosumer_cost(&s, &seller, 0.2, 0.05, 0.0), -0.25));
    }

    #[test]
    fn no_sharing_matches_stiff_market() {
        let p = ProsumerParams {
            c: 0.001,
            b: 0.01,
            d: 10.0,
            p_max: 40.0,
        };
        let lesm = LesmSpec {
            a: 1e9,
            prosumers: vec![p],
            ..single(1.0)
        };
        let sol = solve_lesm(&lesm, 0.1).unwrap();
        let ns = solve_no_sharing(&p, 0.2, 0.05);
        assert!((sol.per_prosumer[0].p - ns.p).abs() < 1e-6);
        assert!((sol.per_prosumer[0].p_minus - ns.p_minus).abs() < 1e-6);
    }

    #[test]
    fn zero_cost() {
        let p = ProsumerParams {
            c: 1.0,
            b: 0.01,
            d: 0.0,
            p_max: 1.0,
        };
        assert_eq!(
            prosumer_cost(&ProsumerSolution::ZERO, &p, 0.2, 0.05, 0.1),
            0.0
        );
    }

    #[test]
    fn verification_records() {
        let lesm = single(10.0);
        let r = verify_aggregates(&lesm, 0.3, 0.1, 0.1, 1e-6).unwrap();
        assert!(r.passed);
        assert!(r.x_residual < 1e-15 && r.p_residual < 1e-15);
        let r = verify_aggregates(&lesm, 0.3, 0.1 + 1e-5, 0.1, 1e-6).unwrap();
        assert!(!r.passed);
        assert!((r.x_residual - 1e-5).abs() < 1e-12);
    }

    #[test]
    fn submarket_of_fixed_point_passes() {
        let lesm = LesmSpec {
            node_id: 2,
            a: 0.01,
            w_plus: 0.2,
            w_minus: 0.05,
            prosumers: vec![
                ProsumerParams {
                    c: 0.001,
                    b: 0.02,
                    d: 20.0,
                    p_max: 10.0,
                },
                ProsumerParams {
                    c: 0.0008,
                    b: 0.03,
                    d: -25.0,
                    p_max: 5.0,
                },
                ProsumerParams {
                    c: 0.0006,
                    b: 0.01,
                    d: 2.0,
                    p_max: 30.0,
                },
            ],
        };
        let full = solve_lesm(&lesm, 0.12).unwrap();
        let r = verify_submarket(&lesm, 0.12, &full.per_prosumer, &[0, 2], 1e-9).unwrap();
        assert!(r.passed, "{r:?}");
        let mut bad = full.per_prosumer.clone();
        bad[0].x += 1.0;
        assert!(
            !verify_submarket(&lesm, 0.12, &bad, &[0, 2], 1e-9)
                .unwrap()
                .passed
        );
    }

    fn market() -> impl Strategy<Value = LesmSpec> {
        let prosumer = (0.5e-3..1e-3f64, 0.01..0.05f64, -40.0..40.0f64, 0.0..40.0f64)
            .prop_map(|(c, b, d, p_max)| ProsumerParams { c, b, d, p_max });
        (proptest::collection::vec(prosumer, 1..=6), 2.5e-3..5e-3f64).prop_map(|(prosumers, a)| {
            let n = prosumers.len() as f64;
            LesmSpec {
                node_id: 1,
                a: a / n,
                w_plus: 0.2,
                w_minus: 0.05,
                prosumers,
            }
        })
    }

    fn check_invariants(lesm: &LesmSpec, sol: &LesmSolution) -> Result<(), TestCaseError> {
        for (s, p) in sol.per_prosumer.iter().zip(&lesm.prosumers) {
            prop_assert!(s.p >= 0.0 && s.p <= p.p_max + 1e-9);
            prop_assert!(s.p_plus >= 0.0 && s.p_minus >= 0.0);
            prop_assert!(
                (p.d + s.x + s.p_minus - s.p - s.p_plus).abs() <= 1e-9 * (1.0 + p.d.abs())
            );
            prop_assert!(s.p_plus * s.p_minus <= 1e-12);
        }
        Ok(())
    }

    /// All assignments that pass, to check there is only one solution.
    fn all_accepted(lesm: &LesmSpec, w0: f64) -> Vec<(f64, f64)> {
        let n = lesm.prosumers.len();
        let mut out = Vec::new();
        'assign: for code in 0..(1usize << (2 * n)) {
            let modes: Vec<Mode> = (0..n).map(|m| Mode::ALL[(code >> (2 * m)) & 3]).collect();
            let lin: Vec<Linear> = lesm
                .prosumers
                .iter()
                .zip(&modes)
                .map(|(p, &md)| regime_linear(lesm, p, md, w0))
                .collect();
            let agg =
                lin.iter().map(|l| l.t).sum::<f64>() / (1.0 - lin.iter().map(|l| l.s).sum::<f64>());
            let mut sols = Vec::new();
            for ((p, &md), l) in lesm.prosumers.iter().zip(&modes).zip(&lin) {
                match accept(lesm, p, md, l.s * agg + l.t, agg, w0) {
                    Some(s) => sols.push(s),
                    None => continue 'assign,
                }
            }
            let sol = assemble(lesm, w0, sols);
            out.push((sol.x, sol.p));
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn unique_and_consistent(lesm in market(), w0 in -0.5..1.0f64) {
            let sol = solve_lesm(&lesm, w0).unwrap();
            check_invariants(&lesm, &sol)?;
            let all = all_accepted(&lesm, w0);
            prop_assert!(!all.is_empty());
            for (x, p) in all {
                prop_assert!((x - sol.x).abs() <= 1e-9 * (1.0 + sol.x.abs()));
                prop_assert!((p - sol.p).abs() <= 1e-9 * (1.0 + sol.p.abs()));
            }
        }

        #[test]
        fn beats_random_feasible_points(lesm in market(), w0 in -0.5..1.0f64, seed in any::<u64>()) {
            let sol = solve_lesm(&lesm, w0).unwrap();
            let best = lesm_objective(&lesm, w0, &sol.per_prosumer);
            let mut rng = crate::tooling::SplitMix64::new(seed);
            for _ in 0..1000 {
                let pts: Vec<ProsumerSolution> = lesm
                    .prosumers
                    .iter()
                    .zip(&sol.per_prosumer)
                    .map(|(p, s)| {
                        let g = rng.uniform(0.0, p.p_max);
                        let x = s.x + rng.uniform(-50.0, 50.0);
                        let net = g - p.d - x;
                        ProsumerSolution { x, p: g, p_plus: (-net).max(0.0), p_minus: net.max(0.0), mode: Mode::M1 }
                    })
                    .collect();
                let obj = lesm_objective(&lesm, w0, &pts);
                prop_assert!(best <= obj + 1e-9 * (1.0 + obj.abs()));
            }
        }

        #[test]
        fn aggregate_nondecreasing(lesm in market(), start in -0.5..0.5f64, steps in proptest::collection::vec(0.0..0.05f64, 1..30)) {
            let mut w0 = start;
            let mut prev = solve_lesm(&lesm, w0).unwrap().x;
            for dw in steps {
                w0 += dw;
                let x = solve_lesm(&lesm, w0).unwrap().x;
                prop_assert!(x >= prev - 1e-9 * (1.0 + prev.abs()));
                prev = x;
            }
        }

        #[test]
        fn per_unit_cost_invariance(lesm in market(), w0 in 0.0..0.5f64, base in 10.0..5000.0f64) {
            let sol = solve_lesm(&lesm, w0).unwrap();
            let cost: f64 = sol.per_prosumer.iter().zip(&lesm.prosumers)
                .map(|(s, p)| prosumer_cost(s, p, lesm.w_plus, lesm.w_minus, sol.w)).sum();
            let pu = LesmSpec {
                a: lesm.a * base,
                prosumers: lesm.prosumers.iter().map(|p| ProsumerParams {
                    c: p.c * base, b: p.b, d: p.d / base, p_max: p.p_max / base,
                }).collect(),
                ..lesm.clone()
            };
            let sol_pu = solve_lesm(&pu, w0).unwrap();
            let cost_pu: f64 = sol_pu.per_prosumer.iter().zip(&pu.prosumers)
                .map(|(s, p)| prosumer_cost(s, p, pu.w_plus, pu.w_minus, sol_pu.w)).sum();
            prop_assert!((sol_pu.w - sol.w).abs() <= 1e-9);
            prop_assert!((base * cost_pu - cost).abs() <= 1e-7 * (1.0 + cost.abs()));
        }
    }
}
