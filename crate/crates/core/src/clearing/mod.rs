//! Upper-layer clearing.
//!
//! Every market's best response is embedded into the feeder's branch-flow
//! program, the resulting mixed-integer cone program is solved by
//! branch-and-bound, and base prices are read back off the best responses.
//! Also hosts the no-sharing, local-sharing and global-sharing comparisons.

mod bnb;
mod embed;

use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bnb::{
    branch_and_bound, BnbFailure, BnbNode, BnbOutcome, BnbSettings, BnbStats, FixedSolution,
    Problem,
};
pub use embed::{EmbeddedMarket, PwlEmbedding, Segment};

use crate::bestresp::{invert_price, BestResponse, BestResponseError, PriceDomain, PwlError};
use crate::conic::{
    check_tightness, BranchState, ClarabelBackend, ConicBackend, ConicStatus, TightnessReport,
    TIGHTNESS_TOL,
};
use crate::model::{to_per_unit, LesmSpec, ModelError, NodeId, ValidatedCase};
use crate::oracle::{
    prosumer_cost, solve_no_sharing, verify_aggregates, verify_submarket, OracleError,
    ProsumerSolution, VerificationRecord, ENUMERATION_CAP,
};
use crate::tooling::SplitMix64;

/// Voltage band used when voltage limits are switched off.
pub const WIDE_VOLTAGE_BAND: (f64, f64) = (0.5, 1.5);
pub const VERIFY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ClearingError {
    #[error("per-unit conversion: {0}")]
    PerUnit(#[from] ModelError),
    #[error("best response of market at node {node}: {source}")]
    BestResponse {
        node: NodeId,
        #[source]
        source: BestResponseError,
    },
    #[error("embedding of market at node {node}: empty domain")]
    EmptyDomain { node: NodeId },
    #[error("market solve: no feasible segment choice (root relaxation {root:?}, {nodes} nodes explored)")]
    NoIncumbent { root: ConicStatus, nodes: usize },
    #[error(
        "market solve: node limit reached after {nodes} nodes without a feasible segment choice"
    )]
    NodeLimit { nodes: usize },
    #[error("price recovery at node {node}: {source}")]
    Recover {
        node: NodeId,
        #[source]
        source: PwlError,
    },
    #[error("verification oracle at node {node}: {source}")]
    Oracle {
        node: NodeId,
        #[source]
        source: OracleError,
    },
    #[error(
        "verification failed at node {node}: X residual {x_residual:e}, P residual {p_residual:e}"
    )]
    Verification {
        node: NodeId,
        x_residual: f64,
        p_residual: f64,
    },
    #[error("local clearing at node {node}: zero shared energy is outside [{lo}, {hi}]")]
    ZeroUnreachable { node: NodeId, lo: f64, hi: f64 },
}

#[derive(Clone)]
pub struct ClearOptions {
    /// Widen every voltage band to [`WIDE_VOLTAGE_BAND`].
    pub disable_voltage: bool,
    pub rel_gap: f64,
    /// Turn verification failures into errors.
    pub strict: bool,
    pub workers: usize,
    pub node_limit: usize,
    pub time_limit: Option<Duration>,
    pub verify_tol: f64,
    pub tightness_tol: f64,
    pub domain: PriceDomain,
    pub backend: Arc<dyn ConicBackend>,
}

impl Default for ClearOptions {
    fn default() -> Self {
        Self {
            disable_voltage: false,
            rel_gap: 1e-6,
            strict: false,
            workers: 1,
            node_limit: BnbSettings::default().node_limit,
            time_limit: None,
            verify_tol: VERIFY_TOL,
            tightness_tol: TIGHTNESS_TOL,
            domain: PriceDomain::default(),
            backend: Arc::new(ClarabelBackend::default()),
        }
    }
}

impl std::fmt::Debug for ClearOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClearOptions")
            .field("disable_voltage", &self.disable_voltage)
            .field("rel_gap", &self.rel_gap)
            .field("strict", &self.strict)
            .field("workers", &self.workers)
            .field("node_limit", &self.node_limit)
            .field("time_limit", &self.time_limit)
            .field("backend", &self.backend.name())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketOutcome {
    pub node_id: NodeId,
    pub w0_star: f64,
    pub w_star: f64,
    pub x_star_kw: f64,
    pub p_star_kw: f64,
    pub segment: usize,
    pub segments: usize,
    /// Prosumer decisions at `w0_star`, in kW.
    pub prosumers: Vec<ProsumerSolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeOutcome {
    pub id: NodeId,
    pub v_squared: f64,
    pub v_pu: f64,
    pub p_pu: f64,
    pub q_pu: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub best_response_ms: f64,
    pub solve_ms: f64,
    pub verification_ms: f64,
    pub total_ms: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub markets: Vec<MarketOutcome>,
    pub nodes: Vec<NodeOutcome>,
    /// Branch flows in p.u., oriented away from the slack.
    pub branches: Vec<BranchState>,
    /// Network losses in p.u.
    pub objective: f64,
    pub lower_bound: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
    pub bnb: BnbStats,
    pub tightness: TightnessReport,
    pub verification: Vec<VerificationRecord>,
    pub verification_passed: bool,
    pub warnings: Vec<String>,
    pub timings: Timings,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// `(w0*, w*)` at which a market's uncleared energy equals `x_star`.
pub fn recover_prices(br: &BestResponse, a: f64, x_star: f64) -> Result<(f64, f64), PwlError> {
    let w0 = invert_price(&br.x_of_w0, x_star)?;
    Ok((w0, w0 - a * x_star))
}

fn build_best_responses(
    lesms: &[LesmSpec],
    domain: PriceDomain,
    pool: &rayon::ThreadPool,
) -> Result<Vec<BestResponse>, ClearingError> {
    pool.install(|| {
        lesms
            .par_iter()
            .map(|m| {
                BestResponse::build(m, domain).map_err(|source| ClearingError::BestResponse {
                    node: m.node_id,
                    source,
                })
            })
            .collect()
    })
}

fn allocation(br: &BestResponse, lesm: &LesmSpec, w0: f64, scale: f64) -> Vec<ProsumerSolution> {
    br.allocation_at(lesm, w0)
        .into_iter()
        .map(|a| ProsumerSolution {
            x: a.x * scale,
            p: a.p * scale,
            p_plus: a.p_plus * scale,
            p_minus: a.p_minus * scale,
            mode: a.mode,
        })
        .collect()
}

/// Pick up to `ENUMERATION_CAP` distinct prosumers, deterministically per node.
fn sample_prosumers(node: NodeId, n: usize) -> Vec<usize> {
    let mut rng = SplitMix64::new(node ^ 0x005E_ED0F_C1EA);
    let mut idx: Vec<usize> = (0..n).collect();
    let k = ENUMERATION_CAP.min(n);
    for i in 0..k {
        let j = i + rng.below((n - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut out = idx[..k].to_vec();
    out.sort_unstable();
    out
}

/// Clear the two-layer market on `case`.
pub fn clear_market(
    case: &ValidatedCase,
    options: &ClearOptions,
) -> Result<ClearingResult, ClearingError> {
    let t0 = Instant::now();
    let workers = options.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    let mut pu = to_per_unit(case)?;
    if options.disable_voltage {
        pu = pu.with_voltage_band(WIDE_VOLTAGE_BAND.0, WIDE_VOLTAGE_BAND.1);
    }
    let base = pu.base_power();

    // (i) best responses
    let brs = build_best_responses(pu.lesms(), options.domain, &pool)?;
    let t_br = t0.elapsed();

    // (ii) embeddings
    let embeddings: Vec<PwlEmbedding> = brs
        .iter()
        .map(|br| {
            let e = PwlEmbedding::from_best_response(br);
            let finite = e
                .segments
                .iter()
                .all(|s| s.x_lo.is_finite() && s.x_hi.is_finite());
            if e.is_empty() || !finite {
                Err(ClearingError::EmptyDomain { node: br.node_id })
            } else {
                Ok(e)
            }
        })
        .collect::<Result<_, _>>()?;

    // (iii) mixed-integer solve
    let t1 = Instant::now();
    let problem = Problem::new(&pu, &embeddings, options.backend.as_ref());
    let settings = BnbSettings {
        rel_gap: options.rel_gap,
        node_limit: options.node_limit,
        time_limit: options.time_limit,
        workers,
        ..BnbSettings::default()
    };
    let outcome = branch_and_bound(&problem, &settings).map_err(|f| match f {
        BnbFailure::NoIncumbent {
            nodes,
            hit_limit: true,
            ..
        } => ClearingError::NodeLimit { nodes },
        BnbFailure::NoIncumbent { root, nodes, .. } => ClearingError::NoIncumbent { root, nodes },
    })?;
    let t_solve = t1.elapsed();
    let mut warnings = Vec::new();
    if outcome.hit_limit {
        warnings.push(format!(
            "branch-and-bound stopped at its limit with relative gap {:e}",
            outcome.rel_gap
        ));
    }
    let inc = &outcome.incumbent;

    // (iv) prices
    let mut markets = Vec::with_capacity(brs.len());
    for (k, (br, lesm)) in brs.iter().zip(pu.lesms()).enumerate() {
        let (x_star, p_star) = inc.markets[k];
        let (w0, w) =
            recover_prices(br, lesm.a, x_star).map_err(|source| ClearingError::Recover {
                node: lesm.node_id,
                source,
            })?;
        markets.push(MarketOutcome {
            node_id: lesm.node_id,
            w0_star: w0,
            w_star: w,
            x_star_kw: x_star * base,
            p_star_kw: p_star * base,
            segment: inc.segments[k],
            segments: embeddings[k].len(),
            prosumers: allocation(br, lesm, w0, base),
        });
    }

    // (v) verification
    let t2 = Instant::now();
    let verification: Vec<VerificationRecord> = pool.install(|| {
        brs.par_iter()
            .zip(pu.lesms())
            .enumerate()
            .map(|(k, (br, lesm))| {
                let (x_star, p_star) = inc.markets[k];
                let w0 = markets[k].w0_star;
                let res = if lesm.len() <= ENUMERATION_CAP {
                    verify_aggregates(lesm, w0, x_star, p_star, options.verify_tol)
                } else {
                    let alloc = allocation(br, lesm, w0, 1.0);
                    let sample = sample_prosumers(lesm.node_id, lesm.len());
                    verify_submarket(lesm, w0, &alloc, &sample, options.verify_tol)
                };
                res.map_err(|source| ClearingError::Oracle {
                    node: lesm.node_id,
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let t_verify = t2.elapsed();
    for r in verification.iter().filter(|r| !r.passed) {
        if options.strict {
            return Err(ClearingError::Verification {
                node: r.node_id,
                x_residual: r.x_residual,
                p_residual: r.p_residual,
            });
        }
        let msg = format!(
            "verification failed at node {}: X residual {:e}, P residual {:e}",
            r.node_id, r.x_residual, r.p_residual
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    // (vi) tightness
    let tightness = check_tightness(&inc.flow, &pu, options.tightness_tol);
    if !tightness.passed {
        let msg = format!(
            "relaxation not tight: max cone residual {:e}",
            tightness.max_residual
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    warnings.extend(tightness.warnings.iter().cloned());

    let nodes = inc
        .flow
        .nodes
        .iter()
        .map(|n| NodeOutcome {
            id: n.id,
            v_squared: n.v,
            v_pu: n.v.max(0.0).sqrt(),
            p_pu: n.p,
            q_pu: n.q,
        })
        .collect();
    Ok(ClearingResult {
        markets,
        nodes,
        branches: inc.flow.branches.clone(),
        objective: inc.objective,
        lower_bound: outcome.lower_bound,
        abs_gap: outcome.abs_gap,
        rel_gap: outcome.rel_gap,
        bnb: outcome.stats,
        tightness,
        verification_passed: verification.iter().all(|r| r.passed),
        verification,
        warnings,
        timings: Timings {
            best_response_ms: ms(t_br),
            solve_ms: ms(t_solve),
            verification_ms: ms(t_verify),
            total_ms: ms(t0.elapsed()),
            workers,
        },
    })
}

/// Outcome of clearing one market on its own, with no upper-layer trade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalClearing {
    pub w0: f64,
    /// Sharing price; equals `w0` since nothing is left uncleared.
    pub w: f64,
    pub prosumers: Vec<ProsumerSolution>,
    pub p: f64,
}

/// Clear a market in isolation: the base price at which `X = 0`.
pub fn clear_local_only(
    lesm: &LesmSpec,
    domain: PriceDomain,
) -> Result<LocalClearing, ClearingError> {
    let br = BestResponse::build(lesm, domain).map_err(|source| ClearingError::BestResponse {
        node: lesm.node_id,
        source,
    })?;
    let w0 = invert_price(&br.x_of_w0, 0.0).map_err(|e| match e {
        PwlError::OutOfRange { lo, hi, .. } => ClearingError::ZeroUnreachable {
            node: lesm.node_id,
            lo,
            hi,
        },
        source => ClearingError::Recover {
            node: lesm.node_id,
            source,
        },
    })?;
    let prosumers = allocation(&br, lesm, w0, 1.0);
    let p = prosumers.iter().map(|s| s.x + s.p_minus - s.p_plus).sum();
    Ok(LocalClearing {
        w0,
        w: w0,
        prosumers,
        p,
    })
}

/// Market configuration for cost comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConfigMode {
    #[serde(rename = "ns")]
    NoSharing,
    #[serde(rename = "ls")]
    LocalSharing,
    #[serde(rename = "gs")]
    GlobalSharing,
    #[serde(rename = "gs-nvc")]
    GlobalNoVoltage,
}

impl ConfigMode {
    pub const ALL: [ConfigMode; 4] = [
        ConfigMode::NoSharing,
        ConfigMode::LocalSharing,
        ConfigMode::GlobalSharing,
        ConfigMode::GlobalNoVoltage,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ConfigMode::NoSharing => "ns",
            ConfigMode::LocalSharing => "ls",
            ConfigMode::GlobalSharing => "gs",
            ConfigMode::GlobalNoVoltage => "gs-nvc",
        }
    }
}

impl std::fmt::Display for ConfigMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ConfigMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown configuration '{s}' (expected ns, ls, gs or gs-nvc)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsumerCost {
    pub node_id: NodeId,
    pub index: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub mode: ConfigMode,
    /// Total prosumer cost in $.
    pub total: f64,
    /// Total cost per kWh of absolute net load.
    pub average: f64,
    pub load_kwh: f64,
    pub per_prosumer: Vec<ProsumerCost>,
}

/// Prosumer costs under one market configuration, on the kW data of `case`.
pub fn run_config(
    case: &ValidatedCase,
    mode: ConfigMode,
    options: &ClearOptions,
) -> Result<CostReport, ClearingError> {
    let kw = case.case().to_kilowatt().lesms;

    let decisions: Vec<(Vec<ProsumerSolution>, f64)> = match mode {
        ConfigMode::NoSharing => kw
            .iter()
            .map(|m| {
                let sols = m
                    .prosumers
                    .iter()
                    .map(|p| solve_no_sharing(p, m.w_plus, m.w_minus))
                    .collect();
                (sols, 0.0)
            })
            .collect(),
        ConfigMode::LocalSharing => kw
            .iter()
            .map(|m| clear_local_only(m, options.domain).map(|l| (l.prosumers, l.w)))
            .collect::<Result<_, _>>()?,
        ConfigMode::GlobalSharing | ConfigMode::GlobalNoVoltage => {
            let opts = ClearOptions {
                disable_voltage: mode == ConfigMode::GlobalNoVoltage,
                ..options.clone()
            };
            let res = clear_market(case, &opts)?;
            res.markets
                .into_iter()
                .map(|m| (m.prosumers, m.w_star))
                .collect()
        }
    };

    let mut per_prosumer = Vec::new();
    let mut load = 0.0;
    for (m, (sols, w)) in kw.iter().zip(&decisions) {
        for (i, (s, p)) in sols.iter().zip(&m.prosumers).enumerate() {
            per_prosumer.push(ProsumerCost {
                node_id: m.node_id,
                index: i,
                cost: prosumer_cost(s, p, m.w_plus, m.w_minus, *w),
            });
            load += p.d.abs();
        }
    }
    let total: f64 = per_prosumer.iter().map(|c| c.cost).sum();
    Ok(CostReport {
        mode,
        total,
        average: if load > 0.0 { total / load } else { 0.0 },
        load_kwh: load,
        per_prosumer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::{validate_case, NetworkCase, ProsumerParams};

    fn single() -> LesmSpec {
        LesmSpec {
            node_id: 1,
            a: 1.0,
            w_plus: 0.2,
            w_minus: 0.05,
            prosumers: vec![ProsumerParams {
                c: 1.0,
                b: 1e-12,
                d: 0.0,
                p_max: 10.0,
            }],
        }
    }

    #[test]
    fn prices_from_best_response() {
        let br = BestResponse::build(&single(), PriceDomain::default()).unwrap();
        let (w0, w) = recover_prices(&br, 1.0, 0.1).unwrap();
        assert!((w0 - 0.3).abs() < 1e-9 && (w - 0.2).abs() < 1e-9);
        let (w0, w) = recover_prices(&br, 1.0, 0.0).unwrap();
        assert!((w0 - 0.05).abs() < 1e-9 && (w - 0.05).abs() < 1e-9);
    }

    #[test]
    fn local_clearing_single() {
        let l = clear_local_only(&single(), PriceDomain::default()).unwrap();
        assert!((l.w0 - 0.05).abs() < 1e-9);
        assert!(l.prosumers[0].x.abs() < 1e-12);
    }

    #[test]
    fn local_clearing_unreachable() {
        // two saturated buyers: X never climbs above Σγ = -2
        let mut lesm = single();
        lesm.prosumers = vec![
            ProsumerParams {
                c: 1.0,
                b: 0.01,
                d: 1.0,
                p_max: 0.0
            };
            2
        ];
        let r = clear_local_only(&lesm, PriceDomain::default());
        assert!(
            matches!(r, Err(ClearingError::ZeroUnreachable { .. })),
            "{r:?}"
        );
    }

    #[test]
    fn config_labels_round_trip() {
        for m in ConfigMode::ALL {
            assert_eq!(m.label().parse::<ConfigMode>().unwrap(), m);
        }
        assert!("xx".parse::<ConfigMode>().is_err());
    }

    fn mirrored_line() -> NetworkCase {
        let mut case = two_node();
        case.nodes.push(node(2, false));
        case.branches.push(branch(1, 2));
        let seller = ProsumerParams {
            c: 0.001,
            b: 0.02,
            d: -1.0,
            p_max: 5.0,
        };
        let buyer = ProsumerParams { d: 1.0, ..seller };
        case.lesms = vec![
            LesmSpec {
                node_id: 1,
                prosumers: vec![seller; 2],
                ..market(1)
            },
            LesmSpec {
                node_id: 2,
                prosumers: vec![buyer; 2],
                ..market(2)
            },
        ];
        case
    }

    #[test]
    fn mirrored_markets_cancel() {
        let case = validate_case(mirrored_line()).unwrap();
        let res = clear_market(&case, &ClearOptions::default()).unwrap();
        let (xa, xb) = (res.markets[0].x_star_kw, res.markets[1].x_star_kw);
        assert!((xa + xb).abs() < 1e-6 * 1000.0, "{xa} {xb}");
        assert!(res.verification_passed, "{:?}", res.verification);
        assert!(res.tightness.passed);
        assert!(res.rel_gap <= 1e-6);
        for m in &res.markets {
            assert!((m.w_star - (m.w0_star - 5e-3 * m.x_star_kw)).abs() < 1e-12);
        }
    }

    #[test]
    fn null_market_costs_nothing() {
        let mut case = two_node();
        case.lesms[0].prosumers = vec![ProsumerParams {
            c: 0.001,
            b: 0.01,
            d: 0.0,
            p_max: 0.0,
        }];
        let case = validate_case(case).unwrap();
        for mode in ConfigMode::ALL {
            let r = run_config(&case, mode, &ClearOptions::default()).unwrap();
            assert!(r.total.abs() < 1e-9, "{mode}: {}", r.total);
            let sum: f64 = r.per_prosumer.iter().map(|c| c.cost).sum();
            assert!((sum - r.total).abs() < 1e-9);
        }
    }

    #[test]
    fn infeasible_band_has_no_incumbent() {
        let mut case = mirrored_line();
        for n in &mut case.nodes[1..] {
            (n.v_min, n.v_max) = (1.0, 1.0);
            (n.q_min, n.q_max) = (0.0, 0.0);
        }
        // loads beyond capacity: the feeder must import, so voltage drops
        for m in &mut case.lesms {
            for p in &mut m.prosumers {
                p.d = 10.0;
            }
        }
        let case = validate_case(case).unwrap();
        let r = clear_market(&case, &ClearOptions::default());
        assert!(
            matches!(
                r,
                Err(ClearingError::NoIncumbent {
                    root: ConicStatus::Infeasible,
                    ..
                })
            ),
            "{r:?}"
        );
    }
}
