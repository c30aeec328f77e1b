use std::collections::HashSet;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embed::{EmbeddedMarket, PwlEmbedding};
use crate::conic::{
    assemble_into, ConicBackend, ConicSolution, ConicStatus, FlowState, FlowVars, Injection,
    LinExpr, ProgramBuilder,
};
use crate::model::ValidatedCase;

/// Weight below which a relaxed binary counts as zero when branching.
const MASS_TOL: f64 = 1e-6;
/// Distance from the graph under which a relaxed market counts as integral.
const GRAPH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnbSettings {
    pub rel_gap: f64,
    pub abs_gap: f64,
    pub node_limit: usize,
    pub time_limit: Option<Duration>,
    pub workers: usize,
}

impl Default for BnbSettings {
    fn default() -> Self {
        Self {
            rel_gap: 1e-6,
            abs_gap: 1e-10,
            node_limit: 2_000,
            time_limit: None,
            workers: 1,
        }
    }
}

/// Open subproblem: the allowed contiguous segment range of every market.
#[derive(Debug, Clone, PartialEq)]
pub struct BnbNode {
    pub id: u64,
    pub ranges: Vec<(usize, usize)>,
    pub bound: f64,
    pub depth: usize,
}

impl BnbNode {
    /// Segments each market may not use in this subtree.
    pub fn excluded(&self, embeddings: &[PwlEmbedding]) -> Vec<Vec<usize>> {
        self.ranges
            .iter()
            .zip(embeddings)
            .map(|(&(lo, hi), e)| (0..e.len()).filter(|&k| k < lo || k > hi).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BnbStats {
    pub nodes: usize,
    pub max_depth: usize,
    pub incumbents: usize,
    pub numerical_limits: usize,
}

/// A solved program restricted to one segment per market.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedSolution {
    pub segments: Vec<usize>,
    pub objective: f64,
    /// `(X, P)` per market, in program units.
    pub markets: Vec<(f64, f64)>,
    pub flow: FlowState,
    pub solution: ConicSolution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbOutcome {
    pub incumbent: FixedSolution,
    pub lower_bound: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
    pub stats: BnbStats,
    /// Stopped on the node or time limit before closing the gap.
    pub hit_limit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BnbFailure {
    /// No segment fixing produced a feasible program.
    NoIncumbent {
        root: ConicStatus,
        nodes: usize,
        hit_limit: bool,
    },
}

/// The upper-layer program: feeder model, one embedding per market, and
/// shared energy summing to zero.
pub struct Problem<'a> {
    pub case: &'a ValidatedCase,
    pub embeddings: &'a [PwlEmbedding],
    /// Node index hosting each market.
    pub market_nodes: Vec<usize>,
    pub backend: &'a dyn ConicBackend,
}

struct Built {
    flow: FlowVars,
    markets: Vec<EmbeddedMarket>,
    solution: ConicSolution,
}

impl<'a> Problem<'a> {
    pub fn new(
        case: &'a ValidatedCase,
        embeddings: &'a [PwlEmbedding],
        backend: &'a dyn ConicBackend,
    ) -> Self {
        let market_nodes = case
            .lesms()
            .iter()
            .map(|m| case.index_of(m.node_id).expect("validated market node"))
            .collect();
        Self {
            case,
            embeddings,
            market_nodes,
            backend,
        }
    }

    pub fn root_ranges(&self) -> Vec<(usize, usize)> {
        self.embeddings.iter().map(|e| (0, e.len() - 1)).collect()
    }

    fn solve_ranges(&self, ranges: &[(usize, usize)]) -> Built {
        let mut b = ProgramBuilder::new();
        let mut inj = vec![Injection::Fixed(0.0); self.case.node_count()];
        for &j in &self.market_nodes {
            inj[j] = Injection::Free;
        }
        let flow = assemble_into(&mut b, self.case, &inj);
        let mut total = LinExpr::default();
        let markets: Vec<EmbeddedMarket> = self
            .embeddings
            .iter()
            .zip(ranges)
            .zip(&self.market_nodes)
            .map(|((e, &(lo, hi)), &j)| {
                let m = e.add_to(&mut b, lo, hi);
                b.add_eq(flow.p[j].clone(), m.p.clone());
                total += m.x.clone();
                m
            })
            .collect();
        if !markets.is_empty() {
            b.add_eq(total, LinExpr::constant(0.0));
        }
        let program = b.build();
        let solution = self.backend.solve(&program);
        Built {
            flow,
            markets,
            solution,
        }
    }

    /// Solve with every market pinned to one segment.
    pub fn solve_fixed(&self, segments: &[usize]) -> Option<FixedSolution> {
        let ranges: Vec<(usize, usize)> = segments.iter().map(|&k| (k, k)).collect();
        let built = self.solve_ranges(&ranges);
        if built.solution.status != ConicStatus::Optimal {
            return None;
        }
        let x = &built.solution.x;
        Some(FixedSolution {
            segments: segments.to_vec(),
            objective: built.solution.objective,
            markets: built
                .markets
                .iter()
                .map(|m| (m.x.eval(x), m.p.eval(x)))
                .collect(),
            flow: built.flow.extract(self.case, x),
            solution: built.solution,
        })
    }
}

/// What processing one node produced.
struct NodeResult {
    status: ConicStatus,
    objective: f64,
    /// Split for branching, if the relaxation is fractional.
    branch: Option<(usize, usize)>,
    /// Segment choice nearest the relaxed point, to try as an incumbent.
    fix: Vec<usize>,
}

fn process(problem: &Problem, node: &BnbNode) -> NodeResult {
    let built = problem.solve_ranges(&node.ranges);
    let sol = &built.solution;
    if !matches!(
        sol.status,
        ConicStatus::Optimal | ConicStatus::NumericalLimit
    ) {
        return NodeResult {
            status: sol.status,
            objective: f64::INFINITY,
            branch: None,
            fix: Vec::new(),
        };
    }
    let x = &sol.x;
    let mut fix = Vec::with_capacity(built.markets.len());
    let mut best_branch: Option<(f64, usize, usize)> = None;
    for (k, (m, emb)) in built.markets.iter().zip(problem.embeddings).enumerate() {
        let (lo, hi) = node.ranges[k];
        let xv = m.x.eval(x);
        let pv = m.p.eval(x);
        let z: Vec<f64> = m.binaries.iter().map(|&i| x[i]).collect();
        // segment holding X, preferring the one with more weight on ties
        let holding = emb.segments_containing(xv, lo, hi, 1e-9);
        let seg = holding
            .iter()
            .copied()
            .max_by(|&a, &b| z[a - lo].total_cmp(&z[b - lo]).then(b.cmp(&a)))
            .unwrap_or_else(|| lo + argmax(&z));
        fix.push(seg);

        let on_graph = emb
            .graph_at(xv)
            .is_some_and(|g| (g - pv).abs() <= GRAPH_TOL * (1.0 + pv.abs()));
        let used: Vec<usize> = (lo..=hi).filter(|&s| z[s - lo] > MASS_TOL).collect();
        let (smin, smax) = match (used.first(), used.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => (seg, seg),
        };
        if on_graph || smin == smax {
            continue;
        }
        // both children must drop some weighted segment
        let s = seg.clamp(smin, smax);
        let split = if s < smax { s } else { s - 1 };
        let frac = 1.0 - z.iter().copied().fold(0.0, f64::max);
        if best_branch.is_none_or(|(f, _, _)| frac > f) {
            best_branch = Some((frac, k, split));
        }
    }
    NodeResult {
        status: sol.status,
        objective: sol.objective,
        branch: best_branch.map(|(_, k, s)| (k, s)),
        fix,
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn gap_tol(settings: &BnbSettings, ub: f64) -> f64 {
    if !ub.is_finite() {
        return 0.0;
    }
    settings.abs_gap.max(settings.rel_gap * ub.abs())
}

fn rel_gap(ub: f64, lb: f64) -> f64 {
    ((ub - lb) / ub.abs().max(1e-10)).max(0.0)
}

/// Best-bound branch-and-bound over segment choices.
pub fn branch_and_bound(
    problem: &Problem,
    settings: &BnbSettings,
) -> Result<BnbOutcome, BnbFailure> {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers.max(1))
        .build()
        .expect("thread pool");
    let mut open = vec![BnbNode {
        id: 0,
        ranges: problem.root_ranges(),
        bound: f64::NEG_INFINITY,
        depth: 0,
    }];
    let mut next_id = 1u64;
    let mut stats = BnbStats::default();
    let mut incumbent: Option<FixedSolution> = None;
    let mut root_status = None;
    let mut hit_limit = false;
    let mut tried: HashSet<Vec<usize>> = HashSet::new();

    while !open.is_empty() {
        let ub = incumbent.as_ref().map_or(f64::INFINITY, |i| i.objective);
        open.retain(|n| n.bound < ub - gap_tol(settings, ub));
        if open.is_empty() {
            break;
        }
        open.sort_by(|a, b| a.bound.total_cmp(&b.bound).then(a.id.cmp(&b.id)));
        let lb = open[0].bound;
        if ub.is_finite() && (ub - lb <= settings.abs_gap || rel_gap(ub, lb) <= settings.rel_gap) {
            break;
        }
        if stats.nodes >= settings.node_limit
            || settings.time_limit.is_some_and(|t| start.elapsed() >= t)
        {
            hit_limit = true;
            break;
        }
        let take = settings
            .workers
            .max(1)
            .min(open.len())
            .min(settings.node_limit - stats.nodes);
        let batch: Vec<BnbNode> = open.drain(..take).collect();
        let results: Vec<NodeResult> =
            pool.install(|| batch.par_iter().map(|n| process(problem, n)).collect());
        // each segment choice is solved once
        let mut fresh: Vec<Vec<usize>> = Vec::new();
        for r in &results {
            if !r.fix.is_empty() && tried.insert(r.fix.clone()) {
                fresh.push(r.fix.clone());
            }
        }
        let candidates: Vec<Option<FixedSolution>> =
            pool.install(|| fresh.par_iter().map(|f| problem.solve_fixed(f)).collect());
        for inc in candidates.into_iter().flatten() {
            if incumbent
                .as_ref()
                .is_none_or(|i| inc.objective < i.objective)
            {
                log::debug!("incumbent {}", inc.objective);
                stats.incumbents += 1;
                incumbent = Some(inc);
            }
        }

        for (node, res) in batch.into_iter().zip(results) {
            stats.nodes += 1;
            stats.max_depth = stats.max_depth.max(node.depth);
            root_status.get_or_insert(res.status);
            if res.status == ConicStatus::NumericalLimit {
                stats.numerical_limits += 1;
            }
            if !matches!(
                res.status,
                ConicStatus::Optimal | ConicStatus::NumericalLimit
            ) {
                continue;
            }
            // an inexact relaxation value is not a safe bound
            let bound = if res.status == ConicStatus::Optimal {
                node.bound.max(res.objective)
            } else {
                node.bound
            };
            let ub = incumbent.as_ref().map_or(f64::INFINITY, |i| i.objective);
            if bound >= ub - gap_tol(settings, ub) {
                continue;
            }
            let Some((k, split)) = res.branch else {
                continue;
            };
            let (lo, hi) = node.ranges[k];
            for range in [(lo, split), (split + 1, hi)] {
                let mut ranges = node.ranges.clone();
                ranges[k] = range;
                open.push(BnbNode {
                    id: next_id,
                    ranges,
                    bound,
                    depth: node.depth + 1,
                });
                next_id += 1;
            }
        }
    }

    let Some(incumbent) = incumbent else {
        return Err(BnbFailure::NoIncumbent {
            root: root_status.unwrap_or(ConicStatus::NumericalLimit),
            nodes: stats.nodes,
            hit_limit,
        });
    };
    let ub = incumbent.objective;
    let lb = open.iter().map(|n| n.bound).fold(ub, f64::min);
    Ok(BnbOutcome {
        lower_bound: lb,
        abs_gap: (ub - lb).max(0.0),
        rel_gap: rel_gap(ub, lb),
        incumbent,
        stats,
        hit_limit,
    })
}
