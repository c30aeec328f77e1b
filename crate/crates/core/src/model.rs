//! Domain data for prosumers, lower-layer markets and the radial feeder.
//!
//! Everything here is plain immutable data. [`validate_case`] is the single
//! gate that establishes the invariants the rest of the crate relies on, and
//! hands back a [`ValidatedCase`] carrying the tree structure (parent map and
//! leaf-to-root order) derived from the branch list.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default power base used when a case file does not override it.
pub const DEFAULT_BASE_POWER_KW: f64 = 1000.0;

pub type NodeId = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("branch list contains a cycle (detected at branch {from} -> {to})")]
    CycleDetected { from: NodeId, to: NodeId },
    #[error("node {0} is not connected to the slack node")]
    DisconnectedNode(NodeId),
    #[error("case has no slack node")]
    NoSlack,
    #[error("case has more than one slack node ({0} and {1})")]
    MultipleSlack(NodeId, NodeId),
    #[error("slack node {0} cannot host a lower-layer market")]
    MarketOnSlack(NodeId),
    #[error("node {0} hosts more than one lower-layer market")]
    DuplicateMarket(NodeId),
    #[error("node id {0} appears more than once")]
    DuplicateNode(NodeId),
    #[error("reference to unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{field} = {value} is out of range: {reason}")]
    ParameterOutOfRange {
        field: String,
        value: f64,
        reason: &'static str,
    },
    #[error("base power must be positive, got {0}")]
    NonPositiveBase(f64),
}

/// One prosumer's adjustable generator and net load.
///
/// `d` is the net load (load minus non-adjustable generation) and may be
/// negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsumerParams {
    pub c: f64,
    pub b: f64,
    pub d: f64,
    pub p_max: f64,
}

/// A lower-layer energy-sharing market hosted at one feeder node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesmSpec {
    pub node_id: NodeId,
    /// Price elasticity of the sharing price with respect to uncleared energy.
    pub a: f64,
    /// Utility buy price.
    pub w_plus: f64,
    /// Utility sell price.
    pub w_minus: f64,
    pub prosumers: Vec<ProsumerParams>,
}

impl LesmSpec {
    pub fn len(&self) -> usize {
        self.prosumers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prosumers.is_empty()
    }
}

/// Voltage bounds are magnitudes in p.u.; the optimisation model squares them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub is_slack: bool,
    pub v_min: f64,
    pub v_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub from: NodeId,
    pub to: NodeId,
    pub r: f64,
    pub x: f64,
    /// Squared-current limit.
    pub l_max: f64,
}

/// Units of the market-side quantities of a case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MarketUnits {
    /// Powers in kW, prices in $/kWh, `c` in $/kW², `a` in $/kWh per kWh.
    #[default]
    Kilowatt,
    /// Powers divided by the base; prices kept in $/kWh.
    PerUnit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub base_power: f64,
    pub nodes: Vec<NodeSpec>,
    pub branches: Vec<BranchSpec>,
    pub lesms: Vec<LesmSpec>,
    pub units: MarketUnits,
}

/// A branch oriented from the node nearer the slack (`parent`) to `child`.
/// Indices are dense node indices into [`NetworkCase::nodes`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBranch {
    pub spec_index: usize,
    pub parent: usize,
    pub child: usize,
}

/// A case whose invariants have been checked, with precomputed topology.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedCase {
    case: NetworkCase,
    index_of: BTreeMap<NodeId, usize>,
    slack: usize,
    /// Branch (index into `branches`) feeding each node; `None` for the slack.
    parent_branch: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    oriented: Vec<OrientedBranch>,
    leaf_to_root: Vec<usize>,
    market_at: Vec<Option<usize>>,
}

fn check(
    cond: bool,
    field: impl Into<String>,
    value: f64,
    reason: &'static str,
) -> Result<(), ModelError> {
    if cond && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::ParameterOutOfRange {
            field: field.into(),
            value,
            reason,
        })
    }
}

fn check_market(k: usize, m: &LesmSpec) -> Result<(), ModelError> {
    let f = |name: &str| format!("lesms[{k}].{name}");
    check(m.a > 0.0, f("a"), m.a, "elasticity must be positive")?;
    check(
        m.w_minus > 0.0,
        f("w_minus"),
        m.w_minus,
        "sell price must be positive",
    )?;
    check(
        m.w_plus > m.w_minus,
        f("w_plus"),
        m.w_plus,
        "buy price must exceed sell price",
    )?;
    if m.prosumers.is_empty() {
        return Err(ModelError::ParameterOutOfRange {
            field: f("prosumers"),
            value: 0.0,
            reason: "market needs at least one prosumer",
        });
    }
    for (i, p) in m.prosumers.iter().enumerate() {
        let g = |name: &str| format!("lesms[{k}].prosumers[{i}].{name}");
        check(p.c > 0.0, g("c"), p.c, "quadratic cost must be positive")?;
        check(p.b > 0.0, g("b"), p.b, "linear cost must be positive")?;
        check(
            p.b < m.w_minus,
            g("b"),
            p.b,
            "linear cost must be below the sell price",
        )?;
        check(
            p.p_max >= 0.0,
            g("p_max"),
            p.p_max,
            "capacity must be nonnegative",
        )?;
        check(true, g("d"), p.d, "net load must be finite")?;
    }
    Ok(())
}

/// Check every invariant of `case` and precompute its tree structure.
pub fn validate_case(case: NetworkCase) -> Result<ValidatedCase, ModelError> {
    if !(case.base_power > 0.0 && case.base_power.is_finite()) {
        return Err(ModelError::NonPositiveBase(case.base_power));
    }

    let mut index_of = BTreeMap::new();
    let mut slack: Option<usize> = None;
    for (i, n) in case.nodes.iter().enumerate() {
        if index_of.insert(n.id, i).is_some() {
            return Err(ModelError::DuplicateNode(n.id));
        }
        let f = |name: &str| format!("nodes[{i}].{name}");
        check(
            n.v_min > 0.0,
            f("v_min"),
            n.v_min,
            "voltage bound must be positive",
        )?;
        check(
            n.v_max >= n.v_min,
            f("v_max"),
            n.v_max,
            "v_max must not be below v_min",
        )?;
        check(
            n.q_min.is_finite(),
            f("q_min"),
            n.q_min,
            "reactive bound must be finite",
        )?;
        check(
            n.q_max >= n.q_min,
            f("q_max"),
            n.q_max,
            "q_max must not be below q_min",
        )?;
        if n.is_slack {
            if let Some(s) = slack {
                return Err(ModelError::MultipleSlack(case.nodes[s].id, n.id));
            }
            slack = Some(i);
        }
    }
    let slack = slack.ok_or(ModelError::NoSlack)?;
    let n = case.nodes.len();

    // Union-find over branches: joining two already-connected nodes is a cycle.
    let mut uf: Vec<usize> = (0..n).collect();
    fn find(uf: &mut [usize], mut i: usize) -> usize {
        while uf[i] != i {
            uf[i] = uf[uf[i]];
            i = uf[i];
        }
        i
    }
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, br) in case.branches.iter().enumerate() {
        let f = |name: &str| format!("branches[{k}].{name}");
        let &a = index_of
            .get(&br.from)
            .ok_or(ModelError::UnknownNode(br.from))?;
        let &b = index_of.get(&br.to).ok_or(ModelError::UnknownNode(br.to))?;
        check(br.r >= 0.0, f("r"), br.r, "resistance must be nonnegative")?;
        check(br.x > 0.0, f("x"), br.x, "reactance must be positive")?;
        check(
            br.l_max > 0.0,
            f("l_max"),
            br.l_max,
            "current limit must be positive",
        )?;
        let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
        if ra == rb {
            return Err(ModelError::CycleDetected {
                from: br.from,
                to: br.to,
            });
        }
        uf[ra] = rb;
        adjacency[a].push((b, k));
        adjacency[b].push((a, k));
    }

    // Breadth-first orientation from the slack; children in index order.
    let mut parent_branch = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut oriented = Vec::with_capacity(case.branches.len());
    let mut seen = vec![false; n];
    let mut bfs = vec![slack];
    seen[slack] = true;
    let mut head = 0;
    while head < bfs.len() {
        let i = bfs[head];
        head += 1;
        let mut next = adjacency[i].clone();
        next.sort_unstable();
        for (j, k) in next {
            if !seen[j] {
                seen[j] = true;
                parent_branch[j] = Some(k);
                children[i].push(j);
                oriented.push(OrientedBranch {
                    spec_index: k,
                    parent: i,
                    child: j,
                });
                bfs.push(j);
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(ModelError::DisconnectedNode(case.nodes[i].id));
    }
    oriented.sort_by_key(|o| o.spec_index);
    let leaf_to_root: Vec<usize> = bfs.into_iter().rev().collect();

    let mut market_at = vec![None; n];
    for (k, m) in case.lesms.iter().enumerate() {
        let &i = index_of
            .get(&m.node_id)
            .ok_or(ModelError::UnknownNode(m.node_id))?;
        if i == slack {
            return Err(ModelError::MarketOnSlack(m.node_id));
        }
        if market_at[i].replace(k).is_some() {
            return Err(ModelError::DuplicateMarket(m.node_id));
        }
        check_market(k, m)?;
    }

    Ok(ValidatedCase {
        case,
        index_of,
        slack,
        parent_branch,
        children,
        oriented,
        leaf_to_root,
        market_at,
    })
}

/// Scale market-side quantities to per-unit on the case's power base.
///
/// Powers are divided by the base while prices stay in $/kWh, so `c` and `a`
/// are multiplied by the base: every marginal price (`c·p + b`, `w0 − a·X`)
/// is unchanged and every dollar amount becomes `1/base` of its kW value.
/// Network data is already per-unit and is left alone. Idempotent.
pub fn to_per_unit(case: &ValidatedCase) -> Result<ValidatedCase, ModelError> {
    let base = case.case.base_power;
    if !(base > 0.0) {
        return Err(ModelError::NonPositiveBase(base));
    }
    if case.case.units == MarketUnits::PerUnit {
        return Ok(case.clone());
    }
    let mut out = case.clone();
    for m in &mut out.case.lesms {
        m.a *= base;
        for p in &mut m.prosumers {
            p.c *= base;
            p.d /= base;
            p.p_max /= base;
        }
    }
    out.case.units = MarketUnits::PerUnit;
    Ok(out)
}

/// Inverse of the market-side scaling in [`to_per_unit`] for one market.
pub fn lesm_to_kilowatt(m: &LesmSpec, base: f64) -> LesmSpec {
    LesmSpec {
        a: m.a / base,
        prosumers: m
            .prosumers
            .iter()
            .map(|p| ProsumerParams {
                c: p.c / base,
                b: p.b,
                d: p.d * base,
                p_max: p.p_max * base,
            })
            .collect(),
        ..m.clone()
    }
}

impl NetworkCase {
    /// The same case with market data in kW.
    pub fn to_kilowatt(&self) -> NetworkCase {
        match self.units {
            MarketUnits::Kilowatt => self.clone(),
            MarketUnits::PerUnit => NetworkCase {
                lesms: self
                    .lesms
                    .iter()
                    .map(|m| lesm_to_kilowatt(m, self.base_power))
                    .collect(),
                units: MarketUnits::Kilowatt,
                ..self.clone()
            },
        }
    }
}

impl ValidatedCase {
    pub fn case(&self) -> &NetworkCase {
        &self.case
    }

    pub fn into_case(self) -> NetworkCase {
        self.case
    }

    pub fn base_power(&self) -> f64 {
        self.case.base_power
    }

    pub fn units(&self) -> MarketUnits {
        self.case.units
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.case.nodes
    }

    pub fn branches(&self) -> &[BranchSpec] {
        &self.case.branches
    }

    pub fn lesms(&self) -> &[LesmSpec] {
        &self.case.lesms
    }

    pub fn node_count(&self) -> usize {
        self.case.nodes.len()
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.index_of.get(&id).copied()
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn parent_branch(&self, node: usize) -> Option<usize> {
        self.parent_branch[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    /// Branches oriented away from the slack, in branch-list order.
    pub fn oriented_branches(&self) -> &[OrientedBranch] {
        &self.oriented
    }

    /// Every node, each visited before its parent; the slack comes last.
    pub fn leaf_to_root(&self) -> &[usize] {
        &self.leaf_to_root
    }

    /// Index into [`Self::lesms`] of the market hosted at `node`, if any.
    pub fn market_at(&self, node: usize) -> Option<usize> {
        self.market_at[node]
    }

    /// Returns a copy with every non-slack voltage band replaced.
    pub fn with_voltage_band(&self, v_min: f64, v_max: f64) -> ValidatedCase {
        let mut out = self.clone();
        for (i, n) in out.case.nodes.iter_mut().enumerate() {
            if i != self.slack {
                n.v_min = v_min;
                n.v_max = v_max;
            }
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn node(id: NodeId, is_slack: bool) -> NodeSpec {
        NodeSpec {
            id,
            is_slack,
            v_min: 0.93,
            v_max: 1.07,
            q_min: -0.2,
            q_max: 0.2,
        }
    }

    pub fn branch(from: NodeId, to: NodeId) -> BranchSpec {
        BranchSpec {
            from,
            to,
            r: 0.01,
            x: 0.02,
            l_max: 4.0,
        }
    }

    pub fn market(node_id: NodeId) -> LesmSpec {
        LesmSpec {
            node_id,
            a: 5e-3,
            w_plus: 0.2,
            w_minus: 0.05,
            prosumers: vec![ProsumerParams {
                c: 0.001,
                b: 0.01,
                d: 20.0,
                p_max: 40.0,
            }],
        }
    }

    pub fn two_node() -> NetworkCase {
        NetworkCase {
            base_power: DEFAULT_BASE_POWER_KW,
            nodes: vec![node(0, true), node(1, false)],
            branches: vec![branch(0, 1)],
            lesms: vec![market(1)],
            units: MarketUnits::Kilowatt,
        }
    }
}
