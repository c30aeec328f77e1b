use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SplitMix64;
use crate::model::{
    BranchSpec, LesmSpec, MarketUnits, NetworkCase, NodeId, NodeSpec, ProsumerParams,
    DEFAULT_BASE_POWER_KW,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("bad template: {0}")]
    BadTemplate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    /// Net generation.
    Surplus,
    /// Net load.
    Deficit,
    Balance,
}

/// Closed sampling intervals `[lo, hi]`; powers in kW, prices in $/kWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub c: [f64; 2],
    pub b: [f64; 2],
    pub p_max_kw: [f64; 2],
    /// Elasticity before division by the market size.
    pub a: [f64; 2],
    pub d_surplus_kw: [f64; 2],
    pub d_deficit_kw: [f64; 2],
    pub d_balance_kw: [f64; 2],
    pub w_plus: f64,
    pub w_minus: f64,
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            c: [0.5e-3, 1e-3],
            b: [0.01, 0.05],
            p_max_kw: [0.0, 40.0],
            a: [2.5e-3, 5e-3],
            d_surplus_kw: [-40.0, -20.0],
            d_deficit_kw: [20.0, 40.0],
            d_balance_kw: [-5.0, 5.0],
            w_plus: 0.2,
            w_minus: 0.05,
        }
    }
}

impl ParamRanges {
    pub fn load(&self, region: Region) -> [f64; 2] {
        match region {
            Region::Surplus => self.d_surplus_kw,
            Region::Deficit => self.d_deficit_kw,
            Region::Balance => self.d_balance_kw,
        }
    }
}

/// Electrical defaults for generated feeders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeederDefaults {
    pub base_power_kw: f64,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    pub r_pu: f64,
    pub x_pu: f64,
    pub l_max_pu: f64,
    /// Reactive support as a fraction of the node's total `|D|` in p.u.
    pub q_scale: f64,
    /// Lower bound on the reactive-support half-width, p.u.
    pub q_floor_pu: f64,
}

impl Default for FeederDefaults {
    fn default() -> Self {
        Self {
            base_power_kw: DEFAULT_BASE_POWER_KW,
            v_min_pu: 0.93,
            v_max_pu: 1.07,
            r_pu: 0.004,
            x_pu: 0.008,
            l_max_pu: 100.0,
            q_scale: 0.3,
            q_floor_pu: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Slack at one end, markets `1..=n` in order along the line.
    Path,
    /// Complete tree of the given arity rooted at the slack, filled breadth first.
    Tree { arity: usize },
    /// A given feeder; every non-slack node hosts one market, in list order.
    Network {
        nodes: Vec<NodeSpec>,
        branches: Vec<BranchSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    /// Number of market nodes; the slack comes on top.
    pub nodes: usize,
    pub prosumers: usize,
    /// Region per market node; `None` splits the nodes into three contiguous
    /// blocks (surplus, deficit, balance).
    pub regions: Option<Vec<Region>>,
    pub ranges: ParamRanges,
    pub topology: Topology,
    pub feeder: FeederDefaults,
    pub seed: u64,
}

impl ScenarioTemplate {
    pub fn three_region(nodes: usize, prosumers: usize, seed: u64) -> Self {
        Self {
            nodes,
            prosumers,
            regions: None,
            ranges: ParamRanges::default(),
            topology: Topology::Path,
            feeder: FeederDefaults::default(),
            seed,
        }
    }

    pub fn regions(&self) -> Vec<Region> {
        self.regions
            .clone()
            .unwrap_or_else(|| three_blocks(self.nodes))
    }
}

/// Node `i` of `n` goes to block `3i / n`.
pub fn three_blocks(n: usize) -> Vec<Region> {
    const ORDER: [Region; 3] = [Region::Surplus, Region::Deficit, Region::Balance];
    (0..n).map(|i| ORDER[3 * i / n]).collect()
}

fn check_range(name: &str, r: [f64; 2]) -> Result<(), ScenarioError> {
    if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
        Ok(())
    } else {
        Err(ScenarioError::BadTemplate(format!(
            "{name} range [{}, {}] is not an interval",
            r[0], r[1]
        )))
    }
}

fn check_template(t: &ScenarioTemplate) -> Result<(), ScenarioError> {
    let bad = |m: String| Err(ScenarioError::BadTemplate(m));
    if t.nodes == 0 {
        return bad("at least one market node is required".into());
    }
    if t.prosumers == 0 {
        return bad("at least one prosumer per market is required".into());
    }
    if let Some(r) = &t.regions {
        if r.len() != t.nodes {
            return bad(format!("{} regions given for {} nodes", r.len(), t.nodes));
        }
    }
    let g = &t.ranges;
    for (name, r) in [
        ("c", g.c),
        ("b", g.b),
        ("p_max_kw", g.p_max_kw),
        ("a", g.a),
        ("d_surplus_kw", g.d_surplus_kw),
        ("d_deficit_kw", g.d_deficit_kw),
        ("d_balance_kw", g.d_balance_kw),
    ] {
        check_range(name, r)?;
    }
    match &t.topology {
        Topology::Tree { arity: 0 } => bad("tree arity must be positive".into()),
        Topology::Network { nodes, .. } => {
            let hosts = nodes.iter().filter(|n| !n.is_slack).count();
            if hosts != t.nodes {
                bad(format!(
                    "network has {hosts} non-slack nodes, template asks for {}",
                    t.nodes
                ))
            } else {
                Ok(())
            }
        }
        _ => Ok(()),
    }
}

/// Build a case from a template.
///
/// Draws come from one SplitMix64 stream seeded with `seed`, market by
/// market in node order: first the elasticity `a`, then for each prosumer
/// `c`, `b`, `p_max` and `d`, each as `lo + (hi - lo)·u`. The elasticity is
/// divided by the number of prosumers. Generated nodes get ids `0` (slack)
/// to `n`.
pub fn generate_case(t: &ScenarioTemplate) -> Result<NetworkCase, ScenarioError> {
    check_template(t)?;
    let g = &t.ranges;
    let f = &t.feeder;
    let regions = t.regions();
    let mut rng = SplitMix64::new(t.seed);

    let (mut nodes, branches, hosts): (Vec<NodeSpec>, Vec<BranchSpec>, Vec<NodeId>) =
        match &t.topology {
            Topology::Network { nodes, branches } => {
                let hosts = nodes.iter().filter(|n| !n.is_slack).map(|n| n.id).collect();
                (nodes.clone(), branches.clone(), hosts)
            }
            topo => {
                let arity = match topo {
                    Topology::Tree { arity } => *arity,
                    _ => 1,
                };
                let node = |id: NodeId, is_slack: bool| NodeSpec {
                    id,
                    is_slack,
                    v_min: f.v_min_pu,
                    v_max: f.v_max_pu,
                    q_min: -f.q_floor_pu,
                    q_max: f.q_floor_pu,
                };
                let nodes = (0..=t.nodes as NodeId).map(|i| node(i, i == 0)).collect();
                let branches = (1..=t.nodes)
                    .map(|i| BranchSpec {
                        from: ((i - 1) / arity) as NodeId,
                        to: i as NodeId,
                        r: f.r_pu,
                        x: f.x_pu,
                        l_max: f.l_max_pu,
                    })
                    .collect();
                (nodes, branches, (1..=t.nodes as NodeId).collect())
            }
        };

    let mut lesms = Vec::with_capacity(t.nodes);
    for (&id, &region) in hosts.iter().zip(&regions) {
        let a = rng.uniform(g.a[0], g.a[1]) / t.prosumers as f64;
        let d_range = g.load(region);
        let prosumers = (0..t.prosumers)
            .map(|_| ProsumerParams {
                c: rng.uniform(g.c[0], g.c[1]),
                b: rng.uniform(g.b[0], g.b[1]),
                p_max: rng.uniform(g.p_max_kw[0], g.p_max_kw[1]),
                d: rng.uniform(d_range[0], d_range[1]),
            })
            .collect();
        lesms.push(LesmSpec {
            node_id: id,
            a,
            w_plus: g.w_plus,
            w_minus: g.w_minus,
            prosumers,
        });
    }

    if !matches!(t.topology, Topology::Network { .. }) {
        for (m, n) in lesms.iter().zip(&mut nodes[1..]) {
            let load: f64 = m.prosumers.iter().map(|p| p.d.abs()).sum::<f64>() / f.base_power_kw;
            let q = (f.q_scale * load).max(f.q_floor_pu);
            n.q_min = -q;
            n.q_max = q;
        }
    }

    Ok(NetworkCase {
        base_power: f.base_power_kw,
        nodes,
        branches,
        lesms,
        units: MarketUnits::Kilowatt,
    })
}
