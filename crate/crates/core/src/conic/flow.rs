use serde::{Deserialize, Serialize};

use super::program::{ConeProgram, LinExpr, ProgramBuilder};
use crate::model::{NodeId, ValidatedCase};

/// Relative tolerance on the cone residual for a branch to count as tight.
pub const TIGHTNESS_TOL: f64 = 1e-6;
/// Distance from a bound under which it is considered binding.
pub const BINDING_TOL: f64 = 1e-6;

/// Active-power injection at a node, in p.u. (positive = generation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Injection {
    Fixed(f64),
    Interval(f64, f64),
    Free,
}

/// Handles to the flow quantities inside a program.
///
/// Node vectors are indexed by dense node index, branch vectors by the
/// index in the case's branch list.
#[derive(Debug, Clone)]
pub struct FlowVars {
    pub p: Vec<LinExpr>,
    pub q: Vec<LinExpr>,
    /// Squared voltage magnitude.
    pub v: Vec<LinExpr>,
    /// Active power sent from the parent end.
    pub p_branch: Vec<LinExpr>,
    pub q_branch: Vec<LinExpr>,
    /// Squared current magnitude.
    pub l: Vec<LinExpr>,
    /// Parent and child node index of every branch.
    pub ends: Vec<(usize, usize)>,
}

/// Add the branch-flow model of `case` to `b`, with loss-minimising
/// objective. The slack node has unit voltage and free injections.
pub fn assemble_into(
    b: &mut ProgramBuilder,
    case: &ValidatedCase,
    injections: &[Injection],
) -> FlowVars {
    let nodes = case.nodes();
    let slack = case.slack();
    let nn = nodes.len();
    let nb = case.branches().len();
    let mut p = Vec::with_capacity(nn);
    let mut q = Vec::with_capacity(nn);
    let mut v = Vec::with_capacity(nn);
    for (j, node) in nodes.iter().enumerate() {
        if j == slack {
            p.push(LinExpr::var(b.free()));
            q.push(LinExpr::var(b.free()));
            v.push(LinExpr::constant(1.0));
            continue;
        }
        p.push(match injections[j] {
            Injection::Fixed(val) => LinExpr::constant(val),
            Injection::Interval(lo, hi) => b.bounded(lo, hi),
            Injection::Free => LinExpr::var(b.free()),
        });
        q.push(b.bounded(node.q_min, node.q_max));
        v.push(b.bounded(node.v_min * node.v_min, node.v_max * node.v_max));
    }

    let mut p_branch = vec![LinExpr::default(); nb];
    let mut q_branch = vec![LinExpr::default(); nb];
    let mut l = vec![LinExpr::default(); nb];
    let mut ends = vec![(0, 0); nb];
    for ob in case.oriented_branches() {
        let spec = &case.branches()[ob.spec_index];
        let cone = b.rotated(2);
        let le = b.bounded(0.0, spec.l_max);
        // 2·(l/2)·v_parent ≥ P² + Q²
        b.add_eq(LinExpr::var(cone.u), le.clone() * 0.5);
        b.add_eq(LinExpr::var(cone.v), v[ob.parent].clone());
        p_branch[ob.spec_index] = LinExpr::var(cone.z[0]);
        q_branch[ob.spec_index] = LinExpr::var(cone.z[1]);
        l[ob.spec_index] = le;
        ends[ob.spec_index] = (ob.parent, ob.child);
    }

    for j in 0..nn {
        let mut pb = p[j].clone();
        let mut qb = q[j].clone();
        for &k in case.children(j) {
            let e = case.parent_branch(k).expect("child has a parent branch");
            pb = pb - p_branch[e].clone();
            qb = qb - q_branch[e].clone();
        }
        if let Some(e) = case.parent_branch(j) {
            let spec = &case.branches()[e];
            pb = pb + p_branch[e].clone() - l[e].clone() * spec.r;
            qb = qb + q_branch[e].clone() - l[e].clone() * spec.x;
        }
        b.add_eq(pb, LinExpr::constant(0.0));
        b.add_eq(qb, LinExpr::constant(0.0));
    }

    for (e, &(i, j)) in ends.iter().enumerate() {
        let spec = &case.branches()[e];
        let z2 = spec.r * spec.r + spec.x * spec.x;
        let drop = v[i].clone()
            - (p_branch[e].clone() * spec.r + q_branch[e].clone() * spec.x) * 2.0
            + l[e].clone() * z2;
        b.add_eq(v[j].clone(), drop);
        b.add_cost(&(l[e].clone() * spec.r));
    }

    FlowVars {
        p,
        q,
        v,
        p_branch,
        q_branch,
        l,
        ends,
    }
}

/// The branch-flow program of `case` on its own.
pub fn assemble_socp(case: &ValidatedCase, injections: &[Injection]) -> (ConeProgram, FlowVars) {
    let mut b = ProgramBuilder::new();
    let vars = assemble_into(&mut b, case, injections);
    (b.build(), vars)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub id: NodeId,
    pub p: f64,
    pub q: f64,
    /// Squared voltage magnitude.
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchState {
    pub from: NodeId,
    pub to: NodeId,
    pub p: f64,
    pub q: f64,
    pub l: f64,
}

/// Flow quantities of a solved program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub nodes: Vec<NodeState>,
    /// Oriented parent to child, in case branch order.
    pub branches: Vec<BranchState>,
    /// Total losses `Σ r·l`.
    pub losses: f64,
}

impl FlowVars {
    pub fn extract(&self, case: &ValidatedCase, x: &[f64]) -> FlowState {
        let nodes = case
            .nodes()
            .iter()
            .enumerate()
            .map(|(j, n)| NodeState {
                id: n.id,
                p: self.p[j].eval(x),
                q: self.q[j].eval(x),
                v: self.v[j].eval(x),
            })
            .collect();
        let mut losses = 0.0;
        let branches = self
            .ends
            .iter()
            .enumerate()
            .map(|(e, &(i, j))| {
                let l = self.l[e].eval(x);
                losses += case.branches()[e].r * l;
                BranchState {
                    from: case.nodes()[i].id,
                    to: case.nodes()[j].id,
                    p: self.p_branch[e].eval(x),
                    q: self.q_branch[e].eval(x),
                    l,
                }
            })
            .collect();
        FlowState {
            nodes,
            branches,
            losses,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchTightness {
    pub from: NodeId,
    pub to: NodeId,
    /// `l·v_parent - P² - Q²`
    pub residual: f64,
    pub passed: bool,
}

/// Per-branch cone residuals, listed from the leaves towards the slack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    pub branches: Vec<BranchTightness>,
    pub max_residual: f64,
    pub passed: bool,
    /// Nodes at their upper voltage bound whose reactive injection sits at
    /// its lower bound, where exactness is not guaranteed.
    pub warnings: Vec<String>,
}

pub fn check_tightness(state: &FlowState, case: &ValidatedCase, tol: f64) -> TightnessReport {
    let mut branches = Vec::new();
    let mut warnings = Vec::new();
    let mut max_residual = 0.0f64;
    let mut passed = true;
    for &j in case.leaf_to_root() {
        let Some(e) = case.parent_branch(j) else {
            continue;
        };
        let br = &state.branches[e];
        let parent = case.index_of(br.from).expect("branch end is a node");
        let lv = br.l * state.nodes[parent].v;
        let residual = lv - br.p * br.p - br.q * br.q;
        let ok = residual <= tol * (1.0 + lv);
        passed &= ok;
        max_residual = max_residual.max(residual);
        branches.push(BranchTightness {
            from: br.from,
            to: br.to,
            residual,
            passed: ok,
        });

        let spec = &case.nodes()[j];
        let ns = &state.nodes[j];
        if ns.v >= spec.v_max * spec.v_max - BINDING_TOL && ns.q <= spec.q_min + BINDING_TOL {
            let msg = format!(
                "node {}: upper voltage bound binds with reactive injection at its lower bound",
                spec.id
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    TightnessReport {
        branches,
        max_residual,
        passed,
        warnings,
    }
}
