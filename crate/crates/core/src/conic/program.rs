use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Affine expression `Σ coef·x[var] + constant`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn var(i: usize) -> Self {
        Self {
            terms: vec![(i, 1.0)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn term(i: usize, coef: f64) -> Self {
        Self {
            terms: vec![(i, coef)],
            constant: 0.0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }

    /// The constant value if the expression has no variable terms.
    pub fn as_constant(&self) -> Option<f64> {
        self.terms.is_empty().then_some(self.constant)
    }

    pub fn add_term(&mut self, i: usize, coef: f64) {
        self.terms.push((i, coef));
    }

    /// Sum repeated variables and drop zero coefficients.
    pub fn compact(mut self) -> Self {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (i, c) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
        self
    }
}

impl Add for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: LinExpr) -> LinExpr {
        self += rhs;
        self
    }
}

impl AddAssign for LinExpr {
    fn add_assign(&mut self, rhs: LinExpr) {
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
    }
}

impl Sub for LinExpr {
    type Output = LinExpr;
    fn sub(self, rhs: LinExpr) -> LinExpr {
        self + (-rhs)
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self * -1.0
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, k: f64) -> LinExpr {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
        self
    }
}

/// Cone membership of a single variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Free,
    Nonneg,
    /// Member of the rotated cone with this index.
    Rotated(usize),
}

/// `2·u·v ≥ ‖z‖²` with `u, v ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotatedCone {
    pub u: usize,
    pub v: usize,
    pub z: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// `min cᵀx + c0` subject to `Ax = b` and `x ∈ Free × Nonneg × Rotated`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeProgram {
    pub cost: Vec<f64>,
    pub cost_constant: f64,
    pub rows: Vec<SparseRow>,
    pub kinds: Vec<VarKind>,
    pub cones: Vec<RotatedCone>,
}

impl ConeProgram {
    pub fn n_vars(&self) -> usize {
        self.kinds.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, x)| c * x).sum::<f64>() + self.cost_constant
    }

    /// `Aᵀy`.
    pub fn at_y(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_vars()];
        for (row, &yi) in self.rows.iter().zip(y) {
            for &(j, a) in &row.terms {
                out[j] += a * yi;
            }
        }
        out
    }

    /// `Ax - b`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.terms.iter().map(|&(j, a)| a * x[j]).sum::<f64>() - r.rhs)
            .collect()
    }

    /// Largest violation of the cone constraints by `x`. Also the dual cone
    /// violation when applied to reduced costs: the cone is self-dual up to
    /// the free block, whose dual is `{0}`.
    pub fn cone_violation(&self, x: &[f64], dual: bool) -> f64 {
        let mut worst = 0.0f64;
        for (i, k) in self.kinds.iter().enumerate() {
            match k {
                VarKind::Free if dual => worst = worst.max(x[i].abs()),
                VarKind::Nonneg => worst = worst.max(-x[i]),
                _ => {}
            }
        }
        for c in &self.cones {
            let (u, v) = (x[c.u], x[c.v]);
            let zz: f64 = c.z.iter().map(|&j| x[j] * x[j]).sum();
            // distance-like measure in the equivalent second-order form
            let lhs = ((u - v).powi(2) + 2.0 * zz).sqrt();
            worst = worst.max((lhs - (u + v)) / std::f64::consts::SQRT_2);
        }
        worst
    }

    /// Structured dump for cross-checking with external solvers: objective,
    /// equality matrix as `(row, col, value)` triplets and the cone partition.
    pub fn debug_dump(&self) -> serde_json::Value {
        let triplets: Vec<(usize, usize, f64)> = self
            .rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.terms.iter().map(move |&(j, a)| (i, j, a)))
            .collect();
        let free: Vec<usize> = (0..self.n_vars())
            .filter(|&i| self.kinds[i] == VarKind::Free)
            .collect();
        let nonneg: Vec<usize> = (0..self.n_vars())
            .filter(|&i| self.kinds[i] == VarKind::Nonneg)
            .collect();
        serde_json::json!({
            "n_vars": self.n_vars(),
            "objective": { "c": self.cost, "constant": self.cost_constant },
            "equalities": {
                "shape": [self.n_rows(), self.n_vars()],
                "triplets": triplets,
                "rhs": self.rows.iter().map(|r| r.rhs).collect::<Vec<_>>(),
            },
            "cones": { "free": free, "nonneg": nonneg, "rotated": self.cones },
        })
    }
}

/// Incremental construction of a [`ConeProgram`].
///
/// Bounded scalars are expressed through slacks, and fixed scalars become
/// constants, so the finished program needs no bound vectors.
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    cost: Vec<f64>,
    cost_constant: f64,
    rows: Vec<SparseRow>,
    kinds: Vec<VarKind>,
    cones: Vec<RotatedCone>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, kind: VarKind) -> usize {
        self.kinds.push(kind);
        self.cost.push(0.0);
        self.kinds.len() - 1
    }

    pub fn free(&mut self) -> usize {
        self.push(VarKind::Free)
    }

    pub fn nonneg(&mut self) -> usize {
        self.push(VarKind::Nonneg)
    }

    /// A scalar in `[lo, hi]`; either end may be infinite.
    pub fn bounded(&mut self, lo: f64, hi: f64) -> LinExpr {
        match (lo.is_finite(), hi.is_finite()) {
            (false, false) => LinExpr::var(self.free()),
            (true, _) if hi == lo => LinExpr::constant(lo),
            (true, false) => LinExpr::var(self.nonneg()) + LinExpr::constant(lo),
            (false, true) => LinExpr::constant(hi) - LinExpr::var(self.nonneg()),
            (true, true) => {
                let s1 = self.nonneg();
                let s2 = self.nonneg();
                self.add_eq(
                    LinExpr::var(s1) + LinExpr::var(s2),
                    LinExpr::constant(hi - lo),
                );
                LinExpr::var(s1) + LinExpr::constant(lo)
            }
        }
    }

    /// A new rotated cone with a `dim`-dimensional vector block.
    pub fn rotated(&mut self, dim: usize) -> RotatedCone {
        let k = self.cones.len();
        let u = self.push(VarKind::Rotated(k));
        let v = self.push(VarKind::Rotated(k));
        let z = (0..dim).map(|_| self.push(VarKind::Rotated(k))).collect();
        let cone = RotatedCone { u, v, z };
        self.cones.push(cone.clone());
        cone
    }

    /// Constrain `lhs = rhs`. Returns the row index.
    pub fn add_eq(&mut self, lhs: LinExpr, rhs: LinExpr) -> usize {
        let e = (lhs - rhs).compact();
        self.rows.push(SparseRow {
            terms: e.terms,
            rhs: -e.constant,
        });
        self.rows.len() - 1
    }

    pub fn add_cost(&mut self, e: &LinExpr) {
        for &(i, c) in &e.terms {
            self.cost[i] += c;
        }
        self.cost_constant += e.constant;
    }

    pub fn n_vars(&self) -> usize {
        self.kinds.len()
    }

    pub fn build(self) -> ConeProgram {
        ConeProgram {
            cost: self.cost,
            cost_constant: self.cost_constant,
            rows: self.rows,
            kinds: self.kinds,
            cones: self.cones,
        }
    }
}

/// Equality system after dropping empty rows and scaling each row to unit
/// infinity-norm.
#[derive(Debug, Clone)]
pub struct Presolved {
    pub rows: Vec<SparseRow>,
    /// Original row index of each kept row.
    pub origin: Vec<usize>,
    /// Factor each kept row was multiplied by.
    pub scale: Vec<f64>,
    /// An empty row with nonzero right-hand side, if any.
    pub inconsistent: Option<usize>,
}

pub const EMPTY_ROW_TOL: f64 = 1e-12;

pub fn presolve(p: &ConeProgram) -> Presolved {
    let mut out = Presolved {
        rows: Vec::with_capacity(p.rows.len()),
        origin: Vec::with_capacity(p.rows.len()),
        scale: Vec::with_capacity(p.rows.len()),
        inconsistent: None,
    };
    for (i, r) in p.rows.iter().enumerate() {
        let norm = r.terms.iter().fold(0.0f64, |m, t| m.max(t.1.abs()));
        if norm == 0.0 {
            if r.rhs.abs() > EMPTY_ROW_TOL && out.inconsistent.is_none() {
                out.inconsistent = Some(i);
            }
            continue;
        }
        let s = 1.0 / norm;
        out.rows.push(SparseRow {
            terms: r.terms.iter().map(|&(j, a)| (j, a * s)).collect(),
            rhs: r.rhs * s,
        });
        out.origin.push(i);
        out.scale.push(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_forms() {
        let mut b = ProgramBuilder::new();
        assert_eq!(b.bounded(1.0, 1.0).as_constant(), Some(1.0));
        let e = b.bounded(0.5, 2.0);
        assert_eq!(e.constant, 0.5);
        let p = b.build();
        assert_eq!(p.n_rows(), 1);
        assert_eq!(p.rows[0].rhs, 1.5);
        assert_eq!(p.kinds, vec![VarKind::Nonneg, VarKind::Nonneg]);
    }

    #[test]
    fn constants_move_to_rhs() {
        let mut b = ProgramBuilder::new();
        let x = b.free();
        b.add_eq(
            LinExpr::var(x) + LinExpr::constant(2.0),
            LinExpr::var(x) * 3.0,
        );
        let p = b.build();
        assert_eq!(p.rows[0].terms, vec![(x, -2.0)]);
        assert_eq!(p.rows[0].rhs, -2.0);
    }

    #[test]
    fn presolve_scales_and_flags() {
        let mut b = ProgramBuilder::new();
        let x = b.free();
        b.add_eq(LinExpr::term(x, 4.0), LinExpr::constant(2.0));
        b.add_eq(LinExpr::constant(0.0), LinExpr::constant(0.0));
        b.add_eq(LinExpr::constant(1.0), LinExpr::constant(0.0));
        let pre = presolve(&b.build());
        assert_eq!(pre.rows.len(), 1);
        assert_eq!(pre.rows[0].terms, vec![(x, 1.0)]);
        assert_eq!(pre.rows[0].rhs, 0.5);
        assert_eq!(pre.inconsistent, Some(2));
    }

    #[test]
    fn cone_partition_is_total() {
        let mut b = ProgramBuilder::new();
        b.free();
        let c = b.rotated(2);
        b.nonneg();
        let p = b.build();
        assert_eq!(p.n_vars(), 6);
        assert_eq!(c.z.len(), 2);
        assert!(p.kinds[1..5].iter().all(|k| *k == VarKind::Rotated(0)));
        let dump = p.debug_dump();
        assert_eq!(dump["cones"]["free"], serde_json::json!([0]));
    }
}
