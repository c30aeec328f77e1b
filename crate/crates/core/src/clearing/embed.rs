use serde::{Deserialize, Serialize};

use crate::bestresp::BestResponse;
use crate::conic::{LinExpr, ProgramBuilder};

/// One affine piece of a best response as its two graph vertices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub x_lo: f64,
    pub p_lo: f64,
    pub x_hi: f64,
    pub p_hi: f64,
}

/// Convex-combination encoding of a market's `P(X)` graph.
///
/// Each segment carries two nonnegative vertex weights and a relaxed binary
/// equal to their sum; the binaries sum to one. With integral binaries
/// `(X, P)` is on the graph, with relaxed ones it ranges over the hull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlEmbedding {
    pub node_id: u64,
    pub segments: Vec<Segment>,
}

/// Variables of an embedding restricted to a contiguous segment range.
#[derive(Debug, Clone)]
pub struct EmbeddedMarket {
    pub x: LinExpr,
    pub p: LinExpr,
    /// First allowed segment.
    pub first: usize,
    /// Relaxed binaries of the allowed segments.
    pub binaries: Vec<usize>,
}

impl PwlEmbedding {
    pub fn from_best_response(br: &BestResponse) -> Self {
        let f = &br.p_of_x;
        let segments = (0..f.len())
            .map(|i| {
                let (x_lo, x_hi, a) = f.piece(i);
                Segment {
                    x_lo,
                    p_lo: a.at(x_lo),
                    x_hi,
                    p_hi: a.at(x_hi),
                }
            })
            .collect();
        Self {
            node_id: br.node_id,
            segments,
        }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// `P` on the graph at `x`, if `x` is in the domain.
    pub fn graph_at(&self, x: f64) -> Option<f64> {
        let tol = 1e-12 * (1.0 + x.abs());
        self.segments
            .iter()
            .find(|s| x >= s.x_lo - tol && x <= s.x_hi + tol)
            .map(|s| interpolate(s, x))
    }

    /// Segments of `first..=last` whose closed X-interval contains `x`.
    pub fn segments_containing(&self, x: f64, first: usize, last: usize, tol: f64) -> Vec<usize> {
        (first..=last)
            .filter(|&k| {
                let s = &self.segments[k];
                x >= s.x_lo - tol * (1.0 + s.x_lo.abs()) && x <= s.x_hi + tol * (1.0 + s.x_hi.abs())
            })
            .collect()
    }

    pub fn add_to(&self, b: &mut ProgramBuilder, first: usize, last: usize) -> EmbeddedMarket {
        let mut x = LinExpr::default();
        let mut p = LinExpr::default();
        let mut mass = LinExpr::default();
        let mut binaries = Vec::with_capacity(last + 1 - first);
        for s in &self.segments[first..=last] {
            let lo = b.nonneg();
            let hi = b.nonneg();
            let z = b.nonneg();
            b.add_eq(LinExpr::var(lo) + LinExpr::var(hi), LinExpr::var(z));
            x += LinExpr::term(lo, s.x_lo) + LinExpr::term(hi, s.x_hi);
            p += LinExpr::term(lo, s.p_lo) + LinExpr::term(hi, s.p_hi);
            mass += LinExpr::var(z);
            binaries.push(z);
        }
        b.add_eq(mass, LinExpr::constant(1.0));
        EmbeddedMarket {
            x,
            p,
            first,
            binaries,
        }
    }
}

fn interpolate(s: &Segment, x: f64) -> f64 {
    let w = s.x_hi - s.x_lo;
    if w <= 0.0 {
        return s.p_lo;
    }
    let t = ((x - s.x_lo) / w).clamp(0.0, 1.0);
    s.p_lo + t * (s.p_hi - s.p_lo)
}
