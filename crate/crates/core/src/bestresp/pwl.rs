use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used for continuity and domain checks.
pub const CONTINUITY_TOL: f64 = 1e-9;
/// Minimum relative gap between consecutive knots.
pub const KNOT_GAP_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PwlError {
    #[error(
        "piecewise function needs one more knot than pieces (got {knots} knots, {pieces} pieces)"
    )]
    Shape { knots: usize, pieces: usize },
    #[error("knots must be strictly increasing (knot {index} = {value})")]
    NotIncreasing { index: usize, value: f64 },
    #[error("discontinuity of {jump} at knot {at}")]
    Discontinuous { at: f64, jump: f64 },
    #[error("{t} is outside the domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },
    #[error("{y} is outside the range [{lo}, {hi}]")]
    OutOfRange { y: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub slope: f64,
    pub intercept: f64,
}

impl Affine {
    pub fn new(slope: f64, intercept: f64) -> Self {
        Self { slope, intercept }
    }

    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        self.slope * t + self.intercept
    }

    fn same_as(&self, other: &Affine, tol: f64) -> bool {
        (self.slope - other.slope).abs() <= tol * (1.0 + self.slope.abs())
            && (self.intercept - other.intercept).abs() <= tol * (1.0 + self.intercept.abs())
    }
}

fn tol_at(v: f64) -> f64 {
    CONTINUITY_TOL * (1.0 + v.abs())
}

/// A continuous piecewise-affine function on a closed interval.
///
/// `knots[0]` and `knots[len-1]` are the domain ends; the interior knots are
/// the breakpoints. A single-piece function may have a zero-width domain,
/// which is how a best response that collapses to one point is carried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    knots: Vec<f64>,
    pieces: Vec<Affine>,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<f64>, pieces: Vec<Affine>) -> Result<Self, PwlError> {
        if pieces.is_empty() || knots.len() != pieces.len() + 1 {
            return Err(PwlError::Shape {
                knots: knots.len(),
                pieces: pieces.len(),
            });
        }
        if pieces.len() == 1 {
            if !(knots[1] >= knots[0]) {
                return Err(PwlError::NotIncreasing {
                    index: 1,
                    value: knots[1],
                });
            }
        } else {
            for i in 1..knots.len() {
                let gap = knots[i] - knots[i - 1];
                if !(gap > KNOT_GAP_TOL * (1.0 + knots[i].abs())) {
                    return Err(PwlError::NotIncreasing {
                        index: i,
                        value: knots[i],
                    });
                }
            }
        }
        for i in 1..pieces.len() {
            let t = knots[i];
            let (l, r) = (pieces[i - 1].at(t), pieces[i].at(t));
            if (l - r).abs() > tol_at(l.abs().max(r.abs())) {
                return Err(PwlError::Discontinuous { at: t, jump: r - l });
            }
        }
        Ok(Self { knots, pieces })
    }

    pub fn identity(lo: f64, hi: f64) -> Self {
        Self::new(vec![lo, hi], vec![Affine::new(1.0, 0.0)]).expect("identity on a valid interval")
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn pieces(&self) -> &[Affine] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Interior knots.
    pub fn breakpoints(&self) -> &[f64] {
        &self.knots[1..self.knots.len() - 1]
    }

    /// Piece `i` as `(t_lo, t_hi, affine)`.
    pub fn piece(&self, i: usize) -> (f64, f64, Affine) {
        (self.knots[i], self.knots[i + 1], self.pieces[i])
    }

    /// Values at the domain ends; the range when the function is monotone.
    pub fn end_values(&self) -> (f64, f64) {
        let (lo, hi) = self.domain();
        (
            self.pieces[0].at(lo),
            self.pieces[self.pieces.len() - 1].at(hi),
        )
    }

    /// `(t, f(t))` at every knot.
    pub fn vertices(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.knots.len());
        for (i, &t) in self.knots.iter().enumerate() {
            let p = if i == 0 {
                &self.pieces[0]
            } else {
                &self.pieces[i - 1]
            };
            out.push((t, p.at(t)));
        }
        out
    }

    /// Index of the piece containing `t`; a knot belongs to the piece on its left.
    pub fn piece_index(&self, t: f64) -> usize {
        let interior = &self.knots[1..self.knots.len() - 1];
        interior.partition_point(|&k| k < t)
    }

    /// Evaluate at `t`, clamping points within tolerance of the domain.
    pub fn eval(&self, t: f64) -> Result<f64, PwlError> {
        let (lo, hi) = self.domain();
        let t = if t < lo {
            if lo - t > tol_at(lo) {
                return Err(PwlError::OutOfDomain { t, lo, hi });
            }
            log::warn!("clamping {t} to domain start {lo}");
            lo
        } else if t > hi {
            if t - hi > tol_at(hi) {
                return Err(PwlError::OutOfDomain { t, lo, hi });
            }
            log::warn!("clamping {t} to domain end {hi}");
            hi
        } else {
            t
        };
        Ok(self.pieces[self.piece_index(t)].at(t))
    }

    /// Smallest `t` with `f(t) = y` for a nondecreasing function.
    ///
    /// On a flat piece at level `y` this is the piece's left end.
    pub fn invert(&self, y: f64) -> Result<f64, PwlError> {
        let verts = self.vertices();
        let (ylo, yhi) = (verts[0].1, verts[verts.len() - 1].1);
        let tol = tol_at(y);
        if y < ylo - tol || y > yhi + tol {
            return Err(PwlError::OutOfRange {
                y,
                lo: ylo,
                hi: yhi,
            });
        }
        let k = verts.partition_point(|v| v.1 < y - tol);
        if k == 0 {
            return Ok(verts[0].0);
        }
        if k == verts.len() {
            return Ok(verts[k - 1].0);
        }
        // verts[k-1] lies below y - tol and verts[k] does not, so piece k-1 is sloped
        let p = self.pieces[k - 1];
        if p.slope > 0.0 {
            let t = (y - p.intercept) / p.slope;
            Ok(t.clamp(verts[k - 1].0, verts[k].0))
        } else {
            Ok(verts[k - 1].0)
        }
    }

    /// Merge neighbouring pieces whose affine forms agree within `tol`.
    pub fn merged(&self, tol: f64) -> Self {
        let mut knots = vec![self.knots[0]];
        let mut pieces: Vec<Affine> = Vec::with_capacity(self.pieces.len());
        for (i, p) in self.pieces.iter().enumerate() {
            match pieces.last() {
                Some(last) if last.same_as(p, tol) => {
                    *knots.last_mut().unwrap() = self.knots[i + 1];
                }
                _ => {
                    pieces.push(*p);
                    knots.push(self.knots[i + 1]);
                }
            }
        }
        Self { knots, pieces }
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.pieces.iter().all(|p| p.slope >= 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn three_piece() -> PiecewiseLinear {
        // X(w0) of a single prosumer (c=1, b=0, D=0) with a=1, w-=0.05, w+=0.2
        PiecewiseLinear::new(
            vec![-0.5, 0.15, 0.6, 1.0],
            vec![
                Affine::new(0.5, -0.025),
                Affine::new(1.0 / 3.0, 0.0),
                Affine::new(0.5, -0.1),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identity_eval() {
        let f = PiecewiseLinear::identity(0.0, 10.0);
        assert_eq!(f.eval(7.0).unwrap(), 7.0);
    }

    #[test]
    fn eval_and_breakpoints() {
        let f = three_piece();
        assert!((f.eval(0.1).unwrap() - 0.025).abs() < 1e-15);
        for &t in f.breakpoints() {
            let i = f.piece_index(t);
            let (l, r) = (f.pieces()[i].at(t), f.pieces()[i + 1].at(t));
            assert!((l - r).abs() <= 1e-9 * (1.0 + l.abs()));
        }
        assert!(matches!(f.eval(1.5), Err(PwlError::OutOfDomain { .. })));
        assert!((f.eval(1.0 + 1e-12).unwrap() - 0.4).abs() < 1e-9);
    }

    #[test]
    fn invert_sloped_and_breakpoint() {
        let f = three_piece();
        assert!((f.invert(0.1).unwrap() - 0.3).abs() < 1e-12);
        assert!((f.invert(0.05).unwrap() - 0.15).abs() < 1e-12);
        assert!(matches!(f.invert(5.0), Err(PwlError::OutOfRange { .. })));
    }

    #[test]
    fn invert_flat_takes_left_end() {
        let f = PiecewiseLinear::new(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![
                Affine::new(1.0, 0.0),
                Affine::new(0.0, 1.0),
                Affine::new(1.0, -1.0),
            ],
        )
        .unwrap();
        assert_eq!(f.invert(1.0).unwrap(), 1.0);
    }

    #[test]
    fn rejects_discontinuity() {
        let r = PiecewiseLinear::new(
            vec![0.0, 1.0, 2.0],
            vec![Affine::new(1.0, 0.0), Affine::new(1.0, 0.5)],
        );
        assert!(matches!(r, Err(PwlError::Discontinuous { .. })));
    }

    #[test]
    fn merge_collinear() {
        let f = PiecewiseLinear::new(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![
                Affine::new(1.0, 0.0),
                Affine::new(1.0, 0.0),
                Affine::new(0.0, 2.0),
            ],
        )
        .unwrap();
        let m = f.merged(1e-12);
        assert_eq!(m.len(), 2);
        assert_eq!(m.knots(), &[0.0, 2.0, 3.0]);
    }

    proptest! {
        #[test]
        fn invert_is_right_inverse(slopes in proptest::collection::vec(0.0f64..3.0, 1..6), y in 0.0f64..1.0) {
            let n = slopes.len();
            let knots: Vec<f64> = (0..=n).map(|i| i as f64).collect();
            let mut pieces = Vec::new();
            let mut v = 0.0;
            for (i, &s) in slopes.iter().enumerate() {
                pieces.push(Affine::new(s, v - s * i as f64));
                v += s;
            }
            let f = PiecewiseLinear::new(knots, pieces).unwrap();
            let (lo, hi) = f.end_values();
            let target = lo + y * (hi - lo);
            let t = f.invert(target).unwrap();
            prop_assert!((f.eval(t).unwrap() - target).abs() <= 1e-9 * (1.0 + target.abs()));
        }
    }
}
