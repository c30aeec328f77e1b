//! Exact best-response functions of a lower-layer market.
//!
//! For a fixed base price `w0` every prosumer sits in one of four KKT
//! regimes ([`Mode`]). Inside a price interval where no prosumer changes
//! regime, summing the per-mode stationarity relations gives the market's
//! uncleared energy as an affine function `X = k'·w0 + b'`. Because each
//! prosumer's shared energy is nondecreasing in `w0`, regime changes happen
//! in a fixed order, so the whole map `X(w0)` is traced by a single ascending
//! sweep over trigger prices computed in closed form. The grid exchange
//! `P` is then re-expressed as a function of `X` segment by segment.

mod pwl;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LesmSpec, ProsumerParams};

pub use pwl::{Affine, PiecewiseLinear, PwlError, CONTINUITY_TOL, KNOT_GAP_TOL};

/// Relative tolerance under which trigger prices are treated as simultaneous.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BestResponseError {
    #[error("price domain [{floor}, {ceiling}] is empty")]
    DomainTooNarrow { floor: f64, ceiling: f64 },
    #[error("breakpoint sweep did not terminate after {0} transitions")]
    NumericalTieUnresolved(usize),
    #[error("segment states do not match the function ({states} states for {segments} segments)")]
    InconsistentStates { states: usize, segments: usize },
    #[error(transparent)]
    Pwl(#[from] PwlError),
}

/// KKT regime of a prosumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Self-balanced: generator interior, no grid trade.
    M1,
    /// Buying from the utility.
    M2,
    /// Selling to the utility.
    M3,
    /// Generator at capacity, no grid trade.
    M4,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::M1, Mode::M2, Mode::M3, Mode::M4];

    pub fn label(self) -> &'static str {
        match self {
            Mode::M1 => "M1",
            Mode::M2 => "M2",
            Mode::M3 => "M3",
            Mode::M4 => "M4",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Shared-energy levels at which a prosumer's regime changes.
///
/// `alpha` is where the generator's marginal cost reaches the sell price,
/// `beta` where it reaches the buy price, `gamma` where it hits capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

pub fn aux_params(p: &ProsumerParams, w_plus: f64, w_minus: f64) -> AuxParams {
    AuxParams {
        alpha: (w_minus - p.b) / p.c - p.d,
        beta: (w_plus - p.b) / p.c - p.d,
        gamma: p.p_max - p.d,
    }
}

/// Order in which a prosumer visits the regimes as `w0` increases.
pub fn migration_path(a: &AuxParams) -> Vec<Mode> {
    if a.gamma > a.beta {
        vec![Mode::M3, Mode::M1, Mode::M2]
    } else if a.gamma <= a.alpha {
        vec![Mode::M3, Mode::M4, Mode::M2]
    } else {
        vec![Mode::M3, Mode::M1, Mode::M4, Mode::M2]
    }
}

/// The all-selling segment that every market starts from at low prices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialSegment {
    pub slope: f64,
    pub intercept: f64,
    /// Price at which the first prosumer leaves the all-selling regime.
    pub trigger: f64,
}

pub fn initial_segment(lesm: &LesmSpec) -> InitialSegment {
    let n = lesm.prosumers.len() as f64;
    let a = lesm.a;
    let slope = n / (a * (1.0 + n));
    let trigger = lesm
        .prosumers
        .iter()
        .map(|p| {
            let aux = aux_params(p, lesm.w_plus, lesm.w_minus);
            lesm.w_minus + a * (1.0 + n) * aux.alpha.min(aux.gamma)
        })
        .fold(f64::INFINITY, f64::min);
    InitialSegment {
        slope,
        intercept: -lesm.w_minus * slope,
        trigger,
    }
}

/// Price window on which the functions are materialised.
///
/// `None` picks the default: one utility spread below `min(first breakpoint,
/// w-)` and one spread above the last breakpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceDomain {
    pub floor: Option<f64>,
    pub ceiling: Option<f64>,
}

/// A regime change of one prosumer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub price: f64,
    pub prosumer: usize,
    pub from: Mode,
    pub to: Mode,
}

/// One maximal price interval of constant regimes, before truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSegment {
    pub lo: f64,
    pub hi: f64,
    pub x: Affine,
    pub states: Vec<Mode>,
}

/// The full, untruncated breakpoint sweep of a market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub segments: Vec<SweepSegment>,
    pub transitions: Vec<Transition>,
}

/// Stationarity of the regimes summed over the market, as `X = k'·w0 + b'`.
fn aggregate_affine(lesm: &LesmSpec, aux: &[AuxParams], states: &[Mode]) -> Affine {
    let a = lesm.a;
    let mut den = 1.0;
    let mut slope = 0.0;
    let mut intercept = 0.0;
    for ((p, aux), &s) in lesm.prosumers.iter().zip(aux).zip(states) {
        match s {
            Mode::M1 => {
                den += a / (p.c + a);
                slope += 1.0 / (p.c + a);
                intercept -= (p.b + p.c * p.d) / (p.c + a);
            }
            Mode::M2 => {
                den += 1.0;
                slope += 1.0 / a;
                intercept -= lesm.w_plus / a;
            }
            Mode::M3 => {
                den += 1.0;
                slope += 1.0 / a;
                intercept -= lesm.w_minus / a;
            }
            Mode::M4 => intercept += aux.gamma,
        }
    }
    Affine::new(slope / den, intercept / den)
}

/// One prosumer's shared energy on a segment with aggregate `x`.
fn individual_affine(
    lesm: &LesmSpec,
    p: &ProsumerParams,
    aux: &AuxParams,
    mode: Mode,
    x: Affine,
) -> Affine {
    let a = lesm.a;
    match mode {
        Mode::M1 => Affine::new(
            (1.0 - a * x.slope) / (p.c + a),
            (-p.b - p.c * p.d - a * x.intercept) / (p.c + a),
        ),
        Mode::M2 => Affine::new(1.0 / a - x.slope, -lesm.w_plus / a - x.intercept),
        Mode::M3 => Affine::new(1.0 / a - x.slope, -lesm.w_minus / a - x.intercept),
        Mode::M4 => Affine::new(0.0, aux.gamma),
    }
}

/// Next regime and the price at which the prosumer enters it, given the
/// current segment's aggregate `x`. `None` once the prosumer is buying.
fn trigger(
    lesm: &LesmSpec,
    p: &ProsumerParams,
    aux: &AuxParams,
    mode: Mode,
    x: Affine,
) -> Option<(f64, Mode)> {
    let solve = |target: f64| {
        let xm = individual_affine(lesm, p, aux, mode, x);
        (target - xm.intercept) / xm.slope
    };
    match mode {
        Mode::M3 if aux.gamma <= aux.alpha => Some((solve(aux.gamma), Mode::M4)),
        Mode::M3 => Some((solve(aux.alpha), Mode::M1)),
        Mode::M1 if aux.gamma <= aux.beta => Some((solve(aux.gamma), Mode::M4)),
        Mode::M1 => Some((solve(aux.beta), Mode::M2)),
        // saturated until the balance price w0 - a(gamma + X) reaches w+
        Mode::M4 => {
            let a = lesm.a;
            let w = (lesm.w_plus + a * (aux.gamma + x.intercept)) / (1.0 - a * x.slope);
            Some((w, Mode::M2))
        }
        Mode::M2 => None,
    }
}

fn tie(a: f64, b: f64) -> bool {
    a.is_finite() && b.is_finite() && (a - b).abs() <= TIE_TOL * (1.0 + a.abs().max(b.abs()))
}

/// Trace every regime change of the market from `w0 = -inf` upwards.
pub fn sweep(lesm: &LesmSpec) -> Result<Sweep, BestResponseError> {
    let n = lesm.prosumers.len();
    let aux: Vec<AuxParams> = lesm
        .prosumers
        .iter()
        .map(|p| aux_params(p, lesm.w_plus, lesm.w_minus))
        .collect();
    let mut states = vec![Mode::M3; n];
    let mut segments: Vec<SweepSegment> = Vec::new();
    let mut transitions = Vec::new();
    let mut lo = f64::NEG_INFINITY;
    // every prosumer changes regime at most three times
    let limit = 3 * n + 1;

    loop {
        let mut x = aggregate_affine(lesm, &aux, &states);
        // Apply transitions due at the current breakpoint (zero-length stays,
        // e.g. entering capacity exactly at the buy price) before opening a
        // segment.
        let candidates = loop {
            let cands: Vec<(usize, f64, Mode)> = (0..n)
                .filter_map(|m| {
                    trigger(lesm, &lesm.prosumers[m], &aux[m], states[m], x)
                        .map(|(w, to)| (m, w, to))
                })
                .collect();
            let due: Vec<_> = cands
                .iter()
                .filter(|(_, w, _)| lo.is_finite() && (*w <= lo || tie(*w, lo)))
                .copied()
                .collect();
            if due.is_empty() {
                break cands;
            }
            for (m, _, to) in due {
                transitions.push(Transition {
                    price: lo,
                    prosumer: m,
                    from: states[m],
                    to,
                });
                states[m] = to;
            }
            if transitions.len() > limit {
                return Err(BestResponseError::NumericalTieUnresolved(transitions.len()));
            }
            x = aggregate_affine(lesm, &aux, &states);
        };

        let next = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        segments.push(SweepSegment {
            lo,
            hi: next,
            x,
            states: states.clone(),
        });
        if !next.is_finite() {
            break;
        }
        for &(m, w, to) in &candidates {
            if tie(w, next) {
                transitions.push(Transition {
                    price: next,
                    prosumer: m,
                    from: states[m],
                    to,
                });
                states[m] = to;
            }
        }
        if transitions.len() > limit {
            return Err(BestResponseError::NumericalTieUnresolved(transitions.len()));
        }
        lo = next;
    }
    Ok(Sweep {
        segments,
        transitions,
    })
}

/// Best response of one market on a truncated price domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    pub node_id: u64,
    pub aux: Vec<AuxParams>,
    /// Uncleared energy `X` as a function of the base price `w0`.
    pub x_of_w0: PiecewiseLinear,
    /// Regime of every prosumer on each piece of `x_of_w0`.
    pub states: Vec<Vec<Mode>>,
    /// Grid exchange `P` as a function of `X`.
    pub p_of_x: PiecewiseLinear,
    /// Range of `x_of_w0` pieces merged into each piece of `p_of_x`.
    pub p_sources: Vec<(usize, usize)>,
    pub sweep: Sweep,
}

/// Materialise `X(w0)` on a price domain, with per-piece regimes.
pub fn build_x_of_w0(
    lesm: &LesmSpec,
    domain: PriceDomain,
) -> Result<(PiecewiseLinear, Vec<Vec<Mode>>, Sweep), BestResponseError> {
    let sw = sweep(lesm)?;
    let spread = lesm.w_plus - lesm.w_minus;
    let first = sw.segments[0].hi;
    let last = sw.segments[sw.segments.len() - 1].lo;
    let default_floor = first.min(lesm.w_minus) - spread;
    let floor = match domain.floor {
        Some(f) if f < first && !tie(f, first) => f,
        Some(f) => {
            log::warn!(
                "price floor {f} is above the first breakpoint {first}; using {default_floor}"
            );
            default_floor
        }
        None => default_floor,
    };
    let last_bp = if last.is_finite() { last } else { first };
    let ceiling = domain.ceiling.unwrap_or(last_bp + spread);
    if !(ceiling > floor) {
        return Err(BestResponseError::DomainTooNarrow { floor, ceiling });
    }

    let mut knots = vec![floor];
    let mut pieces = Vec::new();
    let mut states = Vec::new();
    for seg in &sw.segments {
        if seg.hi <= floor || seg.lo >= ceiling || tie(seg.lo, ceiling) {
            continue;
        }
        let hi = if seg.hi >= ceiling || tie(seg.hi, ceiling) {
            ceiling
        } else {
            seg.hi
        };
        if hi <= *knots.last().unwrap() {
            continue;
        }
        knots.push(hi);
        pieces.push(seg.x);
        states.push(seg.states.clone());
        if hi == ceiling {
            break;
        }
    }
    let f = PiecewiseLinear::new(knots, pieces)?;
    Ok((f, states, sw))
}

/// Re-express the grid exchange as a function of `X`, piece by piece.
///
/// Pieces where `X` is flat (every prosumer at capacity) collapse to a single
/// point and are skipped; continuity of the neighbours covers that point.
pub fn build_p_of_x(
    lesm: &LesmSpec,
    x_fun: &PiecewiseLinear,
    states: &[Vec<Mode>],
) -> Result<(PiecewiseLinear, Vec<(usize, usize)>), BestResponseError> {
    if states.len() != x_fun.len() {
        return Err(BestResponseError::InconsistentStates {
            states: states.len(),
            segments: x_fun.len(),
        });
    }
    let a = lesm.a;
    let aux: Vec<AuxParams> = lesm
        .prosumers
        .iter()
        .map(|p| aux_params(p, lesm.w_plus, lesm.w_minus))
        .collect();

    let mut knots: Vec<f64> = Vec::new();
    let mut pieces = Vec::new();
    let mut sources = Vec::new();
    let mut flat_point = None;
    for (j, seg_states) in states.iter().enumerate() {
        let (t_lo, t_hi, xa) = x_fun.piece(j);
        let mut k_p = 0.0;
        let mut b_p = 0.0;
        if seg_states.iter().all(|&s| s == Mode::M4) {
            let level: f64 = aux.iter().map(|x| x.gamma).sum();
            flat_point.get_or_insert((xa.at(t_lo), level, j));
            continue;
        }
        // invert X = k'·w0 + b' into w0 = k_X·X + b_X
        let k_x = 1.0 / xa.slope;
        let b_x = -xa.intercept / xa.slope;
        for ((p, aux), &s) in lesm.prosumers.iter().zip(&aux).zip(seg_states) {
            match s {
                Mode::M1 => {
                    k_p += (k_x - a) / (p.c + a);
                    b_p += (b_x - p.b - p.c * p.d) / (p.c + a);
                }
                Mode::M2 => b_p += aux.beta.min(aux.gamma),
                Mode::M3 => b_p += aux.alpha.min(aux.gamma),
                Mode::M4 => b_p += aux.gamma,
            }
        }
        let (x_lo, x_hi) = (xa.at(t_lo), xa.at(t_hi));
        if x_hi - x_lo <= KNOT_GAP_TOL * (1.0 + x_hi.abs()) {
            continue;
        }
        if knots.is_empty() {
            knots.push(x_lo);
        }
        knots.push(x_hi);
        pieces.push(Affine::new(k_p, b_p));
        sources.push((j, j));
    }
    if pieces.is_empty() {
        // X is constant on the whole domain
        let (x, level, j) = flat_point.expect("at least one piece");
        return Ok((
            PiecewiseLinear::new(vec![x, x], vec![Affine::new(0.0, level)])?,
            vec![(j, j)],
        ));
    }
    let raw = PiecewiseLinear::new(knots, pieces)?;
    let merged = raw.merged(KNOT_GAP_TOL);
    if merged.len() == raw.len() {
        return Ok((raw, sources));
    }
    // recompute source ranges for merged pieces
    let mut merged_sources = Vec::with_capacity(merged.len());
    let mut k = 0;
    for i in 0..merged.len() {
        let (_, hi, _) = merged.piece(i);
        let start = sources[k].0;
        while k + 1 < raw.len() && raw.knots()[k + 1] < hi {
            k += 1;
        }
        merged_sources.push((start, sources[k].1));
        k += 1;
    }
    Ok((merged, merged_sources))
}

/// Price `w0` at which the market's uncleared energy equals `x_star`.
pub fn invert_price(x_fun: &PiecewiseLinear, x_star: f64) -> Result<f64, PwlError> {
    x_fun.invert(x_star)
}

/// One prosumer's decision implied by a regime and the aggregate at `w0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub x: f64,
    pub p: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    pub mode: Mode,
}

impl BestResponse {
    pub fn build(lesm: &LesmSpec, domain: PriceDomain) -> Result<Self, BestResponseError> {
        let (x_of_w0, states, sweep) = build_x_of_w0(lesm, domain)?;
        let (p_of_x, p_sources) = build_p_of_x(lesm, &x_of_w0, &states)?;
        Ok(Self {
            node_id: lesm.node_id,
            aux: lesm
                .prosumers
                .iter()
                .map(|p| aux_params(p, lesm.w_plus, lesm.w_minus))
                .collect(),
            x_of_w0,
            states,
            p_of_x,
            p_sources,
            sweep,
        })
    }

    /// `X` at the domain ends.
    pub fn x_range(&self) -> (f64, f64) {
        self.x_of_w0.end_values()
    }

    /// Per-prosumer decisions at `w0`, reconstructed from the sweep regimes.
    ///
    /// Valid for any price, not only inside the materialised domain.
    pub fn allocation_at(&self, lesm: &LesmSpec, w0: f64) -> Vec<Allocation> {
        let segs = &self.sweep.segments;
        let k = segs.partition_point(|s| s.hi < w0).min(segs.len() - 1);
        let seg = &segs[k];
        let x_total = seg.x.at(w0);
        lesm.prosumers
            .iter()
            .zip(&self.aux)
            .zip(&seg.states)
            .map(|((p, aux), &mode)| {
                let x = individual_affine(lesm, p, aux, mode, Affine::new(0.0, x_total)).at(w0);
                let (gen, p_plus, p_minus) = match mode {
                    Mode::M1 => (x + p.d, 0.0, 0.0),
                    Mode::M2 => {
                        let g = p.p_max.min((lesm.w_plus - p.b) / p.c);
                        (g, p.d + x - g, 0.0)
                    }
                    Mode::M3 => {
                        let g = p.p_max.min((lesm.w_minus - p.b) / p.c);
                        (g, 0.0, g - p.d - x)
                    }
                    Mode::M4 => (p.p_max, 0.0, 0.0),
                };
                Allocation {
                    x,
                    p: gen,
                    p_plus,
                    p_minus,
                    mode,
                }
            })
            .collect()
    }
}
