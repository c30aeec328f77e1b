use serde::{Deserialize, Serialize};

use crate::clearing::{clear_market, ClearOptions, ClearingError, Timings};
use crate::model::ValidatedCase;

/// Median wall-clock times per clearing phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repeat: usize,
    pub workers: usize,
    pub best_response_ms: f64,
    pub solve_ms: f64,
    pub verification_ms: f64,
    pub total_ms: f64,
    pub runs: Vec<Timings>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Clear `case` `repeat` times (at least once) and report median phase timings.
pub fn bench(
    case: &ValidatedCase,
    repeat: usize,
    options: &ClearOptions,
) -> Result<BenchReport, ClearingError> {
    let runs = (0..repeat.max(1))
        .map(|_| clear_market(case, options).map(|r| r.timings))
        .collect::<Result<Vec<_>, _>>()?;
    let pick = |f: fn(&Timings) -> f64| median(runs.iter().map(f).collect());
    Ok(BenchReport {
        repeat: runs.len(),
        workers: options.workers.max(1),
        best_response_ms: pick(|t| t.best_response_ms),
        solve_ms: pick(|t| t.solve_ms),
        verification_ms: pick(|t| t.verification_ms),
        total_ms: pick(|t| t.total_ms),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
