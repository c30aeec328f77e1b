//! CSV and JSON artifacts. Numbers are written with 12 significant digits.

use crate::bestresp::BestResponse;
use crate::clearing::{ClearingResult, CostReport};

/// `x` with 12 significant digits, trailing zeros dropped, exponent form
/// outside `[1e-5, 1e12)`.
pub fn sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let e = format!("{x:.11e}");
    let (mantissa, exp) = e.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        trim_zeros(format!("{:.*}", (11 - exp) as usize, x))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(mut s: String) -> String {
    if s.contains('.') {
        let keep = s.trim_end_matches('0').trim_end_matches('.').len();
        s.truncate(keep);
    }
    s
}

fn table<const N: usize>(header: [&str; N], rows: impl IntoIterator<Item = [String; N]>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// `node,v_pu_magnitude`
pub fn voltages_csv(res: &ClearingResult) -> String {
    table(
        ["node", "v_pu_magnitude"],
        res.nodes.iter().map(|n| [n.id.to_string(), sig12(n.v_pu)]),
    )
}

/// `node,w0,w,X,P` with prices in $/kWh and energies in kW.
pub fn prices_csv(res: &ClearingResult) -> String {
    table(
        ["node", "w0", "w", "X", "P"],
        res.markets.iter().map(|m| {
            [
                m.node_id.to_string(),
                sig12(m.w0_star),
                sig12(m.w_star),
                sig12(m.x_star_kw),
                sig12(m.p_star_kw),
            ]
        }),
    )
}

/// `mode,total_cost,average_cost,load_kwh`
pub fn costs_csv(reports: &[CostReport]) -> String {
    table(
        ["mode", "total_cost", "average_cost", "load_kwh"],
        reports.iter().map(|r| {
            [
                r.mode.to_string(),
                sig12(r.total),
                sig12(r.average),
                sig12(r.load_kwh),
            ]
        }),
    )
}

/// `w0,X,P` at every knot of a best response; `X` and `P` scaled by `scale`.
pub fn best_response_csv(br: &BestResponse, scale: f64) -> String {
    table(
        ["w0", "X", "P"],
        br.x_of_w0.knots().iter().map(|&w0| {
            let x = br.x_of_w0.eval(w0).unwrap_or(f64::NAN);
            let p = br.p_of_x.eval(x).unwrap_or(f64::NAN);
            [sig12(w0), sig12(x * scale), sig12(p * scale)]
        }),
    )
}

pub fn result_json(res: &ClearingResult) -> String {
    let mut s = serde_json::to_string_pretty(res).expect("result serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(sig12(0.0), "0");
        assert_eq!(sig12(1.0), "1");
        assert_eq!(sig12(-0.25), "-0.25");
        assert_eq!(sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(sig12(123456.7890123456), "123456.789012");
        assert_eq!(sig12(2.0e-7), "2e-7");
        assert_eq!(sig12(1.23456789012345e15), "1.23456789012e15");
        assert_eq!(sig12(999999.9999999999), "1000000");
    }
}
