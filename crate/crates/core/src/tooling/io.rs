//! Versioned JSON case files.
//!
//! Market quantities are stored in kW and $/kWh, network data in p.u. Field
//! names carry their unit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_case, BranchSpec, LesmSpec, MarketUnits, ModelError, NetworkCase, NodeId, NodeSpec,
    ProsumerParams, ValidatedCase,
};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum CaseIoError {
    #[error("{}: {error}", path.display())]
    Io {
        path: PathBuf,
        error: std::io::Error,
    },
    #[error("parse error at {}{field}: {message}", location(*line, *column))]
    Parse {
        /// Path of the offending field, e.g. `branches[0].x_pu`.
        field: String,
        line: Option<usize>,
        column: Option<usize>,
        message: String,
    },
    #[error("unsupported format_version {}; expected {FORMAT_VERSION}", found.as_deref().unwrap_or("(missing)"))]
    UnsupportedVersion { found: Option<String> },
    #[error("invalid case: {0}")]
    Invalid(ModelError),
}

fn location(line: Option<usize>, column: Option<usize>) -> String {
    match (line, column) {
        (Some(l), Some(c)) => format!("line {l}, column {c}, "),
        _ => String::new(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    format_version: u64,
    base_power_kw: f64,
    nodes: Vec<NodeRecord>,
    branches: Vec<BranchRecord>,
    lesms: Vec<LesmRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: NodeId,
    is_slack: bool,
    v_min_pu: f64,
    v_max_pu: f64,
    q_min_pu: f64,
    q_max_pu: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchRecord {
    from: NodeId,
    to: NodeId,
    r_pu: f64,
    x_pu: f64,
    l_max_pu: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LesmRecord {
    node: NodeId,
    a: f64,
    w_plus: f64,
    w_minus: f64,
    prosumers: Vec<ProsumerRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProsumerRecord {
    c: f64,
    b: f64,
    d_kw: f64,
    p_max_kw: f64,
}

impl From<&NetworkCase> for CaseFile {
    fn from(case: &NetworkCase) -> Self {
        let case = case.to_kilowatt();
        CaseFile {
            format_version: FORMAT_VERSION,
            base_power_kw: case.base_power,
            nodes: case
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id,
                    is_slack: n.is_slack,
                    v_min_pu: n.v_min,
                    v_max_pu: n.v_max,
                    q_min_pu: n.q_min,
                    q_max_pu: n.q_max,
                })
                .collect(),
            branches: case
                .branches
                .iter()
                .map(|b| BranchRecord {
                    from: b.from,
                    to: b.to,
                    r_pu: b.r,
                    x_pu: b.x,
                    l_max_pu: b.l_max,
                })
                .collect(),
            lesms: case
                .lesms
                .iter()
                .map(|m| LesmRecord {
                    node: m.node_id,
                    a: m.a,
                    w_plus: m.w_plus,
                    w_minus: m.w_minus,
                    prosumers: m
                        .prosumers
                        .iter()
                        .map(|p| ProsumerRecord {
                            c: p.c,
                            b: p.b,
                            d_kw: p.d,
                            p_max_kw: p.p_max,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl From<CaseFile> for NetworkCase {
    fn from(f: CaseFile) -> Self {
        NetworkCase {
            base_power: f.base_power_kw,
            nodes: f
                .nodes
                .into_iter()
                .map(|n| NodeSpec {
                    id: n.id,
                    is_slack: n.is_slack,
                    v_min: n.v_min_pu,
                    v_max: n.v_max_pu,
                    q_min: n.q_min_pu,
                    q_max: n.q_max_pu,
                })
                .collect(),
            branches: f
                .branches
                .into_iter()
                .map(|b| BranchSpec {
                    from: b.from,
                    to: b.to,
                    r: b.r_pu,
                    x: b.x_pu,
                    l_max: b.l_max_pu,
                })
                .collect(),
            lesms: f
                .lesms
                .into_iter()
                .map(|m| LesmSpec {
                    node_id: m.node,
                    a: m.a,
                    w_plus: m.w_plus,
                    w_minus: m.w_minus,
                    prosumers: m
                        .prosumers
                        .into_iter()
                        .map(|p| ProsumerParams {
                            c: p.c,
                            b: p.b,
                            d: p.d_kw,
                            p_max: p.p_max_kw,
                        })
                        .collect(),
                })
                .collect(),
            units: MarketUnits::Kilowatt,
        }
    }
}

/// Rename a model field path (`branches[0].x`) to its file name (`branches[0].x_pu`).
fn file_field(model_field: &str) -> String {
    let (head, last) = model_field.rsplit_once('.').unwrap_or(("", model_field));
    let renamed = match (
        head.starts_with("nodes"),
        head.starts_with("branches"),
        last,
    ) {
        (true, _, "v_min" | "v_max" | "q_min" | "q_max") => format!("{last}_pu"),
        (_, true, "r" | "x" | "l_max") => format!("{last}_pu"),
        (_, _, "d" | "p_max") if head.contains("prosumers") => format!("{last}_kw"),
        _ => last.to_string(),
    };
    if head.is_empty() {
        renamed
    } else {
        format!("{head}.{renamed}")
    }
}

/// Parse without checking model invariants.
pub fn parse_case_unvalidated(text: &str) -> Result<NetworkCase, CaseIoError> {
    let json_error = |e: serde_json::Error, field: String| CaseIoError::Parse {
        field,
        line: Some(e.line()),
        column: Some(e.column()),
        message: e.to_string(),
    };
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| json_error(e, String::new()))?;
    match value.get("format_version") {
        Some(v) if v.as_u64() == Some(FORMAT_VERSION) => {}
        other => {
            return Err(CaseIoError::UnsupportedVersion {
                found: other.map(|v| v.to_string()),
            })
        }
    }
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: CaseFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        json_error(e.into_inner(), field)
    })?;
    Ok(file.into())
}

/// Parse and validate a case file.
pub fn parse_case(text: &str) -> Result<ValidatedCase, CaseIoError> {
    validate_case(parse_case_unvalidated(text)?).map_err(|e| match e {
        ModelError::ParameterOutOfRange {
            field,
            value,
            reason,
        } => CaseIoError::Parse {
            field: file_field(&field),
            line: None,
            column: None,
            message: format!("{value} is out of range: {reason}"),
        },
        other => CaseIoError::Invalid(other),
    })
}

/// Pretty JSON with a trailing newline. Market data is written in kW.
pub fn case_to_string(case: &NetworkCase) -> String {
    let mut s = serde_json::to_string_pretty(&CaseFile::from(case)).expect("case serializes");
    s.push('\n');
    s
}

pub fn load_case(path: &Path) -> Result<ValidatedCase, CaseIoError> {
    let text = std::fs::read_to_string(path).map_err(|error| CaseIoError::Io {
        path: path.to_path_buf(),
        error,
    })?;
    parse_case(&text)
}

pub fn save_case(case: &NetworkCase, path: &Path) -> Result<(), CaseIoError> {
    std::fs::write(path, case_to_string(case)).map_err(|error| CaseIoError::Io {
        path: path.to_path_buf(),
        error,
    })
}
