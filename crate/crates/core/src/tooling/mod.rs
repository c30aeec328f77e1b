//! Scenario generation, case files, reports and timing.

mod bench;
pub mod io;
mod report;
mod rng;
mod scenario;

pub use bench::{bench, BenchReport};
pub use io::{case_to_string, load_case, parse_case, save_case, CaseIoError, FORMAT_VERSION};
pub use report::{best_response_csv, costs_csv, prices_csv, result_json, sig12, voltages_csv};
pub use rng::SplitMix64;
pub use scenario::{
    generate_case, three_blocks, FeederDefaults, ParamRanges, Region, ScenarioError,
    ScenarioTemplate, Topology,
};
