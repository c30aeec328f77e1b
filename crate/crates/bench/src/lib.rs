//! Cases shared by the benchmarks.

use esmclear_core::model::{validate_case, ValidatedCase};
use esmclear_core::tooling::{generate_case, ScenarioTemplate, Topology};

/// Three-region path feeder with `nodes` markets of `prosumers` each.
pub fn path_case(nodes: usize, prosumers: usize, seed: u64) -> ValidatedCase {
    let t = ScenarioTemplate::three_region(nodes, prosumers, seed);
    validate_case(generate_case(&t).expect("template is valid")).expect("generated case is valid")
}

/// Three-region ternary tree, the shape used for large feeders.
pub fn tree_case(nodes: usize, prosumers: usize, seed: u64) -> ValidatedCase {
    let mut t = ScenarioTemplate::three_region(nodes, prosumers, seed);
    t.topology = Topology::Tree { arity: 3 };
    validate_case(generate_case(&t).expect("template is valid")).expect("generated case is valid")
}
