// `!(a < b)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use esmclear_core::bestresp::{BestResponse, PriceDomain};
use esmclear_core::clearing::{clear_market, run_config, ClearOptions, ConfigMode};
use esmclear_core::model::{to_per_unit, NodeId, ValidatedCase};
use esmclear_core::tooling::{
    bench, best_response_csv, costs_csv, generate_case, load_case, prices_csv, result_json,
    save_case, sig12, voltages_csv, CaseIoError, ScenarioTemplate, Topology,
};

#[derive(Parser)]
#[command(
    name = "esmclear",
    version,
    about = "Two-layer prosumer energy-sharing market clearing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Template {
    ThreeRegion,
}

#[derive(Subcommand)]
enum Command {
    /// Check a case file.
    Validate {
        #[arg(long)]
        case: PathBuf,
    },
    /// Generate a case from a scenario template.
    Gen {
        #[arg(long, value_enum, default_value = "three-region")]
        template: Template,
        /// Number of market nodes (the slack node is added on top).
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        prosumers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Complete tree of this arity instead of a path.
        #[arg(long, conflicts_with = "network")]
        tree_arity: Option<usize>,
        /// Take nodes and branches from this case file.
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the best-response table of one market.
    Bestresp {
        #[arg(long)]
        case: PathBuf,
        /// Node id hosting the market.
        #[arg(long)]
        lesm: NodeId,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clear the market and write result.json, voltages.csv and prices.csv.
    Clear {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Widen every voltage band to [0.5, 1.5] p.u.
        #[arg(long)]
        no_voltage: bool,
        /// Relative optimality gap.
        #[arg(long, default_value_t = 1e-6)]
        gap: f64,
        /// Fail when verification fails instead of warning.
        #[arg(long)]
        strict: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        node_limit: Option<usize>,
    },
    /// Compare prosumer costs across market configurations and write costs.csv.
    Compare {
        #[arg(long)]
        case: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "ns,ls,gs,gs-nvc")]
        modes: Vec<ConfigMode>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Time repeated clearings.
    Bench {
        #[arg(long)]
        case: PathBuf,
        #[arg(long, default_value_t = 5)]
        repeat: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn load(path: &Path) -> Result<ValidatedCase> {
    load_case(path).map_err(|e| match e {
        CaseIoError::Io { .. } => anyhow!(e),
        other => anyhow!(other).context(format!("loading {}", path.display())),
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { case } => {
            let c = load(&case)?;
            let prosumers: usize = c.lesms().iter().map(|m| m.len()).sum();
            println!(
                "ok: {} nodes, {} branches, {} markets, {prosumers} prosumers",
                c.node_count(),
                c.branches().len(),
                c.lesms().len()
            );
        }
        Command::Gen {
            template: Template::ThreeRegion,
            nodes,
            prosumers,
            seed,
            tree_arity,
            network,
            out,
        } => {
            let mut t = ScenarioTemplate::three_region(nodes, prosumers, seed);
            if let Some(arity) = tree_arity {
                t.topology = Topology::Tree { arity };
            }
            if let Some(path) = network {
                let net = load(&path)?.into_case();
                t.topology = Topology::Network {
                    nodes: net.nodes,
                    branches: net.branches,
                };
            }
            let case = generate_case(&t)?;
            esmclear_core::model::validate_case(case.clone())
                .context("generated case is invalid")?;
            save_case(&case, &out)?;
        }
        Command::Bestresp { case, lesm, out } => {
            let c = to_per_unit(&load(&case)?)?;
            let Some(m) = c.lesms().iter().find(|m| m.node_id == lesm) else {
                bail!("no market at node {lesm}");
            };
            let br = BestResponse::build(m, PriceDomain::default())?;
            std::fs::write(&out, best_response_csv(&br, c.base_power()))
                .with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Clear {
            case,
            out,
            no_voltage,
            gap,
            strict,
            workers,
            node_limit,
        } => {
            if !(gap >= 0.0) {
                bail!("--gap must be nonnegative");
            }
            let c = load(&case)?;
            let mut opts = ClearOptions {
                disable_voltage: no_voltage,
                rel_gap: gap,
                strict,
                workers,
                ..ClearOptions::default()
            };
            if let Some(n) = node_limit {
                opts.node_limit = n;
            }
            let res = clear_market(&c, &opts)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out, "result.json", &result_json(&res))?;
            write(&out, "voltages.csv", &voltages_csv(&res))?;
            write(&out, "prices.csv", &prices_csv(&res))?;
            for w in &res.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "losses {} p.u., relative gap {}, {} nodes explored",
                sig12(res.objective),
                sig12(res.rel_gap),
                res.bnb.nodes
            );
        }
        Command::Compare {
            case,
            modes,
            out,
            workers,
        } => {
            let c = load(&case)?;
            let opts = ClearOptions {
                workers,
                ..ClearOptions::default()
            };
            let reports = modes
                .iter()
                .map(|&m| run_config(&c, m, &opts).with_context(|| format!("configuration {m}")))
                .collect::<Result<Vec<_>>>()?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out, "costs.csv", &costs_csv(&reports))?;
            for r in &reports {
                println!(
                    "{:<7} average {} $/kWh, total {} $",
                    r.mode.label(),
                    sig12(r.average),
                    sig12(r.total)
                );
            }
        }
        Command::Bench {
            case,
            repeat,
            workers,
        } => {
            let c = load(&case)?;
            let opts = ClearOptions {
                workers,
                ..ClearOptions::default()
            };
            let report = bench(&c, repeat, &opts)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
