//! `hydroharvest`: topology checks, single-slot solves, contract runs, audits
//! and program dumps from JSON inputs.
//!
//! Exit status is 0 on success, 1 when a model answer is negative (infeasible
//! slot, refused step, failed topology check, audit that does not close) and 2
//! on malformed input or usage errors.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use hydroharvest::contract::{run_contract, step1_min_cost, step2_max_harvest, write_outputs, ContractConfig, StepOutcome};
use hydroharvest::hydraulics::{check_schedule, energy_audit, Schedule, ScheduleDoc, SlotInput};
use hydroharvest::network::{check_theorem1, default_active_graph, Network};
use hydroharvest::recon::{exactness_report, reconstruct, recover_pump_speeds};
use hydroharvest::relax::{
    build_cone_relaxed, build_convexified, build_harvest, build_min_cost, build_reference, Grid, RelaxedSolution,
};
use hydroharvest::scenario::Scenario;
use hydroharvest::{Error, Result};
use misocp::SolveSettings;

#[derive(Parser)]
#[command(name = "hydroharvest", version, about = "Pump scheduling with tank energy harvesting under demand-response signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that the network admits exact reconstruction.
    CheckTopology {
        #[arg(long)]
        network: PathBuf,
    },
    /// Solve the cost-minimizing program for one slot.
    SolveStep1(SolveArgs),
    /// Solve the harvest program for one slot, after step 1 shows room under the signal.
    SolveStep2(SolveArgs),
    /// Run every slot of a scenario and write the ledger, schedules and audits.
    RunContract(ContractArgs),
    /// Check a schedule against every constraint and report its energy balance.
    Audit(AuditArgs),
    /// Turn a relaxed solution into an exact one.
    Reconstruct {
        #[arg(long)]
        network: PathBuf,
        /// Relaxed solution as written by `solve-step1 --out-dir` (raw.json).
        #[arg(long)]
        solution: PathBuf,
        /// Where to write the reconstructed solution; stdout gets a summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print one slot program as JSON, or its row counts per label.
    DumpProgram {
        #[command(flatten)]
        slot: SlotArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value_t = ProgramKind::Harvest)]
        kind: ProgramKind,
        /// Print `label count` lines instead of the full program.
        #[arg(long)]
        counts: bool,
    },
}

#[derive(Args)]
struct SlotArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    /// 1-based slot; standalone solves start from the initial tank state.
    #[arg(long, default_value_t = 1)]
    slot: usize,
    /// Overrides the seed of a drawn scenario.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GridArgs {
    /// Pump head bins.
    #[arg(long, default_value_t = 10)]
    grid_b: usize,
    /// Tank head bins.
    #[arg(long, default_value_t = 10)]
    grid_c: usize,
    /// Top pump head level, m.
    #[arg(long, default_value_t = 40.0)]
    zeta_max: f64,
    /// Top tank head level, m.
    #[arg(long, default_value_t = 30.0)]
    sigma_max: f64,
}

#[derive(Args)]
struct SolverArgs {
    /// Relative optimality gap at which branch-and-bound stops.
    #[arg(long)]
    tol_gap: Option<f64>,
    #[arg(long)]
    node_limit: Option<usize>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    slot: SlotArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Writes schedule.json, raw.json and report.json here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ContractArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Record failed slots and carry the last tank state instead of stopping.
    #[arg(long)]
    continue_on_failure: bool,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    slot: SlotArgs,
    /// Schedule to audit (schedules/k<k>.json of a contract run).
    #[arg(long)]
    schedule: PathBuf,
    /// Schedule of the previous slot; its tank volumes start this one.
    #[arg(long)]
    prev_schedule: Option<PathBuf>,
    /// Relative closure tolerance of the energy balance.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProgramKind {
    Reference,
    Convexified,
    ConeRelaxed,
    Harvest,
    MinCost,
}

impl GridArgs {
    fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid_b, self.zeta_max, self.grid_c, self.sigma_max)
    }
}

impl SolverArgs {
    fn settings(&self) -> Result<SolveSettings> {
        let mut s = SolveSettings::default();
        if let Some(g) = self.tol_gap {
            s.tol_gap = g;
        }
        if let Some(n) = self.node_limit {
            s.node_limit = n;
        }
        s.validate().map_err(Error::Config)?;
        Ok(s)
    }
}

impl SlotArgs {
    fn load(&self, prev_volume: &BTreeMap<String, f64>) -> Result<(Network, SlotInput)> {
        let net = Network::from_file(&self.network)?;
        let scenario = Scenario::from_file(&self.scenario)?.resolve(self.seed)?;
        let slot = scenario.slot_input(&net, self.slot, prev_volume)?;
        Ok((net, slot))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Writes a line to stdout. A closed pipe (`| head`) is not an error.
fn say(text: impl std::fmt::Display) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn print_json(value: &serde_json::Value) {
    say(serde_json::to_string_pretty(value).expect("json value serializes"));
}

fn solve_summary(net: &Network, step: &str, slot: &SlotInput, out: &StepOutcome) -> serde_json::Value {
    json!({
        "slot": slot.k,
        "step": step,
        "status": out.report.status,
        "objective": out.report.objective,
        "gap": out.report.gap,
        "nodes": out.report.nodes,
        "e_pump_j": out.e_pump,
        "signal_budget_j": slot.r_watt * slot.delta_s,
        "raw_max_excess_m": out.exactness.max_excess,
        "violations": out.violations.len(),
        "tank_heads_m": net.tank_outlets().map(|i| (net.nodes[i].id.clone(), out.solution.schedule.head[i])).collect::<BTreeMap<_, _>>(),
    })
}

fn save_outcome(net: &Network, dir: &Path, out: &StepOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    write_json(&dir.join("schedule.json"), &out.solution.schedule.to_doc(net, true))?;
    write_json(&dir.join("raw.json"), &out.raw)?;
    write_json(&dir.join("report.json"), &out.report)
}

fn solve(args: &SolveArgs, harvest: bool) -> Result<ExitCode> {
    let (net, slot) = args.slot.load(&BTreeMap::new())?;
    let g = default_active_graph(&net);
    let cfg = ContractConfig { grid: args.grid.grid()?, settings: args.solver.settings()?, continue_on_failure: false };
    let first = step1_min_cost(&net, &g, &slot, &cfg)?;
    let (step, out) = if harvest { ("step2", step2_max_harvest(&net, &g, &slot, first.e_pump, &cfg)?) } else { ("step1", first) };
    print_json(&solve_summary(&net, step, &slot, &out));
    if let Some(dir) = &args.out_dir {
        save_outcome(&net, dir, &out)?;
    }
    Ok(if out.violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn contract(args: &ContractArgs) -> Result<ExitCode> {
    let net = Network::from_file(&args.network)?;
    let scenario = Scenario::from_file(&args.scenario)?.resolve(args.seed)?;
    let cfg = ContractConfig {
        grid: args.grid.grid()?,
        settings: args.solver.settings()?,
        continue_on_failure: args.continue_on_failure,
    };
    let ledger = run_contract(&net, &scenario, &cfg)?;
    write_outputs(&net, &ledger, &args.out_dir)?;
    print_json(&json!({
        "slots": ledger.slots.len(),
        "steps": ledger.slots.iter().map(|s| s.step.as_str()).collect::<Vec<_>>(),
        "seed": ledger.seed,
        "topology_holds": ledger.topology_holds,
        "total_e_pump_j": ledger.total_e_pump,
        "total_purchased_j": ledger.total_purchased_j,
        "total_imbalance_cost": ledger.total_imbalance_cost,
        "out_dir": args.out_dir,
    }));
    Ok(ExitCode::SUCCESS)
}

fn audit(args: &AuditArgs) -> Result<ExitCode> {
    let net = Network::from_file(&args.slot.network)?;
    let prev = match &args.prev_schedule {
        Some(p) => read_json::<ScheduleDoc>(p)?.volume_m3,
        None => BTreeMap::new(),
    };
    let (_, slot) = args.slot.load(&prev)?;
    let schedule = Schedule::from_doc(&net, &read_json(&args.schedule)?)?;
    let g = default_active_graph(&net);
    let violations = check_schedule(&net, &g, &slot, &schedule)?;
    let report = energy_audit(&net, &g, &slot, &schedule)?;
    let closes = report.closes(args.tol);
    print_json(&json!({ "closes": closes, "audit": report, "violations": violations }));
    Ok(if closes && violations.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn reconstruct_cmd(network: &Path, solution: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let net = Network::from_file(network)?;
    let g = default_active_graph(&net);
    let raw: RelaxedSolution = read_json(solution)?;
    let before = exactness_report(&net, &g, &raw)?;
    let mut rec = reconstruct(&net, &g, &raw)?;
    rec.schedule.speed = recover_pump_speeds(&net, &g, &rec.schedule)?;
    let after = exactness_report(&net, &g, &rec)?;
    if let Some(path) = out {
        write_json(path, &rec)?;
    }
    print_json(&json!({
        "max_excess_before_m": before.max_excess,
        "max_excess_after_m": after.max_excess,
        "offending_before": before.offending,
        "schedule": rec.schedule.to_doc(&net, true),
    }));
    Ok(ExitCode::SUCCESS)
}

fn dump_program(slot_args: &SlotArgs, grid: &GridArgs, kind: ProgramKind, counts: bool) -> Result<ExitCode> {
    let (net, slot) = slot_args.load(&BTreeMap::new())?;
    let g = default_active_graph(&net);
    let built = match kind {
        ProgramKind::Reference => build_reference(&net, &g, &slot)?,
        ProgramKind::Convexified => build_convexified(&net, &g, &slot)?,
        ProgramKind::ConeRelaxed => build_cone_relaxed(&net, &g, &slot)?,
        ProgramKind::Harvest => build_harvest(&net, &g, &slot, &grid.grid()?)?,
        ProgramKind::MinCost => build_min_cost(&net, &g, &slot, &grid.grid()?)?,
    };
    let p = &built.program;
    if counts {
        say(format!("variables {}", p.num_vars()));
        say(format!("binaries {}", p.num_binaries()));
        say(format!("quadratic_rows {}", p.quad_rows.len()));
        for (label, n) in p.counts_by_label() {
            say(format!("{label} {n}"));
        }
    } else {
        say(serde_json::to_string_pretty(p)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::CheckTopology { network } => {
            let net = Network::from_file(&network)?;
            let rep = check_theorem1(&net, &default_active_graph(&net));
            if rep.holds {
                say("theorem1: holds");
                Ok(ExitCode::SUCCESS)
            } else {
                say("theorem1: fails");
                for v in &rep.violations {
                    say(format!("  {}", serde_json::to_string(v)?));
                }
                Ok(ExitCode::from(1))
            }
        }
        Command::SolveStep1(a) => solve(&a, false),
        Command::SolveStep2(a) => solve(&a, true),
        Command::RunContract(a) => contract(&a),
        Command::Audit(a) => audit(&a),
        Command::Reconstruct { network, solution, out } => reconstruct_cmd(&network, &solution, out.as_deref()),
        Command::DumpProgram { slot, grid, kind, counts } => dump_program(&slot, &grid, kind, counts),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_malformed_input() { 2 } else { 1 })
        }
    }
}
