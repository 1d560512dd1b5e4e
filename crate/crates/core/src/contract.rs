//! The online two-step procedure and contract accounting.
//!
//! Each slot first minimizes pumping cost. When that schedule draws less
//! energy than the signal allows, a second program stores as much of the
//! difference as possible in the tanks. Tank volumes carry over to the next
//! slot.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use misocp::{branch_and_bound, SolveReport, SolveSettings};

use crate::error::{Error, Result};
use crate::hydraulics::{check_schedule, energy_audit, AuditReport, Schedule, SlotInput, Violation};
use crate::network::{check_theorem1, default_active_graph, ActiveGraph, Network};
use crate::recon::{exactness_report, reconstruct, recover_pump_speeds, ExactnessReport};
use crate::relax::{build_harvest, build_min_cost, harvested_energy, BuiltProgram, Grid, RelaxedSolution};
use crate::scenario::Scenario;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractConfig {
    pub grid: Grid,
    pub settings: SolveSettings,
    /// Keep going after a slot fails, holding the last tank state.
    pub continue_on_failure: bool,
}

impl ContractConfig {
    pub fn new(grid: Grid) -> Self {
        Self { grid, settings: SolveSettings::default(), continue_on_failure: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    /// Cost minimization only.
    Step1,
    /// Harvest maximization under the signal.
    Step2,
    /// Step 2 was due but had no solution; the step-1 schedule was used.
    Step2Fallback,
    /// No schedule; only recorded with `continue_on_failure`.
    Failed,
}

impl Step {
    pub fn as_str(&self) -> &'static str {
        match self {
            Step::Step1 => "step1",
            Step::Step2 => "step2",
            Step::Step2Fallback => "step2_fallback",
            Step::Failed => "failed",
        }
    }
}

/// A solved, reconstructed slot program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Reconstructed solution with pump speeds filled in.
    pub solution: RelaxedSolution,
    /// Decoded incumbent before reconstruction.
    pub raw: RelaxedSolution,
    pub exactness: ExactnessReport,
    pub report: SolveReport,
    /// Electrical pump energy, J.
    pub e_pump: f64,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotResult {
    pub k: usize,
    pub step: Step,
    pub schedule: Schedule,
    /// Electrical pump energy, J.
    pub e_pump: f64,
    /// Average drawn power, W.
    pub gamma_w: f64,
    pub r_w: f64,
    /// Energy bought beyond the signal, `max(0, E − r δ)`, J.
    pub purchased_j: f64,
    /// $/J.
    pub price: f64,
    /// `price · |γ − r| · δ`, $.
    pub imbalance_cost: f64,
    /// `ρ g δ Σ (A/2)(H² − H_prev²)`, J.
    pub harvested_j: f64,
    pub audit: Option<AuditReport>,
    pub step1_report: Option<SolveReport>,
    pub step2_report: Option<SolveReport>,
    pub tank_heads: BTreeMap<String, f64>,
    pub tank_volumes: BTreeMap<String, f64>,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractLedger {
    pub seed: Option<u64>,
    pub topology_holds: bool,
    pub slots: Vec<SlotResult>,
    pub total_imbalance_cost: f64,
    pub total_e_pump: f64,
    pub total_purchased_j: f64,
}

fn solve(net: &Network, g: &ActiveGraph, slot: &SlotInput, built: &BuiltProgram, settings: &SolveSettings) -> Result<StepOutcome> {
    let report = branch_and_bound(&built.program, settings)?;
    let Some(x) = report.incumbent.as_ref() else {
        return Err(Error::Infeasible(format!("{} program for slot {}: {:?}", built.program.name, slot.k, report.status)));
    };
    let raw = built.decode(net, slot, x, report.gap);
    let exactness = exactness_report(net, g, &raw)?;
    let mut solution = match reconstruct(net, g, &raw) {
        Ok(s) => s,
        Err(Error::Refused(why)) => {
            log::warn!("slot {}: keeping the relaxed schedule, {why}", slot.k);
            raw.clone()
        }
        Err(e) => return Err(e),
    };
    solution.schedule.speed = recover_pump_speeds(net, g, &solution.schedule)?;
    let violations = check_schedule(net, g, slot, &solution.schedule)?;
    if !violations.is_empty() {
        log::warn!("slot {}: schedule misses {} constraint(s), first {:?}", slot.k, violations.len(), violations[0]);
    }
    let e_pump = solution.schedule.pump_energy(net, slot.delta_s);
    Ok(StepOutcome { solution, raw, exactness, report, e_pump, violations })
}

/// Minimum-cost schedule for the slot.
pub fn step1_min_cost(net: &Network, g: &ActiveGraph, slot: &SlotInput, cfg: &ContractConfig) -> Result<StepOutcome> {
    let built = build_min_cost(net, g, slot, &cfg.grid)?;
    solve(net, g, slot, &built, &cfg.settings)
}

/// Harvest-maximizing schedule. Only runs when the step-1 energy leaves room
/// under the signal.
pub fn step2_max_harvest(net: &Network, g: &ActiveGraph, slot: &SlotInput, step1_energy: f64, cfg: &ContractConfig) -> Result<StepOutcome> {
    if !(step1_energy < slot.r_watt * slot.delta_s) {
        return Err(Error::Refused(format!(
            "slot {}: step-1 energy {step1_energy:.6e} J is not below the signal budget {:.6e} J",
            slot.k,
            slot.r_watt * slot.delta_s
        )));
    }
    let built = build_harvest(net, g, slot, &cfg.grid)?;
    solve(net, g, slot, &built, &cfg.settings)
}

fn tank_state(net: &Network, s: &Schedule) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
    let heads = net.tank_outlets().map(|i| (net.nodes[i].id.clone(), s.head[i])).collect();
    let vols = net.tank_outlets().map(|i| (net.nodes[i].id.clone(), s.volume[i])).collect();
    (heads, vols)
}

/// Runs every slot of `scenario` (already resolved) on the network's default
/// on/off state.
pub fn run_contract(net: &Network, scenario: &Scenario, cfg: &ContractConfig) -> Result<ContractLedger> {
    scenario.validate()?;
    if scenario.slots.is_empty() {
        return Err(Error::Scenario("scenario has no slots; resolve it first".into()));
    }
    cfg.settings.validate().map_err(Error::Config)?;
    let g = default_active_graph(net);
    let topo = check_theorem1(net, &g);
    if !topo.holds {
        log::warn!("topology conditions fail; slot programs give bounds only: {:?}", topo.violations);
    }
    let mut volumes: BTreeMap<String, f64> = net.initial_tank_state().into_iter().map(|(id, (v, _))| (id, v)).collect();
    let mut slots = Vec::new();
    for k in 1..=scenario.slots.len() {
        let slot = scenario.slot_input(net, k, &volumes)?;
        let result = match run_slot(net, &g, &slot, cfg) {
            Ok(r) => r,
            Err(e) if cfg.continue_on_failure => {
                log::error!("slot {k} failed: {e}");
                failed_slot(net, &slot)
            }
            Err(e) => return Err(e),
        };
        volumes = result.tank_volumes.clone();
        slots.push(result);
    }
    Ok(ContractLedger {
        seed: scenario.seed,
        topology_holds: topo.holds,
        total_imbalance_cost: slots.iter().map(|s| s.imbalance_cost).sum(),
        total_e_pump: slots.iter().map(|s| s.e_pump).sum(),
        total_purchased_j: slots.iter().map(|s| s.purchased_j).sum(),
        slots,
    })
}

fn run_slot(net: &Network, g: &ActiveGraph, slot: &SlotInput, cfg: &ContractConfig) -> Result<SlotResult> {
    let first = step1_min_cost(net, g, slot, cfg)?;
    let mut step = Step::Step1;
    let mut step2_report = None;
    let mut chosen = first.clone();
    if first.e_pump < slot.r_watt * slot.delta_s {
        match step2_max_harvest(net, g, slot, first.e_pump, cfg) {
            Ok(second) => {
                step = Step::Step2;
                step2_report = Some(second.report.clone());
                chosen = second;
            }
            Err(e @ (Error::Infeasible(_) | Error::NoRealSpeed { .. } | Error::ConeViolated { .. })) => {
                log::warn!("slot {}: harvest program gave no schedule ({e}); using the step-1 schedule", slot.k);
                step = Step::Step2Fallback;
            }
            Err(e) => return Err(e),
        }
    }
    let s = chosen.solution.schedule;
    let e_pump = chosen.e_pump;
    let gamma = e_pump / slot.delta_s;
    let (tank_heads, tank_volumes) = tank_state(net, &s);
    Ok(SlotResult {
        k: slot.k,
        step,
        e_pump,
        gamma_w: gamma,
        r_w: slot.r_watt,
        purchased_j: (e_pump - slot.r_watt * slot.delta_s).max(0.0),
        price: slot.price,
        imbalance_cost: slot.price * (gamma - slot.r_watt).abs() * slot.delta_s,
        harvested_j: harvested_energy(net, slot, &s),
        audit: Some(energy_audit(net, g, slot, &s)?),
        step1_report: Some(first.report),
        step2_report,
        tank_heads,
        tank_volumes,
        violations: chosen.violations,
        schedule: s,
    })
}

fn failed_slot(net: &Network, slot: &SlotInput) -> SlotResult {
    let mut s = Schedule::zeros(net);
    for i in net.tank_outlets() {
        s.volume[i] = slot.prev_volume[i];
        s.head[i] = slot.prev_head(net, i);
    }
    let (tank_heads, tank_volumes) = tank_state(net, &s);
    SlotResult {
        k: slot.k,
        step: Step::Failed,
        schedule: s,
        e_pump: 0.0,
        gamma_w: 0.0,
        r_w: slot.r_watt,
        purchased_j: 0.0,
        price: slot.price,
        imbalance_cost: slot.price * slot.r_watt * slot.delta_s,
        harvested_j: 0.0,
        audit: None,
        step1_report: None,
        step2_report: None,
        tank_heads,
        tank_volumes,
        violations: Vec::new(),
    }
}

/// Column names of `ledger.csv`, in order. Tank head columns follow, one per
/// tank in network order.
pub const LEDGER_COLUMNS: [&str; 9] =
    ["k", "step", "e_pump_j", "gamma_w", "r_w", "purchased_j", "price", "imbalance_cost", "seed"];

pub fn write_ledger_csv(net: &Network, ledger: &ContractLedger, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: path.to_path_buf(), source },
        other => Error::Config(format!("{other:?}")),
    })?;
    let tanks: Vec<String> = net.tank_outlets().map(|i| net.nodes[i].id.clone()).collect();
    let mut header: Vec<String> = LEDGER_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(tanks.iter().map(|t| format!("head_{t}_m")));
    w.write_record(&header)?;
    let seed = ledger.seed.map(|s| s.to_string()).unwrap_or_default();
    for s in &ledger.slots {
        let mut row = vec![
            s.k.to_string(),
            s.step.as_str().to_string(),
            format!("{:.6}", s.e_pump),
            format!("{:.6}", s.gamma_w),
            format!("{:.6}", s.r_w),
            format!("{:.6}", s.purchased_j),
            format!("{:.6e}", s.price),
            format!("{:.6}", s.imbalance_cost),
            seed.clone(),
        ];
        row.extend(tanks.iter().map(|t| format!("{:.6}", s.tank_heads[t])));
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

/// Writes `ledger.csv`, `ledger.json`, `schedules/k<k>.json` and
/// `audit/k<k>.json` under `dir`.
pub fn write_outputs(net: &Network, ledger: &ContractLedger, dir: &Path) -> Result<()> {
    let io = |path: &Path, source| Error::Io { path: path.to_path_buf(), source };
    for sub in ["schedules", "audit"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| io(&p, e))?;
    }
    write_ledger_csv(net, ledger, &dir.join("ledger.csv"))?;
    let write = |path: std::path::PathBuf, text: String| std::fs::write(&path, text).map_err(|e| io(&path, e));
    write(dir.join("ledger.json"), serde_json::to_string_pretty(ledger)?)?;
    for s in &ledger.slots {
        let doc = s.schedule.to_doc(net, s.step != Step::Failed);
        write(dir.join(format!("schedules/k{}.json", s.k)), serde_json::to_string_pretty(&doc)?)?;
        if let Some(a) = &s.audit {
            write(dir.join(format!("audit/k{}.json", s.k)), serde_json::to_string_pretty(a)?)?;
        }
    }
    Ok(())
}
