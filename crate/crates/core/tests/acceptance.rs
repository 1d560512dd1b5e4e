//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p hydroharvest --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use hydroharvest::contract::{run_contract, step1_min_cost, step2_max_harvest, ContractConfig, ContractLedger, Step, StepOutcome};
use hydroharvest::hydraulics::{check_schedule, energy_audit, pump_head_gain, Schedule, SlotInput};
use hydroharvest::network::{check_theorem1, Network};
use hydroharvest::recon::{exactness_report, reconstruct, recover_pump_speeds};
use hydroharvest::relax::{build_cone_relaxed, build_convexified, build_harvest, build_min_cost, BuiltProgram, Grid};
use hydroharvest::scenario::Scenario;
use misocp::{branch_and_bound, relative_gap, solve_socp, solve_with_bounds, SocpStatus, SolveSettings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Debug>(e: E) -> String {
    format!("{e:?}")
}

/// Toy slot: 36 m³/h at the junction.
fn toy_slot(net: &Network, r_watt: f64) -> SlotInput {
    let demands = BTreeMap::from([("j".to_string(), 0.01)]);
    common::slot(net, &demands, r_watt)
}

fn toy_grid() -> Grid {
    Grid::new(8, 40.0, 8, 16.0).expect("grid")
}

// ---- 1: toy oracle ----

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let net = common::toy();
    let g = common::active(&net);
    let r_watt = 45_000.0;
    let slot = toy_slot(&net, r_watt);
    let grid = toy_grid();
    let built = build_harvest(&net, &g, &slot, &grid).map_err(err)?;
    let rep = branch_and_bound(&built.program, &SolveSettings::default()).map_err(err)?;
    let n4 = rep.objective.ok_or_else(|| format!("no incumbent: {:?}", rep.status))?;

    // Forward simulation of the original slot problem on a 200 x 200 grid.
    let pe = net.edge("p").unwrap();
    let p = net.edges[pe].pump().unwrap().clone();
    let f = net.edges[net.edge("l").unwrap()].friction().unwrap();
    let t = net.node("t").map_err(err)?;
    let tank = net.tank_params(t).clone();
    let inlet_elev = net.nodes[net.node("t:in").map_err(err)?].elevation_m;
    let min_head = net.nodes[net.node("j").map_err(err)?].min_head_m;
    let demand = 0.01;
    let mut best: Option<(f64, f64)> = None;
    for iw in 0..200 {
        let w = p.w_min + (p.w_max - p.w_min) * iw as f64 / 199.0;
        for iq in 0..200 {
            let q = p.q_min + (p.q_max - p.q_min) * iq as f64 / 199.0;
            let gain = p.a * q * q + p.b * q * w + p.c * w * w;
            let fill = q - demand;
            let volume = tank.initial_m3 + slot.delta_s * fill;
            let inlet_pressure = gain - f * fill * fill - inlet_elev;
            let feasible = fill >= net.big_m.min_flow
                && gain >= min_head
                && inlet_pressure >= inlet_elev
                && volume <= tank.capacity_m3
                && gain * q / p.eta <= r_watt / (net.rho * net.g);
            if feasible {
                let h = volume / tank.area_m2;
                let obj = tank.area_m2 * h * h;
                if best.map_or(true, |(b, _)| obj > b) {
                    best = Some((obj, h));
                }
            }
        }
    }
    let (n1, h1) = best.ok_or("grid search found no feasible point")?;
    let step = grid.tank_step();
    let c = (h1 / step).floor();
    let cell = tank.area_m2 * step * step * ((c + 1.0).powi(2) - c.powi(2));
    let elapsed = start.elapsed();
    ensure((n4 - n1).abs() <= cell, || format!("incumbent {n4:.6} vs grid search {n1:.6}, cell increment {cell:.3}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("incumbent {n4:.4}, grid search {n1:.4}, |diff| {:.4} <= cell {cell:.1}, {elapsed:.2?}", (n4 - n1).abs()))
}

// ---- 2: exactness pipeline ----

fn criterion_2(audited: &mut Vec<(Network, SlotInput, Schedule)>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = toy_grid();
    let settings = SolveSettings::default();
    let (mut qualifying, mut tried, mut worst_raw) = (0, 0, f64::INFINITY);
    let mut worst_after = 0.0f64;
    while qualifying < 20 && tried < 400 {
        tried += 1;
        let (net, demands) = common::random_network(&mut rng, 6, 2);
        ensure(net.nodes.len() <= 12, || format!("generated {} nodes", net.nodes.len()))?;
        let g = common::active(&net);
        ensure(check_theorem1(&net, &g).holds, || "generator broke the topology conditions".into())?;
        let slot = common::slot(&net, &demands, rng.gen_range(5e4..5e5));
        let built = if rng.gen_bool(0.5) { build_harvest(&net, &g, &slot, &grid) } else { build_min_cost(&net, &g, &slot, &grid) }
            .map_err(err)?;
        let rep = branch_and_bound(&built.program, &settings).map_err(err)?;
        let Some(x) = rep.incumbent.as_ref() else { continue };
        let raw = built.decode(&net, &slot, x, rep.gap);
        let before = exactness_report(&net, &g, &raw).map_err(err)?;
        if before.max_excess <= 1e-4 {
            continue;
        }
        worst_raw = worst_raw.min(before.max_excess);
        let mut rec = reconstruct(&net, &g, &raw).map_err(err)?;
        let after = exactness_report(&net, &g, &rec).map_err(err)?;
        let direct = g
            .edges()
            .filter_map(|e| net.edges[e].friction().map(|f| (rec.schedule.gain[e] - f * rec.schedule.flow[e].powi(2)).abs()))
            .fold(0.0f64, f64::max);
        worst_after = worst_after.max(after.max_excess).max(direct);
        ensure(direct <= 1e-6 && after.max_excess <= 1e-6, || format!("graph {tried}: loss gap {direct:.3e} after reconstruction"))?;
        ensure(rec.schedule.flow == raw.schedule.flow && rec.schedule.volume == raw.schedule.volume, || {
            format!("graph {tried}: flows or volumes changed")
        })?;
        let obj = |b: &BuiltProgram, s| b.program.objective.eval(&b.encode(&net, s));
        ensure(obj(&built, &rec).to_bits() == obj(&built, &raw).to_bits() && rec.objective.to_bits() == raw.objective.to_bits(), || {
            format!("graph {tried}: objective changed")
        })?;
        rec.schedule.speed = recover_pump_speeds(&net, &g, &rec.schedule).map_err(err)?;
        let v = check_schedule(&net, &g, &slot, &rec.schedule).map_err(err)?;
        ensure(v.is_empty(), || format!("graph {tried}: checker reports {v:?}"))?;
        audited.push((net.clone(), slot.clone(), rec.schedule.clone()));
        qualifying += 1;
    }
    ensure(qualifying >= 20, || format!("only {qualifying} of {tried} graphs had a raw excess above 1e-4"))?;
    Ok(format!("{qualifying} graphs (of {tried} drawn), raw max excess >= {worst_raw:.3e}, after <= {worst_after:.1e}"))
}

// ---- 3: relaxation ordering ----

fn criterion_3() -> Outcome {
    let net = common::toy();
    let g = common::active(&net);
    let slot = toy_slot(&net, 100_000.0);
    let grid = toy_grid();
    let n2 = build_convexified(&net, &g, &slot).map_err(err)?;
    let n3 = build_cone_relaxed(&net, &g, &slot).map_err(err)?;
    let n4 = build_harvest(&net, &g, &slot, &grid).map_err(err)?;
    let root = solve_socp(&n4.program, &SolveSettings::default()).map_err(err)?;
    ensure(root.status == SocpStatus::Optimal, || format!("root relaxation {:?}", root.status))?;
    let bound = root.objective;

    let ix = |id: &str| net.node(id).unwrap();
    let ex = |id: &str| net.edge(id).unwrap();
    let (r, j, ti, t) = (ix("r"), ix("j"), ix("t:in"), ix("t"));
    let (p, l, fill_e) = (ex("p"), ex("l"), ex("t:fill"));
    let pump = net.edges[p].pump().unwrap().clone();
    let f = net.edges[l].friction().unwrap();
    let tank = net.tank_params(t).clone();
    let (d, e0) = pump.lower_line();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut points, mut draws, mut best_point) = (0, 0, f64::NEG_INFINITY);
    while points < 50 {
        draws += 1;
        ensure(draws < 100_000, || format!("only {points} feasible points constructed"))?;
        let q = rng.gen_range(pump.q_min..pump.q_max);
        let lo = d * q + e0;
        let hi = pump.upper_curve(q);
        if lo > hi {
            continue;
        }
        let gain = rng.gen_range(lo..=hi);
        let fill = q - slot.demand[j];
        let volume = slot.prev_volume[t] + slot.delta_s * fill;
        let mut s = Schedule::zeros(&net);
        s.flow[p] = q;
        s.flow[l] = fill;
        s.flow[fill_e] = fill;
        s.gain[p] = gain;
        s.gain[l] = f * fill * fill;
        s.head[r] = 0.0;
        s.head[j] = gain - net.nodes[j].elevation_m;
        s.head[ti] = gain - s.gain[l] - net.nodes[ti].elevation_m;
        s.head[t] = volume / tank.area_m2;
        s.volume[t] = volume;
        // Keep only points the convexified program accepts.
        if !n2.program.violations(&n2.embed(&net, &s), 1e-9, false).is_empty() {
            continue;
        }
        let lifted = n3.program.violations(&n3.embed(&net, &s), 1e-6, false);
        ensure(lifted.is_empty(), || format!("lift of point {points} violates {lifted:?}"))?;
        let objective = tank.area_m2 * s.head[t] * s.head[t];
        let tol = 1e-6 * objective.abs().max(1.0);
        ensure(bound >= objective - tol, || format!("bound {bound:.6} below point objective {objective:.6}"))?;
        best_point = best_point.max(objective);
        points += 1;
    }
    Ok(format!("50 points from {draws} draws lift with no violations; root bound {bound:.4} >= best point {best_point:.4}"))
}

// ---- 4: Glover and grid exactness ----

fn glover_check(net: &Network, grid: &Grid, out: &StepOutcome) -> Result<f64, String> {
    let raw = &out.raw;
    let mut worst = 0.0f64;
    for (e, z) in raw.pump_bins.iter().enumerate() {
        if z.is_empty() {
            continue;
        }
        for (k, zk) in z.iter().enumerate() {
            worst = worst.max((raw.bin_flow[e][k] - raw.schedule.flow[e] * zk).abs());
        }
        let picked = z.iter().position(|&v| v == 1.0).ok_or("no pump bin selected")?;
        ensure(raw.schedule.gain[e] == grid.pump_level(picked + 1), || format!("gain of {} is off the grid", net.edges[e].id))?;
    }
    for (i, s) in raw.tank_bins.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        ensure(s.iter().sum::<f64>() == 1.0, || format!("tank {} selects {s:?}", net.nodes[i].id))?;
        let c = s.iter().position(|&v| v == 1.0).unwrap();
        let level = grid.tank_level(c + 1);
        ensure(raw.schedule.head[i] == level && out.solution.schedule.head[i] == level, || {
            format!("tank {} head {} is not the level {level}", net.nodes[i].id, raw.schedule.head[i])
        })?;
    }
    ensure(worst <= 1e-8, || format!("max |bin flow - Q z| = {worst:.3e}"))?;
    Ok(worst)
}

fn criterion_4() -> Outcome {
    let mut outcomes = Vec::new();
    let toy = common::toy();
    let g = common::active(&toy);
    let cfg = ContractConfig::new(toy_grid());
    for r in [20_000.0, 45_000.0, 90_000.0] {
        let slot = toy_slot(&toy, r);
        let first = step1_min_cost(&toy, &g, &slot, &cfg).map_err(err)?;
        if first.e_pump < r * slot.delta_s {
            outcomes.push((toy.clone(), cfg.grid, step2_max_harvest(&toy, &g, &slot, first.e_pump, &cfg).map_err(err)?));
        }
        outcomes.push((toy.clone(), cfg.grid, first));
    }
    let net = Network::from_file(&common::data_path("network_21.json")).map_err(err)?;
    let scenario = Scenario::from_file(&common::data_path("scenario_21.json")).map_err(err)?.resolve(None).map_err(err)?;
    let g = common::active(&net);
    let cfg = ContractConfig::new(Grid::new(10, 40.0, 10, 30.0).map_err(err)?);
    let mut slot = scenario.slot_input(&net, 1, &BTreeMap::new()).map_err(err)?;
    slot.r_watt = scenario.r_bar_watt;
    let first = step1_min_cost(&net, &g, &slot, &cfg).map_err(err)?;
    let second = step2_max_harvest(&net, &g, &slot, first.e_pump, &cfg).map_err(err)?;
    outcomes.push((net.clone(), cfg.grid, first));
    outcomes.push((net, cfg.grid, second));
    let mut worst = 0.0f64;
    for (net, grid, out) in &outcomes {
        worst = worst.max(glover_check(net, grid, out)?);
    }
    Ok(format!("{} incumbents, max |bin flow - Q z| = {worst:.2e}, one tank bin each, heads on grid", outcomes.len()))
}

// ---- 5 and 6: contract runs ----

struct Runs {
    harvest: ContractLedger,
    baseline: ContractLedger,
    harvest_time: Duration,
    baseline_time: Duration,
    initial_heads: BTreeMap<String, f64>,
}

fn runs() -> &'static Result<Runs, String> {
    static RUNS: OnceLock<Result<Runs, String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let net = Network::from_file(&common::data_path("network_21.json")).map_err(err)?;
        let scenario = Scenario::from_file(&common::data_path("scenario_21.json")).map_err(err)?.resolve(None).map_err(err)?;
        let cfg = ContractConfig::new(Grid::new(10, 40.0, 10, 30.0).map_err(err)?);
        let t0 = Instant::now();
        let harvest = run_contract(&net, &scenario, &cfg).map_err(err)?;
        let harvest_time = t0.elapsed();
        let t0 = Instant::now();
        let baseline = run_contract(&net, &scenario.without_signal(), &cfg).map_err(err)?;
        let baseline_time = t0.elapsed();
        let initial_heads = net.initial_tank_state().into_iter().map(|(id, (_, h))| (id, h)).collect();
        Ok(Runs { harvest, baseline, harvest_time, baseline_time, initial_heads })
    })
}

fn criterion_5(extra: &[(Network, SlotInput, Schedule)]) -> Outcome {
    let runs = runs().as_ref().map_err(Clone::clone)?;
    let mut worst = 0.0f64;
    let mut count = 0;
    for ledger in [&runs.harvest, &runs.baseline] {
        for s in &ledger.slots {
            let a = s.audit.as_ref().ok_or_else(|| format!("slot {} has no audit", s.k))?;
            worst = worst.max(a.imbalance.abs() / a.max_term());
            count += 1;
        }
    }
    let toy = common::toy();
    let scenario = Scenario::from_file(&common::data_path("toy_scenario.json")).map_err(err)?.resolve(None).map_err(err)?;
    let ledger = run_contract(&toy, &scenario, &ContractConfig::new(toy_grid())).map_err(err)?;
    for s in &ledger.slots {
        let a = s.audit.as_ref().ok_or_else(|| format!("toy slot {} has no audit", s.k))?;
        worst = worst.max(a.imbalance.abs() / a.max_term());
        count += 1;
    }
    for (net, slot, s) in extra {
        let a = energy_audit(net, &common::active(net), slot, s).map_err(err)?;
        worst = worst.max(a.imbalance.abs() / a.max_term());
        count += 1;
    }
    ensure(worst <= 1e-4, || format!("worst relative imbalance {worst:.3e}"))?;
    Ok(format!("{count} schedules, worst |imbalance| / max term = {worst:.2e}"))
}

fn criterion_6() -> Outcome {
    let runs = runs().as_ref().map_err(Clone::clone)?;
    let h = &runs.harvest;
    ensure(h.slots.len() == 12, || format!("{} slots", h.slots.len()))?;
    ensure(h.slots.iter().all(|s| s.step != Step::Failed), || "a slot failed".into())?;
    ensure(runs.harvest_time < Duration::from_secs(600), || format!("contract took {:?}", runs.harvest_time))?;
    let mut prev = runs.initial_heads.clone();
    let mut step2 = 0;
    for s in &h.slots {
        if s.step == Step::Step2 {
            step2 += 1;
            for (id, &head) in &s.tank_heads {
                ensure(head >= prev[id] - 1e-9, || format!("slot {}: tank {id} head fell from {} to {head}", s.k, prev[id]))?;
            }
        }
        prev = s.tank_heads.clone();
    }
    let baseline_energy = runs.baseline.total_e_pump;
    ensure(baseline_energy >= h.total_purchased_j, || {
        format!("baseline energy {baseline_energy:.4e} J below purchased {:.4e} J", h.total_purchased_j)
    })?;
    Ok(format!(
        "12 slots in {:.1?} (baseline {:.1?}), {step2} step-2 slots with nondecreasing heads, baseline {:.4e} J >= purchased {:.4e} J",
        runs.harvest_time, runs.baseline_time, baseline_energy, h.total_purchased_j
    ))
}

// ---- 7: branch-and-bound against enumeration ----

fn enumerate(built: &BuiltProgram) -> Result<Option<f64>, String> {
    let prog = &built.program;
    let lower0: Vec<f64> = prog.variables.iter().map(|v| v.lower.unwrap_or(f64::NEG_INFINITY)).collect();
    let upper0: Vec<f64> = prog.variables.iter().map(|v| v.upper.unwrap_or(f64::INFINITY)).collect();
    let groups: Vec<Vec<usize>> = prog.one_hot.iter().map(|g| g.vars.iter().map(|v| v.0).collect()).collect();
    let grouped: usize = groups.iter().map(Vec::len).sum();
    ensure(grouped == prog.num_binaries(), || "binaries outside one-hot groups".into())?;
    let maximize = prog.objective.sense == misocp::ObjectiveSense::Maximize;
    let mut best: Option<f64> = None;
    // Assignments violating a one-hot row are infeasible, so only one member
    // per group needs to be tried.
    let mut pick = vec![0usize; groups.len()];
    loop {
        let (mut lo, mut up) = (lower0.clone(), upper0.clone());
        for (gi, g) in groups.iter().enumerate() {
            for (k, &j) in g.iter().enumerate() {
                let v = (k == pick[gi]) as i32 as f64;
                lo[j] = v;
                up[j] = v;
            }
        }
        let sol = solve_with_bounds(prog, &lo, &up, &SolveSettings::default()).map_err(err)?;
        match sol.status {
            SocpStatus::Optimal => {
                let better = best.map_or(true, |b| if maximize { sol.objective > b } else { sol.objective < b });
                if better {
                    best = Some(sol.objective);
                }
            }
            SocpStatus::PrimalInfeasible => {}
            other => return Err(format!("enumeration subproblem ended {other:?}")),
        }
        let mut gi = 0;
        loop {
            if gi == groups.len() {
                return Ok(best);
            }
            pick[gi] += 1;
            if pick[gi] < groups[gi].len() {
                break;
            }
            pick[gi] = 0;
            gi += 1;
        }
    }
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut programs, mut feasible, mut worst) = (0, 0, 0.0f64);
    for _ in 0..12 {
        let (net, demands) = common::random_network(&mut rng, 3, 1);
        let g = common::active(&net);
        let b = rng.gen_range(3..=8);
        let c = rng.gen_range(3..=(16 - b).min(8));
        let grid = Grid::new(b, 40.0, c, 16.0).map_err(err)?;
        let slot = common::slot(&net, &demands, rng.gen_range(2e4..2e5));
        for built in [build_harvest(&net, &g, &slot, &grid), build_min_cost(&net, &g, &slot, &grid)] {
            let built = built.map_err(err)?;
            ensure(built.program.num_binaries() <= 16, || "too many binaries".into())?;
            let rep = branch_and_bound(&built.program, &SolveSettings::default()).map_err(err)?;
            let exhaustive = enumerate(&built)?;
            match (rep.objective, exhaustive) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    let gap = relative_gap(b, a);
                    worst = worst.max(gap);
                    ensure(gap <= 1e-6, || format!("{}: search {a:.9} vs enumeration {b:.9}", built.program.name))?;
                    feasible += 1;
                }
                (a, b) => return Err(format!("{}: search {a:?} vs enumeration {b:?} ({:?})", built.program.name, rep.status)),
            }
            programs += 1;
        }
    }
    Ok(format!("{programs} programs ({feasible} feasible) agree, worst relative gap {worst:.2e}"))
}

// ---- 8: speed round trip ----

fn criterion_8() -> Outcome {
    let net = common::toy();
    let g = common::active(&net);
    let e = net.edge("p").unwrap();
    let p = net.edges[e].pump().unwrap().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let mut s = Schedule::zeros(&net);
    for _ in 0..10_000 {
        let q = rng.gen_range(p.q_min..=p.q_max);
        let w = rng.gen_range(p.w_min..=p.w_max);
        s.flow[e] = q;
        s.gain[e] = pump_head_gain(q, w, &p);
        let speeds = recover_pump_speeds(&net, &g, &s).map_err(err)?;
        let back = speeds[e].ok_or("no speed for an active pump")?;
        worst = worst.max((back - w).abs());
    }
    ensure(worst <= 1e-8, || format!("worst speed error {worst:.3e}"))?;
    Ok(format!("10000 pairs, worst |speed error| = {worst:.2e}"))
}

fn run(n: usize, f: impl FnOnce() -> Outcome) -> bool {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    match result {
        Ok(detail) => {
            println!("PASS criterion {n}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL criterion {n}: {detail}");
            false
        }
    }
}

fn main() {
    let mut audited = Vec::new();
    let results = [
        run(1, criterion_1),
        run(2, || criterion_2(&mut audited)),
        run(3, criterion_3),
        run(4, criterion_4),
        run(5, || criterion_5(&audited)),
        run(6, criterion_6),
        run(7, criterion_7),
        run(8, criterion_8),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
