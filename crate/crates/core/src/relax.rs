//! Assembly of the slot optimization problems as [`ConicProgram`]s.
//!
//! Five formulations share one variable layout:
//!
//! | formulation | pump law | pipe law | budget | objective |
//! |---|---|---|---|---|
//! | [`Formulation::Reference`] | speed curve | `G = f Q²` | bilinear | `max Σ A H²` |
//! | [`Formulation::Convexified`] | band | `G = f Q²` | bilinear | `max Σ A H²` |
//! | [`Formulation::ConeRelaxed`] | band | `G = f W`, `Q² ≤ W` | bilinear | `max Σ A H²` |
//! | [`Formulation::Harvest`] | band + head bins | cone | linearized | `max Σ A Σ σ² s` |
//! | [`Formulation::MinCost`] | band + head bins | cone | none | `min Σ Σ ζ Φ / η` |
//!
//! Only the last two are solvable by [`misocp`]; the others carry quadratic
//! rows or objectives and serve as references.
//!
//! The on/off state of every edge is data, so every big-M coupling appears with
//! its indicator at one: couplings become equalities and flow bounds become the
//! on-state bounds.

use serde::{Deserialize, Serialize};

use misocp::{Cone, ConicProgram, LinExpr, ObjectiveSense, QuadRow, Sense, VarId};

use crate::error::{Error, Result};
use crate::hydraulics::{Schedule, SlotInput};
use crate::network::{ActiveGraph, EdgeKind, Network, NodeKind, PumpParams};

/// Uniform head grids for pump gains and tank heads. Level 0 is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub pump_bins: usize,
    pub pump_head_max: f64,
    pub tank_bins: usize,
    pub tank_head_max: f64,
}

impl Grid {
    pub fn new(pump_bins: usize, pump_head_max: f64, tank_bins: usize, tank_head_max: f64) -> Result<Self> {
        let g = Self { pump_bins, pump_head_max, tank_bins, tank_head_max };
        if pump_bins == 0 || tank_bins == 0 || !(pump_head_max > 0.0) || !(tank_head_max > 0.0) {
            return Err(Error::Config(format!("grid needs positive bin counts and head ranges, got {g:?}")));
        }
        Ok(g)
    }

    /// Pump gain level `b`, `0 ≤ b ≤ pump_bins`.
    pub fn pump_level(&self, b: usize) -> f64 {
        b as f64 * self.pump_head_max / self.pump_bins as f64
    }

    pub fn tank_level(&self, c: usize) -> f64 {
        c as f64 * self.tank_head_max / self.tank_bins as f64
    }

    pub fn pump_step(&self) -> f64 {
        self.pump_level(1)
    }

    pub fn tank_step(&self) -> f64 {
        self.tank_level(1)
    }
}

/// Tangent to the slowest speed curve at the middle of the flow range.
///
/// The curve is concave, so the tangent lies above it everywhere, which keeps
/// the band between the tangent and the fastest curve inside the set of
/// reachable operating points.
pub fn fit_pump_lower_line(p: &PumpParams) -> Result<(f64, f64)> {
    if !(p.a < 0.0 && p.w_min > 0.0) {
        return Err(Error::Config("lower line needs a < 0 and a positive minimum speed".into()));
    }
    let mid = 0.5 * (p.q_min + p.q_max);
    let d = 2.0 * p.a * mid + p.b * p.w_min;
    let e = p.c * p.w_min * p.w_min - p.a * mid * mid;
    // The band is nonempty when the fastest curve clears the line somewhere.
    let n = 1000;
    let clear = (0..=n).any(|k| {
        let q = p.q_min + (p.q_max - p.q_min) * k as f64 / n as f64;
        p.upper_curve(q) >= d * q + e
    });
    if !clear {
        return Err(Error::Config("pump band between the lower line and the top-speed curve is empty".into()));
    }
    Ok((d, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Original slot problem with pump speeds as variables.
    Reference,
    /// Pump law replaced by the convex band.
    Convexified,
    /// Pipe law relaxed to a rotated cone.
    ConeRelaxed,
    /// Mixed-integer harvest maximization under the grid budget.
    Harvest,
    /// Mixed-integer pumping cost minimization.
    MinCost,
}

/// Where each physical quantity lives in the program's variable vector.
/// Vectors are indexed by network node or edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub formulation: Formulation,
    pub head: Vec<Option<VarId>>,
    pub flow: Vec<Option<VarId>>,
    pub gain: Vec<Option<VarId>>,
    pub volume: Vec<Option<VarId>>,
    /// Flow-square companion of each active pipe.
    pub flow_sq: Vec<Option<VarId>>,
    pub speed: Vec<Option<VarId>>,
    pub pump_bins: Vec<Vec<VarId>>,
    pub bin_flow: Vec<Vec<VarId>>,
    pub tank_bins: Vec<Vec<VarId>>,
}

impl Layout {
    fn empty(net: &Network, formulation: Formulation) -> Self {
        let (n, m) = (net.nodes.len(), net.edges.len());
        Self {
            formulation,
            head: vec![None; n],
            flow: vec![None; m],
            gain: vec![None; m],
            volume: vec![None; n],
            flow_sq: vec![None; m],
            speed: vec![None; m],
            pump_bins: vec![Vec::new(); m],
            bin_flow: vec![Vec::new(); m],
            tank_bins: vec![Vec::new(); n],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuiltProgram {
    pub program: ConicProgram,
    pub layout: Layout,
    pub grid: Option<Grid>,
}

/// Relaxed or mixed-integer solution mapped back onto the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxedSolution {
    pub schedule: Schedule,
    /// Flow-square variable per edge (pipes only).
    pub flow_sq: Vec<Option<f64>>,
    pub pump_bins: Vec<Vec<f64>>,
    pub bin_flow: Vec<Vec<f64>>,
    pub tank_bins: Vec<Vec<f64>>,
    pub objective: f64,
    pub gap: Option<f64>,
}

fn node_tag(net: &Network, i: usize) -> String {
    net.nodes[i].id.clone()
}

fn edge_tag(net: &Network, e: usize) -> String {
    net.edges[e].id.clone()
}

/// Common rows: conservation, heads, tank dynamics and edge couplings.
fn base(net: &Network, g: &ActiveGraph, slot: &SlotInput, formulation: Formulation, name: &str) -> Result<BuiltProgram> {
    if slot.demand.len() != net.nodes.len() || slot.prev_volume.len() != net.nodes.len() {
        return Err(Error::Dimension("slot input does not match the network".into()));
    }
    let mut p = ConicProgram::new(name);
    let mut lay = Layout::empty(net, formulation);
    for i in g.nodes() {
        lay.head[i] = Some(p.add_free(format!("head[{}]", node_tag(net, i))));
        if net.nodes[i].kind == NodeKind::TankOutlet {
            lay.volume[i] = Some(p.add_free(format!("volume[{}]", node_tag(net, i))));
        }
    }
    for e in g.edges() {
        let edge = &net.edges[e];
        lay.flow[e] = Some(p.add_free(format!("flow[{}]", edge_tag(net, e))));
        if !edge.is_fictitious() {
            lay.gain[e] = Some(p.add_free(format!("gain[{}]", edge_tag(net, e))));
        }
    }
    let q = |e: usize| lay.flow[e].expect("active edge has a flow");
    let h = |i: usize| lay.head[i].expect("active node has a head");

    for i in g.nodes() {
        let node = &net.nodes[i];
        let tag = node_tag(net, i);
        let mut balance = LinExpr::new();
        for e in g.edges() {
            if net.edges[e].head == i {
                balance.push(q(e), 1.0);
            }
            if net.edges[e].tail == i {
                balance.push(q(e), -1.0);
            }
        }
        match node.kind {
            NodeKind::Junction | NodeKind::TankInlet => {
                p.add_row("FlowConservation", &tag, balance, Sense::Eq, slot.demand[i]);
                if node.kind == NodeKind::Junction {
                    p.add_row("MinPressureHead", &tag, LinExpr::var(h(i)), Sense::Ge, node.min_head_m);
                } else {
                    p.add_row("TankInletHead", &tag, LinExpr::var(h(i)), Sense::Ge, node.elevation_m);
                }
            }
            NodeKind::TankOutlet => {
                let t = net.tank_params(i);
                let v = lay.volume[i].expect("tank volume");
                let mut vol = LinExpr::var(v);
                let mut head = LinExpr::var(h(i));
                for &(var, coef) in &balance.terms {
                    vol.push(var, -slot.delta_s * coef);
                    head.push(var, -slot.delta_s / t.area_m2 * coef);
                }
                p.add_row("TankVolumeBalance", &tag, vol, Sense::Eq, slot.prev_volume[i]);
                p.add_row("TankCapacity", &tag, LinExpr::var(v), Sense::Ge, 0.0);
                p.add_row("TankCapacity", &tag, LinExpr::var(v), Sense::Le, t.capacity_m3);
                p.add_row("TankHeadDynamics", &tag, head, Sense::Eq, slot.prev_head(net, i));
            }
            NodeKind::Reservoir => {
                p.add_row("ReservoirHead", &tag, LinExpr::var(h(i)), Sense::Eq, 0.0);
            }
        }
    }

    let (m1, cap) = (net.big_m.min_flow, net.big_m.coupling);
    for e in g.edges() {
        let edge = &net.edges[e];
        let tag = edge_tag(net, e);
        let (ti, hi) = (edge.tail, edge.head);
        // Head difference across the edge in total heads, constant moved right.
        let drop_rhs = net.nodes[ti].elevation_m - net.nodes[hi].elevation_m;
        let rise = LinExpr::var(h(hi)).term(h(ti), -1.0);
        match &edge.kind {
            EdgeKind::Fictitious => {
                p.add_row("FictitiousFlowNonneg", &tag, LinExpr::var(q(e)), Sense::Ge, 0.0);
            }
            EdgeKind::Pump(pp) => {
                let gv = lay.gain[e].expect("gain");
                p.add_row("PumpFlowBounds", &tag, LinExpr::var(q(e)), Sense::Ge, pp.q_min);
                p.add_row("PumpFlowBounds", &tag, LinExpr::var(q(e)), Sense::Le, pp.q_max);
                p.add_row("PumpCoupling", &tag, rise.term(gv, -1.0), Sense::Eq, drop_rhs);
                if formulation == Formulation::Reference {
                    let w = p.add_free(format!("speed[{tag}]"));
                    lay.speed[e] = Some(w);
                    p.add_row("PumpSpeedBounds", &tag, LinExpr::var(w), Sense::Ge, pp.w_min);
                    p.add_row("PumpSpeedBounds", &tag, LinExpr::var(w), Sense::Le, pp.w_max);
                    p.add_quad_row(QuadRow {
                        label: "PumpCurve".into(),
                        element: tag.clone(),
                        linear: LinExpr::var(gv),
                        quad: vec![(q(e), q(e), -pp.a), (q(e), w, -pp.b), (w, w, -pp.c)],
                        sense: Sense::Eq,
                        rhs: 0.0,
                    });
                } else {
                    // −a Q² ≤ b̄ Q + c̄ − G as 2·(b̄Q + c̄ − G)·½ ≥ (√−a Q)².
                    let slack = LinExpr { terms: vec![(q(e), pp.b * pp.w_max), (gv, -1.0)], constant: pp.c * pp.w_max * pp.w_max };
                    p.add_cone(
                        "PumpCurveUpper",
                        &tag,
                        Cone::Rotated {
                            u: slack,
                            v: LinExpr::constant(0.5),
                            x: vec![LinExpr { terms: vec![(q(e), (-pp.a).sqrt())], constant: 0.0 }],
                        },
                    );
                    let (d, e0) = pp.lower_line();
                    p.add_row("PumpCurveLower", &tag, LinExpr::var(gv).term(q(e), -d), Sense::Ge, e0);
                }
            }
            EdgeKind::Valve | EdgeKind::Pipe { .. } => {
                let gv = lay.gain[e].expect("gain");
                let kind = if edge.is_valve() { "Valve" } else { "Pipe" };
                p.add_row(format!("{kind}Coupling"), &tag, rise.term(gv, 1.0), Sense::Eq, drop_rhs);
                p.add_row(format!("{kind}FlowBounds"), &tag, LinExpr::var(q(e)), Sense::Ge, m1);
                p.add_row(format!("{kind}FlowBounds"), &tag, LinExpr::var(q(e)), Sense::Le, cap);
                match edge.kind {
                    EdgeKind::Valve => {
                        p.add_row("ValveLossNonneg", &tag, LinExpr::var(gv), Sense::Ge, 0.0);
                    }
                    EdgeKind::Pipe { f_d } => match formulation {
                        Formulation::Reference | Formulation::Convexified => p.add_quad_row(QuadRow {
                            label: "PipeHeadLoss".into(),
                            element: tag.clone(),
                            linear: LinExpr::var(gv),
                            quad: vec![(q(e), q(e), -f_d)],
                            sense: Sense::Eq,
                            rhs: 0.0,
                        }),
                        _ => {
                            let w = p.add_var(format!("flow_sq[{tag}]"), Some(0.0), None);
                            lay.flow_sq[e] = Some(w);
                            p.add_row("PipeLossRelaxed", &tag, LinExpr::var(gv).term(w, -f_d), Sense::Eq, 0.0);
                            p.add_cone(
                                "PipeCone",
                                &tag,
                                Cone::Rotated { u: LinExpr::var(w), v: LinExpr::constant(0.5), x: vec![LinExpr::var(q(e))] },
                            );
                        }
                    },
                    _ => unreachable!(),
                }
            }
        }
    }
    Ok(BuiltProgram { program: p, layout: lay, grid: None })
}

/// `Σ A H²` over active tank outlets, as a diagonal quadratic maximization.
fn quadratic_tank_objective(net: &Network, g: &ActiveGraph, b: &mut BuiltProgram) {
    b.program.objective.sense = ObjectiveSense::Maximize;
    b.program.objective.quad = net
        .tank_outlets()
        .filter(|&i| g.node_on[i])
        .map(|i| (b.layout.head[i].expect("tank head"), net.tank_params(i).area_m2))
        .collect();
}

/// Pump energy budget in the bilinear form `Σ G Q / η ≤ r / (ρ g)`.
fn bilinear_budget(net: &Network, g: &ActiveGraph, slot: &SlotInput, b: &mut BuiltProgram) {
    let quad = net
        .pumps()
        .filter(|&e| g.edge_on[e])
        .map(|e| {
            let eta = net.edges[e].pump().expect("pump").eta;
            (b.layout.gain[e].expect("gain"), b.layout.flow[e].expect("flow"), 1.0 / eta)
        })
        .collect();
    b.program.add_quad_row(QuadRow {
        label: "EnergyBudgetBilinear".into(),
        element: String::new(),
        linear: LinExpr::new(),
        quad,
        sense: Sense::Le,
        rhs: slot.r_watt / (net.rho * net.g),
    });
}

/// Original slot problem with speeds, the pump curve and the exact pipe law.
pub fn build_reference(net: &Network, g: &ActiveGraph, slot: &SlotInput) -> Result<BuiltProgram> {
    let mut b = base(net, g, slot, Formulation::Reference, "reference")?;
    bilinear_budget(net, g, slot, &mut b);
    quadratic_tank_objective(net, g, &mut b);
    Ok(b)
}

/// Slot problem with the pump law replaced by its convex band.
pub fn build_convexified(net: &Network, g: &ActiveGraph, slot: &SlotInput) -> Result<BuiltProgram> {
    let mut b = base(net, g, slot, Formulation::Convexified, "convexified")?;
    bilinear_budget(net, g, slot, &mut b);
    quadratic_tank_objective(net, g, &mut b);
    Ok(b)
}

/// Convexified problem with each pipe law relaxed to `G = f W`, `Q² ≤ W`.
pub fn build_cone_relaxed(net: &Network, g: &ActiveGraph, slot: &SlotInput) -> Result<BuiltProgram> {
    let mut b = base(net, g, slot, Formulation::ConeRelaxed, "cone_relaxed")?;
    bilinear_budget(net, g, slot, &mut b);
    quadratic_tank_objective(net, g, &mut b);
    Ok(b)
}

/// Adds one-hot gain bins to every active pump: the gain equals the selected
/// level and lies in that bin's interval.
pub fn discretize_pump_heads(net: &Network, g: &ActiveGraph, grid: &Grid, b: &mut BuiltProgram) {
    let big = net.big_m.coupling;
    for e in net.pumps().filter(|&e| g.edge_on[e]) {
        let p = net.edges[e].pump().expect("pump");
        let tag = edge_tag(net, e);
        let shutoff = p.c * p.w_max * p.w_max;
        if grid.pump_head_max < shutoff {
            log::warn!("pump `{tag}`: top grid level {} m is below the shutoff head {shutoff:.2} m", grid.pump_head_max);
        }
        let gain = b.layout.gain[e].expect("gain");
        let bins: Vec<VarId> = (1..=grid.pump_bins).map(|k| b.program.add_binary(format!("pump_bin[{tag},{k}]"))).collect();
        let mut level = LinExpr::var(gain);
        let mut pick = LinExpr::new();
        for (k, &z) in bins.iter().enumerate() {
            let k = k + 1;
            level.push(z, -grid.pump_level(k));
            pick.push(z, 1.0);
            b.program.add_row("PumpBinLower", &tag, LinExpr::var(z).term(gain, -1.0).scaled_first(grid.pump_level(k - 1)), Sense::Le, 0.0);
            b.program.add_row("PumpBinUpper", &tag, LinExpr::var(gain).term(z, big - grid.pump_level(k)), Sense::Le, big);
        }
        b.program.add_row("PumpHeadDiscretization", &tag, level, Sense::Eq, 0.0);
        b.program.add_row("PumpBinSelection", &tag, pick, Sense::Eq, 1.0);
        b.program.add_one_hot(format!("pump_bins[{tag}]"), bins.clone());
        b.layout.pump_bins[e] = bins;
    }
}

/// Adds `Φ_b = Q z_b` for every pump bin, encoded exactly through the pump's
/// flow bounds.
pub fn glover_linearize(net: &Network, g: &ActiveGraph, b: &mut BuiltProgram) {
    for e in net.pumps().filter(|&e| g.edge_on[e]) {
        let p = net.edges[e].pump().expect("pump");
        let tag = edge_tag(net, e);
        let q = b.layout.flow[e].expect("flow");
        let mut phis = Vec::new();
        for (k, &z) in b.layout.pump_bins[e].clone().iter().enumerate() {
            let phi = b.program.add_free(format!("bin_flow[{tag},{}]", k + 1));
            let prog = &mut b.program;
            prog.add_row("GloverLower", &tag, LinExpr::var(z).scaled_first(p.q_min).term(phi, -1.0), Sense::Le, 0.0);
            prog.add_row("GloverUpper", &tag, LinExpr::var(phi).term(z, -p.q_max), Sense::Le, 0.0);
            prog.add_row("GloverFlowLower", &tag, LinExpr::var(q).term(z, p.q_max).term(phi, -1.0), Sense::Le, p.q_max);
            prog.add_row("GloverFlowUpper", &tag, LinExpr::var(phi).term(q, -1.0).term(z, -p.q_min), Sense::Le, -p.q_min);
            phis.push(phi);
        }
        // Implied by the one-hot row; it keeps the relaxation from routing
        // flow through cheap bins with small weight.
        let mut total = LinExpr::var(q).scaled_first(-1.0);
        phis.iter().for_each(|&phi| total.push(phi, 1.0));
        b.program.add_row("BinFlowTotal", &tag, total, Sense::Eq, 0.0);
        b.layout.bin_flow[e] = phis;
    }
}

/// Adds one-hot head bins to every active tank outlet.
pub fn discretize_tank_heads(net: &Network, g: &ActiveGraph, slot: &SlotInput, grid: &Grid, b: &mut BuiltProgram) {
    let big = net.big_m.coupling;
    for i in net.tank_outlets().filter(|&i| g.node_on[i]) {
        let tag = node_tag(net, i);
        let prev = slot.prev_head(net, i);
        if prev > grid.tank_head_max {
            log::warn!("tank `{tag}`: starting head {prev:.3} m is above the top grid level {} m", grid.tank_head_max);
        }
        let head = b.layout.head[i].expect("tank head");
        let bins: Vec<VarId> = (1..=grid.tank_bins).map(|c| b.program.add_binary(format!("tank_bin[{tag},{c}]"))).collect();
        let mut level = LinExpr::var(head);
        let mut pick = LinExpr::new();
        for (c, &s) in bins.iter().enumerate() {
            let c = c + 1;
            level.push(s, -grid.tank_level(c));
            pick.push(s, 1.0);
            b.program.add_row("TankBinLower", &tag, LinExpr::var(s).scaled_first(grid.tank_level(c - 1)).term(head, -1.0), Sense::Le, 0.0);
            b.program.add_row("TankBinUpper", &tag, LinExpr::var(head).term(s, big - grid.tank_level(c)), Sense::Le, big);
        }
        b.program.add_row("TankHeadDiscretization", &tag, level, Sense::Eq, 0.0);
        b.program.add_row("TankBinSelection", &tag, pick, Sense::Eq, 1.0);
        b.program.add_one_hot(format!("tank_bins[{tag}]"), bins.clone());
        b.layout.tank_bins[i] = bins;
    }
}

/// `Σ_pumps (1/η) Σ_b ζ_b Φ_b`, the pump energy over `ρ g δ`.
fn linear_pump_energy(net: &Network, grid: &Grid, b: &BuiltProgram) -> LinExpr {
    let mut expr = LinExpr::new();
    for e in net.pumps() {
        let eta = net.edges[e].pump().expect("pump").eta;
        for (k, &phi) in b.layout.bin_flow[e].iter().enumerate() {
            expr.push(phi, grid.pump_level(k + 1) / eta);
        }
    }
    expr
}

fn discretized(net: &Network, g: &ActiveGraph, slot: &SlotInput, grid: &Grid, f: Formulation, name: &str) -> Result<BuiltProgram> {
    let mut b = base(net, g, slot, f, name)?;
    discretize_pump_heads(net, g, grid, &mut b);
    glover_linearize(net, g, &mut b);
    discretize_tank_heads(net, g, slot, grid, &mut b);
    b.grid = Some(*grid);
    Ok(b)
}

/// Mixed-integer harvest maximization: stored tank energy on the head grid,
/// pump energy bounded by the signal.
pub fn build_harvest(net: &Network, g: &ActiveGraph, slot: &SlotInput, grid: &Grid) -> Result<BuiltProgram> {
    let mut b = discretized(net, g, slot, grid, Formulation::Harvest, "harvest")?;
    let budget = linear_pump_energy(net, grid, &b);
    b.program.add_row("EnergyBudget", "", budget, Sense::Le, slot.r_watt / (net.rho * net.g));
    let mut obj = LinExpr::new();
    for i in net.tank_outlets() {
        let a = net.tank_params(i).area_m2;
        for (c, &s) in b.layout.tank_bins[i].iter().enumerate() {
            obj.push(s, a * grid.tank_level(c + 1).powi(2));
        }
    }
    b.program.objective.sense = ObjectiveSense::Maximize;
    b.program.objective.linear = obj;
    Ok(b)
}

/// Mixed-integer pumping cost minimization over the same feasible set as
/// [`build_harvest`] without the budget. The objective is energy over `ρ g δ`;
/// price and constants are applied when reporting.
pub fn build_min_cost(net: &Network, g: &ActiveGraph, slot: &SlotInput, grid: &Grid) -> Result<BuiltProgram> {
    let mut b = discretized(net, g, slot, grid, Formulation::MinCost, "min_cost")?;
    b.program.objective.sense = ObjectiveSense::Minimize;
    b.program.objective.linear = linear_pump_energy(net, grid, &b);
    Ok(b)
}

trait ScaledFirst {
    fn scaled_first(self, k: f64) -> Self;
}

impl ScaledFirst for LinExpr {
    /// Multiplies the coefficient of the first term by `k`.
    fn scaled_first(mut self, k: f64) -> Self {
        self.terms[0].1 *= k;
        self
    }
}

impl BuiltProgram {
    /// Variable vector of a schedule: heads, flows, gains, volumes and speeds
    /// are copied, flow squares are set to `Q²`, and bins are chosen from the
    /// values they encode (the lowest bin whose interval holds the value).
    pub fn embed(&self, net: &Network, s: &Schedule) -> Vec<f64> {
        let lay = &self.layout;
        let mut x = vec![0.0; self.program.num_vars()];
        let put = |x: &mut Vec<f64>, v: Option<VarId>, val: f64| {
            if let Some(v) = v {
                x[v.0] = val;
            }
        };
        for i in 0..net.nodes.len() {
            put(&mut x, lay.head[i], s.head[i]);
            put(&mut x, lay.volume[i], s.volume[i]);
        }
        for e in 0..net.edges.len() {
            put(&mut x, lay.flow[e], s.flow[e]);
            put(&mut x, lay.gain[e], s.gain[e]);
            put(&mut x, lay.flow_sq[e], s.flow[e] * s.flow[e]);
            if let Some(w) = s.speed[e] {
                put(&mut x, lay.speed[e], w);
            }
        }
        if let Some(grid) = &self.grid {
            for e in 0..net.edges.len() {
                if let Some(k) = bin_of(s.gain[e], lay.pump_bins[e].len(), |k| grid.pump_level(k)) {
                    x[lay.pump_bins[e][k].0] = 1.0;
                    x[lay.bin_flow[e][k].0] = s.flow[e];
                }
            }
            for i in 0..net.nodes.len() {
                if let Some(c) = bin_of(s.head[i], lay.tank_bins[i].len(), |c| grid.tank_level(c)) {
                    x[lay.tank_bins[i][c].0] = 1.0;
                }
            }
        }
        x
    }

    /// Maps a program point back to the network. Binaries are rounded, and
    /// discretized pump gains and tank heads are set to their grid levels.
    /// Tanks outside the active graph keep their starting state.
    pub fn decode(&self, net: &Network, slot: &SlotInput, x: &[f64], gap: Option<f64>) -> RelaxedSolution {
        let lay = &self.layout;
        let val = |v: Option<VarId>| v.map(|v| x[v.0]);
        let mut s = Schedule::zeros(net);
        for i in 0..net.nodes.len() {
            s.head[i] = val(lay.head[i]).unwrap_or(0.0);
            if net.nodes[i].kind == NodeKind::TankOutlet {
                match val(lay.volume[i]) {
                    Some(v) => s.volume[i] = v,
                    None => {
                        s.volume[i] = slot.prev_volume[i];
                        s.head[i] = slot.prev_head(net, i);
                    }
                }
            }
        }
        let mut flow_sq = vec![None; net.edges.len()];
        for e in 0..net.edges.len() {
            s.flow[e] = val(lay.flow[e]).unwrap_or(0.0);
            s.gain[e] = val(lay.gain[e]).unwrap_or(0.0);
            s.speed[e] = val(lay.speed[e]);
            flow_sq[e] = val(lay.flow_sq[e]);
        }
        let round = |vars: &Vec<VarId>| -> Vec<f64> { vars.iter().map(|v| x[v.0].round()).collect() };
        let pump_bins: Vec<Vec<f64>> = lay.pump_bins.iter().map(round).collect();
        let tank_bins: Vec<Vec<f64>> = lay.tank_bins.iter().map(round).collect();
        let bin_flow: Vec<Vec<f64>> = lay.bin_flow.iter().map(|vs| vs.iter().map(|v| x[v.0]).collect()).collect();
        if let Some(grid) = &self.grid {
            for (e, z) in pump_bins.iter().enumerate() {
                if !z.is_empty() {
                    s.gain[e] = z.iter().enumerate().map(|(k, z)| z * grid.pump_level(k + 1)).sum();
                }
            }
            for (i, sb) in tank_bins.iter().enumerate() {
                if !sb.is_empty() {
                    s.head[i] = sb.iter().enumerate().map(|(c, v)| v * grid.tank_level(c + 1)).sum();
                }
            }
        }
        RelaxedSolution {
            schedule: s,
            flow_sq,
            pump_bins,
            bin_flow,
            tank_bins,
            objective: self.program.objective.eval(x),
            gap,
        }
    }

    /// Program point of a decoded solution, the inverse of [`Self::decode`].
    pub fn encode(&self, net: &Network, sol: &RelaxedSolution) -> Vec<f64> {
        let mut x = self.embed(net, &sol.schedule);
        let lay = &self.layout;
        for e in 0..net.edges.len() {
            if let (Some(v), Some(w)) = (lay.flow_sq[e], sol.flow_sq[e]) {
                x[v.0] = w;
            }
            for (k, v) in lay.pump_bins[e].iter().enumerate() {
                x[v.0] = sol.pump_bins[e][k];
                x[lay.bin_flow[e][k].0] = sol.bin_flow[e][k];
            }
        }
        for i in 0..net.nodes.len() {
            for (c, v) in lay.tank_bins[i].iter().enumerate() {
                x[v.0] = sol.tank_bins[i][c];
            }
        }
        x
    }
}

/// Index of the bin `k` (0-based) with `level(k) ≤ value ≤ level(k+1)`,
/// preferring exact grid hits from above.
fn bin_of(value: f64, bins: usize, level: impl Fn(usize) -> f64) -> Option<usize> {
    if bins == 0 {
        return None;
    }
    let tol = 1e-9 * level(bins).max(1.0);
    (0..bins).find(|&k| (value - level(k + 1)).abs() <= tol).or_else(|| (0..bins).find(|&k| level(k) <= value && value <= level(k + 1)))
}

/// Stored tank energy `ρ g δ Σ (A/2)(H² − H_prev²)` with constants reapplied.
pub fn harvested_energy(net: &Network, slot: &SlotInput, s: &Schedule) -> f64 {
    net.tank_outlets()
        .map(|i| {
            let a = net.tank_params(i).area_m2;
            let h0 = slot.prev_head(net, i);
            net.rho * net.g * slot.delta_s * a / 2.0 * (s.head[i] * s.head[i] - h0 * h0)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydraulics::check_schedule;
    use crate::network::{default_active_graph, tests::tiny};
    use std::collections::BTreeMap;

    fn pump(a: f64, b: f64, c: f64, w_min: f64, w_max: f64, q_min: f64, q_max: f64) -> PumpParams {
        PumpParams { a, b, c, w_min, w_max, q_min, q_max, eta: 1.0, d: None, e: None }
    }

    #[test]
    fn lower_line_hand_example() {
        let p = pump(-1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0);
        let (d, e) = fit_pump_lower_line(&p).unwrap();
        assert!((d + 1.0).abs() < 1e-12 && (e - 1.25).abs() < 1e-12);
        for k in 0..=100 {
            let q = -2.0 + 4.0 * k as f64 / 100.0;
            assert!(-q + 1.25 >= -q * q + 1.0 - 1e-12);
        }
    }

    #[test]
    fn lower_line_dominates_slow_curve_on_grid() {
        // Slowest speed at two thirds of nominal.
        let p = pump(-1.0941e-4, 5.1516e-2, 223.32, 0.67, 1.0, 0.0, 20.0);
        let (d, e) = fit_pump_lower_line(&p).unwrap();
        for k in 0..=1000 {
            let q = 20.0 * k as f64 / 1000.0;
            assert!(d * q + e >= p.lower_curve(q) - 1e-9);
        }
    }

    #[test]
    fn single_speed_band_is_the_tangent_point() {
        let p = pump(-1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 4.0);
        let (d, e) = fit_pump_lower_line(&p).unwrap();
        assert!((d * 2.0 + e - p.upper_curve(2.0)).abs() < 1e-12);
        let convex = PumpParams { a: 1.0, ..p };
        assert!(matches!(fit_pump_lower_line(&convex), Err(Error::Config(_))));
    }

    fn toy() -> (Network, ActiveGraph, SlotInput) {
        let net = tiny(&[("r", "r"), ("j", "j"), ("t", "t")], &[("p", "r", "j", "pump"), ("l", "j", "t", "pipe")]);
        let g = default_active_graph(&net);
        let slot = SlotInput::new(&net, 1, 300.0, &BTreeMap::new(), 0.0, 1e6, &BTreeMap::new()).unwrap();
        (net, g, slot)
    }

    #[test]
    fn variable_counts_match_schedule_dimensions() {
        let (net, g, slot) = toy();
        let b = build_convexified(&net, &g, &slot).unwrap();
        let nodes = g.nodes().count();
        let edges = g.edges().count();
        let gains = g.edges().filter(|&e| !net.edges[e].is_fictitious()).count();
        assert_eq!(b.program.num_vars(), nodes + edges + gains + 1);
        let c = build_cone_relaxed(&net, &g, &slot).unwrap();
        assert_eq!(c.program.counts_by_label()["PipeCone"], 1);
    }

    #[test]
    fn binary_count_of_harvest_program() {
        let (net, g, slot) = toy();
        let grid = Grid::new(8, 40.0, 8, 16.0).unwrap();
        let b = build_harvest(&net, &g, &slot, &grid).unwrap();
        assert_eq!(b.program.num_binaries(), 8 + 8);
        assert!(b.program.validate().is_ok());
        assert!(b.program.is_solvable());
        assert!(!build_cone_relaxed(&net, &g, &slot).unwrap().program.is_solvable());
    }

    #[test]
    fn glover_box_collapses_to_product() {
        let (qlo, qhi) = (0.1, 2.0);
        for &(z, q) in &[(0.0, 0.7), (1.0, 0.7), (1.0, qhi), (0.0, qlo)] {
            let lo = [qlo * z, q - (1.0 - z) * qhi].into_iter().fold(f64::MIN, f64::max);
            let hi = [qhi * z, q - (1.0 - z) * qlo].into_iter().fold(f64::MAX, f64::min);
            assert!((lo - q * z).abs() < 1e-12 && (hi - q * z).abs() < 1e-12, "z={z} q={q}: [{lo},{hi}]");
        }
    }

    #[test]
    fn embedded_feasible_schedule_satisfies_reference_rows() {
        let (net, g, slot) = toy();
        let b = build_reference(&net, &g, &slot).unwrap();
        // Pump lifts 20 m at speed w, pipe loses f Q², tank level unchanged
        // so the flow is zero except for the minimum pipe flow.
        let pp = net.edges[net.edge("p").unwrap()].pump().unwrap().clone();
        let mut s = Schedule::zeros(&net);
        let (p, l, fill) = (net.edge("p").unwrap(), net.edge("l").unwrap(), net.edge("t:fill").unwrap());
        let (j, tin, t) = (net.node("j").unwrap(), net.node("t:in").unwrap(), net.node("t").unwrap());
        let q = 1e-3;
        let w = 0.3;
        let gain = crate::hydraulics::pump_head_gain(q, w, &pp);
        s.flow[p] = q;
        s.flow[l] = q;
        s.flow[fill] = q;
        s.gain[p] = gain;
        s.speed[p] = Some(w);
        s.gain[l] = 0.001 * q * q;
        s.head[j] = gain;
        s.head[tin] = gain - s.gain[l];
        let tp = net.tank_params(t);
        s.volume[t] = tp.initial_m3 + 300.0 * q;
        s.head[t] = s.volume[t] / tp.area_m2;
        assert!(check_schedule(&net, &g, &slot, &s).unwrap().is_empty());
        let x = b.embed(&net, &s);
        assert!(b.program.violations(&x, 1e-6, false).is_empty(), "{:?}", b.program.violations(&x, 1e-6, false));
    }
}
