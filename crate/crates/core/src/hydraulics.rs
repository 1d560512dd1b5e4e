//! Physical model of one slot: element laws, a constraint checker for
//! candidate schedules and the slot energy audit.
//!
//! Heads stored in a [`Schedule`] are pressure heads. Couplings across edges
//! and the audit use total heads, pressure plus elevation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ActiveGraph, EdgeKind, Network, NodeKind, PumpParams};

/// Absolute feasibility tolerance, scaled up by the magnitude of the largest
/// term in a row when that exceeds one.
pub const TOL_FEAS: f64 = 1e-6;

/// Head gain of a pump at normalized speed `speed`.
pub fn pump_head_gain(q: f64, speed: f64, p: &PumpParams) -> f64 {
    p.a * q * q + p.b * q * speed + p.c * speed * speed
}

pub fn darcy_head_loss(q: f64, f_d: f64) -> f64 {
    f_d * q * q
}

/// Electrical energy drawn by a pump over one slot.
pub fn pump_energy(head_gain: f64, q: f64, eta: f64, rho: f64, g: f64, delta: f64) -> f64 {
    rho * g * delta * head_gain * q / eta
}

/// Everything revealed at the start of a slot, plus the tank state it starts
/// from. Vectors are indexed like `Network::nodes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotInput {
    pub k: usize,
    pub delta_s: f64,
    /// m³/s, nonzero only at junctions.
    pub demand: Vec<f64>,
    /// $/J.
    pub price: f64,
    /// W.
    pub r_watt: f64,
    /// m³, meaningful at tank outlets only.
    pub prev_volume: Vec<f64>,
}

impl SlotInput {
    /// Slot with the given demands (m³/s, by node id) and tank volumes (m³, by
    /// tank id). Tanks missing from `prev_volume` start from their initial
    /// volume.
    pub fn new(
        net: &Network,
        k: usize,
        delta_s: f64,
        demands: &BTreeMap<String, f64>,
        price: f64,
        r_watt: f64,
        prev_volume: &BTreeMap<String, f64>,
    ) -> Result<Self> {
        if !(delta_s > 0.0) {
            return Err(Error::Scenario(format!("slot length must be positive, got {delta_s}")));
        }
        if !(r_watt >= 0.0) || !(price >= 0.0) {
            return Err(Error::Scenario(format!("slot {k}: price and signal must be nonnegative")));
        }
        let mut demand = vec![0.0; net.nodes.len()];
        for (id, &d) in demands {
            let i = net.node(id)?;
            if net.nodes[i].kind != NodeKind::Junction {
                return Err(Error::Scenario(format!("demand at `{id}`, which is not a junction")));
            }
            if !(d >= 0.0) {
                return Err(Error::Scenario(format!("negative demand at `{id}`")));
            }
            demand[i] = d;
        }
        let mut volume = vec![0.0; net.nodes.len()];
        for i in net.tank_outlets() {
            volume[i] = net.tank_params(i).initial_m3;
        }
        for (id, &v) in prev_volume {
            let i = net.node(id)?;
            let t = net.nodes[i].tank.as_ref().ok_or_else(|| Error::Scenario(format!("`{id}` is not a tank")))?;
            if !(0.0..=t.capacity_m3).contains(&v) {
                return Err(Error::Scenario(format!("tank `{id}` volume {v} outside [0, capacity]")));
            }
            volume[i] = v;
        }
        Ok(Self { k, delta_s, demand, price, r_watt, prev_volume: volume })
    }

    /// Pressure head at a tank outlet at the start of the slot.
    pub fn prev_head(&self, net: &Network, i: usize) -> f64 {
        self.prev_volume[i] / net.tank_params(i).area_m2
    }
}

/// Decision values for one slot, indexed like the network's nodes and edges.
/// Entries of elements outside the active graph are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Pressure head per node.
    pub head: Vec<f64>,
    pub flow: Vec<f64>,
    /// Gain for pumps, loss for pipes and valves, zero on fictitious edges.
    pub gain: Vec<f64>,
    /// Per node; only tank outlets carry a volume.
    pub volume: Vec<f64>,
    pub speed: Vec<Option<f64>>,
}

impl Schedule {
    pub fn zeros(net: &Network) -> Self {
        let (n, m) = (net.nodes.len(), net.edges.len());
        Self { head: vec![0.0; n], flow: vec![0.0; m], gain: vec![0.0; m], volume: vec![0.0; n], speed: vec![None; m] }
    }

    fn check_dims(&self, net: &Network) -> Result<()> {
        let (n, m) = (net.nodes.len(), net.edges.len());
        if self.head.len() != n || self.volume.len() != n || self.flow.len() != m || self.gain.len() != m || self.speed.len() != m {
            return Err(Error::Dimension(format!(
                "schedule has {}/{} node and {}/{}/{} edge entries, network has {n} nodes and {m} edges",
                self.head.len(),
                self.volume.len(),
                self.flow.len(),
                self.gain.len(),
                self.speed.len()
            )));
        }
        Ok(())
    }

    pub fn total_head(&self, net: &Network, i: usize) -> f64 {
        self.head[i] + net.nodes[i].elevation_m
    }

    /// Electrical pump energy over the slot.
    pub fn pump_energy(&self, net: &Network, delta: f64) -> f64 {
        net.pumps()
            .map(|e| {
                let p = net.edges[e].pump().expect("pump");
                pump_energy(self.gain[e], self.flow[e], p.eta, net.rho, net.g, delta)
            })
            .sum()
    }

    pub fn to_doc(&self, net: &Network, reconstructed: bool) -> ScheduleDoc {
        let nodes = |v: &[f64]| net.nodes.iter().zip(v).map(|(n, x)| (n.id.clone(), *x)).collect();
        let edges = |v: &[f64]| net.edges.iter().zip(v).map(|(e, x)| (e.id.clone(), *x)).collect();
        ScheduleDoc {
            head_m: nodes(&self.head),
            flow_m3s: edges(&self.flow),
            gain_m: edges(&self.gain),
            volume_m3: net.tank_outlets().map(|i| (net.nodes[i].id.clone(), self.volume[i])).collect(),
            speed: net.edges.iter().zip(&self.speed).filter_map(|(e, s)| s.map(|s| (e.id.clone(), s))).collect(),
            reconstructed,
        }
    }

    pub fn from_doc(net: &Network, doc: &ScheduleDoc) -> Result<Self> {
        let mut s = Schedule::zeros(net);
        for (id, &v) in &doc.head_m {
            s.head[net.node(id)?] = v;
        }
        for (id, &v) in &doc.volume_m3 {
            s.volume[net.node(id)?] = v;
        }
        let edge = |id: &str| net.edge(id).ok_or_else(|| Error::Scenario(format!("schedule names unknown edge `{id}`")));
        for (id, &v) in &doc.flow_m3s {
            s.flow[edge(id)?] = v;
        }
        for (id, &v) in &doc.gain_m {
            s.gain[edge(id)?] = v;
        }
        for (id, &v) in &doc.speed {
            s.speed[edge(id)?] = Some(v);
        }
        Ok(s)
    }
}

/// Serialized schedule keyed by element id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleDoc {
    pub head_m: BTreeMap<String, f64>,
    pub flow_m3s: BTreeMap<String, f64>,
    pub gain_m: BTreeMap<String, f64>,
    pub volume_m3: BTreeMap<String, f64>,
    #[serde(default)]
    pub speed: BTreeMap<String, f64>,
    #[serde(default)]
    pub reconstructed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    pub element: String,
    /// Amount by which the constraint is missed, in the row's own units.
    pub residual: f64,
}

struct Checker<'a> {
    tol: f64,
    out: Vec<Violation>,
    element: &'a str,
}

impl Checker<'_> {
    fn scale(&self, terms: &[f64]) -> f64 {
        self.tol * terms.iter().fold(1.0f64, |m, t| m.max(t.abs()))
    }

    fn eq(&mut self, constraint: &str, lhs: f64, rhs: f64, terms: &[f64]) {
        let r = lhs - rhs;
        if !(r.abs() <= self.scale(terms)) {
            self.push(constraint, r);
        }
    }

    /// `lhs ≤ rhs`.
    fn le(&mut self, constraint: &str, lhs: f64, rhs: f64, terms: &[f64]) {
        let r = lhs - rhs;
        if !(r <= self.scale(terms)) {
            self.push(constraint, r);
        }
    }

    fn push(&mut self, constraint: &str, residual: f64) {
        self.out.push(Violation { constraint: constraint.into(), element: self.element.into(), residual });
    }
}

/// All constraint violations of `s` for one slot, at tolerance [`TOL_FEAS`].
///
/// Pumps are checked against their speed curve when `s` carries a speed and
/// against the convexified band otherwise. Elements off in `g` must carry no
/// flow and are otherwise unconstrained.
pub fn check_schedule(net: &Network, g: &ActiveGraph, slot: &SlotInput, s: &Schedule) -> Result<Vec<Violation>> {
    check_schedule_with_tol(net, g, slot, s, TOL_FEAS)
}

pub fn check_schedule_with_tol(net: &Network, g: &ActiveGraph, slot: &SlotInput, s: &Schedule, tol: f64) -> Result<Vec<Violation>> {
    s.check_dims(net)?;
    if slot.demand.len() != net.nodes.len() || slot.prev_volume.len() != net.nodes.len() {
        return Err(Error::Dimension("slot input does not match the network".into()));
    }
    let n = net.nodes.len();
    let mut inflow = vec![0.0; n];
    let mut outflow = vec![0.0; n];
    for e in g.edges() {
        inflow[net.edges[e].head] += s.flow[e];
        outflow[net.edges[e].tail] += s.flow[e];
    }
    let mut all = Vec::new();
    let delta = slot.delta_s;
    for (i, node) in net.nodes.iter().enumerate() {
        let mut c = Checker { tol, out: Vec::new(), element: &node.id };
        let d = slot.demand[i];
        if !g.node_on[i] {
            c.eq("FlowConservation", d, 0.0, &[d]);
            all.append(&mut c.out);
            continue;
        }
        let h = s.head[i];
        match node.kind {
            NodeKind::Junction | NodeKind::TankInlet => {
                c.eq("FlowConservation", inflow[i] - outflow[i], d, &[inflow[i], outflow[i], d]);
                if node.kind == NodeKind::Junction {
                    c.le("MinPressureHead", node.min_head_m, h, &[h]);
                } else {
                    c.le("TankInletHead", node.elevation_m, h, &[h]);
                }
            }
            NodeKind::TankOutlet => {
                let t = net.tank_params(i);
                let net_in = inflow[i] - outflow[i];
                let v = s.volume[i];
                let v0 = slot.prev_volume[i];
                c.eq("TankVolumeBalance", v, v0 + delta * net_in, &[v, v0, delta * inflow[i], delta * outflow[i]]);
                c.le("TankCapacity", 0.0, v, &[v]);
                c.le("TankCapacity", v, t.capacity_m3, &[v]);
                let h0 = slot.prev_head(net, i);
                let step = delta / t.area_m2;
                c.eq("TankHeadDynamics", h - h0, step * net_in, &[h, h0, step * inflow[i], step * outflow[i]]);
            }
            NodeKind::Reservoir => c.eq("ReservoirHead", h, 0.0, &[]),
        }
        all.append(&mut c.out);
    }
    let m1 = net.big_m.min_flow;
    let cap = net.big_m.coupling;
    for (e, edge) in net.edges.iter().enumerate() {
        let mut c = Checker { tol, out: Vec::new(), element: &edge.id };
        let q = s.flow[e];
        let gain = s.gain[e];
        if !g.edge_on[e] {
            c.eq("InactiveFlow", q, 0.0, &[]);
            all.append(&mut c.out);
            continue;
        }
        let (ht, hh) = (s.total_head(net, edge.tail), s.total_head(net, edge.head));
        let terms = [ht, hh, gain];
        match &edge.kind {
            EdgeKind::Pump(p) => {
                c.le("PumpFlowBounds", p.q_min, q, &[q]);
                c.le("PumpFlowBounds", q, p.q_max, &[q]);
                c.eq("PumpCoupling", hh - ht, gain, &terms);
                match s.speed[e] {
                    Some(w) => {
                        c.le("PumpSpeedBounds", p.w_min, w, &[w]);
                        c.le("PumpSpeedBounds", w, p.w_max, &[w]);
                        let curve = pump_head_gain(q, w, p);
                        c.eq("PumpCurve", gain, curve, &[gain, curve]);
                    }
                    None => {
                        let up = p.upper_curve(q);
                        c.le("PumpCurveUpper", gain, up, &[gain, up]);
                        let (d, e0) = p.lower_line();
                        c.le("PumpCurveLower", d * q + e0, gain, &[gain, e0]);
                    }
                }
            }
            EdgeKind::Valve | EdgeKind::Pipe { .. } => {
                let label = if edge.is_valve() { "Valve" } else { "Pipe" };
                c.eq(&format!("{label}Coupling"), hh - ht + gain, 0.0, &terms);
                c.le(&format!("{label}FlowBounds"), m1, q, &[q]);
                c.le(&format!("{label}FlowBounds"), q, cap, &[q]);
                match edge.kind {
                    EdgeKind::Pipe { f_d } => {
                        let loss = darcy_head_loss(q, f_d);
                        c.eq("PipeHeadLoss", gain, loss, &[gain, loss]);
                    }
                    _ => c.le("ValveLossNonneg", 0.0, gain, &[gain]),
                }
            }
            EdgeKind::Fictitious => c.le("FictitiousFlowNonneg", 0.0, q, &[q]),
        }
        all.append(&mut c.out);
    }
    Ok(all)
}

/// Energy balance of one slot, in joules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub k: usize,
    /// Hydraulic energy added by pumps.
    pub e_pump: f64,
    pub e_reservoir: f64,
    /// Energy dissipated on pipes, valves and tank fill edges.
    pub e_loss: f64,
    pub e_tank: f64,
    pub e_demand: f64,
    /// `(e_pump + e_reservoir) − (e_tank + e_loss + e_demand)`.
    pub imbalance: f64,
    /// Stored energy as `ρ g Σ (A/2)(H² − H_prev²)` over pressure heads. Differs
    /// from `e_tank` by the terms that the closed balance assigns to losses.
    pub e_tank_trapezoid: f64,
    /// Energy drawn from the grid by the pumps, efficiency included.
    pub e_pump_electrical: f64,
    pub per_element: BTreeMap<String, f64>,
}

impl AuditReport {
    pub fn max_term(&self) -> f64 {
        [self.e_pump, self.e_reservoir, self.e_loss, self.e_tank, self.e_demand]
            .iter()
            .fold(0.0f64, |m, t| m.max(t.abs()))
    }

    /// Whether the balance closes to within `rel` of the largest term.
    pub fn closes(&self, rel: f64) -> bool {
        self.imbalance.abs() <= rel * self.max_term().max(f64::MIN_POSITIVE)
    }
}

/// Energy audit of a schedule over one slot.
///
/// All head terms use total heads. The tank term uses the end-of-slot head,
/// `ρ g Σ A h[k] (H[k] − H[k−1])`; with this form the balance is an identity
/// whenever flow conservation and tank dynamics hold.
pub fn energy_audit(net: &Network, g: &ActiveGraph, slot: &SlotInput, s: &Schedule) -> Result<AuditReport> {
    s.check_dims(net)?;
    let w = net.rho * net.g * slot.delta_s;
    let mut per_element = BTreeMap::new();
    let (mut e_pump, mut e_res, mut e_loss, mut e_tank, mut e_dem, mut e_trap) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut e_elec = 0.0;
    for e in g.edges() {
        let edge = &net.edges[e];
        let q = s.flow[e];
        let term = match &edge.kind {
            EdgeKind::Pump(p) => {
                e_elec += pump_energy(s.gain[e], q, p.eta, net.rho, net.g, slot.delta_s);
                let v = w * s.gain[e] * q;
                e_pump += v;
                v
            }
            _ => {
                let v = w * q * (s.total_head(net, edge.tail) - s.total_head(net, edge.head));
                e_loss += v;
                v
            }
        };
        per_element.insert(edge.id.clone(), term);
        if net.nodes[edge.tail].kind == NodeKind::Reservoir {
            e_res += w * q * net.nodes[edge.tail].elevation_m;
        }
    }
    for i in g.nodes() {
        let node = &net.nodes[i];
        match node.kind {
            NodeKind::Junction => {
                let v = w * slot.demand[i] * s.total_head(net, i);
                e_dem += v;
                per_element.insert(node.id.clone(), v);
            }
            NodeKind::TankOutlet => {
                let a = net.tank_params(i).area_m2;
                let (h, h0) = (s.head[i], slot.prev_head(net, i));
                let v = net.rho * net.g * a * s.total_head(net, i) * (h - h0);
                e_tank += v;
                e_trap += net.rho * net.g * a / 2.0 * (h * h - h0 * h0);
                per_element.insert(node.id.clone(), v);
            }
            _ => {}
        }
    }
    let imbalance = (e_pump + e_res) - (e_tank + e_loss + e_dem);
    Ok(AuditReport {
        k: slot.k,
        e_pump,
        e_reservoir: e_res,
        e_loss,
        e_tank,
        e_demand: e_dem,
        imbalance,
        e_tank_trapezoid: e_trap,
        e_pump_electrical: e_elec,
        per_element,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{default_active_graph, tests::tiny};
    use proptest::prelude::*;

    fn sv_pump() -> PumpParams {
        PumpParams { a: -1.0941e-4, b: 5.1516e-2, c: 223.32, w_min: 0.2, w_max: 1.0, q_min: 0.0, q_max: 20.0, eta: 0.85, d: None, e: None }
    }

    #[test]
    fn pump_gain_values() {
        let p = sv_pump();
        assert_eq!(pump_head_gain(0.0, 1.0, &p), 223.32);
        let want = -1.0941e-4 * 100.0 + 5.1516e-2 * 10.0 + 223.32;
        assert!((pump_head_gain(10.0, 1.0, &p) - want).abs() < 1e-12);
        assert!((want - 223.824).abs() < 1e-3);
        assert_eq!(pump_head_gain(1.0, 0.0, &p), p.a);
    }

    #[test]
    fn darcy_values() {
        assert_eq!(darcy_head_loss(0.0, 0.001), 0.0);
        assert!((darcy_head_loss(2.0, 0.001) - 0.004).abs() < 1e-15);
        assert!((darcy_head_loss(0.2, 0.001) - 4.0e-5).abs() < 1e-15);
    }

    #[test]
    fn pump_energy_values() {
        assert_eq!(pump_energy(10.0, 0.0, 1.0, 1000.0, 9.81, 300.0), 0.0);
        let e = pump_energy(10.0, 0.1, 1.0, 1000.0, 9.81, 300.0);
        assert!((e - 2.943e6).abs() < 1e-6);
        assert!((pump_energy(10.0, 0.1, 0.5, 1000.0, 9.81, 300.0) - 2.0 * e).abs() < 1e-6);
    }

    /// Reservoir at elevation 10 feeding one junction through a valve.
    fn reservoir_junction() -> (Network, ActiveGraph) {
        let text = r#"{"nodes":[
            {"id":"r","kind":"reservoir","elevation_m":10.0},
            {"id":"j","kind":"junction","elevation_m":0.0,"min_head_m":0.0}],
          "edges":[{"id":"v","tail":"r","head":"j","kind":"valve"}]}"#;
        let net = Network::from_json_str(text).unwrap();
        let g = default_active_graph(&net);
        (net, g)
    }

    #[test]
    fn demand_without_supply_is_reported() {
        let (net, g) = reservoir_junction();
        let slot = SlotInput::new(&net, 1, 300.0, &[("j".to_string(), 0.1)].into(), 0.0, 0.0, &BTreeMap::new()).unwrap();
        let mut s = Schedule::zeros(&net);
        let v = net.edge("v").unwrap();
        s.flow[v] = 1e-6;
        s.head[1] = 10.0;
        let viol = check_schedule(&net, &g, &slot, &s).unwrap();
        let cons: Vec<_> = viol.iter().filter(|v| v.constraint == "FlowConservation").collect();
        assert_eq!(cons.len(), 1);
        assert!((cons[0].residual + 0.1).abs() < 1e-5);
    }

    #[test]
    fn reservoir_energy_matches_definition() {
        let (net, g) = reservoir_junction();
        let slot = SlotInput::new(&net, 1, 300.0, &[("j".to_string(), 0.1)].into(), 0.0, 0.0, &BTreeMap::new()).unwrap();
        let mut s = Schedule::zeros(&net);
        let (j, v) = (net.node("j").unwrap(), net.edge("v").unwrap());
        s.flow[v] = 0.1;
        s.head[j] = 10.0;
        assert!(check_schedule(&net, &g, &slot, &s).unwrap().is_empty());
        let a = energy_audit(&net, &g, &slot, &s).unwrap();
        assert!((a.e_reservoir - 1000.0 * 9.81 * 300.0 * 0.1 * 10.0).abs() < 1e-6);
        assert!(a.closes(1e-12));
    }

    #[test]
    fn zero_schedule_audits_to_zero() {
        let net = tiny(&[("r", "r"), ("j", "j"), ("t", "t")], &[("p", "r", "j", "pump"), ("q", "j", "t", "pipe")]);
        let g = default_active_graph(&net);
        let slot = SlotInput::new(&net, 1, 300.0, &BTreeMap::new(), 0.0, 0.0, &BTreeMap::new()).unwrap();
        let a = energy_audit(&net, &g, &slot, &Schedule::zeros(&net)).unwrap();
        assert_eq!(a.max_term(), 0.0);
        assert_eq!(a.imbalance, 0.0);
    }

    #[test]
    fn wrong_dimensions_are_an_error() {
        let (net, g) = reservoir_junction();
        let slot = SlotInput::new(&net, 1, 300.0, &BTreeMap::new(), 0.0, 0.0, &BTreeMap::new()).unwrap();
        let mut s = Schedule::zeros(&net);
        s.flow.pop();
        assert!(matches!(check_schedule(&net, &g, &slot, &s), Err(Error::Dimension(_))));
    }

    proptest! {
        #[test]
        fn darcy_is_even_and_monotone(q in -5.0f64..5.0, dq in 0.0f64..1.0, f in 1e-4f64..1.0) {
            prop_assert_eq!(darcy_head_loss(q, f), darcy_head_loss(-q, f));
            prop_assert!(darcy_head_loss(q.abs() + dq, f) >= darcy_head_loss(q.abs(), f));
        }

        #[test]
        fn pump_gain_is_concave_in_flow(q in 0.0f64..20.0, w in 0.2f64..1.0, h in 1e-3f64..1.0) {
            let p = sv_pump();
            let second = pump_head_gain(q + h, w, &p) - 2.0 * pump_head_gain(q, w, &p) + pump_head_gain(q - h, w, &p);
            prop_assert!(second <= 1e-9);
        }

        /// Tanks stay consistent: a volume and head built from the same flows
        /// keep `V = A H`.
        #[test]
        fn tank_volume_and_head_agree(v0 in 0.0f64..100.0, q_in in 0.0f64..0.05, q_out in 0.0f64..0.05) {
            let area = 10.0;
            let delta = 300.0;
            let v = v0 + delta * (q_in - q_out);
            let h = v0 / area + delta / area * (q_in - q_out);
            prop_assert!((v / area - h).abs() < 1e-9);
        }
    }
}
