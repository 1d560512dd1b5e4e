//! Network topology, element parameters and the graph sets used by the
//! exactness argument.
//!
//! Each tank in the input file becomes two nodes: the outlet keeps the tank's
//! id and carries its parameters, the inlet is `<id>:in`, and a fictitious
//! edge `<id>:fill` joins them. Physical edges that name the tank as their head
//! are attached to the inlet; edges leaving the tank leave from the outlet.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Junction,
    TankOutlet,
    TankInlet,
    Reservoir,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TankParams {
    pub area_m2: f64,
    pub capacity_m3: f64,
    pub initial_m3: f64,
}

impl TankParams {
    pub fn max_head(&self) -> f64 {
        self.capacity_m3 / self.area_m2
    }

    pub fn initial_head(&self) -> f64 {
        self.initial_m3 / self.area_m2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub elevation_m: f64,
    /// Only meaningful for junctions.
    pub min_head_m: f64,
    /// Present exactly on tank outlets.
    pub tank: Option<TankParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub eta: f64,
    /// Slope and intercept of the lower head line. Fitted at load time when
    /// the file leaves them out.
    #[serde(default)]
    pub d: Option<f64>,
    #[serde(default)]
    pub e: Option<f64>,
}

impl PumpParams {
    pub fn lower_line(&self) -> (f64, f64) {
        (self.d.unwrap_or(f64::NAN), self.e.unwrap_or(f64::NAN))
    }

    /// Head gain of the top speed curve: `a q² + b ω̄ q + c ω̄²`.
    pub fn upper_curve(&self, q: f64) -> f64 {
        self.a * q * q + self.b * self.w_max * q + self.c * self.w_max * self.w_max
    }

    pub fn lower_curve(&self, q: f64) -> f64 {
        self.a * q * q + self.b * self.w_min * q + self.c * self.w_min * self.w_min
    }

    fn check(&self, id: &str) -> Result<()> {
        let ok = self.a < 0.0
            && self.b > 0.0
            && self.c > 0.0
            && self.w_min > 0.0
            && self.w_min <= self.w_max
            && self.q_min >= 0.0
            && self.q_min <= self.q_max
            && self.eta > 0.0
            && self.eta <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Network(format!(
                "pump `{id}` needs a<0, b>0, c>0, 0<w_min<=w_max, 0<=q_min<=q_max, 0<eta<=1"
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeKind {
    Pipe { f_d: f64 },
    Pump(PumpParams),
    Valve,
    /// Tank inlet to tank outlet. Carries flow, has no head law.
    Fictitious,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Edge {
    pub id: String,
    pub tail: usize,
    pub head: usize,
    pub kind: EdgeKind,
    /// Default on/off state used when no explicit assignment is given.
    pub on: bool,
}

impl Edge {
    pub fn is_pipe(&self) -> bool {
        matches!(self.kind, EdgeKind::Pipe { .. })
    }

    pub fn is_pump(&self) -> bool {
        matches!(self.kind, EdgeKind::Pump(_))
    }

    pub fn is_valve(&self) -> bool {
        matches!(self.kind, EdgeKind::Valve)
    }

    pub fn is_fictitious(&self) -> bool {
        matches!(self.kind, EdgeKind::Fictitious)
    }

    pub fn pump(&self) -> Option<&PumpParams> {
        match &self.kind {
            EdgeKind::Pump(p) => Some(p),
            _ => None,
        }
    }

    pub fn friction(&self) -> Option<f64> {
        match self.kind {
            EdgeKind::Pipe { f_d } => Some(f_d),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BigM {
    /// Head coupling constant M₁ (m). Also the flow cap on pipes and valves.
    pub coupling: f64,
    /// Smallest flow (m³/s) an open pipe or valve may carry.
    pub min_flow: f64,
}

impl Default for BigM {
    fn default() -> Self {
        Self { coupling: 1e4, min_flow: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Network {
    pub name: String,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub big_m: BigM,
    pub rho: f64,
    pub g: f64,
    #[serde(skip)]
    node_index: HashMap<String, usize>,
    #[serde(skip)]
    edge_index: HashMap<String, usize>,
}

// ---- file schema ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    #[serde(default)]
    name: Option<String>,
    /// Free text, e.g. where the data came from.
    #[serde(default)]
    #[allow(dead_code)]
    description: Option<String>,
    nodes: Vec<RawNode>,
    edges: Vec<RawEdge>,
    #[serde(default)]
    constants: RawConstants,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum RawNodeKind {
    Junction,
    Tank,
    Reservoir,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    kind: RawNodeKind,
    #[serde(default)]
    elevation_m: f64,
    #[serde(default)]
    min_head_m: Option<f64>,
    #[serde(default)]
    tank: Option<TankParams>,
    /// Elevation of the tank inlet; defaults to the tank's own elevation.
    #[serde(default)]
    inlet_elevation_m: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum RawEdgeKind {
    Pipe,
    Pump,
    Valve,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPipe {
    #[serde(default)]
    f_d: Option<f64>,
    #[serde(default)]
    length_m: Option<f64>,
    #[serde(default)]
    diameter_m: Option<f64>,
    #[serde(default)]
    darcy_factor: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    id: String,
    tail: String,
    head: String,
    kind: RawEdgeKind,
    #[serde(default)]
    pipe: Option<RawPipe>,
    #[serde(default)]
    pump: Option<PumpParams>,
    #[serde(default)]
    on: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstants {
    #[serde(rename = "M1", default = "default_coupling")]
    coupling: f64,
    #[serde(rename = "m1", default = "default_min_flow")]
    min_flow: f64,
    #[serde(default = "default_rho")]
    rho: f64,
    #[serde(default = "default_g")]
    g: f64,
}

fn default_coupling() -> f64 {
    BigM::default().coupling
}
fn default_min_flow() -> f64 {
    BigM::default().min_flow
}
fn default_rho() -> f64 {
    1000.0
}
fn default_g() -> f64 {
    9.81
}

impl Default for RawConstants {
    fn default() -> Self {
        Self { coupling: default_coupling(), min_flow: default_min_flow(), rho: default_rho(), g: default_g() }
    }
}

/// Friction coefficient `f = r ℓ / (2 d s² g)` with `s` the pipe cross-section.
pub fn darcy_coefficient(length_m: f64, diameter_m: f64, darcy_factor: f64, g: f64) -> f64 {
    let s = std::f64::consts::PI * diameter_m * diameter_m / 4.0;
    darcy_factor * length_m / (2.0 * diameter_m * s * s * g)
}

pub fn inlet_id(tank: &str) -> String {
    format!("{tank}:in")
}

pub fn fill_edge_id(tank: &str) -> String {
    format!("{tank}:fill")
}

impl Network {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawNetwork = serde_json::from_str(text).map_err(|e| Error::Network(e.to_string()))?;
        Self::from_raw(raw)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&read_file(path)?)
    }

    fn from_raw(raw: RawNetwork) -> Result<Self> {
        let c = raw.constants;
        if !(c.rho > 0.0 && c.g > 0.0 && c.coupling > 0.0 && c.min_flow > 0.0) {
            return Err(Error::Network("rho, g, M1 and m1 must be positive".into()));
        }
        let mut net = Network {
            name: raw.name.unwrap_or_else(|| "network".into()),
            nodes: Vec::new(),
            edges: Vec::new(),
            big_m: BigM { coupling: c.coupling, min_flow: c.min_flow },
            rho: c.rho,
            g: c.g,
            node_index: HashMap::new(),
            edge_index: HashMap::new(),
        };
        let mut tanks = Vec::new();
        for n in raw.nodes {
            let (kind, tank) = match n.kind {
                RawNodeKind::Junction => (NodeKind::Junction, None),
                RawNodeKind::Reservoir => (NodeKind::Reservoir, None),
                RawNodeKind::Tank => {
                    let t = n.tank.clone().ok_or_else(|| Error::Network(format!("tank `{}` has no tank block", n.id)))?;
                    (NodeKind::TankOutlet, Some(t))
                }
            };
            if kind != NodeKind::TankOutlet && (n.tank.is_some() || n.inlet_elevation_m.is_some()) {
                return Err(Error::Network(format!("`{}` is not a tank but has tank fields", n.id)));
            }
            if kind != NodeKind::Junction && n.min_head_m.is_some() {
                return Err(Error::Network(format!("`{}`: min_head_m applies to junctions only", n.id)));
            }
            if kind == NodeKind::TankOutlet {
                tanks.push((n.id.clone(), n.inlet_elevation_m.unwrap_or(n.elevation_m)));
            }
            net.push_node(Node {
                id: n.id,
                kind,
                elevation_m: n.elevation_m,
                min_head_m: n.min_head_m.unwrap_or(0.0),
                tank,
            })?;
        }
        for (tank, elevation) in &tanks {
            net.push_node(Node {
                id: inlet_id(tank),
                kind: NodeKind::TankInlet,
                elevation_m: *elevation,
                min_head_m: 0.0,
                tank: None,
            })?;
        }
        for e in raw.edges {
            let tail = net.node(&e.tail)?;
            let mut head = net.node(&e.head)?;
            if net.nodes[head].kind == NodeKind::TankOutlet {
                head = net.node(&inlet_id(&e.head))?;
            }
            let kind = match e.kind {
                RawEdgeKind::Valve => {
                    if e.pipe.is_some() || e.pump.is_some() {
                        return Err(Error::Network(format!("valve `{}` takes no parameters", e.id)));
                    }
                    EdgeKind::Valve
                }
                RawEdgeKind::Pump => {
                    let mut p = e.pump.ok_or_else(|| Error::Network(format!("pump `{}` has no pump block", e.id)))?;
                    p.check(&e.id)?;
                    if p.d.is_none() != p.e.is_none() {
                        return Err(Error::Network(format!("pump `{}`: give both d and e or neither", e.id)));
                    }
                    if p.d.is_none() {
                        let (d, ee) = crate::relax::fit_pump_lower_line(&p).map_err(|err| match err {
                            Error::Config(m) => Error::Network(format!("pump `{}`: {m}", e.id)),
                            other => other,
                        })?;
                        p.d = Some(d);
                        p.e = Some(ee);
                    }
                    EdgeKind::Pump(p)
                }
                RawEdgeKind::Pipe => {
                    let p = e.pipe.ok_or_else(|| Error::Network(format!("pipe `{}` has no pipe block", e.id)))?;
                    let f_d = match (p.f_d, p.length_m, p.diameter_m, p.darcy_factor) {
                        (Some(f), None, None, None) => f,
                        (None, Some(l), Some(d), Some(r)) if l > 0.0 && d > 0.0 => darcy_coefficient(l, d, r, net.g),
                        _ => {
                            return Err(Error::Network(format!(
                                "pipe `{}`: give f_d, or length_m with diameter_m and darcy_factor",
                                e.id
                            )))
                        }
                    };
                    if !(f_d > 0.0) {
                        return Err(Error::Network(format!("pipe `{}`: friction must be positive", e.id)));
                    }
                    EdgeKind::Pipe { f_d }
                }
            };
            net.push_edge(Edge { id: e.id, tail, head, kind, on: e.on.unwrap_or(true) })?;
        }
        for (tank, _) in &tanks {
            let outlet = net.node(tank)?;
            let inlet = net.node(&inlet_id(tank))?;
            net.push_edge(Edge {
                id: fill_edge_id(tank),
                tail: inlet,
                head: outlet,
                kind: EdgeKind::Fictitious,
                on: true,
            })?;
        }
        net.validate()?;
        Ok(net)
    }

    fn push_node(&mut self, node: Node) -> Result<()> {
        if self.node_index.insert(node.id.clone(), self.nodes.len()).is_some() {
            return Err(Error::Network(format!("duplicate node id `{}`", node.id)));
        }
        self.nodes.push(node);
        Ok(())
    }

    fn push_edge(&mut self, edge: Edge) -> Result<()> {
        if self.edge_index.insert(edge.id.clone(), self.edges.len()).is_some() {
            return Err(Error::Network(format!("duplicate edge id `{}`", edge.id)));
        }
        self.edges.push(edge);
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        for n in &self.nodes {
            if let Some(t) = &n.tank {
                if !(t.area_m2 > 0.0 && 0.0 <= t.initial_m3 && t.initial_m3 <= t.capacity_m3) {
                    return Err(Error::Network(format!("tank `{}` needs A>0 and 0<=V0<=capacity", n.id)));
                }
            }
            if !n.elevation_m.is_finite() || !n.min_head_m.is_finite() {
                return Err(Error::Network(format!("node `{}` has a non-finite elevation or head", n.id)));
            }
        }
        for e in &self.edges {
            if e.tail == e.head {
                return Err(Error::Network(format!("edge `{}` is a self-loop", e.id)));
            }
            let (t, h) = (self.nodes[e.tail].kind, self.nodes[e.head].kind);
            if e.is_fictitious() {
                continue;
            }
            // The tank model only lets water in at the top and out at the bottom.
            if t == NodeKind::TankInlet {
                return Err(Error::Network(format!("edge `{}` leaves a tank inlet", e.id)));
            }
            if h == NodeKind::Reservoir {
                return Err(Error::Network(format!("edge `{}` flows into a reservoir", e.id)));
            }
        }
        Ok(())
    }

    pub fn node(&self, id: &str) -> Result<usize> {
        self.node_index.get(id).copied().ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn edge(&self, id: &str) -> Option<usize> {
        self.edge_index.get(id).copied()
    }

    pub fn tank_outlets(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].kind == NodeKind::TankOutlet)
    }

    pub fn tank_params(&self, i: usize) -> &TankParams {
        self.nodes[i].tank.as_ref().expect("tank outlet")
    }

    pub fn fictitious_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.edges.len()).filter(|&e| self.edges[e].is_fictitious())
    }

    pub fn pumps(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.edges.len()).filter(|&e| self.edges[e].is_pump())
    }

    pub fn physical_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.edges.len()).filter(|&e| !self.edges[e].is_fictitious())
    }

    /// The default on/off vector taken from each edge's `on` flag.
    pub fn default_assignment(&self) -> BTreeMap<String, bool> {
        self.physical_edges().map(|e| (self.edges[e].id.clone(), self.edges[e].on)).collect()
    }

    /// Initial tank state as `(volume, head)` per tank outlet.
    pub fn initial_tank_state(&self) -> BTreeMap<String, (f64, f64)> {
        self.tank_outlets()
            .map(|i| {
                let t = self.tank_params(i);
                (self.nodes[i].id.clone(), (t.initial_m3, t.initial_head()))
            })
            .collect()
    }
}

// ---- active graph ----

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum TopologyViolation {
    /// A directed cycle, listed node by node.
    Cycle { nodes: Vec<String> },
    /// A non-valve edge entering a node with several incoming edges.
    UnprotectedMerge { node: String, edge: String },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopologyReport {
    pub holds: bool,
    pub violations: Vec<TopologyViolation>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Partition {
    pub upstream: Vec<usize>,
    pub downstream: Vec<usize>,
    pub upstream_complement: Vec<usize>,
    pub downstream_complement: Vec<usize>,
}

/// The graph left after removing off edges and then isolated nodes.
///
/// Reachability is over retained edges including the fictitious ones.
/// `reach[u][v]` means a directed path of length at least one from `u` to `v`.
#[derive(Clone, Debug)]
pub struct ActiveGraph {
    pub node_on: Vec<bool>,
    pub edge_on: Vec<bool>,
    reach: Vec<Vec<bool>>,
    indegree: Vec<usize>,
    merge: Vec<bool>,
    correction: Vec<Vec<usize>>,
}

impl ActiveGraph {
    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_on.len()).filter(|&i| self.node_on[i])
    }

    pub fn edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.edge_on.len()).filter(|&e| self.edge_on[e])
    }

    pub fn reaches(&self, u: usize, v: usize) -> bool {
        self.reach[u][v]
    }

    pub fn indegree(&self, i: usize) -> usize {
        self.indegree[i]
    }

    /// Whether `i` belongs to the merge set: a junction-like node (junction or
    /// tank inlet) with at least two retained incoming edges.
    pub fn is_merge(&self, i: usize) -> bool {
        self.merge[i]
    }

    pub fn merge_nodes(&self) -> Vec<usize> {
        self.nodes().filter(|&i| self.merge[i]).collect()
    }

    /// Cached correction edge set of node `i`.
    pub fn correction_edges(&self, i: usize) -> &[usize] {
        &self.correction[i]
    }

    fn stops_shift(&self, net: &Network, i: usize) -> bool {
        self.merge[i] || net.nodes[i].kind == NodeKind::TankOutlet
    }
}

/// Build the retained subgraph for a per-edge on/off assignment.
///
/// Every physical edge must appear in `assignment`. A fictitious edge is kept
/// when both of its endpoints are kept. A node is kept when some kept edge
/// touches it; fictitious edges keep their endpoints alive, so one pass is a
/// fixed point.
pub fn build_active_subgraph(net: &Network, assignment: &BTreeMap<String, bool>) -> Result<ActiveGraph> {
    let mut edge_on = vec![false; net.edges.len()];
    for e in net.physical_edges() {
        let id = &net.edges[e].id;
        edge_on[e] = *assignment.get(id).ok_or_else(|| Error::MissingAssignment(id.clone()))?;
    }
    for key in assignment.keys() {
        match net.edge(key) {
            Some(e) if !net.edges[e].is_fictitious() => {}
            _ => return Err(Error::Network(format!("assignment names unknown edge `{key}`"))),
        }
    }
    let mut node_on = vec![false; net.nodes.len()];
    for e in net.physical_edges().filter(|&e| edge_on[e]) {
        node_on[net.edges[e].tail] = true;
        node_on[net.edges[e].head] = true;
    }
    // A tank whose inlet or outlet is still wired keeps both halves.
    for e in net.fictitious_edges() {
        let (t, h) = (net.edges[e].tail, net.edges[e].head);
        if node_on[t] || node_on[h] {
            node_on[t] = true;
            node_on[h] = true;
            edge_on[e] = true;
        }
    }
    Ok(ActiveGraph::assemble(net, node_on, edge_on))
}

/// Active graph for the network's own `on` flags.
pub fn default_active_graph(net: &Network) -> ActiveGraph {
    build_active_subgraph(net, &net.default_assignment()).expect("default assignment covers every edge")
}

impl ActiveGraph {
    fn assemble(net: &Network, node_on: Vec<bool>, edge_on: Vec<bool>) -> Self {
        let n = net.nodes.len();
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut indegree = vec![0; n];
        for (e, edge) in net.edges.iter().enumerate() {
            if edge_on[e] {
                out[edge.tail].push(edge.head);
                indegree[edge.head] += 1;
            }
        }
        let mut reach = vec![vec![false; n]; n];
        for s in (0..n).filter(|&s| node_on[s]) {
            let mut queue: VecDeque<usize> = out[s].iter().copied().collect();
            while let Some(v) = queue.pop_front() {
                if !reach[s][v] {
                    reach[s][v] = true;
                    queue.extend(out[v].iter().copied());
                }
            }
        }
        let merge = (0..n)
            .map(|i| {
                node_on[i]
                    && matches!(net.nodes[i].kind, NodeKind::Junction | NodeKind::TankInlet)
                    && indegree[i] >= 2
            })
            .collect();
        let mut g = ActiveGraph { node_on, edge_on, reach, indegree, merge, correction: vec![Vec::new(); n] };
        g.correction = (0..n).map(|i| if g.node_on[i] { correction_by_definition(net, &g, i) } else { Vec::new() }).collect();
        g
    }
}

/// Largest number of retained incoming edges (physical and fictitious) at any
/// retained node.
pub fn max_indegree(g: &ActiveGraph) -> usize {
    g.nodes().map(|i| g.indegree[i]).max().unwrap_or(0)
}

/// Split the retained nodes other than `i` into upstream, downstream and the
/// two complements.
///
/// Upstream nodes reach `i`, downstream nodes are reached from `i`. Of the
/// rest, a node joined by a directed path (either way) to an upstream node goes
/// to the upstream complement; everything else is the downstream complement,
/// so the five parts always cover the graph.
pub fn node_partition(g: &ActiveGraph, i: usize) -> Result<Partition> {
    if i >= g.node_on.len() || !g.node_on[i] {
        return Err(Error::UnknownNode(format!("#{i}")));
    }
    let upstream: Vec<usize> = g.nodes().filter(|&n| n != i && g.reach[n][i]).collect();
    let downstream: Vec<usize> = g.nodes().filter(|&n| n != i && g.reach[i][n] && !g.reach[n][i]).collect();
    let mut upstream_complement = Vec::new();
    let mut downstream_complement = Vec::new();
    for n in g.nodes() {
        if n == i || g.reach[n][i] || g.reach[i][n] {
            continue;
        }
        if upstream.iter().any(|&u| g.reach[n][u] || g.reach[u][n]) {
            upstream_complement.push(n);
        } else {
            downstream_complement.push(n);
        }
    }
    Ok(Partition { upstream, downstream, upstream_complement, downstream_complement })
}

/// Tanks and merge nodes lying on some directed path from `u` to `v`,
/// excluding `u` and including `v`. For `u == v` this is `{v}` when `v` itself
/// qualifies.
pub fn merge_set_between(net: &Network, g: &ActiveGraph, u: usize, v: usize) -> Vec<usize> {
    if u == v {
        return if g.stops_shift(net, v) { vec![v] } else { Vec::new() };
    }
    if !g.reach[u][v] {
        return Vec::new();
    }
    g.nodes()
        .filter(|&n| n != u && g.reach[u][n] && (n == v || g.reach[n][v]) && g.stops_shift(net, n))
        .collect()
}

/// Pipes lying on a path into `i` whose stretch from the pipe's head to `i`
/// meets no tank and no merge node.
pub fn correction_edge_set(g: &ActiveGraph, i: usize) -> Vec<usize> {
    g.correction.get(i).cloned().unwrap_or_default()
}

fn correction_by_definition(net: &Network, g: &ActiveGraph, i: usize) -> Vec<usize> {
    g.edges()
        .filter(|&e| {
            let edge = &net.edges[e];
            edge.is_pipe()
                && (edge.head == i || g.reach[edge.head][i])
                && merge_set_between(net, g, edge.head, i).is_empty()
        })
        .collect()
}

/// Check the two topology conditions for exact reconstruction: no directed
/// cycle, and only valves entering merge nodes.
pub fn check_theorem1(net: &Network, g: &ActiveGraph) -> TopologyReport {
    let mut violations = Vec::new();
    let mut seen = vec![false; net.nodes.len()];
    for i in g.nodes() {
        if seen[i] || !g.reach[i][i] {
            continue;
        }
        // Nodes on a cycle through i form its strongly connected component.
        let comp: Vec<usize> = g.nodes().filter(|&n| n == i || (g.reach[i][n] && g.reach[n][i])).collect();
        for &n in &comp {
            seen[n] = true;
        }
        violations.push(TopologyViolation::Cycle { nodes: comp.iter().map(|&n| net.nodes[n].id.clone()).collect() });
    }
    for e in g.edges() {
        let edge = &net.edges[e];
        if g.merge[edge.head] && !edge.is_valve() {
            violations.push(TopologyViolation::UnprotectedMerge {
                node: net.nodes[edge.head].id.clone(),
                edge: edge.id.clone(),
            });
        }
    }
    TopologyReport { holds: violations.is_empty(), violations }
}
