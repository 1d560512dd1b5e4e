//! Shared fixtures for the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use hydroharvest::hydraulics::SlotInput;
use hydroharvest::network::{default_active_graph, ActiveGraph, Network};
use rand::Rng;
use serde_json::{json, Value};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn toy() -> Network {
    Network::from_file(&data_path("toy.json")).expect("toy network loads")
}

/// Pump used by the random networks: the case-study coefficients at reduced
/// speed, so gains stay under a 40 m grid.
pub fn pump_json() -> Value {
    json!({"a": -1.0941e-4, "b": 5.1516e-2, "c": 223.32, "w_min": 0.2, "w_max": 0.4, "q_min": 0.02, "q_max": 0.6, "eta": 0.85})
}

/// A random network that meets the topology conditions: a reservoir feeds
/// one pump into a tree of junctions, extra valves create merge nodes whose
/// every incoming edge is a valve, and one or two tanks hang off junctions.
/// Every leaf junction has demand so that each retained edge can carry flow.
///
/// Returns the network and per-junction demands in m³/s, keyed by id.
pub fn random_network(rng: &mut impl Rng, max_junctions: usize, max_tanks: usize) -> (Network, BTreeMap<String, f64>) {
    let n = rng.gen_range(2..=max_junctions.max(2));
    let tanks = rng.gen_range(1..=max_tanks.max(1));
    let mut nodes = vec![json!({"id": "r", "kind": "reservoir"})];
    let mut edges = vec![json!({"id": "p", "tail": "r", "head": "j1", "kind": "pump", "pump": pump_json()})];
    let mut parent = vec![0usize; n + 1];
    let mut into: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for k in 1..=n {
        nodes.push(json!({"id": format!("j{k}"), "kind": "junction", "min_head_m": 5.0}));
        if k >= 2 {
            parent[k] = rng.gen_range(1..k);
            into[k].push(parent[k]);
            if k >= 3 && rng.gen_bool(0.4) {
                let other = rng.gen_range(1..k);
                if other != parent[k] {
                    into[k].push(other);
                }
            }
        }
    }
    let mut has_child = vec![false; n + 1];
    for k in 2..=n {
        let merge = into[k].len() > 1;
        for &u in &into[k] {
            has_child[u] = true;
            let kind = if merge { "valve" } else { "pipe" };
            let mut e = json!({"id": format!("e{u}_{k}"), "tail": format!("j{u}"), "head": format!("j{k}"), "kind": kind});
            if !merge {
                e["pipe"] = json!({"f_d": rng.gen_range(1.0..20.0)});
            }
            edges.push(e);
        }
    }
    for t in 1..=tanks {
        let at = rng.gen_range(1..=n);
        has_child[at] = true;
        nodes.push(json!({"id": format!("t{t}"), "kind": "tank", "tank": {"area_m2": 10.0, "capacity_m3": 160.0, "initial_m3": 40.0}}));
        edges.push(json!({"id": format!("lt{t}"), "tail": format!("j{at}"), "head": format!("t{t}"), "kind": "pipe", "pipe": {"f_d": rng.gen_range(1.0..20.0)}}));
    }
    let mut demands = BTreeMap::new();
    for k in 1..=n {
        if !has_child[k] || rng.gen_bool(0.3) {
            demands.insert(format!("j{k}"), rng.gen_range(0.005..0.03));
        }
    }
    let doc = json!({"name": "random", "nodes": nodes, "edges": edges});
    let net = Network::from_json_str(&doc.to_string()).expect("random network is valid");
    (net, demands)
}

pub fn slot(net: &Network, demands: &BTreeMap<String, f64>, r_watt: f64) -> SlotInput {
    SlotInput::new(net, 1, 300.0, demands, 0.0, r_watt, &BTreeMap::new()).expect("slot input")
}

pub fn active(net: &Network) -> ActiveGraph {
    default_active_graph(net)
}
