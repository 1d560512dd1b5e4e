//! From relaxed solutions to physically exact schedules.
//!
//! A pipe whose flow square sits strictly above `Q²` reports more loss than
//! friction explains. Every node downstream of such pipes, up to the next tank
//! or merge node, has its head raised by the sum of those excess losses; the
//! valves entering merge nodes absorb the difference. Flows, volumes, pump
//! gains and bins stay as they are, so the objective is unchanged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydraulics::TOL_FEAS;
use crate::network::{check_theorem1, ActiveGraph, Network, PumpParams};
use crate::relax::RelaxedSolution;

/// Largest excess loss accepted as exact, in metres.
pub const TOL_EXACT: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactnessReport {
    /// Excess loss `f (W − Q²)` per active pipe.
    pub excess: BTreeMap<String, f64>,
    pub max_excess: f64,
    pub is_exact: bool,
    pub offending: Vec<String>,
}

fn excess_losses(net: &Network, g: &ActiveGraph, sol: &RelaxedSolution) -> Result<Vec<f64>> {
    let s = &sol.schedule;
    let mut eps = vec![0.0; net.edges.len()];
    for e in g.edges() {
        let Some(f) = net.edges[e].friction() else { continue };
        let q = s.flow[e];
        let x = match sol.flow_sq[e] {
            Some(w) => f * (w - q * q),
            None => s.gain[e] - f * q * q,
        };
        if x < -TOL_FEAS * (f * q * q).max(1.0) {
            return Err(Error::ConeViolated { pipe: net.edges[e].id.clone(), excess: x });
        }
        eps[e] = x.max(0.0);
    }
    Ok(eps)
}

pub fn exactness_report(net: &Network, g: &ActiveGraph, sol: &RelaxedSolution) -> Result<ExactnessReport> {
    let eps = excess_losses(net, g, sol)?;
    let excess: BTreeMap<String, f64> =
        g.edges().filter(|&e| net.edges[e].is_pipe()).map(|e| (net.edges[e].id.clone(), eps[e])).collect();
    let max_excess = excess.values().fold(0.0f64, |m, &v| m.max(v));
    let offending = excess.iter().filter(|(_, &v)| v > TOL_EXACT).map(|(k, _)| k.clone()).collect();
    Ok(ExactnessReport { excess, max_excess, is_exact: max_excess <= TOL_EXACT, offending })
}

/// Head shift of each node: the summed excess loss of its correction edges.
pub fn head_shifts(net: &Network, g: &ActiveGraph, sol: &RelaxedSolution) -> Result<Vec<f64>> {
    let eps = excess_losses(net, g, sol)?;
    Ok((0..net.nodes.len())
        .map(|i| if g.node_on[i] { g.correction_edges(i).iter().map(|&e| eps[e]).sum() } else { 0.0 })
        .collect())
}

/// Exact schedule with the same flows, volumes, pump gains, bins and
/// objective as `sol`.
///
/// Refuses graphs that fail the topology conditions, since the head shifts
/// would then break a coupling somewhere.
pub fn reconstruct(net: &Network, g: &ActiveGraph, sol: &RelaxedSolution) -> Result<RelaxedSolution> {
    let topo = check_theorem1(net, g);
    if !topo.holds {
        let detail = serde_json::to_string(&topo.violations).unwrap_or_default();
        return Err(Error::Refused(format!("topology conditions fail: {detail}")));
    }
    let psi = head_shifts(net, g, sol)?;
    let mut out = sol.clone();
    let s = &mut out.schedule;
    for i in g.nodes() {
        s.head[i] += psi[i];
        // Shifts only raise heads, so minimum heads keep holding.
        debug_assert!(psi[i] >= 0.0);
    }
    for e in g.edges() {
        let edge = &net.edges[e];
        if let Some(f) = edge.friction() {
            let q = s.flow[e];
            s.gain[e] = f * q * q;
            out.flow_sq[e] = out.flow_sq[e].map(|_| q * q);
        } else if edge.is_valve() && g.is_merge(edge.head) {
            s.gain[e] += psi[edge.tail];
        }
    }
    Ok(out)
}

/// Normalized speed that produces gain `h` at flow `q`: the nonnegative root
/// of `c ω² + b q ω + a q² − h = 0`.
pub fn recover_speed(q: f64, h: f64, p: &PumpParams) -> std::result::Result<f64, f64> {
    let disc = p.b * p.b * q * q - 4.0 * p.c * (p.a * q * q - h);
    if disc < 0.0 {
        return Err(disc);
    }
    // (−bq + √Δ)/(2c) loses digits when bq dominates; the product of the
    // roots, (a q² − h)/c, gives the same root stably.
    let sq = disc.sqrt();
    let bq = p.b * q;
    Ok(if bq > 0.0 { 2.0 * (h - p.a * q * q) / (bq + sq) } else { (-bq + sq) / (2.0 * p.c) })
}

/// Speeds of all active pumps, indexed by edge. Roots outside the speed range
/// are returned as computed and logged; the schedule checker reports them.
pub fn recover_pump_speeds(net: &Network, g: &ActiveGraph, s: &crate::hydraulics::Schedule) -> Result<Vec<Option<f64>>> {
    let mut out = vec![None; net.edges.len()];
    for e in net.pumps().filter(|&e| g.edge_on[e]) {
        let p = net.edges[e].pump().expect("pump");
        let w = recover_speed(s.flow[e], s.gain[e], p)
            .map_err(|discriminant| Error::NoRealSpeed { pump: net.edges[e].id.clone(), discriminant })?;
        if w < p.w_min - 1e-9 || w > p.w_max + 1e-9 {
            log::warn!("pump `{}`: recovered speed {w:.9} outside [{}, {}]", net.edges[e].id, p.w_min, p.w_max);
        }
        out[e] = Some(w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydraulics::{pump_head_gain, Schedule};
    use proptest::prelude::*;

    fn sv() -> PumpParams {
        PumpParams { a: -1.0941e-4, b: 5.1516e-2, c: 223.32, w_min: 0.2, w_max: 1.0, q_min: 0.0, q_max: 20.0, eta: 0.85, d: None, e: None }
    }

    #[test]
    fn speed_examples() {
        let p = sv();
        assert!((recover_speed(0.0, p.c, &p).unwrap() - 1.0).abs() < 1e-12);
        assert!((recover_speed(0.0, p.c * 0.16, &p).unwrap() - 0.4).abs() < 1e-12);
        let h = pump_head_gain(10.0, 1.0, &p);
        assert!((recover_speed(10.0, h, &p).unwrap() - 1.0).abs() < 1e-12);
        assert!(recover_speed(0.0, -1.0, &p).is_err());
    }

    fn solution(net: &Network) -> RelaxedSolution {
        let m = net.edges.len();
        RelaxedSolution {
            schedule: Schedule::zeros(net),
            flow_sq: vec![None; m],
            pump_bins: vec![Vec::new(); m],
            bin_flow: vec![Vec::new(); m],
            tank_bins: vec![Vec::new(); net.nodes.len()],
            objective: 0.0,
            gap: None,
        }
    }

    #[test]
    fn excess_loss_example() {
        let net = crate::network::tests::tiny(&[("r", "r"), ("j", "j")], &[("l", "r", "j", "pipe")]);
        let g = crate::network::default_active_graph(&net);
        let mut sol = solution(&net);
        let l = net.edge("l").unwrap();
        sol.schedule.flow[l] = 1.0;
        sol.flow_sq[l] = Some(1.5);
        let rep = exactness_report(&net, &g, &sol).unwrap();
        assert!((rep.excess["l"] - 5e-4).abs() < 1e-15);
        assert!(!rep.is_exact);
        sol.flow_sq[l] = Some(0.5);
        assert!(matches!(exactness_report(&net, &g, &sol), Err(Error::ConeViolated { .. })));
        sol.flow_sq[l] = Some(1.0);
        assert!(exactness_report(&net, &g, &sol).unwrap().is_exact);
    }

    proptest! {
        #[test]
        fn speed_round_trip(q in 0.0f64..20.0, w in 0.2f64..1.0) {
            let p = sv();
            let h = pump_head_gain(q, w, &p);
            let back = recover_speed(q, h, &p).unwrap();
            prop_assert!((back - w).abs() <= 1e-8);
            prop_assert!((pump_head_gain(q, back, &p) - h).abs() <= 1e-8);
        }
    }
}
