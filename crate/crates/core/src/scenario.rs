//! Contract scenarios: per-slot demands, prices and signals.
//!
//! A scenario file either lists its slots or describes how to draw them. Drawn
//! scenarios use a ChaCha generator seeded from the file or the command line,
//! so a run can be replayed from its seed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};
use crate::hydraulics::SlotInput;
use crate::network::Network;

pub const JOULES_PER_KWH: f64 = 3.6e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSlot {
    pub k: usize,
    #[serde(default)]
    pub demands_m3_per_h: BTreeMap<String, f64>,
    pub price_per_kwh: f64,
    pub r_watt: f64,
}

/// Recipe for drawing slots: uniform demands per junction, uniform prices and
/// uniform signals on `[0, r̄]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSlots {
    pub slots: usize,
    pub demand_ranges_m3_per_h: BTreeMap<String, [f64; 2]>,
    pub price_per_kwh: [f64; 2],
    #[serde(default)]
    pub seed: u64,
    /// Multiplies every drawn demand.
    #[serde(default = "one")]
    pub demand_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub delta_s: f64,
    pub r_bar_watt: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slots: Vec<ScenarioSlot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomSlots>,
    /// Seed the slots were drawn with, when they were drawn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&read_file(path)?)
    }

    /// Concrete scenario: drawn slots replace the recipe. `seed` overrides the
    /// recipe's seed.
    pub fn resolve(&self, seed: Option<u64>) -> Result<Scenario> {
        let mut out = self.clone();
        match (&self.random, self.slots.is_empty()) {
            (Some(_), false) => return Err(Error::Scenario("give either `slots` or `random`, not both".into())),
            (None, true) => return Err(Error::Scenario("scenario has no slots".into())),
            (None, false) => {}
            (Some(r), true) => {
                let seed = seed.unwrap_or(r.seed);
                out.slots = draw_slots(r, self.r_bar_watt, seed)?;
                out.random = None;
                out.seed = Some(seed);
            }
        }
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_s > 0.0) || !(self.r_bar_watt > 0.0) {
            return Err(Error::Scenario("delta_s and r_bar_watt must be positive".into()));
        }
        for (n, s) in self.slots.iter().enumerate() {
            if s.k != n + 1 {
                return Err(Error::Scenario(format!("slot {} is listed as k = {}", n + 1, s.k)));
            }
            if !(0.0..=self.r_bar_watt).contains(&s.r_watt) {
                return Err(Error::Scenario(format!("slot {}: signal {} outside [0, r_bar]", s.k, s.r_watt)));
            }
            if !(s.price_per_kwh >= 0.0) {
                return Err(Error::Scenario(format!("slot {}: negative price", s.k)));
            }
        }
        Ok(())
    }

    /// Slot input for slot `k` (1-based) starting from the given tank volumes.
    pub fn slot_input(&self, net: &Network, k: usize, prev_volume: &BTreeMap<String, f64>) -> Result<SlotInput> {
        let s = self.slots.get(k.wrapping_sub(1)).ok_or_else(|| Error::Scenario(format!("no slot {k}")))?;
        let demands: BTreeMap<String, f64> = s.demands_m3_per_h.iter().map(|(id, d)| (id.clone(), d / 3600.0)).collect();
        SlotInput::new(net, k, self.delta_s, &demands, s.price_per_kwh / JOULES_PER_KWH, s.r_watt, prev_volume)
    }

    /// Same scenario with every signal set to zero.
    pub fn without_signal(&self) -> Scenario {
        let mut out = self.clone();
        for s in &mut out.slots {
            s.r_watt = 0.0;
        }
        out
    }
}

pub fn draw_slots(r: &RandomSlots, r_bar: f64, seed: u64) -> Result<Vec<ScenarioSlot>> {
    let bad = |what: &str| Error::Scenario(format!("random slots: {what}"));
    if r.slots == 0 {
        return Err(bad("need at least one slot"));
    }
    let ok_range = |[lo, hi]: [f64; 2]| lo >= 0.0 && lo <= hi;
    if !ok_range(r.price_per_kwh) || !r.demand_ranges_m3_per_h.values().all(|&x| ok_range(x)) || !(r.demand_scale >= 0.0) {
        return Err(bad("ranges must satisfy 0 <= lo <= hi"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |[lo, hi]: [f64; 2]| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let mut out = Vec::with_capacity(r.slots);
    for k in 1..=r.slots {
        // Draw order is fixed (demands by node id, then price, then signal) so
        // a seed pins the whole scenario.
        let demands = r.demand_ranges_m3_per_h.iter().map(|(id, &range)| (id.clone(), r.demand_scale * uniform(range))).collect();
        let price = uniform(r.price_per_kwh);
        let signal = uniform([0.0, r_bar]);
        out.push(ScenarioSlot { k, demands_m3_per_h: demands, price_per_kwh: price, r_watt: signal });
    }
    Ok(out)
}
