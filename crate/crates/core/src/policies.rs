//! Benchmark scheduling policies.

use crate::aoi::WncsState;
use crate::network::{link_code, Action, NetworkModel, TransmissionOutcome};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// A scheduler: maps the AoI state to a full action each slot.
pub trait Policy: Send {
    fn decide(&mut self, ws: &WncsState, slot: u64) -> Action;

    /// Acknowledged outcome of the action just taken.
    fn observe(&mut self, _outcome: &TransmissionOutcome) {}

    /// Called at the start of every episode.
    fn reset(&mut self) {}

    fn name(&self) -> String;
}

/// Every link code `+1, −1, +2, −2, …` for `n` plants.
pub fn all_links(n: usize) -> Vec<i32> {
    (1..=n as i32).flat_map(|i| [i, -i]).collect()
}

/// Schedules `min(M, 2N)` distinct links chosen uniformly at random on
/// randomly permuted frequencies.
pub struct RandomPolicy {
    n: usize,
    m: usize,
    rng: ChaCha8Rng,
}

pub fn random_policy(n: usize, m: usize, seed: u64) -> RandomPolicy {
    RandomPolicy {
        n,
        m,
        rng: ChaCha8Rng::seed_from_u64(seed),
    }
}

impl Policy for RandomPolicy {
    fn decide(&mut self, _ws: &WncsState, _slot: u64) -> Action {
        let mut links = all_links(self.n);
        links.shuffle(&mut self.rng);
        links.truncate(self.m);
        links.resize(self.m, 0);
        links.shuffle(&mut self.rng);
        Action::new(links)
    }

    fn name(&self) -> String {
        "random".into()
    }
}

/// Each frequency cycles through its own list of links, one per slot.
#[derive(Debug, Clone)]
pub struct RoundRobinPolicy {
    groups: Vec<Vec<i32>>,
    counter: usize,
}

/// `groups[m]` lists the links served by frequency `m`; an empty list idles
/// that frequency.
pub fn round_robin_policy(groups: Vec<Vec<i32>>) -> RoundRobinPolicy {
    let mut seen = std::collections::HashSet::new();
    for &l in groups.iter().flatten() {
        assert!(l != 0, "idle is not a link");
        assert!(seen.insert(l), "link {l} appears in two groups");
    }
    RoundRobinPolicy { groups, counter: 0 }
}

impl RoundRobinPolicy {
    pub fn groups(&self) -> &[Vec<i32>] {
        &self.groups
    }
}

impl Policy for RoundRobinPolicy {
    fn decide(&mut self, _ws: &WncsState, _slot: u64) -> Action {
        let k = self.counter;
        self.counter += 1;
        Action::new(
            self.groups
                .iter()
                .map(|g| if g.is_empty() { 0 } else { g[k % g.len()] })
                .collect(),
        )
    }

    fn reset(&mut self) {
        self.counter = 0;
    }

    fn name(&self) -> String {
        "roundrobin".into()
    }
}

/// Splits the `2N` links over `M` frequencies with group sizes differing by
/// at most one. Links inside a group are kept in canonical order. At most
/// `limit` groupings are returned.
pub fn balanced_groupings(n: usize, m: usize, limit: usize) -> Vec<Vec<Vec<i32>>> {
    let links = all_links(n);
    let total = links.len();
    let base = total / m;
    let extra = total % m;
    let mut out = Vec::new();
    let mut groups = vec![Vec::new(); m];
    fn rec(
        idx: usize,
        links: &[i32],
        groups: &mut Vec<Vec<i32>>,
        base: usize,
        extra: usize,
        out: &mut Vec<Vec<Vec<i32>>>,
        limit: usize,
    ) {
        if out.len() >= limit {
            return;
        }
        if idx == links.len() {
            let big = groups.iter().filter(|g| g.len() == base + 1).count();
            if big == extra && groups.iter().all(|g| g.len() >= base) {
                out.push(groups.clone());
            }
            return;
        }
        for f in 0..groups.len() {
            let big = groups.iter().filter(|g| g.len() == base + 1).count();
            let len = groups[f].len();
            if len > base || (len == base && big >= extra) {
                continue;
            }
            groups[f].push(links[idx]);
            rec(idx + 1, links, groups, base, extra, out, limit);
            groups[f].pop();
        }
    }
    rec(0, &links, &mut groups, base, extra, &mut out, limit);
    out
}

/// Schedules the `M` links with the largest AoI; each picks its best
/// remaining frequency in rank order.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    net: NetworkModel,
}

pub fn greedy_policy(net: &NetworkModel) -> GreedyPolicy {
    GreedyPolicy { net: net.clone() }
}

impl GreedyPolicy {
    /// Pure decision rule.
    pub fn action_for(&self, ws: &WncsState) -> Action {
        let n = self.net.n;
        let m = self.net.m;
        let mut ranked: Vec<(u32, i32)> = Vec::with_capacity(2 * n);
        for (i, s) in ws.per_plant.iter().enumerate() {
            let plant = i as i32 + 1;
            ranked.push((s.tau[0], plant));
            ranked.push((s.eta[0], -plant));
        }
        // Larger AoI first; ties by canonical link order (lower plant, uplink first).
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(link_code(a.1).cmp(&link_code(b.1))));
        let mut assignment = vec![0; m];
        let mut free = vec![true; m];
        for &(_, link) in ranked.iter().take(m) {
            let i = link.unsigned_abs() as usize - 1;
            let probs = if link > 0 { &self.net.xi_s } else { &self.net.xi_c };
            let mut best: Option<usize> = None;
            for f in 0..m {
                if free[f] && best.is_none_or(|b| probs[f][i] > probs[b][i]) {
                    best = Some(f);
                }
            }
            if let Some(f) = best {
                assignment[f] = link;
                free[f] = false;
            }
        }
        Action::new(assignment)
    }
}

impl Policy for GreedyPolicy {
    fn decide(&mut self, ws: &WncsState, _slot: u64) -> Action {
        self.action_for(ws)
    }

    fn name(&self) -> String {
        "greedy".into()
    }
}

/// Phase of one frequency's cycle in the persistent policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Uplink,
    Downlink,
    /// Idle slots left before the next plant's cycle.
    Wait(usize),
}

#[derive(Debug, Clone)]
struct Lane {
    plants: Vec<usize>,
    current: usize,
    phase: Phase,
}

/// Per frequency: uplink until success, downlink until success, idle for
/// `v−1` slots, then the next plant of that frequency.
#[derive(Debug, Clone)]
pub struct PersistentPolicy {
    m: usize,
    vs: Vec<usize>,
    lanes: BTreeMap<usize, Lane>,
}

/// `partition[i] = Some(f)` puts plant `i` (0-based) on frequency `f`.
/// Plants mapped to `None` are never scheduled.
pub fn persistent_policy(partition: &[Option<usize>], vs: &[usize], m: usize) -> PersistentPolicy {
    assert_eq!(partition.len(), vs.len(), "one entry per plant");
    let mut lanes: BTreeMap<usize, Lane> = BTreeMap::new();
    for (i, f) in partition.iter().enumerate() {
        if let Some(f) = *f {
            assert!(f < m, "frequency {f} out of range");
            lanes
                .entry(f)
                .or_insert_with(|| Lane {
                    plants: Vec::new(),
                    current: 0,
                    phase: Phase::Uplink,
                })
                .plants
                .push(i);
        }
    }
    PersistentPolicy {
        m,
        vs: vs.to_vec(),
        lanes,
    }
}

impl PersistentPolicy {
    /// Current phase and plant (0-based) of frequency `f`.
    pub fn phase(&self, f: usize) -> Option<(Phase, usize)> {
        self.lanes.get(&f).map(|l| (l.phase, l.plants[l.current]))
    }
}

impl Policy for PersistentPolicy {
    fn decide(&mut self, _ws: &WncsState, _slot: u64) -> Action {
        let mut a = vec![0; self.m];
        for (&f, lane) in &self.lanes {
            let plant = lane.plants[lane.current] as i32 + 1;
            a[f] = match lane.phase {
                Phase::Uplink => plant,
                Phase::Downlink => -plant,
                Phase::Wait(_) => 0,
            };
        }
        Action::new(a)
    }

    fn observe(&mut self, outcome: &TransmissionOutcome) {
        for lane in self.lanes.values_mut() {
            let i = lane.plants[lane.current];
            let next_plant = |lane: &mut Lane| {
                lane.current = (lane.current + 1) % lane.plants.len();
                lane.phase = Phase::Uplink;
            };
            match lane.phase {
                Phase::Uplink if outcome.beta[i] => lane.phase = Phase::Downlink,
                Phase::Downlink if outcome.gamma[i] => {
                    let wait = self.vs[i].saturating_sub(1);
                    if wait == 0 {
                        next_plant(lane);
                    } else {
                        lane.phase = Phase::Wait(wait);
                    }
                }
                Phase::Wait(r) => {
                    if r <= 1 {
                        next_plant(lane);
                    } else {
                        lane.phase = Phase::Wait(r - 1);
                    }
                }
                _ => {}
            }
        }
    }

    fn reset(&mut self) {
        for lane in self.lanes.values_mut() {
            lane.current = 0;
            lane.phase = Phase::Uplink;
        }
    }

    fn name(&self) -> String {
        "persistent".into()
    }
}

/// Boxed policy built from a plain function of the state.
pub struct FnPolicy<F: FnMut(&WncsState) -> Action + Send> {
    f: F,
    label: String,
}

impl<F: FnMut(&WncsState) -> Action + Send> FnPolicy<F> {
    pub fn new(label: &str, f: F) -> Self {
        FnPolicy {
            f,
            label: label.to_string(),
        }
    }
}

impl<F: FnMut(&WncsState) -> Action + Send> Policy for FnPolicy<F> {
    fn decide(&mut self, ws: &WncsState, _slot: u64) -> Action {
        (self.f)(ws)
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_grouping_count() {
        // 6!/(2!·2!·2!) labeled splits of six links into three pairs.
        assert_eq!(balanced_groupings(3, 3, usize::MAX).len(), 90);
        assert_eq!(balanced_groupings(1, 1, usize::MAX), vec![vec![vec![1, -1]]]);
    }

    #[test]
    fn round_robin_two_cycle() {
        let mut p = round_robin_policy(vec![vec![1, -1]]);
        let ws = WncsState::initial(&[2]);
        let seq: Vec<i32> = (0..4).map(|k| p.decide(&ws, k).assignment[0]).collect();
        assert_eq!(seq, vec![1, -1, 1, -1]);
    }
}
