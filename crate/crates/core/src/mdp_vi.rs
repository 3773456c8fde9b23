//! Truncated scheduling MDP and discounted dynamic programming.
//!
//! States are AoI registers clamped to `{1..L}`. In reduced mode each plant
//! also carries its link mode. A state is stored as a mixed-radix index:
//! plants in order, and within a plant the digits
//! `τ⁰..τᵛ, η⁰..ηᵛ` (value − 1, radix `L`) followed, in reduced mode, by the
//! mode digit (0 = uplink, radix 2). The first digit is the most significant.

use crate::aoi::{aoi_advance, mode_advance, truncate, AoIState, LinkMode, WncsState};
use crate::network::{
    enumerate_full_actions, enumerate_reduced_actions, resolve_reduced, Action, NetworkError,
};
use crate::policies::Policy;
use crate::simulator::WncsSystem;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("{0} states exceed the limit of {1}")]
    CapacityExceeded(u128, u128),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("table file: {0}")]
    Table(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const MAX_STATES: u128 = 1_000_000;

/// Which action space the MDP uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    Full,
    Reduced,
}

impl std::str::FromStr for ActionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(ActionMode::Full),
            "reduced" => Ok(ActionMode::Reduced),
            other => Err(format!("unknown action mode `{other}`")),
        }
    }
}

impl std::fmt::Display for ActionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ActionMode::Full => "full",
            ActionMode::Reduced => "reduced",
        })
    }
}

/// Mixed-radix codec for truncated states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateCodec {
    pub l: u32,
    pub vs: Vec<usize>,
    pub mode: ActionMode,
}

impl StateCodec {
    pub fn count(&self) -> u128 {
        let per_mode: u128 = if self.mode == ActionMode::Reduced { 2 } else { 1 };
        self.vs.iter().fold(1u128, |acc, &v| {
            acc.saturating_mul((self.l as u128).saturating_pow(2 * v as u32 + 2))
                .saturating_mul(per_mode)
        })
    }

    /// Index of a state; entries are clamped to `L` first.
    pub fn encode(&self, ws: &WncsState) -> usize {
        let l = self.l as usize;
        let mut idx = 0usize;
        for s in &ws.per_plant {
            for &x in s.tau.iter().chain(&s.eta) {
                idx = idx * l + (x.min(self.l).max(1) as usize - 1);
            }
            if self.mode == ActionMode::Reduced {
                idx = idx * 2 + usize::from(s.mode == LinkMode::Downlink);
            }
        }
        idx
    }

    pub fn decode(&self, mut idx: usize) -> WncsState {
        let l = self.l as usize;
        let mut plants = Vec::with_capacity(self.vs.len());
        for &v in self.vs.iter().rev() {
            let mode = if self.mode == ActionMode::Reduced {
                let d = idx % 2;
                idx /= 2;
                if d == 1 {
                    LinkMode::Downlink
                } else {
                    LinkMode::Uplink
                }
            } else {
                LinkMode::Uplink
            };
            let mut digits = vec![0u32; 2 * v + 2];
            for d in digits.iter_mut().rev() {
                *d = (idx % l) as u32 + 1;
                idx /= l;
            }
            let eta = digits.split_off(v + 1);
            plants.push(AoIState::new(digits, eta, mode));
        }
        plants.reverse();
        WncsState { per_plant: plants }
    }
}

/// Explicit truncated MDP.
#[derive(Debug, Clone)]
pub struct TruncatedMdp {
    pub codec: StateCodec,
    /// Full actions; in reduced mode these are the reduced actions with
    /// entries read as plant numbers, resolved per state.
    pub actions: Vec<Action>,
    /// Row `s * |A| + a`: sparse successor distribution.
    pub transitions: Vec<Vec<(u32, f64)>>,
    pub costs: Vec<f64>,
    pub theta: f64,
}

impl TruncatedMdp {
    pub fn n_states(&self) -> usize {
        self.costs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn row(&self, s: usize, a: usize) -> &[(u32, f64)] {
        &self.transitions[s * self.actions.len() + a]
    }

    /// Full action taken in state `s` for action index `a`.
    pub fn resolved_action(&self, s: usize, a: usize) -> Action {
        match self.codec.mode {
            ActionMode::Full => self.actions[a].clone(),
            ActionMode::Reduced => {
                let ws = self.codec.decode(s);
                resolve_reduced(&as_reduced(&self.actions[a]), &ws.modes())
            }
        }
    }

    /// Index of an action in this MDP's list.
    pub fn action_index(&self, a: &Action) -> Option<usize> {
        self.actions.iter().position(|x| x == a)
    }
}

fn as_reduced(a: &Action) -> crate::network::ReducedAction {
    crate::network::ReducedAction::new(a.assignment.iter().map(|&x| x as u32).collect())
}

/// Builds the MDP with saturating truncation at `l`.
pub fn build_truncated_mdp(system: &WncsSystem, l: u32, mode: ActionMode) -> Result<TruncatedMdp, MdpError> {
    assert!(l >= 1, "truncation level must be positive");
    let codec = StateCodec {
        l,
        vs: system.vs(),
        mode,
    };
    let count = codec.count();
    if count > MAX_STATES {
        return Err(MdpError::CapacityExceeded(count, MAX_STATES));
    }
    let n_states = count as usize;
    let (n, m) = (system.n(), system.m());
    let actions: Vec<Action> = match mode {
        ActionMode::Full => enumerate_full_actions(n, m)?,
        ActionMode::Reduced => enumerate_reduced_actions(n, m)?
            .into_iter()
            .map(|r| Action::new(r.assignment.iter().map(|&x| x as i32).collect()))
            .collect(),
    };
    let net = &system.net;
    let mut transitions = Vec::with_capacity(n_states * actions.len());
    let mut costs = Vec::with_capacity(n_states);
    for s in 0..n_states {
        let ws = codec.decode(s);
        costs.push(system.cost(&ws));
        for a in &actions {
            let full = match mode {
                ActionMode::Full => a.clone(),
                ActionMode::Reduced => resolve_reduced(&as_reduced(a), &ws.modes()),
            };
            // (plant, is_uplink, success probability) per scheduled link.
            let links: Vec<(usize, bool, f64)> = full
                .assignment
                .iter()
                .enumerate()
                .filter(|(_, &x)| x != 0)
                .map(|(f, &x)| {
                    let i = x.unsigned_abs() as usize - 1;
                    if x > 0 {
                        (i, true, net.xi_s[f][i])
                    } else {
                        (i, false, net.xi_c[f][i])
                    }
                })
                .collect();
            let mut row: Vec<(u32, f64)> = Vec::with_capacity(1 << links.len());
            for mask in 0..(1usize << links.len()) {
                let mut beta = vec![false; n];
                let mut gamma = vec![false; n];
                let mut prob = 1.0;
                for (k, &(i, up, p)) in links.iter().enumerate() {
                    let ok = mask >> k & 1 == 1;
                    prob *= if ok { p } else { 1.0 - p };
                    if up {
                        beta[i] = ok;
                    } else {
                        gamma[i] = ok;
                    }
                }
                if prob == 0.0 {
                    continue;
                }
                let next = WncsState {
                    per_plant: ws
                        .per_plant
                        .iter()
                        .enumerate()
                        .map(|(i, st)| {
                            let mut nx = truncate(&aoi_advance(st, beta[i], gamma[i]), l);
                            if mode == ActionMode::Reduced {
                                nx.mode = mode_advance(st.mode, beta[i], gamma[i]);
                            }
                            nx
                        })
                        .collect(),
                };
                row.push((codec.encode(&next) as u32, prob));
            }
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(u32, f64)> = Vec::with_capacity(row.len());
            for (j, p) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += p,
                    _ => merged.push((j, p)),
                }
            }
            transitions.push(merged);
        }
    }
    Ok(TruncatedMdp {
        codec,
        actions,
        transitions,
        costs,
        theta: system.theta,
    })
}

/// Optimal values and a greedy policy.
#[derive(Debug, Clone)]
pub struct ViSolution {
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    pub iterations: usize,
}

fn expected(mdp: &TruncatedMdp, s: usize, a: usize, values: &[f64]) -> f64 {
    mdp.row(s, a).iter().map(|&(j, p)| p * values[j as usize]).sum()
}

/// `c(s) + θ Σ P(s'|s,a) V(s')` for every action.
pub fn q_values(mdp: &TruncatedMdp, values: &[f64], s: usize) -> Vec<f64> {
    (0..mdp.n_actions())
        .map(|a| mdp.costs[s] + mdp.theta * expected(mdp, s, a, values))
        .collect()
}

fn argmin(q: &[f64]) -> (usize, f64) {
    let mut best = (0, q[0]);
    for (a, &x) in q.iter().enumerate().skip(1) {
        if x < best.1 {
            best = (a, x);
        }
    }
    best
}

/// `sup_s |min_a Q(s,a) − V(s)|`.
pub fn bellman_residual(mdp: &TruncatedMdp, values: &[f64]) -> f64 {
    (0..mdp.n_states())
        .map(|s| (argmin(&q_values(mdp, values, s)).1 - values[s]).abs())
        .fold(0.0, f64::max)
}

/// Jacobi value iteration, stopped when the sup-norm change drops below
/// `tol·(1−θ)/(2θ)`. Ties go to the lowest action index.
pub fn value_iteration(mdp: &TruncatedMdp, tol: f64) -> ViSolution {
    let theta = mdp.theta;
    let threshold = tol * (1.0 - theta) / (2.0 * theta);
    let ns = mdp.n_states();
    let mut values = vec![0.0; ns];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let next: Vec<f64> = (0..ns).map(|s| argmin(&q_values(mdp, &values, s)).1).collect();
        let change = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        if change <= threshold {
            break;
        }
    }
    let policy = (0..ns).map(|s| argmin(&q_values(mdp, &values, s)).0).collect();
    ViSolution {
        values,
        policy,
        iterations,
    }
}

/// Values of a stochastic stationary policy: `policy[s]` lists
/// `(action, probability)` pairs.
pub fn policy_evaluation_stochastic(mdp: &TruncatedMdp, policy: &[Vec<(usize, f64)>], tol: f64) -> Vec<f64> {
    let theta = mdp.theta;
    let threshold = tol * (1.0 - theta) / (2.0 * theta);
    let ns = mdp.n_states();
    let mut values = vec![0.0; ns];
    loop {
        let next: Vec<f64> = (0..ns)
            .map(|s| {
                mdp.costs[s]
                    + theta
                        * policy[s]
                            .iter()
                            .map(|&(a, p)| p * expected(mdp, s, a, &values))
                            .sum::<f64>()
            })
            .collect();
        let change = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        if change <= threshold {
            return values;
        }
    }
}

/// Values of a deterministic stationary policy.
pub fn policy_evaluation(mdp: &TruncatedMdp, policy: &[usize], tol: f64) -> Vec<f64> {
    let dist: Vec<Vec<(usize, f64)>> = policy.iter().map(|&a| vec![(a, 1.0)]).collect();
    policy_evaluation_stochastic(mdp, &dist, tol)
}

/// States reachable from `start` under any action sequence.
pub fn reachable_states(mdp: &TruncatedMdp, start: usize) -> Vec<usize> {
    let mut seen = vec![false; mdp.n_states()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(s) = stack.pop() {
        for a in 0..mdp.n_actions() {
            for &(j, _) in mdp.row(s, a) {
                if !seen[j as usize] {
                    seen[j as usize] = true;
                    stack.push(j as usize);
                }
            }
        }
    }
    (0..mdp.n_states()).filter(|&s| seen[s]).collect()
}

/// Value/policy table with enough metadata to rebuild the state codec.
#[derive(Debug, Clone, PartialEq)]
pub struct ViTable {
    pub l: u32,
    pub mode: ActionMode,
    pub vs: Vec<usize>,
    pub actions: Vec<Action>,
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    pub config_hash: String,
}

impl ViTable {
    pub fn from_solution(mdp: &TruncatedMdp, sol: &ViSolution, config_hash: &str) -> Self {
        ViTable {
            l: mdp.codec.l,
            mode: mdp.codec.mode,
            vs: mdp.codec.vs.clone(),
            actions: mdp.actions.clone(),
            values: sol.values.clone(),
            policy: sol.policy.clone(),
            config_hash: config_hash.to_string(),
        }
    }

    /// CSV body `state,value,action` preceded by `#`-prefixed metadata.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let vs: Vec<String> = self.vs.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "# wncs-vi-table 1");
        let _ = writeln!(out, "# L={}", self.l);
        let _ = writeln!(out, "# mode={}", self.mode);
        let _ = writeln!(out, "# v={}", vs.join(";"));
        let _ = writeln!(out, "# m={}", self.actions.first().map_or(0, |a| a.assignment.len()));
        let _ = writeln!(out, "# config={}", self.config_hash);
        out.push_str("state,value,action\n");
        for (s, (v, a)) in self.values.iter().zip(&self.policy).enumerate() {
            let _ = writeln!(out, "{s},{v:e},{a}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), MdpError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, MdpError> {
        let bad = |msg: &str| MdpError::Table(msg.to_string());
        let mut meta = std::collections::HashMap::new();
        let mut lines = text.lines();
        let first = lines.next().ok_or_else(|| bad("empty file"))?;
        if first.trim() != "# wncs-vi-table 1" {
            return Err(bad("unrecognized header"));
        }
        let mut values = Vec::new();
        let mut policy = Vec::new();
        for line in lines {
            if let Some(kv) = line.strip_prefix("# ") {
                if let Some((k, v)) = kv.split_once('=') {
                    meta.insert(k.to_string(), v.to_string());
                }
                continue;
            }
            if line.starts_with("state") || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad("row must have three fields"));
            }
            let s: usize = f[0].parse().map_err(|_| bad("bad state index"))?;
            if s != values.len() {
                return Err(bad("rows out of order"));
            }
            values.push(f[1].parse().map_err(|_| bad("bad value"))?);
            policy.push(f[2].parse().map_err(|_| bad("bad action index"))?);
        }
        let get = |k: &str| meta.get(k).ok_or_else(|| bad(&format!("missing `{k}`")));
        let l: u32 = get("L")?.parse().map_err(|_| bad("bad L"))?;
        let mode: ActionMode = get("mode")?.parse().map_err(|e: String| bad(&e))?;
        let vs: Vec<usize> = get("v")?
            .split(';')
            .map(|x| x.parse().map_err(|_| bad("bad v")))
            .collect::<Result<_, _>>()?;
        let m: usize = get("m")?.parse().map_err(|_| bad("bad m"))?;
        let n = vs.len();
        let actions = match mode {
            ActionMode::Full => enumerate_full_actions(n, m)?,
            ActionMode::Reduced => enumerate_reduced_actions(n, m)?
                .into_iter()
                .map(|r| Action::new(r.assignment.iter().map(|&x| x as i32).collect()))
                .collect(),
        };
        let codec = StateCodec { l, vs: vs.clone(), mode };
        if values.len() as u128 != codec.count() {
            return Err(bad("row count does not match the state space"));
        }
        if policy.iter().any(|&a| a >= actions.len()) {
            return Err(bad("action index out of range"));
        }
        Ok(ViTable {
            l,
            mode,
            vs,
            actions,
            values,
            policy,
            config_hash: get("config")?.clone(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, MdpError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Looks up the tabulated action for the truncated state.
#[derive(Debug, Clone)]
pub struct ViPolicy {
    table: ViTable,
    codec: StateCodec,
}

impl ViPolicy {
    pub fn new(table: ViTable) -> Self {
        let codec = StateCodec {
            l: table.l,
            vs: table.vs.clone(),
            mode: table.mode,
        };
        ViPolicy { table, codec }
    }

    pub fn table(&self) -> &ViTable {
        &self.table
    }
}

impl Policy for ViPolicy {
    fn decide(&mut self, ws: &WncsState, _slot: u64) -> Action {
        let s = self.codec.encode(ws);
        let a = &self.table.actions[self.table.policy[s]];
        match self.table.mode {
            ActionMode::Full => a.clone(),
            ActionMode::Reduced => resolve_reduced(&as_reduced(a), &ws.modes()),
        }
    }

    fn name(&self) -> String {
        "vi".into()
    }
}
