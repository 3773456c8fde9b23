//! Channel model and scheduling actions.
//!
//! Plants are numbered `1..=N` inside actions. A full action entry `a_m` is
//! `0` (frequency idle), `+i` (uplink of plant `i`) or `−i` (downlink of plant
//! `i`). A reduced action entry is `0` or `i`; the direction comes from the
//! plant's link mode.
//!
//! Enumeration order is lexicographic over frequencies, with entries ranked
//! `0 < +1 < −1 < +2 < −2 < …` (reduced: `0 < 1 < 2 < …`). The first action is
//! therefore always the all-idle one. This order fixes the output layout of
//! Q-networks and the action indices of value tables.

use crate::aoi::LinkMode;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid action {action:?}: {reason}")]
    InvalidAction { action: Vec<i32>, reason: String },
    #[error("action space has {0} elements, above the limit of {1}")]
    CapacityExceeded(u128, u128),
    #[error("invalid network model: {0}")]
    InvalidModel(String),
}

/// Upper bound on the size of an enumerated action list.
pub const MAX_ACTIONS: u128 = 1_000_000;

/// Per-frequency, per-plant delivery probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub n: usize,
    pub m: usize,
    /// `xi_s[m][i]`: uplink success probability of plant `i` on frequency `m`.
    pub xi_s: Vec<Vec<f64>>,
    /// `xi_c[m][i]`: downlink success probability.
    pub xi_c: Vec<Vec<f64>>,
}

impl NetworkModel {
    pub fn new(xi_s: Vec<Vec<f64>>, xi_c: Vec<Vec<f64>>) -> Result<Self, NetworkError> {
        let m = xi_s.len();
        let n = xi_s.first().map_or(0, |r| r.len());
        if m == 0 || n == 0 {
            return Err(NetworkError::InvalidModel("empty probability matrix".into()));
        }
        for (name, mat) in [("xi_s", &xi_s), ("xi_c", &xi_c)] {
            if mat.len() != m || mat.iter().any(|r| r.len() != n) {
                return Err(NetworkError::InvalidModel(format!("{name} must be {m}x{n}")));
            }
            for (fm, row) in mat.iter().enumerate() {
                for (i, &p) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(NetworkError::InvalidModel(format!(
                            "{name}[{fm}][{i}] = {p} is outside [0, 1]"
                        )));
                    }
                }
            }
        }
        Ok(NetworkModel { n, m, xi_s, xi_c })
    }

    /// Same probabilities on every frequency.
    pub fn uniform(m: usize, xi_s: &[f64], xi_c: &[f64]) -> Result<Self, NetworkError> {
        Self::new(vec![xi_s.to_vec(); m], vec![xi_c.to_vec(); m])
    }
}

/// Frequency-to-link assignment for one slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub assignment: Vec<i32>,
}

/// Frequency-to-plant assignment; direction is resolved by link modes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReducedAction {
    pub assignment: Vec<u32>,
}

/// Delivery outcome of one slot. Index `i` is plant `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransmissionOutcome {
    pub beta: Vec<bool>,
    pub gamma: Vec<bool>,
}

impl TransmissionOutcome {
    pub fn none(n: usize) -> Self {
        TransmissionOutcome {
            beta: vec![false; n],
            gamma: vec![false; n],
        }
    }
}

impl Action {
    pub fn new(assignment: Vec<i32>) -> Self {
        Action { assignment }
    }

    pub fn idle(m: usize) -> Self {
        Action {
            assignment: vec![0; m],
        }
    }

    /// Checks length, range and that no link is used twice.
    pub fn validate(&self, n: usize, m: usize) -> Result<(), NetworkError> {
        let fail = |reason: String| {
            Err(NetworkError::InvalidAction {
                action: self.assignment.clone(),
                reason,
            })
        };
        if self.assignment.len() != m {
            return fail(format!("expected {m} entries"));
        }
        let mut seen = vec![false; 2 * n + 1];
        for &a in &self.assignment {
            if a.unsigned_abs() as usize > n {
                return fail(format!("entry {a} outside -{n}..={n}"));
            }
            if a != 0 {
                let slot = link_code(a) as usize;
                if seen[slot] {
                    return fail(format!("link {a} scheduled twice"));
                }
                seen[slot] = true;
            }
        }
        Ok(())
    }
}

impl ReducedAction {
    pub fn new(assignment: Vec<u32>) -> Self {
        ReducedAction { assignment }
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<(), NetworkError> {
        let as_full = Action::new(self.assignment.iter().map(|&a| a as i32).collect());
        as_full.validate(n, m)
    }
}

/// Rank of a link in the canonical ordering: `0 → 0`, `+i → 2i−1`, `−i → 2i`.
pub fn link_code(a: i32) -> u32 {
    match a {
        0 => 0,
        a if a > 0 => 2 * a as u32 - 1,
        a => 2 * a.unsigned_abs(),
    }
}

fn code_to_link(code: u32) -> i32 {
    match code {
        0 => 0,
        c if c % 2 == 1 => c.div_ceil(2) as i32,
        c => -((c / 2) as i32),
    }
}

/// Draws one Bernoulli outcome per scheduled link, in frequency order.
pub fn sample_transmissions<R: Rng + ?Sized>(
    action: &Action,
    net: &NetworkModel,
    rng: &mut R,
) -> Result<TransmissionOutcome, NetworkError> {
    action.validate(net.n, net.m)?;
    let mut out = TransmissionOutcome::none(net.n);
    for (fm, &a) in action.assignment.iter().enumerate() {
        if a > 0 {
            let i = a as usize - 1;
            out.beta[i] = rng.random::<f64>() < net.xi_s[fm][i];
        } else if a < 0 {
            let i = a.unsigned_abs() as usize - 1;
            out.gamma[i] = rng.random::<f64>() < net.xi_c[fm][i];
        }
    }
    Ok(out)
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc.saturating_mul(n - j) / (j + 1);
    }
    acc
}

fn permutations(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, j| acc.saturating_mul(n - j))
}

/// `Σ_{k=0}^{M} C(M,k) · P(links,k)`.
pub fn action_count(links: usize, m: usize) -> u128 {
    (0..=m as u128).fold(0u128, |acc, k| {
        acc.saturating_add(binomial(m as u128, k).saturating_mul(permutations(links as u128, k)))
    })
}

/// Size of the full action space.
pub fn full_action_count(n: usize, m: usize) -> u128 {
    action_count(2 * n, m)
}

/// Size of the reduced action space.
pub fn reduced_action_count(n: usize, m: usize) -> u128 {
    action_count(n, m)
}

fn enumerate_codes(links: u32, m: usize) -> Vec<Vec<u32>> {
    fn rec(links: u32, m: usize, used: &mut Vec<bool>, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for code in 0..=links {
            if code != 0 && used[code as usize] {
                continue;
            }
            if code != 0 {
                used[code as usize] = true;
            }
            cur.push(code);
            rec(links, m, used, cur, out);
            cur.pop();
            if code != 0 {
                used[code as usize] = false;
            }
        }
    }
    let mut out = Vec::new();
    let mut used = vec![false; links as usize + 1];
    rec(links, m, &mut used, &mut Vec::with_capacity(m), &mut out);
    out
}

/// All valid full actions in canonical order.
pub fn enumerate_full_actions(n: usize, m: usize) -> Result<Vec<Action>, NetworkError> {
    let count = full_action_count(n, m);
    if count > MAX_ACTIONS {
        return Err(NetworkError::CapacityExceeded(count, MAX_ACTIONS));
    }
    Ok(enumerate_codes(2 * n as u32, m)
        .into_iter()
        .map(|codes| Action::new(codes.into_iter().map(code_to_link).collect()))
        .collect())
}

/// All valid reduced actions in canonical order.
pub fn enumerate_reduced_actions(n: usize, m: usize) -> Result<Vec<ReducedAction>, NetworkError> {
    let count = reduced_action_count(n, m);
    if count > MAX_ACTIONS {
        return Err(NetworkError::CapacityExceeded(count, MAX_ACTIONS));
    }
    Ok(enumerate_codes(n as u32, m)
        .into_iter()
        .map(ReducedAction::new)
        .collect())
}

/// Maps a reduced action to a full one using each plant's link mode.
pub fn resolve_reduced(action: &ReducedAction, modes: &[LinkMode]) -> Action {
    Action::new(
        action
            .assignment
            .iter()
            .map(|&a| {
                if a == 0 {
                    0
                } else {
                    match modes[a as usize - 1] {
                        LinkMode::Uplink => a as i32,
                        LinkMode::Downlink => -(a as i32),
                    }
                }
            })
            .collect(),
    )
}
