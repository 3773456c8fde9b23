//! Age-of-information state machine.
//!
//! For one plant with controllability index `v` the state holds
//! `τ = (τ⁰, …, τᵛ)` and `η = (η⁰, …, ηᵛ)`. `τ⁰` is the age of the estimate
//! held by the controller and `η⁰` the number of slots since the last command
//! delivery. For `j ≥ 1`, `τʲ` is the estimate age at the `j`-th latest
//! command delivery and `ηʲ` the gap between the `j`-th and `(j+1)`-th latest
//! deliveries. All entries are at least 1.
//!
//! [`aoi_advance`] maps the state of slot `k` to the state of slot `k+1` given
//! the slot-`k` outcomes. The simulator feeds it the uplink and downlink
//! outcomes of the same slot.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AoiError {
    #[error("delta index order violated: i = {0} > j = {1}")]
    IndexOrder(usize, usize),
    #[error("delta index {0} exceeds v = {1}")]
    IndexRange(usize, usize),
}

/// Which link of a plant the reduced action space schedules next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkMode {
    Uplink,
    Downlink,
}

impl LinkMode {
    /// `+1` for uplink, `−1` for downlink.
    pub fn sign(self) -> f64 {
        match self {
            LinkMode::Uplink => 1.0,
            LinkMode::Downlink => -1.0,
        }
    }
}

/// AoI registers of one plant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AoIState {
    pub tau: Vec<u32>,
    pub eta: Vec<u32>,
    pub mode: LinkMode,
}

/// AoI registers of every plant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WncsState {
    pub per_plant: Vec<AoIState>,
}

impl AoIState {
    pub fn new(tau: Vec<u32>, eta: Vec<u32>, mode: LinkMode) -> Self {
        assert_eq!(tau.len(), eta.len(), "tau and eta lengths differ");
        assert!(!tau.is_empty(), "empty AoI state");
        AoIState { tau, eta, mode }
    }

    /// Controllability index this state is sized for.
    pub fn v(&self) -> usize {
        self.tau.len() - 1
    }
}

impl WncsState {
    pub fn initial(vs: &[usize]) -> Self {
        WncsState {
            per_plant: vs.iter().map(|&v| initial_state(v)).collect(),
        }
    }

    pub fn modes(&self) -> Vec<LinkMode> {
        self.per_plant.iter().map(|s| s.mode).collect()
    }

    pub fn truncate(&self, l: u32) -> Self {
        WncsState {
            per_plant: self.per_plant.iter().map(|s| truncate(s, l)).collect(),
        }
    }
}

/// All-ones registers in uplink mode: the state right after a fully
/// successful cycle.
pub fn initial_state(v: usize) -> AoIState {
    assert!(v >= 1, "controllability index must be positive");
    AoIState::new(vec![1; v + 1], vec![1; v + 1], LinkMode::Uplink)
}

/// Advances the registers by one slot.
///
/// `τ⁰` resets on an uplink delivery and ages otherwise. On a downlink
/// delivery the histories shift by one: `τʲ ← τʲ⁻¹` (pre-update value),
/// `ηʲ ← ηʲ⁻¹`, and `η⁰` resets. The mode is left untouched; see
/// [`mode_advance`].
pub fn aoi_advance(s: &AoIState, beta: bool, gamma: bool) -> AoIState {
    let v = s.v();
    let mut tau = s.tau.clone();
    let mut eta = s.eta.clone();
    if gamma {
        for j in (1..=v).rev() {
            tau[j] = s.tau[j - 1];
            eta[j] = s.eta[j - 1];
        }
        eta[0] = 1;
    } else {
        eta[0] = s.eta[0].saturating_add(1);
    }
    tau[0] = if beta { 1 } else { s.tau[0].saturating_add(1) };
    AoIState {
        tau,
        eta,
        mode: s.mode,
    }
}

/// Link-mode update: uplink flips after an uplink delivery, downlink flips
/// after a downlink delivery.
pub fn mode_advance(mode: LinkMode, beta: bool, gamma: bool) -> LinkMode {
    match mode {
        LinkMode::Uplink if beta => LinkMode::Downlink,
        LinkMode::Downlink if gamma => LinkMode::Uplink,
        m => m,
    }
}

/// Registers and mode advanced together.
pub fn advance(s: &AoIState, beta: bool, gamma: bool) -> AoIState {
    let mut next = aoi_advance(s, beta, gamma);
    next.mode = mode_advance(s.mode, beta, gamma);
    next
}

/// Gap between the generation times of the estimates behind registers `i`
/// and `j`: `Σ_{n=i}^{j−1} ηⁿ + τʲ − τⁱ`.
///
/// Non-negative on every reachable state. Truncated states may give negative
/// values, so the result is signed.
pub fn delta(s: &AoIState, i: usize, j: usize) -> Result<i64, AoiError> {
    if i > j {
        return Err(AoiError::IndexOrder(i, j));
    }
    if j > s.v() {
        return Err(AoiError::IndexRange(j, s.v()));
    }
    Ok(delta_unchecked(&s.tau, &s.eta, i, j))
}

pub(crate) fn delta_unchecked(tau: &[u32], eta: &[u32], i: usize, j: usize) -> i64 {
    let sum: i64 = eta[i..j].iter().map(|&e| e as i64).sum();
    sum + tau[j] as i64 - tau[i] as i64
}

/// Registers as seen right after the latest command delivery: `τ⁰ ← τ¹`,
/// `η⁰ ← 1`.
pub fn shift_to_last_control(s: &AoIState) -> AoIState {
    let mut out = s.clone();
    out.tau[0] = s.tau[1];
    out.eta[0] = 1;
    out
}

/// Clamps every register to `l`.
pub fn truncate(s: &AoIState, l: u32) -> AoIState {
    assert!(l >= 1, "truncation level must be positive");
    AoIState {
        tau: s.tau.iter().map(|&t| t.min(l)).collect(),
        eta: s.eta.iter().map(|&e| e.min(l)).collect(),
        mode: s.mode,
    }
}

/// Estimate age at the `(v+1)`-th latest command delivery, the one register
/// that falls off the end of `τ`. Advance it alongside the state with
/// [`tail_advance`].
pub fn tail_advance(tail: u32, s: &AoIState, gamma: bool) -> u32 {
    if gamma {
        s.tau[s.v()]
    } else {
        tail
    }
}
