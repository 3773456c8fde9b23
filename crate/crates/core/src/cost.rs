//! Closed-form per-step costs indexed by the AoI state.
//!
//! For a plant in AoI state `s` at slot `k`:
//!
//! - [`state_covariance`] is `V(s) = E[x_k x_kᵀ]`,
//! - [`estimate_covariance`] is `V̂(s) = E[x̂_k x̂_kᵀ]`,
//! - [`cost_x`] is `Tr(Sx V(s))`,
//! - [`cost_u`] is the expected quadratic cost of the input applied in the
//!   slot before `k`: `Tr(Gᵀ Su G V̂(s'))` with `G = K̃ Φ^{η⁰−1}` and `s'` the
//!   registers observed at the latest command delivery.
//!
//! `s'` needs the estimate age at the `(v+1)`-th latest delivery, which the
//! state does not carry. It only matters after `v` back-to-back deliveries.
//! [`cost_u`] imputes it as `max(1, τᵛ − ηᵛ)`, the freshest value consistent
//! with the registers, and [`cost_u_with_tail`] takes the true value.
//!
//! The formulas are exact when the sensor filter runs at steady state and the
//! history reaches back `v+1` command deliveries. [`mc_oracle`] checks them by
//! simulating the closed loop.

use crate::aoi::{initial_state, truncate, AoIState, WncsState};
use crate::linalg::{symmetrize, Mat, Powers};
use crate::model::{CostWeights, PlantModel};
use crate::simulator::{PlantLoop, PlantRuntime};
use rand::Rng;
use std::collections::HashMap;
use std::sync::RwLock;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("expected {expected} per-plant states, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("script too short: {0}")]
    ScriptTooShort(String),
}

/// Default AoI saturation applied before cost evaluation.
pub const DEFAULT_COST_CAP: u32 = 20;

struct Series<'a> {
    p: &'a PlantModel,
    tau: &'a [u32],
    eta: &'a [u32],
    a: Powers,
    phi: Powers,
    z: Powers,
    ikc: Mat,
}

impl<'a> Series<'a> {
    fn new(p: &'a PlantModel, tau: &'a [u32], eta: &'a [u32]) -> Self {
        Series {
            p,
            tau,
            eta,
            a: Powers::new(&p.a),
            phi: Powers::new(&p.phi),
            z: Powers::new(&p.z),
            ikc: p.i_minus_kc(),
        }
    }

    fn delta(&self, i: usize, j: usize) -> i64 {
        crate::aoi::delta_unchecked(self.tau, self.eta, i, j)
    }

    fn eta_sum(&self, upto: usize) -> i64 {
        self.eta[..upto].iter().map(|&e| e as i64).sum()
    }

    /// `Φ^{Σ_{m<j−1} ηᵐ} (A^{η^{j−1}} − Φ^{η^{j−1}}) A^{τʲ}` for `j ≥ 1`.
    fn lead(&mut self, j: usize) -> Mat {
        let e = self.eta[j - 1] as i64;
        let head = self.phi.get(self.eta_sum(j - 1)).clone();
        let mid = self.a.get(e) - self.phi.get(e);
        head * mid * self.a.get(self.tau[j] as i64)
    }

    fn leads(&mut self) -> Vec<Mat> {
        let v = self.p.v;
        (1..=v).map(|j| self.lead(j)).collect()
    }

    /// `D = Σ_{j=1}^{v} lead(j) Z^{Δ(j,v)}`.
    fn d(&mut self, leads: &[Mat]) -> Mat {
        let v = self.p.v;
        let n = self.p.n();
        let mut d = Mat::zeros(n, n);
        for j in 1..=v {
            let dz = self.delta(j, v);
            d += &leads[j - 1] * self.z.get(dz);
        }
        d
    }

    /// `Σ_{j≤n} lead(j) Z^{i+Δ(j,n)}`.
    fn lead_sum(&mut self, leads: &[Mat], n_idx: usize, i: i64) -> Mat {
        let n = self.p.n();
        let mut acc = Mat::zeros(n, n);
        for j in 1..=n_idx {
            let e = i + self.delta(j, n_idx);
            acc += &leads[j - 1] * self.z.get(e);
        }
        acc
    }

    fn state_cov(&mut self) -> Mat {
        let p = self.p;
        let v = p.v;
        let leads = self.leads();
        let d = self.d(&leads);
        let mut out = &d * &p.ps_hat * d.transpose();
        for nb in 1..v {
            let span = self.delta(nb, nb + 1);
            let head = self.phi.get(self.eta_sum(nb)).clone();
            for i in 0..span.max(0) {
                let g = self.lead_sum(&leads, nb, i);
                let e = &head * self.a.get(self.tau[nb] as i64 + i) + &g * &self.ikc;
                let f = &g * &p.khat;
                out += &e * &p.qw * e.transpose() + &f * &p.qv * f.transpose();
            }
        }
        let span = self.eta[0] as i64 + self.tau[1] as i64;
        for i in 0..span {
            let ai = self.a.get(i);
            out += ai * &p.qw * ai.transpose();
        }
        symmetrize(&out)
    }

    fn estimate_cov(&mut self) -> Mat {
        let p = self.p;
        let v = p.v;
        let leads = self.leads();
        let a0 = self.a.get(self.tau[0] as i64).clone();
        let d = self.d(&leads) - &a0 * self.z.get(self.delta(0, v));
        let mut out = &d * &p.ps_hat * d.transpose();
        for nb in 1..v {
            let span = self.delta(nb, nb + 1);
            let head = self.phi.get(self.eta_sum(nb)).clone();
            let d0 = self.delta(0, nb);
            for i in 0..span.max(0) {
                let g = self.lead_sum(&leads, nb, i) - &a0 * self.z.get(d0 + i);
                let e = &head * self.a.get(self.tau[nb] as i64 + i) + &g * &self.ikc;
                let f = &g * &p.khat;
                out += &e * &p.qw * e.transpose() + &f * &p.qv * f.transpose();
            }
        }
        let span = self.delta(0, 1);
        for i in 0..span.max(0) {
            let zi = self.z.get(i).clone();
            let e = self.a.get(self.tau[0] as i64 + i) - &a0 * &zi * &self.ikc;
            let f = &a0 * &zi * &p.khat;
            out += &e * &p.qw * e.transpose() + &f * &p.qv * f.transpose();
        }
        symmetrize(&out)
    }
}

fn check_len(p: &PlantModel, s: &AoIState) {
    assert_eq!(
        s.tau.len(),
        p.v + 1,
        "AoI state sized for v = {}, plant has v = {}",
        s.v(),
        p.v
    );
}

/// `E[x_k x_kᵀ]` for a plant in state `s`.
pub fn state_covariance(plant: &PlantModel, s: &AoIState) -> Mat {
    check_len(plant, s);
    Series::new(plant, &s.tau, &s.eta).state_cov()
}

/// `E[x̂_k x̂_kᵀ]` for a plant in state `s`.
pub fn estimate_covariance(plant: &PlantModel, s: &AoIState) -> Mat {
    check_len(plant, s);
    Series::new(plant, &s.tau, &s.eta).estimate_cov()
}

/// `Tr(Sx V(s))`.
pub fn cost_x(plant: &PlantModel, weights: &CostWeights, s: &AoIState) -> f64 {
    // Traces of PSD products; clamp rounding noise on rank-deficient cases.
    (&weights.sx * state_covariance(plant, s)).trace().max(0.0)
}

/// Freshest estimate age at the `(v+1)`-th latest delivery consistent with
/// `s`: `max(1, τᵛ − ηᵛ)`.
pub fn imputed_tail(s: &AoIState) -> u32 {
    let v = s.v();
    s.tau[v].saturating_sub(s.eta[v]).max(1)
}

/// Registers as observed in the slot of the latest command delivery, given
/// the age `tail` at the delivery before the oldest one in `s`.
pub fn last_delivery_state(s: &AoIState, tail: u32) -> AoIState {
    let v = s.v();
    let mut tau: Vec<u32> = s.tau[1..].to_vec();
    tau.push(tail);
    let mut eta: Vec<u32> = s.eta[1..].to_vec();
    eta.push(1);
    debug_assert_eq!(tau.len(), v + 1);
    AoIState::new(tau, eta, s.mode)
}

/// Input cost with a known tail register.
pub fn cost_u_with_tail(plant: &PlantModel, weights: &CostWeights, s: &AoIState, tail: u32) -> f64 {
    check_len(plant, s);
    let v = plant.v;
    let e = s.eta[0] as usize - 1;
    if e >= v {
        return 0.0;
    }
    let g = &plant.ktilde * plant.phi.pow(e as u32);
    let vh = estimate_covariance(plant, &last_delivery_state(s, tail));
    (g.transpose() * &weights.su * &g * vh).trace().max(0.0)
}

/// Input cost with the tail register imputed by [`imputed_tail`].
pub fn cost_u(plant: &PlantModel, weights: &CostWeights, s: &AoIState) -> f64 {
    cost_u_with_tail(plant, weights, s, imputed_tail(s))
}

/// Memoized per-plant cost `c(s) = J^x(s) + J^u(s)` on capped states.
#[derive(Debug)]
pub struct CostEvaluator {
    pub plant: PlantModel,
    pub weights: CostWeights,
    pub cap: u32,
    cache: RwLock<HashMap<(Vec<u32>, Vec<u32>), f64>>,
}

impl Clone for CostEvaluator {
    fn clone(&self) -> Self {
        CostEvaluator {
            plant: self.plant.clone(),
            weights: self.weights.clone(),
            cap: self.cap,
            cache: RwLock::new(self.cache.read().unwrap().clone()),
        }
    }
}

impl CostEvaluator {
    pub fn new(plant: PlantModel, weights: CostWeights, cap: u32) -> Self {
        assert!(cap >= 1, "cost cap must be positive");
        CostEvaluator {
            plant,
            weights,
            cap,
            cache: RwLock::new(HashMap::new()),
        }
    }

    /// Cost evaluated without touching the memo table.
    pub fn fresh(&self, s: &AoIState) -> f64 {
        let sc = truncate(s, self.cap);
        cost_x(&self.plant, &self.weights, &sc) + cost_u(&self.plant, &self.weights, &sc)
    }

    pub fn cost(&self, s: &AoIState) -> f64 {
        let sc = truncate(s, self.cap);
        let key = (sc.tau, sc.eta);
        if let Some(&c) = self.cache.read().unwrap().get(&key) {
            return c;
        }
        let c = self.fresh(s);
        self.cache.write().unwrap().insert(key, c);
        c
    }

    pub fn cache_len(&self) -> usize {
        self.cache.read().unwrap().len()
    }
}

/// `Σᵢ cᵢ(sᵢ)`.
pub fn per_step_cost(evaluators: &[CostEvaluator], ws: &WncsState) -> Result<f64, CostError> {
    if evaluators.len() != ws.per_plant.len() {
        return Err(CostError::LengthMismatch {
            expected: evaluators.len(),
            got: ws.per_plant.len(),
        });
    }
    Ok(evaluators
        .iter()
        .zip(&ws.per_plant)
        .map(|(e, s)| e.cost(s))
        .sum())
}

/// Monte Carlo estimate of the per-step cost for a forced delivery script.
#[derive(Debug, Clone)]
pub struct OracleEstimate {
    pub mean_x: f64,
    pub mean_u: f64,
    pub stderr_x: f64,
    pub stderr_u: f64,
    /// AoI state at `target_slot` realized by the script.
    pub state: AoIState,
    /// True estimate age at the `(v+1)`-th latest command delivery.
    pub tail: u32,
}

/// Checks that the first `target_slot` entries of `script` reach back `v+1`
/// command deliveries with an estimate delivered before the oldest of them.
pub fn check_script(script: &[(bool, bool)], target_slot: usize, v: usize) -> Result<(), CostError> {
    if target_slot > script.len() {
        return Err(CostError::ScriptTooShort(format!(
            "target slot {target_slot} beyond script length {}",
            script.len()
        )));
    }
    let prefix = &script[..target_slot];
    let deliveries: Vec<usize> = (0..prefix.len()).rev().filter(|&k| prefix[k].1).collect();
    if deliveries.len() < v + 1 {
        return Err(CostError::ScriptTooShort(format!(
            "{} command deliveries, need {}",
            deliveries.len(),
            v + 1
        )));
    }
    let oldest = deliveries[v];
    if !prefix[..oldest].iter().any(|&(b, _)| b) {
        return Err(CostError::ScriptTooShort(
            "no estimate delivery before the oldest tracked command delivery".into(),
        ));
    }
    Ok(())
}

/// Runs the closed loop of one plant with deliveries forced by `script`
/// (`(β, γ)` per slot) and averages `x_kᵀ Sx x_k` and `u_{k−1}ᵀ Su u_{k−1}` at
/// `k = target_slot`.
///
/// Each sample starts from `x₀ ~ N(0, P̂ˢ)` with zero sensor and controller
/// estimates, so the sensor error is stationary from the first slot.
pub fn mc_oracle<R: Rng + ?Sized>(
    plant: &PlantModel,
    weights: &CostWeights,
    script: &[(bool, bool)],
    target_slot: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<OracleEstimate, CostError> {
    check_script(script, target_slot, plant.v)?;
    let rt = PlantRuntime::new(plant);
    let mut state = initial_state(plant.v);
    let mut tail = 1;
    for &(b, g) in &script[..target_slot] {
        tail = crate::aoi::tail_advance(tail, &state, g);
        state = crate::aoi::aoi_advance(&state, b, g);
    }
    let (mut sx, mut sxx, mut su, mut suu) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..n_samples {
        let mut lp = PlantLoop::stationary(&rt, rng);
        let mut u = crate::linalg::Vector::zeros(plant.m());
        for &(b, g) in &script[..target_slot] {
            u = lp.step(&rt, b, g, rng);
        }
        let jx = (lp.x.transpose() * &weights.sx * &lp.x)[(0, 0)];
        let ju = (u.transpose() * &weights.su * &u)[(0, 0)];
        sx += jx;
        sxx += jx * jx;
        su += ju;
        suu += ju * ju;
    }
    let n = n_samples as f64;
    let se = |s: f64, ss: f64| {
        let mean = s / n;
        let var = ((ss / n - mean * mean) * n / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    };
    Ok(OracleEstimate {
        mean_x: sx / n,
        mean_u: su / n,
        stderr_x: se(sx, sxx),
        stderr_u: se(su, suu),
        state,
        tail,
    })
}
