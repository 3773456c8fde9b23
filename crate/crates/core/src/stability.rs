//! Stabilizability test over assignments of unstable plants to frequencies.
//!
//! For an assignment of every unstable plant to one frequency, each nonempty
//! group `m` scores `ρ²_max · ξ̄_max`: the largest squared spectral radius in
//! the group times the largest link error probability (uplink or downlink) of
//! its plants on frequency `m`. `κ` is the smallest, over assignments, of the
//! worst group score. A scheduler keeping every plant mean-square stable
//! exists when `κ < 1`.

use crate::model::{spectral_radius, PlantModel};
use crate::network::NetworkModel;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("{0} assignments exceed the limit of {1}")]
    CapacityExceeded(u128, u128),
    #[error("{plants} plants given for a network of {network} plants")]
    LengthMismatch { plants: usize, network: usize },
}

pub const MAX_ASSIGNMENTS: u128 = 10_000_000;
const UNSTABLE_TOL: f64 = 1e-12;

/// Outcome of the stabilizability test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub kappa: f64,
    /// `(plant, frequency)` pairs, 0-based, over unstable plants.
    pub best_partition: Vec<(usize, usize)>,
    pub stabilizable: bool,
    /// `κ` landed exactly on 1.
    pub boundary: bool,
    /// 0-based indices of plants with `ρ(A) ≥ 1`.
    pub unstable_set: Vec<usize>,
}

impl StabilityReport {
    /// Frequency assigned to each plant, `None` for stable plants.
    pub fn frequency_of(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for &(i, f) in &self.best_partition {
            out[i] = Some(f);
        }
        out
    }
}

/// Plants whose spectral radius is at least one.
pub fn unstable_set(radii: &[f64]) -> Vec<usize> {
    radii
        .iter()
        .enumerate()
        .filter(|(_, &r)| r >= 1.0 - UNSTABLE_TOL)
        .map(|(i, _)| i)
        .collect()
}

/// Spectral radii of the plants' open-loop matrices.
pub fn radii(plants: &[PlantModel]) -> Vec<f64> {
    plants.iter().map(|p| spectral_radius(&p.a)).collect()
}

/// `κ` from squared spectral radii; see [`kappa`].
pub fn kappa_from_radii(rho_sq: &[f64], net: &NetworkModel) -> Result<StabilityReport, StabilityError> {
    if rho_sq.len() != net.n {
        return Err(StabilityError::LengthMismatch {
            plants: rho_sq.len(),
            network: net.n,
        });
    }
    let rho: Vec<f64> = rho_sq.iter().map(|r| r.sqrt()).collect();
    let unstable = unstable_set(&rho);
    let nb = unstable.len();
    let m = net.m;
    if nb == 0 {
        return Ok(StabilityReport {
            kappa: 0.0,
            best_partition: Vec::new(),
            stabilizable: true,
            boundary: false,
            unstable_set: unstable,
        });
    }
    let count = (m as u128).checked_pow(nb as u32).unwrap_or(u128::MAX);
    if count > MAX_ASSIGNMENTS {
        return Err(StabilityError::CapacityExceeded(count, MAX_ASSIGNMENTS));
    }
    // err[f][i]: worst link error probability of plant i on frequency f.
    let err: Vec<Vec<f64>> = (0..m)
        .map(|f| {
            (0..net.n)
                .map(|i| (1.0 - net.xi_s[f][i]).max(1.0 - net.xi_c[f][i]))
                .collect()
        })
        .collect();
    let mut assign = vec![0usize; nb];
    let mut best = (f64::INFINITY, assign.clone());
    let mut rho_max = vec![0.0f64; m];
    let mut err_max = vec![0.0f64; m];
    for _ in 0..count {
        rho_max.iter_mut().for_each(|x| *x = 0.0);
        err_max.iter_mut().for_each(|x| *x = 0.0);
        let mut used = vec![false; m];
        for (k, &f) in assign.iter().enumerate() {
            let i = unstable[k];
            used[f] = true;
            rho_max[f] = rho_max[f].max(rho_sq[i]);
            err_max[f] = err_max[f].max(err[f][i]);
        }
        let score = (0..m)
            .filter(|&f| used[f])
            .map(|f| rho_max[f] * err_max[f])
            .fold(0.0, f64::max);
        // Odometer order is lexicographic, so a strict comparison keeps the
        // smallest minimizing assignment.
        if score < best.0 {
            best = (score, assign.clone());
        }
        for k in (0..nb).rev() {
            assign[k] += 1;
            if assign[k] < m {
                break;
            }
            assign[k] = 0;
        }
    }
    let kappa = best.0;
    Ok(StabilityReport {
        kappa,
        best_partition: unstable.iter().cloned().zip(best.1).collect(),
        stabilizable: kappa < 1.0,
        boundary: kappa == 1.0,
        unstable_set: unstable,
    })
}

/// Stabilizability index over all labeled assignments of unstable plants to
/// frequencies.
pub fn kappa(plants: &[PlantModel], net: &NetworkModel) -> Result<StabilityReport, StabilityError> {
    let rho_sq: Vec<f64> = radii(plants).iter().map(|r| r * r).collect();
    kappa_from_radii(&rho_sq, net)
}

/// Per-plant condition `ρ² · max{min_m ξ̄ˢ, min_m ξ̄ᶜ} < 1` over unstable
/// plants, with error probabilities `ξ̄ = 1 − ξ`.
pub fn necessary_condition_from_radii(rho_sq: &[f64], net: &NetworkModel) -> bool {
    let rho: Vec<f64> = rho_sq.iter().map(|r| r.sqrt()).collect();
    unstable_set(&rho).into_iter().all(|i| {
        let best_s = (0..net.m).map(|f| 1.0 - net.xi_s[f][i]).fold(f64::INFINITY, f64::min);
        let best_c = (0..net.m).map(|f| 1.0 - net.xi_c[f][i]).fold(f64::INFINITY, f64::min);
        rho_sq[i] * best_s.max(best_c) < 1.0
    })
}

pub fn necessary_condition(plants: &[PlantModel], net: &NetworkModel) -> bool {
    let rho_sq: Vec<f64> = radii(plants).iter().map(|r| r * r).collect();
    necessary_condition_from_radii(&rho_sq, net)
}
