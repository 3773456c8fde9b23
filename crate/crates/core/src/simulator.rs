//! Closed-loop simulation.
//!
//! Each slot `k` runs in this order:
//!
//! 1. the scheduler's action is sampled into uplink (`β_k`) and downlink
//!    (`γ_k`) outcomes;
//! 2. the controller builds `[K̃ x̂_k, K̃Φ x̂_k, …, K̃Φ^{v−1} x̂_k]` and, if the
//!    downlink succeeds, the actuator buffer is replaced by it; otherwise the
//!    buffer shifts by one and pads with zero;
//! 3. the buffer head `u_k` is applied and the plant advances with fresh
//!    process noise;
//! 4. the sensor measures the new state and runs its steady-state filter,
//!    reconstructing `u_k` from its own replica of the controller;
//! 5. the controller estimate becomes `A xˢ_k + B u_k` if the uplink
//!    succeeded and `A x̂_k + B u_k` otherwise;
//! 6. AoI registers and link modes advance with `(β_k, γ_k)`.
//!
//! Acknowledgments are instantaneous and error-free, so the sensor's replica
//! of the controller estimate and of the actuator buffer stay identical to
//! the originals.

use crate::aoi::{advance, initial_state, tail_advance, AoIState, WncsState};
use crate::cost::{per_step_cost, CostError, CostEvaluator};
use crate::linalg::{psd_sqrt, Mat, Vector};
use crate::model::{CostWeights, PlantModel};
use crate::network::{sample_transmissions, Action, NetworkError, NetworkModel, TransmissionOutcome};
use crate::policies::Policy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("system definition: {0}")]
    Definition(String),
}

/// Precomputed per-plant quantities used in every slot.
#[derive(Debug, Clone)]
pub struct PlantRuntime {
    pub plant: PlantModel,
    sqrt_qw: Mat,
    sqrt_qv: Mat,
    sqrt_ps: Mat,
    /// `K̃Φʲ` for `j = 0..v`.
    command_gains: Vec<Mat>,
}

impl PlantRuntime {
    pub fn new(plant: &PlantModel) -> Self {
        let mut gains = Vec::with_capacity(plant.v);
        let mut phi_j = Mat::identity(plant.n(), plant.n());
        for _ in 0..plant.v {
            gains.push(&plant.ktilde * &phi_j);
            phi_j = &plant.phi * phi_j;
        }
        PlantRuntime {
            plant: plant.clone(),
            sqrt_qw: psd_sqrt(&plant.qw),
            sqrt_qv: psd_sqrt(&plant.qv),
            sqrt_ps: psd_sqrt(&plant.ps_hat),
            command_gains: gains,
        }
    }

    fn command(&self, xhat: &Vector) -> Vec<Vector> {
        self.command_gains.iter().map(|g| g * xhat).collect()
    }
}

fn gaussian<R: Rng + ?Sized>(sqrt_cov: &Mat, rng: &mut R) -> Vector {
    let z = Vector::from_fn(sqrt_cov.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    sqrt_cov * z
}

/// Physical state of one plant's loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantLoop {
    pub x: Vector,
    /// Sensor estimate.
    pub xs: Vector,
    /// Controller estimate.
    pub xhat: Vector,
    /// Sensor-side replica of the controller estimate.
    pub xhat_sensor: Vector,
    pub buffer: Vec<Vector>,
    /// Sensor-side replica of the actuator buffer.
    pub buffer_sensor: Vec<Vector>,
    pub aoi: AoIState,
    /// Estimate age at the `(v+1)`-th latest command delivery.
    pub tail: u32,
}

impl PlantLoop {
    /// Everything zero, AoI registers all ones.
    pub fn zero(rt: &PlantRuntime) -> Self {
        let p = &rt.plant;
        let z = Vector::zeros(p.n());
        let buf = vec![Vector::zeros(p.m()); p.v];
        PlantLoop {
            x: z.clone(),
            xs: z.clone(),
            xhat: z.clone(),
            xhat_sensor: z,
            buffer: buf.clone(),
            buffer_sensor: buf,
            aoi: initial_state(p.v),
            tail: 1,
        }
    }

    /// `x₀ ~ N(0, P̂ˢ)` with zero estimates: the sensor error starts at its
    /// stationary law.
    pub fn stationary<R: Rng + ?Sized>(rt: &PlantRuntime, rng: &mut R) -> Self {
        let mut lp = Self::zero(rt);
        lp.x = gaussian(&rt.sqrt_ps, rng);
        lp
    }

    /// One slot with given deliveries. Returns the applied input `u_k`.
    pub fn step<R: Rng + ?Sized>(&mut self, rt: &PlantRuntime, beta: bool, gamma: bool, rng: &mut R) -> Vector {
        let p = &rt.plant;
        if gamma {
            self.buffer = rt.command(&self.xhat);
            self.buffer_sensor = rt.command(&self.xhat_sensor);
        } else {
            for buf in [&mut self.buffer, &mut self.buffer_sensor] {
                buf.remove(0);
                buf.push(Vector::zeros(p.m()));
            }
        }
        let u = self.buffer[0].clone();
        let u_s = &self.buffer_sensor[0];

        let w = gaussian(&rt.sqrt_qw, rng);
        let meas = gaussian(&rt.sqrt_qv, rng);
        let x_next = &p.a * &self.x + &p.b * &u + w;
        let y = &p.c * &x_next + meas;
        let pred = &p.a * &self.xs + &p.b * u_s;
        let xs_next = &pred + &p.khat * (y - &p.c * &pred);
        let (xhat_next, xhat_sensor_next) = if beta {
            (&p.a * &self.xs + &p.b * &u, &p.a * &self.xs + &p.b * u_s)
        } else {
            (&p.a * &self.xhat + &p.b * &u, &p.a * &self.xhat_sensor + &p.b * u_s)
        };

        self.x = x_next;
        self.xs = xs_next;
        self.xhat = xhat_next;
        self.xhat_sensor = xhat_sensor_next;
        self.tail = tail_advance(self.tail, &self.aoi, gamma);
        self.aoi = advance(&self.aoi, beta, gamma);
        u
    }
}

/// Plants, channels, cost weights and discount of one experiment.
#[derive(Debug, Clone)]
pub struct WncsSystem {
    pub net: NetworkModel,
    pub evaluators: Vec<CostEvaluator>,
    pub runtimes: Vec<PlantRuntime>,
    pub theta: f64,
}

impl WncsSystem {
    pub fn new(
        plants: Vec<PlantModel>,
        weights: Vec<CostWeights>,
        net: NetworkModel,
        cap: u32,
        theta: f64,
    ) -> Result<Self, SimError> {
        if plants.len() != net.n || weights.len() != net.n {
            return Err(SimError::Definition(format!(
                "{} plants and {} weight sets for a network of {} plants",
                plants.len(),
                weights.len(),
                net.n
            )));
        }
        if !(0.0..1.0).contains(&theta) {
            return Err(SimError::Definition(format!("discount {theta} outside [0, 1)")));
        }
        let runtimes = plants.iter().map(PlantRuntime::new).collect();
        let evaluators = plants
            .into_iter()
            .zip(weights)
            .map(|(p, w)| CostEvaluator::new(p, w, cap))
            .collect();
        Ok(WncsSystem {
            net,
            evaluators,
            runtimes,
            theta,
        })
    }

    pub fn n(&self) -> usize {
        self.net.n
    }

    pub fn m(&self) -> usize {
        self.net.m
    }

    pub fn plant(&self, i: usize) -> &PlantModel {
        &self.runtimes[i].plant
    }

    pub fn vs(&self) -> Vec<usize> {
        self.runtimes.iter().map(|r| r.plant.v).collect()
    }

    pub fn cap(&self) -> u32 {
        self.evaluators.first().map_or(1, |e| e.cap)
    }

    /// Analytic per-step cost `c(s)`.
    pub fn cost(&self, ws: &WncsState) -> f64 {
        per_step_cost(&self.evaluators, ws).expect("state sized for this system")
    }

    pub fn initial_state(&self) -> WncsState {
        WncsState::initial(&self.vs())
    }
}

/// Independent random streams for channel draws and for noise, so a run with
/// recorded channel outcomes can be replayed exactly.
#[derive(Debug, Clone)]
pub struct Streams {
    pub channel: ChaCha8Rng,
    pub noise: ChaCha8Rng,
}

impl Streams {
    pub fn from_seed(seed: u64) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        Streams {
            channel: ChaCha8Rng::seed_from_u64(master.random()),
            noise: ChaCha8Rng::seed_from_u64(master.random()),
        }
    }
}

/// Full closed-loop state at one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSnapshot {
    pub plants: Vec<PlantLoop>,
    pub slot: u64,
}

impl SimSnapshot {
    pub fn zero(system: &WncsSystem) -> Self {
        SimSnapshot {
            plants: system.runtimes.iter().map(PlantLoop::zero).collect(),
            slot: 0,
        }
    }

    pub fn aoi(&self) -> WncsState {
        WncsState {
            per_plant: self.plants.iter().map(|p| p.aoi.clone()).collect(),
        }
    }
}

/// Per-slot trace entry. Physical quantities are taken at the start of the
/// slot; `u` is the input applied during it.
#[derive(Debug, Clone)]
pub struct SlotRecord {
    pub slot: u64,
    pub action: Action,
    pub outcome: TransmissionOutcome,
    pub aoi: WncsState,
    pub tails: Vec<u32>,
    pub x: Vec<Vector>,
    pub xs: Vec<Vector>,
    pub xhat: Vec<Vector>,
    pub xhat_sensor: Vec<Vector>,
    pub u: Vec<Vector>,
    pub analytic_cost: f64,
    pub physical_cost: f64,
}

impl SlotRecord {
    pub const CSV_HEADER: &'static str = "slot,tau0,eta0,analytic_cost,physical_cost,action";

    /// `slot,τ⁰ list,η⁰ list,analytic,physical,action` with lists joined by `;`.
    pub fn csv_row(&self) -> String {
        let join = |it: Vec<String>| it.join(";");
        format!(
            "{},{},{},{},{},{}",
            self.slot,
            join(self.aoi.per_plant.iter().map(|s| s.tau[0].to_string()).collect()),
            join(self.aoi.per_plant.iter().map(|s| s.eta[0].to_string()).collect()),
            self.analytic_cost,
            self.physical_cost,
            join(self.action.assignment.iter().map(|a| a.to_string()).collect()),
        )
    }
}

/// Result of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    /// `1/T Σ c(s_k)`.
    pub empirical_avg_cost: f64,
    /// `Σ θᵏ c(s_k)`.
    pub discounted_cost: f64,
    /// `1/T Σ Σᵢ xᵀSx x + uᵀSu u`.
    pub quadratic_avg: f64,
    pub trajectory: Option<Vec<SlotRecord>>,
}

fn state_cost(system: &WncsSystem, snap: &SimSnapshot) -> f64 {
    snap.plants
        .iter()
        .zip(&system.evaluators)
        .map(|(lp, ev)| (lp.x.transpose() * &ev.weights.sx * &lp.x)[(0, 0)])
        .sum()
}

fn input_cost(system: &WncsSystem, us: &[Vector]) -> f64 {
    us.iter()
        .zip(&system.evaluators)
        .map(|(u, ev)| (u.transpose() * &ev.weights.su * u)[(0, 0)])
        .sum()
}

fn physical_cost(system: &WncsSystem, snap: &SimSnapshot, us: &[Vector]) -> f64 {
    state_cost(system, snap) + input_cost(system, us)
}

/// Applies given outcomes to every plant. Returns the applied inputs.
pub fn apply_outcome<R: Rng + ?Sized>(
    snap: &mut SimSnapshot,
    outcome: &TransmissionOutcome,
    system: &WncsSystem,
    noise: &mut R,
) -> Vec<Vector> {
    let us = snap
        .plants
        .iter_mut()
        .zip(&system.runtimes)
        .enumerate()
        .map(|(i, (lp, rt))| lp.step(rt, outcome.beta[i], outcome.gamma[i], noise))
        .collect();
    snap.slot += 1;
    us
}

/// One slot with channel sampling.
pub fn step(
    snap: &mut SimSnapshot,
    action: &Action,
    system: &WncsSystem,
    streams: &mut Streams,
) -> Result<(TransmissionOutcome, Vec<Vector>), SimError> {
    let outcome = sample_transmissions(action, &system.net, &mut streams.channel)?;
    let us = apply_outcome(snap, &outcome, system, &mut streams.noise);
    Ok((outcome, us))
}

/// AoI-level transition without plant physics: the part of [`step`] that
/// the analytic cost depends on.
pub fn aoi_step<R: Rng + ?Sized>(
    ws: &WncsState,
    action: &Action,
    net: &NetworkModel,
    rng: &mut R,
) -> Result<(WncsState, TransmissionOutcome), NetworkError> {
    let outcome = sample_transmissions(action, net, rng)?;
    let next = WncsState {
        per_plant: ws
            .per_plant
            .iter()
            .enumerate()
            .map(|(i, s)| advance(s, outcome.beta[i], outcome.gamma[i]))
            .collect(),
    };
    Ok((next, outcome))
}

fn make_record(
    system: &WncsSystem,
    snap: &SimSnapshot,
    action: Action,
    outcome: TransmissionOutcome,
    us: Vec<Vector>,
    analytic: f64,
) -> SlotRecord {
    let collect = |f: &dyn Fn(&PlantLoop) -> Vector| snap.plants.iter().map(f).collect::<Vec<_>>();
    SlotRecord {
        slot: snap.slot,
        action,
        outcome,
        aoi: snap.aoi(),
        tails: snap.plants.iter().map(|p| p.tail).collect(),
        x: collect(&|p| p.x.clone()),
        xs: collect(&|p| p.xs.clone()),
        xhat: collect(&|p| p.xhat.clone()),
        xhat_sensor: collect(&|p| p.xhat_sensor.clone()),
        physical_cost: physical_cost(system, snap, &us),
        u: us,
        analytic_cost: analytic,
    }
}

/// Runs `t` slots from zero physical state and all-ones AoI registers.
pub fn run_episode(
    system: &WncsSystem,
    policy: &mut dyn Policy,
    t: usize,
    theta: f64,
    streams: &mut Streams,
    record: bool,
) -> Result<EpisodeResult, SimError> {
    run_from(system, SimSnapshot::zero(system), policy, t, theta, streams, record)
}

/// Runs `t` slots from a given snapshot.
pub fn run_from(
    system: &WncsSystem,
    mut snap: SimSnapshot,
    policy: &mut dyn Policy,
    t: usize,
    theta: f64,
    streams: &mut Streams,
    record: bool,
) -> Result<EpisodeResult, SimError> {
    assert!(t >= 1, "episode length must be positive");
    policy.reset();
    let mut trajectory = record.then(Vec::new);
    let (mut sum, mut disc, mut quad, mut w) = (0.0, 0.0, 0.0, 1.0);
    for k in 0..t {
        let ws = snap.aoi();
        let c = system.cost(&ws);
        let action = policy.decide(&ws, k as u64);
        let before = record.then(|| snap.clone());
        let x_cost = state_cost(system, &snap);
        let (outcome, us) = step(&mut snap, &action, system, streams)?;
        policy.observe(&outcome);
        quad += x_cost + input_cost(system, &us);
        if let (Some(tr), Some(b)) = (trajectory.as_mut(), before) {
            tr.push(make_record(system, &b, action, outcome, us, c));
        }
        sum += c;
        disc += w * c;
        w *= theta;
    }
    let tf = t as f64;
    Ok(EpisodeResult {
        empirical_avg_cost: sum / tf,
        discounted_cost: disc,
        quadratic_avg: quad / tf,
        trajectory,
    })
}

/// Runs with deliveries forced by `script[k][i] = (β, γ)` for plant `i`.
/// Noise still comes from `noise`.
pub fn scripted_run<R: Rng + ?Sized>(
    system: &WncsSystem,
    script: &[Vec<(bool, bool)>],
    t: usize,
    noise: &mut R,
) -> Vec<SlotRecord> {
    assert!(script.len() >= t, "script shorter than the horizon");
    let mut snap = SimSnapshot::zero(system);
    let mut out = Vec::with_capacity(t);
    for row in &script[..t] {
        let outcome = TransmissionOutcome {
            beta: row.iter().map(|p| p.0).collect(),
            gamma: row.iter().map(|p| p.1).collect(),
        };
        let ws = snap.aoi();
        let c = system.cost(&ws);
        let before = snap.clone();
        let us = apply_outcome(&mut snap, &outcome, system, noise);
        out.push(make_record(system, &before, Action::idle(system.m()), outcome, us, c));
    }
    out
}
