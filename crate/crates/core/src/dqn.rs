//! Deep Q-learning scheduler over the reduced action space.
//!
//! The Q-network is a plain multilayer perceptron (ReLU hidden layers, linear
//! head) trained by mini-batch regression toward one-step Bellman targets with
//! the Adam optimizer. Transitions come from an experience-replay ring buffer
//! filled by an ε-greedy agent acting on the AoI-level environment.
//!
//! Inputs are the capped AoI registers of every plant followed by one `±1`
//! link mode per plant. The network multiplies its input by a fixed
//! `input_scale` (default `1/cap`) before the first layer. Output `k` is the
//! value of the `k`-th reduced action in canonical order.

use crate::aoi::{LinkMode, WncsState};
use crate::network::{enumerate_reduced_actions, resolve_reduced, Action, NetworkError, ReducedAction};
use crate::policies::Policy;
use crate::simulator::{aoi_step, WncsSystem};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("input has {got} entries, network expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite loss at episode {episode}, step {step}")]
    NonFiniteLoss { episode: usize, step: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("model file: {0}")]
    FormatError(String),
    #[error("model file mismatch: {0}")]
    VersionMismatch(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Appends the capped registers of each plant, then the link modes as `±1`.
pub fn encode_state(ws: &WncsState, cap: u32) -> Vec<f64> {
    let mut out = Vec::new();
    for s in &ws.per_plant {
        out.extend(s.tau.iter().chain(&s.eta).map(|&x| x.min(cap) as f64));
    }
    out.extend(ws.per_plant.iter().map(|s| s.mode.sign()));
    out
}

/// Input width for plants with the given controllability indices.
pub fn input_dim(vs: &[usize]) -> usize {
    vs.iter().map(|v| 2 * v + 2).sum::<usize>() + vs.len()
}

/// One affine layer; `w` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Multilayer perceptron with ReLU hidden layers and a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub layers: Vec<Layer>,
    pub input_scale: f64,
}

/// Parameter gradients, one `(dW, db)` per layer.
pub type Gradients = Vec<(DMatrix<f64>, DVector<f64>)>;

impl QNetwork {
    /// Uniform `±1/√fan_in` initialization.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], input_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-bound..bound)),
                    b: DVector::from_fn(w[1], |_, _| rng.random_range(-bound..bound)),
                }
            })
            .collect();
        QNetwork { layers, input_scale }
    }

    pub fn zeros(sizes: &[usize], input_scale: f64) -> Self {
        QNetwork {
            layers: sizes
                .windows(2)
                .map(|w| Layer {
                    w: DMatrix::zeros(w[1], w[0]),
                    b: DVector::zeros(w[1]),
                })
                .collect(),
            input_scale,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.ncols()];
        s.extend(self.layers.iter().map(|l| l.w.nrows()));
        s
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|x| x.is_finite()))
    }

    /// Forward pass on a batch stored column-wise (`in × batch`). Returns the
    /// pre-activations and activations of every layer; the last activation
    /// is the output.
    fn forward_trace(&self, x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let mut acts = vec![x * self.input_scale];
        let mut pre = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            let a = if k == last { z.clone() } else { z.map(|v| v.max(0.0)) };
            pre.push(z);
            acts.push(a);
        }
        (pre, acts)
    }

    /// Outputs for a batch stored column-wise.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_trace(x).1.pop().unwrap()
    }

    /// Outputs for one input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, DqnError> {
        if x.len() != self.input_len() {
            return Err(DqnError::ShapeMismatch {
                expected: self.input_len(),
                got: x.len(),
            });
        }
        let col = DMatrix::from_column_slice(x.len(), 1, x);
        Ok(self.forward_batch(&col).column(0).iter().cloned().collect())
    }

    /// Mean squared error of the chosen outputs against `targets` and its
    /// gradient: `L = (1/B) Σ_j (z_j − Q(s_j, a_j))²`.
    pub fn loss_and_grad(&self, x: &DMatrix<f64>, actions: &[usize], targets: &[f64]) -> (f64, Gradients) {
        let batch = x.ncols();
        let (pre, acts) = self.forward_trace(x);
        let out = acts.last().unwrap();
        let mut delta = DMatrix::zeros(out.nrows(), batch);
        let mut loss = 0.0;
        for j in 0..batch {
            let err = out[(actions[j], j)] - targets[j];
            loss += err * err;
            delta[(actions[j], j)] = 2.0 * err / batch as f64;
        }
        loss /= batch as f64;
        let mut grads: Gradients = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let dw = &delta * acts[k].transpose();
            let db = delta.column_sum();
            if k > 0 {
                let mut back = self.layers[k].w.transpose() * &delta;
                back.zip_apply(&pre[k - 1], |g, z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
                delta = back;
            }
            grads.push((dw, db));
        }
        grads.reverse();
        (loss, grads)
    }

    /// Loss only, for finite-difference checks.
    pub fn loss(&self, x: &DMatrix<f64>, actions: &[usize], targets: &[f64]) -> f64 {
        let out = self.forward_batch(x);
        (0..x.ncols())
            .map(|j| (out[(actions[j], j)] - targets[j]).powi(2))
            .sum::<f64>()
            / x.ncols() as f64
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &QNetwork, lr: f64) -> Self {
        let zeros: Gradients = net
            .layers
            .iter()
            .map(|l| (DMatrix::zeros(l.w.nrows(), l.w.ncols()), DVector::zeros(l.b.len())))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, net: &mut QNetwork, grads: &Gradients) {
        if self.lr == 0.0 {
            return;
        }
        self.t += 1;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let update = |p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        };
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let (mw, mb) = &mut self.m[k];
            let (vw, vb) = &mut self.v[k];
            update(layer.w.as_mut_slice(), mw.as_mut_slice(), vw.as_mut_slice(), grads[k].0.as_slice());
            update(layer.b.as_mut_slice(), mb.as_mut_slice(), vb.as_mut_slice(), grads[k].1.as_slice());
        }
    }
}

/// One stored transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Stored transitions from oldest to newest.
    pub fn iter_fifo(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// `k` distinct transitions drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<&Transition> {
        sample_indices(rng, self.items.len(), k.min(self.items.len()))
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps: usize,
    pub theta: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay: f64,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub cap: u32,
    /// Copy online weights to a frozen target network every this many
    /// updates; 0 computes targets with the online network.
    pub target_sync: usize,
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 1000,
            steps: 500,
            theta: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay: 0.999,
            batch: 32,
            learning_rate: 1e-3,
            seed: 0,
            cap: crate::cost::DEFAULT_COST_CAP,
            target_sync: 0,
            hidden: vec![1024],
            replay_capacity: 20_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DqnError> {
        let fail = |m: &str| Err(DqnError::Config(m.to_string()));
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return fail("theta must lie in (0, 1)");
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return fail("epsilon_decay must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return fail("epsilon bounds must lie in [0, 1]");
        }
        if self.batch == 0 || self.batch > self.replay_capacity {
            return fail("batch must be in 1..=replay_capacity");
        }
        if self.episodes == 0 || self.steps == 0 {
            return fail("episodes and steps must be positive");
        }
        if self.cap < 2 {
            return fail("cap must be at least 2");
        }
        if self.learning_rate < 0.0 {
            return fail("learning rate must be non-negative");
        }
        Ok(())
    }
}

/// One learning-curve row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub avg_cost: f64,
    pub epsilon: f64,
}

/// Learning curve as CSV `episode,avg_cost,epsilon`.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("episode,avg_cost,epsilon\n");
    for p in curve {
        s.push_str(&format!("{},{},{}\n", p.episode, p.avg_cost, p.epsilon));
    }
    s
}

/// Index of the largest output; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in q.iter().enumerate().skip(1) {
        if x > q[best] {
            best = k;
        }
    }
    best
}

/// Greedy reduced action of a network in state `ws`.
pub fn act_greedy(net: &QNetwork, actions: &[ReducedAction], ws: &WncsState, cap: u32) -> ReducedAction {
    let q = net.forward(&encode_state(ws, cap)).expect("network sized for this state");
    actions[argmax(&q)].clone()
}

/// Episode start: registers uniform on `{1..cap/2}`, modes uniform.
pub fn random_start<R: Rng + ?Sized>(vs: &[usize], cap: u32, rng: &mut R) -> WncsState {
    let hi = (cap / 2).max(1);
    WncsState {
        per_plant: vs
            .iter()
            .map(|&v| {
                let tau = (0..=v).map(|_| rng.random_range(1..=hi)).collect();
                let eta = (0..=v).map(|_| rng.random_range(1..=hi)).collect();
                let mode = if rng.random_bool(0.5) {
                    LinkMode::Uplink
                } else {
                    LinkMode::Downlink
                };
                crate::aoi::AoIState::new(tau, eta, mode)
            })
            .collect(),
    }
}

/// Layer widths for the plants' indices, `M` frequencies and configured
/// hidden layers.
pub fn network_sizes(vs: &[usize], m: usize, cfg: &TrainConfig) -> Result<Vec<usize>, DqnError> {
    let outputs = enumerate_reduced_actions(vs.len(), m)?.len();
    let mut sizes = vec![input_dim(vs)];
    sizes.extend(&cfg.hidden);
    sizes.push(outputs);
    Ok(sizes)
}

/// Freshly initialized network, drawn from `rng` exactly as training does.
pub fn initial_network<R: Rng + ?Sized>(sizes: &[usize], cfg: &TrainConfig, rng: &mut R) -> QNetwork {
    QNetwork::new(sizes, 1.0 / cfg.cap as f64, rng)
}

/// Uniform action index with probability `eps`, otherwise the network's
/// argmax. Draws one uniform number, plus one index when exploring.
pub fn epsilon_greedy<R: Rng + ?Sized>(net: &QNetwork, x: &[f64], eps: f64, rng: &mut R) -> Result<usize, DqnError> {
    if rng.random::<f64>() < eps {
        Ok(rng.random_range(0..net.output_len()))
    } else {
        Ok(argmax(&net.forward(x)?))
    }
}

/// Trained network with its learning curve.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub net: QNetwork,
    pub curve: Vec<CurvePoint>,
}

/// Deep Q-learning with experience replay.
///
/// The environment is the AoI-level part of the closed loop, with registers
/// saturated at `cfg.cap`. The reward of a transition out of `s` is
/// `−c(s)/N`.
pub fn train(system: &WncsSystem, cfg: &TrainConfig) -> Result<TrainOutput, DqnError> {
    train_with(system, cfg, |_, _| {})
}

/// [`train`] with a callback run after every episode.
pub fn train_with(
    system: &WncsSystem,
    cfg: &TrainConfig,
    mut on_episode: impl FnMut(&CurvePoint, &QNetwork),
) -> Result<TrainOutput, DqnError> {
    cfg.validate()?;
    let n = system.n();
    let vs = system.vs();
    let actions = enumerate_reduced_actions(n, system.m())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sizes = network_sizes(&vs, system.m(), cfg)?;
    let mut net = initial_network(&sizes, cfg, &mut rng);
    let mut target = net.clone();
    let mut opt = Adam::new(&net, cfg.learning_rate);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut eps = cfg.epsilon_start;
    let mut updates = 0usize;
    let mut curve = Vec::with_capacity(cfg.episodes);
    let in_dim = sizes[0];

    for episode in 0..cfg.episodes {
        let mut ws = random_start(&vs, cfg.cap, &mut rng);
        let mut total = 0.0;
        for step in 0..cfg.steps {
            let c = system.cost(&ws);
            total += c;
            let s_enc = encode_state(&ws, cfg.cap);
            let a = epsilon_greedy(&net, &s_enc, eps, &mut rng)?;
            let full = resolve_reduced(&actions[a], &ws.modes());
            let (next, _) = aoi_step(&ws, &full, &system.net, &mut rng)?;
            let next = next.truncate(cfg.cap);
            buffer.push(Transition {
                s: s_enc,
                a,
                r: -c / n as f64,
                s_next: encode_state(&next, cfg.cap),
            });
            ws = next;
            eps = (eps * cfg.epsilon_decay).max(cfg.epsilon_end);

            if buffer.len() >= cfg.batch {
                let batch = buffer.sample(cfg.batch, &mut rng);
                let mut xs = DMatrix::zeros(in_dim, batch.len());
                let mut xn = DMatrix::zeros(in_dim, batch.len());
                for (j, t) in batch.iter().enumerate() {
                    xs.column_mut(j).copy_from_slice(&t.s);
                    xn.column_mut(j).copy_from_slice(&t.s_next);
                }
                let target_net = if cfg.target_sync > 0 { &target } else { &net };
                let qn = target_net.forward_batch(&xn);
                let targets: Vec<f64> = batch
                    .iter()
                    .enumerate()
                    .map(|(j, t)| t.r + cfg.theta * qn.column(j).max())
                    .collect();
                let acts: Vec<usize> = batch.iter().map(|t| t.a).collect();
                let (loss, grads) = net.loss_and_grad(&xs, &acts, &targets);
                if !loss.is_finite() {
                    return Err(DqnError::NonFiniteLoss { episode, step });
                }
                opt.step(&mut net, &grads);
                updates += 1;
                if cfg.target_sync > 0 && updates % cfg.target_sync == 0 {
                    target = net.clone();
                }
            }
        }
        if !net.is_finite() {
            return Err(DqnError::NonFiniteLoss {
                episode,
                step: cfg.steps,
            });
        }
        let point = CurvePoint {
            episode,
            avg_cost: total / cfg.steps as f64,
            epsilon: eps,
        };
        on_episode(&point, &net);
        curve.push(point);
    }
    Ok(TrainOutput { net, curve })
}

/// Greedy policy of a trained network.
#[derive(Debug, Clone)]
pub struct DqnPolicy {
    pub net: QNetwork,
    actions: Vec<ReducedAction>,
    cap: u32,
}

impl DqnPolicy {
    pub fn new(net: QNetwork, n: usize, m: usize, cap: u32) -> Result<Self, DqnError> {
        let actions = enumerate_reduced_actions(n, m)?;
        if actions.len() != net.output_len() {
            return Err(DqnError::VersionMismatch(format!(
                "network has {} outputs, action space has {}",
                net.output_len(),
                actions.len()
            )));
        }
        Ok(DqnPolicy { net, actions, cap })
    }

    pub fn reduced_action(&self, ws: &WncsState) -> ReducedAction {
        act_greedy(&self.net, &self.actions, ws, self.cap)
    }

    pub fn action_index(&self, ws: &WncsState) -> usize {
        argmax(&self.net.forward(&encode_state(ws, self.cap)).expect("sized input"))
    }
}

impl Policy for DqnPolicy {
    fn decide(&mut self, ws: &WncsState, _slot: u64) -> Action {
        resolve_reduced(&self.reduced_action(ws), &ws.modes())
    }

    fn name(&self) -> String {
        "dqn".into()
    }
}

const MAGIC: &[u8; 8] = b"WNCSQNET";
pub const MODEL_VERSION: u32 = 1;

/// FNV-1a hash of the canonical reduced-action list.
pub fn action_checksum(n: usize, m: usize) -> Result<u64, DqnError> {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for a in enumerate_reduced_actions(n, m)? {
        for x in a.assignment.iter().chain(std::iter::once(&u32::MAX)) {
            for byte in x.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    Ok(h)
}

/// Everything in a model file besides the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelHeader {
    pub version: u32,
    pub n: u32,
    pub m: u32,
    pub cap: u32,
    pub vs: Vec<u32>,
    pub sizes: Vec<u32>,
    pub input_scale: f64,
    pub action_checksum: u64,
    pub config_hash: String,
}

/// Stored model.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub header: ModelHeader,
    pub net: QNetwork,
}

impl SavedModel {
    pub fn new(net: QNetwork, vs: &[usize], m: usize, cap: u32, config_hash: &str) -> Result<Self, DqnError> {
        let n = vs.len();
        Ok(SavedModel {
            header: ModelHeader {
                version: MODEL_VERSION,
                n: n as u32,
                m: m as u32,
                cap,
                vs: vs.iter().map(|&v| v as u32).collect(),
                sizes: net.sizes().iter().map(|&s| s as u32).collect(),
                input_scale: net.input_scale,
                action_checksum: action_checksum(n, m)?,
                config_hash: config_hash.to_string(),
            },
            net,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for x in [h.version, h.n, h.m, h.cap] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for &v in &h.vs {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(h.sizes.len() as u32).to_le_bytes());
        for &s in &h.sizes {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.extend_from_slice(&h.input_scale.to_le_bytes());
        out.extend_from_slice(&h.action_checksum.to_le_bytes());
        out.extend_from_slice(&(h.config_hash.len() as u32).to_le_bytes());
        out.extend_from_slice(h.config_hash.as_bytes());
        for layer in &self.net.layers {
            for i in 0..layer.w.nrows() {
                for j in 0..layer.w.ncols() {
                    out.extend_from_slice(&layer.w[(i, j)].to_le_bytes());
                }
            }
            for &b in layer.b.iter() {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DqnError> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(DqnError::FormatError("bad magic".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(DqnError::VersionMismatch(format!(
                "file version {version}, reader version {MODEL_VERSION}"
            )));
        }
        let n = r.u32()?;
        let m = r.u32()?;
        let cap = r.u32()?;
        let vs = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let n_sizes = r.u32()? as usize;
        if !(2..=64).contains(&n_sizes) {
            return Err(DqnError::FormatError(format!("implausible layer count {n_sizes}")));
        }
        let sizes = (0..n_sizes).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let input_scale = r.f64()?;
        let checksum = r.u64()?;
        let hash_len = r.u32()? as usize;
        let config_hash = String::from_utf8(r.take(hash_len)?.to_vec())
            .map_err(|_| DqnError::FormatError("config hash is not UTF-8".into()))?;
        let mut layers = Vec::new();
        for w in sizes.windows(2) {
            let (inp, out) = (w[0] as usize, w[1] as usize);
            let mut wm = DMatrix::zeros(out, inp);
            for i in 0..out {
                for j in 0..inp {
                    wm[(i, j)] = r.f64()?;
                }
            }
            let b = DVector::from_iterator(out, (0..out).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?);
            layers.push(Layer { w: wm, b });
        }
        if r.pos != bytes.len() {
            return Err(DqnError::FormatError("trailing bytes".into()));
        }
        Ok(SavedModel {
            header: ModelHeader {
                version,
                n,
                m,
                cap,
                vs,
                sizes,
                input_scale,
                action_checksum: checksum,
                config_hash,
            },
            net: QNetwork { layers, input_scale },
        })
    }

    /// Refuses a model built for a different system layout.
    pub fn check_compatible(&self, vs: &[usize], m: usize) -> Result<(), DqnError> {
        let h = &self.header;
        let want: Vec<u32> = vs.iter().map(|&v| v as u32).collect();
        if h.vs != want || h.m as usize != m {
            return Err(DqnError::VersionMismatch(format!(
                "model built for v={:?}, M={}; system has v={:?}, M={}",
                h.vs, h.m, want, m
            )));
        }
        if h.sizes.first().copied() != Some(input_dim(vs) as u32) {
            return Err(DqnError::VersionMismatch("input width differs".into()));
        }
        if h.action_checksum != action_checksum(vs.len(), m)? {
            return Err(DqnError::VersionMismatch("action ordering differs".into()));
        }
        Ok(())
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, k: usize) -> Result<&[u8], DqnError> {
        if self.pos + k > self.bytes.len() {
            return Err(DqnError::FormatError("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, DqnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DqnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, DqnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_model(model: &SavedModel, path: &Path) -> Result<(), DqnError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&model.to_bytes())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SavedModel, DqnError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    SavedModel::from_bytes(&bytes)
}
