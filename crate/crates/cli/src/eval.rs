//! Policy evaluation over independent episodes.
//!
//! Episode `e` of a run with master seed `s` uses
//! `episode_seed(s, e) = mix(s + (e + 1) * 0x9E3779B97F4A7C15)` where `mix` is
//! the SplitMix64 finalizer. All policies see the same episode seeds, so
//! their channel and noise draws coincide wherever their actions do.

use crate::config::ExperimentConfig;
use anyhow::{bail, Context};
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use wncs_core::dqn::{load_model, DqnPolicy};
use wncs_core::mdp_vi::{ViPolicy, ViTable};
use wncs_core::policies::*;
use wncs_core::simulator::{run_episode, Streams, WncsSystem};
use wncs_core::stability::kappa;

/// Salt separating round-robin pilot episodes from evaluation episodes.
const PILOT_SALT: u64 = 0x5eed_0fb0;
pub const PILOT_EPISODES: usize = 20;

pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn episode_seed(master: u64, episode: usize) -> u64 {
    mix(master.wrapping_add((episode as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Random,
    /// Fixed grouping; `None` takes the first balanced grouping.
    RoundRobin(Option<Vec<Vec<i32>>>),
    /// Best balanced grouping by a pilot run.
    RoundRobinBest,
    Greedy,
    Persistent,
    Dqn(PathBuf),
    Vi(PathBuf),
}

impl std::str::FromStr for PolicySpec {
    type Err = String;

    /// `random`, `roundrobin`, `roundrobin:best`, `roundrobin:1,-1|2,-2`,
    /// `greedy`, `persistent`, `dqn:<model>`, `vi:<table>`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        match (head, arg) {
            ("random", None) => Ok(PolicySpec::Random),
            ("greedy", None) => Ok(PolicySpec::Greedy),
            ("persistent", None) => Ok(PolicySpec::Persistent),
            ("roundrobin", None) => Ok(PolicySpec::RoundRobin(None)),
            ("roundrobin", Some("best")) => Ok(PolicySpec::RoundRobinBest),
            ("roundrobin", Some(g)) => {
                let groups = g
                    .split('|')
                    .map(|grp| {
                        grp.split(',')
                            .filter(|t| !t.trim().is_empty())
                            .map(|t| t.trim().parse::<i32>().map_err(|_| format!("bad link `{t}`")))
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(PolicySpec::RoundRobin(Some(groups)))
            }
            ("dqn", Some(p)) if !p.is_empty() => Ok(PolicySpec::Dqn(PathBuf::from(p))),
            ("vi", Some(p)) if !p.is_empty() => Ok(PolicySpec::Vi(PathBuf::from(p))),
            _ => Err(format!("unknown policy `{s}`")),
        }
    }
}

/// Raised when a model or table was produced for a different experiment.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Mismatch(pub String);

/// Everything needed to build a fresh policy for each episode.
#[derive(Clone)]
enum Prototype {
    Random,
    RoundRobin(Vec<Vec<i32>>),
    Greedy,
    Persistent(Vec<Option<usize>>),
    Dqn(DqnPolicy),
    Vi(ViTable),
}

impl Prototype {
    fn instantiate(&self, system: &WncsSystem, seed: u64) -> Box<dyn Policy> {
        match self {
            Prototype::Random => Box::new(random_policy(system.n(), system.m(), mix(seed))),
            Prototype::RoundRobin(g) => Box::new(round_robin_policy(g.clone())),
            Prototype::Greedy => Box::new(greedy_policy(&system.net)),
            Prototype::Persistent(p) => Box::new(persistent_policy(p, &system.vs(), system.m())),
            Prototype::Dqn(d) => Box::new(d.clone()),
            Prototype::Vi(t) => Box::new(ViPolicy::new(t.clone())),
        }
    }
}

/// Mean costs of one policy over the evaluation episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyResult {
    pub policy: String,
    /// Mean over episodes of `1/T Σ c(s_k)`.
    pub mean: f64,
    pub stderr: f64,
    /// Mean over episodes of `Σ θᵏ c(s_k)`, the criterion value iteration
    /// optimizes.
    pub discounted_mean: f64,
    pub discounted_stderr: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub results: Vec<PolicyResult>,
    pub seed: u64,
    pub t: usize,
    pub cap: u32,
    pub config_hash: String,
}

impl EvaluationReport {
    pub const CSV_HEADER: &'static str =
        "policy,mean,stderr,discounted_mean,discounted_stderr,episodes,T,seed,cap,config_hash";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.results {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.policy,
                r.mean,
                r.stderr,
                r.discounted_mean,
                r.discounted_stderr,
                r.episodes,
                self.t,
                self.seed,
                self.cap,
                self.config_hash
            ));
        }
        out
    }

    pub fn get(&self, policy: &str) -> Option<&PolicyResult> {
        self.results.iter().find(|r| r.policy == policy)
    }
}

pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-episode `(average, discounted)` costs, in episode order.
fn episode_costs(
    system: &WncsSystem,
    proto: &Prototype,
    seeds: &[u64],
    t: usize,
) -> anyhow::Result<Vec<(f64, f64)>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut policy = proto.instantiate(system, seed);
            let mut streams = Streams::from_seed(seed);
            let r = run_episode(system, policy.as_mut(), t, system.theta, &mut streams, false)?;
            Ok((r.empirical_avg_cost, r.discounted_cost))
        })
        .collect()
}

/// Frequency per plant for the persistent policy: unstable plants follow the
/// minimizing stability partition, stable plants join the least loaded
/// frequency.
pub fn persistent_partition(system: &WncsSystem) -> anyhow::Result<Vec<Option<usize>>> {
    let plants: Vec<_> = (0..system.n()).map(|i| system.plant(i).clone()).collect();
    let report = kappa(&plants, &system.net)?;
    let mut part = report.frequency_of(system.n());
    let mut load = vec![0usize; system.m()];
    for f in part.iter().flatten() {
        load[*f] += 1;
    }
    for slot in part.iter_mut().filter(|p| p.is_none()) {
        let f = (0..load.len()).min_by_key(|&f| (load[f], f)).unwrap();
        load[f] += 1;
        *slot = Some(f);
    }
    Ok(part)
}

/// Best balanced round-robin grouping by mean cost over pilot episodes.
pub fn best_round_robin(system: &WncsSystem, seed: u64, t: usize) -> anyhow::Result<(Vec<Vec<i32>>, f64)> {
    let seeds: Vec<u64> = (0..PILOT_EPISODES).map(|e| episode_seed(seed ^ PILOT_SALT, e)).collect();
    let mut best: Option<(Vec<Vec<i32>>, f64)> = None;
    for g in balanced_groupings(system.n(), system.m(), 10_000) {
        let costs = episode_costs(system, &Prototype::RoundRobin(g.clone()), &seeds, t)?;
        let (mean, _) = mean_stderr(&costs.iter().map(|c| c.0).collect::<Vec<_>>());
        if best.as_ref().is_none_or(|b| mean < b.1) {
            best = Some((g, mean));
        }
    }
    best.context("no balanced grouping exists")
}

fn prototype(spec: &PolicySpec, cfg: &ExperimentConfig, system: &WncsSystem, seed: u64, t: usize) -> anyhow::Result<(String, Prototype)> {
    Ok(match spec {
        PolicySpec::Random => ("random".into(), Prototype::Random),
        PolicySpec::Greedy => ("greedy".into(), Prototype::Greedy),
        PolicySpec::RoundRobin(g) => {
            let groups = match g {
                Some(g) => g.clone(),
                None => balanced_groupings(system.n(), system.m(), 1)
                    .pop()
                    .context("no balanced grouping exists")?,
            };
            check_grouping(&groups, system)?;
            ("roundrobin".into(), Prototype::RoundRobin(groups))
        }
        PolicySpec::RoundRobinBest => {
            let (g, _) = best_round_robin(system, seed, t)?;
            ("roundrobin:best".into(), Prototype::RoundRobin(g))
        }
        PolicySpec::Persistent => ("persistent".into(), Prototype::Persistent(persistent_partition(system)?)),
        PolicySpec::Dqn(path) => {
            let model = load_model(path).with_context(|| format!("loading {}", path.display()))?;
            model
                .check_compatible(&system.vs(), system.m())
                .map_err(|e| Mismatch(format!("{}: {e}", path.display())))?;
            check_hash(&model.header.config_hash, &cfg.hash, path)?;
            let policy = DqnPolicy::new(model.net, system.n(), system.m(), model.header.cap)?;
            (format!("dqn:{}", path.display()), Prototype::Dqn(policy))
        }
        PolicySpec::Vi(path) => {
            let table = ViTable::load(path).with_context(|| format!("loading {}", path.display()))?;
            if table.vs != system.vs() || table.actions.first().map(|a| a.assignment.len()) != Some(system.m()) {
                return Err(Mismatch(format!("{}: table built for a different plant set", path.display())).into());
            }
            check_hash(&table.config_hash, &cfg.hash, path)?;
            (format!("vi:{}", path.display()), Prototype::Vi(table))
        }
    })
}

fn check_grouping(groups: &[Vec<i32>], system: &WncsSystem) -> anyhow::Result<()> {
    if groups.len() != system.m() {
        bail!("round-robin grouping has {} groups for {} frequencies", groups.len(), system.m());
    }
    let n = system.n() as i32;
    let mut seen = std::collections::HashSet::new();
    for &l in groups.iter().flatten() {
        if l == 0 || l.abs() > n || !seen.insert(l) {
            bail!("round-robin grouping has an invalid or repeated link {l}");
        }
    }
    Ok(())
}

fn check_hash(found: &str, expected: &str, path: &Path) -> Result<(), Mismatch> {
    if found != expected {
        return Err(Mismatch(format!(
            "{} was produced for config {found}, current config is {expected}",
            path.display()
        )));
    }
    Ok(())
}

/// Evaluates each policy on the same `episodes` episode seeds.
pub fn evaluate(
    cfg: &ExperimentConfig,
    specs: &[PolicySpec],
    episodes: usize,
    t: usize,
    seed: u64,
) -> anyhow::Result<EvaluationReport> {
    let system = cfg.system();
    let seeds: Vec<u64> = (0..episodes).map(|e| episode_seed(seed, e)).collect();
    let mut results = Vec::with_capacity(specs.len());
    for spec in specs {
        let (name, proto) = prototype(spec, cfg, &system, seed, t)?;
        let costs = episode_costs(&system, &proto, &seeds, t)?;
        let (mean, stderr) = mean_stderr(&costs.iter().map(|c| c.0).collect::<Vec<_>>());
        let (discounted_mean, discounted_stderr) = mean_stderr(&costs.iter().map(|c| c.1).collect::<Vec<_>>());
        results.push(PolicyResult {
            policy: name,
            mean,
            stderr,
            discounted_mean,
            discounted_stderr,
            episodes,
        });
    }
    Ok(EvaluationReport {
        results,
        seed,
        t,
        cap: cfg.aoi_cap,
        config_hash: cfg.hash.clone(),
    })
}
