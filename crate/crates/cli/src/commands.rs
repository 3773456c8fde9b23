//! Subcommand bodies. Each returns a report; `main` handles printing and
//! exit codes.

use crate::config::ExperimentConfig;
use anyhow::{bail, Context};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::HashSet;
use std::fmt::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;
use wncs_core::aoi::{aoi_advance, initial_state, tail_advance, AoIState};
use wncs_core::cost::{check_script, cost_u, cost_u_with_tail, cost_x, mc_oracle};
use wncs_core::dqn::{curve_csv, save_model, train_with, SavedModel};
use wncs_core::mdp_vi::{bellman_residual, build_truncated_mdp, value_iteration, ActionMode, ViTable};
use wncs_core::stability::{kappa, necessary_condition, StabilityReport};

// ---------------------------------------------------------------- stability

#[derive(Debug, Clone, Serialize)]
pub struct StabilityRecord {
    pub kappa: f64,
    /// `(plant, frequency)` pairs, 0-based.
    pub partition: Vec<(usize, usize)>,
    pub stabilizable: bool,
    pub boundary: bool,
    pub unstable_set: Vec<usize>,
    pub spectral_radii: Vec<f64>,
    pub necessary_condition: bool,
    pub config_hash: String,
}

pub fn cmd_stability(cfg: &ExperimentConfig) -> anyhow::Result<StabilityRecord> {
    let report: StabilityReport = kappa(&cfg.plants, &cfg.net)?;
    Ok(StabilityRecord {
        kappa: report.kappa,
        partition: report.best_partition.clone(),
        stabilizable: report.stabilizable,
        boundary: report.boundary,
        unstable_set: report.unstable_set.clone(),
        spectral_radii: wncs_core::stability::radii(&cfg.plants),
        necessary_condition: necessary_condition(&cfg.plants, &cfg.net),
        config_hash: cfg.hash.clone(),
    })
}

/// Human-readable stability summary with 1-based plant and frequency labels.
pub fn stability_text(r: &StabilityRecord, m: usize) -> String {
    let mut out = String::new();
    let radii: Vec<String> = r.spectral_radii.iter().map(|x| format!("{x:.6}")).collect();
    let _ = writeln!(out, "spectral radii: {}", radii.join(", "));
    if r.unstable_set.is_empty() {
        let _ = writeln!(out, "no unstable plants, κ=0");
        return out;
    }
    let unstable: Vec<String> = r.unstable_set.iter().map(|i| (i + 1).to_string()).collect();
    let _ = writeln!(out, "unstable plants: {{{}}}", unstable.join(","));
    let groups: Vec<String> = (0..m)
        .map(|f| {
            let members: Vec<String> = r
                .partition
                .iter()
                .filter(|p| p.1 == f)
                .map(|p| (p.0 + 1).to_string())
                .collect();
            format!("f{}: {{{}}}", f + 1, members.join(","))
        })
        .collect();
    let _ = writeln!(out, "best partition: {}", groups.join("  "));
    let _ = writeln!(out, "κ={}", r.kappa);
    let verdict = if r.stabilizable {
        "stabilizable"
    } else if r.boundary {
        "not stabilizable (κ=1, boundary)"
    } else {
        "not stabilizable"
    };
    let _ = writeln!(out, "{verdict}");
    if !r.necessary_condition {
        let _ = writeln!(out, "necessary condition violated");
    }
    out
}

// ------------------------------------------------------------ validate-cost

#[derive(Debug, Clone, Serialize)]
pub struct CostCheckRow {
    pub plant: usize,
    pub pattern: usize,
    pub script: String,
    pub tau: Vec<u32>,
    pub eta: Vec<u32>,
    pub tail: u32,
    pub jx_closed: f64,
    pub jx_mc: f64,
    pub jx_se: f64,
    pub ju_closed: f64,
    pub ju_imputed: f64,
    pub ju_mc: f64,
    pub ju_se: f64,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct CostValidation {
    pub rows: Vec<CostCheckRow>,
}

impl CostValidation {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.ok)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("plant,pattern,script,tau,eta,tail,jx_closed,jx_mc,jx_se,ju_closed,ju_imputed,ju_mc,ju_se,ok\n");
        let list = |v: &[u32]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.plant + 1,
                r.pattern,
                r.script,
                list(&r.tau),
                list(&r.eta),
                r.tail,
                r.jx_closed,
                r.jx_mc,
                r.jx_se,
                r.ju_closed,
                r.ju_imputed,
                r.ju_mc,
                r.ju_se,
                r.ok
            );
        }
        out
    }
}

pub fn script_string(script: &[(bool, bool)]) -> String {
    script
        .iter()
        .map(|&(b, g)| format!("{}{}", b as u8, g as u8))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Registers and true tail reached by a script from the initial state.
pub fn realize(script: &[(bool, bool)], v: usize) -> (AoIState, u32) {
    let mut s = initial_state(v);
    let mut tail = 1;
    for &(b, g) in script {
        tail = tail_advance(tail, &s, g);
        s = aoi_advance(&s, b, g);
    }
    (s, tail)
}

/// Distinct random delivery scripts whose final registers stay at or below
/// `max_age` and whose history is long enough for the closed forms.
pub fn generate_patterns(v: usize, count: usize, max_age: u32, seed: u64) -> Vec<Vec<(bool, bool)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..100_000 {
        if out.len() == count {
            break;
        }
        let len = rng.random_range(2 * (v + 1)..=4 * (v + 2));
        let script: Vec<(bool, bool)> = (0..len).map(|_| (rng.random_bool(0.6), rng.random_bool(0.6))).collect();
        if check_script(&script, len, v).is_err() {
            continue;
        }
        let (s, tail) = realize(&script, v);
        if s.tau.iter().chain(&s.eta).any(|&x| x > max_age) {
            continue;
        }
        if seen.insert((s.tau.clone(), s.eta.clone(), tail)) {
            out.push(script);
        }
    }
    out
}

/// Compares closed-form costs with Monte Carlo estimates; a row passes when
/// both differences stay within three standard errors.
pub fn cmd_validate_cost(
    cfg: &ExperimentConfig,
    patterns: usize,
    samples: usize,
    seed: u64,
) -> anyhow::Result<CostValidation> {
    let mut rows = Vec::new();
    for (i, (plant, w)) in cfg.plants.iter().zip(&cfg.weights).enumerate() {
        let scripts = if cfg.validation.scripts.is_empty() {
            let s = generate_patterns(plant.v, patterns, cfg.validation.max_age, seed.wrapping_add(i as u64));
            if s.len() < patterns {
                bail!("plant {}: only {} distinct patterns with entries ≤ {}", i + 1, s.len(), cfg.validation.max_age);
            }
            s
        } else {
            cfg.validation.scripts.clone()
        };
        for (k, script) in scripts.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::eval::mix(seed ^ ((i as u64) << 32 | k as u64)));
            let est = mc_oracle(plant, w, script, script.len(), samples, &mut rng)
                .with_context(|| format!("plant {} pattern {k}", i + 1))?;
            let jx = cost_x(plant, w, &est.state);
            let ju = cost_u_with_tail(plant, w, &est.state, est.tail);
            let within = |closed: f64, mc: f64, se: f64| (closed - mc).abs() <= 3.0 * se + 1e-9 * (1.0 + closed.abs());
            rows.push(CostCheckRow {
                plant: i,
                pattern: k,
                script: script_string(script),
                tau: est.state.tau.clone(),
                eta: est.state.eta.clone(),
                tail: est.tail,
                jx_closed: jx,
                jx_mc: est.mean_x,
                jx_se: est.stderr_x,
                ju_closed: ju,
                ju_imputed: cost_u(plant, w, &est.state),
                ju_mc: est.mean_u,
                ju_se: est.stderr_u,
                ok: within(jx, est.mean_x, est.stderr_x) && within(ju, est.mean_u, est.stderr_u),
            });
        }
    }
    Ok(CostValidation { rows })
}

// -------------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub model: PathBuf,
    pub curve: PathBuf,
    pub final_avg_cost: f64,
}

/// Learning-curve path next to a model file: `model.bin` → `model.curve.csv`.
pub fn curve_path(model: &Path) -> PathBuf {
    model.with_extension("curve.csv")
}

pub fn cmd_train(
    cfg: &ExperimentConfig,
    seed: Option<u64>,
    out: &Path,
    progress: &mut dyn FnMut(&str),
) -> anyhow::Result<TrainArtifacts> {
    let mut tc = cfg.dqn.clone();
    if let Some(s) = seed {
        tc.seed = s;
    }
    if tc.theta <= 0.0 {
        bail!("training needs theta in (0, 1)");
    }
    let system = cfg.system();
    let start = Instant::now();
    let every = (tc.episodes / 20).max(1);
    let result = train_with(&system, &tc, |p, _| {
        if (p.episode + 1) % every == 0 {
            progress(&format!(
                "episode {}/{}  avg cost {:.3}  ε {:.3}  {:.0}s",
                p.episode + 1,
                tc.episodes,
                p.avg_cost,
                p.epsilon,
                start.elapsed().as_secs_f64()
            ));
        }
    })?;
    let model = SavedModel::new(result.net, &system.vs(), system.m(), tc.cap, &cfg.hash)?;
    save_model(&model, out).with_context(|| format!("writing {}", out.display()))?;
    let curve = curve_path(out);
    std::fs::write(&curve, curve_csv(&result.curve)).with_context(|| format!("writing {}", curve.display()))?;
    Ok(TrainArtifacts {
        model: out.to_path_buf(),
        curve,
        final_avg_cost: result.curve.last().map_or(f64::NAN, |p| p.avg_cost),
    })
}

// ----------------------------------------------------------------------- vi

#[derive(Debug, Clone)]
pub struct ViSummary {
    pub states: usize,
    pub actions: usize,
    pub iterations: usize,
    pub residual: f64,
    pub initial_value: f64,
    pub seconds: f64,
    pub table: ViTable,
}

pub fn cmd_vi(cfg: &ExperimentConfig, l: u32, mode: ActionMode, tol: f64) -> anyhow::Result<ViSummary> {
    let start = Instant::now();
    let system = cfg.system();
    let mdp = build_truncated_mdp(&system, l, mode)?;
    let sol = value_iteration(&mdp, tol);
    let init = mdp.codec.encode(&system.initial_state());
    Ok(ViSummary {
        states: mdp.n_states(),
        actions: mdp.n_actions(),
        iterations: sol.iterations,
        residual: bellman_residual(&mdp, &sol.values),
        initial_value: sol.values[init],
        seconds: start.elapsed().as_secs_f64(),
        table: ViTable::from_solution(&mdp, &sol, &cfg.hash),
    })
}
