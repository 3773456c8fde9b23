use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use wncs_cli::commands::*;
use wncs_cli::{evaluate, exit, exit_code_for, load_config, PolicySpec};
use wncs_core::mdp_vi::ActionMode;

#[derive(Parser)]
#[command(name = "wncs", version, about = "Scheduling experiments for wireless networked control systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; defaults to the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Stabilizability index and best frequency partition.
    Stability {
        #[command(flatten)]
        common: Common,
    },
    /// Closed-form costs against Monte Carlo on scripted delivery patterns.
    ValidateCost {
        #[command(flatten)]
        common: Common,
        /// Patterns per plant.
        #[arg(long)]
        patterns: Option<usize>,
        /// Monte Carlo samples per pattern.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train a deep Q-network scheduler.
    Train {
        #[command(flatten)]
        common: Common,
        /// Override the number of training episodes.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate policies over independent episodes.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Policy spec, repeatable: random, roundrobin[:best|:1,-1|2,-2],
        /// greedy, persistent, dqn:<model>, vi:<table>.
        #[arg(long = "policy")]
        policies: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Episode length.
        #[arg(long = "steps")]
        t: Option<usize>,
    },
    /// Solve the truncated MDP by value iteration.
    Vi {
        #[command(flatten)]
        common: Common,
        /// AoI truncation level.
        #[arg(long, default_value_t = 4)]
        horizon: u32,
        /// `reduced` or `full` action space.
        #[arg(long, default_value = "reduced")]
        mode: ActionMode,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
}

fn write_or_print(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.cmd {
        Cmd::Stability { common } => {
            let cfg = load_config(&common.config)?;
            let rec = cmd_stability(&cfg)?;
            print!("{}", stability_text(&rec, cfg.net.m));
            let json = serde_json::to_string_pretty(&rec)?;
            match &common.out {
                Some(p) => std::fs::write(p, json + "\n")?,
                None => println!("{json}"),
            }
            Ok(if rec.stabilizable { exit::OK } else { exit::NOT_STABILIZABLE })
        }
        Cmd::ValidateCost {
            common,
            patterns,
            samples,
        } => {
            let cfg = load_config(&common.config)?;
            let seed = common.seed.unwrap_or(cfg.seed);
            let report = cmd_validate_cost(
                &cfg,
                patterns.unwrap_or(cfg.validation.patterns),
                samples.unwrap_or(cfg.validation.samples),
                seed,
            )?;
            write_or_print(common.out.as_deref(), &report.to_csv())?;
            let failed = report.rows.iter().filter(|r| !r.ok).count();
            eprintln!("{} comparisons, {failed} outside 3 standard errors", report.rows.len());
            Ok(if failed == 0 { exit::OK } else { exit::VALIDATION_FAILED })
        }
        Cmd::Train { common, episodes } => {
            let mut cfg = load_config(&common.config)?;
            if let Some(e) = episodes {
                cfg.dqn.episodes = e;
            }
            let out = common.out.unwrap_or_else(|| PathBuf::from("model.bin"));
            let art = cmd_train(&cfg, common.seed, &out, &mut |line| eprintln!("{line}"))?;
            println!("model: {}", art.model.display());
            println!("learning curve: {}", art.curve.display());
            println!("final episode avg cost: {}", art.final_avg_cost);
            Ok(exit::OK)
        }
        Cmd::Eval {
            common,
            policies,
            episodes,
            t,
        } => {
            let cfg = load_config(&common.config)?;
            let names = if policies.is_empty() {
                cfg.evaluation.policies.clone()
            } else {
                policies
            };
            let specs = names
                .iter()
                .map(|s| s.parse::<PolicySpec>().map_err(anyhow::Error::msg))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let report = evaluate(
                &cfg,
                &specs,
                episodes.unwrap_or(cfg.evaluation.episodes),
                t.unwrap_or(cfg.evaluation.t),
                common.seed.unwrap_or(cfg.seed),
            )?;
            write_or_print(common.out.as_deref(), &report.to_csv())?;
            Ok(exit::OK)
        }
        Cmd::Vi {
            common,
            horizon,
            mode,
            tol,
        } => {
            let cfg = load_config(&common.config)?;
            let s = cmd_vi(&cfg, horizon, mode, tol)?;
            eprintln!(
                "{} states, {} actions, {} sweeps, residual {:e}, V(initial) = {}, {:.2}s",
                s.states, s.actions, s.iterations, s.residual, s.initial_value, s.seconds
            );
            write_or_print(common.out.as_deref(), &s.table.to_csv())?;
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
