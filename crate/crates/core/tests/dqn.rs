mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wncs_core::aoi::{AoIState, LinkMode, WncsState};
use wncs_core::dqn::*;
use wncs_core::mdp_vi::*;
use wncs_core::model::CostWeights;
use wncs_core::network::{enumerate_reduced_actions, NetworkModel};
use wncs_core::simulator::WncsSystem;

fn desk(l: u32, theta: f64) -> WncsSystem {
    let net = NetworkModel::uniform(1, &[0.8], &[0.7]).unwrap();
    WncsSystem::new(vec![scalar_plant()], vec![CostWeights::identity(1, 1)], net, l, theta).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn state_encoding() {
    let ws = WncsState::initial(&[2]);
    assert_eq!(encode_state(&ws, 20), vec![1.0; 7]);
    let ws = WncsState {
        per_plant: vec![AoIState::new(vec![30, 2, 5], vec![1, 25, 3], LinkMode::Downlink)],
    };
    assert_eq!(encode_state(&ws, 20), vec![20.0, 2.0, 5.0, 1.0, 20.0, 3.0, -1.0]);
    assert_eq!(encode_state(&WncsState::initial(&[2, 2, 2]), 20).len(), 21);
    assert_eq!(input_dim(&[2, 2, 2]), 21);
}

#[test]
fn zero_network_outputs_zero() {
    let net = QNetwork::zeros(&[5, 8, 3], 1.0);
    assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0; 3]);
    assert!(matches!(net.forward(&[1.0]), Err(DqnError::ShapeMismatch { expected: 5, got: 1 })));
}

#[test]
fn linear_network_recovers_weight_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = QNetwork::new(&[4, 3], 1.0, &mut rng);
    net.layers[0].b.fill(0.0);
    for j in 0..4 {
        let mut e = vec![0.0; 4];
        e[j] = 1.0;
        let out = net.forward(&e).unwrap();
        let col: Vec<f64> = net.layers[0].w.column(j).iter().cloned().collect();
        assert_eq!(out, col);
    }
}

#[test]
fn backprop_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let h = 1e-6;
    for instance in 0..20 {
        let depth = 1 + instance % 3;
        let mut sizes = vec![rng.random_range(2..6)];
        for _ in 0..depth {
            sizes.push(rng.random_range(2..8));
        }
        sizes.push(rng.random_range(2..5));
        let outputs = *sizes.last().unwrap();
        let mut net = QNetwork::new(&sizes, rng.random_range(0.1..1.0), &mut rng);
        let batch = rng.random_range(1..6);
        let x = DMatrix::from_fn(sizes[0], batch, |_, _| rng.random_range(-3.0..3.0));
        let actions: Vec<usize> = (0..batch).map(|_| rng.random_range(0..outputs)).collect();
        let targets: Vec<f64> = (0..batch).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, grads) = net.loss_and_grad(&x, &actions, &targets);
        let (mut num, mut ana) = (Vec::new(), Vec::new());
        for k in 0..net.layers.len() {
            for idx in 0..net.layers[k].w.len() {
                let orig = net.layers[k].w.as_slice()[idx];
                net.layers[k].w.as_mut_slice()[idx] = orig + h;
                let up = net.loss(&x, &actions, &targets);
                net.layers[k].w.as_mut_slice()[idx] = orig - h;
                let down = net.loss(&x, &actions, &targets);
                net.layers[k].w.as_mut_slice()[idx] = orig;
                num.push((up - down) / (2.0 * h));
                ana.push(grads[k].0.as_slice()[idx]);
            }
            for idx in 0..net.layers[k].b.len() {
                let orig = net.layers[k].b[idx];
                net.layers[k].b[idx] = orig + h;
                let up = net.loss(&x, &actions, &targets);
                net.layers[k].b[idx] = orig - h;
                let down = net.loss(&x, &actions, &targets);
                net.layers[k].b[idx] = orig;
                num.push((up - down) / (2.0 * h));
                ana.push(grads[k].1[idx]);
            }
        }
        let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(ana.iter().map(|a| a * a).sum::<f64>().sqrt());
        assert!(diff / norm.max(1e-12) <= 1e-5, "instance {instance}: relative error {}", diff / norm);
    }
}

#[test]
fn greedy_choice_tie_breaks_low() {
    let mut net = QNetwork::zeros(&[7, 2], 1.0);
    let actions = enumerate_reduced_actions(1, 1).unwrap();
    let ws = WncsState::initial(&[2]);
    net.layers[0].b = DVector::from_vec(vec![0.5, 0.5]);
    assert_eq!(act_greedy(&net, &actions, &ws, 20), actions[0]);
    net.layers[0].b = DVector::from_vec(vec![0.5, 3.0]);
    for _ in 0..5 {
        assert_eq!(act_greedy(&net, &actions, &ws, 20), actions[1]);
    }
}

#[test]
fn full_exploration_is_uniform() {
    let net = QNetwork::zeros(&[21, 4, 34], 1.0);
    let x = vec![1.0; 21];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 10_000;
    let mut counts = vec![0usize; 34];
    for _ in 0..draws {
        counts[epsilon_greedy(&net, &x, 1.0, &mut rng).unwrap()] += 1;
    }
    let expect = draws as f64 / 34.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    // 99.9% quantile of χ² with 33 degrees of freedom.
    assert!(chi2 < 63.87, "chi2 = {chi2}");
}

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        episodes: 4,
        steps: 40,
        batch: 8,
        hidden: vec![16],
        replay_capacity: 100,
        cap: 6,
        seed,
        ..Default::default()
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let system = desk(6, 0.9);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..tiny_config(3)
    };
    let sizes = network_sizes(&system.vs(), system.m(), &cfg).unwrap();
    let before = initial_network(&sizes, &cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let out = train(&system, &cfg).unwrap();
    assert_eq!(out.net, before);
    let changed = train(&system, &tiny_config(3)).unwrap();
    assert_ne!(changed.net, before);
}

#[test]
fn training_is_seed_deterministic() {
    let system = desk(6, 0.9);
    let a = train(&system, &tiny_config(11)).unwrap();
    let b = train(&system, &tiny_config(11)).unwrap();
    assert_eq!(curve_csv(&a.curve), curve_csv(&b.curve));
    assert_eq!(a.net, b.net);
    let c = train(&system, &tiny_config(12)).unwrap();
    assert_ne!(curve_csv(&a.curve), curve_csv(&c.curve));
}

#[test]
fn config_is_validated() {
    let bad = [
        TrainConfig { theta: 1.0, ..Default::default() },
        TrainConfig { epsilon_decay: 0.0, ..Default::default() },
        TrainConfig { batch: 50, replay_capacity: 10, ..Default::default() },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(DqnError::Config(_))));
    }
    assert!(TrainConfig::default().validate().is_ok());
}

#[test]
fn replay_is_fifo() {
    let k = 10;
    let extra = 4;
    let mut buf = ReplayBuffer::new(k);
    for i in 0..k + extra {
        buf.push(Transition {
            s: vec![i as f64],
            a: 0,
            r: 0.0,
            s_next: vec![],
        });
        assert!(buf.len() <= k);
    }
    let kept: Vec<f64> = buf.iter_fifo().map(|t| t.s[0]).collect();
    assert_eq!(kept, (extra..k + extra).map(|i| i as f64).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut drawn: Vec<f64> = buf.sample(k, &mut rng).iter().map(|t| t.s[0]).collect();
    drawn.sort_by(f64::total_cmp);
    assert_eq!(drawn, kept);
}

#[test]
fn model_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = QNetwork::new(&[21, 64, 34], 0.05, &mut rng);
    let model = SavedModel::new(net, &[2, 2, 2], 3, 20, "cafe").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.bin");
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, model);
    for _ in 0..20 {
        let x: Vec<f64> = (0..21).map(|_| rng.random_range(1.0..20.0)).collect();
        let (a, b) = (model.net.forward(&x).unwrap(), back.net.forward(&x).unwrap());
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert!(back.check_compatible(&[2, 2, 2], 3).is_ok());
    assert!(matches!(back.check_compatible(&[2, 2], 3), Err(DqnError::VersionMismatch(_))));
    assert!(matches!(back.check_compatible(&[2, 2, 2], 2), Err(DqnError::VersionMismatch(_))));

    let bytes = model.to_bytes();
    assert!(matches!(SavedModel::from_bytes(&bytes[..bytes.len() - 3]), Err(DqnError::FormatError(_))));
    assert!(matches!(SavedModel::from_bytes(&bytes[..20]), Err(DqnError::FormatError(_))));
    let mut wrong = bytes.clone();
    wrong[8] = 99;
    assert!(matches!(SavedModel::from_bytes(&wrong), Err(DqnError::VersionMismatch(_))));
}

#[test]
fn policy_rejects_wrong_output_width() {
    let net = QNetwork::zeros(&[21, 4, 10], 1.0);
    assert!(DqnPolicy::new(net, 3, 3, 20).is_err());
}

/// Share of reachable states where the network's greedy action is optimal
/// for the truncated MDP (ties count as matches).
fn agreement(system: &WncsSystem, l: u32, policy: &DqnPolicy) -> f64 {
    let mdp = build_truncated_mdp(system, l, ActionMode::Reduced).unwrap();
    let sol = value_iteration(&mdp, 1e-10);
    let start = mdp.codec.encode(&system.initial_state());
    let states = reachable_states(&mdp, start);
    let matched = states
        .iter()
        .filter(|&&s| {
            let q = q_values(&mdp, &sol.values, s);
            let best = q.iter().cloned().fold(f64::INFINITY, f64::min);
            let a = policy.action_index(&mdp.codec.decode(s));
            rel_err(q[a], best) <= 1e-9
        })
        .count();
    matched as f64 / states.len() as f64
}

#[test]
fn small_agent_learns_the_optimal_schedule() {
    let l = 2;
    let system = desk(l, 0.9);
    let cfg = TrainConfig {
        episodes: 200,
        steps: 50,
        hidden: vec![32],
        cap: l,
        theta: 0.9,
        epsilon_decay: 0.995,
        seed: 1,
        ..Default::default()
    };
    let out = train(&system, &cfg).unwrap();
    let policy = DqnPolicy::new(out.net, 1, 1, l).unwrap();
    let share = agreement(&system, l, &policy);
    assert!(share >= 0.9, "agreement {share}");
}
