mod common;

use common::*;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wncs_core::aoi::{AoIState, LinkMode};
use wncs_core::model::{CostWeights, PlantModel};
use wncs_core::network::{Action, NetworkModel};
use wncs_core::policies::{greedy_policy, random_policy, Policy};
use wncs_core::simulator::*;

fn paper_system(xi: f64) -> WncsSystem {
    let net = NetworkModel::uniform(3, &[xi; 3], &[xi; 3]).unwrap();
    WncsSystem::new(paper_plants(), vec![CostWeights::identity(2, 1); 3], net, 20, 0.95).unwrap()
}

fn single(plant: PlantModel, xi: f64) -> WncsSystem {
    let (n, m) = (plant.n(), plant.m());
    let net = NetworkModel::uniform(1, &[xi], &[xi]).unwrap();
    WncsSystem::new(vec![plant], vec![CostWeights::identity(n, m)], net, 20, 0.95).unwrap()
}

fn noiseless(a: Mat) -> PlantModel {
    let i2 = Mat::identity(2, 2);
    let z = Mat::zeros(2, 2);
    PlantModel::with_filter(a, b_col(), i2.clone(), z.clone(), z.clone(), i2, z).unwrap()
}

fn record(system: &WncsSystem, policy: &mut dyn Policy, t: usize, seed: u64) -> Vec<SlotRecord> {
    let mut streams = Streams::from_seed(seed);
    run_episode(system, policy, t, 0.95, &mut streams, true)
        .unwrap()
        .trajectory
        .unwrap()
}

#[test]
fn estimate_replicas_agree() {
    let system = paper_system(0.8);
    let traj = record(&system, &mut greedy_policy(&system.net), 10_000, 1);
    for r in &traj {
        for i in 0..3 {
            assert!((&r.xhat[i] - &r.xhat_sensor[i]).amax() <= 1e-12);
        }
    }
}

#[test]
fn applied_input_follows_latest_command() {
    let system = paper_system(0.7);
    let traj = record(&system, &mut random_policy(3, 3, 4), 10_000, 2);
    for i in 0..3 {
        let p = system.plant(i);
        let mut last: Option<usize> = None;
        for (k, r) in traj.iter().enumerate() {
            if r.outcome.gamma[i] {
                last = Some(k);
            }
            let expected = match last {
                Some(d) if k - d < p.v => &p.ktilde * p.phi.pow((k - d) as u32) * &traj[d].xhat[i],
                _ => DVector::zeros(1),
            };
            let scale = expected.amax().max(1.0);
            assert!((&r.u[i] - &expected).amax() <= 1e-12 * scale, "plant {i} slot {k}");
            if r.aoi.per_plant[i].eta[0] as usize > p.v && !r.outcome.gamma[i] {
                assert_eq!(r.u[i][0], 0.0);
            }
        }
    }
}

#[test]
fn remote_error_recursion() {
    let system = paper_system(0.75);
    let traj = record(&system, &mut greedy_policy(&system.net), 2_000, 3);
    for i in 0..3 {
        let p = system.plant(i);
        for k in 0..traj.len() - 1 {
            let (r, next) = (&traj[k], &traj[k + 1]);
            let w = &next.x[i] - &p.a * &r.x[i] - &p.b * &r.u[i];
            let e_next = &next.x[i] - &next.xhat[i];
            let base = if r.outcome.beta[i] {
                &r.x[i] - &r.xs[i]
            } else {
                &r.x[i] - &r.xhat[i]
            };
            let scale = r.x[i].amax().max(1.0);
            assert!((e_next - (&p.a * base + w)).amax() <= 1e-9 * scale);
        }
    }
}

#[test]
fn sensor_error_is_stationary() {
    let system = paper_system(0.8);
    let mut snap = SimSnapshot::zero(&system);
    let mut streams = Streams::from_seed(4);
    let mut policy = greedy_policy(&system.net);
    let burn = 200;
    let slots = 100_000;
    let mut acc = vec![Mat::zeros(2, 2); 3];
    for k in 0..burn + slots {
        let action = policy.decide(&snap.aoi(), k as u64);
        step(&mut snap, &action, &system, &mut streams).unwrap();
        if k >= burn {
            for (i, lp) in snap.plants.iter().enumerate() {
                let e = &lp.x - &lp.xs;
                acc[i] += &e * e.transpose();
            }
        }
    }
    for (i, sum) in acc.iter().enumerate() {
        let emp = sum / slots as f64;
        let ps = &system.plant(i).ps_hat;
        let rel = (&emp - ps).norm() / ps.norm();
        assert!(rel <= 0.05, "plant {i}: relative error {rel}");
    }
}

#[test]
fn noise_free_state_is_cleared_by_one_delivery() {
    let plant = noiseless(a2());
    let system = single(plant, 1.0);
    let mut snap = SimSnapshot::zero(&system);
    let x0 = DVector::from_vec(vec![1.5, -2.0]);
    let lp = &mut snap.plants[0];
    lp.x = x0.clone();
    lp.xs = x0.clone();
    lp.xhat = x0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let outcomes = [(false, true), (false, false)];
    for (b, g) in outcomes {
        let o = wncs_core::network::TransmissionOutcome {
            beta: vec![b],
            gamma: vec![g],
        };
        apply_outcome(&mut snap, &o, &system, &mut rng);
    }
    assert!(snap.plants[0].x.amax() < 1e-12, "x = {}", snap.plants[0].x);
}

#[test]
fn idle_stable_plant_decays() {
    let stable = mat(&[&[0.5, 0.2], &[0.1, 0.3]]);
    let system = single(noiseless(stable), 0.9);
    let mut snap = SimSnapshot::zero(&system);
    snap.plants[0].x = DVector::from_vec(vec![4.0, -3.0]);
    let mut streams = Streams::from_seed(5);
    let mut norms = Vec::new();
    for _ in 0..60 {
        step(&mut snap, &Action::idle(1), &system, &mut streams).unwrap();
        norms.push(snap.plants[0].x.norm());
    }
    assert!(norms.windows(2).all(|w| w[1] <= w[0]));
    assert!(norms[59] < 1e-12);

    let mut idle = wncs_core::policies::FnPolicy::new("idle", |_: &wncs_core::aoi::WncsState| Action::idle(1));
    let r = run_episode(&system, &mut idle, 100, 0.95, &mut Streams::from_seed(6), false).unwrap();
    assert!(r.empirical_avg_cost.is_finite());
    assert_eq!(r.quadratic_avg, 0.0);
}

#[test]
fn all_success_estimate_update() {
    let system = single(paper_plant(a1()), 1.0);
    let script = vec![vec![(true, true)]; 50];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let traj = scripted_run(&system, &script, 50, &mut rng);
    let p = system.plant(0);
    for k in 0..49 {
        let want = &p.a * &traj[k].xs[0] + &p.b * &traj[k].u[0];
        assert!((&traj[k + 1].xhat[0] - want).amax() < 1e-12);
        let s = &traj[k].aoi.per_plant[0];
        assert!(s.tau.iter().chain(&s.eta).all(|&x| x == 1));
    }
}

#[test]
fn alternating_deliveries_follow_hand_recursion() {
    let system = single(scalar_plant(), 1.0);
    let script: Vec<Vec<(bool, bool)>> = (0..10).map(|k| vec![(k % 2 == 0, k % 2 == 1)]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let traj = scripted_run(&system, &script, 10, &mut rng);
    let st = |t: [u32; 2], e: [u32; 2]| AoIState::new(t.to_vec(), e.to_vec(), LinkMode::Uplink);
    let mut expected = vec![st([1, 1], [1, 1]), st([1, 1], [2, 1])];
    for k in 2..10 {
        expected.push(if k % 2 == 0 { st([2, 1], [1, 2]) } else { st([1, 1], [2, 2]) });
    }
    for (k, r) in traj.iter().enumerate() {
        let got = &r.aoi.per_plant[0];
        assert_eq!((&got.tau, &got.eta), (&expected[k].tau, &expected[k].eta), "slot {k}");
    }
}

#[test]
fn replaying_sampled_outcomes_reproduces_the_run() {
    let system = paper_system(0.8);
    let seed = 9;
    let sampled = record(&system, &mut random_policy(3, 3, 1), 300, seed);
    let script: Vec<Vec<(bool, bool)>> = sampled
        .iter()
        .map(|r| r.outcome.beta.iter().zip(&r.outcome.gamma).map(|(&b, &g)| (b, g)).collect())
        .collect();
    let mut noise = Streams::from_seed(seed).noise;
    let replay = scripted_run(&system, &script, 300, &mut noise);
    for (a, b) in sampled.iter().zip(&replay) {
        assert_eq!(a.x, b.x);
        assert_eq!(a.xhat, b.xhat);
        assert_eq!(a.u, b.u);
        assert_eq!(a.aoi, b.aoi);
    }
}

#[test]
fn same_seed_same_episode() {
    let system = paper_system(0.8);
    let a = record(&system, &mut greedy_policy(&system.net), 200, 10);
    let b = record(&system, &mut greedy_policy(&system.net), 200, 10);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.csv_row(), y.csv_row());
        assert_eq!(x.x, y.x);
    }
    assert_eq!(
        SlotRecord::CSV_HEADER.split(',').count(),
        a[0].csv_row().split(',').count()
    );
}

#[test]
fn physical_and_analytic_costs_agree_on_average() {
    let system = paper_system(0.85);
    let mut policy = greedy_policy(&system.net);
    let (mut analytic, mut physical) = (0.0, 0.0);
    let episodes = 40;
    for e in 0..episodes {
        let r = run_episode(&system, &mut policy, 1_000, 0.95, &mut Streams::from_seed(100 + e), false).unwrap();
        analytic += r.empirical_avg_cost / episodes as f64;
        physical += r.quadratic_avg / episodes as f64;
    }
    let rel = (analytic - physical).abs() / analytic;
    assert!(rel < 0.1, "analytic {analytic} physical {physical}");
}
