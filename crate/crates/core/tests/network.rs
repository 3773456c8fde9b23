use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use wncs_core::aoi::LinkMode;
use wncs_core::network::*;

/// Independent count: every length-`m` word over `{0} ∪ links` whose nonzero
/// letters are distinct.
fn brute_force(links: i32, m: usize) -> usize {
    let alphabet = links as usize + 1;
    let mut count = 0;
    for mut word in 0..alphabet.pow(m as u32) {
        let mut seen = HashSet::new();
        let mut ok = true;
        for _ in 0..m {
            let letter = word % alphabet;
            word /= alphabet;
            if letter != 0 && !seen.insert(letter) {
                ok = false;
                break;
            }
        }
        count += ok as usize;
    }
    count
}

#[test]
fn published_cardinalities() {
    assert_eq!(full_action_count(3, 3), 229);
    assert_eq!(reduced_action_count(3, 3), 34);
    assert_eq!(reduced_action_count(6, 4), 1045);
    assert_eq!(enumerate_full_actions(3, 3).unwrap().len(), 229);
    assert_eq!(enumerate_reduced_actions(3, 3).unwrap().len(), 34);
    assert_eq!(enumerate_reduced_actions(6, 4).unwrap().len(), 1045);
}

#[test]
fn small_cases() {
    let full: Vec<Vec<i32>> = enumerate_full_actions(1, 1)
        .unwrap()
        .into_iter()
        .map(|a| a.assignment)
        .collect();
    assert_eq!(full, vec![vec![0], vec![1], vec![-1]]);
    assert_eq!(enumerate_full_actions(2, 1).unwrap().len(), 5);
    assert_eq!(enumerate_reduced_actions(1, 1).unwrap().len(), 2);
}

#[test]
fn enumeration_matches_brute_force() {
    for n in 1..=6 {
        for m in 1..=4 {
            let full = enumerate_full_actions(n, m).unwrap();
            let reduced = enumerate_reduced_actions(n, m).unwrap();
            assert_eq!(full.len(), brute_force(2 * n as i32, m), "full n={n} m={m}");
            assert_eq!(reduced.len(), brute_force(n as i32, m), "reduced n={n} m={m}");
            assert_eq!(full.len() as u128, full_action_count(n, m));
            assert_eq!(reduced.len() as u128, reduced_action_count(n, m));
            let distinct: HashSet<_> = full.iter().map(|a| a.assignment.clone()).collect();
            assert_eq!(distinct.len(), full.len());
            assert!(full.iter().all(|a| a.validate(n, m).is_ok()));
            assert!(reduced.iter().all(|a| a.validate(n, m).is_ok()));
            assert!(full[0].assignment.iter().all(|&x| x == 0));
        }
    }
}

#[test]
fn capacity_guard() {
    assert!(matches!(
        enumerate_full_actions(20, 8),
        Err(NetworkError::CapacityExceeded(..))
    ));
}

#[test]
fn invalid_actions_are_rejected() {
    let net = NetworkModel::uniform(2, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for bad in [vec![1, 1], vec![3, 0], vec![0, -3]] {
        assert!(matches!(
            sample_transmissions(&Action::new(bad), &net, &mut rng),
            Err(NetworkError::InvalidAction { .. })
        ));
    }
    assert!(sample_transmissions(&Action::new(vec![1, -1]), &net, &mut rng).is_ok());
}

#[test]
fn probabilities_are_range_checked() {
    assert!(NetworkModel::new(vec![vec![1.5]], vec![vec![0.5]]).is_err());
    assert!(NetworkModel::new(vec![vec![0.5]], vec![vec![-0.1]]).is_err());
}

#[test]
fn idle_and_certain_links() {
    let net = NetworkModel::new(
        vec![vec![1.0, 0.2, 0.3], vec![0.4, 0.5, 0.6], vec![0.1, 0.1, 0.1]],
        vec![vec![0.5; 3], vec![0.5; 3], vec![0.5; 3]],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let o = sample_transmissions(&Action::idle(3), &net, &mut rng).unwrap();
        assert!(o.beta.iter().chain(&o.gamma).all(|&x| !x));
        let o = sample_transmissions(&Action::new(vec![1, 0, 0]), &net, &mut rng).unwrap();
        assert!(o.beta[0]);
        assert!(!o.beta[1] && !o.beta[2] && o.gamma.iter().all(|&x| !x));
    }
}

#[test]
fn empirical_success_rate() {
    let mut xi_c = vec![vec![0.5; 3]; 3];
    xi_c[1][2] = 0.6;
    let net = NetworkModel::new(vec![vec![0.5; 3]; 3], xi_c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let action = Action::new(vec![0, -3, 0]);
    let trials = 100_000;
    let hits = (0..trials)
        .filter(|_| sample_transmissions(&action, &net, &mut rng).unwrap().gamma[2])
        .count();
    let rate = hits as f64 / trials as f64;
    let band = 3.0 * (0.6f64 * 0.4 / trials as f64).sqrt();
    assert!((rate - 0.6).abs() <= band, "rate {rate}");
}

#[test]
fn resolve_examples() {
    use LinkMode::*;
    let r = |a: Vec<u32>, modes: &[LinkMode]| resolve_reduced(&ReducedAction::new(a), modes).assignment;
    assert_eq!(r(vec![1, 0], &[Uplink]), vec![1, 0]);
    assert_eq!(r(vec![2, 1], &[Downlink, Downlink]), vec![-2, -1]);
    assert_eq!(r(vec![0, 0, 0], &[Downlink, Uplink]), vec![0, 0, 0]);
}

proptest! {
    #[test]
    fn resolution_is_injective(n in 1usize..5, m in 1usize..4, bits in any::<u8>()) {
        let modes: Vec<LinkMode> = (0..n)
            .map(|i| if bits >> i & 1 == 1 { LinkMode::Downlink } else { LinkMode::Uplink })
            .collect();
        let actions = enumerate_reduced_actions(n, m).unwrap();
        let resolved: HashSet<Vec<i32>> = actions
            .iter()
            .map(|a| resolve_reduced(a, &modes).assignment)
            .collect();
        prop_assert_eq!(resolved.len(), actions.len());
        for a in &actions {
            prop_assert!(resolve_reduced(a, &modes).validate(n, m).is_ok());
        }
    }

    #[test]
    fn no_delivery_on_unscheduled_links(n in 1usize..5, m in 1usize..4, pick in any::<u64>(), seed in any::<u64>()) {
        let net = NetworkModel::uniform(m, &vec![0.9; n], &vec![0.9; n]).unwrap();
        let actions = enumerate_full_actions(n, m).unwrap();
        let a = &actions[(pick % actions.len() as u64) as usize];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = sample_transmissions(a, &net, &mut rng).unwrap();
        for i in 0..n {
            let plant = i as i32 + 1;
            if o.beta[i] { prop_assert!(a.assignment.contains(&plant)); }
            if o.gamma[i] { prop_assert!(a.assignment.contains(&-plant)); }
        }
    }
}
