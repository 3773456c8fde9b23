use proptest::prelude::*;
use wncs_core::aoi::*;

fn st(tau: &[u32], eta: &[u32]) -> AoIState {
    AoIState::new(tau.to_vec(), eta.to_vec(), LinkMode::Uplink)
}

fn run(v: usize, script: &[(bool, bool)]) -> AoIState {
    script
        .iter()
        .fold(initial_state(v), |s, &(b, g)| advance(&s, b, g))
}

#[test]
fn initial_states() {
    assert_eq!(initial_state(2), st(&[1, 1, 1], &[1, 1, 1]));
    assert_eq!(initial_state(1), st(&[1, 1], &[1, 1]));
    for v in 1..6 {
        let s = initial_state(v);
        for i in 0..=v {
            for j in i..=v {
                assert_eq!(delta(&s, i, j).unwrap(), (j - i) as i64);
            }
        }
    }
}

#[test]
fn advance_examples() {
    let s = st(&[3, 1, 1], &[1, 1, 1]);
    assert_eq!(aoi_advance(&s, true, false).tau[0], 1);
    let s = st(&[1, 1, 1], &[4, 2, 5]);
    assert_eq!(aoi_advance(&s, false, true).eta, vec![1, 4, 2]);
    let s = st(&[2, 7, 9], &[1, 1, 1]);
    assert_eq!(aoi_advance(&s, false, false).tau, vec![3, 7, 9]);
}

#[test]
fn mode_examples() {
    use LinkMode::*;
    assert_eq!(mode_advance(Uplink, true, false), Downlink);
    assert_eq!(mode_advance(Downlink, false, true), Uplink);
    assert_eq!(mode_advance(Uplink, false, true), Uplink);
    assert_eq!(mode_advance(Downlink, true, false), Downlink);
}

#[test]
fn delta_examples() {
    let s = st(&[2, 1, 3], &[4, 2, 5]);
    for i in 0..3 {
        assert_eq!(delta(&s, i, i).unwrap(), 0);
    }
    assert_eq!(delta(&s, 0, 1).unwrap(), 3);
    assert_eq!(delta(&s, 1, 2).unwrap(), 4);
    assert_eq!(delta(&s, 0, 2).unwrap(), 7);
    assert_eq!(delta(&s, 2, 1), Err(AoiError::IndexOrder(2, 1)));
}

#[test]
fn shift_examples() {
    let s = st(&[5, 2, 4], &[3, 1, 6]);
    let t = shift_to_last_control(&s);
    assert_eq!(t, st(&[2, 2, 4], &[1, 1, 6]));
    assert_eq!(shift_to_last_control(&t), t);
}

#[test]
fn truncate_examples() {
    let s = st(&[12, 3, 5], &[1, 2, 3]);
    assert_eq!(truncate(&s, 10).tau, vec![10, 3, 5]);
    assert_eq!(truncate(&s, 12), s);
    assert_eq!(truncate(&s, 1), st(&[1, 1, 1], &[1, 1, 1]));
}

fn script_strategy(len: usize) -> impl Strategy<Value = Vec<(bool, bool)>> {
    prop::collection::vec((any::<bool>(), any::<bool>()), 0..len)
}

proptest! {
    #[test]
    fn delta_telescopes(v in 1usize..5, script in script_strategy(200)) {
        let s = run(v, &script);
        for i in 0..=v {
            for j in i..=v {
                let dij = delta(&s, i, j).unwrap();
                prop_assert!(dij >= 0);
                for l in j..=v {
                    prop_assert_eq!(dij + delta(&s, j, l).unwrap(), delta(&s, i, l).unwrap());
                }
            }
        }
    }

    #[test]
    fn registers_stay_positive(v in 1usize..5, script in script_strategy(100)) {
        let s = run(v, &script);
        prop_assert!(s.tau.iter().chain(&s.eta).all(|&x| x >= 1));
    }

    #[test]
    fn idle_slot_ages_only_the_heads(v in 1usize..5, script in script_strategy(60)) {
        let s = run(v, &script);
        let t = aoi_advance(&s, false, false);
        prop_assert_eq!(t.tau[0], s.tau[0] + 1);
        prop_assert_eq!(t.eta[0], s.eta[0] + 1);
        prop_assert_eq!(&t.tau[1..], &s.tau[1..]);
        prop_assert_eq!(&t.eta[1..], &s.eta[1..]);
        prop_assert_eq!(t.mode, s.mode);
    }

    #[test]
    fn saturation_commutes(
        v in 1usize..4,
        l in 1u32..12,
        script in script_strategy(40),
        b: bool,
        g: bool,
    ) {
        let s = run(v, &script);
        let direct = truncate(&aoi_advance(&s, b, g), l);
        let via = truncate(&aoi_advance(&truncate(&s, l), b, g), l);
        prop_assert_eq!(direct, via);
    }

    #[test]
    fn heads_count_slots_since_delivery(script in script_strategy(100)) {
        let s = run(2, &script);
        let since = |pick: fn(&(bool, bool)) -> bool| {
            script.iter().rev().position(pick).map_or(script.len() as u32 + 1, |p| p as u32 + 1)
        };
        prop_assert_eq!(s.tau[0], since(|o| o.0));
        prop_assert_eq!(s.eta[0], since(|o| o.1));
    }
}
