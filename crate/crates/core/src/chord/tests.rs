use std::net::Ipv4Addr;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;
use crate::ident::{Locator, NodeId};

fn nid(v: u128, bits: u8) -> NodeId {
    NodeId::new(v, bits)
}

fn addr(i: u32) -> Locator {
    Locator::new(Ipv4Addr::new(10, 1, (i / 250) as u8, (i % 250 + 1) as u8), 1)
}

/// Builds a stabilized ring out of explicit ids.
fn ring(ids: &[u128], bits: u8, succ_len: usize) -> Overlay {
    let mut overlay = Overlay::new(bits, succ_len);
    overlay.add_first(nid(ids[0], bits), addr(0)).unwrap();
    for (i, v) in ids.iter().enumerate().skip(1) {
        overlay
            .join(nid(*v, bits), addr(i as u32), nid(ids[0], bits))
            .unwrap();
    }
    overlay.stabilize_to_convergence(ids.len() * bits as usize + 4);
    overlay
}

/// Walking-definition oracle for circular interval membership: step clockwise
/// from `a` to `b`, honoring endpoint closures.
fn interval_oracle(x: u128, a: u128, b: u128, bits: u8, incl_l: bool, incl_r: bool) -> bool {
    let size = 1u128 << bits;
    if x == a && incl_l {
        return true;
    }
    if x == b && incl_r {
        return true;
    }
    // Interior walk; a == b wraps the whole circle.
    let mut cur = (a + 1) % size;
    while cur != b {
        if cur == x && cur != a {
            return true;
        }
        if cur == a {
            break;
        }
        cur = (cur + 1) % size;
    }
    false
}

#[test]
fn interval_wraparound_membership() {
    let bits = 5;
    assert!(in_interval(nid(2, bits), nid(30, bits), nid(8, bits), false, true));
    assert!(!in_interval(nid(30, bits), nid(30, bits), nid(8, bits), false, true));
}

#[test]
fn interval_matches_walking_oracle_exhaustively() {
    let bits = 4;
    for x in 0..16u128 {
        for a in 0..16u128 {
            for b in 0..16u128 {
                for (il, ir) in [(false, false), (false, true), (true, false), (true, true)] {
                    let got = in_interval(nid(x, bits), nid(a, bits), nid(b, bits), il, ir);
                    let want = interval_oracle(x, a, b, bits, il, ir);
                    assert_eq!(got, want, "x={x} a={a} b={b} incl=({il},{ir})");
                }
            }
        }
    }
}

#[test]
fn find_successor_next_clockwise_and_wraparound() {
    let overlay = ring(&[2, 8, 12, 16, 28], 5, 2);
    assert_eq!(
        overlay.find_successor(nid(2, 5), nid(9, 5)).unwrap().owner,
        nid(12, 5)
    );
    assert_eq!(
        overlay.find_successor(nid(8, 5), nid(30, 5)).unwrap().owner,
        nid(2, 5)
    );
}

#[test]
fn find_successor_agrees_with_oracle_on_random_rings() {
    let bits = 8;
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..40 {
        let n = rng.gen_range(1..=64);
        let mut ids: Vec<u128> = Vec::new();
        while ids.len() < n {
            let v = rng.gen_range(0..256u128);
            if !ids.contains(&v) {
                ids.push(v);
            }
        }
        let overlay = ring(&ids, bits, 4);
        let origin = nid(ids[0], bits);
        for key in 0..256u128 {
            let key = nid(key, bits);
            let got = overlay.find_successor(origin, key).unwrap().owner;
            assert_eq!(got, overlay.oracle_successor(key).unwrap(), "key {key}");
        }
    }
}

#[test]
fn closest_preceding_finger_hand_built() {
    // Perfect fingers on {0, 8, 16, 24} at m=5: from node 0 toward 20 the
    // highest finger strictly inside (0, 20) is 16.
    let overlay = ring(&[0, 8, 16, 24], 5, 2);
    assert_eq!(
        overlay.closest_preceding_finger(nid(0, 5), nid(20, 5)),
        nid(16, 5)
    );
}

#[test]
fn closest_preceding_finger_self_fallback() {
    let overlay = ring(&[0, 8, 16, 24], 5, 2);
    // Nothing lies strictly between 0 and 1.
    assert_eq!(
        overlay.closest_preceding_finger(nid(0, 5), nid(1, 5)),
        nid(0, 5)
    );
}

#[test]
fn closest_preceding_finger_matches_table_scan() {
    let bits = 4;
    let overlay = ring(&[1, 4, 9, 11, 14], bits, 2);
    for id in [1u128, 4, 9, 11, 14] {
        let id = nid(id, bits);
        for key in 0..16u128 {
            let key = nid(key, bits);
            let got = overlay.closest_preceding_finger(id, key);
            // Brute force over the node's own table.
            let node = overlay.node(id).unwrap();
            let want = node
                .fingers
                .iter()
                .rev()
                .map(|f| f.node)
                .find(|n| in_interval(*n, id, key, false, false))
                .unwrap_or(id);
            assert_eq!(got, want);
        }
    }
}

#[test]
fn first_node_is_its_own_successor() {
    let mut overlay = Overlay::new(5, 2);
    overlay.add_first(nid(7, 5), addr(0)).unwrap();
    assert_eq!(overlay.node(nid(7, 5)).unwrap().successor(), nid(7, 5));
}

#[test]
fn join_hands_over_keys_up_to_new_id() {
    // N24 alone holds keys 20 and 3; when N18 joins, responsibility for
    // (pred(18), 18] moves, so key 3 lands at N18 and key 20 stays.
    let bits = 5;
    let mut overlay = Overlay::new(bits, 2);
    overlay.add_first(nid(24, bits), addr(0)).unwrap();
    overlay.put_local(nid(24, bits), nid(20, bits), b"a".to_vec(), 0);
    overlay.put_local(nid(24, bits), nid(3, bits), b"b".to_vec(), 0);
    overlay.join(nid(18, bits), addr(1), nid(24, bits)).unwrap();

    assert_eq!(overlay.node(nid(18, bits)).unwrap().store.get(nid(3, bits)), vec![b"b".to_vec()]);
    assert!(overlay.node(nid(18, bits)).unwrap().store.get(nid(20, bits)).is_empty());
    assert_eq!(overlay.node(nid(24, bits)).unwrap().store.get(nid(20, bits)), vec![b"a".to_vec()]);
}

#[test]
fn join_fails_on_dead_bootstrap() {
    let bits = 5;
    let mut overlay = Overlay::new(bits, 2);
    overlay.add_first(nid(2, bits), addr(0)).unwrap();
    overlay.depart(nid(2, bits), false).unwrap();
    assert!(matches!(
        overlay.join(nid(9, bits), addr(1), nid(2, bits)),
        Err(ChordError::JoinFailed(_))
    ));
}

#[test]
fn hundred_sequential_joins_converge_to_oracle() {
    let bits = 16;
    let mut rng = StdRng::seed_from_u64(11);
    let mut overlay = Overlay::new(bits, 4);
    let mut ids = vec![rng.gen_range(0..(1u128 << bits))];
    overlay.add_first(nid(ids[0], bits), addr(0)).unwrap();
    for i in 1..100u32 {
        loop {
            let v = rng.gen_range(0..(1u128 << bits));
            if !ids.contains(&v) {
                ids.push(v);
                overlay.join(nid(v, bits), addr(i), nid(ids[0], bits)).unwrap();
                break;
            }
        }
    }
    overlay.stabilize_to_convergence(100 * bits as usize);
    for id in overlay.live_ids() {
        let next = overlay.oracle_successor(id.add(1)).unwrap();
        assert_eq!(overlay.node(id).unwrap().successor(), next);
    }
}

#[test]
fn graceful_departure_hands_keys_to_successor() {
    let bits = 5;
    let mut overlay = ring(&[4, 12, 20], bits, 2);
    overlay.put(nid(4, bits), nid(10, bits), b"v".to_vec(), 0).unwrap();
    assert_eq!(overlay.node(nid(12, bits)).unwrap().store.get(nid(10, bits)), vec![b"v".to_vec()]);

    overlay.depart(nid(12, bits), true).unwrap();
    overlay.stabilize_to_convergence(32);
    let (values, _) = overlay.get(nid(4, bits), nid(10, bits)).unwrap();
    assert_eq!(values, vec![b"v".to_vec()]);
    assert_eq!(overlay.find_successor(nid(4, bits), nid(10, bits)).unwrap().owner, nid(20, bits));
}

#[test]
fn ungraceful_failure_routes_around_after_stabilization() {
    let bits = 8;
    let ids: Vec<u128> = (0..16).map(|i| i * 16 + 3).collect();
    let mut overlay = ring(&ids, bits, 4);
    overlay.depart(nid(ids[5], bits), false).unwrap();
    overlay.stabilize_to_convergence(16 * bits as usize);
    let origin = nid(ids[0], bits);
    for key in 0..256u128 {
        let key = nid(key, bits);
        let got = overlay.find_successor(origin, key).unwrap().owner;
        assert_eq!(got, overlay.oracle_successor(key).unwrap());
    }
}

#[test]
fn consecutive_successor_failures_surface_as_lookup_errors() {
    // Kill a node's entire successor list before any repair: lookups that
    // must pass through the gap report a routing failure instead of hiding it.
    let bits = 5;
    let ids = [0u128, 2, 4, 6, 16, 24];
    let overlay = ring(&ids, bits, 2);
    let mut broken = overlay.clone();
    broken.depart(nid(2, bits), false).unwrap();
    broken.depart(nid(4, bits), false).unwrap();
    broken.depart(nid(6, bits), false).unwrap();
    let result = broken.find_successor(nid(0, bits), nid(5, bits));
    assert!(matches!(result, Err(LookupError::DeadEnd(_)) | Err(LookupError::HopCapExceeded(_)) | Ok(_)));
    // After stabilization the survivors answer again.
    broken.stabilize_to_convergence(6 * bits as usize);
    assert_eq!(
        broken.find_successor(nid(0, bits), nid(5, bits)).unwrap().owner,
        broken.oracle_successor(nid(5, bits)).unwrap()
    );
}

#[test]
fn stabilize_round_is_idempotent_on_stable_ring() {
    let mut overlay = ring(&[2, 8, 12, 16, 28], 5, 2);
    let before = format!("{overlay:?}");
    overlay.stabilize_sweep();
    assert_eq!(before, format!("{overlay:?}"));
}

#[test]
fn predecessor_adopts_new_node_within_one_round() {
    let bits = 5;
    let mut overlay = Overlay::new(bits, 2);
    overlay.add_first(nid(8, bits), addr(0)).unwrap();
    overlay.join(nid(20, bits), addr(1), nid(8, bits)).unwrap();
    // N8 still believes its successor is itself until it stabilizes once.
    overlay.stabilize_round(nid(8, bits));
    assert_eq!(overlay.node(nid(8, bits)).unwrap().successor(), nid(20, bits));
}

#[test]
fn churn_burst_recovers_within_round_budget() {
    let bits = 8;
    let mut rng = StdRng::seed_from_u64(23);
    let mut ids: Vec<u128> = Vec::new();
    while ids.len() < 64 {
        let v = rng.gen_range(0..256u128);
        if !ids.contains(&v) {
            ids.push(v);
        }
    }
    let mut overlay = ring(&ids, bits, 4);
    // Burst: 12 ungraceful failures at once.
    for i in 0..12 {
        overlay.depart(nid(ids[i * 5], bits), false).unwrap();
    }
    let sweeps = overlay.stabilize_to_convergence(64 * bits as usize);
    assert!(sweeps <= 64 * bits as usize);
    for id in overlay.live_ids() {
        let want = overlay.oracle_successor(id.add(1)).unwrap();
        assert_eq!(overlay.node(id).unwrap().successor(), want, "node {id}");
    }
}

#[test]
fn put_get_on_singleton_ring() {
    let bits = 5;
    let mut overlay = Overlay::new(bits, 2);
    overlay.add_first(nid(3, bits), addr(0)).unwrap();
    overlay.put(nid(3, bits), nid(9, bits), b"only".to_vec(), 1).unwrap();
    let (values, hops) = overlay.get(nid(3, bits), nid(9, bits)).unwrap();
    assert_eq!(values, vec![b"only".to_vec()]);
    assert_eq!(hops, 0);
}

#[test]
fn multiple_values_for_a_single_key() {
    let bits = 5;
    let mut overlay = ring(&[2, 8, 12], bits, 2);
    overlay.put(nid(2, bits), nid(10, bits), b"one".to_vec(), 1).unwrap();
    overlay.put(nid(8, bits), nid(10, bits), b"two".to_vec(), 2).unwrap();
    let (values, _) = overlay.get(nid(12, bits), nid(10, bits)).unwrap();
    assert_eq!(values.len(), 2);
    assert!(values.contains(&b"one".to_vec()));
    assert!(values.contains(&b"two".to_vec()));
}

#[test]
fn duplicate_put_is_idempotent() {
    let bits = 5;
    let mut overlay = ring(&[2, 8, 12], bits, 2);
    overlay.put(nid(2, bits), nid(10, bits), b"v".to_vec(), 1).unwrap();
    overlay.put(nid(2, bits), nid(10, bits), b"v".to_vec(), 5).unwrap();
    let (values, _) = overlay.get(nid(2, bits), nid(10, bits)).unwrap();
    assert_eq!(values, vec![b"v".to_vec()]);
}

#[test]
fn get_of_absent_key_is_empty() {
    let bits = 5;
    let overlay = ring(&[2, 8, 12], bits, 2);
    let (values, _) = overlay.get(nid(2, bits), nid(31, bits)).unwrap();
    assert!(values.is_empty());
}

#[test]
fn holder_failure_without_replication_loses_the_key() {
    let bits = 5;
    let mut overlay = ring(&[2, 8, 12, 20], bits, 2);
    overlay.put(nid(2, bits), nid(10, bits), b"v".to_vec(), 1).unwrap();
    overlay.depart(nid(12, bits), false).unwrap();
    overlay.stabilize_to_convergence(4 * bits as usize);
    let (values, _) = overlay.get(nid(2, bits), nid(10, bits)).unwrap();
    assert!(values.is_empty(), "no replication: the key is gone");
}

#[test]
fn value_set_invariant_under_put_permutation() {
    let bits = 8;
    let values: Vec<Vec<u8>> = (0..5u8).map(|i| vec![i; 3]).collect();
    let mut forward = ring(&[10, 60, 200], bits, 2);
    let mut backward = forward.clone();
    for v in &values {
        forward.put(nid(10, bits), nid(100, bits), v.clone(), 1).unwrap();
    }
    for v in values.iter().rev() {
        backward.put(nid(60, bits), nid(100, bits), v.clone(), 1).unwrap();
    }
    assert_eq!(
        forward.get(nid(200, bits), nid(100, bits)).unwrap().0,
        backward.get(nid(200, bits), nid(100, bits)).unwrap().0
    );
}

#[test]
fn perturbed_fingers_detour_but_stay_correct() {
    let bits = 8;
    let ids: Vec<u128> = (0..32).map(|i| i * 8 + 1).collect();
    let mut overlay = ring(&ids, bits, 4);
    let mut rng = StdRng::seed_from_u64(5);
    overlay.perturb_fingers(0.10, &mut rng);
    let origin = nid(ids[0], bits);
    for key in (0..256u128).step_by(3) {
        let key = nid(key, bits);
        let report = overlay.find_successor(origin, key).unwrap();
        assert_eq!(report.owner, overlay.oracle_successor(key).unwrap());
    }
}
