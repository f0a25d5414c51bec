mod common;

use proptest::prelude::*;
use railchain::consensus::ConsensusConfig;
use railchain::contract::Reservation;
use railchain::fixtures::{TestLedger, TINY3};
use railchain::ledger::apply_tx;
use railchain::routing::{filter_available, find_candidate_routes, schedule, TimedRoute};
use railchain::{ElementId, LedgerState, TimeWindow, TrainId};

fn id(s: &str) -> ElementId {
    ElementId::new(s).unwrap()
}

fn tiny_route(depart: u64) -> TimedRoute {
    let t = railchain::Topology::from_slice(TINY3.as_bytes()).unwrap();
    let r = find_candidate_routes(&t, &id("B1"), &id("B3"), 1).unwrap().remove(0);
    schedule(&r, depart, 5, 0)
}

fn state_with(res: &[(&str, &str, u64, u64)]) -> LedgerState {
    let mut s = LedgerState::default();
    for (train, el, a, b) in res {
        s.reservations.insert(Reservation {
            train: TrainId::new(*train).unwrap(),
            element: id(el),
            window: TimeWindow::new(*a, *b).unwrap(),
            required_position: None,
            fee: 0,
        });
    }
    s
}

#[test]
fn filter_examples() {
    let xs = vec![tiny_route(0)];
    assert_eq!(filter_available(xs.clone(), &LedgerState::default()), xs);
    let s = state_with(&[("T9", "B2", 4, 6)]);
    assert!(filter_available(vec![tiny_route(0)], &s).is_empty());
    assert_eq!(filter_available(vec![tiny_route(10)], &s).len(), 1);
}

#[test]
fn exhaustive_oracle_on_100_random_topologies() {
    for seed in 0..100 {
        let topo = common::random_small_topology(seed, 8);
        let ids: Vec<ElementId> = topo.elements().map(|e| e.id.clone()).collect();
        for from in &ids {
            for to in &ids {
                let fast = find_candidate_routes(&topo, from, to, usize::MAX).unwrap();
                let oracle = common::dfs_all_routes(&topo, from, to);
                assert_eq!(fast, oracle, "seed {seed} {from}->{to}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn k_prefix_of_full_enumeration(seed in 0u64..10_000, k in 1usize..5) {
        let topo = common::random_small_topology(seed, 8);
        let ids: Vec<ElementId> = topo.elements().map(|e| e.id.clone()).collect();
        let (from, to) = (&ids[0], &ids[ids.len() - 1]);
        let all = find_candidate_routes(&topo, from, to, usize::MAX).unwrap();
        let some = find_candidate_routes(&topo, from, to, k).unwrap();
        prop_assert_eq!(&all[..k.min(all.len())], &some[..]);
        for r in &some {
            let seq: Vec<&ElementId> = r.ids().collect();
            let unique: std::collections::BTreeSet<_> = seq.iter().collect();
            prop_assert_eq!(unique.len(), seq.len());
        }
    }

    #[test]
    fn filter_is_monotone(
        departs in prop::collection::vec(0u64..40, 1..6),
        res in prop::collection::vec((0usize..3, 0u64..50, 1u64..8), 0..6),
        extra in (0usize..3, 0u64..50, 1u64..8),
    ) {
        let els = ["B1", "B2", "B3"];
        let xs: Vec<TimedRoute> = departs.iter().map(|d| tiny_route(*d)).collect();
        // Non-overlapping by construction: each reservation on its own train/element slot is
        // only added if free.
        let mut s = LedgerState::default();
        for (e, a, len) in res.iter().chain(std::iter::once(&extra)) {
            let w = TimeWindow::new(*a, a + len).unwrap();
            let el = id(els[*e]);
            if s.reservations.first_conflict(&el, &w).is_none() {
                let before = filter_available(xs.clone(), &s);
                s.reservations.insert(Reservation {
                    train: TrainId::new("T9").unwrap(), element: el, window: w, required_position: None, fee: 0,
                });
                let after = filter_available(xs.clone(), &s);
                prop_assert!(after.len() <= before.len());
                prop_assert!(after.iter().all(|r| before.contains(r)));
            }
        }
    }

    #[test]
    fn available_route_books_without_rejection(depart in 0u64..30, blocker in 0u64..40) {
        let mut l = TestLedger::new(TINY3, &[("T1", 1000), ("T9", 1000)], &["N1"], ConsensusConfig::poa(5));
        let mut s = l.initial_state();
        let body = l.reserve("T9", "B2", blocker, blocker + 3, None);
        let tx = l.tx("T9", body);
        apply_tx(&l.gate(), &mut s, &tx, 0).unwrap();
        let candidates = filter_available(vec![tiny_route(depart)], &s);
        for c in candidates {
            for (step, w) in c.route.elements.iter().zip(&c.windows) {
                let body = l.reserve("T1", step.element.as_str(), w.start(), w.end(), step.required_position.as_deref());
                let tx = l.tx("T1", body);
                prop_assert_eq!(apply_tx(&l.gate(), &mut s, &tx, 0), Ok(()));
            }
        }
    }
}
