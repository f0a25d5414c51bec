use super::*;
use crate::consensus::ConsensusConfig;
use crate::fixtures::{TestLedger, SWITCHY, TINY3};
use crate::ledger::apply_tx;
use crate::ledger::tx::TxBody;

fn tiny() -> TestLedger {
    TestLedger::new(
        TINY3,
        &[("T1", 100), ("T2", 100), ("T5", 5)],
        &["N1"],
        ConsensusConfig::poa(5),
    )
}

fn switchy() -> TestLedger {
    TestLedger::new(SWITCHY, &[("T1", 100), ("T2", 100)], &["N1"], ConsensusConfig::poa(5))
}

/// Validates and applies, panicking on rejection.
fn commit(l: &TestLedger, state: &mut LedgerState, tx: &Transaction, now: Tick) {
    apply_tx(&l.gate(), state, tx, now).unwrap_or_else(|f| panic!("{} rejected: {f}", tx.kind()));
}

fn verdict(l: &TestLedger, state: &LedgerState, tx: &Transaction, now: Tick) -> Result<(), RejectReason> {
    l.gate().validate(state, tx, now)
}

#[test]
fn reserve_on_empty_state_accepted() {
    let mut l = tiny();
    let s = l.initial_state();
    let body = l.reserve("T1", "B2", 10, 20, None);
    let tx = l.tx("T1", body);
    assert_eq!(verdict(&l, &s, &tx, 0), Ok(()));
}

#[test]
fn overlapping_reserve_conflicts_abutting_does_not() {
    let mut l = tiny();
    let mut s = l.initial_state();
    let body = l.reserve("T1", "B2", 10, 20, None);
    let t1 = l.tx("T1", body);
    commit(&l, &mut s, &t1, 0);
    let body = l.reserve("T2", "B2", 15, 25, None);
    let overlap = l.tx("T2", body);
    assert_eq!(verdict(&l, &s, &overlap, 0), Err(RejectReason::Conflict));
    let body = l.reserve("T2", "B2", 20, 30, None);
    let abut = l.tx("T2", body);
    assert_eq!(verdict(&l, &s, &abut, 0), Ok(()));
}

#[test]
fn same_train_rebooking_conflicts() {
    let mut l = tiny();
    let mut s = l.initial_state();
    let body = l.reserve("T1", "B2", 10, 20, None);
    let t = l.tx("T1", body.clone());
    commit(&l, &mut s, &t, 0);
    let again = l.tx("T1", body);
    assert_eq!(verdict(&l, &s, &again, 0), Err(RejectReason::Conflict));
}

#[test]
fn insufficient_funds_and_bad_fee() {
    let mut l = tiny();
    let s = l.initial_state();
    let body = l.reserve("T5", "B2", 10, 20, None);
    let poor = l.tx("T5", body);
    assert_eq!(verdict(&l, &s, &poor, 0), Err(RejectReason::InsufficientFunds));
    let mut body = l.reserve("T1", "B2", 10, 20, None);
    if let TxBody::Reserve(p) = &mut body {
        p.fee = 9;
    }
    let cheap = l.tx("T1", body);
    assert_eq!(verdict(&l, &s, &cheap, 0), Err(RejectReason::BadFee));
}

#[test]
fn reserve_rejections_by_ownership_and_time() {
    let mut l = tiny();
    let s = l.initial_state();
    let body = l.reserve("T2", "B2", 10, 20, None);
    let stolen = l.tx("T1", body);
    assert_eq!(verdict(&l, &s, &stolen, 0), Err(RejectReason::NotOwner));
    let body = l.reserve("T1", "B2", 10, 20, None);
    let late = l.tx("T1", body);
    assert_eq!(verdict(&l, &s, &late, 20), Err(RejectReason::Expired));
    assert_eq!(verdict(&l, &s, &late, 19), Ok(()));
    let mut body = l.reserve("T1", "B2", 10, 20, None);
    if let TxBody::Reserve(p) = &mut body {
        p.element = ElementId::new("B9").unwrap();
    }
    let unknown = l.tx("T1", body);
    assert_eq!(verdict(&l, &s, &unknown, 0), Err(RejectReason::UnknownElement));
}

#[test]
fn apply_reserve_moves_fee_to_owner() {
    let mut l = tiny();
    let mut s = l.initial_state();
    let owner = WalletAddress::new(crate::fixtures::INFRA_WALLET).unwrap();
    let body = l.reserve("T1", "B2", 10, 20, None);
    let tx = l.tx("T1", body);
    commit(&l, &mut s, &tx, 0);
    assert_eq!(s.balance(&l.address("T1")), 90);
    assert_eq!(s.balance(&owner), 10);
    assert_eq!(s.reservations.len(), 1);
}

#[test]
fn rollback_before_start_refunds_in_full() {
    let mut l = tiny();
    let mut s = l.initial_state();
    let before = s.clone();
    let body = l.reserve("T1", "B2", 10, 20, None);
    let r = l.tx("T1", body);
    commit(&l, &mut s, &r, 0);
    let body = l.release("T1", "B2", 10, 20, true);
    let rb = l.tx("T1", body);
    commit(&l, &mut s, &rb, 5);
    assert_eq!(s.balances, before.balances);
    assert!(s.reservations.is_empty());
}

#[test]
fn release_after_start_or_without_rollback_keeps_fee() {
    for (rollback, now) in [(true, 10), (false, 5)] {
        let mut l = tiny();
        let mut s = l.initial_state();
        let body = l.reserve("T1", "B2", 10, 20, None);
        let r = l.tx("T1", body);
        commit(&l, &mut s, &r, 0);
        let body = l.release("T1", "B2", 10, 20, rollback);
        let rel = l.tx("T1", body);
        commit(&l, &mut s, &rel, now);
        assert_eq!(s.balance(&l.address("T1")), 90);
        assert!(s.reservations.is_empty());
    }
}

#[test]
fn release_rules() {
    let mut l = tiny();
    let mut s = l.initial_state();
    let body = l.release("T1", "B2", 10, 20, false);
    let none = l.tx("T1", body);
    assert_eq!(verdict(&l, &s, &none, 0), Err(RejectReason::NoSuchReservation));
    let body = l.reserve("T1", "B2", 10, 20, None);
    let r = l.tx("T1", body);
    commit(&l, &mut s, &r, 0);
    let body = l.release("T1", "B2", 10, 20, false);
    let foreign = l.tx("T2", body.clone());
    assert_eq!(verdict(&l, &s, &foreign, 0), Err(RejectReason::NotOwner));
    let body2 = l.occupancy("B2", Some("T2"));
    let occ = l.tx("T2", body2);
    commit(&l, &mut s, &occ, 0);
    let own = l.tx("T1", body);
    assert_eq!(verdict(&l, &s, &own, 0), Err(RejectReason::Occupied));
}

#[test]
fn transfer_rules() {
    let mut l = tiny();
    let mut s = l.initial_state();
    let to = l.address("T2");
    let zero = l.tx(
        "T1",
        TxBody::Transfer(crate::ledger::tx::TransferPayload {
            to: to.clone(),
            amount: 0,
        }),
    );
    assert_eq!(verdict(&l, &s, &zero, 0), Err(RejectReason::BadFee));
    let big = l.tx(
        "T1",
        TxBody::Transfer(crate::ledger::tx::TransferPayload {
            to: to.clone(),
            amount: 101,
        }),
    );
    assert_eq!(verdict(&l, &s, &big, 0), Err(RejectReason::InsufficientFunds));
    let ok = l.tx(
        "T1",
        TxBody::Transfer(crate::ledger::tx::TransferPayload { to, amount: 40 }),
    );
    commit(&l, &mut s, &ok, 0);
    assert_eq!(s.balance(&l.address("T1")), 60);
    assert_eq!(s.balance(&l.address("T2")), 140);
}

#[test]
fn occupancy_set_then_clear() {
    let mut l = tiny();
    let mut s = l.initial_state();
    let b2 = ElementId::new("B2").unwrap();
    let body = l.occupancy("B2", Some("T1"));
    let set = l.tx("T1", body);
    commit(&l, &mut s, &set, 0);
    assert_eq!(s.occupancy_is.get(&b2), Some(&TrainId::new("T1").unwrap()));
    let body = l.occupancy("B2", Some("T2"));
    let other = l.tx("T2", body);
    assert_eq!(verdict(&l, &s, &other, 0), Err(RejectReason::Occupied));
    let body = l.occupancy("B2", None);
    let clear_foreign = l.tx("T2", body.clone());
    assert_eq!(verdict(&l, &s, &clear_foreign, 0), Err(RejectReason::NotOwner));
    let clear = l.tx("T1", body);
    commit(&l, &mut s, &clear, 0);
    assert_eq!(s.occupancy_is.get(&b2), None);
}

#[test]
fn element_reporter_mode_requires_owner_wallet() {
    let rules = ContractRules {
        occupancy_reporter: OccupancyReporter::Element,
        implicit_release_grace: 0,
    };
    let mut l = TestLedger::with_rules(TINY3, &[("T1", 100)], &["N1"], ConsensusConfig::poa(5), rules);
    let mut s = l.initial_state();
    let body = l.occupancy("B2", Some("T1"));
    let by_train = l.tx("T1", body.clone());
    assert_eq!(verdict(&l, &s, &by_train, 0), Err(RejectReason::NotOwner));
    let by_owner = l.tx("infra", body);
    commit(&l, &mut s, &by_owner, 0);
    assert_eq!(s.occupancy_is.len(), 1);
}

#[test]
fn switch_command_requires_matching_position() {
    let mut l = switchy();
    let mut s = l.initial_state();
    let body = l.reserve("T2", "S1", 10, 20, Some("left"));
    let r = l.tx("T2", body);
    commit(&l, &mut s, &r, 0);
    let cmd = |pos: &str| {
        TxBody::SwitchCommand(crate::ledger::tx::SwitchCommandPayload {
            train: TrainId::new("T2").unwrap(),
            element: ElementId::new("S1").unwrap(),
            position: pos.into(),
        })
    };
    let wrong = l.tx("T2", cmd("right"));
    assert_eq!(verdict(&l, &s, &wrong, 12), Err(RejectReason::WrongPosition));
    let right = l.tx("T2", cmd("left"));
    assert_eq!(verdict(&l, &s, &right, 12), Ok(()));
    // Issued one element ahead, before the window opens.
    assert_eq!(verdict(&l, &s, &right, 5), Ok(()));
    assert_eq!(verdict(&l, &s, &right, 20), Err(RejectReason::Expired));
}

#[test]
fn switch_command_blocked_by_earlier_foreign_reservation() {
    let mut l = switchy();
    let mut s = l.initial_state();
    let body = l.reserve("T1", "S1", 5, 10, Some("right"));
    let a = l.tx("T1", body);
    commit(&l, &mut s, &a, 0);
    let body = l.reserve("T2", "S1", 10, 20, Some("left"));
    let b = l.tx("T2", body);
    commit(&l, &mut s, &b, 0);
    let cmd = l.tx(
        "T2",
        TxBody::SwitchCommand(crate::ledger::tx::SwitchCommandPayload {
            train: TrainId::new("T2").unwrap(),
            element: ElementId::new("S1").unwrap(),
            position: "left".into(),
        }),
    );
    assert_eq!(verdict(&l, &s, &cmd, 6), Err(RejectReason::NotOwner));
}

#[test]
fn switch_ack_mirrors_command() {
    let mut l = switchy();
    let mut s = l.initial_state();
    let s1 = ElementId::new("S1").unwrap();
    let body = l.reserve("T1", "S1", 10, 20, Some("right"));
    let r = l.tx("T1", body);
    commit(&l, &mut s, &r, 0);
    let ack = |pos: &str| {
        TxBody::SwitchAck(crate::ledger::tx::SwitchAckPayload {
            element: ElementId::new("S1").unwrap(),
            position: pos.into(),
        })
    };
    let early = l.tx("infra", ack("right"));
    assert_eq!(verdict(&l, &s, &early, 8), Err(RejectReason::WrongPosition));
    let cmd = l.tx(
        "T1",
        TxBody::SwitchCommand(crate::ledger::tx::SwitchCommandPayload {
            train: TrainId::new("T1").unwrap(),
            element: s1.clone(),
            position: "right".into(),
        }),
    );
    commit(&l, &mut s, &cmd, 8);
    assert_eq!(s.switch_should_be[&s1], "right");
    assert_eq!(s.switch_is.get(&s1), None);
    let forged = l.tx("T1", ack("right"));
    assert_eq!(verdict(&l, &s, &forged, 9), Err(RejectReason::NotOwner));
    let ok = l.tx("infra", ack("right"));
    commit(&l, &mut s, &ok, 9);
    assert_eq!(s.switch_is[&s1], "right");
}

#[test]
fn reserve_position_must_match_element_kind() {
    let mut l = switchy();
    let s = l.initial_state();
    let body = l.reserve("T1", "S1", 10, 20, None);
    let missing = l.tx("T1", body);
    assert_eq!(verdict(&l, &s, &missing, 0), Err(RejectReason::WrongPosition));
    let body = l.reserve("T1", "B2", 10, 20, Some("left"));
    let extra = l.tx("T1", body);
    assert_eq!(verdict(&l, &s, &extra, 0), Err(RejectReason::WrongPosition));
    let body = l.reserve("T1", "S1", 10, 20, Some("up"));
    let bogus = l.tx("T1", body);
    assert_eq!(verdict(&l, &s, &bogus, 0), Err(RejectReason::WrongPosition));
}

#[test]
fn expire_reservations_examples() {
    let mut l = tiny();
    let mut s = l.initial_state();
    let body = l.reserve("T1", "B2", 10, 20, None);
    let r = l.tx("T1", body);
    commit(&l, &mut s, &r, 0);
    assert!(l.gate().expire_reservations(&s, 19).is_empty());
    let due = l.gate().expire_reservations(&s, 20);
    assert_eq!(due.len(), 1);
    assert!(due[0].implicit && !due[0].rollback);
    let body = l.occupancy("B2", Some("T1"));
    let occ = l.tx("T1", body);
    commit(&l, &mut s, &occ, 15);
    assert!(l.gate().expire_reservations(&s, 20).is_empty());
}

#[test]
fn implicit_release_signed_by_node_only_after_expiry() {
    let mut l = tiny();
    let mut s = l.initial_state();
    let body = l.reserve("T1", "B2", 10, 20, None);
    let r = l.tx("T1", body);
    commit(&l, &mut s, &r, 0);
    let mut due = l.gate().expire_reservations(&s, 20);
    let body = TxBody::Release(due.remove(0));
    let by_train = l.tx("T1", body.clone());
    assert_eq!(verdict(&l, &s, &by_train, 20), Err(RejectReason::NotOwner));
    let by_node = l.tx("N1", body);
    assert_eq!(verdict(&l, &s, &by_node, 19), Err(RejectReason::Expired));
    commit(&l, &mut s, &by_node, 20);
    assert!(s.reservations.is_empty());
    assert_eq!(s.balance(&l.address("T1")), 90);
}

#[test]
fn implicit_release_grace_delays_expiry() {
    let rules = ContractRules {
        occupancy_reporter: OccupancyReporter::Train,
        implicit_release_grace: 3,
    };
    let mut l = TestLedger::with_rules(TINY3, &[("T1", 100)], &["N1"], ConsensusConfig::poa(5), rules);
    let mut s = l.initial_state();
    let body = l.reserve("T1", "B2", 10, 20, None);
    let r = l.tx("T1", body);
    commit(&l, &mut s, &r, 0);
    assert!(l.gate().expire_reservations(&s, 22).is_empty());
    assert_eq!(l.gate().expire_reservations(&s, 23).len(), 1);
}

#[test]
fn reject_reason_strings_round_trip() {
    for r in RejectReason::ALL {
        assert_eq!(r.as_str().parse::<RejectReason>(), Ok(r));
        assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{r}\""));
    }
}
