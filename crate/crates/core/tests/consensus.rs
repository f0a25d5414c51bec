use std::sync::Arc;

use railchain::consensus::node::{NodeEvent, NodeParams, Outbox, Target, TxStatus};
use railchain::consensus::proof::pow_ok;
use railchain::consensus::{
    evaluate_votes, mine_pow, propose_block, verify_pow, ConsensusConfig, ConsensusMode, Decision, Fraction, Message,
    Node, ProposeError, Threshold, Vote, VoteOutcome,
};
use railchain::contract::RejectReason;
use railchain::crypto::{Digest, HashAlg, KeyPair, SigScheme};
use railchain::fixtures::{TestLedger, TINY3};
use railchain::ledger::{ChainRules, LedgerBlock, Proof, Transaction, TxFault};
use railchain::types::{NodeId, Tick};

fn nid(s: &str) -> NodeId {
    NodeId::new(s).unwrap()
}

fn votes(yeas: u64, nays: u64) -> Vec<Vote> {
    let key = KeyPair::derive("v", SigScheme::Ed25519, HashAlg::Sha256);
    (0..yeas + nays)
        .map(|i| {
            let d = if i < yeas { Decision::Yea } else { Decision::Nay };
            Vote::new_signed(nid(&format!("v{i}")), &key, Digest::ZERO, d, None)
        })
        .collect()
}

fn cfg(threshold: Threshold) -> ConsensusConfig {
    ConsensusConfig {
        mode: ConsensusMode::Vote,
        threshold,
        ..ConsensusConfig::poa(5)
    }
}

/// Smallest k with k/N >= num/den, found by counting up.
fn required_by_search(num: u64, den: u64, n: u64) -> u64 {
    (0..=n).find(|k| k * den >= num * n).unwrap()
}

#[test]
fn threshold_examples() {
    let f51 = cfg(Threshold::Fraction {
        f: "0.51".parse().unwrap(),
    });
    assert_eq!(f51.threshold.required(5), 3);
    assert_eq!(evaluate_votes(&votes(3, 0), &f51, 5), VoteOutcome::Committed);
    assert_eq!(evaluate_votes(&votes(2, 2), &f51, 5), VoteOutcome::Pending);
    assert_eq!(evaluate_votes(&votes(0, 3), &f51, 5), VoteOutcome::Rejected);
    let n1 = cfg(Threshold::AtLeastN { n: 1 });
    assert_eq!(evaluate_votes(&votes(1, 0), &n1, 1), VoteOutcome::Committed);
    assert_eq!(evaluate_votes(&[], &n1, 3), VoteOutcome::Pending);
}

#[test]
fn threshold_table_exhaustive() {
    let fractions = [(34, 100), (51, 100), (67, 100), (1, 1)];
    for n in 1..=10u64 {
        let mut thresholds: Vec<(Threshold, u64)> = fractions
            .iter()
            .map(|&(a, b)| {
                (
                    Threshold::Fraction {
                        f: Fraction::new(a, b).unwrap(),
                    },
                    required_by_search(a, b, n),
                )
            })
            .collect();
        thresholds.extend((1..=n).map(|k| (Threshold::AtLeastN { n: k }, k)));
        for (t, req) in thresholds {
            let c = cfg(t);
            assert_eq!(c.threshold.required(n), req, "{t:?} over {n}");
            for y in 0..=n {
                for x in 0..=(n - y) {
                    let expected = if y >= req {
                        VoteOutcome::Committed
                    } else if n - x < req {
                        VoteOutcome::Rejected
                    } else {
                        VoteOutcome::Pending
                    };
                    assert_eq!(evaluate_votes(&votes(y, x), &c, n), expected, "{t:?} n={n} y={y} x={x}");
                }
            }
        }
    }
}

#[test]
fn duplicate_votes_count_once() {
    let c = cfg(Threshold::AtLeastN { n: 2 });
    let mut v = votes(1, 0);
    v.push(v[0].clone());
    assert_eq!(evaluate_votes(&v, &c, 3), VoteOutcome::Pending);
}

#[test]
fn pow_examples() {
    let alg = HashAlg::Sha256;
    let h = alg.digest(b"block");
    assert_eq!(mine_pow(alg, &h, 0), 0);
    assert!(verify_pow(alg, &h, 0, 0));
    let n = mine_pow(alg, &h, 8);
    let mut pre = h.0.to_vec();
    pre.extend_from_slice(&n.to_be_bytes());
    assert_eq!(alg.digest(&pre).0[0], 0);
    assert!(verify_pow(alg, &h, n, 8));
    // A wrong nonce found by search fails verification.
    let wrong = (0..).find(|k| *k != n && !pow_ok(alg, &h, *k, 8)).unwrap();
    assert!(!verify_pow(alg, &h, wrong, 8));
    // A later valid nonce is not the minimal one.
    let later = (n + 1..).find(|k| pow_ok(alg, &h, *k, 8)).unwrap();
    assert!(!verify_pow(alg, &h, later, 8));
    assert!(!verify_pow(alg, &h, 1, 0));
}

fn ledger() -> TestLedger {
    TestLedger::new(
        TINY3,
        &[("T1", 100), ("T2", 100)],
        &["N1", "N2"],
        ConsensusConfig::poa(5),
    )
}

#[test]
fn propose_folds_and_excludes() {
    let mut l = ledger();
    let state = l.initial_state();
    let a = l.tx("T1", l.reserve("T1", "B1", 10, 15, None));
    let b = l.tx("T2", l.reserve("T2", "B3", 10, 15, None));
    let c = l.tx("T2", l.reserve("T2", "B1", 12, 20, None));
    let gate = l.gate();
    // Slot 10 belongs to N1 (10/5 = 2, even).
    let p = propose_block(&l.rules, &gate, &nid("N1"), &[&a, &b, &c], &l.genesis, &state, 10).unwrap();
    assert_eq!(p.block.tx_list, vec![a.clone(), b.clone()]);
    assert_eq!(p.excluded, vec![(c.txid, TxFault::Reject(RejectReason::Conflict))]);
    assert_eq!(p.state.reservations.len(), 2);
    let empty = propose_block(&l.rules, &gate, &nid("N1"), &[], &l.genesis, &state, 10).unwrap();
    assert!(empty.block.tx_list.is_empty());
    assert_eq!(
        propose_block(&l.rules, &gate, &nid("N2"), &[], &l.genesis, &state, 10).unwrap_err(),
        ProposeError::NotProposer(nid("N2"))
    );
    assert!(propose_block(&l.rules, &gate, &nid("N1"), &[], &l.genesis, &state, 11).is_err());
}

fn node(l: &TestLedger, id: &str, all: &[&str]) -> Node {
    Node::new(NodeParams {
        id: nid(id),
        key: l.keys[id].clone(),
        rules: Arc::new(ChainRules::from_genesis(&l.genesis).unwrap()),
        topo: Arc::new(l.topo.clone()),
        genesis: Arc::new(l.genesis.clone()),
        all_nodes: all.iter().map(|s| nid(s)).collect(),
        seed: 7,
        sig_cache: Default::default(),
    })
}

/// Zero-latency delivery between in-memory nodes until no message is left.
fn pump(nodes: &mut [Node], mut inflight: Vec<(NodeId, Target, Message)>, now: Tick) -> Vec<NodeEvent> {
    let mut events = Vec::new();
    while let Some((from, to, msg)) = inflight.pop() {
        let targets: Vec<usize> = (0..nodes.len())
            .filter(|i| {
                nodes[*i].id() != &from && matches!(&to, Target::All)
                    || matches!(&to, Target::To(t) if t == nodes[*i].id())
            })
            .collect();
        for i in targets {
            let mut out = Outbox::default();
            nodes[i].handle(&from, msg.clone(), now, &mut out);
            events.extend(out.events);
            let me = nodes[i].id().clone();
            inflight.extend(out.sends.into_iter().map(|(t, m)| (me.clone(), t, m)));
        }
    }
    events
}

fn tick(nodes: &mut [Node], now: Tick) -> Vec<NodeEvent> {
    let mut events = Vec::new();
    let mut inflight = Vec::new();
    for n in nodes.iter_mut() {
        let mut out = Outbox::default();
        n.on_tick(now, &mut out);
        events.extend(out.events);
        inflight.extend(out.sends.into_iter().map(|(t, m)| (n.id().clone(), t, m)));
    }
    events.extend(pump(nodes, inflight, now));
    events
}

#[test]
fn poa_nodes_commit_and_agree() {
    let mut l = ledger();
    let mut nodes = vec![node(&l, "N1", &["N1", "N2"]), node(&l, "N2", &["N1", "N2"])];
    let tx = l.tx("T1", l.reserve("T1", "B1", 20, 30, None));
    let mut out = Outbox::default();
    assert_eq!(nodes[1].submit(tx.clone(), 1, &mut out), TxStatus::Pending);
    pump(
        &mut nodes,
        out.sends.into_iter().map(|(t, m)| (nid("N2"), t, m)).collect(),
        1,
    );
    for now in 2..=10 {
        tick(&mut nodes, now);
    }
    assert_eq!(nodes[0].head_hash(), nodes[1].head_hash());
    assert_eq!(nodes[0].head_height(), 2);
    assert_eq!(nodes[1].tx_status(&tx.txid), Some(TxStatus::Committed { block: 1 }));
    assert_eq!(nodes[0].head_state().reservations.len(), 1);
}

#[test]
fn vote_mode_commits_with_threshold() {
    let consensus = ConsensusConfig {
        mode: ConsensusMode::Vote,
        threshold: Threshold::Fraction {
            f: "0.51".parse().unwrap(),
        },
        ..ConsensusConfig::poa(4)
    };
    let mut l = TestLedger::new(TINY3, &[("T1", 100)], &["N1", "N2", "N3"], consensus);
    let all = ["N1", "N2", "N3"];
    let mut nodes: Vec<Node> = all.iter().map(|n| node(&l, n, &all)).collect();
    let tx = l.tx("T1", l.reserve("T1", "B2", 20, 30, None));
    let mut out = Outbox::default();
    nodes[0].submit(tx.clone(), 1, &mut out);
    pump(
        &mut nodes,
        out.sends.into_iter().map(|(t, m)| (nid("N1"), t, m)).collect(),
        1,
    );
    let events = tick(&mut nodes, 4);
    let yeas = events
        .iter()
        .filter(|e| {
            matches!(
                e,
                NodeEvent::VoteCast {
                    decision: Decision::Yea,
                    ..
                }
            )
        })
        .count();
    assert_eq!(yeas, 3);
    let head = nodes[0].head_block().clone();
    assert_eq!(head.index, 1);
    match &head.proof {
        Proof::Votes { votes } => assert!(votes.len() >= 2),
        p => panic!("unexpected proof {p:?}"),
    }
    assert!(nodes.iter().all(|n| n.head_hash() == head.block_hash));
    assert_eq!(nodes[0].tx_status(&tx.txid), Some(TxStatus::Committed { block: 1 }));
}

#[test]
fn conflicting_proposal_gets_nay_with_reason() {
    let consensus = ConsensusConfig {
        mode: ConsensusMode::Vote,
        ..ConsensusConfig::poa(4)
    };
    let mut l = TestLedger::new(TINY3, &[("T1", 100), ("T2", 100)], &["N1", "N2"], consensus);
    let mut voter = node(&l, "N2", &["N1", "N2"]);
    let r1 = l.tx("T1", l.reserve("T1", "B2", 20, 30, None));
    let b1 = l.seal(&l.genesis, 4, vec![r1]);
    let mut out = Outbox::default();
    voter.handle(
        &nid("N1"),
        Message::BlockCommit {
            block: Arc::new(b1.clone()),
        },
        5,
        &mut out,
    );
    assert_eq!(voter.head_height(), 1);
    // Slot 8 is N1's turn; its proposal books an overlapping window on B2.
    let r2 = l.tx("T2", l.reserve("T2", "B2", 25, 35, None));
    let prop = LedgerBlock::unsealed(2, b1.block_hash, 8, nid("N1"), vec![r2], l.rules.alg);
    let mut out = Outbox::default();
    voter.handle(
        &nid("N1"),
        Message::BlockProposal { block: Arc::new(prop) },
        9,
        &mut out,
    );
    let cast: Vec<_> = out
        .events
        .iter()
        .filter_map(|e| match e {
            NodeEvent::VoteCast { decision, reason, .. } => Some((*decision, *reason)),
            _ => None,
        })
        .collect();
    assert_eq!(
        cast,
        vec![(Decision::Nay, Some(TxFault::Reject(RejectReason::Conflict)))]
    );
    assert!(matches!(&out.sends[..], [(Target::To(p), Message::Vote { .. })] if p == &nid("N1")));
}

/// Builds `len` blocks on `from`, one per slot starting at `start`, with
/// `txs` placed in the first block.
fn branch(l: &TestLedger, from: &LedgerBlock, start: Tick, len: usize, txs: Vec<Transaction>) -> Vec<LedgerBlock> {
    let mut out: Vec<LedgerBlock> = Vec::new();
    let mut txs = Some(txs);
    for i in 0..len {
        let prev = out.last().unwrap_or(from);
        let now = start + 5 * i as Tick;
        out.push(l.seal(prev, now, txs.take().unwrap_or_default()));
    }
    out
}

#[test]
fn longer_branch_wins_and_fork_is_reported() {
    let mut l = ledger();
    let prefix = branch(&l, &l.genesis, 5, 3, vec![]);
    let fork_point = prefix.last().unwrap().clone();
    let t1 = l.tx("T1", l.reserve("T1", "B2", 100, 110, None));
    let t2 = l.tx("T2", l.reserve("T2", "B2", 105, 115, None));
    let short = branch(&l, &fork_point, 20, 2, vec![t1]);
    let long = branch(&l, &fork_point, 25, 4, vec![t2]);
    let mut n = node(&l, "N1", &["N1", "N2"]);
    let feed = |blocks: &[LedgerBlock], n: &mut Node| {
        let mut out = Outbox::default();
        let msg = Message::ChainResponse {
            blocks: blocks.iter().cloned().map(Arc::new).collect(),
        };
        n.handle(&nid("N2"), msg, 60, &mut out);
        out.events
    };
    feed(&prefix, &mut n);
    feed(&short, &mut n);
    assert_eq!(n.head_height(), 5);
    let events = feed(&long, &mut n);
    assert_eq!(n.head_height(), 7);
    assert_eq!(n.head_hash(), long.last().unwrap().block_hash);
    let forks: Vec<_> = events
        .iter()
        .filter_map(|e| match e {
            NodeEvent::ForkDetected(f) => Some(f),
            _ => None,
        })
        .collect();
    assert_eq!(forks.len(), 1);
    assert_eq!(forks[0].common_index, 3);
    assert_eq!(forks[0].tips.iter().map(|t| t.1).collect::<Vec<_>>(), vec![7, 5]);
    assert_eq!(forks[0].conflicting.len(), 1);
    // T1's Reserve came back into the pool, conflicted, and raised an alarm.
    assert!(events.iter().any(|e| matches!(e, NodeEvent::SafetyAlarm { .. })));
    assert!(events
        .iter()
        .any(|e| matches!(e, NodeEvent::MustHalt { train } if train.as_str() == "T1")));
    assert_eq!(n.head_state().reservations.len(), 1);
}

#[test]
fn equal_length_tie_goes_to_lower_hash() {
    let l = ledger();
    let a = branch(&l, &l.genesis, 5, 2, vec![]);
    let b = branch(&l, &l.genesis, 10, 2, vec![]);
    let expected = a.last().unwrap().block_hash.min(b.last().unwrap().block_hash);
    for order in [[&a, &b], [&b, &a]] {
        let mut n = node(&l, "N1", &["N1", "N2"]);
        for blocks in order {
            let mut out = Outbox::default();
            let msg = Message::ChainResponse {
                blocks: blocks.iter().cloned().map(Arc::new).collect(),
            };
            n.handle(&nid("N2"), msg, 60, &mut out);
        }
        assert_eq!(n.head_hash(), expected);
    }
}

#[test]
fn messages_from_unlisted_nodes_are_ignored() {
    let l = ledger();
    let mut n = node(&l, "N1", &["N1", "N2"]);
    let b = l.seal(&l.genesis, 5, vec![]);
    let mut out = Outbox::default();
    n.handle(&nid("X9"), Message::BlockCommit { block: Arc::new(b) }, 6, &mut out);
    assert_eq!(n.head_height(), 0);
    assert!(out.events.is_empty());
}
