use std::path::PathBuf;

use proptest::prelude::*;
use railchain::consensus::ConsensusConfig;
use railchain::crypto::Digest;
use railchain::fixtures::{TestLedger, INFRA_WALLET, TINY3};
use railchain::ledger::persist::{parse_chain, read_chain_file, verify_chain_bytes, write_chain_file};
use railchain::ledger::{derive_state, verify_chain, AppendError, Chain, LedgerBlock, ReplayError, TxFault};
use railchain::{canonical, WalletAddress};

fn tiny() -> TestLedger {
    TestLedger::new(TINY3, &[("T1", 100), ("T2", 100)], &["N1"], ConsensusConfig::poa(5))
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("RAILCHAIN_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).expect("golden file present");
    assert_eq!(actual, expected, "golden mismatch for {name}");
}

/// Ten blocks of mixed traffic on TINY3: bookings, a rollback, a transfer.
fn ten_block_chain(l: &mut TestLedger) -> Chain {
    let mut chain = Chain::from_genesis(l.genesis.clone());
    for i in 1..10u64 {
        let now = i * 5;
        let mut txs = Vec::new();
        let start = now + 10;
        let body = l.reserve("T1", ["B1", "B2", "B3"][(i % 3) as usize], start, start + 5, None);
        txs.push(l.tx("T1", body));
        if i % 4 == 0 {
            let body = l.reserve("T2", "B2", start + 100, start + 104, None);
            txs.push(l.tx("T2", body));
            let body = l.release("T2", "B2", start + 100, start + 104, true);
            txs.push(l.tx("T2", body));
        }
        let block = l.seal(chain.head().unwrap(), now, txs);
        chain = chain.append_block(block, &l.rules).expect("valid block");
    }
    chain
}

#[test]
fn tiny3_genesis_is_golden() {
    let l = tiny();
    let bytes = String::from_utf8(l.genesis.canonical_bytes()).unwrap();
    check_golden("tiny3_genesis.json", &format!("{bytes}\n"));
    check_golden("tiny3_genesis.sha256", &format!("{}\n", l.genesis.block_hash));
    assert_eq!(l.genesis.genesis.as_ref().unwrap().hash_alg.name(), "sha256");
}

#[test]
fn canonical_bytes_ignore_source_order() {
    let mut l = tiny();
    let body = l.reserve("T1", "B2", 10, 20, None);
    let tx = l.tx("T1", body);
    let text = canonical::to_string(&tx);
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let obj = v.as_object_mut().unwrap();
    let entries: Vec<_> = obj.iter().rev().map(|(k, v)| (k.clone(), v.clone())).collect();
    obj.clear();
    obj.extend(entries);
    let reparsed: railchain::Transaction = serde_json::from_value(v).unwrap();
    assert_eq!(reparsed.canonical_bytes(), tx.canonical_bytes());
    assert_eq!(reparsed.txid, tx.txid);
}

#[test]
fn append_valid_block_grows_chain_without_touching_input() {
    let mut l = tiny();
    let chain = Chain::from_genesis(l.genesis.clone());
    let body = l.reserve("T1", "B2", 10, 20, None);
    let tx = l.tx("T1", body);
    let block = l.seal(&l.genesis, 5, vec![tx]);
    let longer = chain.append_block(block, &l.rules).unwrap();
    assert_eq!(chain.len(), 1);
    assert_eq!(longer.len(), 2);
}

#[test]
fn append_rejects_broken_link_and_bad_hash() {
    let mut l = tiny();
    let chain = Chain::from_genesis(l.genesis.clone());
    let body = l.reserve("T1", "B2", 10, 20, None);
    let tx = l.tx("T1", body);
    let good = l.seal(&l.genesis, 5, vec![tx]);

    let mut orphan = l.genesis.clone();
    orphan.block_hash = Digest::ZERO;
    let unlinked = l.seal(&orphan, 5, good.tx_list.clone());
    assert_eq!(
        chain.append_block(unlinked, &l.rules).unwrap_err(),
        AppendError::BrokenLink
    );

    let mut tampered = good.clone();
    if let railchain::TxBody::Reserve(p) = &mut tampered.tx_list[0].body {
        p.fee = 11;
    }
    assert_eq!(
        chain.append_block(tampered.clone(), &l.rules).unwrap_err(),
        AppendError::BadHash
    );
    // Re-hashing the block without re-signing the tx leaves a stale tx id.
    tampered.block_hash = tampered.computed_hash(l.rules.alg);
    assert_eq!(
        chain.append_block(tampered, &l.rules).unwrap_err(),
        AppendError::BadTx(0, TxFault::BadTxid)
    );
}

#[test]
fn append_rejects_wrong_proposer_and_bad_proof() {
    let l = TestLedger::new(TINY3, &[("T1", 100)], &["N1", "N2"], ConsensusConfig::poa(5));
    let chain = Chain::from_genesis(l.genesis.clone());
    let good = l.seal(&l.genesis, 5, vec![]);
    assert_eq!(good.proposer.as_str(), "N2");
    let mut forged = LedgerBlock::unsealed(
        1,
        l.genesis.block_hash,
        5,
        railchain::NodeId::new("N1").unwrap(),
        vec![],
        l.rules.alg,
    );
    forged.proof = good.proof.clone();
    assert!(matches!(
        chain.append_block(forged, &l.rules),
        Err(AppendError::BadProof(_))
    ));
    let off_slot = l.seal(&l.genesis, 7, vec![]);
    assert!(matches!(
        chain.append_block(off_slot, &l.rules),
        Err(AppendError::BadProof(_))
    ));
    assert!(chain.append_block(good, &l.rules).is_ok());
}

#[test]
fn verify_chain_reports_first_failing_index() {
    let mut l = tiny();
    let chain = ten_block_chain(&mut l);
    assert_eq!(chain.len(), 10);
    assert_eq!(verify_chain(&chain), Ok(()));

    let mut blocks: Vec<LedgerBlock> = chain.blocks().iter().map(|b| (**b).clone()).collect();
    if let railchain::TxBody::Reserve(p) = &mut blocks[4].tx_list[0].body {
        p.fee += 1;
    }
    assert_eq!(verify_chain(&Chain::from_blocks(blocks)), Err(4));

    let mut blocks: Vec<LedgerBlock> = chain.blocks().iter().map(|b| (**b).clone()).collect();
    blocks.swap(3, 4);
    assert_eq!(verify_chain(&Chain::from_blocks(blocks)), Err(3));
}

#[test]
fn derive_state_genesis_only_and_single_reserve() {
    let mut l = tiny();
    let chain = Chain::from_genesis(l.genesis.clone());
    let s0 = derive_state(&chain, &l.topo).unwrap();
    assert_eq!(s0.balance(&l.address("T1")), 100);
    assert!(s0.reservations.is_empty());

    let body = l.reserve("T1", "B2", 10, 20, None);
    let tx = l.tx("T1", body);
    let block = l.seal(&l.genesis, 5, vec![tx]);
    let chain = chain.append_block(block, &l.rules).unwrap();
    let s1 = derive_state(&chain, &l.topo).unwrap();
    assert_eq!(s1.balance(&l.address("T1")), 90);
    assert_eq!(s1.balance(&WalletAddress::new(INFRA_WALLET).unwrap()), 10);
    assert_eq!(s1.reservations.len(), 1);
    assert_eq!(s1.tick_of_head, 5);
}

#[test]
fn derive_state_rejects_rule_divergent_chain() {
    let mut l = tiny();
    let body = l.reserve("T1", "B2", 10, 20, None);
    let a = l.tx("T1", body);
    let body = l.reserve("T2", "B2", 15, 25, None);
    let b = l.tx("T2", body);
    let block = l.seal(&l.genesis, 5, vec![a, b]);
    let chain = Chain::from_genesis(l.genesis.clone())
        .append_block(block, &l.rules)
        .unwrap();
    assert_eq!(
        derive_state(&chain, &l.topo).unwrap_err(),
        ReplayError::Rejected {
            block: 1,
            tx: 1,
            fault: TxFault::Reject(railchain::RejectReason::Conflict)
        }
    );
}

#[test]
fn derive_state_rejects_replayed_nonce() {
    let mut l = tiny();
    let body = l.reserve("T1", "B2", 10, 20, None);
    let a = l.tx("T1", body);
    let mut b = a.clone();
    if let railchain::TxBody::Reserve(p) = &mut b.body {
        p.element = railchain::ElementId::new("B3").unwrap();
    }
    let b = railchain::Transaction::new_signed(&l.keys["T1"], a.nonce, b.body, l.rules.alg);
    let block = l.seal(&l.genesis, 5, vec![a, b]);
    let chain = Chain::from_genesis(l.genesis.clone())
        .append_block(block, &l.rules)
        .unwrap();
    assert!(matches!(
        derive_state(&chain, &l.topo),
        Err(ReplayError::Rejected {
            fault: TxFault::StaleNonce,
            ..
        })
    ));
}

#[test]
fn derive_state_refuses_other_topology() {
    let l = tiny();
    let chain = Chain::from_genesis(l.genesis.clone());
    let other = railchain::Topology::from_slice(railchain::fixtures::SWITCHY.as_bytes()).unwrap();
    assert!(matches!(derive_state(&chain, &other), Err(ReplayError::Genesis(_))));
}

#[test]
fn replay_is_deterministic_and_conserves_money() {
    let mut l = tiny();
    let chain = ten_block_chain(&mut l);
    let a = derive_state(&chain, &l.topo).unwrap();
    let b = derive_state(&chain.clone(), &l.topo).unwrap();
    assert_eq!(a.canonical_bytes(), b.canonical_bytes());
    assert_eq!(a.total_balance(), l.rules.genesis.total_allocation());
}

#[test]
fn chain_file_round_trip() {
    let mut l = tiny();
    let chain = ten_block_chain(&mut l);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.jsonl");
    write_chain_file(&path, &chain).unwrap();
    let back = read_chain_file(&path).unwrap();
    assert_eq!(back.to_lines(), chain.to_lines());
    assert_eq!(verify_chain(&back), Ok(()));
}

#[test]
fn non_canonical_line_is_rejected_at_its_index() {
    let mut l = tiny();
    let chain = ten_block_chain(&mut l);
    let mut lines: Vec<String> = chain.to_lines().lines().map(str::to_string).collect();
    lines[6] = lines[6].replacen("{", "{ ", 1);
    let text = lines.join("\n") + "\n";
    assert_eq!(verify_chain_bytes(text.as_bytes()).unwrap_err(), 6);
    assert!(parse_chain(chain.to_lines().as_bytes()).is_ok());
}

fn block_of_offset(text: &[u8], offset: usize) -> usize {
    text[..offset].iter().filter(|b| **b == b'\n').count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_single_byte_mutation_is_detected_no_later_than_its_block(
        pos in any::<prop::sample::Index>(),
        byte in any::<u8>(),
    ) {
        let mut l = tiny();
        let chain = ten_block_chain(&mut l);
        let mut text = chain.to_lines().into_bytes();
        let at = pos.index(text.len());
        prop_assume!(text[at] != byte);
        text[at] = byte;
        let mutated_block = block_of_offset(&text, at);
        match verify_chain_bytes(&text) {
            Ok(_) => prop_assert!(false, "mutation at byte {} went undetected", at),
            Err(i) => prop_assert!(i <= mutated_block, "failed at {} > {}", i, mutated_block),
        }
    }
}
