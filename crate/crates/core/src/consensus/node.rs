//! One replica: block tree, transaction pool, proposer duties, voting,
//! fork detection and chain sync. A node only talks to others through the
//! messages it places in an [`Outbox`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consensus::config::ConsensusMode;
use crate::consensus::message::Message;
use crate::consensus::pool::{Pool, PoolEntry};
use crate::consensus::propose::{is_eligible, propose_block, seal};
use crate::consensus::tree::{better, BlockTree};
use crate::consensus::vote::{evaluate_votes, Decision, Vote, VoteOutcome};
use crate::contract::{Gatekeeper, RejectReason, Reservation};
use crate::crypto::{Digest, KeyPair};
use crate::ledger::chain::check_structure;
use crate::ledger::tx::ReleasePayload;
use crate::ledger::{
    apply_block, check_successor, ChainRules, LedgerBlock, LedgerState, Proof, SigCache, Transaction, TxBody, TxFault,
};
use crate::topology::Topology;
use crate::types::{NodeId, Tick, TrainId};

const MAX_ORPHANS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    All,
    To(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxStatus {
    Pending,
    Committed { block: u64 },
    Rejected(TxFault),
}

#[derive(Debug, Clone)]
pub struct HomeTx {
    pub tx: Arc<Transaction>,
    pub submitted: Tick,
    pub status: TxStatus,
}

#[derive(Debug, Clone)]
pub struct ForkInfo {
    pub common_index: u64,
    pub common_hash: Digest,
    /// Best tip below each child of the common block: (hash, height).
    pub tips: Vec<(Digest, u64)>,
    pub conflicting: Vec<(Reservation, Reservation)>,
}

/// Observable things a node did; the world turns them into log records.
#[derive(Debug, Clone)]
pub enum NodeEvent {
    TxSubmitted {
        tx: Arc<Transaction>,
    },
    TxCommitted {
        tx: Arc<Transaction>,
        block: u64,
        latency: Tick,
    },
    TxRejected {
        tx: Arc<Transaction>,
        fault: TxFault,
    },
    BlockProposed {
        block: Arc<LedgerBlock>,
    },
    BlockStored {
        block: Arc<LedgerBlock>,
        state: Arc<LedgerState>,
    },
    BlockRejected {
        hash: Digest,
        index: u64,
        proposer: NodeId,
        reason: String,
    },
    HeadChanged {
        head: Digest,
        height: u64,
    },
    VoteCast {
        block: Digest,
        proposer: NodeId,
        decision: Decision,
        reason: Option<TxFault>,
    },
    ForkDetected(ForkInfo),
    Reorg {
        common_index: u64,
        old_head: Digest,
        new_head: Digest,
        retracted: usize,
        reproposed: usize,
    },
    SafetyAlarm {
        txid: Digest,
        reservation: Reservation,
        conflicting: Reservation,
    },
    MustHalt {
        train: TrainId,
    },
}

#[derive(Debug, Default)]
pub struct Outbox {
    pub sends: Vec<(Target, Message)>,
    pub events: Vec<NodeEvent>,
}

impl Outbox {
    fn send(&mut self, to: Target, msg: Message) {
        self.sends.push((to, msg));
    }

    fn event(&mut self, e: NodeEvent) {
        self.events.push(e);
    }
}

#[derive(Debug)]
struct OpenProposal {
    block: Arc<LedgerBlock>,
    votes: Vec<Vote>,
    deadline: Tick,
}

pub struct NodeParams {
    pub id: NodeId,
    pub key: KeyPair,
    pub rules: Arc<ChainRules>,
    pub topo: Arc<Topology>,
    pub genesis: Arc<LedgerBlock>,
    /// Every node in the network, including this one.
    pub all_nodes: Vec<NodeId>,
    pub seed: u64,
    /// Memo of verified signatures. Verification is a pure function, so
    /// replicas in one process may share it.
    pub sig_cache: Arc<SigCache>,
}

pub struct Node {
    id: NodeId,
    index: usize,
    key: KeyPair,
    rules: Arc<ChainRules>,
    topo: Arc<Topology>,
    peers: Vec<NodeId>,
    tree: BlockTree,
    head: Digest,
    orphans: HashMap<Digest, Vec<Arc<LedgerBlock>>>,
    orphan_count: usize,
    pool: Pool,
    on_head: HashMap<Digest, u64>,
    home: BTreeMap<Digest, HomeTx>,
    sig_cache: Arc<SigCache>,
    own_nonce: u64,
    proposal: Option<OpenProposal>,
    voted: HashSet<Digest>,
    must_halt: BTreeSet<TrainId>,
    reported_forks: HashSet<Digest>,
    new_forks: Vec<Digest>,
    last_request: HashMap<NodeId, Tick>,
    sync_cursor: usize,
    producing: bool,
    rng: ChaCha8Rng,
}

/// Stale-nonce check plus gatekeeper validation against `state`, without applying.
fn precheck(gate: &Gatekeeper<'_>, state: &LedgerState, tx: &Transaction, now: Tick) -> Result<(), TxFault> {
    if state.last_nonce(&tx.sender).is_some_and(|n| tx.nonce <= n) {
        return Err(TxFault::StaleNonce);
    }
    gate.validate(state, tx, now).map_err(TxFault::from)
}

impl Node {
    pub fn new(p: NodeParams) -> Self {
        let state = LedgerState::from_genesis(&p.rules.genesis, &p.topo);
        let head = p.genesis.block_hash;
        let tree = BlockTree::new(p.genesis, Arc::new(state));
        let index = p.all_nodes.iter().position(|n| n == &p.id).unwrap_or(0);
        let peers = p.all_nodes.iter().filter(|n| *n != &p.id).cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        rng.set_stream(1_000_000 + index as u64);
        Node {
            id: p.id,
            index,
            key: p.key,
            rules: p.rules,
            topo: p.topo,
            peers,
            tree,
            head,
            orphans: HashMap::new(),
            orphan_count: 0,
            pool: Pool::default(),
            on_head: HashMap::new(),
            home: BTreeMap::new(),
            sig_cache: p.sig_cache,
            own_nonce: 0,
            proposal: None,
            voted: HashSet::new(),
            must_halt: BTreeSet::new(),
            reported_forks: HashSet::new(),
            new_forks: Vec::new(),
            last_request: HashMap::new(),
            sync_cursor: 0,
            producing: true,
            rng,
        }
    }

    pub fn id(&self) -> &NodeId {
        &self.id
    }

    pub fn rules(&self) -> &Arc<ChainRules> {
        &self.rules
    }

    pub fn head_hash(&self) -> Digest {
        self.head
    }

    pub fn head_height(&self) -> u64 {
        self.tree.height(&self.head)
    }

    pub fn head_block(&self) -> &Arc<LedgerBlock> {
        &self.tree.get(&self.head).expect("head in tree").block
    }

    pub fn head_state(&self) -> Arc<LedgerState> {
        self.tree.get(&self.head).expect("head in tree").state.clone()
    }

    pub fn tree(&self) -> &BlockTree {
        &self.tree
    }

    pub fn chain(&self) -> crate::ledger::Chain {
        self.tree.chain_to(&self.head)
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn tx_status(&self, txid: &Digest) -> Option<TxStatus> {
        self.home.get(txid).map(|h| h.status)
    }

    pub fn home_txs(&self) -> impl Iterator<Item = &HomeTx> {
        self.home.values()
    }

    pub fn must_halt(&self, train: &TrainId) -> bool {
        self.must_halt.contains(train)
    }

    pub fn clear_halt(&mut self, train: &TrainId) {
        self.must_halt.remove(train);
    }

    /// Stops proposing and periodic chatter; votes and sync replies continue.
    pub fn set_producing(&mut self, on: bool) {
        self.producing = on;
    }

    pub fn has_open_proposal(&self) -> bool {
        self.proposal.is_some()
    }

    fn is_whitelisted(&self) -> bool {
        self.rules.registry.is_whitelisted(&self.id)
    }

    /// Accepts a transaction from a client of this node.
    pub fn submit(&mut self, tx: Transaction, now: Tick, out: &mut Outbox) -> TxStatus {
        let tx = Arc::new(tx);
        if let Some(h) = self.home.get(&tx.txid) {
            return h.status;
        }
        out.event(NodeEvent::TxSubmitted { tx: tx.clone() });
        let rules = self.rules.clone();
        let topo = self.topo.clone();
        let gate = Gatekeeper::new(&topo, &rules.registry, &rules.contract);
        let verdict = if self.on_head.contains_key(&tx.txid) {
            Err(TxFault::StaleNonce)
        } else {
            rules
                .check_tx_integrity(&tx, Some(&self.sig_cache))
                .and_then(|()| precheck(&gate, &self.head_state(), &tx, now))
        };
        let status = match verdict {
            Ok(()) => TxStatus::Pending,
            Err(f) => {
                out.event(NodeEvent::TxRejected {
                    tx: tx.clone(),
                    fault: f,
                });
                TxStatus::Rejected(f)
            }
        };
        self.home.insert(
            tx.txid,
            HomeTx {
                tx: tx.clone(),
                submitted: now,
                status,
            },
        );
        if status == TxStatus::Pending {
            self.pool.insert(PoolEntry {
                tx: tx.clone(),
                arrival: now,
                reproposed: false,
            });
            self.gossip_sender(&tx.sender, out);
        }
        status
    }

    /// Sends every outstanding home transaction of `sender` in one message so
    /// that peers receive them together, in nonce order.
    fn gossip_sender(&self, sender: &crate::types::WalletAddress, out: &mut Outbox) {
        let mut txs: Vec<Arc<Transaction>> = self
            .home
            .values()
            .filter(|h| &h.tx.sender == sender && h.status == TxStatus::Pending)
            .map(|h| h.tx.clone())
            .collect();
        txs.sort_by_key(|t| (t.nonce, t.txid));
        if !txs.is_empty() && !self.peers.is_empty() {
            out.send(Target::All, Message::TxGossip { txs });
        }
    }

    fn regossip(&self, out: &mut Outbox) {
        let mut txs: Vec<Arc<Transaction>> = self
            .home
            .values()
            .filter(|h| h.status == TxStatus::Pending)
            .map(|h| h.tx.clone())
            .collect();
        txs.sort_by(|a, b| (&a.sender, a.nonce, a.txid).cmp(&(&b.sender, b.nonce, b.txid)));
        if !txs.is_empty() && !self.peers.is_empty() {
            out.send(Target::All, Message::TxGossip { txs });
        }
    }

    pub fn handle(&mut self, from: &NodeId, msg: Message, now: Tick, out: &mut Outbox) {
        if !self.rules.registry.is_whitelisted(from) {
            return;
        }
        let old_head = self.head;
        match msg {
            Message::TxGossip { txs } => {
                for tx in txs {
                    self.admit_gossip(tx, now);
                }
            }
            Message::BlockCommit { block } => self.receive_block(block, Some(from), now, out),
            Message::ChainResponse { blocks } => {
                for b in blocks {
                    self.receive_block(b, Some(from), now, out);
                }
            }
            Message::BlockProposal { block } => self.on_proposal(block, from, now, out),
            Message::Vote { vote } => self.on_vote(vote, now, out),
            Message::ChainRequest { locator, head_height } => {
                self.on_chain_request(from, &locator, head_height, now, out)
            }
        }
        self.finalize(old_head, now, out);
    }

    fn admit_gossip(&mut self, tx: Arc<Transaction>, now: Tick) {
        if self.pool.contains(&tx.txid) || self.on_head.contains_key(&tx.txid) || self.home.contains_key(&tx.txid) {
            return;
        }
        if self.rules.check_tx_integrity(&tx, Some(&self.sig_cache)).is_err() {
            return;
        }
        let rules = self.rules.clone();
        let topo = self.topo.clone();
        let gate = Gatekeeper::new(&topo, &rules.registry, &rules.contract);
        if precheck(&gate, &self.head_state(), &tx, now).is_ok() {
            self.pool.insert(PoolEntry {
                tx,
                arrival: now,
                reproposed: false,
            });
        }
    }

    /// Timer hook: proposer turn, vote timeout, periodic re-gossip and sync.
    pub fn on_tick(&mut self, now: Tick, out: &mut Outbox) {
        let old_head = self.head;
        let interval = self.rules.consensus.block_interval_ticks;
        if self.proposal.as_ref().is_some_and(|p| now >= p.deadline) {
            let p = self.proposal.take().expect("checked");
            out.event(NodeEvent::BlockRejected {
                hash: p.block.block_hash,
                index: p.block.index,
                proposer: self.id.clone(),
                reason: "vote timeout".into(),
            });
        }
        if self.producing && self.is_whitelisted() {
            match self.rules.consensus.mode {
                ConsensusMode::Poa | ConsensusMode::Vote => {
                    if is_eligible(&self.rules, &self.id, now) {
                        self.produce(now, out);
                    }
                }
                ConsensusMode::Pow => {
                    let odds = interval * self.rules.node_count().max(1);
                    if self.rng.gen_range(0..odds) == 0 {
                        self.produce(now, out);
                    }
                }
            }
            let offset = self.index as Tick;
            if (now + offset).is_multiple_of(interval) {
                self.regossip(out);
            }
            if !self.peers.is_empty() && (now + offset).is_multiple_of(4 * interval) {
                let peer = self.peers[self.sync_cursor % self.peers.len()].clone();
                self.sync_cursor += 1;
                self.request_chain(&peer, now, out);
            }
        }
        self.finalize(old_head, now, out);
    }

    /// Asks every peer for blocks past our head; used while draining.
    pub fn sync_all(&mut self, now: Tick, out: &mut Outbox) {
        let locator = self.locator();
        for p in &self.peers {
            self.last_request.insert(p.clone(), now);
            out.send(
                Target::To(p.clone()),
                Message::ChainRequest {
                    locator: locator.clone(),
                    head_height: self.head_height(),
                },
            );
        }
    }

    fn gate_parts(&self) -> (Arc<ChainRules>, Arc<Topology>) {
        (self.rules.clone(), self.topo.clone())
    }

    fn next_own_nonce(&mut self, state: &LedgerState) -> u64 {
        let committed = state.last_nonce(self.key.address()).unwrap_or(0);
        self.own_nonce = self.own_nonce.max(committed) + 1;
        self.own_nonce
    }

    /// Implicit releases for expired reservations, unless one is already pending.
    fn queue_implicit_releases(&mut self, now: Tick, out: &mut Outbox) {
        let state = self.head_state();
        let due = crate::contract::expire_reservations(&state, now, self.rules.contract.implicit_release_grace);
        if due.is_empty() {
            return;
        }
        let pending: HashSet<&ReleasePayload> = self
            .pool
            .iter()
            .filter_map(|e| match &e.tx.body {
                TxBody::Release(p) if p.implicit => Some(p),
                _ => None,
            })
            .collect();
        // A queued report putting the train on the element would make the release fail.
        let arriving: HashSet<(&crate::types::ElementId, &TrainId)> = self
            .pool
            .iter()
            .filter_map(|e| match &e.tx.body {
                TxBody::OccupancyReport(o) => o.train.as_ref().map(|t| (&o.element, t)),
                _ => None,
            })
            .collect();
        let fresh: Vec<ReleasePayload> = due
            .into_iter()
            .filter(|p| !pending.contains(p) && !arriving.contains(&(&p.element, &p.train)))
            .collect();
        for p in fresh {
            let nonce = self.next_own_nonce(&state);
            let tx = Transaction::new_signed(&self.key, nonce, TxBody::Release(p), self.rules.alg);
            self.submit(tx, now, out);
        }
    }

    fn produce(&mut self, now: Tick, out: &mut Outbox) {
        if self.proposal.is_some() {
            return;
        }
        self.queue_implicit_releases(now, out);
        let (rules, topo) = self.gate_parts();
        let gate = Gatekeeper::new(&topo, &rules.registry, &rules.contract);
        let head = self.tree.get(&self.head).expect("head in tree");
        let (prev, state) = (head.block.clone(), head.state.clone());
        let ordered: Vec<Arc<Transaction>> = self.pool.ordered().into_iter().map(|e| e.tx.clone()).collect();
        let pending: Vec<&Transaction> = ordered.iter().map(|t| t.as_ref()).collect();
        let Ok(proposal) = propose_block(&rules, &gate, &self.id, &pending, &prev, &state, now) else {
            return;
        };
        let block = Arc::new(seal(&rules, proposal.block, &self.key));
        out.event(NodeEvent::BlockProposed { block: block.clone() });
        if rules.consensus.mode == ConsensusMode::Vote {
            let own = Vote::new_signed(self.id.clone(), &self.key, block.block_hash, Decision::Yea, None);
            self.voted.insert(block.block_hash);
            out.event(NodeEvent::VoteCast {
                block: block.block_hash,
                proposer: self.id.clone(),
                decision: Decision::Yea,
                reason: None,
            });
            self.proposal = Some(OpenProposal {
                block: block.clone(),
                votes: vec![own],
                deadline: now + rules.consensus.block_interval_ticks,
            });
            out.send(Target::All, Message::BlockProposal { block });
            self.tally(now, out);
        } else {
            self.connect(block.clone(), out);
            out.send(Target::All, Message::BlockCommit { block });
        }
    }

    fn on_proposal(&mut self, block: Arc<LedgerBlock>, from: &NodeId, now: Tick, out: &mut Outbox) {
        if self.rules.consensus.mode != ConsensusMode::Vote || !self.is_whitelisted() {
            return;
        }
        if !self.voted.insert(block.block_hash) {
            return;
        }
        let Some(parent) = self.tree.get(&block.prev_hash) else {
            // Cannot judge without the parent; fetch it and abstain.
            self.voted.remove(&block.block_hash);
            self.request_chain(from, now, out);
            return;
        };
        let (rules, topo) = self.gate_parts();
        let gate = Gatekeeper::new(&topo, &rules.registry, &rules.contract);
        let verdict: Result<(), Option<TxFault>> = if block.prev_hash != self.head
            || &block.proposer != from
            || !is_eligible(&rules, &block.proposer, block.now)
            || block.proof != Proof::Pending
        {
            Err(None)
        } else if let Err(e) = check_structure(&rules, &parent.block, &block, Some(&self.sig_cache)) {
            Err(match e {
                crate::ledger::AppendError::BadTx(_, f) => Some(f),
                _ => None,
            })
        } else {
            apply_block(&gate, &parent.state, &block)
                .map(|_| ())
                .map_err(|(_, f)| Some(f))
        };
        let (decision, reason) = match verdict {
            Ok(()) => (Decision::Yea, None),
            Err(r) => (Decision::Nay, r),
        };
        let vote = Vote::new_signed(self.id.clone(), &self.key, block.block_hash, decision, reason);
        out.event(NodeEvent::VoteCast {
            block: block.block_hash,
            proposer: block.proposer.clone(),
            decision,
            reason,
        });
        out.send(Target::To(block.proposer.clone()), Message::Vote { vote });
    }

    fn on_vote(&mut self, vote: Vote, now: Tick, out: &mut Outbox) {
        let Some(p) = self.proposal.as_mut() else {
            return;
        };
        if p.block.block_hash != vote.block_hash || p.votes.iter().any(|v| v.voter == vote.voter) {
            return;
        }
        let Some(node) = self.rules.registry.node(&vote.voter).filter(|n| n.whitelisted) else {
            return;
        };
        if !self
            .rules
            .keyring
            .verify(&node.wallet, &vote.signing_bytes(), &vote.signature)
        {
            return;
        }
        p.votes.push(vote);
        self.tally(now, out);
    }

    fn tally(&mut self, _now: Tick, out: &mut Outbox) {
        let Some(p) = self.proposal.as_ref() else {
            return;
        };
        match evaluate_votes(&p.votes, &self.rules.consensus, self.rules.node_count()) {
            VoteOutcome::Pending => {}
            VoteOutcome::Rejected => {
                let p = self.proposal.take().expect("checked");
                let reasons: BTreeSet<&str> = p
                    .votes
                    .iter()
                    .filter(|v| v.decision == Decision::Nay)
                    .map(|v| v.reason.map_or("stale", |r| r.as_str()))
                    .collect();
                out.event(NodeEvent::BlockRejected {
                    hash: p.block.block_hash,
                    index: p.block.index,
                    proposer: self.id.clone(),
                    reason: format!("nay: {}", reasons.into_iter().collect::<Vec<_>>().join(",")),
                });
            }
            VoteOutcome::Committed => {
                let p = self.proposal.take().expect("checked");
                let mut yeas: Vec<Vote> = p.votes.into_iter().filter(|v| v.decision == Decision::Yea).collect();
                yeas.sort_by(|a, b| a.voter.cmp(&b.voter));
                let sealed = Arc::new((*p.block).clone().with_proof(Proof::Votes { votes: yeas }));
                self.connect(sealed.clone(), out);
                out.send(Target::All, Message::BlockCommit { block: sealed });
            }
        }
    }

    fn locator(&self) -> Vec<Digest> {
        let top = self.head_height();
        let mut out = vec![self.head];
        let mut step = 1u64;
        let mut h = top;
        while h > 0 {
            h = h.saturating_sub(step);
            out.push(self.tree.ancestor_at(self.head, h));
            if out.len() > 8 {
                step *= 2;
            }
        }
        out
    }

    fn request_chain(&mut self, peer: &NodeId, now: Tick, out: &mut Outbox) {
        let interval = self.rules.consensus.block_interval_ticks;
        if self.last_request.get(peer).is_some_and(|t| now < t + interval) {
            return;
        }
        self.last_request.insert(peer.clone(), now);
        out.send(
            Target::To(peer.clone()),
            Message::ChainRequest {
                locator: self.locator(),
                head_height: self.head_height(),
            },
        );
    }

    fn on_chain_request(&mut self, from: &NodeId, locator: &[Digest], head_height: u64, now: Tick, out: &mut Outbox) {
        let Some(their_head) = locator.first() else {
            return;
        };
        let mine = (self.head_height(), &self.head);
        if better(mine, (head_height, their_head)) {
            let common = locator
                .iter()
                .find(|h| self.tree.contains(h) && self.tree.is_ancestor(h, &self.head))
                .copied()
                .unwrap_or_else(|| self.tree.genesis());
            let blocks = self.tree.path(&common, &self.head);
            if !blocks.is_empty() {
                out.send(Target::To(from.clone()), Message::ChainResponse { blocks });
            }
        } else if their_head != &self.head && !self.tree.contains(their_head) {
            self.request_chain(from, now, out);
        }
    }

    fn receive_block(&mut self, block: Arc<LedgerBlock>, from: Option<&NodeId>, now: Tick, out: &mut Outbox) {
        if self.tree.contains(&block.block_hash) {
            return;
        }
        if !self.tree.contains(&block.prev_hash) {
            if self.orphan_count >= MAX_ORPHANS {
                self.orphans.clear();
                self.orphan_count = 0;
            }
            let waiting = self.orphans.entry(block.prev_hash).or_default();
            if !waiting.iter().any(|b| b.block_hash == block.block_hash) {
                waiting.push(block);
                self.orphan_count += 1;
            }
            if let Some(peer) = from {
                self.request_chain(peer, now, out);
            }
            return;
        }
        let mut work = vec![block];
        while let Some(b) = work.pop() {
            let hash = b.block_hash;
            if self.tree.contains(&hash) || !self.connect(b, out) {
                continue;
            }
            if let Some(children) = self.orphans.remove(&hash) {
                self.orphan_count -= children.len();
                work.extend(children);
            }
        }
    }

    /// Validates a block whose parent is known and adds it to the tree.
    fn connect(&mut self, block: Arc<LedgerBlock>, out: &mut Outbox) -> bool {
        let parent = self.tree.get(&block.prev_hash).expect("caller checked parent");
        let (rules, topo) = self.gate_parts();
        let reject = |reason: String, out: &mut Outbox| {
            out.event(NodeEvent::BlockRejected {
                hash: block.block_hash,
                index: block.index,
                proposer: block.proposer.clone(),
                reason,
            })
        };
        if let Err(e) = check_successor(&rules, &parent.block, &block, Some(&self.sig_cache)) {
            reject(e.to_string(), out);
            return false;
        }
        let gate = Gatekeeper::new(&topo, &rules.registry, &rules.contract);
        let state = match apply_block(&gate, &parent.state, &block) {
            Ok(s) => Arc::new(s),
            Err((i, f)) => {
                reject(format!("transaction {i}: {f}"), out);
                return false;
            }
        };
        let hash = block.block_hash;
        self.tree.insert(block.clone(), state.clone());
        out.event(NodeEvent::BlockStored {
            block: block.clone(),
            state,
        });
        if block.prev_hash != self.head {
            let lca = self.tree.lca(hash, self.head);
            if self.reported_forks.insert(lca) {
                self.new_forks.push(lca);
            }
        }
        if better((block.index, &hash), (self.head_height(), &self.head)) {
            self.head = hash;
        }
        true
    }

    fn fork_info(&self, lca: Digest) -> Option<ForkInfo> {
        let children = self.tree.children(&lca);
        if children.len() < 2 {
            return None;
        }
        let mut tips: Vec<(Digest, u64)> = children
            .iter()
            .map(|c| {
                let t = self.tree.best_tip(c);
                (t, self.tree.height(&t))
            })
            .collect();
        tips.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut conflicting = Vec::new();
        for (i, (ta, _)) in tips.iter().enumerate() {
            for (tb, _) in &tips[i + 1..] {
                let sa = &self.tree.get(ta).expect("tip").state;
                let sb = &self.tree.get(tb).expect("tip").state;
                for r in sa.reservations.iter() {
                    if sb.reservations.find(&r.train, &r.element, &r.window).is_some() {
                        continue;
                    }
                    for other in sb.reservations.on_element(&r.element) {
                        if other.conflicts_with(r)
                            && sa
                                .reservations
                                .find(&other.train, &other.element, &other.window)
                                .is_none()
                        {
                            conflicting.push((r.clone(), other.clone()));
                        }
                    }
                }
            }
        }
        Some(ForkInfo {
            common_index: self.tree.height(&lca),
            common_hash: lca,
            tips,
            conflicting,
        })
    }

    /// Bookkeeping after a message or tick: reorg handling, pool refresh and
    /// fork reports.
    fn finalize(&mut self, old_head: Digest, now: Tick, out: &mut Outbox) {
        for lca in std::mem::take(&mut self.new_forks) {
            match self.fork_info(lca) {
                Some(info) => out.event(NodeEvent::ForkDetected(info)),
                // Reported once it really has two branches.
                None => {
                    self.reported_forks.remove(&lca);
                }
            }
        }
        if self.head == old_head {
            return;
        }
        let new_head = self.head;
        let lca = self.tree.lca(old_head, new_head);
        let retracted = self.tree.path(&lca, &old_head);
        let applied = self.tree.path(&lca, &new_head);
        let applied_ids: HashSet<Digest> = applied.iter().flat_map(|b| b.tx_list.iter().map(|t| t.txid)).collect();

        let mut reproposed = 0;
        let mut halted: BTreeSet<TrainId> = BTreeSet::new();
        for b in &retracted {
            for tx in &b.tx_list {
                if applied_ids.contains(&tx.txid) {
                    continue;
                }
                self.on_head.remove(&tx.txid);
                let shared = self
                    .home
                    .get(&tx.txid)
                    .map(|h| h.tx.clone())
                    .unwrap_or_else(|| Arc::new(tx.clone()));
                if let Some(h) = self.home.get_mut(&tx.txid) {
                    h.status = TxStatus::Pending;
                }
                self.pool.insert(PoolEntry {
                    tx: shared,
                    arrival: now,
                    reproposed: true,
                });
                reproposed += 1;
                if let TxBody::Reserve(p) = &tx.body {
                    halted.insert(p.train.clone());
                }
            }
        }
        for b in &applied {
            for tx in &b.tx_list {
                self.on_head.insert(tx.txid, b.index);
                self.pool.remove(&tx.txid);
                if let Some(h) = self.home.get_mut(&tx.txid) {
                    if !matches!(h.status, TxStatus::Committed { .. }) {
                        h.status = TxStatus::Committed { block: b.index };
                        out.event(NodeEvent::TxCommitted {
                            tx: h.tx.clone(),
                            block: b.index,
                            latency: now.saturating_sub(h.submitted),
                        });
                    }
                }
            }
        }
        if !retracted.is_empty() {
            out.event(NodeEvent::Reorg {
                common_index: self.tree.height(&lca),
                old_head,
                new_head,
                retracted: retracted.len(),
                reproposed,
            });
        }
        for train in halted {
            if self.must_halt.insert(train.clone()) {
                out.event(NodeEvent::MustHalt { train });
            }
        }
        out.event(NodeEvent::HeadChanged {
            head: new_head,
            height: self.head_height(),
        });
        self.revalidate_pool(now, out);
    }

    /// Evicts pool entries the new head state rejects. A reproposed Reserve
    /// that now conflicts is a cross-branch double booking: raise an alarm.
    fn revalidate_pool(&mut self, now: Tick, out: &mut Outbox) {
        let (rules, topo) = self.gate_parts();
        let gate = Gatekeeper::new(&topo, &rules.registry, &rules.contract);
        let state = self.head_state();
        let mut evicted = Vec::new();
        for e in self.pool.iter() {
            if let Err(f) = precheck(&gate, &state, &e.tx, now) {
                evicted.push((e.tx.txid, f));
            }
        }
        for (txid, fault) in evicted {
            let entry = self.pool.remove(&txid).expect("present");
            if entry.reproposed && fault == TxFault::Reject(RejectReason::Conflict) {
                if let TxBody::Reserve(p) = &entry.tx.body {
                    if let Some(c) = state.reservations.first_conflict(&p.element, &p.window) {
                        out.event(NodeEvent::SafetyAlarm {
                            txid,
                            reservation: Reservation {
                                train: p.train.clone(),
                                element: p.element.clone(),
                                window: p.window,
                                required_position: p.required_position.clone(),
                                fee: p.fee,
                            },
                            conflicting: c.clone(),
                        });
                    }
                }
            }
            if let Some(h) = self.home.get_mut(&txid) {
                h.status = TxStatus::Rejected(fault);
                out.event(NodeEvent::TxRejected {
                    tx: h.tx.clone(),
                    fault,
                });
            }
        }
    }
}
