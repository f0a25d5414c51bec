//! The single-threaded simulation loop: one `advance()` owns every node,
//! the network, the physical railway, the twins and the train agents.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use crate::agents::{AgentEnv, AgentSpec, AgentStatus, TrainAgent};
use crate::consensus::node::{Outbox, Target, TxStatus};
use crate::consensus::{Message, Node, NodeEvent, NodeParams};
use crate::contract::OccupancyReporter;
use crate::crypto::{Digest, KeyPair};
use crate::ledger::{
    Account, Chain, ChainRules, GenesisConfig, LedgerBlock, LedgerState, NodeRecord, SigCache, TrainRecord, Transaction,
};
use crate::netsim::{Network, PartitionSpec, RNG_NAME};
use crate::routing::{find_candidate_routes, is_available, schedule, TimedRoute};
use crate::sim::events::EventLog;
use crate::sim::metrics::RunMetrics;
use crate::sim::oracles::{exclusivity_violations, money_conserved};
use crate::sim::physical::Physical;
use crate::sim::scenario::{FaultSpec, Scenario, ScenarioError};
use crate::sim::twins::Twins;
use crate::topology::Topology;
use crate::types::{ElementId, NodeId, Tick, TrainId, WalletAddress};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub violations: Vec<String>,
    pub metrics: RunMetrics,
    pub final_state_hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub index: usize,
    pub route: TimedRoute,
    pub fees: Vec<u64>,
    pub total_fee: u64,
    pub available: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Journey {
    pub id: u64,
    pub train: TrainId,
    pub origin: ElementId,
    pub destination: ElementId,
    pub depart: Tick,
    pub candidates: Vec<Candidate>,
    pub booked: Option<usize>,
}

/// Parameters of an interactive journey request.
#[derive(Debug, Clone)]
pub struct JourneyRequest {
    pub origin: ElementId,
    pub destination: ElementId,
    pub depart: Tick,
    pub k: usize,
    pub train: Option<TrainId>,
    pub ticks_per_element: Tick,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ApiError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("conflict: {0}")]
    Conflict(String),
}

pub struct World {
    scenario: Scenario,
    topo: Arc<Topology>,
    rules: Arc<ChainRules>,
    genesis: Arc<LedgerBlock>,
    nodes: Vec<Node>,
    index: BTreeMap<NodeId, usize>,
    net: Network<Message>,
    physical: Physical,
    agents: Vec<TrainAgent>,
    twins: Twins,
    twin_node: usize,
    keys: BTreeMap<String, KeyPair>,
    train_labels: BTreeMap<TrainId, String>,
    log: EventLog,
    now: Tick,
    genesis_total: u128,
    stored: HashSet<Digest>,
    forks: HashSet<Digest>,
    open_forks: BTreeMap<Digest, u64>,
    /// Heads as of the start of the tick, so fork reports name the branch a
    /// node was on before it reorganised.
    tick_heads: Vec<Digest>,
    alarms: HashSet<Digest>,
    partition_marks: Vec<(bool, bool)>,
    violations: Vec<String>,
    draining: bool,
    journeys: BTreeMap<u64, Journey>,
    outcome: Option<RunOutcome>,
}

fn hex(d: &Digest) -> String {
    d.to_hex()
}

impl World {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let topo = scenario.topology()?;
        let (alg, scheme) = (scenario.hash_alg, scenario.sig_scheme);
        let g = &scenario.genesis;
        let mut keys = BTreeMap::new();
        let mut accounts = Vec::new();
        for (label, amount) in &g.allocations {
            accounts.push(Account::derive(label, *amount, scheme, alg));
            keys.insert(label.clone(), KeyPair::derive(label, scheme, alg));
        }
        let addr = |label: &str| keys[label].address().clone();
        let trains: Vec<TrainRecord> = g
            .trains
            .iter()
            .map(|t| TrainRecord {
                id: t.id.clone(),
                wallet: addr(&t.wallet),
            })
            .collect();
        let node_records: Vec<NodeRecord> = g
            .nodes
            .iter()
            .map(|n| NodeRecord {
                id: n.id.clone(),
                wallet: addr(&n.wallet),
                whitelisted: n.whitelisted,
            })
            .collect();
        let config = GenesisConfig {
            hash_alg: alg,
            sig_scheme: scheme,
            topology_hash: topo.content_hash(alg),
            accounts,
            trains,
            nodes: node_records,
            consensus: scenario.consensus.clone(),
            rules: scenario.rules.clone(),
        };
        let genesis_total = config.total_allocation();
        let genesis = Arc::new(LedgerBlock::genesis(config));
        let invalid = |e: String| ScenarioError::Invalid(e);
        let rules = Arc::new(ChainRules::from_genesis(&genesis).map_err(|e| invalid(e.to_string()))?);
        rules.check_topology(&topo).map_err(|e| invalid(e.to_string()))?;
        let topo = Arc::new(topo);

        let all_nodes = scenario.node_ids();
        let sig_cache = Arc::new(SigCache::default());
        let labels: BTreeMap<&NodeId, &String> = g.nodes.iter().map(|n| (&n.id, &n.wallet)).collect();
        let nodes: Vec<Node> = all_nodes
            .iter()
            .map(|id| {
                Node::new(NodeParams {
                    id: id.clone(),
                    key: keys[labels[id]].clone(),
                    rules: rules.clone(),
                    topo: topo.clone(),
                    genesis: genesis.clone(),
                    all_nodes: all_nodes.clone(),
                    seed: scenario.seed,
                    sig_cache: sig_cache.clone(),
                })
            })
            .collect();
        let index = all_nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();

        let mut net = Network::new(scenario.net.clone(), scenario.seed, &all_nodes);
        let mut partition_marks = Vec::new();
        for f in &scenario.faults {
            if let Some(p) = f.partition() {
                net.add_partition(p);
                partition_marks.push((false, false));
            }
            if let Some(r) = f.drop_rule() {
                net.add_drop_rule(r);
            }
        }

        let train_labels: BTreeMap<TrainId, String> =
            g.trains.iter().map(|t| (t.id.clone(), t.wallet.clone())).collect();
        let mut agents: Vec<TrainAgent> = scenario
            .agents
            .iter()
            .map(|spec| {
                let mut a = TrainAgent::new(spec.clone(), keys[&train_labels[&spec.train]].clone());
                for f in &scenario.faults {
                    if let FaultSpec::InduceBookingFailure { train, at_index } = f {
                        if train == &spec.train {
                            a.induce_failure_at = Some(*at_index);
                        }
                    }
                }
                a
            })
            .collect();
        agents.sort_by(|a, b| a.train().cmp(b.train()));

        let owner_wallets: BTreeSet<&WalletAddress> = topo.elements().map(|e| &e.owner_wallet).collect();
        let owners = keys
            .values()
            .filter(|k| owner_wallets.contains(k.address()))
            .map(|k| (k.address().clone(), k.clone()))
            .collect();
        let interval = scenario.consensus.block_interval_ticks;
        let twins = Twins::new(
            scenario.twins.actuation_delay,
            rules.contract.occupancy_reporter == OccupancyReporter::Element,
            interval + 2 * scenario.max_latency(),
            owners,
        );
        let twin_node = scenario
            .twins
            .node
            .as_ref()
            .map_or(0, |n| all_nodes.iter().position(|m| m == n).expect("validated"));

        let physical = Physical::new(&topo);
        let mut log = EventLog::default();
        log.push(
            0,
            "RunStarted",
            json!({
                "seed": scenario.seed,
                "rng": RNG_NAME,
                "genesis_hash": hex(&genesis.block_hash),
                "nodes": all_nodes,
                "trains": agents.iter().map(|a| a.train().clone()).collect::<Vec<_>>(),
                "mode": scenario.consensus.mode,
                "run_until": scenario.run_until,
            }),
        );
        Ok(World {
            scenario,
            topo,
            rules,
            genesis,
            nodes,
            index,
            net,
            physical,
            agents,
            twins,
            twin_node,
            keys,
            train_labels,
            log,
            now: 0,
            genesis_total,
            stored: HashSet::new(),
            forks: HashSet::new(),
            open_forks: BTreeMap::new(),
            tick_heads: Vec::new(),
            alarms: HashSet::new(),
            partition_marks,
            violations: Vec::new(),
            draining: false,
            journeys: BTreeMap::new(),
            outcome: None,
        })
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn rules(&self) -> &ChainRules {
        &self.rules
    }

    pub fn genesis(&self) -> &LedgerBlock {
        &self.genesis
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.index.get(id).map(|i| &self.nodes[*i])
    }

    pub fn agents(&self) -> &[TrainAgent] {
        &self.agents
    }

    pub fn agent(&self, train: &TrainId) -> Option<&TrainAgent> {
        self.agents.iter().find(|a| a.train() == train)
    }

    pub fn physical(&self) -> &Physical {
        &self.physical
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn genesis_total(&self) -> u128 {
        self.genesis_total
    }

    pub fn chain_of(&self, id: &NodeId) -> Option<Chain> {
        self.node(id).map(Node::chain)
    }

    pub fn outcome(&self) -> Option<&RunOutcome> {
        self.outcome.as_ref()
    }

    pub fn partition_active(&self) -> bool {
        self.net.partition_active(self.now)
    }

    fn violation(&mut self, oracle: &str, detail: Value) {
        self.violations.push(format!("{oracle}: {detail}"));
        self.log
            .push(self.now, "OracleViolation", json!({"oracle": oracle, "detail": detail}));
    }

    /// One tick: partitions, deliveries, node timers, twins, agents, safety checks.
    pub fn advance(&mut self) {
        self.now += 1;
        let now = self.now;
        self.track_partitions();
        self.tick_heads = self.nodes.iter().map(|n| n.head_hash()).collect();

        for env in self.net.take_due(now) {
            let i = self.index[&env.to];
            let mut out = Outbox::default();
            self.nodes[i].handle(&env.from, env.msg, now, &mut out);
            self.dispatch(i, out);
        }
        for i in 0..self.nodes.len() {
            let mut out = Outbox::default();
            self.nodes[i].on_tick(now, &mut out);
            self.dispatch(i, out);
        }
        if !self.draining {
            let mut out = Outbox::default();
            let mut events = Vec::new();
            self.twins.step(
                now,
                &self.topo,
                &mut self.nodes[self.twin_node],
                &mut out,
                &mut self.physical,
                &mut events,
            );
            self.dispatch(self.twin_node, out);
            self.record(events);
            self.step_agents();
        }
        self.check_safety();
        self.check_forks_resolved();
    }

    fn step_agents(&mut self) {
        let interval = self.scenario.consensus.block_interval_ticks;
        let max_latency = self.scenario.max_latency();
        let trains_report = self.rules.contract.occupancy_reporter == OccupancyReporter::Train;
        for k in 0..self.agents.len() {
            let home = self.index[&self.agents[k].spec.home_node];
            let mut out = Outbox::default();
            let mut events = Vec::new();
            {
                let mut env = AgentEnv {
                    now: self.now,
                    topo: &self.topo,
                    node: &mut self.nodes[home],
                    out: &mut out,
                    physical: &mut self.physical,
                    events: &mut events,
                    train_reports_occupancy: trains_report,
                    block_interval: interval,
                    max_latency,
                };
                self.agents[k].step(&mut env);
            }
            self.dispatch(home, out);
            self.record(events);
        }
    }

    fn record(&mut self, events: Vec<(&'static str, Value)>) {
        for (kind, payload) in events {
            self.log.push(self.now, kind, payload);
        }
    }

    fn track_partitions(&mut self) {
        let now = self.now;
        let mut healed = false;
        for (i, p) in self.net.partitions().iter().enumerate() {
            let (started, ended) = &mut self.partition_marks[i];
            if !*started && p.active_at(now) {
                *started = true;
                self.log.push(
                    now,
                    "PartitionStarted",
                    json!({"groups": p.groups, "from_tick": p.from_tick, "to_tick": p.to_tick}),
                );
            }
            if *started && !*ended && now >= p.to_tick {
                *ended = true;
                healed = true;
                self.log.push(now, "PartitionHealed", json!({"groups": p.groups}));
            }
        }
        if healed {
            self.sync_all();
        }
    }

    fn sync_all(&mut self) {
        for i in 0..self.nodes.len() {
            let mut out = Outbox::default();
            self.nodes[i].sync_all(self.now, &mut out);
            self.dispatch(i, out);
        }
    }

    fn dispatch(&mut self, from: usize, out: Outbox) {
        let sender = self.nodes[from].id().clone();
        for (target, msg) in out.sends {
            match target {
                Target::All => {
                    for j in 0..self.nodes.len() {
                        if j != from {
                            let to = self.nodes[j].id().clone();
                            self.net.send(&sender, &to, msg.clone(), self.now);
                        }
                    }
                }
                Target::To(to) => {
                    if self.index.contains_key(&to) {
                        self.net.send(&sender, &to, msg, self.now);
                    }
                }
            }
        }
        for e in out.events {
            self.node_event(from, e);
        }
    }

    fn node_event(&mut self, from: usize, e: NodeEvent) {
        let node = self.nodes[from].id().clone();
        let now = self.now;
        match e {
            NodeEvent::TxSubmitted { tx } => self.log.push(
                now,
                "TxSubmitted",
                json!({"node": node, "txid": hex(&tx.txid), "sender": tx.sender, "nonce": tx.nonce, "body": tx.body}),
            ),
            NodeEvent::TxCommitted { tx, block, latency } => self.log.push(
                now,
                "TxCommitted",
                json!({"node": node, "txid": hex(&tx.txid), "tx_kind": tx.kind(), "block": block, "latency": latency}),
            ),
            NodeEvent::TxRejected { tx, fault } => self.log.push(
                now,
                "TxRejected",
                json!({"node": node, "txid": hex(&tx.txid), "tx_kind": tx.kind(), "reason": fault.as_str()}),
            ),
            NodeEvent::BlockProposed { block } => self.log.push(
                now,
                "BlockProposed",
                json!({"node": node, "index": block.index, "hash": hex(&block.block_hash), "txs": block.tx_list.len()}),
            ),
            NodeEvent::BlockStored { block, state } => {
                if !self.stored.insert(block.block_hash) {
                    return;
                }
                self.log.push(
                    now,
                    "BlockCommitted",
                    json!({
                        "node": node,
                        "index": block.index,
                        "hash": hex(&block.block_hash),
                        "prev_hash": hex(&block.prev_hash),
                        "proposer": block.proposer,
                        "block_now": block.now,
                        "txs": block.tx_list.len(),
                    }),
                );
                self.check_block_state(&block, &state);
            }
            NodeEvent::BlockRejected { hash, index, proposer, reason } => self.log.push(
                now,
                "BlockRejected",
                json!({"node": node, "hash": hex(&hash), "index": index, "proposer": proposer, "reason": reason}),
            ),
            NodeEvent::HeadChanged { head, height } => {
                self.log.push(now, "HeadChanged", json!({"node": node, "head": hex(&head), "height": height}))
            }
            NodeEvent::VoteCast { block, proposer, decision, reason } => self.log.push(
                now,
                "VoteCast",
                json!({"node": node, "block": hex(&block), "proposer": proposer, "decision": decision, "reason": reason.map(|r| r.as_str())}),
            ),
            NodeEvent::ForkDetected(info) => {
                if !self.forks.insert(info.common_hash) {
                    return;
                }
                self.open_forks.insert(info.common_hash, info.common_index);
                let reporter = &self.nodes[from];
                let branch_heads: Vec<Value> = info
                    .tips
                    .iter()
                    .map(|(tip, height)| {
                        let child = reporter.tree().ancestor_at(*tip, info.common_index + 1);
                        let members: Vec<&NodeId> = self
                            .nodes
                            .iter()
                            .zip(&self.tick_heads)
                            .filter(|(n, _)| self.rules.registry.is_whitelisted(n.id()))
                            .filter(|(n, head)| n.tree().contains(&child) && n.tree().is_ancestor(&child, head))
                            .map(|(n, _)| n.id())
                            .collect();
                        json!({"nodes": members, "head": hex(tip), "length": height + 1})
                    })
                    .collect();
                let pairs: Vec<Value> = info.conflicting.iter().map(|(a, b)| json!([a, b])).collect();
                self.log.push(
                    now,
                    "ForkReport",
                    json!({
                        "node": node,
                        "common_prefix_index": info.common_index,
                        "common_hash": hex(&info.common_hash),
                        "branch_heads": branch_heads,
                        "conflicting_reservations": pairs,
                    }),
                );
            }
            NodeEvent::Reorg { common_index, old_head, new_head, retracted, reproposed } => self.log.push(
                now,
                "Reorg",
                json!({
                    "node": node,
                    "common_index": common_index,
                    "old_head": hex(&old_head),
                    "new_head": hex(&new_head),
                    "retracted": retracted,
                    "reproposed": reproposed,
                }),
            ),
            NodeEvent::SafetyAlarm { txid, reservation, conflicting } => {
                if !self.alarms.insert(txid) {
                    return;
                }
                self.log.push(
                    now,
                    "SafetyAlarm",
                    json!({"node": node, "txid": hex(&txid), "reservation_pair": [reservation, conflicting]}),
                );
            }
            NodeEvent::MustHalt { train } => self.log.push(now, "MustHalt", json!({"node": node, "train": train})),
        }
    }

    fn check_block_state(&mut self, block: &LedgerBlock, state: &LedgerState) {
        let clashes = exclusivity_violations(state);
        if !clashes.is_empty() {
            self.violation(
                "exclusivity",
                json!({"block": hex(&block.block_hash), "pairs": clashes}),
            );
        }
        if !money_conserved(state, self.genesis_total) {
            self.violation(
                "money_conservation",
                json!({"block": hex(&block.block_hash), "total": state.total_balance().to_string()}),
            );
        }
    }

    fn check_safety(&mut self) {
        for v in std::mem::take(&mut self.physical.violations) {
            self.violation("physical_safety", json!(v));
        }
        let mut at: BTreeMap<&ElementId, &TrainId> = BTreeMap::new();
        let mut clashes = Vec::new();
        for a in &self.agents {
            if let Some(p) = &a.position {
                if let Some(other) = at.insert(p, a.train()) {
                    clashes.push(json!({"element": p, "trains": [other, a.train()]}));
                }
            }
        }
        for c in clashes {
            self.violation("physical_safety", c);
        }
    }

    /// A fork is resolved once every whitelisted node's head descends from
    /// the same child of the common block, as seen in its own tree.
    fn check_forks_resolved(&mut self) {
        if self.open_forks.is_empty() {
            return;
        }
        let mut done = Vec::new();
        for (lca, idx) in &self.open_forks {
            let mut branch = None;
            let mut agreed = true;
            for n in self.nodes.iter().filter(|n| self.rules.registry.is_whitelisted(n.id())) {
                let head = n.head_hash();
                if !n.tree().contains(lca) || n.tree().height(&head) <= *idx || !n.tree().is_ancestor(lca, &head) {
                    agreed = false;
                    break;
                }
                let child = n.tree().ancestor_at(head, idx + 1);
                match branch {
                    None => branch = Some(child),
                    Some(b) if b == child => {}
                    Some(_) => {
                        agreed = false;
                        break;
                    }
                }
            }
            if agreed {
                done.push((*lca, branch.expect("at least one node")));
            }
        }
        for (lca, child) in done {
            self.open_forks.remove(&lca);
            self.log.push(
                self.now,
                "ForkResolved",
                json!({"common_hash": hex(&lca), "canonical_branch": hex(&child)}),
            );
        }
    }

    fn heads_agree(&self) -> bool {
        let mut heads = self
            .nodes
            .iter()
            .filter(|n| self.rules.registry.is_whitelisted(n.id()))
            .map(|n| n.head_hash());
        let first = heads.next();
        heads.all(|h| Some(h) == first)
    }

    fn quiescent(&self) -> bool {
        self.net.pending() == 0 && self.nodes.iter().all(|n| !n.has_open_proposal())
    }

    /// Full scripted run: advance to `run_until`, drain, finish.
    pub fn run(&mut self) -> RunOutcome {
        while self.now < self.scenario.run_until {
            self.advance();
        }
        self.finish()
    }

    /// Stops block production and lets messages and sync rounds settle.
    pub fn drain(&mut self) {
        self.draining = true;
        for n in &mut self.nodes {
            n.set_producing(false);
        }
        let limit = self.now + self.scenario.drain_limit;
        let interval = self.scenario.consensus.block_interval_ticks;
        let mut idle = 0;
        self.sync_all();
        while self.now < limit {
            if self.quiescent() {
                if self.heads_agree() || self.partition_active() {
                    break;
                }
                idle += 1;
                if idle >= interval {
                    idle = 0;
                    self.sync_all();
                }
            }
            self.advance();
        }
    }

    pub fn finish(&mut self) -> RunOutcome {
        if let Some(o) = &self.outcome {
            return o.clone();
        }
        self.drain();
        if self.partition_active() {
            self.log.push(
                self.now,
                "AgreementSkipped",
                json!({"reason": "partition still active"}),
            );
        } else if !self.heads_agree() {
            let heads: BTreeMap<&NodeId, String> = self.nodes.iter().map(|n| (n.id(), hex(&n.head_hash()))).collect();
            self.violation("agreement", json!({"heads": heads}));
        }
        self.check_liveness();
        let reference = &self.nodes[0];
        let final_hash = reference.head_state().state_hash(self.rules.alg).to_hex();
        let statuses: BTreeMap<&TrainId, AgentStatus> = self.agents.iter().map(|a| (a.train(), a.status)).collect();
        self.log.push(
            self.now,
            "RunFinished",
            json!({
                "final_state_hash": final_hash,
                "head": hex(&reference.head_hash()),
                "height": reference.head_height(),
                "violations": self.violations.len(),
                "agents": statuses,
                "net": self.net.stats(),
            }),
        );
        let outcome = RunOutcome {
            exit_code: if self.violations.is_empty() { 0 } else { 1 },
            violations: self.violations.clone(),
            metrics: RunMetrics::from_log(&self.log),
            final_state_hash: final_hash,
        };
        self.outcome = Some(outcome.clone());
        outcome
    }

    /// Transactions still pending at their home node that had three block
    /// intervals of production time to commit.
    fn check_liveness(&mut self) {
        let budget = 3 * self.scenario.consensus.block_interval_ticks;
        let end = self.scenario.run_until.min(self.now);
        let mut late = Vec::new();
        for n in &self.nodes {
            for h in n.home_txs() {
                if h.status == TxStatus::Pending && h.submitted + budget <= end {
                    late.push(json!({"node": n.id(), "txid": hex(&h.tx.txid), "submitted": h.submitted}));
                }
            }
        }
        for l in late {
            self.log.push(self.now, "LivenessViolation", l);
        }
    }

    // Interactive operations.

    fn node_index(&self, id: Option<&NodeId>) -> Result<usize, ApiError> {
        match id {
            None => Ok(0),
            Some(n) => self
                .index
                .get(n)
                .copied()
                .ok_or_else(|| ApiError::NotFound(format!("node {n}"))),
        }
    }

    pub fn head_state(&self, node: Option<&NodeId>) -> Result<(NodeId, Digest, u64, Arc<LedgerState>), ApiError> {
        let n = &self.nodes[self.node_index(node)?];
        Ok((n.id().clone(), n.head_hash(), n.head_height(), n.head_state()))
    }

    pub fn chain_from(&self, node: Option<&NodeId>, from: u64) -> Result<Vec<LedgerBlock>, ApiError> {
        let chain = self.nodes[self.node_index(node)?].chain();
        Ok(chain
            .blocks()
            .iter()
            .skip(from as usize)
            .map(|b| (**b).clone())
            .collect())
    }

    pub fn submit_tx(&mut self, node: Option<&NodeId>, tx: Transaction) -> Result<TxStatus, ApiError> {
        let i = self.node_index(node)?;
        let mut out = Outbox::default();
        let status = self.nodes[i].submit(tx, self.now, &mut out);
        self.dispatch(i, out);
        Ok(status)
    }

    pub fn journey(&self, id: u64) -> Option<&Journey> {
        self.journeys.get(&id)
    }

    pub fn request_journey(&mut self, req: JourneyRequest) -> Result<Journey, ApiError> {
        let train = match req.train {
            Some(t) => {
                if !self.train_labels.contains_key(&t) {
                    return Err(ApiError::NotFound(format!("train {t}")));
                }
                t
            }
            None => self
                .train_labels
                .keys()
                .find(|t| self.agent(t).is_none_or(|a| a.status.is_terminal()))
                .cloned()
                .ok_or_else(|| ApiError::Conflict("every train has an active journey".into()))?,
        };
        if req.ticks_per_element == 0 {
            return Err(ApiError::BadRequest("ticks_per_element must be at least 1".into()));
        }
        let routes = find_candidate_routes(&self.topo, &req.origin, &req.destination, req.k)
            .map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let state = self.nodes[0].head_state();
        let candidates = routes
            .iter()
            .enumerate()
            .map(|(index, r)| {
                let route = schedule(r, req.depart, req.ticks_per_element, 0);
                let fees = route.fees(&self.topo);
                Candidate {
                    index,
                    available: is_available(&route, &state),
                    total_fee: fees.iter().sum(),
                    fees,
                    route,
                }
            })
            .collect();
        let id = self.journeys.len() as u64 + 1;
        let j = Journey {
            id,
            train,
            origin: req.origin,
            destination: req.destination,
            depart: req.depart,
            candidates,
            booked: None,
        };
        self.journeys.insert(id, j.clone());
        self.log.push(
            self.now,
            "JourneyQuoted",
            json!({"journey": id, "train": j.train, "candidates": j.candidates.len()}),
        );
        Ok(j)
    }

    /// Hands the chosen candidate to a train agent that books it element by element.
    pub fn book_journey(&mut self, id: u64, candidate: usize, home: Option<&NodeId>) -> Result<Journey, ApiError> {
        let home = self.nodes[self.node_index(home)?].id().clone();
        let j = self
            .journeys
            .get(&id)
            .ok_or_else(|| ApiError::NotFound(format!("journey {id}")))?
            .clone();
        if j.booked.is_some() {
            return Err(ApiError::Conflict(format!("journey {id} is already booked")));
        }
        let c = j
            .candidates
            .get(candidate)
            .ok_or_else(|| ApiError::NotFound(format!("candidate {candidate}")))?;
        if self.agent(&j.train).is_some_and(|a| !a.status.is_terminal()) {
            return Err(ApiError::Conflict(format!(
                "train {} already has an active journey",
                j.train
            )));
        }
        let spec = AgentSpec {
            train: j.train.clone(),
            origin: j.origin.clone(),
            destination: j.destination.clone(),
            depart: j.depart,
            ticks_per_element: c.route.ticks_per_element,
            home_node: home,
            max_retries: 3,
            retry_backoff_ticks: 20,
            k: j.candidates.len().max(1),
            margin: 0,
            switch_lookahead: 1,
            booking_timeout_ticks: None,
            booking_lead_ticks: Some(0),
        };
        let key = self.keys[&self.train_labels[&j.train]].clone();
        let agent = TrainAgent::with_route(spec, key, c.route.clone());
        self.agents.retain(|a| a.train() != &j.train);
        self.agents.push(agent);
        self.agents.sort_by(|a, b| a.train().cmp(b.train()));
        let j = {
            let stored = self.journeys.get_mut(&id).expect("checked");
            stored.booked = Some(candidate);
            stored.clone()
        };
        self.log.push(
            self.now,
            "JourneyBooked",
            json!({"journey": id, "train": j.train, "candidate": candidate, "total_fee": c.total_fee}),
        );
        Ok(j)
    }

    pub fn cancel_journey(&mut self, id: u64) -> Result<bool, ApiError> {
        let j = self
            .journeys
            .get(&id)
            .ok_or_else(|| ApiError::NotFound(format!("journey {id}")))?
            .clone();
        if j.booked.is_none() {
            return Err(ApiError::Conflict(format!("journey {id} was never booked")));
        }
        let Some(a) = self.agents.iter_mut().find(|a| a.train() == &j.train) else {
            return Ok(false);
        };
        let cancelled = a.cancel();
        if cancelled {
            self.log
                .push(self.now, "JourneyCancelled", json!({"journey": id, "train": j.train}));
        }
        Ok(cancelled)
    }

    /// Starts an open-ended partition now.
    pub fn partition(&mut self, groups: Vec<BTreeSet<NodeId>>) -> Result<(), ApiError> {
        let p = PartitionSpec {
            groups,
            from_tick: self.now,
            to_tick: Tick::MAX,
        };
        p.validate(&self.scenario.node_ids()).map_err(ApiError::BadRequest)?;
        if self.partition_active() {
            return Err(ApiError::Conflict("a partition is already active".into()));
        }
        self.log.push(
            self.now,
            "PartitionStarted",
            json!({"groups": p.groups, "from_tick": p.from_tick}),
        );
        self.net.add_partition(p);
        self.partition_marks.push((true, false));
        Ok(())
    }

    /// Ends every active partition; returns how many were active.
    pub fn heal(&mut self) -> usize {
        let healed = self.net.heal(self.now);
        if healed == 0 {
            return 0;
        }
        for (i, p) in self.net.partitions().iter().enumerate() {
            let (started, ended) = &mut self.partition_marks[i];
            if *started && !*ended && p.to_tick <= self.now {
                *ended = true;
            }
        }
        self.log.push(self.now, "PartitionHealed", json!({"healed": healed}));
        self.sync_all();
        healed
    }

    pub fn step(&mut self, ticks: u64) {
        for _ in 0..ticks {
            self.advance();
        }
    }

    pub fn metrics(&self) -> RunMetrics {
        RunMetrics::from_log(&self.log)
    }

    pub fn wallet_balance(
        &self,
        node: Option<&NodeId>,
        wallet: &WalletAddress,
    ) -> Result<(u64, Option<u64>), ApiError> {
        let state = self.nodes[self.node_index(node)?].head_state();
        if !self.rules.keyring.contains(wallet) {
            return Err(ApiError::NotFound(format!("wallet {wallet}")));
        }
        Ok((state.balance(wallet), state.last_nonce(wallet)))
    }
}
