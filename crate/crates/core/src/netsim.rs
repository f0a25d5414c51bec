//! Deterministic simulated network: seeded per-link latency and loss,
//! half-open partitions, scripted message-kind drops and a stable delivery
//! order by (delivery tick, send sequence).

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{NodeId, Tick};

/// Name of the only supported generator; recorded so logs say what produced them.
pub const RNG_NAME: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Latency {
    pub min: Tick,
    pub max: Tick,
}

/// Probability in [0, 1) as an exact rational. Written as `"num/den"` or a decimal string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Probability {
    num: u64,
    den: u64,
}

impl Probability {
    pub const ZERO: Probability = Probability { num: 0, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self, String> {
        if den == 0 || num >= den {
            return Err(format!("probability {num}/{den} must lie in [0, 1)"));
        }
        Ok(Self { num, den })
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> bool {
        rng.gen_range(0..self.den) < self.num
    }
}

impl std::str::FromStr for Probability {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "0" {
            return Ok(Probability::ZERO);
        }
        let f: crate::consensus::Fraction = s.parse()?;
        Probability::new(f.num(), f.den())
    }
}

impl std::fmt::Display for Probability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl Serialize for Probability {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Probability {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub latency_ticks: Latency,
    #[serde(default = "zero_probability")]
    pub drop_probability: Probability,
    /// Defaults to the scenario seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn zero_probability() -> Probability {
    Probability::ZERO
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.latency_ticks.min > self.latency_ticks.max {
            return Err("latency_ticks.min must not exceed max".into());
        }
        if self.latency_ticks.min == 0 {
            return Err("latency_ticks.min must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub groups: Vec<BTreeSet<NodeId>>,
    pub from_tick: Tick,
    pub to_tick: Tick,
}

impl PartitionSpec {
    pub fn validate(&self, nodes: &[NodeId]) -> Result<(), String> {
        if self.from_tick >= self.to_tick {
            return Err("partition from_tick must be before to_tick".into());
        }
        let mut seen = BTreeSet::new();
        for g in &self.groups {
            for n in g {
                if !seen.insert(n) {
                    return Err(format!("node {n} appears in two partition groups"));
                }
            }
        }
        let all: BTreeSet<&NodeId> = nodes.iter().collect();
        if seen != all {
            return Err("partition groups must cover exactly the simulated nodes".into());
        }
        Ok(())
    }

    pub fn active_at(&self, tick: Tick) -> bool {
        self.from_tick <= tick && tick < self.to_tick
    }

    pub fn separates(&self, a: &NodeId, b: &NodeId) -> bool {
        let group = |n: &NodeId| self.groups.iter().position(|g| g.contains(n));
        group(a) != group(b)
    }
}

/// Drops every message of one kind sent within `[from_tick, to_tick)`,
/// optionally restricted to one sender or receiver.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropRule {
    pub message: String,
    pub from_tick: Tick,
    pub to_tick: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<NodeId>,
}

impl DropRule {
    fn matches(&self, kind: &str, from: &NodeId, to: &NodeId, tick: Tick) -> bool {
        self.message == kind
            && self.from_tick <= tick
            && tick < self.to_tick
            && self.from.as_ref().is_none_or(|f| f == from)
            && self.to.as_ref().is_none_or(|t| t == to)
    }
}

/// Anything the network can carry must name its kind for drop rules.
pub trait MessageKind {
    fn kind(&self) -> &'static str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SendOutcome {
    Scheduled { deliver_at: Tick },
    DroppedRandom,
    DroppedPartition,
    DroppedRule,
}

#[derive(Debug, Clone)]
pub struct Envelope<M> {
    pub from: NodeId,
    pub to: NodeId,
    pub sent: Tick,
    pub deliver_at: Tick,
    pub seq: u64,
    pub msg: M,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_random: u64,
    pub dropped_partition: u64,
    pub dropped_rule: u64,
}

/// The message fabric between simulated nodes.
#[derive(Debug)]
pub struct Network<M> {
    config: NetConfig,
    links: BTreeMap<(NodeId, NodeId), ChaCha8Rng>,
    queue: BinaryHeap<Reverse<(Tick, u64)>>,
    in_flight: BTreeMap<u64, Envelope<M>>,
    next_seq: u64,
    partitions: Vec<PartitionSpec>,
    drop_rules: Vec<DropRule>,
    stats: NetStats,
}

impl<M: MessageKind> Network<M> {
    /// One generator per directed link, each an independent stream of the
    /// same seed, so traffic on one link never perturbs another.
    pub fn new(config: NetConfig, seed: u64, nodes: &[NodeId]) -> Self {
        let mut sorted = nodes.to_vec();
        sorted.sort();
        let n = sorted.len() as u64;
        let mut links = BTreeMap::new();
        for (i, a) in sorted.iter().enumerate() {
            for (j, b) in sorted.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed.unwrap_or(seed));
                rng.set_stream(i as u64 * n + j as u64 + 1);
                links.insert((a.clone(), b.clone()), rng);
            }
        }
        Network {
            config,
            links,
            queue: BinaryHeap::new(),
            in_flight: BTreeMap::new(),
            next_seq: 0,
            partitions: Vec::new(),
            drop_rules: Vec::new(),
            stats: NetStats::default(),
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn add_partition(&mut self, p: PartitionSpec) {
        self.partitions.push(p);
    }

    pub fn add_drop_rule(&mut self, r: DropRule) {
        self.drop_rules.push(r);
    }

    pub fn partitions(&self) -> &[PartitionSpec] {
        &self.partitions
    }

    /// Ends every partition active at `now` so that messages sent at `now` cross.
    pub fn heal(&mut self, now: Tick) -> usize {
        let mut healed = 0;
        for p in &mut self.partitions {
            if p.active_at(now) {
                p.to_tick = now;
                healed += 1;
            }
        }
        healed
    }

    pub fn partition_active(&self, now: Tick) -> bool {
        self.partitions.iter().any(|p| p.active_at(now))
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn pending(&self) -> usize {
        self.in_flight.len()
    }

    /// Schedules `msg` or drops it. Latency and loss are both drawn for every
    /// send so a link's random stream advances identically whatever happens.
    pub fn send(&mut self, from: &NodeId, to: &NodeId, msg: M, now: Tick) -> SendOutcome {
        self.stats.sent += 1;
        let rng = self
            .links
            .get_mut(&(from.clone(), to.clone()))
            .expect("both endpoints are simulated nodes");
        let Latency { min, max } = self.config.latency_ticks;
        let latency = rng.gen_range(min..=max);
        let lost = self.config.drop_probability.sample(rng);
        if self
            .partitions
            .iter()
            .any(|p| p.active_at(now) && p.separates(from, to))
        {
            self.stats.dropped_partition += 1;
            return SendOutcome::DroppedPartition;
        }
        if self.drop_rules.iter().any(|r| r.matches(msg.kind(), from, to, now)) {
            self.stats.dropped_rule += 1;
            return SendOutcome::DroppedRule;
        }
        if lost {
            self.stats.dropped_random += 1;
            return SendOutcome::DroppedRandom;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let deliver_at = now + latency;
        self.queue.push(Reverse((deliver_at, seq)));
        self.in_flight.insert(
            seq,
            Envelope {
                from: from.clone(),
                to: to.clone(),
                sent: now,
                deliver_at,
                seq,
                msg,
            },
        );
        SendOutcome::Scheduled { deliver_at }
    }

    /// Removes and returns every message due at or before `now`, in
    /// (delivery tick, send sequence) order.
    pub fn take_due(&mut self, now: Tick) -> Vec<Envelope<M>> {
        let mut out = Vec::new();
        while let Some(Reverse((tick, seq))) = self.queue.peek().copied() {
            if tick > now {
                break;
            }
            self.queue.pop();
            out.push(self.in_flight.remove(&seq).expect("queued message exists"));
        }
        self.stats.delivered += out.len() as u64;
        out
    }

    /// Delivery tick of the earliest in-flight message.
    pub fn next_delivery(&self) -> Option<Tick> {
        self.queue.peek().map(|Reverse((t, _))| *t)
    }
}

/// Monotonic simulation clock.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    now: Tick,
}

impl SimClock {
    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn advance(&mut self) -> Tick {
        self.now += 1;
        self.now
    }
}
