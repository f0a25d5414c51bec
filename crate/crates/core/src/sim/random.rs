//! Seeded generator of diamond-chain scenarios for the randomized oracle runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::consensus::ConsensusMode;
use crate::crypto::{HashAlg, KeyPair, SigScheme};
use crate::sim::scenario::Scenario;
use crate::types::Tick;

/// Knobs a caller may pin; `None` means drawn from the seed.
#[derive(Debug, Clone, Default)]
pub struct RandomParams {
    pub nodes: Option<usize>,
    pub trains: Option<usize>,
    pub diamonds: Option<usize>,
    pub latency: Option<(Tick, Tick)>,
    /// Drop probability in percent.
    pub drop_percent: Option<u64>,
    pub mode: Option<ConsensusMode>,
    pub run_until: Option<Tick>,
}

impl RandomParams {
    /// The fixed network used for the liveness runs.
    pub fn liveness() -> Self {
        RandomParams {
            nodes: Some(5),
            latency: Some((1, 2)),
            drop_percent: Some(0),
            mode: Some(ConsensusMode::Poa),
            ..Default::default()
        }
    }
}

/// `d` diamonds in a row. Diamond `i` is entry block `E{i}`, switch `A{i}`,
/// legs `L{i}` (left) and `R{i}` (right), switch `J{i}`; `END` closes the line.
pub fn diamond_chain(d: usize, rng: &mut ChaCha8Rng, owner: &str) -> Value {
    let mut elements = Vec::new();
    let mut edges = Vec::new();
    let block = |id: String, len: u64, price: u64| json!({"id": id, "kind": "block", "length_m": len, "price_per_tick": price, "owner_wallet": owner});
    let switch = |id: String, price: u64| {
        json!({"id": id, "kind": "switch", "length_m": 30, "price_per_tick": price, "owner_wallet": owner,
               "positions": ["left", "right"], "default_position": "left"})
    };
    let mut both = |a: &str, b: &str, pos: Option<&str>| {
        for (from, to) in [(a, b), (b, a)] {
            let mut e = json!({"from": from, "to": to});
            if let Some(p) = pos {
                e["required_position"] = json!(p);
            }
            edges.push(e);
        }
    };
    for i in 0..d {
        let (e, a, l, r, j) = (
            format!("E{i}"),
            format!("A{i}"),
            format!("L{i}"),
            format!("R{i}"),
            format!("J{i}"),
        );
        let left_len = rng.gen_range(80..=200);
        let mut right_len = rng.gen_range(80..=200);
        if right_len == left_len {
            right_len += 1;
        }
        elements.push(block(e.clone(), rng.gen_range(80..=200), rng.gen_range(1..=3)));
        elements.push(switch(a.clone(), rng.gen_range(2..=4)));
        elements.push(block(l.clone(), left_len, rng.gen_range(1..=3)));
        elements.push(block(r.clone(), right_len, rng.gen_range(1..=3)));
        elements.push(switch(j.clone(), rng.gen_range(2..=4)));
        both(&e, &a, None);
        both(&a, &l, Some("left"));
        both(&a, &r, Some("right"));
        both(&l, &j, Some("left"));
        both(&r, &j, Some("right"));
        let next = if i + 1 == d {
            "END".to_string()
        } else {
            format!("E{}", i + 1)
        };
        both(&j, &next, None);
    }
    elements.push(block("END".into(), 100, 1));
    json!({"elements": elements, "edges": edges})
}

pub fn random_scenario(seed: u64, params: &RandomParams) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let owner = KeyPair::derive("infra", SigScheme::Ed25519, HashAlg::Sha256)
        .address()
        .to_string();
    let d = params.diamonds.unwrap_or_else(|| rng.gen_range(2..=7));
    let topology = diamond_chain(d, &mut rng, &owner);
    let n_nodes = params.nodes.unwrap_or_else(|| rng.gen_range(3..=7));
    let n_trains = params.trains.unwrap_or_else(|| rng.gen_range(5..=20));
    let (lat_min, lat_max) = params.latency.unwrap_or_else(|| {
        let a = rng.gen_range(1..=5);
        let b = rng.gen_range(1..=5);
        (a.min(b), a.max(b))
    });
    let drop = params.drop_percent.unwrap_or_else(|| rng.gen_range(0..=5));
    let mode = params.mode.unwrap_or_else(|| {
        *[
            ConsensusMode::Poa,
            ConsensusMode::Poa,
            ConsensusMode::Poa,
            ConsensusMode::Vote,
            ConsensusMode::Pow,
        ]
        .choose(&mut rng)
        .expect("non-empty")
    });
    let interval = match mode {
        ConsensusMode::Vote => 2 * lat_max + 2,
        _ => lat_max + 1,
    };
    let consensus = match mode {
        ConsensusMode::Poa => json!({"mode": "poa", "block_interval_ticks": interval}),
        ConsensusMode::Vote => json!({"mode": "vote", "block_interval_ticks": interval,
                                      "threshold": {"kind": "fraction", "f": "0.51"}}),
        ConsensusMode::Pow => json!({"mode": "pow", "block_interval_ticks": interval, "pow_difficulty_bits": 4}),
    };

    let mut allocations = serde_json::Map::new();
    allocations.insert("infra".into(), json!(0));
    let nodes: Vec<Value> = (0..n_nodes)
        .map(|i| {
            allocations.insert(format!("node{i}"), json!(0));
            json!({"id": format!("N{i}"), "wallet": format!("node{i}")})
        })
        .collect();
    let s = 2 * interval + 2 * lat_max + 5 + rng.gen_range(0..=3);
    let mut trains = Vec::new();
    let mut agents = Vec::new();
    let stops: Vec<String> = (0..d).map(|i| format!("E{i}")).chain(["END".to_string()]).collect();
    let mut latest_end = 0;
    for t in 0..n_trains {
        let id = format!("T{t}");
        let wallet = format!("train{t}");
        allocations.insert(wallet.clone(), json!(rng.gen_range(500..=5000)));
        trains.push(json!({"id": id, "wallet": wallet}));
        let from = rng.gen_range(0..d);
        let hops = rng.gen_range(1..=3).min(d - from);
        let depart = rng.gen_range(0..=150);
        let elements = 4 * hops as Tick + 1;
        latest_end = latest_end.max(depart + (elements + 2) * (interval + 2 * lat_max) + elements * s);
        agents.push(json!({
            "train": id,
            "origin": stops[from],
            "destination": stops[from + hops],
            "depart": depart,
            "ticks_per_element": s,
            "home_node": format!("N{}", rng.gen_range(0..n_nodes)),
            "switch_lookahead": 2,
            "retry_backoff_ticks": 2 * s,
        }));
    }
    let run_until = params.run_until.unwrap_or(latest_end + 100);
    let doc = json!({
        "topology": topology,
        "genesis": {"allocations": allocations, "trains": trains, "nodes": nodes},
        "consensus": consensus,
        "net": {"latency_ticks": {"min": lat_min, "max": lat_max}, "drop_probability": if drop == 0 { "0".to_string() } else { format!("{drop}/100") }},
        "agents": agents,
        "run_until": run_until,
        "seed": seed,
    });
    serde_json::from_value(doc).expect("generated scenario is well formed")
}
