#![allow(dead_code)]

use std::collections::BTreeSet;

use railchain::fixtures::INFRA_WALLET;
use railchain::routing::{Route, RouteStep};
use railchain::topology::{Edge, ElementKind, Topology, TrackElement};
use railchain::{ElementId, WalletAddress};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const POSITIONS: [&str; 3] = ["left", "mid", "right"];

/// A random graph of 2..=`max` elements with random switches and edges.
pub fn random_small_topology(seed: u64, max: usize) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.gen_range(2..=max);
        let elements: Vec<TrackElement> = (0..n)
            .map(|i| {
                let switch = rng.gen_bool(0.35);
                let positions: BTreeSet<String> = if switch {
                    let k = rng.gen_range(2..=3);
                    let mut p = POSITIONS.to_vec();
                    p.shuffle(&mut rng);
                    p[..k].iter().map(|s| s.to_string()).collect()
                } else {
                    BTreeSet::new()
                };
                TrackElement {
                    id: ElementId::new(format!("E{i}")).unwrap(),
                    kind: if switch {
                        ElementKind::Switch
                    } else {
                        ElementKind::Block
                    },
                    length_m: rng.gen_range(1..=4) * 10,
                    price_per_tick: rng.gen_range(0..=3),
                    owner_wallet: WalletAddress::new(INFRA_WALLET).unwrap(),
                    default_position: positions.iter().next().cloned(),
                    positions: switch.then_some(positions),
                    ui_hint: None,
                }
            })
            .collect();
        let mut edges = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a == b || !rng.gen_bool(0.4) {
                    continue;
                }
                let ends = [&elements[a], &elements[b]];
                let switches: Vec<&TrackElement> = ends.into_iter().filter(|e| e.positions.is_some()).collect();
                let mut common: Option<BTreeSet<String>> = None;
                for s in &switches {
                    let p = s.positions.clone().unwrap();
                    common = Some(match common {
                        None => p,
                        Some(c) => c.intersection(&p).cloned().collect(),
                    });
                }
                let required_position = match common {
                    Some(c) if !c.is_empty() && rng.gen_bool(0.7) => {
                        let v: Vec<&String> = c.iter().collect();
                        Some(v[rng.gen_range(0..v.len())].clone())
                    }
                    _ => None,
                };
                edges.push(Edge {
                    from: elements[a].id.clone(),
                    to: elements[b].id.clone(),
                    required_position,
                });
            }
        }
        if let Ok(t) = Topology::new(elements, edges) {
            return t;
        }
    }
}

/// Every simple path by plain recursion, positions resolved straight from the
/// edge list, sorted by (length, element sequence).
pub fn dfs_all_routes(topo: &Topology, from: &ElementId, to: &ElementId) -> Vec<Route> {
    fn walk(topo: &Topology, path: &mut Vec<ElementId>, to: &ElementId, out: &mut Vec<Vec<ElementId>>) {
        let at = path.last().unwrap().clone();
        if &at == to {
            out.push(path.clone());
            return;
        }
        for e in topo.edges() {
            if e.from == at && !path.contains(&e.to) {
                path.push(e.to.clone());
                walk(topo, path, to, out);
                path.pop();
            }
        }
    }
    let mut paths = Vec::new();
    walk(topo, &mut vec![from.clone()], to, &mut paths);
    let edge_rp = |a: &ElementId, b: &ElementId| {
        topo.edges()
            .iter()
            .find(|e| &e.from == a && &e.to == b)
            .unwrap()
            .required_position
            .clone()
    };
    let mut routes: Vec<(u64, Vec<ElementId>, Route)> = Vec::new();
    'paths: for p in paths {
        let mut steps = Vec::new();
        for (i, id) in p.iter().enumerate() {
            let el = topo.element(id).unwrap();
            if el.positions.is_none() {
                steps.push(RouteStep {
                    element: id.clone(),
                    required_position: None,
                });
                continue;
            }
            let mut named = BTreeSet::new();
            if i > 0 {
                named.extend(edge_rp(&p[i - 1], id));
            }
            if i + 1 < p.len() {
                named.extend(edge_rp(id, &p[i + 1]));
            }
            if named.len() > 1 {
                continue 'paths;
            }
            let pos = named.into_iter().next().or_else(|| el.default_position.clone());
            steps.push(RouteStep {
                element: id.clone(),
                required_position: pos,
            });
        }
        let len = p.iter().map(|id| topo.element(id).unwrap().length_m).sum();
        routes.push((len, p, Route { elements: steps }));
    }
    routes.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
    routes.into_iter().map(|r| r.2).collect()
}
