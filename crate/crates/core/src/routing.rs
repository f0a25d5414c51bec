//! Candidate route search, scheduling into time windows, and filtering
//! against committed reservations.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::contract::fee_for;
use crate::ledger::state::LedgerState;
use crate::topology::{Topology, TopologyError};
use crate::types::{ElementId, Tick, TimeWindow};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteStep {
    pub element: ElementId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_position: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    pub elements: Vec<RouteStep>,
}

impl Route {
    pub fn ids(&self) -> impl Iterator<Item = &ElementId> {
        self.elements.iter().map(|s| &s.element)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn length_m(&self, topo: &Topology) -> u64 {
        self.ids().filter_map(|id| topo.element(id)).map(|e| e.length_m).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedRoute {
    pub route: Route,
    pub depart: Tick,
    pub ticks_per_element: Tick,
    pub margin: Tick,
    pub windows: Vec<TimeWindow>,
}

impl TimedRoute {
    /// Per-element fees in route order.
    pub fn fees(&self, topo: &Topology) -> Vec<u64> {
        self.route
            .ids()
            .zip(&self.windows)
            .map(|(id, w)| topo.element(id).map_or(0, |e| fee_for(e.price_per_tick, w)))
            .collect()
    }

    pub fn total_fee(&self, topo: &Topology) -> u64 {
        self.fees(topo).iter().sum()
    }

    /// Tick at which the train has dwelt its slot on the last element.
    pub fn arrival(&self) -> Tick {
        self.depart + self.ticks_per_element * self.route.len() as Tick
    }
}

/// Position of every element along `path`, or `None` if the path asks one
/// switch for two different positions. A switch takes the position named by
/// its incident path edges, or its default if neither edge names one.
pub fn assign_positions(topo: &Topology, path: &[ElementId]) -> Option<Vec<RouteStep>> {
    let edge_pos = |a: &ElementId, b: &ElementId| -> Option<Option<String>> {
        topo.neighbors(a)
            .ok()?
            .iter()
            .find(|(to, _)| to == b)
            .map(|(_, p)| p.clone())
    };
    let mut steps = Vec::with_capacity(path.len());
    for (i, id) in path.iter().enumerate() {
        let el = topo.element(id)?;
        if !el.is_switch() {
            steps.push(RouteStep {
                element: id.clone(),
                required_position: None,
            });
            continue;
        }
        let mut named: Option<String> = None;
        let incident = [
            (i > 0).then(|| edge_pos(&path[i - 1], id)),
            path.get(i + 1).map(|next| edge_pos(id, next)),
        ];
        for pos in incident.into_iter().flatten() {
            match (pos?, &named) {
                (Some(p), Some(q)) if &p != q => return None,
                (Some(p), _) => named = Some(p),
                (None, _) => {}
            }
        }
        steps.push(RouteStep {
            element: id.clone(),
            required_position: named.or_else(|| el.default_position.clone()),
        });
    }
    Some(steps)
}

/// Whether the switch positions along a partial path are still consistent.
/// Only the switch before the last element can have become inconsistent.
fn prefix_consistent(topo: &Topology, path: &[ElementId]) -> bool {
    if path.len() < 3 {
        return true;
    }
    let tail = &path[path.len() - 3..];
    assign_positions(topo, tail).is_some()
}

/// Up to `k` simple paths from `from` to `to`, ordered by total length and then
/// by element sequence. Best-first over partial paths: a partial path never
/// sorts after its extensions because every element has positive length.
pub fn find_candidate_routes(
    topo: &Topology,
    from: &ElementId,
    to: &ElementId,
    k: usize,
) -> Result<Vec<Route>, TopologyError> {
    let start = topo
        .element(from)
        .ok_or_else(|| TopologyError::UnknownElement(from.clone()))?;
    if topo.element(to).is_none() {
        return Err(TopologyError::UnknownElement(to.clone()));
    }
    let mut out = Vec::new();
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((start.length_m, vec![from.clone()])));
    while let Some(Reverse((len, path))) = heap.pop() {
        if out.len() >= k {
            break;
        }
        let at = path.last().expect("paths are non-empty");
        if at == to {
            if let Some(elements) = assign_positions(topo, &path) {
                out.push(Route { elements });
            }
            continue;
        }
        for (next, _) in topo.neighbors(at)? {
            if path.contains(next) {
                continue;
            }
            let mut longer = path.clone();
            longer.push(next.clone());
            if !prefix_consistent(topo, &longer) {
                continue;
            }
            let add = topo.element(next).expect("edge endpoint exists").length_m;
            heap.push(Reverse((len + add, longer)));
        }
    }
    Ok(out)
}

/// Window `i` is `[depart + i*s, depart + (i+1)*s + margin)`.
pub fn schedule(route: &Route, depart: Tick, ticks_per_element: Tick, margin: Tick) -> TimedRoute {
    assert!(ticks_per_element >= 1, "ticks_per_element must be at least 1");
    let s = ticks_per_element;
    let windows = (0..route.len() as Tick)
        .map(|i| TimeWindow::new(depart + i * s, depart + (i + 1) * s + margin).expect("s >= 1"))
        .collect();
    TimedRoute {
        route: route.clone(),
        depart,
        ticks_per_element,
        margin,
        windows,
    }
}

pub fn is_available(candidate: &TimedRoute, state: &LedgerState) -> bool {
    candidate
        .route
        .ids()
        .zip(&candidate.windows)
        .all(|(id, w)| state.reservations.first_conflict(id, w).is_none())
}

/// Keeps, in order, the candidates none of whose windows overlap a committed reservation.
pub fn filter_available(candidates: Vec<TimedRoute>, state: &LedgerState) -> Vec<TimedRoute> {
    candidates.into_iter().filter(|c| is_available(c, state)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{DIAMOND, SWITCHY, TINY3};

    fn topo(json: &str) -> Topology {
        Topology::from_slice(json.as_bytes()).unwrap()
    }

    fn id(s: &str) -> ElementId {
        ElementId::new(s).unwrap()
    }

    fn render(r: &Route) -> Vec<String> {
        r.elements
            .iter()
            .map(|s| match &s.required_position {
                Some(p) => format!("{}({p})", s.element),
                None => s.element.to_string(),
            })
            .collect()
    }

    #[test]
    fn tiny3_unique_route() {
        let routes = find_candidate_routes(&topo(TINY3), &id("B1"), &id("B3"), 3).unwrap();
        assert_eq!(
            routes.iter().map(render).collect::<Vec<_>>(),
            vec![vec!["B1", "B2", "B3"]]
        );
    }

    #[test]
    fn switchy_route_takes_right_leg() {
        let routes = find_candidate_routes(&topo(SWITCHY), &id("B1"), &id("B3"), 3).unwrap();
        assert_eq!(
            routes.iter().map(render).collect::<Vec<_>>(),
            vec![vec!["B1", "S1(right)", "B3"]]
        );
    }

    #[test]
    fn switchy_has_no_route_between_legs() {
        // B2 -> S1 needs `left`, S1 -> B3 needs `right`: no consistent position.
        let routes = find_candidate_routes(&topo(SWITCHY), &id("B2"), &id("B3"), 3).unwrap();
        assert!(routes.is_empty());
    }

    #[test]
    fn diamond_both_middles_shorter_first() {
        // B1 S1 B2b S2 B3 = 100+30+100+30+100 = 360; via B2a = 410.
        let routes = find_candidate_routes(&topo(DIAMOND), &id("B1"), &id("B3"), 3).unwrap();
        assert_eq!(
            routes.iter().map(render).collect::<Vec<_>>(),
            vec![
                vec!["B1", "S1(right)", "B2b", "S2(right)", "B3"],
                vec!["B1", "S1(left)", "B2a", "S2(left)", "B3"],
            ]
        );
        let t = topo(DIAMOND);
        assert_eq!(routes[0].length_m(&t), 360);
        assert_eq!(routes[1].length_m(&t), 410);
    }

    #[test]
    fn k_limits_and_unknown_elements() {
        let t = topo(DIAMOND);
        assert_eq!(find_candidate_routes(&t, &id("B1"), &id("B3"), 1).unwrap().len(), 1);
        assert!(matches!(
            find_candidate_routes(&t, &id("X"), &id("B3"), 1),
            Err(TopologyError::UnknownElement(_))
        ));
        let single = find_candidate_routes(&t, &id("B2a"), &id("B2a"), 3).unwrap();
        assert_eq!(single.iter().map(render).collect::<Vec<_>>(), vec![vec!["B2a"]]);
    }

    #[test]
    fn schedule_formula() {
        let route = find_candidate_routes(&topo(TINY3), &id("B1"), &id("B3"), 1)
            .unwrap()
            .remove(0);
        let w = |a, b| TimeWindow::new(a, b).unwrap();
        assert_eq!(schedule(&route, 0, 5, 0).windows, vec![w(0, 5), w(5, 10), w(10, 15)]);
        assert_eq!(schedule(&route, 0, 5, 2).windows, vec![w(0, 7), w(5, 12), w(10, 17)]);
        let one = Route {
            elements: vec![route.elements[0].clone()],
        };
        assert_eq!(schedule(&one, 3, 4, 0).windows, vec![w(3, 7)]);
        assert_eq!(schedule(&route, 10, 5, 0).total_fee(&topo(TINY3)), 15);
    }
}
