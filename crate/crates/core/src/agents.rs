//! Train-side behaviour: plan, book element by element, roll back on failure,
//! run with entry checks at every element boundary, release eagerly.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::consensus::node::{Outbox, TxStatus};
use crate::consensus::Node;
use crate::contract::{fee_for, Reservation};
use crate::crypto::{Digest, KeyPair};
use crate::ledger::tx::{OccupancyPayload, ReleasePayload, ReservePayload, SwitchCommandPayload};
use crate::ledger::{LedgerState, Transaction, TxBody};
use crate::routing::{find_candidate_routes, is_available, schedule, TimedRoute};
use crate::sim::physical::Physical;
use crate::topology::Topology;
use crate::types::{ElementId, NodeId, Tick, TimeWindow, TrainId, WalletAddress};

fn default_s() -> Tick {
    5
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> Tick {
    20
}
fn default_k() -> usize {
    3
}
fn default_lookahead() -> usize {
    1
}

/// Scenario-level description of one train's journey.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub train: TrainId,
    pub origin: ElementId,
    pub destination: ElementId,
    pub depart: Tick,
    #[serde(default = "default_s")]
    pub ticks_per_element: Tick,
    pub home_node: NodeId,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ticks: Tick,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub margin: Tick,
    /// How many elements ahead of the next one switch commands are issued for.
    #[serde(default = "default_lookahead")]
    pub switch_lookahead: usize,
    /// A Reserve not committed this long after submission counts as failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub booking_timeout_ticks: Option<Tick>,
    /// Minimum gap between planning and departure, leaving time to book.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub booking_lead_ticks: Option<Tick>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Planning,
    Booking,
    RollingBack,
    Waiting,
    Running,
    EmergencyStopped,
    Arrived,
    Failed,
}

impl AgentStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, AgentStatus::Arrived | AgentStatus::Failed)
    }
}

/// Everything an agent may touch during one step.
pub struct AgentEnv<'a> {
    pub now: Tick,
    pub topo: &'a Topology,
    pub node: &'a mut Node,
    pub out: &'a mut Outbox,
    pub physical: &'a mut Physical,
    pub events: &'a mut Vec<(&'static str, Value)>,
    /// False when element twins report occupancy instead of trains.
    pub train_reports_occupancy: bool,
    pub block_interval: Tick,
    pub max_latency: Tick,
}

#[derive(Debug, Clone)]
struct Booking {
    next: usize,
    pending: Option<(Digest, Tick)>,
}

#[derive(Debug, Clone)]
pub struct TrainAgent {
    pub spec: AgentSpec,
    key: KeyPair,
    nonce: u64,
    pub status: AgentStatus,
    /// Departure the next plan aims for.
    pub depart: Tick,
    pub retries_left: u32,
    pub booked: Option<TimedRoute>,
    /// Index of the current element in `booked`.
    pub at: Option<usize>,
    pub position: Option<ElementId>,
    pub departed: bool,
    /// Tick the train entered its current element.
    entered_at: Tick,
    pub failure: Option<String>,
    booking: Option<Booking>,
    pre_balance: u64,
    /// Route index a scripted fault forces to fail on the first attempt.
    pub induce_failure_at: Option<usize>,
    /// Fixed candidate for the first attempt, supplied by a human.
    chosen: Option<TimedRoute>,
    releases: BTreeMap<(ElementId, TimeWindow), (Digest, Tick)>,
    occupancy_txs: BTreeMap<ElementId, (Digest, Tick)>,
    switch_txs: BTreeMap<ElementId, (Digest, Tick)>,
    acked: BTreeSet<usize>,
}

fn within(now: Tick, since: Tick, span: Tick) -> bool {
    now < since + span
}

impl TrainAgent {
    pub fn new(spec: AgentSpec, key: KeyPair) -> Self {
        TrainAgent {
            depart: spec.depart,
            retries_left: spec.max_retries,
            spec,
            key,
            nonce: 0,
            status: AgentStatus::Planning,
            booked: None,
            at: None,
            position: None,
            departed: false,
            entered_at: 0,
            failure: None,
            booking: None,
            pre_balance: 0,
            induce_failure_at: None,
            chosen: None,
            releases: BTreeMap::new(),
            occupancy_txs: BTreeMap::new(),
            switch_txs: BTreeMap::new(),
            acked: BTreeSet::new(),
        }
    }

    /// An agent that books a route picked outside, then behaves as usual.
    pub fn with_route(spec: AgentSpec, key: KeyPair, route: TimedRoute) -> Self {
        let mut a = Self::new(spec, key);
        a.depart = route.depart;
        a.chosen = Some(route);
        a
    }

    pub fn train(&self) -> &TrainId {
        &self.spec.train
    }

    pub fn wallet(&self) -> &WalletAddress {
        self.key.address()
    }

    /// Stops a journey that has not departed yet; its reservations get released.
    pub fn cancel(&mut self) -> bool {
        if self.departed || self.status.is_terminal() {
            return false;
        }
        self.fail_with("Cancelled");
        true
    }

    fn fail_with(&mut self, reason: &str) {
        self.status = AgentStatus::Failed;
        self.failure = Some(reason.to_string());
        self.booked = None;
        self.booking = None;
    }

    fn booking_timeout(&self, env: &AgentEnv<'_>) -> Tick {
        self.spec
            .booking_timeout_ticks
            .unwrap_or(4 * env.block_interval + 4 * env.max_latency)
    }

    fn booking_lead(&self, env: &AgentEnv<'_>, elements: usize) -> Tick {
        self.spec
            .booking_lead_ticks
            .unwrap_or_else(|| (elements as Tick + 2) * (env.block_interval + 2 * env.max_latency))
    }

    fn submit(&mut self, env: &mut AgentEnv<'_>, body: TxBody) -> (Digest, TxStatus) {
        let committed = env.node.head_state().last_nonce(self.key.address()).unwrap_or(0);
        self.nonce = self.nonce.max(committed) + 1;
        let alg = env.node.rules().alg;
        let tx = Transaction::new_signed(&self.key, self.nonce, body, alg);
        let id = tx.txid;
        let status = env.node.submit(tx, env.now, env.out);
        (id, status)
    }

    fn emit(&self, env: &mut AgentEnv<'_>, kind: &'static str, mut payload: Value) {
        payload["train"] = json!(self.spec.train);
        env.events.push((kind, payload));
    }

    pub fn step(&mut self, env: &mut AgentEnv<'_>) {
        let state = env.node.head_state();
        self.housekeeping(env, &state);
        match self.status {
            AgentStatus::Planning => self.plan(env, &state),
            AgentStatus::Booking => self.book(env),
            AgentStatus::RollingBack => self.roll_back(env, &state),
            AgentStatus::Waiting | AgentStatus::Running | AgentStatus::EmergencyStopped => self.drive(env, &state),
            AgentStatus::Arrived | AgentStatus::Failed => {}
        }
    }

    /// Index from which the current plan still needs reservations.
    fn first_needed(&self) -> usize {
        match self.at {
            Some(i) => i + 1,
            None if self.position.is_some() => 1,
            None => 0,
        }
    }

    fn wanted(&self, r: &Reservation) -> bool {
        if self.position.as_ref() == Some(&r.element) {
            return true;
        }
        let Some(tr) = &self.booked else {
            return false;
        };
        let from = self.first_needed();
        tr.route
            .elements
            .iter()
            .zip(&tr.windows)
            .skip(from)
            .any(|(s, w)| s.element == r.element && *w == r.window)
    }

    /// Releases reservations the train no longer needs and keeps its own
    /// occupancy records in line with where it physically is.
    fn housekeeping(&mut self, env: &mut AgentEnv<'_>, state: &LedgerState) {
        let node = &*env.node;
        let retry_gap = env.block_interval + 2 * env.max_latency;
        let now = env.now;
        self.releases
            .retain(|_, (id, at)| node.tx_status(id) == Some(TxStatus::Pending) || within(now, *at, retry_gap));
        self.occupancy_txs
            .retain(|_, (id, at)| node.tx_status(id) == Some(TxStatus::Pending) || within(now, *at, retry_gap));

        let unwanted: Vec<Reservation> = state
            .reservations
            .for_train(&self.spec.train)
            .filter(|r| !self.wanted(r) && !self.releases.contains_key(&(r.element.clone(), r.window)))
            // The contract refuses while another train stands on the element.
            .filter(|r| state.occupancy_is.get(&r.element).is_none_or(|t| t == &self.spec.train))
            .cloned()
            .collect();
        for r in unwanted {
            let body = TxBody::Release(ReleasePayload {
                train: self.spec.train.clone(),
                element: r.element.clone(),
                window: r.window,
                rollback: true,
                implicit: false,
            });
            let (id, _) = self.submit(env, body);
            self.releases.insert((r.element.clone(), r.window), (id, env.now));
            self.emit(
                env,
                "RollbackRelease",
                json!({"element": r.element, "window": r.window, "fee": r.fee}),
            );
        }

        if !env.train_reports_occupancy {
            return;
        }
        let mut fixes: Vec<(ElementId, Option<TrainId>)> = Vec::new();
        if let Some(pos) = &self.position {
            if self.departed && state.occupancy_is.get(pos) != Some(&self.spec.train) {
                fixes.push((pos.clone(), Some(self.spec.train.clone())));
            }
        }
        for (el, t) in &state.occupancy_is {
            if t == &self.spec.train && self.position.as_ref() != Some(el) {
                fixes.push((el.clone(), None));
            }
        }
        for (el, who) in fixes {
            if self.occupancy_txs.contains_key(&el) {
                continue;
            }
            let (id, _) = self.submit(
                env,
                TxBody::OccupancyReport(OccupancyPayload {
                    element: el.clone(),
                    train: who,
                }),
            );
            self.occupancy_txs.insert(el, (id, env.now));
        }
    }

    fn plan(&mut self, env: &mut AgentEnv<'_>, state: &LedgerState) {
        // Old reservations are being released; planning around them would
        // make the new booking collide with itself.
        let lingering = state
            .reservations
            .for_train(&self.spec.train)
            .any(|r| self.position.as_ref() != Some(&r.element));
        if lingering {
            return;
        }
        let from = self.position.clone().unwrap_or_else(|| self.spec.origin.clone());
        let start = usize::from(self.position.is_some());
        let chosen = if let Some(c) = self.chosen.take() {
            c
        } else {
            let routes = match find_candidate_routes(env.topo, &from, &self.spec.destination, self.spec.k) {
                Ok(r) if !r.is_empty() => r,
                _ => {
                    self.fail_with("NoRoute");
                    self.emit(env, "AgentFailed", json!({"reason": "NoRoute"}));
                    return;
                }
            };
            let longest = routes.iter().map(|r| r.len()).max().unwrap_or(1);
            let depart = self.depart.max(env.now + self.booking_lead(env, longest));
            let s = self.spec.ticks_per_element;
            let pick = routes
                .iter()
                .map(|r| schedule(r, depart, s, self.spec.margin))
                .find(|t| available_from(t, state, start));
            match pick {
                Some(t) => t,
                None => {
                    if self.retries_left == 0 {
                        self.fail_with("OutOfRetries");
                        self.emit(env, "AgentFailed", json!({"reason": "OutOfRetries"}));
                        return;
                    }
                    self.retries_left -= 1;
                    self.depart = depart + self.spec.retry_backoff_ticks;
                    self.emit(
                        env,
                        "Replan",
                        json!({"reason": "NoAvailableRoute", "depart": self.depart}),
                    );
                    return;
                }
            }
        };
        let fees = chosen.fees(env.topo);
        self.pre_balance = state.balance(self.key.address());
        self.emit(
            env,
            "PlanChosen",
            json!({
                "route": chosen.route.ids().collect::<Vec<_>>(),
                "depart": chosen.depart,
                "total_fee": fees.iter().skip(start).sum::<u64>(),
                "from_index": start,
            }),
        );
        self.depart = chosen.depart;
        self.booked = Some(chosen);
        self.booking = Some(Booking {
            next: start,
            pending: None,
        });
        self.acked.clear();
        self.status = AgentStatus::Booking;
    }

    fn book(&mut self, env: &mut AgentEnv<'_>) {
        let tr = self.booked.clone().expect("booking has a route");
        let mut b = self.booking.clone().expect("booking state");
        'step: {
            if let Some((id, since)) = b.pending {
                match env.node.tx_status(&id) {
                    Some(TxStatus::Committed { .. }) => {
                        self.emit(
                            env,
                            "ReserveCommitted",
                            json!({"index": b.next, "element": tr.route.elements[b.next].element, "window": tr.windows[b.next]}),
                        );
                        b.next += 1;
                        b.pending = None;
                    }
                    Some(TxStatus::Rejected(f)) => return self.booking_failed(env, b.next, f.as_str()),
                    _ => {
                        if env.now >= since + self.booking_timeout(env) {
                            return self.booking_failed(env, b.next, "Timeout");
                        }
                        break 'step;
                    }
                }
            }
            if b.next >= tr.route.len() {
                self.booking = None;
                self.status = AgentStatus::Waiting;
                self.emit(
                    env,
                    "Booked",
                    json!({"route": tr.route.ids().collect::<Vec<_>>(), "depart": tr.depart}),
                );
                return;
            }
            if self.induce_failure_at == Some(b.next) {
                self.induce_failure_at = None;
                return self.booking_failed(env, b.next, "Induced");
            }
            let step = &tr.route.elements[b.next];
            let window = tr.windows[b.next];
            let price = env.topo.element(&step.element).map_or(0, |e| e.price_per_tick);
            let body = TxBody::Reserve(ReservePayload {
                train: self.spec.train.clone(),
                element: step.element.clone(),
                window,
                required_position: step.required_position.clone(),
                fee: fee_for(price, &window),
            });
            let (id, status) = self.submit(env, body);
            if let TxStatus::Rejected(f) = status {
                return self.booking_failed(env, b.next, f.as_str());
            }
            b.pending = Some((id, env.now));
        }
        self.booking = Some(b);
    }

    fn booking_failed(&mut self, env: &mut AgentEnv<'_>, index: usize, reason: &str) {
        let element = self.booked.as_ref().map(|t| t.route.elements[index].element.clone());
        self.emit(
            env,
            "BookingFailure",
            json!({"index": index, "element": element, "reason": reason}),
        );
        self.booked = None;
        self.booking = None;
        self.status = AgentStatus::RollingBack;
    }

    fn roll_back(&mut self, env: &mut AgentEnv<'_>, state: &LedgerState) {
        let holding = state
            .reservations
            .for_train(&self.spec.train)
            .any(|r| self.position.as_ref() != Some(&r.element));
        if holding || !self.releases.is_empty() {
            return;
        }
        let balance = state.balance(self.key.address());
        self.emit(
            env,
            "RollbackComplete",
            json!({"balance": balance, "pre_booking_balance": self.pre_balance}),
        );
        if self.retries_left == 0 {
            self.fail_with("OutOfRetries");
            self.emit(env, "AgentFailed", json!({"reason": "OutOfRetries"}));
            return;
        }
        self.retries_left -= 1;
        self.depart += self.spec.retry_backoff_ticks;
        self.status = AgentStatus::Planning;
    }

    fn replan(&mut self, env: &mut AgentEnv<'_>, reason: &str) {
        self.emit(env, "Replan", json!({"reason": reason}));
        self.booked = None;
        self.at = None;
        self.status = AgentStatus::Planning;
    }

    fn drive(&mut self, env: &mut AgentEnv<'_>, state: &LedgerState) {
        let tr = self.booked.clone().expect("driving needs a route");
        let next = self.first_needed();

        if env.node.must_halt(&self.spec.train) {
            let intact = (next..tr.route.len()).all(|j| {
                state
                    .reservations
                    .find(&self.spec.train, &tr.route.elements[j].element, &tr.windows[j])
                    .is_some()
            });
            env.node.clear_halt(&self.spec.train);
            if !intact {
                self.emit(env, "MustHaltReplan", json!({}));
                return self.replan(env, "BookingLost");
            }
            self.emit(env, "MustHaltCleared", json!({}));
        }

        self.command_switches(env, state, &tr, next);

        let s = self.spec.ticks_per_element;
        if next >= tr.route.len() {
            let last = tr.route.len() - 1;
            if env.now >= tr.windows[last].start().max(self.entered_at) + s {
                self.arrive(env, state, &tr);
            }
            return;
        }
        // A late train still needs a full element time per element.
        if env.now < tr.windows[next].start() || (self.position.is_some() && env.now < self.entered_at + s) {
            return;
        }
        if env.now >= tr.windows[next].end() {
            return self.replan(env, "WindowPassed");
        }
        let step = &tr.route.elements[next];
        let target = &step.element;
        let failed = if !state
            .reservations
            .on_element(target)
            .any(|r| r.train == self.spec.train && r.window.contains(env.now))
        {
            Some("NoReservation")
        } else if state.occupancy_is.get(target).is_some_and(|t| t != &self.spec.train) {
            Some("Occupied")
        } else if step
            .required_position
            .as_ref()
            .is_some_and(|p| state.switch_is.get(target) != Some(p))
        {
            Some("SwitchPosition")
        } else if !env.physical.is_free(target) {
            Some("PhysicallyOccupied")
        } else {
            None
        };
        if let Some(reason) = failed {
            if self.status != AgentStatus::EmergencyStopped {
                self.status = AgentStatus::EmergencyStopped;
                self.emit(env, "EmergencyStop", json!({"element": target, "reason": reason}));
            }
            return;
        }
        self.advance(env, state, &tr, next);
    }

    fn command_switches(&mut self, env: &mut AgentEnv<'_>, state: &LedgerState, tr: &TimedRoute, next: usize) {
        let retry_gap = env.block_interval + 2 * env.max_latency;
        let upto = (next + self.spec.switch_lookahead).min(tr.route.len());
        for j in next..upto {
            let step = &tr.route.elements[j];
            let Some(req) = &step.required_position else {
                continue;
            };
            if state.switch_is.get(&step.element) == Some(req) {
                if self.acked.insert(j) {
                    self.emit(env, "SwitchAcked", json!({"element": step.element, "position": req}));
                }
                continue;
            }
            if state.switch_should_be.get(&step.element) == Some(req) {
                continue;
            }
            if let Some((id, at)) = self.switch_txs.get(&step.element) {
                if env.node.tx_status(id) == Some(TxStatus::Pending) || within(env.now, *at, retry_gap) {
                    continue;
                }
            }
            let body = TxBody::SwitchCommand(SwitchCommandPayload {
                train: self.spec.train.clone(),
                element: step.element.clone(),
                position: req.clone(),
            });
            let (id, _) = self.submit(env, body);
            self.switch_txs.insert(step.element.clone(), (id, env.now));
            self.emit(
                env,
                "SwitchCommanded",
                json!({"element": step.element, "position": req}),
            );
        }
    }

    fn release_eagerly(&mut self, env: &mut AgentEnv<'_>, state: &LedgerState, element: &ElementId) {
        let held: Vec<Reservation> = state
            .reservations
            .on_element(element)
            .filter(|r| r.train == self.spec.train)
            .cloned()
            .collect();
        for r in held {
            if self.releases.contains_key(&(r.element.clone(), r.window)) {
                continue;
            }
            let body = TxBody::Release(ReleasePayload {
                train: self.spec.train.clone(),
                element: r.element.clone(),
                window: r.window,
                rollback: false,
                implicit: false,
            });
            let (id, _) = self.submit(env, body);
            self.releases.insert((r.element.clone(), r.window), (id, env.now));
            self.emit(env, "EagerRelease", json!({"element": r.element, "window": r.window}));
        }
    }

    fn report_occupancy(&mut self, env: &mut AgentEnv<'_>, element: &ElementId, who: Option<TrainId>) {
        if !env.train_reports_occupancy {
            return;
        }
        let (id, _) = self.submit(
            env,
            TxBody::OccupancyReport(OccupancyPayload {
                element: element.clone(),
                train: who,
            }),
        );
        self.occupancy_txs.insert(element.clone(), (id, env.now));
    }

    fn advance(&mut self, env: &mut AgentEnv<'_>, state: &LedgerState, tr: &TimedRoute, next: usize) {
        let step = &tr.route.elements[next];
        let prev = self.position.clone();
        env.physical.enter(
            &self.spec.train,
            prev.as_ref(),
            &step.element,
            step.required_position.as_deref(),
        );
        if self.status == AgentStatus::EmergencyStopped {
            self.emit(env, "EmergencyCleared", json!({"element": step.element}));
        }
        if !self.departed {
            self.departed = true;
            self.emit(
                env,
                "Departed",
                json!({"element": step.element, "scheduled": tr.depart}),
            );
        }
        self.at = Some(next);
        self.entered_at = env.now;
        self.position = Some(step.element.clone());
        self.status = AgentStatus::Running;
        self.emit(env, "EnteredElement", json!({"element": step.element, "index": next}));
        self.report_occupancy(env, &step.element, Some(self.spec.train.clone()));
        if let Some(p) = prev {
            self.report_occupancy(env, &p, None);
            self.release_eagerly(env, state, &p);
        }
    }

    fn arrive(&mut self, env: &mut AgentEnv<'_>, state: &LedgerState, tr: &TimedRoute) {
        let Some(last) = self.position.clone() else {
            return;
        };
        env.physical.leave(&self.spec.train, &last);
        self.position = None;
        self.at = None;
        self.status = AgentStatus::Arrived;
        self.report_occupancy(env, &last, None);
        self.release_eagerly(env, state, &last);
        self.emit(
            env,
            "Arrived",
            json!({"element": last, "scheduled": tr.arrival(), "late_by": env.now.saturating_sub(tr.arrival())}),
        );
        self.booked = None;
    }
}

/// Like [`is_available`] but ignoring the first `start` elements, which the
/// train already holds or stands on.
fn available_from(t: &TimedRoute, state: &LedgerState, start: usize) -> bool {
    if start == 0 {
        return is_available(t, state);
    }
    t.route
        .ids()
        .zip(&t.windows)
        .skip(start)
        .all(|(id, w)| state.reservations.first_conflict(id, w).is_none())
}
