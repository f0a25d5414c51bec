//! The gatekeeper: validates and applies every transaction kind against a
//! [`LedgerState`]. Reservation exclusivity, switch interlocking, payment and
//! release rules all live here; everything is a pure function of its inputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ledger::genesis::Registry;
use crate::ledger::state::LedgerState;
use crate::ledger::tx::{
    OccupancyPayload, ReleasePayload, ReservePayload, SwitchAckPayload, SwitchCommandPayload, Transaction,
    TransferPayload, TxBody,
};
use crate::topology::Topology;
use crate::types::{ElementId, Tick, TimeWindow, TrainId, WalletAddress};

/// One committed booking of one element for one window.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Reservation {
    pub train: TrainId,
    pub element: ElementId,
    pub window: TimeWindow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_position: Option<String>,
    pub fee: u64,
}

impl Reservation {
    pub fn conflicts_with(&self, other: &Reservation) -> bool {
        self.element == other.element && self.window.overlaps(&other.window)
    }
}

impl From<&ReservePayload> for Reservation {
    fn from(p: &ReservePayload) -> Self {
        Reservation {
            train: p.train.clone(),
            element: p.element.clone(),
            window: p.window,
            required_position: p.required_position.clone(),
            fee: p.fee,
        }
    }
}

/// Why the gatekeeper refused a transaction. The string forms are part of the API.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    Conflict,
    InsufficientFunds,
    BadFee,
    UnknownElement,
    NotOwner,
    NoSuchReservation,
    Occupied,
    WrongPosition,
    Expired,
}

impl RejectReason {
    pub const ALL: [RejectReason; 9] = [
        RejectReason::Conflict,
        RejectReason::InsufficientFunds,
        RejectReason::BadFee,
        RejectReason::UnknownElement,
        RejectReason::NotOwner,
        RejectReason::NoSuchReservation,
        RejectReason::Occupied,
        RejectReason::WrongPosition,
        RejectReason::Expired,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::Conflict => "Conflict",
            RejectReason::InsufficientFunds => "InsufficientFunds",
            RejectReason::BadFee => "BadFee",
            RejectReason::UnknownElement => "UnknownElement",
            RejectReason::NotOwner => "NotOwner",
            RejectReason::NoSuchReservation => "NoSuchReservation",
            RejectReason::Occupied => "Occupied",
            RejectReason::WrongPosition => "WrongPosition",
            RejectReason::Expired => "Expired",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RejectReason {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RejectReason::ALL.into_iter().find(|r| r.as_str() == s).ok_or(())
    }
}

/// Who is allowed to report element occupancy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OccupancyReporter {
    #[default]
    Train,
    Element,
}

/// Chain-wide contract parameters, fixed in genesis.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractRules {
    #[serde(default)]
    pub occupancy_reporter: OccupancyReporter,
    /// Ticks after a window ends before it may be released implicitly.
    #[serde(default)]
    pub implicit_release_grace: Tick,
}

/// Total fee for holding `price_per_tick` over `window`.
pub fn fee_for(price_per_tick: u64, window: &TimeWindow) -> u64 {
    price_per_tick.saturating_mul(window.len())
}

/// Implicit releases due at `now`: windows ended at least `grace` ticks ago whose
/// element is not held by the reserving train.
pub fn expire_reservations(state: &LedgerState, now: Tick, grace: Tick) -> Vec<ReleasePayload> {
    state
        .reservations
        .iter()
        .filter(|r| r.window.end().saturating_add(grace) <= now)
        .filter(|r| state.occupancy_is.get(&r.element) != Some(&r.train))
        .map(|r| ReleasePayload {
            train: r.train.clone(),
            element: r.element.clone(),
            window: r.window,
            rollback: false,
            implicit: true,
        })
        .collect()
}

/// Contract logic bound to one topology and genesis registry.
#[derive(Debug, Clone, Copy)]
pub struct Gatekeeper<'a> {
    pub topo: &'a Topology,
    pub registry: &'a Registry,
    pub rules: &'a ContractRules,
}

type Verdict = Result<(), RejectReason>;

impl<'a> Gatekeeper<'a> {
    pub fn new(topo: &'a Topology, registry: &'a Registry, rules: &'a ContractRules) -> Self {
        Self { topo, registry, rules }
    }

    /// Pure accept/reject decision for `tx` at ledger time `now`.
    pub fn validate(&self, state: &LedgerState, tx: &Transaction, now: Tick) -> Verdict {
        let sender = &tx.sender;
        match &tx.body {
            TxBody::Reserve(p) => self.validate_reserve(state, sender, p, now),
            TxBody::Release(p) => self.validate_release(state, sender, p, now),
            TxBody::Transfer(p) => validate_transfer(state, sender, p),
            TxBody::OccupancyReport(p) => self.validate_occupancy(state, sender, p),
            TxBody::SwitchCommand(p) => self.validate_switch_command(state, sender, p, now),
            TxBody::SwitchAck(p) => self.validate_switch_ack(state, sender, p),
        }
    }

    fn train_wallet_is(&self, train: &TrainId, sender: &WalletAddress) -> bool {
        self.registry.train_wallet(train) == Some(sender)
    }

    fn validate_reserve(&self, state: &LedgerState, sender: &WalletAddress, p: &ReservePayload, now: Tick) -> Verdict {
        let el = self.topo.element(&p.element).ok_or(RejectReason::UnknownElement)?;
        if !self.train_wallet_is(&p.train, sender) {
            return Err(RejectReason::NotOwner);
        }
        match (&p.required_position, el.is_switch()) {
            (Some(pos), true) if el.has_position(pos) => {}
            (None, false) => {}
            _ => return Err(RejectReason::WrongPosition),
        }
        if p.fee != fee_for(el.price_per_tick, &p.window) {
            return Err(RejectReason::BadFee);
        }
        if p.window.end() <= now {
            return Err(RejectReason::Expired);
        }
        if state.reservations.first_conflict(&p.element, &p.window).is_some() {
            return Err(RejectReason::Conflict);
        }
        if state.balance(sender) < p.fee {
            return Err(RejectReason::InsufficientFunds);
        }
        Ok(())
    }

    fn validate_release(&self, state: &LedgerState, sender: &WalletAddress, p: &ReleasePayload, now: Tick) -> Verdict {
        let el = self.topo.element(&p.element).ok_or(RejectReason::UnknownElement)?;
        let held = state
            .reservations
            .find(&p.train, &p.element, &p.window)
            .ok_or(RejectReason::NoSuchReservation)?;
        let occupant = state.occupancy_is.get(&p.element);
        if p.implicit {
            if p.rollback || !self.registry.is_node_wallet(sender) {
                return Err(RejectReason::NotOwner);
            }
            if p.window.end().saturating_add(self.rules.implicit_release_grace) > now {
                return Err(RejectReason::Expired);
            }
            if occupant == Some(&p.train) {
                return Err(RejectReason::Occupied);
            }
            return Ok(());
        }
        if !self.train_wallet_is(&p.train, sender) {
            return Err(RejectReason::NotOwner);
        }
        if occupant.is_some_and(|t| t != &p.train) {
            return Err(RejectReason::Occupied);
        }
        if refund_due(p, now) && state.balance(&el.owner_wallet) < held.fee {
            return Err(RejectReason::InsufficientFunds);
        }
        Ok(())
    }

    fn validate_occupancy(&self, state: &LedgerState, sender: &WalletAddress, p: &OccupancyPayload) -> Verdict {
        let el = self.topo.element(&p.element).ok_or(RejectReason::UnknownElement)?;
        let occupant = state.occupancy_is.get(&p.element);
        match self.rules.occupancy_reporter {
            OccupancyReporter::Element => {
                if sender != &el.owner_wallet {
                    return Err(RejectReason::NotOwner);
                }
                if let Some(train) = &p.train {
                    if self.registry.train_wallet(train).is_none() {
                        return Err(RejectReason::NotOwner);
                    }
                    if occupant.is_some_and(|t| t != train) {
                        return Err(RejectReason::Occupied);
                    }
                }
                Ok(())
            }
            OccupancyReporter::Train => match (&p.train, occupant) {
                (Some(train), _) if !self.train_wallet_is(train, sender) => Err(RejectReason::NotOwner),
                (Some(train), Some(current)) if current != train => Err(RejectReason::Occupied),
                (Some(_), _) => Ok(()),
                (None, Some(current)) if !self.train_wallet_is(current, sender) => Err(RejectReason::NotOwner),
                (None, _) => {
                    if self.registry.wallet_train(sender).is_some() {
                        Ok(())
                    } else {
                        Err(RejectReason::NotOwner)
                    }
                }
            },
        }
    }

    /// A switch may only be commanded by the train whose reservation is the
    /// earliest one still held on it, and only into that reservation's position.
    fn validate_switch_command(
        &self,
        state: &LedgerState,
        sender: &WalletAddress,
        p: &SwitchCommandPayload,
        now: Tick,
    ) -> Verdict {
        let el = self.topo.element(&p.element).ok_or(RejectReason::UnknownElement)?;
        if !el.is_switch() || !el.has_position(&p.position) {
            return Err(RejectReason::WrongPosition);
        }
        if !self.train_wallet_is(&p.train, sender) {
            return Err(RejectReason::NotOwner);
        }
        let on_switch: Vec<&Reservation> = state.reservations.on_element(&p.element).collect();
        let own: Vec<&&Reservation> = on_switch.iter().filter(|r| r.train == p.train).collect();
        if own.is_empty() {
            return Err(RejectReason::NoSuchReservation);
        }
        let target = own.iter().find(|r| r.window.end() > now).ok_or(RejectReason::Expired)?;
        let preempted = on_switch
            .iter()
            .any(|r| r.train != p.train && r.window.start() < target.window.start());
        if preempted {
            return Err(RejectReason::NotOwner);
        }
        if target.required_position.as_deref() != Some(p.position.as_str()) {
            return Err(RejectReason::WrongPosition);
        }
        if state.occupancy_is.get(&p.element).is_some_and(|t| t != &p.train) {
            return Err(RejectReason::Occupied);
        }
        Ok(())
    }

    fn validate_switch_ack(&self, state: &LedgerState, sender: &WalletAddress, p: &SwitchAckPayload) -> Verdict {
        let el = self.topo.element(&p.element).ok_or(RejectReason::UnknownElement)?;
        if !el.is_switch() {
            return Err(RejectReason::WrongPosition);
        }
        if sender != &el.owner_wallet {
            return Err(RejectReason::NotOwner);
        }
        if state.switch_should_be.get(&p.element) != Some(&p.position) {
            return Err(RejectReason::WrongPosition);
        }
        Ok(())
    }

    /// Applies an accepted transaction in place. Callers must have validated it.
    pub fn apply_in_place(&self, state: &mut LedgerState, tx: &Transaction, now: Tick) {
        match &tx.body {
            TxBody::Reserve(p) => {
                let owner = &self.element_owner(&p.element);
                state.move_funds(&tx.sender, owner, p.fee);
                state.reservations.insert(Reservation::from(p));
            }
            TxBody::Release(p) => {
                if let Some(held) = state.reservations.remove(&p.train, &p.element, &p.window) {
                    if refund_due(p, now) {
                        let owner = self.element_owner(&p.element);
                        let wallet = self.registry.train_wallet(&p.train).expect("validated train").clone();
                        state.move_funds(&owner, &wallet, held.fee);
                    }
                }
            }
            TxBody::Transfer(p) => state.move_funds(&tx.sender, &p.to, p.amount),
            TxBody::OccupancyReport(p) => match &p.train {
                Some(train) => {
                    state.occupancy_is.insert(p.element.clone(), train.clone());
                }
                None => {
                    state.occupancy_is.remove(&p.element);
                }
            },
            TxBody::SwitchCommand(p) => {
                // Until the twin acknowledges, the physical position is unknown.
                if state.switch_is.get(&p.element) != Some(&p.position) {
                    state.switch_is.remove(&p.element);
                }
                state.switch_should_be.insert(p.element.clone(), p.position.clone());
            }
            TxBody::SwitchAck(p) => {
                state.switch_is.insert(p.element.clone(), p.position.clone());
            }
        }
    }

    /// Pure form of [`Gatekeeper::apply_in_place`].
    pub fn apply(&self, state: &LedgerState, tx: &Transaction, now: Tick) -> LedgerState {
        let mut next = state.clone();
        self.apply_in_place(&mut next, tx, now);
        next
    }

    pub fn expire_reservations(&self, state: &LedgerState, now: Tick) -> Vec<ReleasePayload> {
        expire_reservations(state, now, self.rules.implicit_release_grace)
    }

    fn element_owner(&self, element: &ElementId) -> WalletAddress {
        self.topo
            .element(element)
            .expect("validated element")
            .owner_wallet
            .clone()
    }
}

fn refund_due(p: &ReleasePayload, now: Tick) -> bool {
    p.rollback && !p.implicit && now < p.window.start()
}

fn validate_transfer(state: &LedgerState, sender: &WalletAddress, p: &TransferPayload) -> Verdict {
    if p.amount == 0 {
        return Err(RejectReason::BadFee);
    }
    if state.balance(sender) < p.amount {
        return Err(RejectReason::InsufficientFunds);
    }
    Ok(())
}

#[cfg(test)]
mod tests;
