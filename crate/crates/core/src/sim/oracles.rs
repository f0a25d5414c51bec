//! Brute-force checks run over every committed state. They deliberately avoid
//! the indexed lookups the contract uses.

use crate::contract::Reservation;
use crate::ledger::LedgerState;

/// Every pair of reservations on one element whose windows overlap.
pub fn exclusivity_violations(state: &LedgerState) -> Vec<(Reservation, Reservation)> {
    let all: Vec<&Reservation> = state.reservations.iter().collect();
    let mut out = Vec::new();
    for (i, a) in all.iter().enumerate() {
        for b in &all[i + 1..] {
            let overlap = a.window.start() < b.window.end() && b.window.start() < a.window.end();
            if a.element == b.element && overlap {
                out.push(((*a).clone(), (*b).clone()));
            }
        }
    }
    out
}

pub fn money_conserved(state: &LedgerState, genesis_total: u128) -> bool {
    state.balances.values().map(|v| *v as u128).sum::<u128>() == genesis_total
}
