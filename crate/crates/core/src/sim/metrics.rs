use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::sim::events::EventLog;
use crate::types::Tick;

/// Run summary. Every field is recomputed from the event log alone.
/// Latencies are in ticks; the mean is kept in thousandths of a tick so the
/// record stays integral and byte-stable.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetrics {
    pub committed_tx_count: u64,
    pub mean_commit_latency_milli: u64,
    pub p95_commit_latency: Tick,
    pub max_commit_latency: Tick,
    pub bookings_attempted: u64,
    pub bookings_succeeded: u64,
    pub bookings_failed: u64,
    pub emergency_stops: u64,
    pub forks_detected: u64,
    pub forks_resolved: u64,
    pub safety_alarms: u64,
    pub arrivals: u64,
    pub oracle_violations: u64,
    pub uncommitted_valid: u64,
    pub final_state_hash: Option<String>,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[Tick], pct: u64) -> Tick {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (pct * sorted.len() as u64).div_ceil(100).max(1);
    sorted[rank as usize - 1]
}

impl RunMetrics {
    pub fn from_log(log: &EventLog) -> Self {
        let mut m = RunMetrics::default();
        let mut committed = BTreeSet::new();
        let mut latencies = Vec::new();
        for r in log.records() {
            let p = &r.payload;
            match r.kind.as_str() {
                "TxCommitted" => {
                    let txid = p["txid"].as_str().unwrap_or_default().to_string();
                    if committed.insert(txid) {
                        latencies.push(p["latency"].as_u64().unwrap_or(0));
                    }
                }
                "PlanChosen" => m.bookings_attempted += 1,
                "Booked" => m.bookings_succeeded += 1,
                "BookingFailure" => m.bookings_failed += 1,
                "EmergencyStop" => m.emergency_stops += 1,
                "ForkReport" => m.forks_detected += 1,
                "ForkResolved" => m.forks_resolved += 1,
                "SafetyAlarm" => m.safety_alarms += 1,
                "Arrived" => m.arrivals += 1,
                "OracleViolation" => m.oracle_violations += 1,
                "LivenessViolation" => m.uncommitted_valid += 1,
                "RunFinished" => {
                    m.final_state_hash = p["final_state_hash"].as_str().map(str::to_string);
                }
                _ => {}
            }
        }
        latencies.sort_unstable();
        m.committed_tx_count = committed.len() as u64;
        if !latencies.is_empty() {
            let sum: u64 = latencies.iter().sum();
            m.mean_commit_latency_milli = sum * 1000 / latencies.len() as u64;
            m.p95_commit_latency = percentile(&latencies, 95);
            m.max_commit_latency = *latencies.last().expect("non-empty");
        }
        m
    }
}
