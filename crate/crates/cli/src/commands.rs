//! Batch subcommands: run a scenario, verify a chain file, recompute metrics.

use std::fs;
use std::path::{Path, PathBuf};

use railchain::ledger::persist::{verify_chain_bytes, write_chain_file};
use railchain::ledger::{apply_block, ChainRules, LedgerState};
use railchain::sim::oracles::{exclusivity_violations, money_conserved};
use railchain::sim::{EventLog, RunMetrics, RunOutcome, Scenario, World};
use railchain::{canonical, Gatekeeper, Tick, Topology};
use serde::Serialize;

/// Exit status for configuration and input errors.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub scenario: PathBuf,
    pub seed: Option<u64>,
    pub until: Option<Tick>,
    /// Directory for every artifact not given an explicit path.
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub chains: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunReport {
    pub outcome: RunOutcome,
    pub log: PathBuf,
    pub metrics: PathBuf,
    pub chains: PathBuf,
}

fn default_out(scenario: &Path) -> PathBuf {
    let stem = scenario
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    PathBuf::from("runs").join(stem)
}

pub fn load_scenario(path: &Path, seed: Option<u64>, until: Option<Tick>) -> anyhow::Result<Scenario> {
    let mut s = Scenario::load(path)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if let Some(until) = until {
        s.run_until = until;
    }
    s.validate()?;
    Ok(s)
}

/// Runs a scenario to completion and writes the event log, metrics and one
/// chain file per node. Errors are configuration or I/O problems; oracle
/// violations are reported through the outcome's exit code.
pub fn run(opts: &RunOptions) -> anyhow::Result<RunReport> {
    let scenario = load_scenario(&opts.scenario, opts.seed, opts.until)?;
    let out = opts.out.clone().unwrap_or_else(|| default_out(&opts.scenario));
    let log = opts.log.clone().unwrap_or_else(|| out.join("events.jsonl"));
    let metrics = opts.metrics.clone().unwrap_or_else(|| out.join("metrics.json"));
    let chains = opts.chains.clone().unwrap_or_else(|| out.join("chains"));

    let mut world = World::new(scenario)?;
    let outcome = world.run();

    for p in [&log, &metrics] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
    }
    fs::create_dir_all(&chains)?;
    fs::write(&log, world.log().to_lines())?;
    fs::write(&metrics, canonical::to_string(&outcome.metrics) + "\n")?;
    for n in world.nodes() {
        let chain = world.chain_of(n.id()).expect("node listed by the world");
        write_chain_file(chains.join(format!("{}.chain", n.id())), &chain)?;
    }
    Ok(RunReport {
        outcome,
        log,
        metrics,
        chains,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub blocks: usize,
    /// First block that fails integrity, contract replay or an oracle.
    pub first_bad: Option<usize>,
    pub problem: Option<String>,
    pub final_state_hash: Option<String>,
}

impl VerifyReport {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.first_bad.is_some())
    }
}

/// Integrity check of a chain file followed by a block-by-block replay that
/// runs the exclusivity and money-conservation scans on every state.
pub fn verify(chain_path: &Path, topology_path: &Path) -> anyhow::Result<VerifyReport> {
    let bytes = fs::read(chain_path)?;
    let topo = Topology::load(topology_path)?;
    let bad = |blocks, at: usize, problem: String| VerifyReport {
        blocks,
        first_bad: Some(at),
        problem: Some(problem),
        final_state_hash: None,
    };
    let blocks = bytes.split(|b| *b == b'\n').filter(|l| !l.is_empty()).count();
    let chain = match verify_chain_bytes(&bytes) {
        Ok(c) => c,
        Err(i) => return Ok(bad(blocks, i, "integrity check failed".into())),
    };
    let Some(genesis) = chain.get(0) else {
        return Ok(bad(0, 0, "empty chain".into()));
    };
    let rules = ChainRules::from_genesis(genesis)?;
    rules.check_topology(&topo)?;
    let gate = Gatekeeper::new(&topo, &rules.registry, &rules.contract);
    let mut state = LedgerState::from_genesis(&rules.genesis, &topo);
    let total = state.total_balance();
    for block in chain.blocks().iter().skip(1) {
        let i = block.index as usize;
        state = match apply_block(&gate, &state, block) {
            Ok(s) => s,
            Err((tx, fault)) => return Ok(bad(chain.len(), i, format!("transaction {tx} rejected: {fault}"))),
        };
        let overlaps = exclusivity_violations(&state);
        if !overlaps.is_empty() {
            return Ok(bad(
                chain.len(),
                i,
                format!("{} overlapping reservation pairs", overlaps.len()),
            ));
        }
        if !money_conserved(&state, total) {
            return Ok(bad(chain.len(), i, "balances do not sum to the genesis total".into()));
        }
    }
    Ok(VerifyReport {
        blocks: chain.len(),
        first_bad: None,
        problem: None,
        final_state_hash: Some(state.state_hash(rules.alg).to_hex()),
    })
}

/// Recomputes metrics from an event log; with `expected`, also reports
/// whether they equal a previously written metrics file.
pub fn replay(log_path: &Path, expected: Option<&Path>) -> anyhow::Result<(RunMetrics, Option<bool>)> {
    let log = EventLog::parse(&fs::read_to_string(log_path)?)?;
    let metrics = RunMetrics::from_log(&log);
    let matches = match expected {
        Some(p) => {
            let stored: RunMetrics = serde_json::from_str(&fs::read_to_string(p)?)?;
            Some(stored == metrics)
        }
        None => None,
    };
    Ok((metrics, matches))
}
