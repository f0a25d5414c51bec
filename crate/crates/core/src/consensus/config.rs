use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::types::{NodeId, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsensusMode {
    Poa,
    Pow,
    Vote,
}

/// A rational in (0, 1]. Written as `"num/den"`; decimal strings such as
/// `"0.51"` are accepted on input and stored exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fraction {
    num: u64,
    den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Result<Self, String> {
        if den == 0 || num == 0 || num > den {
            return Err(format!("fraction {num}/{den} must lie in (0, 1]"));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    /// `ceil(self * count)` in exact integer arithmetic.
    pub fn ceil_mul(&self, count: u64) -> u64 {
        (self.num * count).div_ceil(self.den)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl FromStr for Fraction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad fraction {s:?}");
        if let Some((n, d)) = s.split_once('/') {
            let num = n.trim().parse().map_err(|_| bad())?;
            let den = d.trim().parse().map_err(|_| bad())?;
            return Fraction::new(num, den);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() && frac.is_empty() || frac.len() > 12 {
            return Err(bad());
        }
        let digits = |p: &str| p.is_empty() || p.bytes().all(|b| b.is_ascii_digit());
        if !digits(int) || !digits(frac) {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let frac_v: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        let num = int
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac_v))
            .ok_or_else(bad)?;
        Fraction::new(num, den)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl Serialize for Fraction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Threshold {
    AtLeastN { n: u64 },
    Fraction { f: Fraction },
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::AtLeastN { n: 1 }
    }
}

impl Threshold {
    /// Yea votes needed to commit among `node_count` validators.
    pub fn required(&self, node_count: u64) -> u64 {
        match self {
            Threshold::AtLeastN { n } => *n,
            Threshold::Fraction { f } => f.ceil_mul(node_count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusConfig {
    pub mode: ConsensusMode,
    #[serde(default)]
    pub threshold: Threshold,
    #[serde(default)]
    pub pow_difficulty_bits: u32,
    /// Proposer rotation for `poa` and `vote`; empty means whitelisted ids in sorted order.
    #[serde(default)]
    pub poa_order: Vec<NodeId>,
    pub block_interval_ticks: Tick,
}

pub const MAX_POW_DIFFICULTY: u32 = 24;

impl ConsensusConfig {
    pub fn poa(block_interval_ticks: Tick) -> Self {
        Self {
            mode: ConsensusMode::Poa,
            threshold: Threshold::default(),
            pow_difficulty_bits: 0,
            poa_order: Vec::new(),
            block_interval_ticks,
        }
    }

    /// Checks the config against the sorted list of whitelisted validators.
    pub fn validate(&self, whitelisted: &[NodeId]) -> Result<(), String> {
        if self.block_interval_ticks == 0 {
            return Err("block_interval_ticks must be at least 1".into());
        }
        if whitelisted.is_empty() {
            return Err("at least one whitelisted node is required".into());
        }
        if self.pow_difficulty_bits > MAX_POW_DIFFICULTY {
            return Err(format!(
                "pow_difficulty_bits {} exceeds {MAX_POW_DIFFICULTY}",
                self.pow_difficulty_bits
            ));
        }
        if let Threshold::AtLeastN { n } = self.threshold {
            if n == 0 || n > whitelisted.len() as u64 {
                return Err(format!(
                    "threshold n={n} must be between 1 and the {} whitelisted nodes",
                    whitelisted.len()
                ));
            }
        }
        if !self.poa_order.is_empty() {
            let mut sorted = self.poa_order.clone();
            sorted.sort();
            if sorted != whitelisted {
                return Err("poa_order must be a permutation of the whitelisted nodes".into());
            }
        }
        Ok(())
    }

    /// Rotation used for scheduled proposers.
    pub fn proposer_order(&self, whitelisted: &[NodeId]) -> Vec<NodeId> {
        if self.poa_order.is_empty() {
            let mut v = whitelisted.to_vec();
            v.sort();
            v
        } else {
            self.poa_order.clone()
        }
    }

    pub fn is_slot(&self, now: Tick) -> bool {
        now.is_multiple_of(self.block_interval_ticks)
    }

    /// Round-robin proposer for the slot containing `now`; rotates by slot index.
    pub fn scheduled_proposer<'a>(&self, order: &'a [NodeId], now: Tick) -> &'a NodeId {
        let slot = now / self.block_interval_ticks;
        &order[(slot % order.len() as u64) as usize]
    }
}
