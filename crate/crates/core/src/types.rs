//! Identifier newtypes and the half-open reservation window shared by every module.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in discrete ticks.
pub type Tick = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("invalid {kind} identifier {value:?}: expected 1-32 chars of [A-Za-z0-9_-]")]
    BadIdentifier { kind: &'static str, value: String },
    #[error("invalid wallet address {0:?}: expected 40 lowercase hex chars")]
    BadAddress(String),
    #[error("invalid time window [{start}, {end}): start must be < end")]
    BadWindow { start: Tick, end: Tick },
}

fn is_short_ident(s: &str) -> bool {
    !s.is_empty() && s.len() <= 32 && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

macro_rules! short_id {
    ($(#[$meta:meta])* $name:ident, $kind:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Result<Self, IdError> {
                let value = value.into();
                if is_short_ident(&value) {
                    Ok(Self(value))
                } else {
                    Err(IdError::BadIdentifier { kind: $kind, value })
                }
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = IdError;
            fn try_from(value: String) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl TryFrom<&str> for $name {
            type Error = IdError;
            fn try_from(value: &str) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

short_id!(
    /// Track element identity; one digital twin per element.
    ElementId,
    "element"
);
short_id!(
    /// Train identity, bound 1:1 to a wallet in the genesis registry.
    TrainId,
    "train"
);
short_id!(
    /// Ledger node identity.
    NodeId,
    "node"
);

/// Wallet address: first 20 bytes of the hash of a public key, lowercase hex.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct WalletAddress(String);

impl WalletAddress {
    pub fn new(value: impl Into<String>) -> Result<Self, IdError> {
        let value = value.into();
        let ok = value.len() == 40 && value.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if ok {
            Ok(Self(value))
        } else {
            Err(IdError::BadAddress(value))
        }
    }

    pub fn from_bytes(bytes: &[u8; 20]) -> Self {
        Self(hex::encode(bytes))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for WalletAddress {
    type Error = IdError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<WalletAddress> for String {
    fn from(a: WalletAddress) -> String {
        a.0
    }
}

impl fmt::Display for WalletAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Half-open tick interval `[start, end)`; `start < end` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawWindow")]
pub struct TimeWindow {
    start: Tick,
    end: Tick,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWindow {
    start: Tick,
    end: Tick,
}

impl TryFrom<RawWindow> for TimeWindow {
    type Error = IdError;
    fn try_from(raw: RawWindow) -> Result<Self, Self::Error> {
        TimeWindow::new(raw.start, raw.end)
    }
}

impl TimeWindow {
    pub fn new(start: Tick, end: Tick) -> Result<Self, IdError> {
        if start < end {
            Ok(Self { start, end })
        } else {
            Err(IdError::BadWindow { start, end })
        }
    }

    pub fn start(&self) -> Tick {
        self.start
    }

    pub fn end(&self) -> Tick {
        self.end
    }

    pub fn len(&self) -> Tick {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &TimeWindow) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, tick: Tick) -> bool {
        self.start <= tick && tick < self.end
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identifiers_follow_pattern() {
        assert!(ElementId::new("B1").is_ok());
        assert!(ElementId::new("track_07-a").is_ok());
        assert!(ElementId::new("").is_err());
        assert!(ElementId::new("a".repeat(33)).is_err());
        assert!(ElementId::new("B 1").is_err());
        assert!(TrainId::new("T1").is_ok());
    }

    #[test]
    fn addresses_are_lowercase_hex() {
        assert!(WalletAddress::new("0".repeat(40)).is_ok());
        assert!(WalletAddress::new("A".repeat(40)).is_err());
        assert!(WalletAddress::new("0".repeat(39)).is_err());
    }

    #[test]
    fn windows_are_half_open() {
        let a = TimeWindow::new(10, 20).unwrap();
        let b = TimeWindow::new(20, 30).unwrap();
        let c = TimeWindow::new(15, 25).unwrap();
        assert!(!a.overlaps(&b));
        assert!(a.overlaps(&c));
        assert!(a.contains(10) && a.contains(19) && !a.contains(20));
        assert!(TimeWindow::new(5, 5).is_err());
        let parsed: Result<TimeWindow, _> = serde_json::from_str(r#"{"start":9,"end":3}"#);
        assert!(parsed.is_err());
    }
}
