use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::contract::RejectReason;
use crate::crypto::{Digest, HashAlg, KeyPair, Signature};
use crate::types::{ElementId, TimeWindow, TrainId, WalletAddress};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservePayload {
    pub train: TrainId,
    pub element: ElementId,
    pub window: TimeWindow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub required_position: Option<String>,
    pub fee: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReleasePayload {
    pub train: TrainId,
    pub element: ElementId,
    pub window: TimeWindow,
    #[serde(default)]
    pub rollback: bool,
    #[serde(default)]
    pub implicit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferPayload {
    pub to: WalletAddress,
    pub amount: u64,
}

/// `train: null` clears the element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupancyPayload {
    pub element: ElementId,
    pub train: Option<TrainId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchCommandPayload {
    pub train: TrainId,
    pub element: ElementId,
    pub position: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchAckPayload {
    pub element: ElementId,
    pub position: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum TxBody {
    Reserve(ReservePayload),
    Release(ReleasePayload),
    Transfer(TransferPayload),
    OccupancyReport(OccupancyPayload),
    SwitchCommand(SwitchCommandPayload),
    SwitchAck(SwitchAckPayload),
}

impl TxBody {
    pub fn kind(&self) -> &'static str {
        match self {
            TxBody::Reserve(_) => "Reserve",
            TxBody::Release(_) => "Release",
            TxBody::Transfer(_) => "Transfer",
            TxBody::OccupancyReport(_) => "OccupancyReport",
            TxBody::SwitchCommand(_) => "SwitchCommand",
            TxBody::SwitchAck(_) => "SwitchAck",
        }
    }
}

/// A signed state-change request. `txid` and `signature` both cover the
/// canonical bytes of everything else.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub txid: Digest,
    pub sender: WalletAddress,
    pub nonce: u64,
    #[serde(flatten)]
    pub body: TxBody,
    pub signature: Signature,
}

const UNSIGNED: &[&str] = &["txid", "signature"];

impl Transaction {
    pub fn new_signed(key: &KeyPair, nonce: u64, body: TxBody, alg: HashAlg) -> Self {
        let mut tx = Transaction {
            txid: Digest::ZERO,
            sender: key.address().clone(),
            nonce,
            body,
            signature: Signature(Vec::new()),
        };
        let bytes = tx.signing_bytes();
        tx.txid = alg.digest(&bytes);
        tx.signature = key.sign(&bytes);
        tx
    }

    /// Canonical bytes without `txid` and `signature`.
    pub fn signing_bytes(&self) -> Vec<u8> {
        canonical::to_bytes_without(self, UNSIGNED)
    }

    pub fn computed_txid(&self, alg: HashAlg) -> Digest {
        alg.digest(&self.signing_bytes())
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical::to_bytes(self)
    }

    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }
}

/// Why a transaction cannot be committed: either the gatekeeper refused it
/// or it failed a ledger-level integrity check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TxFault {
    Reject(RejectReason),
    BadTxid,
    BadSignature,
    UnknownSender,
    StaleNonce,
}

impl From<RejectReason> for TxFault {
    fn from(r: RejectReason) -> Self {
        TxFault::Reject(r)
    }
}

impl TxFault {
    pub fn as_str(&self) -> &'static str {
        match self {
            TxFault::Reject(r) => r.as_str(),
            TxFault::BadTxid => "BadTxid",
            TxFault::BadSignature => "BadSignature",
            TxFault::UnknownSender => "UnknownSender",
            TxFault::StaleNonce => "StaleNonce",
        }
    }

    pub fn reject_reason(&self) -> Option<RejectReason> {
        match self {
            TxFault::Reject(r) => Some(*r),
            _ => None,
        }
    }
}

impl fmt::Display for TxFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TxFault {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(r) = s.parse::<RejectReason>() {
            return Ok(TxFault::Reject(r));
        }
        match s {
            "BadTxid" => Ok(TxFault::BadTxid),
            "BadSignature" => Ok(TxFault::BadSignature),
            "UnknownSender" => Ok(TxFault::UnknownSender),
            "StaleNonce" => Ok(TxFault::StaleNonce),
            other => Err(format!("unknown fault {other}")),
        }
    }
}

impl Serialize for TxFault {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TxFault {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
