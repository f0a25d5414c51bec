//! Hashing, wallet keys and signatures.
//!
//! Two signature schemes are supported: Ed25519, and a keyed-hash stand-in
//! (`test-hmac`) whose key is derived from the wallet label. The stand-in lets
//! golden files stay independent of signature byte formats.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256, Sha512_256};
use thiserror::Error;

use crate::types::WalletAddress;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("unknown hash algorithm {0:?}")]
    UnknownHashAlg(String),
    #[error("unknown signature scheme {0:?}")]
    UnknownSigScheme(String),
    #[error("malformed hex: {0}")]
    BadHex(String),
    #[error("malformed public key for {0}")]
    BadPublicKey(String),
    #[error("public key does not hash to address {0}")]
    AddressMismatch(String),
}

/// 256-bit digest, rendered as 64 lowercase hex chars.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Number of leading zero bits, most significant bit of byte 0 first.
    pub fn leading_zero_bits(&self) -> u32 {
        let mut bits = 0;
        for byte in self.0 {
            if byte == 0 {
                bits += 8;
            } else {
                bits += byte.leading_zeros();
                break;
            }
        }
        bits
    }
}

fn decode_lower_hex(s: &str) -> Result<Vec<u8>, CryptoError> {
    if s.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err(CryptoError::BadHex(s.to_string()));
    }
    hex::decode(s).map_err(|_| CryptoError::BadHex(s.to_string()))
}

impl FromStr for Digest {
    type Err = CryptoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = decode_lower_hex(s)?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| CryptoError::BadHex(s.to_string()))?;
        Ok(Digest(arr))
    }
}

impl TryFrom<String> for Digest {
    type Error = CryptoError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Digest> for String {
    fn from(d: Digest) -> String {
        d.to_hex()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Signature bytes, lowercase hex on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Signature(pub Vec<u8>);

impl TryFrom<String> for Signature {
    type Error = CryptoError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        decode_lower_hex(&value).map(Signature)
    }
}

impl From<Signature> for String {
    fn from(s: Signature) -> String {
        hex::encode(s.0)
    }
}

/// Hash algorithm, selected by name in the scenario and recorded in genesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum HashAlg {
    #[default]
    #[serde(rename = "sha256")]
    Sha256,
    #[serde(rename = "sha512-256")]
    Sha512_256,
}

impl HashAlg {
    pub fn name(&self) -> &'static str {
        match self {
            HashAlg::Sha256 => "sha256",
            HashAlg::Sha512_256 => "sha512-256",
        }
    }

    pub fn digest(&self, bytes: &[u8]) -> Digest {
        match self {
            HashAlg::Sha256 => Digest(Sha256::digest(bytes).into()),
            HashAlg::Sha512_256 => Digest(Sha512_256::digest(bytes).into()),
        }
    }

    pub fn digest_parts(&self, parts: &[&[u8]]) -> Digest {
        match self {
            HashAlg::Sha256 => {
                let mut h = Sha256::new();
                parts.iter().for_each(|p| h.update(p));
                Digest(h.finalize().into())
            }
            HashAlg::Sha512_256 => {
                let mut h = Sha512_256::new();
                parts.iter().for_each(|p| h.update(p));
                Digest(h.finalize().into())
            }
        }
    }
}

impl FromStr for HashAlg {
    type Err = CryptoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sha256" => Ok(HashAlg::Sha256),
            "sha512-256" => Ok(HashAlg::Sha512_256),
            other => Err(CryptoError::UnknownHashAlg(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum SigScheme {
    #[default]
    #[serde(rename = "ed25519")]
    Ed25519,
    #[serde(rename = "test-hmac")]
    TestHmac,
}

impl SigScheme {
    pub fn name(&self) -> &'static str {
        match self {
            SigScheme::Ed25519 => "ed25519",
            SigScheme::TestHmac => "test-hmac",
        }
    }
}

impl FromStr for SigScheme {
    type Err = CryptoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ed25519" => Ok(SigScheme::Ed25519),
            "test-hmac" => Ok(SigScheme::TestHmac),
            other => Err(CryptoError::UnknownSigScheme(other.to_string())),
        }
    }
}

const KEY_DOMAIN: &[u8] = b"railchain/wallet-key/v1:";

/// A wallet keypair derived deterministically from a label.
#[derive(Clone)]
pub struct KeyPair {
    label: String,
    scheme: SigScheme,
    secret: [u8; 32],
    public: Vec<u8>,
    address: WalletAddress,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("label", &self.label)
            .field("address", &self.address)
            .finish()
    }
}

impl KeyPair {
    pub fn derive(label: &str, scheme: SigScheme, alg: HashAlg) -> Self {
        let secret = alg.digest_parts(&[KEY_DOMAIN, label.as_bytes()]).0;
        let public = match scheme {
            SigScheme::Ed25519 => SigningKey::from_bytes(&secret).verifying_key().to_bytes().to_vec(),
            SigScheme::TestHmac => alg.digest(&secret).0.to_vec(),
        };
        let address = address_of(&public, alg);
        Self {
            label: label.to_string(),
            scheme,
            secret,
            public,
            address,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn address(&self) -> &WalletAddress {
        &self.address
    }

    pub fn public_key(&self) -> &[u8] {
        &self.public
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        match self.scheme {
            SigScheme::Ed25519 => Signature(SigningKey::from_bytes(&self.secret).sign(msg).to_bytes().to_vec()),
            SigScheme::TestHmac => Signature(hmac_sha256(&self.secret, msg).to_vec()),
        }
    }
}

fn hmac_sha256(key: &[u8], msg: &[u8]) -> [u8; 32] {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(msg);
    mac.finalize().into_bytes().into()
}

pub fn address_of(public: &[u8], alg: HashAlg) -> WalletAddress {
    let d = alg.digest(public);
    let mut first = [0u8; 20];
    first.copy_from_slice(&d.0[..20]);
    WalletAddress::from_bytes(&first)
}

#[derive(Clone)]
enum VerifyKey {
    Ed25519(VerifyingKey),
    Hmac([u8; 32]),
}

/// Verification keys for every wallet registered in genesis.
#[derive(Clone, Default)]
pub struct KeyRing {
    keys: BTreeMap<WalletAddress, VerifyKey>,
}

impl fmt::Debug for KeyRing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyRing").field("wallets", &self.keys.len()).finish()
    }
}

impl KeyRing {
    /// Registers a wallet from its genesis record. For `test-hmac` the verification
    /// key is re-derived from the label, which is public by construction.
    pub fn register(
        &mut self,
        label: &str,
        address: &WalletAddress,
        public_hex: &str,
        scheme: SigScheme,
        alg: HashAlg,
    ) -> Result<(), CryptoError> {
        let public = decode_lower_hex(public_hex)?;
        if &address_of(&public, alg) != address {
            return Err(CryptoError::AddressMismatch(address.to_string()));
        }
        let key = match scheme {
            SigScheme::Ed25519 => {
                let bytes: [u8; 32] = public
                    .as_slice()
                    .try_into()
                    .map_err(|_| CryptoError::BadPublicKey(address.to_string()))?;
                VerifyKey::Ed25519(
                    VerifyingKey::from_bytes(&bytes).map_err(|_| CryptoError::BadPublicKey(address.to_string()))?,
                )
            }
            SigScheme::TestHmac => {
                let derived = KeyPair::derive(label, scheme, alg);
                if derived.public != public {
                    return Err(CryptoError::BadPublicKey(address.to_string()));
                }
                VerifyKey::Hmac(derived.secret)
            }
        };
        self.keys.insert(address.clone(), key);
        Ok(())
    }

    pub fn contains(&self, address: &WalletAddress) -> bool {
        self.keys.contains_key(address)
    }

    pub fn verify(&self, address: &WalletAddress, msg: &[u8], sig: &Signature) -> bool {
        match self.keys.get(address) {
            Some(VerifyKey::Ed25519(vk)) => {
                let Ok(bytes) = <[u8; 64]>::try_from(sig.0.as_slice()) else {
                    return false;
                };
                vk.verify(msg, &ed25519_dalek::Signature::from_bytes(&bytes)).is_ok()
            }
            Some(VerifyKey::Hmac(secret)) => hmac_sha256(secret, msg).as_slice() == sig.0,
            None => false,
        }
    }
}
