//! Chain files: one canonical block per line, append-only.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::ledger::block::LedgerBlock;
use crate::ledger::chain::{verify_chain, Chain};

#[derive(Debug, Error)]
pub enum ChainFileError {
    #[error("reading chain file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {index} is not a canonical block: {reason}")]
    Malformed { index: usize, reason: String },
}

impl ChainFileError {
    /// Block index the error is attributed to, if it concerns file contents.
    pub fn index(&self) -> Option<usize> {
        match self {
            ChainFileError::Malformed { index, .. } => Some(*index),
            ChainFileError::Io(_) => None,
        }
    }
}

/// Parses one line strictly: it must re-encode to exactly the same bytes.
pub fn parse_block_line(line: &str, index: usize) -> Result<LedgerBlock, ChainFileError> {
    let malformed = |reason: String| ChainFileError::Malformed { index, reason };
    let block: LedgerBlock = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    if block.canonical_line() != line {
        return Err(malformed("not in canonical form".into()));
    }
    Ok(block)
}

pub fn parse_chain(bytes: &[u8]) -> Result<Chain, ChainFileError> {
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    if body.is_empty() {
        return Ok(Chain::default());
    }
    let mut blocks = Vec::new();
    for (i, line) in body.split(|b| *b == b'\n').enumerate() {
        let line = std::str::from_utf8(line).map_err(|e| ChainFileError::Malformed {
            index: i,
            reason: e.to_string(),
        })?;
        blocks.push(parse_block_line(line, i)?);
    }
    Ok(Chain::from_blocks(blocks))
}

pub fn read_chain_file(path: impl AsRef<Path>) -> Result<Chain, ChainFileError> {
    parse_chain(&std::fs::read(path)?)
}

pub fn write_chain_file(path: impl AsRef<Path>, chain: &Chain) -> std::io::Result<()> {
    std::fs::write(path, chain.to_lines())
}

pub fn append_block_line(path: impl AsRef<Path>, block: &LedgerBlock) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(block.canonical_line().as_bytes())?;
    f.write_all(b"\n")
}

/// Verifies chain file bytes: the first block index that fails to parse,
/// is non-canonical, or fails [`verify_chain`].
pub fn verify_chain_bytes(bytes: &[u8]) -> Result<Chain, usize> {
    let chain = parse_chain(bytes).map_err(|e| e.index().unwrap_or(0))?;
    verify_chain(&chain)?;
    Ok(chain)
}
