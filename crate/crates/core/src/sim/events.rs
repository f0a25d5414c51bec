use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical;
use crate::types::Tick;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRecord {
    pub tick: Tick,
    pub kind: String,
    pub payload: Value,
}

impl LogRecord {
    pub fn canonical_line(&self) -> String {
        canonical::to_string(self)
    }
}

/// Append-only record of everything observable in a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum LogParseError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
}

impl EventLog {
    pub fn push(&mut self, tick: Tick, kind: &str, payload: Value) {
        self.records.push(LogRecord {
            tick,
            kind: kind.to_string(),
            payload,
        });
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn since(&self, from: usize) -> &[LogRecord] {
        &self.records[from.min(self.records.len())..]
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a LogRecord> + 'a {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&r.canonical_line());
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, LogParseError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: LogRecord = serde_json::from_str(line).map_err(|e| LogParseError::Line {
                line: i + 1,
                reason: e.to_string(),
            })?;
            records.push(r);
        }
        Ok(EventLog { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn lines_round_trip_and_are_canonical() {
        let mut log = EventLog::default();
        log.push(3, "Arrived", json!({"train": "T1", "b": [1, 2]}));
        log.push(4, "RunFinished", json!({}));
        let text = log.to_lines();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"kind":"Arrived","payload":{"b":[1,2],"train":"T1"},"tick":3}"#
        );
        assert_eq!(EventLog::parse(&text).unwrap(), log);
        assert_eq!(log.since(1).len(), 1);
        assert!(EventLog::parse("{nope").is_err());
    }
}
