//! Append-only event log of everything the optimizer did to a deployment.
//!
//! Timestamps are logical: the blackbox's measurement count when the event was
//! recorded. That keeps logs reproducible across runs.

use serde::{Deserialize, Serialize};

use crate::domain::{MrKey, ResourceKind, ServerId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    /// Temporary reduction while probing.
    Stress {
        timestamp: usize,
        mr: MrKey,
        old: f64,
        new: f64,
        fraction: f64,
        clamped: bool,
    },
    /// Reduction kept in the tightened deployment.
    Commit {
        timestamp: usize,
        mr: MrKey,
        old: f64,
        new: f64,
        fraction: f64,
    },
    Placement {
        timestamp: usize,
        servers: usize,
        variant: String,
        value: Option<f64>,
        accepted: bool,
    },
    Leftover {
        timestamp: usize,
        server: ServerId,
        kind: ResourceKind,
        mr: MrKey,
        amount: f64,
        forced_tie_break: bool,
    },
    Transfer {
        timestamp: usize,
        donor: MrKey,
        recipient: MrKey,
        amount: f64,
        before: f64,
        after: f64,
        outcome: String,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    pub events: Vec<AuditEvent>,
}

impl AuditLog {
    pub fn new() -> Self {
        AuditLog::default()
    }

    pub fn push(&mut self, event: AuditEvent) {
        self.events.push(event);
    }

    pub fn extend(&mut self, other: AuditLog) {
        self.events.extend(other.events);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            // AuditEvent holds only plain data; serialization cannot fail.
            out.push_str(&serde_json::to_string(e).expect("audit event serializes"));
            out.push('\n');
        }
        out
    }
}
