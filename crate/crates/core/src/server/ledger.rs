use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::{payload_size, Message, TagOp, TagOpKind, TrapUpdate, MAX_PAYLOAD, MAX_TRAP_OPS};
use crate::rfid::TagId;

/// One operator edit of a station's trap targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum TargetOp {
    Add { tag: TagId },
    Remove { tag: TagId },
    Master { enabled: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerChange {
    /// Server seconds; strictly increasing within a station's ledger.
    pub change_ts: u32,
    #[serde(flatten)]
    pub op: TargetOp,
    pub operator: String,
}

/// Append-only history of one station's trap targets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrapLedger {
    changes: Vec<LedgerChange>,
    /// Largest server time handed to the station in a downlink.
    last_issued: u32,
    /// Last multi-part chunk sent: its server time and part index.
    chain: Option<(u32, u8)>,
}

impl TrapLedger {
    pub fn changes(&self) -> &[LedgerChange] {
        &self.changes
    }

    pub fn last_change_ts(&self) -> u32 {
        self.changes.last().map_or(0, |c| c.change_ts)
    }

    /// Timestamp the next change will get: never before `now`, never equal
    /// to an earlier change and always after every issued server time, so a
    /// station that synced at T sees it with `last_updated = T`.
    pub fn next_change_ts(&self, now: u32) -> u32 {
        let after_last = if self.changes.is_empty() { 0 } else { self.last_change_ts() + 1 };
        now.max(after_last).max(self.last_issued.saturating_add(1))
    }

    pub fn record(&mut self, op: TargetOp, operator: &str, now: u32) -> LedgerChange {
        let c = LedgerChange { change_ts: self.next_change_ts(now), op, operator: operator.to_string() };
        self.changes.push(c.clone());
        c
    }

    /// Re-insert a persisted change during recovery.
    pub(crate) fn restore(&mut self, c: LedgerChange) {
        self.changes.push(c);
    }

    pub(crate) fn note_issued(&mut self, server_time: u32) {
        self.last_issued = self.last_issued.max(server_time);
    }

    /// Target set and master flag after all changes up to `at` inclusive.
    pub fn state_at(&self, at: u32) -> (BTreeSet<TagId>, bool) {
        let mut set = BTreeSet::new();
        let mut master = false;
        for c in self.changes.iter().take_while(|c| c.change_ts <= at) {
            match c.op {
                TargetOp::Add { tag } => {
                    set.insert(tag);
                }
                TargetOp::Remove { tag } => {
                    set.remove(&tag);
                }
                TargetOp::Master { enabled } => master = enabled,
            }
        }
        (set, master)
    }

    pub fn current(&self) -> (BTreeSet<TagId>, bool) {
        self.state_at(u32::MAX)
    }

    /// Changes after `last_updated` not yet seen by a station.
    pub fn pending_after(&self, last_updated: u32) -> usize {
        self.changes.iter().filter(|c| c.change_ts > last_updated).count()
    }

    /// Next downlink for a station that reports `last_updated`.
    ///
    /// Changes after `last_updated` are folded per tag into a single op
    /// holding the tag's latest state. When the fold does not fit one
    /// downlink, the longest prefix of changes whose fold fits is sent with
    /// `server_time` set to the last included change, so the station's
    /// next request resumes right after it.
    pub fn delta(&mut self, last_updated: u32, now: u32) -> TrapUpdate {
        let mut ops: Vec<TagOp> = Vec::new();
        let mut index: BTreeMap<TagId, usize> = BTreeMap::new();
        let mut master = None;
        let mut boundary = None;
        let pending: Vec<&LedgerChange> = self.changes.iter().filter(|c| c.change_ts > last_updated).collect();
        for (i, c) in pending.iter().enumerate() {
            match c.op {
                TargetOp::Master { enabled } => master = Some(enabled),
                TargetOp::Add { tag } | TargetOp::Remove { tag } => {
                    let kind = if matches!(c.op, TargetOp::Add { .. }) { TagOpKind::Add } else { TagOpKind::Remove };
                    if let Some(&j) = index.get(&tag) {
                        ops[j].kind = kind;
                    } else {
                        ops.push(TagOp { kind, tag });
                        if !fits(&ops) {
                            ops.pop();
                            boundary = Some(pending[i - 1].change_ts);
                            break;
                        }
                        index.insert(tag, ops.len() - 1);
                    }
                }
            }
        }
        let more_follows = boundary.is_some();
        let server_time = boundary.unwrap_or_else(|| now.max(self.last_change_ts()));
        if last_updated == 0 && master.is_none() {
            master = Some(self.state_at(server_time).1);
        }
        let part = match self.chain {
            Some((t, p)) if t == last_updated && last_updated != 0 => p.wrapping_add(1),
            _ => 0,
        };
        self.chain = more_follows.then_some((server_time, part));
        self.note_issued(server_time);
        TrapUpdate { server_time, master, more_follows, part, ops }
    }
}

fn fits(ops: &[TagOp]) -> bool {
    if ops.len() > MAX_TRAP_OPS {
        return false;
    }
    let probe = TrapUpdate { server_time: 0, master: Some(true), more_follows: true, part: 0, ops: ops.to_vec() };
    payload_size(&Message::from(probe)) <= MAX_PAYLOAD
}
