use serde::{Deserialize, Serialize};

use crate::domain::{InteractionSequence, ItemId};
use crate::error::{Error, Result};

/// One user's leave-one-out views. The test view predicts the last event from
/// the tail of everything before it; the training view does the same one
/// step earlier, so training never sees the test target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub user: String,
    /// Most recent `min(n - 1, l_tru)` events of the prefix.
    pub input: Vec<ItemId>,
    pub target: ItemId,
    /// Input for the training example; empty when the prefix has one event.
    pub train_input: Vec<ItemId>,
    pub train_target: Option<ItemId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaveOneOutSplit {
    pub l_tru: usize,
    pub entries: Vec<SplitEntry>,
    /// Users with fewer than two events.
    pub dropped: usize,
}

fn tail(events: &[ItemId], n: usize) -> Vec<ItemId> {
    events[events.len().saturating_sub(n)..].to_vec()
}

pub fn build_split(sequences: &[InteractionSequence], l_tru: usize) -> Result<LeaveOneOutSplit> {
    if l_tru == 0 {
        return Err(Error::invalid("l_tru must be positive"));
    }
    let mut entries = Vec::with_capacity(sequences.len());
    let mut dropped = 0;
    for s in sequences {
        let n = s.events.len();
        if n < 2 {
            dropped += 1;
            continue;
        }
        let prefix = &s.events[..n - 1];
        let (train_input, train_target) = if prefix.len() >= 2 {
            (tail(&prefix[..prefix.len() - 1], l_tru), prefix.last().cloned())
        } else {
            (Vec::new(), None)
        };
        entries.push(SplitEntry {
            user: s.user_id.clone(),
            input: tail(prefix, l_tru),
            target: s.events[n - 1].clone(),
            train_input,
            train_target,
        });
    }
    if dropped > 0 {
        log::info!("{dropped} users with fewer than two events dropped from the split");
    }
    Ok(LeaveOneOutSplit { l_tru, entries, dropped })
}

impl LeaveOneOutSplit {
    pub fn entry(&self, user: &str) -> Option<&SplitEntry> {
        self.entries.iter().find(|e| e.user == user)
    }
}
