use std::collections::{BTreeMap, HashMap, HashSet};

use log::debug;

use crate::simcore::SimTime;
use crate::topology::HostId;

use super::packet::{GroupId, MsgId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AussEntry {
    pub inflight_msgs: u32,
    pub last_seen: SimTime,
}

/// Active Unique Sender Set kept by a receiver. `n` is the number of entries;
/// a sender with several concurrent messages is one entry.
#[derive(Debug, Clone)]
pub struct AussTable {
    entries: BTreeMap<HostId, AussEntry>,
    idle_timeout: SimTime,
    active_msgs: HashMap<MsgId, HostId>,
    // (sender, group) announced by look-ahead but not yet started
    promised: HashSet<(HostId, GroupId)>,
    seen_groups: HashSet<GroupId>,
    duplicate_starts: u64,
}

impl AussTable {
    pub fn new(idle_timeout: SimTime) -> Self {
        Self {
            entries: BTreeMap::new(),
            idle_timeout,
            active_msgs: HashMap::new(),
            promised: HashSet::new(),
            seen_groups: HashSet::new(),
            duplicate_starts: 0,
        }
    }

    /// Current sender count.
    #[inline]
    pub fn n(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, sender: HostId) -> Option<&AussEntry> {
        self.entries.get(&sender)
    }

    pub fn senders(&self) -> impl Iterator<Item = HostId> + '_ {
        self.entries.keys().copied()
    }

    pub fn duplicate_starts(&self) -> u64 {
        self.duplicate_starts
    }

    fn add_inflight(&mut self, sender: HostId, now: SimTime) {
        let e = self.entries.entry(sender).or_insert(AussEntry {
            inflight_msgs: 0,
            last_seen: now,
        });
        e.inflight_msgs += 1;
        e.last_seen = now;
    }

    /// Start-of-message marker. Idempotent per message id; a message that was
    /// already promised by look-ahead is not counted again.
    pub fn on_start(
        &mut self,
        sender: HostId,
        msg: MsgId,
        group: Option<GroupId>,
        now: SimTime,
    ) -> bool {
        if self.active_msgs.contains_key(&msg) {
            self.duplicate_starts += 1;
            debug!("duplicate start for message {msg} from {sender}; ignored");
            self.touch(sender, now);
            return false;
        }
        self.active_msgs.insert(msg, sender);
        let promised = group.is_some_and(|g| self.promised.remove(&(sender, g)));
        if promised && self.entries.contains_key(&sender) {
            self.touch(sender, now);
        } else {
            self.add_inflight(sender, now);
        }
        true
    }

    /// End-of-message marker; the entry goes away when its last message ends.
    pub fn on_end(&mut self, sender: HostId, msg: MsgId, now: SimTime) {
        if self.active_msgs.remove(&msg).is_none() {
            return;
        }
        if let Some(e) = self.entries.get_mut(&sender) {
            e.last_seen = now;
            e.inflight_msgs -= 1;
            if e.inflight_msgs == 0 {
                self.entries.remove(&sender);
            }
        }
    }

    /// Refresh `last_seen` for a packet of an active sender.
    #[inline]
    pub fn touch(&mut self, sender: HostId, now: SimTime) {
        if let Some(e) = self.entries.get_mut(&sender) {
            e.last_seen = now;
        }
    }

    /// Pre-populate from an incast sender list. Every listed sender counts as if
    /// its message began now; the first notification for a group wins.
    pub fn apply_lookahead(&mut self, group: GroupId, senders: &[HostId], now: SimTime) {
        if !self.seen_groups.insert(group) {
            return;
        }
        for &s in senders {
            if self.promised.insert((s, group)) {
                self.add_inflight(s, now);
            }
        }
    }

    /// Drop entries idle for longer than the timeout. Returns evicted senders.
    pub fn sweep(&mut self, now: SimTime) -> Vec<HostId> {
        let timeout = self.idle_timeout;
        let evicted: Vec<HostId> = self
            .entries
            .iter()
            .filter(|(_, e)| now.saturating_sub(e.last_seen) > timeout)
            .map(|(&s, _)| s)
            .collect();
        if evicted.is_empty() {
            return evicted;
        }
        for s in &evicted {
            self.entries.remove(s);
        }
        let gone: HashSet<HostId> = evicted.iter().copied().collect();
        self.active_msgs.retain(|_, s| !gone.contains(s));
        self.promised.retain(|(s, _)| !gone.contains(s));
        evicted
    }
}
