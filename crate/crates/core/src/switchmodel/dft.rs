use serde::Serialize;

use crate::hostnic::MsgId;
use crate::topology::PortId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DftEntry {
    pub flow_id: MsgId,
    pub out_port: PortId,
    /// Tokens the flow's packets carry when they reach this switch. Packets of
    /// the same flow revisiting the switch with fewer tokens do not match.
    pub tokens: u8,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DftError {
    #[error("deflected-flow table full ({0} entries)")]
    Full(usize),
    #[error("flow {0} already has a valid entry")]
    Duplicate(MsgId),
}

/// Fixed-capacity exact-match table of deflected flows. Entries are only
/// freed by [`DftTable::release`]; a valid entry is never overwritten.
#[derive(Debug, Clone)]
pub struct DftTable {
    entries: Vec<DftEntry>,
    in_use: usize,
    high_water: usize,
}

impl DftTable {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: vec![
                DftEntry {
                    flow_id: 0,
                    out_port: 0,
                    tokens: 0,
                    valid: false,
                };
                capacity
            ],
            in_use: 0,
            high_water: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.entries.len()
    }

    pub fn len(&self) -> usize {
        self.in_use
    }

    pub fn is_empty(&self) -> bool {
        self.in_use == 0
    }

    pub fn has_free(&self) -> bool {
        self.in_use < self.entries.len()
    }

    pub fn high_water(&self) -> usize {
        self.high_water
    }

    #[inline]
    pub fn lookup(&self, flow_id: MsgId) -> Option<&DftEntry> {
        if self.in_use == 0 {
            return None;
        }
        self.entries.iter().find(|e| e.valid && e.flow_id == flow_id)
    }

    pub fn allocate(&mut self, flow_id: MsgId, out_port: PortId, tokens: u8) -> Result<(), DftError> {
        if self.lookup(flow_id).is_some() {
            return Err(DftError::Duplicate(flow_id));
        }
        let cap = self.entries.len();
        let slot = self
            .entries
            .iter_mut()
            .find(|e| !e.valid)
            .ok_or(DftError::Full(cap))?;
        *slot = DftEntry {
            flow_id,
            out_port,
            tokens,
            valid: true,
        };
        self.in_use += 1;
        self.high_water = self.high_water.max(self.in_use);
        Ok(())
    }

    /// Free the flow's entry; returns whether one existed.
    pub fn release(&mut self, flow_id: MsgId) -> bool {
        match self
            .entries
            .iter_mut()
            .find(|e| e.valid && e.flow_id == flow_id)
        {
            Some(e) => {
                e.valid = false;
                self.in_use -= 1;
                true
            }
            None => false,
        }
    }

    pub fn valid_entries(&self) -> impl Iterator<Item = &DftEntry> {
        self.entries.iter().filter(|e| e.valid)
    }
}
