use serde::{Deserialize, Serialize};

use crate::model::{Domain, Tick};
use crate::site::EventKind;
use crate::wire::{self, Document};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub tick: Tick,
    /// Global emission sequence number.
    pub seq: u64,
    pub site: Domain,
    pub kind: EventKind,
    pub detail: Document,
}

/// Append-only event log of one simulation run, in emission order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub(crate) fn push(&mut self, tick: Tick, site: &Domain, kind: EventKind, detail: Document) {
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent { tick, seq, site: site.clone(), kind, detail });
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// One canonical document per line.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.events {
            out.extend_from_slice(&wire::encode_value(e));
            out.push(b'\n');
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, wire::WireError> {
        let events = bytes
            .split(|b| *b == b'\n')
            .filter(|l| !l.is_empty())
            .map(wire::decode_value)
            .collect::<Result<Vec<TraceEvent>, _>>()?;
        Ok(Trace { events })
    }
}
