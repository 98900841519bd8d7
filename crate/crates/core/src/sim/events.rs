//! Ground-truth event log, one JSON object per line.
//!
//! The log is a measurement side-channel: it names peers by pseudo-id and
//! records who was near whom, which the protocol itself never reveals.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::prefs::PeerId;
use crate::radio::Outcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// Two peers came within the effective radius.
    ContactBegin {
        tick: u64,
        a: PeerId,
        b: PeerId,
        distance_m: f64,
    },
    ContactEnd {
        tick: u64,
        a: PeerId,
        b: PeerId,
    },
    SessionOpen {
        tick: u64,
        a: PeerId,
        b: PeerId,
        distance_m: f64,
    },
    SessionClosed {
        tick: u64,
        a: PeerId,
        b: PeerId,
        outcome: Outcome,
        contact_distance_m: f64,
    },
    /// One direction of an exchange.
    Message {
        tick: u64,
        sender: PeerId,
        receiver: PeerId,
        bytes: usize,
        similarity_records: usize,
        neighborhood_records: usize,
        contact_distance_m: f64,
    },
    Filter {
        tick: u64,
        receiver: PeerId,
        sender: PeerId,
        score: Option<f64>,
        admitted: bool,
    },
}

impl Event {
    pub fn tick(&self) -> u64 {
        match self {
            Event::ContactBegin { tick, .. }
            | Event::ContactEnd { tick, .. }
            | Event::SessionOpen { tick, .. }
            | Event::SessionClosed { tick, .. }
            | Event::Message { tick, .. }
            | Event::Filter { tick, .. } => *tick,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
    enabled: bool,
}

impl EventLog {
    pub fn new(enabled: bool) -> Self {
        Self { events: Vec::new(), enabled }
    }

    pub fn from_events(events: Vec<Event>) -> Self {
        Self { events, enabled: true }
    }

    pub fn push(&mut self, event: Event) {
        if self.enabled {
            self.events.push(event);
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<Self> {
        let mut events = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line).map_err(io::Error::other)?);
        }
        Ok(Self::from_events(events))
    }
}
