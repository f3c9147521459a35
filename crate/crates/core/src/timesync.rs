//! Two-way time synchronization against a reference clock.
//!
//! Every node's clock reads `sim_time + clock_offset`. A client stamps `t0`
//! on its own clock, the reference stamps arrival `t1` and departure `t2` on
//! its clock, and the client stamps arrival `t3`. The estimate
//! `((t1 - t0) + (t2 - t3)) / 2` (truncated toward zero) recovers the offset
//! of the reference relative to the client exactly when both directions take
//! equal time; otherwise it is off by half the asymmetry, up to rounding.
//! The response travels the reverse of the request's route.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{Delivery, Engine, FaultSpec, SimEvent};
use crate::messages::Message;
use crate::model::{Micros, NetworkGraph, NodeId};
use crate::topology::{Hop, Topology};

pub fn offset_estimate(t0: i64, t1: i64, t2: i64, t3: i64) -> i64 {
    ((t1 - t0) + (t2 - t3)) / 2
}

fn default_rounds() -> u32 {
    1
}

fn default_interval() -> Micros {
    10_000
}

fn default_processing() -> Micros {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSyncSpec {
    pub reference: NodeId,
    /// Clients; all other nodes when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<NodeId>>,
    /// Clock offset from simulation time; 0 when absent.
    #[serde(default)]
    pub clock_offsets_us: BTreeMap<NodeId, i64>,
    #[serde(default)]
    pub start_us: Micros,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default = "default_interval")]
    pub interval_us: Micros,
    #[serde(default = "default_processing")]
    pub processing_us: Micros,
}

impl TimeSyncSpec {
    pub fn new(reference: NodeId) -> Self {
        TimeSyncSpec {
            reference,
            nodes: None,
            clock_offsets_us: BTreeMap::new(),
            start_us: 0,
            rounds: default_rounds(),
            interval_us: default_interval(),
            processing_us: default_processing(),
        }
    }

    fn clock_offset(&self, node: &NodeId) -> i64 {
        self.clock_offsets_us.get(node).copied().unwrap_or(0)
    }

    /// Offset the protocol should find for `node`: reference clock minus node clock.
    pub fn offset_true(&self, node: &NodeId) -> i64 {
        self.clock_offset(&self.reference) - self.clock_offset(node)
    }

    fn read_clock(&self, node: &NodeId, at: Micros) -> i64 {
        at as i64 + self.clock_offset(node)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockState {
    pub node_id: NodeId,
    pub offset_true_us: i64,
    pub offset_estimate_us: Option<i64>,
}

impl ClockState {
    pub fn residual(&self) -> Option<u64> {
        self.offset_estimate_us.map(|e| e.abs_diff(self.offset_true_us))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncReport {
    pub clocks: Vec<ClockState>,
    /// Worst residual over synced nodes.
    pub max_residual_us: u64,
    pub unsynced: Vec<NodeId>,
}

/// Runs the exchange inside an engine. Feed it every delivered event.
#[derive(Debug, Clone)]
pub struct SyncAgent {
    spec: TimeSyncSpec,
    clients: Vec<NodeId>,
    estimates: BTreeMap<NodeId, i64>,
    /// (t0, t1, return route) per outstanding request.
    pending: BTreeMap<(NodeId, u32), (i64, i64, Vec<Hop>)>,
}

impl SyncAgent {
    pub fn new(spec: TimeSyncSpec, topo: &Topology) -> Self {
        let clients = match &spec.nodes {
            Some(nodes) => nodes.iter().filter(|n| **n != spec.reference).cloned().collect(),
            None => topo.graph().nodes.iter().map(|n| n.id.clone()).filter(|n| *n != spec.reference).collect(),
        };
        SyncAgent { spec, clients, estimates: BTreeMap::new(), pending: BTreeMap::new() }
    }

    pub fn spec(&self) -> &TimeSyncSpec {
        &self.spec
    }

    /// Enqueues one start event per round at the reference.
    pub fn schedule(&self, engine: &mut Engine<Message>) {
        for round in 0..self.spec.rounds {
            let at = self.spec.start_us + round as Micros * self.spec.interval_us;
            if at >= engine.clock() {
                engine
                    .schedule(
                        at,
                        self.spec.reference.clone(),
                        self.spec.reference.clone(),
                        Message::SyncStart { round },
                    )
                    .expect("not in the past");
            }
        }
    }

    fn timeout(&self, engine: &mut Engine<Message>, node: &NodeId, round: u32) {
        engine.note(Message::SyncTimeout { node: node.clone(), round });
    }

    /// Handles sync traffic; returns false for any other event.
    pub fn handle(&mut self, engine: &mut Engine<Message>, event: &SimEvent<Message>) -> bool {
        let now = engine.clock();
        match &event.payload {
            Message::SyncStart { round } => {
                let reference = self.spec.reference.clone();
                for client in self.clients.clone() {
                    let t0 = self.spec.read_clock(&client, now);
                    let msg = Message::SyncRequest { client: client.clone(), round: *round, t0 };
                    match engine.send(&client, &reference, msg) {
                        Ok(Delivery::Scheduled { .. }) => {}
                        Ok(Delivery::Dropped(_)) | Err(_) => self.timeout(engine, &client, *round),
                    }
                }
            }
            Message::SyncRequest { client, round, t0 } => {
                let t1 = self.spec.read_clock(&self.spec.reference, now);
                let back = event.route.iter().rev().map(|h| Hop { link: h.link, from: h.to, to: h.from }).collect();
                self.pending.insert((client.clone(), *round), (*t0, t1, back));
                let payload = Message::SyncProcess { client: client.clone(), round: *round };
                engine.timer(self.spec.processing_us, &self.spec.reference, payload);
            }
            Message::SyncProcess { client, round } => {
                let Some((t0, t1, hops)) = self.pending.remove(&(client.clone(), *round)) else {
                    return true;
                };
                let t2 = self.spec.read_clock(&self.spec.reference, now);
                let msg = Message::SyncResponse { client: client.clone(), round: *round, t0, t1, t2 };
                if engine.send_along(self.spec.reference.clone(), client.clone(), hops, msg).is_dropped() {
                    self.timeout(engine, client, *round);
                }
            }
            Message::SyncResponse { client, round, t0, t1, t2 } => {
                let t3 = self.spec.read_clock(client, now);
                let estimate = offset_estimate(*t0, *t1, *t2, t3);
                self.estimates.insert(client.clone(), estimate);
                engine.note(Message::SyncResult {
                    node: client.clone(),
                    round: *round,
                    estimate_us: estimate,
                    true_offset_us: self.spec.offset_true(client),
                });
            }
            _ => return false,
        }
        true
    }

    pub fn report(&self) -> SyncReport {
        let clocks: Vec<ClockState> = self
            .clients
            .iter()
            .map(|n| ClockState {
                node_id: n.clone(),
                offset_true_us: self.spec.offset_true(n),
                offset_estimate_us: self.estimates.get(n).copied(),
            })
            .collect();
        let max_residual_us = clocks.iter().filter_map(ClockState::residual).max().unwrap_or(0);
        let unsynced = clocks.iter().filter(|c| c.offset_estimate_us.is_none()).map(|c| c.node_id.clone()).collect();
        SyncReport { clocks, max_residual_us, unsynced }
    }
}

/// Synchronizes every client against the reference on its own engine.
pub fn sync_all(graph: NetworkGraph, spec: TimeSyncSpec, faults: Vec<FaultSpec>, seed: u64) -> SyncReport {
    let topo = Topology::new(graph);
    let mut agent = SyncAgent::new(spec, &topo);
    let mut engine = Engine::new(topo, seed);
    for f in faults {
        engine.inject_fault(f).expect("well-formed fault");
    }
    agent.schedule(&mut engine);
    engine.run_to_completion(&mut |e: &mut Engine<Message>, ev: &SimEvent<Message>| {
        agent.handle(e, ev);
    });
    agent.report()
}
