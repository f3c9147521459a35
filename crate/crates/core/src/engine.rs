//! Deterministic discrete-event engine.
//!
//! One virtual clock in integer microseconds, one event queue totally ordered
//! by `(time, seq)`, one seeded RNG. Messages travel over graph links and pay
//! propagation plus serialization delay per hop. Faults suppress deliveries;
//! every suppressed message is recorded in the trace.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DeviceId, LinkId, Micros, NodeId, RegistrationState};
use crate::topology::{Hop, Topology};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("cannot schedule at {at} µs: clock is already at {clock} µs")]
    SchedulingInPast { at: Micros, clock: Micros },
    #[error("no path from {src} to {dst}")]
    NoPath { src: NodeId, dst: NodeId },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("malformed fault: {0}")]
    MalformedFault(String),
}

/// Message body carried by engine events.
pub trait Payload: Clone + fmt::Debug + Serialize {
    fn tag(&self) -> &'static str;

    /// Size on the wire. Control messages default to zero.
    fn frame_bits(&self) -> u64 {
        0
    }

    /// Registrant the message concerns, if any.
    fn device(&self) -> Option<&DeviceId> {
        None
    }

    /// Control-plane messages must only cross secure links.
    fn is_control(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
pub struct SimEvent<P> {
    pub time: Micros,
    pub seq: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub payload: P,
    /// Hops traversed; empty for local timer events.
    pub route: Vec<Hop>,
    /// Every hop was over a secure link.
    pub secure: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle(pub u64);

/// Predicate selecting messages for a `DropMessage` fault. Absent fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<DeviceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<Micros>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until: Option<Micros>,
}

impl MessageMatch {
    pub fn matches<P: Payload>(&self, at: Micros, src: &NodeId, dst: &NodeId, payload: &P) -> bool {
        self.tag.as_deref().is_none_or(|t| t == payload.tag())
            && self.src.as_ref().is_none_or(|s| s == src)
            && self.dst.as_ref().is_none_or(|d| d == dst)
            && self.device.as_ref().is_none_or(|d| payload.device() == Some(d))
            && self.from.is_none_or(|f| at >= f)
            && self.until.is_none_or(|u| at < u)
    }
}

/// Injected fault. Time intervals are half-open: `[from, until)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FaultSpec {
    DropMessage {
        #[serde(rename = "match")]
        matcher: MessageMatch,
    },
    LinkDown {
        link_id: LinkId,
        from: Micros,
        until: Micros,
    },
    AuthReject {
        device_id: DeviceId,
    },
    ConfigUnavailable {
        from: Micros,
        until: Micros,
    },
}

impl FaultSpec {
    pub fn well_formed(&self) -> Result<(), String> {
        match self {
            FaultSpec::LinkDown { from, until, .. } | FaultSpec::ConfigUnavailable { from, until } if from > until => {
                Err(format!("interval [{from}, {until}) is reversed"))
            }
            FaultSpec::DropMessage { matcher: MessageMatch { from: Some(f), until: Some(u), .. } } if f > u => {
                Err(format!("interval [{f}, {u}) is reversed"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DropReason {
    LinkDown { link: LinkId },
    Matched { fault: usize },
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropReason::LinkDown { link } => write!(f, "LinkDown:{link}"),
            DropReason::Matched { fault } => write!(f, "DropMessage:{fault}"),
        }
    }
}

/// Outcome of a send.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Delivery {
    Scheduled { handle: EventHandle, arrival: Micros },
    Dropped(DropReason),
}

impl Delivery {
    pub fn is_dropped(&self) -> bool {
        matches!(self, Delivery::Dropped(_))
    }
}

/// One trace entry. Records that do not correspond to a delivered event carry
/// the sequence number of the event whose handler produced them, so the trace
/// stays ordered by `(time, seq)`.
#[derive(Debug, Clone)]
pub enum TraceRecord<P> {
    Delivered(SimEvent<P>),
    Dropped { time: Micros, seq: u64, src: NodeId, dst: NodeId, payload: P, reason: DropReason },
    Transition { time: Micros, seq: u64, device: DeviceId, from: RegistrationState, to: RegistrationState },
    Illegal { time: Micros, seq: u64, device: DeviceId, state: RegistrationState, event: String },
    Note { time: Micros, seq: u64, payload: P },
}

impl<P> TraceRecord<P> {
    pub fn key(&self) -> (Micros, u64) {
        match self {
            TraceRecord::Delivered(e) => (e.time, e.seq),
            TraceRecord::Dropped { time, seq, .. }
            | TraceRecord::Transition { time, seq, .. }
            | TraceRecord::Illegal { time, seq, .. }
            | TraceRecord::Note { time, seq, .. } => (*time, *seq),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Deliver,
    Drop,
    Transition,
    Illegal,
    Note,
}

/// Flat JSON-lines form of a trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub time: Micros,
    pub seq: u64,
    pub kind: TraceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<DeviceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_state: Option<RegistrationState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_state: Option<RegistrationState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Present (and false) only when a message crossed an insecure link.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secure: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<serde_json::Value>,
}

impl TraceLine {
    fn bare(time: Micros, seq: u64, kind: TraceKind) -> Self {
        TraceLine {
            time,
            seq,
            kind,
            src: None,
            dst: None,
            payload_tag: None,
            device: None,
            from_state: None,
            to_state: None,
            event: None,
            reason: None,
            secure: None,
            payload: None,
        }
    }
}

impl<P: Payload> TraceRecord<P> {
    pub fn to_line(&self) -> TraceLine {
        let body = |p: &P| serde_json::to_value(p).ok();
        match self {
            TraceRecord::Delivered(e) => TraceLine {
                src: Some(e.src.clone()),
                dst: Some(e.dst.clone()),
                payload_tag: Some(e.payload.tag().to_owned()),
                device: e.payload.device().cloned(),
                secure: (!e.secure).then_some(false),
                payload: body(&e.payload),
                ..TraceLine::bare(e.time, e.seq, TraceKind::Deliver)
            },
            TraceRecord::Dropped { time, seq, src, dst, payload, reason } => TraceLine {
                src: Some(src.clone()),
                dst: Some(dst.clone()),
                payload_tag: Some(payload.tag().to_owned()),
                device: payload.device().cloned(),
                reason: Some(reason.to_string()),
                payload: body(payload),
                ..TraceLine::bare(*time, *seq, TraceKind::Drop)
            },
            TraceRecord::Transition { time, seq, device, from, to } => TraceLine {
                device: Some(device.clone()),
                from_state: Some(*from),
                to_state: Some(*to),
                ..TraceLine::bare(*time, *seq, TraceKind::Transition)
            },
            TraceRecord::Illegal { time, seq, device, state, event } => TraceLine {
                device: Some(device.clone()),
                from_state: Some(*state),
                event: Some(event.clone()),
                ..TraceLine::bare(*time, *seq, TraceKind::Illegal)
            },
            TraceRecord::Note { time, seq, payload } => TraceLine {
                payload_tag: Some(payload.tag().to_owned()),
                device: payload.device().cloned(),
                payload: body(payload),
                ..TraceLine::bare(*time, *seq, TraceKind::Note)
            },
        }
    }
}

/// Append-only record of a run.
#[derive(Debug, Clone)]
pub struct Trace<P> {
    records: Vec<TraceRecord<P>>,
}

impl<P> Default for Trace<P> {
    fn default() -> Self {
        Trace { records: Vec::new() }
    }
}

impl<P: Payload> Trace<P> {
    pub fn records(&self) -> &[TraceRecord<P>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn delivered(&self) -> impl Iterator<Item = &SimEvent<P>> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Delivered(e) => Some(e),
            _ => None,
        })
    }

    pub fn lines(&self) -> impl Iterator<Item = TraceLine> + '_ {
        self.records.iter().map(TraceRecord::to_line)
    }

    /// One JSON object per record, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for line in self.lines() {
            out.push_str(&serde_json::to_string(&line).expect("trace line serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub scheduled: u64,
    pub delivered: u64,
    pub dropped: u64,
}

struct Queued<P>(SimEvent<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Queued<P> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.time, other.0.seq).cmp(&(self.0.time, self.0.seq))
    }
}

/// Reacts to delivered events; may schedule and send further events.
pub trait Handler<P> {
    fn handle(&mut self, engine: &mut Engine<P>, event: &SimEvent<P>);
}

impl<P, F: FnMut(&mut Engine<P>, &SimEvent<P>)> Handler<P> for F {
    fn handle(&mut self, engine: &mut Engine<P>, event: &SimEvent<P>) {
        self(engine, event)
    }
}

pub struct Engine<P> {
    clock: Micros,
    next_seq: u64,
    /// Sequence number of the event being handled, 0 outside handlers.
    cause: u64,
    queue: BinaryHeap<Queued<P>>,
    topology: Topology,
    distance_cache: HashMap<usize, Vec<u32>>,
    faults: Vec<FaultSpec>,
    rng: ChaCha8Rng,
    control_jitter: Micros,
    trace: Trace<P>,
    stats: EngineStats,
}

impl<P: Payload> Engine<P> {
    pub fn new(topology: Topology, seed: u64) -> Self {
        Engine {
            clock: 0,
            next_seq: 1,
            cause: 0,
            queue: BinaryHeap::new(),
            topology,
            distance_cache: HashMap::new(),
            faults: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            control_jitter: 0,
            trace: Trace::default(),
            stats: EngineStats::default(),
        }
    }

    pub fn clock(&self) -> Micros {
        self.clock
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Adds a uniform random delay in `[0, max]` to every control message.
    pub fn set_control_jitter(&mut self, max: Micros) {
        self.control_jitter = max;
    }

    pub fn trace(&self) -> &Trace<P> {
        &self.trace
    }

    pub fn into_trace(self) -> Trace<P> {
        self.trace
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    fn alloc_seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    fn enqueue(
        &mut self,
        at: Micros,
        src: NodeId,
        dst: NodeId,
        payload: P,
        route: Vec<Hop>,
        secure: bool,
    ) -> EventHandle {
        let seq = self.alloc_seq();
        self.stats.scheduled += 1;
        self.queue.push(Queued(SimEvent { time: at, seq, src, dst, payload, route, secure }));
        EventHandle(seq)
    }

    /// Enqueues a local event (no link traversal) at absolute time `at`.
    pub fn schedule(&mut self, at: Micros, src: NodeId, dst: NodeId, payload: P) -> Result<EventHandle, EngineError> {
        if at < self.clock {
            return Err(EngineError::SchedulingInPast { at, clock: self.clock });
        }
        Ok(self.enqueue(at, src, dst, payload, Vec::new(), true))
    }

    /// Local timer at `node`, `delay` after now.
    pub fn timer(&mut self, delay: Micros, node: &NodeId, payload: P) -> EventHandle {
        self.enqueue(self.clock + delay, node.clone(), node.clone(), payload, Vec::new(), true)
    }

    pub fn inject_fault(&mut self, spec: FaultSpec) -> Result<(), EngineError> {
        spec.well_formed().map_err(EngineError::MalformedFault)?;
        self.faults.push(spec);
        Ok(())
    }

    pub fn faults(&self) -> &[FaultSpec] {
        &self.faults
    }

    pub fn auth_rejected(&self, device: &DeviceId) -> bool {
        self.faults.iter().any(|f| matches!(f, FaultSpec::AuthReject { device_id } if device_id == device))
    }

    pub fn config_unavailable_at(&self, at: Micros) -> bool {
        self.faults
            .iter()
            .any(|f| matches!(f, FaultSpec::ConfigUnavailable { from, until } if (*from..*until).contains(&at)))
    }

    pub fn link_down_at(&self, link: &LinkId, at: Micros) -> bool {
        self.faults.iter().any(|f| {
            matches!(f, FaultSpec::LinkDown { link_id, from, until }
                if link_id == link && (*from..*until).contains(&at))
        })
    }

    /// Link indices down at `at`.
    pub fn links_down_at(&self, at: Micros) -> BTreeSet<usize> {
        self.faults
            .iter()
            .filter_map(|f| match f {
                FaultSpec::LinkDown { link_id, from, until } if (*from..*until).contains(&at) => {
                    self.topology.link_idx(link_id)
                }
                _ => None,
            })
            .collect()
    }

    pub fn route(&mut self, src: &NodeId, dst: &NodeId) -> Result<Vec<Hop>, EngineError> {
        let s = self.topology.node_idx(src).ok_or_else(|| EngineError::UnknownNode(src.clone()))?;
        let d = self.topology.node_idx(dst).ok_or_else(|| EngineError::UnknownNode(dst.clone()))?;
        let none = BTreeSet::new();
        let topo = &self.topology;
        let dist = self.distance_cache.entry(d).or_insert_with(|| topo.distances_to(d, &none));
        topo.walk(s, dist, &none).ok_or_else(|| EngineError::NoPath { src: src.clone(), dst: dst.clone() })
    }

    /// Whether a message sent now from `src` would find every link on its
    /// route up.
    pub fn reachable(&mut self, src: &NodeId, dst: &NodeId) -> bool {
        let now = self.clock;
        match self.route(src, dst) {
            Ok(hops) => hops.iter().all(|h| !self.link_down_at(self.topology.link_id(h.link), now)),
            Err(_) => false,
        }
    }

    /// Routes and sends a message from `src` to `dst`, leaving now.
    pub fn send(&mut self, src: &NodeId, dst: &NodeId, payload: P) -> Result<Delivery, EngineError> {
        let hops = self.route(src, dst)?;
        Ok(self.send_along(src.clone(), dst.clone(), hops, payload))
    }

    /// Sends back along the reverse of `event`'s route.
    pub fn reply(&mut self, event: &SimEvent<P>, payload: P) -> Delivery {
        let hops = event.route.iter().rev().map(|h| Hop { link: h.link, from: h.to, to: h.from }).collect();
        self.send_along(event.dst.clone(), event.src.clone(), hops, payload)
    }

    /// Sends over an explicit hop sequence. Arrival is the send time plus, per
    /// hop, the directional propagation delay and the serialization time
    /// rounded up to whole microseconds.
    pub fn send_along(&mut self, src: NodeId, dst: NodeId, hops: Vec<Hop>, payload: P) -> Delivery {
        let now = self.clock;
        if let Some(i) = self
            .faults
            .iter()
            .position(|f| matches!(f, FaultSpec::DropMessage { matcher } if matcher.matches(now, &src, &dst, &payload)))
        {
            return self.drop_message(src, dst, payload, DropReason::Matched { fault: i });
        }
        let bits = payload.frame_bits();
        let mut t = now;
        let mut secure = true;
        for &h in &hops {
            let link = self.topology.link(h.link);
            if self.link_down_at(&link.link_id, t) {
                let reason = DropReason::LinkDown { link: link.link_id.clone() };
                return self.drop_message(src, dst, payload, reason);
            }
            secure &= link.secure;
            t += self.topology.hop_delay(h) + link.transmission_us(bits);
        }
        if self.control_jitter > 0 && payload.is_control() {
            t += self.rng.random_range(0..=self.control_jitter);
        }
        let handle = self.enqueue(t, src, dst, payload, hops, secure);
        Delivery::Scheduled { handle, arrival: t }
    }

    fn drop_message(&mut self, src: NodeId, dst: NodeId, payload: P, reason: DropReason) -> Delivery {
        self.stats.scheduled += 1;
        self.stats.dropped += 1;
        self.trace.records.push(TraceRecord::Dropped {
            time: self.clock,
            seq: self.cause,
            src,
            dst,
            payload,
            reason: reason.clone(),
        });
        Delivery::Dropped(reason)
    }

    pub fn note(&mut self, payload: P) {
        self.trace.records.push(TraceRecord::Note { time: self.clock, seq: self.cause, payload });
    }

    pub fn record_transition(&mut self, device: &DeviceId, from: RegistrationState, to: RegistrationState) {
        self.trace.records.push(TraceRecord::Transition {
            time: self.clock,
            seq: self.cause,
            device: device.clone(),
            from,
            to,
        });
    }

    pub fn record_illegal(&mut self, device: &DeviceId, state: RegistrationState, event: &str) {
        self.trace.records.push(TraceRecord::Illegal {
            time: self.clock,
            seq: self.cause,
            device: device.clone(),
            state,
            event: event.to_owned(),
        });
    }

    /// Delivers events until the queue is empty; the clock stays at the last
    /// delivered event.
    pub fn run_to_completion<H: Handler<P>>(&mut self, handler: &mut H) -> &Trace<P> {
        while let Some(Queued(event)) = self.queue.pop() {
            self.clock = event.time;
            self.cause = event.seq;
            self.stats.delivered += 1;
            self.trace.records.push(TraceRecord::Delivered(event.clone()));
            handler.handle(self, &event);
        }
        self.cause = 0;
        &self.trace
    }

    /// Delivers every event with `time <= t_end` in `(time, seq)` order, then
    /// advances the clock to `t_end`.
    pub fn run_until<H: Handler<P>>(&mut self, t_end: Micros, handler: &mut H) -> Result<&Trace<P>, EngineError> {
        if t_end < self.clock {
            return Err(EngineError::SchedulingInPast { at: t_end, clock: self.clock });
        }
        while self.queue.peek().is_some_and(|q| q.0.time <= t_end) {
            let Queued(event) = self.queue.pop().expect("peeked");
            self.clock = event.time;
            self.cause = event.seq;
            self.stats.delivered += 1;
            self.trace.records.push(TraceRecord::Delivered(event.clone()));
            handler.handle(self, &event);
        }
        self.clock = t_end;
        self.cause = 0;
        Ok(&self.trace)
    }
}
