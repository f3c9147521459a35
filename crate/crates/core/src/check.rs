//! Property checks over a JSON-lines trace.
//!
//! Every property reports pass or fail with the first offending line.
//! A property with no relevant records passes and is flagged vacuous.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{TraceKind, TraceLine};
use crate::messages::{AuthStage, DomainBudget, Message, ProvisionStatus};
use crate::model::{DeviceId, Micros, NodeId, Scope, StreamId, SystemId, URLLC_LATENCY_BOUND_US};
use crate::runner::OutputHeader;
use crate::tsn::{windows_collide, GateWindow};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct CheckError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct Counterexample {
    /// 1-based line in the trace file.
    pub line: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub vacuous: bool,
    pub counterexample: Option<Counterexample>,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct TraceReport {
    pub header: Option<OutputHeader>,
    pub records: usize,
    pub properties: Vec<PropertyResult>,
}

impl TraceReport {
    pub fn failures(&self) -> usize {
        self.properties.iter().filter(|p| !p.passed).count()
    }

    pub fn get(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }
}

impl fmt::Display for TraceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.properties {
            let verdict = match (p.passed, p.vacuous) {
                (true, true) => "pass (vacuous)",
                (true, false) => "pass",
                (false, _) => "FAIL",
            };
            write!(f, "{:<22} {verdict}", p.name)?;
            if let Some(c) = &p.counterexample {
                write!(f, "  line {}: {}", c.line, c.detail)?;
            }
            writeln!(f)?;
        }
        write!(f, "{} record(s), {} failing propert(ies)", self.records, self.failures())
    }
}

/// One property being evaluated line by line.
struct Prop {
    name: &'static str,
    relevant: bool,
    failure: Option<Counterexample>,
}

impl Prop {
    fn new(name: &'static str) -> Self {
        Prop { name, relevant: false, failure: None }
    }

    fn seen(&mut self) {
        self.relevant = true;
    }

    fn fail(&mut self, line: usize, detail: impl Into<String>) {
        self.relevant = true;
        if self.failure.is_none() {
            self.failure = Some(Counterexample { line, detail: detail.into() });
        }
    }

    fn result(self) -> PropertyResult {
        PropertyResult {
            name: self.name,
            passed: self.failure.is_none(),
            vacuous: !self.relevant,
            counterexample: self.failure,
        }
    }
}

/// Registration milestones in required order.
const MILESTONES: [&str; 5] = ["RadioAttachOk", "AuthzGranted", "ConfigDelivered", "CucRegistered", "TsnAnnounce"];

#[derive(Default)]
struct DeviceProgress {
    /// Milestones reached since the last operator provisioning.
    reached: usize,
    attach_granted: bool,
    attach_failed: bool,
    scope: Option<Scope>,
}

struct ActiveStream {
    windows: Vec<GateWindow>,
}

pub fn check_trace(text: &str) -> Result<TraceReport, CheckError> {
    let mut header = None;
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| CheckError { line: n, message: e.to_string() })?;
        if lines.is_empty() && header.is_none() && value.get("format").is_some() {
            header = Some(serde_json::from_value(value).map_err(|e| CheckError { line: n, message: e.to_string() })?);
            continue;
        }
        let line: TraceLine =
            serde_json::from_value(value).map_err(|e| CheckError { line: n, message: e.to_string() })?;
        let msg = match &line.payload {
            Some(p) => Some(
                serde_json::from_value::<Message>(p.clone())
                    .map_err(|e| CheckError { line: n, message: format!("payload: {e}") })?,
            ),
            None => None,
        };
        lines.push((n, line, msg));
    }

    let mut order = Prop::new("event_order");
    let mut registration = Prop::new("registration_order");
    let mut auth = Prop::new("auth_order");
    let mut scope = Prop::new("scope_soundness");
    let mut legal = Prop::new("legal_transitions");
    let mut secure = Prop::new("secure_control_links");
    let mut overlap = Prop::new("gate_non_overlap");
    let mut budget = Prop::new("latency_budget");
    let mut observed = Prop::new("observed_latency");

    let mut last: Option<(Micros, u64)> = None;
    let mut seqs = BTreeSet::new();
    let mut devices: BTreeMap<DeviceId, DeviceProgress> = BTreeMap::new();
    let mut streams: BTreeMap<StreamId, ActiveStream> = BTreeMap::new();
    let mut late: Vec<(usize, usize, NodeId, u64)> = Vec::new();
    let mut violations: BTreeSet<(usize, NodeId, u64)> = BTreeSet::new();
    let mut status_changes: BTreeSet<usize> = BTreeSet::new();

    for (n, line, msg) in &lines {
        let n = *n;
        order.seen();
        let key = (line.time, line.seq);
        if last.is_some_and(|l| key < l) {
            order.fail(n, format!("({}, {}) after ({}, {})", key.0, key.1, last.unwrap().0, last.unwrap().1));
        }
        last = Some(key);
        if line.kind == TraceKind::Deliver && !seqs.insert(line.seq) {
            order.fail(n, format!("sequence number {} delivered twice", line.seq));
        }

        match line.kind {
            TraceKind::Illegal => legal.fail(
                n,
                format!(
                    "{} got {} in {:?}",
                    line.device.as_ref().map(|d| d.as_str()).unwrap_or("?"),
                    line.event.as_deref().unwrap_or("?"),
                    line.from_state
                ),
            ),
            TraceKind::Transition => legal.seen(),
            _ => {}
        }

        let Some(msg) = msg else { continue };
        if line.kind == TraceKind::Deliver && msg.is_control_tag() {
            secure.seen();
            if line.secure == Some(false) {
                secure.fail(n, format!("{} crossed an insecure link", line.payload_tag.as_deref().unwrap_or("?")));
            }
        }

        match (line.kind, msg) {
            (TraceKind::Note, Message::OrderViolation { device, detail }) => {
                legal.fail(n, format!("{device}: {detail}"));
            }
            (TraceKind::Deliver, Message::OperatorProvision { device }) => {
                devices.insert(device.clone(), DeviceProgress::default());
            }
            (TraceKind::Deliver, m) if m.milestone().is_some() => {
                let device = m.device_ref().expect("milestones name a device");
                let k = m.milestone().expect("checked");
                registration.seen();
                let p = devices.entry(device.clone()).or_default();
                if p.reached < k {
                    registration.fail(n, format!("{device}: {} before {}", MILESTONES[k], MILESTONES[k.max(1) - 1]));
                }
                p.reached = p.reached.max(k + 1);
                match m {
                    Message::AuthzGranted { scope: s, .. } => p.scope = Some(s.clone()),
                    Message::ConfigDelivered { .. } | Message::CucRegistered { .. } => {
                        scope.seen();
                        let needed = if matches!(m, Message::ConfigDelivered { .. }) {
                            SystemId::config_server()
                        } else {
                            SystemId::cuc()
                        };
                        if !p.scope.as_ref().is_some_and(|s| s.contains(&needed)) {
                            scope.fail(n, format!("{device} reached {needed} outside its authorized scope"));
                        }
                    }
                    _ => {}
                }
            }
            (TraceKind::Note, Message::AuthDecision { device, stage, granted, .. }) => {
                auth.seen();
                let p = devices.entry(device.clone()).or_default();
                match stage {
                    AuthStage::RadioAttach => {
                        p.attach_granted = *granted;
                        p.attach_failed = !*granted;
                    }
                    AuthStage::Authorization if !p.attach_granted => {
                        auth.fail(n, format!("{device} authorization decided without radio attach"));
                    }
                    AuthStage::Authorization => {}
                }
            }
            (TraceKind::Deliver, Message::ConfigRequest { device, .. }) => {
                auth.seen();
                if devices.get(device).is_some_and(|p| p.attach_failed) {
                    auth.fail(n, format!("{device} fetched config after a failed radio attach"));
                }
            }
            (TraceKind::Note, Message::Reservation { stream_id, windows, .. }) => {
                overlap.seen();
                for w in windows {
                    for (other_id, other) in &streams {
                        for o in other.windows.iter().filter(|o| o.link_id == w.link_id) {
                            if windows_collide(
                                w.offset_us,
                                w.duration_us,
                                w.period_us,
                                o.offset_us,
                                o.duration_us,
                                o.period_us,
                            ) {
                                overlap.fail(n, format!("{stream_id} overlaps {other_id} on {}", w.link_id));
                            }
                        }
                    }
                }
                for (i, a) in windows.iter().enumerate() {
                    for b in windows[i + 1..].iter().filter(|b| b.link_id == a.link_id && b.egress == a.egress) {
                        if windows_collide(
                            a.offset_us,
                            a.duration_us,
                            a.period_us,
                            b.offset_us,
                            b.duration_us,
                            b.period_us,
                        ) {
                            overlap.fail(n, format!("{stream_id} overlaps itself on {}", a.link_id));
                        }
                    }
                }
                streams.insert(stream_id.clone(), ActiveStream { windows: windows.clone() });
            }
            (TraceKind::Note, Message::Release { stream_id, .. }) => {
                streams.remove(stream_id);
            }
            (
                TraceKind::Note,
                Message::Provision {
                    use_case,
                    local_control,
                    max_e2e_latency_us,
                    budgets,
                    listener_latency_us,
                    total_latency_us,
                    ..
                },
            ) => {
                budget.seen();
                for listener in listener_latency_us.keys() {
                    match chain_latency(budgets, listener) {
                        None => budget.fail(n, format!("{use_case}: budgets do not reach {listener}")),
                        Some(sum) if sum > *max_e2e_latency_us => budget
                            .fail(n, format!("{use_case}: {sum} µs to {listener} exceeds {max_e2e_latency_us} µs")),
                        Some(_) => {}
                    }
                }
                if total_latency_us > max_e2e_latency_us {
                    budget.fail(n, format!("{use_case}: total {total_latency_us} µs exceeds {max_e2e_latency_us} µs"));
                }
                if *local_control && *total_latency_us >= URLLC_LATENCY_BOUND_US {
                    budget.fail(n, format!("{use_case}: LocalControl total {total_latency_us} µs not below 5000 µs"));
                }
            }
            (TraceKind::Note, Message::Observation { provision, listener, cycle, latency_us, expected_us }) => {
                observed.seen();
                if latency_us > expected_us {
                    late.push((n, *provision, listener.clone(), *cycle));
                }
            }
            (TraceKind::Note, Message::Violation { provision, listener, cycle, .. }) => {
                violations.insert((*provision, listener.clone(), *cycle));
            }
            (TraceKind::Note, Message::StatusChange { provision, status, .. })
                if *status != ProvisionStatus::Active =>
            {
                status_changes.insert(*provision);
            }
            _ => {}
        }
    }
    for (n, provision, listener, cycle) in late {
        if !violations.contains(&(provision, listener.clone(), cycle)) || !status_changes.contains(&provision) {
            observed.fail(n, format!("provision {provision} late at {listener} in cycle {cycle} without a violation"));
        }
    }

    Ok(TraceReport {
        header,
        records: lines.len(),
        properties: [order, registration, auth, scope, legal, secure, overlap, budget, observed]
            .into_iter()
            .map(Prop::result)
            .collect(),
    })
}

/// Sum of segment budgets from the talker to `listener`, following segment starts back.
fn chain_latency(budgets: &[DomainBudget], listener: &NodeId) -> Option<Micros> {
    let mut at = listener;
    let mut sum = 0;
    let mut steps = 0;
    while let Some(b) = budgets.iter().find(|b| b.ends.contains(at)) {
        sum += b.latency_budget_us;
        at = &b.start;
        steps += 1;
        if steps > budgets.len() {
            return None;
        }
    }
    (steps > 0 || budgets.is_empty()).then_some(sum)
}

impl Message {
    fn milestone(&self) -> Option<usize> {
        let tag = crate::engine::Payload::tag(self);
        MILESTONES.iter().position(|m| *m == tag)
    }

    fn device_ref(&self) -> Option<&DeviceId> {
        crate::engine::Payload::device(self)
    }

    fn is_control_tag(&self) -> bool {
        crate::engine::Payload::is_control(self)
    }
}
