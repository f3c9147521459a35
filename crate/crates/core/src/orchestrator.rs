//! Multi-domain manager: drives device registration through the engine,
//! provisions use cases across domains and replays their data plane.
//!
//! A use case's path is split into maximal same-domain segments. TSN segments
//! get a gate-window reservation from the CNC, released at the point of the
//! cycle where the preceding segments hand the frame over. Other domains get a
//! capacity-checked bearer whose latency is the domain's configured constant.
//! Provisioning is all-or-nothing.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::engine::{Delivery, Engine, Handler, SimEvent};
use crate::messages::{AuthStage, Backing, DomainBudget, DomainFailure, Frame, Message, ProvisionStatus};
use crate::model::{
    DeviceId, Domain, Micros, NodeId, RegistrationState, Scope, StreamId, SystemId, Traffic, UseCase, UseCaseGroup,
    URLLC_LATENCY_BOUND_US,
};
use crate::registration::{
    transition, Action, Capabilities, ConfigServer, DeviceConfig, RegistrationEvent, TsnTransmissionType,
};
use crate::scenario::{DeviceSpec, ExpectedOutcome, OperatorAction, Scenario, Services, UseCaseSpec};
use crate::security::{challenge_response, AuditAction, AuditLog, AuthzDecision, CredentialStore, RadioAttach};
use crate::timesync::SyncAgent;
use crate::topology::{Hop, Topology};
use crate::tsn::{Cnc, Cuc, CucOutcome, GateWindow, StreamRequest};

/// Period used to reserve TSN capacity for bursty traffic.
pub const BURSTY_RESERVATION_PERIOD_US: Micros = 1_000;

/// Period and frame size a use case reserves.
pub fn stream_shape(traffic: &Traffic) -> (Micros, u64) {
    match *traffic {
        Traffic::Periodic { period_us, frame_bytes } => (period_us, frame_bytes),
        Traffic::Bursty { mean_rate_bps } => {
            let bytes = (mean_rate_bps as u128 * BURSTY_RESERVATION_PERIOD_US as u128).div_ceil(8_000_000);
            (BURSTY_RESERVATION_PERIOD_US, bytes as u64)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Registrant {
    pub spec: DeviceSpec,
    pub state: RegistrationState,
    pub config_failures: u32,
    pub scope: Option<Scope>,
    pub config: Option<DeviceConfig>,
    pub provisioned_at: Option<Micros>,
    pub operational_at: Option<Micros>,
}

impl Registrant {
    /// Time from the last operator provisioning to Operational.
    pub fn registration_duration(&self) -> Option<Micros> {
        self.operational_at?.checked_sub(self.provisioned_at?)
    }
}

#[derive(Debug, Clone)]
struct Bearer {
    links: Vec<usize>,
    commit_bps: u64,
}

#[derive(Debug, Clone)]
enum Leg {
    Tsn { hops: Vec<Hop>, windows: Vec<GateWindow> },
    Bearer { hops: Vec<Hop>, budget: Micros },
}

#[derive(Debug, Clone)]
struct Plan {
    budgets: Vec<DomainBudget>,
    listener_latency: BTreeMap<NodeId, Micros>,
    total_latency: Micros,
    legs: Vec<Vec<Leg>>,
    streams: Vec<StreamId>,
    bearers: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProvisionRecord {
    pub id: usize,
    pub use_case: UseCase,
    pub status: ProvisionStatus,
    pub budgets: Vec<DomainBudget>,
    pub listener_latency_us: BTreeMap<NodeId, Micros>,
    pub total_latency_us: Micros,
    pub epoch: u32,
    pub retried: bool,
    pub observed_max_latency_us: BTreeMap<NodeId, Micros>,
    pub observations: u64,
    pub violations: u64,
    #[serde(skip)]
    talker: usize,
    #[serde(skip)]
    listeners: Vec<usize>,
    #[serde(skip)]
    plan: Option<Plan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome")]
pub enum UseCaseOutcome {
    Pending,
    Provisioned { provision: usize },
    Failed { failures: Vec<DomainFailure> },
}

pub struct Orchestrator {
    services: Services,
    topo: Topology,
    credentials: CredentialStore,
    configs: BTreeMap<DeviceId, DeviceConfig>,
    config_server: ConfigServer,
    cuc: Cuc,
    cnc: Cnc,
    bearers: BTreeMap<u64, Bearer>,
    next_bearer: u64,
    registrants: BTreeMap<DeviceId, Registrant>,
    challenges: BTreeMap<DeviceId, Vec<u8>>,
    audit: AuditLog,
    use_cases: Vec<(UseCaseSpec, UseCase)>,
    outcomes: Vec<UseCaseOutcome>,
    waiting: BTreeSet<usize>,
    provisions: Vec<ProvisionRecord>,
    domain_latency: BTreeMap<Domain, Micros>,
    replay_cycles: u32,
    sync: Option<SyncAgent>,
    spectrum_period: Option<Micros>,
    operator_actions: Vec<OperatorAction>,
    localization: Vec<(DeviceId, f64, f64)>,
    order_violations: u64,
}

impl Orchestrator {
    /// Builds the manager for a validated scenario.
    pub fn new(scenario: &Scenario) -> Self {
        let topo = Topology::new(scenario.graph());
        let registrants = scenario
            .devices
            .iter()
            .map(|d| {
                let r = Registrant {
                    spec: d.clone(),
                    state: RegistrationState::Unprovisioned,
                    config_failures: 0,
                    scope: None,
                    config: None,
                    provisioned_at: None,
                    operational_at: None,
                };
                (d.dte_id.clone(), r)
            })
            .collect();
        let use_cases: Vec<(UseCaseSpec, UseCase)> = scenario
            .use_cases
            .iter()
            .map(|u| (u.clone(), scenario.resolve_use_case(u).expect("validated use case")))
            .collect();
        let domain_latency = [Domain::FiveG, Domain::Tsn, Domain::Sdn, Domain::IndustrialEthernet]
            .into_iter()
            .map(|d| (d, scenario.domain_latency(d)))
            .collect();
        Orchestrator {
            services: scenario.services.clone(),
            sync: scenario.timesync.clone().map(|s| SyncAgent::new(s, &topo)),
            topo,
            credentials: scenario.credentials.clone(),
            configs: scenario.configs.iter().map(|c| (c.device_id.clone(), c.clone())).collect(),
            config_server: ConfigServer::new(),
            cuc: Cuc::new(),
            cnc: Cnc::new(),
            bearers: BTreeMap::new(),
            next_bearer: 0,
            registrants,
            challenges: BTreeMap::new(),
            audit: AuditLog::new(),
            outcomes: vec![UseCaseOutcome::Pending; use_cases.len()],
            use_cases,
            waiting: BTreeSet::new(),
            provisions: Vec::new(),
            domain_latency,
            replay_cycles: scenario.replay_cycles,
            spectrum_period: scenario.spectrum_heartbeat_us.filter(|p| *p > 0),
            operator_actions: scenario.operator_actions.clone(),
            localization: scenario.localization.iter().map(|(d, p)| (d.clone(), p.x_m, p.y_m)).collect(),
            order_violations: 0,
        }
    }

    /// Enqueues the scripted events. Call once, before running.
    pub fn prime(&mut self, engine: &mut Engine<Message>) {
        let here = self.services.orchestrator.clone();
        for (d, x, y) in &self.localization {
            engine.note(Message::LocalizationFix { device: d.clone(), x_m: *x, y_m: *y });
        }
        for action in &self.operator_actions {
            let payload = match action {
                OperatorAction::Provision { device_id, .. } => Message::OperatorProvision { device: device_id.clone() },
                OperatorAction::StoreConfig { config, .. } => {
                    Message::StoreConfig { device: config.device_id.clone(), config: config.clone() }
                }
            };
            engine.schedule(action.at(), here.clone(), here.clone(), payload).expect("clock at zero");
        }
        for (i, (spec, _)) in self.use_cases.iter().enumerate() {
            match spec.at {
                Some(at) => {
                    engine
                        .schedule(at, here.clone(), here.clone(), Message::UseCaseStart { use_case: i })
                        .expect("clock at zero");
                }
                None => {
                    self.waiting.insert(i);
                }
            }
        }
        if let Some(sync) = &self.sync {
            sync.schedule(engine);
        }
        if self.spectrum_period.is_some() {
            engine.schedule(0, here.clone(), here, Message::SpectrumTick).expect("clock at zero");
        }
        // use cases between plain nodes need no registration
        self.start_ready_use_cases(engine);
    }

    pub fn registrants(&self) -> &BTreeMap<DeviceId, Registrant> {
        &self.registrants
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn provisions(&self) -> &[ProvisionRecord] {
        &self.provisions
    }

    pub fn use_case_outcomes(&self) -> impl Iterator<Item = (&UseCaseSpec, &UseCaseOutcome)> {
        self.use_cases.iter().map(|(s, _)| s).zip(&self.outcomes)
    }

    pub fn cnc(&self) -> &Cnc {
        &self.cnc
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn sync(&self) -> Option<&SyncAgent> {
        self.sync.as_ref()
    }

    pub fn order_violations(&self) -> u64 {
        self.order_violations
    }

    /// Committed bearer throughput on a link, bits per second.
    pub fn bearer_load(&self, link: usize) -> u64 {
        self.bearers.values().filter(|b| b.links.contains(&link)).map(|b| b.commit_bps).sum()
    }

    /// Fails use cases still waiting for their endpoints. Call after the run.
    pub fn finish(&mut self, engine: &mut Engine<Message>) {
        for i in std::mem::take(&mut self.waiting) {
            let failures =
                vec![DomainFailure { domain: None, reason: "endpoints never became Operational".to_owned() }];
            self.fail_use_case(engine, i, failures);
        }
    }

    /// Whether `outcome` satisfies the use case's expectation.
    pub fn outcome_expected(spec: &UseCaseSpec, outcome: &UseCaseOutcome, provisions: &[ProvisionRecord]) -> bool {
        let actual = match outcome {
            UseCaseOutcome::Pending => return false,
            UseCaseOutcome::Failed { .. } => ExpectedOutcome::ProvisionFailure,
            UseCaseOutcome::Provisioned { provision } => match provisions[*provision].status {
                ProvisionStatus::Active => ExpectedOutcome::Active,
                ProvisionStatus::Degraded | ProvisionStatus::Withdrawn => ExpectedOutcome::Withdrawn,
            },
        };
        actual == spec.expect.unwrap_or(ExpectedOutcome::Active)
    }

    // ---- helpers -------------------------------------------------------

    fn send(&mut self, engine: &mut Engine<Message>, src: &NodeId, dst: &NodeId, msg: Message) {
        if let Err(e) = engine.send(src, dst, msg.clone()) {
            engine.note(Message::Unroutable {
                src: src.clone(),
                dst: dst.clone(),
                what: format!("{}: {e}", tag(&msg)),
            });
        }
    }

    fn device_node(&self, device: &DeviceId) -> NodeId {
        self.registrants[device].spec.node.clone()
    }

    fn apply(&mut self, engine: &mut Engine<Message>, device: &DeviceId, event: RegistrationEvent) {
        let Some(reg) = self.registrants.get(device) else {
            return;
        };
        let caps = Capabilities { is_tsn_end_device: reg.spec.is_tsn_end_device, config_failures: reg.config_failures };
        let state = reg.state;
        let t = match transition(state, &event, caps) {
            Ok(t) => t,
            Err(e) => {
                engine.record_illegal(device, e.state, e.event);
                return;
            }
        };
        let now = engine.clock();
        let mut prev = state;
        for &next in &t.path {
            engine.record_transition(device, prev, next);
            self.audit.append(now, device.as_str(), AuditAction::Transition, &format!("{prev}->{next}"));
            prev = next;
        }
        let reg = self.registrants.get_mut(device).expect("checked above");
        reg.state = t.next();
        match &event {
            RegistrationEvent::OperatorProvision { .. } => {
                reg.config_failures = 0;
                reg.scope = None;
                reg.config = None;
                reg.provisioned_at = Some(now);
                reg.operational_at = None;
            }
            RegistrationEvent::AuthzGranted { scope } => reg.scope = Some(scope.clone()),
            RegistrationEvent::ConfigDelivered { config } => reg.config = Some(config.clone()),
            RegistrationEvent::ConfigUnavailable => reg.config_failures += 1,
            _ => {}
        }
        if reg.state == RegistrationState::Operational {
            reg.operational_at = Some(now);
        }
        let node = reg.spec.node.clone();
        for action in t.actions {
            self.act(engine, device, &node, action);
        }
        match self.registrants[device].state {
            RegistrationState::Operational => self.start_ready_use_cases(engine),
            RegistrationState::Rejected => self.fail_use_cases_of(engine, device),
            _ => {}
        }
    }

    fn act(&mut self, engine: &mut Engine<Message>, device: &DeviceId, node: &NodeId, action: Action) {
        let reg = &self.registrants[device];
        match action {
            Action::PowerOn => {
                engine.timer(0, node, Message::PowerOn { device: device.clone() });
            }
            Action::RequestAuthorization => {
                let msg = Message::AuthzRequest { device: device.clone(), signature: reg.spec.dte_signature.clone() };
                let authz = self.services.authz.clone();
                self.send(engine, node, &authz, msg);
            }
            Action::RequestConfiguration => {
                let msg = Message::ConfigRequest { device: device.clone(), attempt: reg.config_failures + 1 };
                let server = self.services.config_server.clone();
                self.send(engine, node, &server, msg);
            }
            Action::RetryConfiguration { after } => {
                let attempt = reg.config_failures + 1;
                engine.timer(after, node, Message::RetryTimer { device: device.clone(), attempt });
            }
            Action::RegisterAtCuc => {
                let transmission =
                    reg.config.as_ref().and_then(|c| c.tsn_transmission_type).unwrap_or(TsnTransmissionType::EndToEnd);
                let msg = Message::CucRegisterRequest { device: device.clone(), transmission };
                let cuc = self.services.cuc.clone();
                self.send(engine, node, &cuc, msg);
            }
            Action::GoOperational => {}
            Action::AnnounceReady => {
                let cnc = self.services.cnc.clone();
                self.send(engine, node, &cnc, Message::TsnAnnounce { device: device.clone() });
            }
        }
    }

    fn order_violation(&mut self, engine: &mut Engine<Message>, device: &DeviceId, detail: String) {
        self.order_violations += 1;
        engine.note(Message::OrderViolation { device: device.clone(), detail });
    }

    // ---- registration handlers ----------------------------------------

    fn on_operator_provision(&mut self, engine: &mut Engine<Message>, device: &DeviceId) {
        let now = engine.clock();
        let state = self.registrants[device].state;
        let config = self.configs.get(device).cloned().unwrap_or_else(|| DeviceConfig::new(device.clone()));
        let stored = self.store(engine, config.clone(), state);
        if !stored {
            engine.record_illegal(device, state, "OperatorProvision");
            return;
        }
        let se = self.registrants[device].spec.secure_element_id.clone();
        self.audit.append(now, "operator", AuditAction::Provision, &format!("provision {device}"));
        self.apply(engine, device, RegistrationEvent::OperatorProvision { config, secure_element_id: se });
    }

    fn store(&mut self, engine: &mut Engine<Message>, config: DeviceConfig, state: RegistrationState) -> bool {
        let device = config.device_id.clone();
        let result = self.config_server.store_config(config, Some(state));
        let (accepted, detail) = match &result {
            Ok(()) => (true, "stored".to_owned()),
            Err(e) => (false, e.to_string()),
        };
        self.audit.append(engine.clock(), "config-server", AuditAction::Config, &format!("{device}: {detail}"));
        engine.note(Message::ConfigStored { device, accepted, detail });
        accepted
    }

    fn on_attach_request(&mut self, engine: &mut Engine<Message>, event: &SimEvent<Message>, device: &DeviceId) {
        let mut nonce = vec![0u8; 16];
        engine.rng().fill_bytes(&mut nonce);
        self.challenges.insert(device.clone(), nonce.clone());
        engine.reply(event, Message::AuthChallenge { device: device.clone(), nonce });
    }

    fn on_auth_response(
        &mut self,
        engine: &mut Engine<Message>,
        event: &SimEvent<Message>,
        device: &DeviceId,
        response: &[u8],
    ) {
        let Some(nonce) = self.challenges.remove(device) else {
            self.order_violation(engine, device, "attach response without challenge".into());
            return;
        };
        let se = self.registrants[device].spec.secure_element_id.clone();
        let rejected = engine.auth_rejected(device);
        let outcome = self.credentials.radio_attach_auth(&se, &nonce, response, rejected);
        let ok = outcome == RadioAttach::Ok;
        let detail = match (ok, rejected) {
            (true, _) => "attach ok".to_owned(),
            (false, true) => "attach rejected by fault".to_owned(),
            (false, false) => "attach failed".to_owned(),
        };
        self.audit.append(engine.clock(), "core-auth", AuditAction::Auth, &format!("{device}: {detail}"));
        engine.note(Message::AuthDecision {
            device: device.clone(),
            stage: AuthStage::RadioAttach,
            granted: ok,
            detail,
        });
        let reply = if ok {
            Message::RadioAttachOk { device: device.clone() }
        } else {
            Message::RadioAttachFail { device: device.clone() }
        };
        engine.reply(event, reply);
    }

    fn on_authz_request(
        &mut self,
        engine: &mut Engine<Message>,
        event: &SimEvent<Message>,
        device: &DeviceId,
        signature: &[u8],
    ) {
        let attached = self.registrants[device].state == RegistrationState::RadioAttached;
        match self.credentials.authorize_dte(device, signature, attached) {
            Err(e) => self.order_violation(engine, device, e.to_string()),
            Ok(decision) => {
                let (granted, detail, reply) = match decision {
                    AuthzDecision::Granted { scope } => {
                        let names: Vec<&str> = scope.iter().map(SystemId::as_str).collect();
                        let detail = format!("granted [{}]", names.join(","));
                        (true, detail, Message::AuthzGranted { device: device.clone(), scope })
                    }
                    AuthzDecision::Denied { reason } => {
                        (false, format!("denied {reason:?}"), Message::AuthzDenied { device: device.clone(), reason })
                    }
                };
                self.audit.append(engine.clock(), "authz", AuditAction::Auth, &format!("{device}: {detail}"));
                engine.note(Message::AuthDecision {
                    device: device.clone(),
                    stage: AuthStage::Authorization,
                    granted,
                    detail,
                });
                engine.reply(event, reply);
            }
        }
    }

    fn on_config_request(&mut self, engine: &mut Engine<Message>, event: &SimEvent<Message>, device: &DeviceId) {
        let reg = &self.registrants[device];
        let in_scope = reg.scope.as_ref().is_some_and(|s| s.contains(&SystemId::config_server()));
        let now = engine.clock();
        let reply = if reg.state != RegistrationState::Authorized {
            self.order_violation(engine, device, format!("config request while {}", reg.state));
            return;
        } else if !in_scope {
            Message::ConfigUnavailable { device: device.clone(), reason: "ConfigServer not in scope".into() }
        } else {
            match self.config_server.fetch_config(device, engine.config_unavailable_at(now)) {
                Ok(c) => Message::ConfigDelivered { device: device.clone(), config: c.clone() },
                Err(e) => Message::ConfigUnavailable { device: device.clone(), reason: e.to_string() },
            }
        };
        let outcome = match &reply {
            Message::ConfigDelivered { .. } => "delivered".to_owned(),
            Message::ConfigUnavailable { reason, .. } => format!("unavailable: {reason}"),
            _ => unreachable!(),
        };
        self.audit.append(now, "config-server", AuditAction::Config, &format!("{device}: {outcome}"));
        engine.reply(event, reply);
    }

    fn on_cuc_request(
        &mut self,
        engine: &mut Engine<Message>,
        event: &SimEvent<Message>,
        device: &DeviceId,
        transmission: TsnTransmissionType,
    ) {
        let reg = &self.registrants[device];
        let scope = reg.scope.clone().unwrap_or_default();
        let (state, tsn) = (reg.state, reg.spec.is_tsn_end_device);
        let (cuc, cnc) = (self.services.cuc.clone(), self.services.cnc.clone());
        let reachable = engine.reachable(&cuc, &cnc);
        match self.cuc.cuc_register(device, transmission, state, tsn, &scope, reachable) {
            Err(e) => self.order_violation(engine, device, e.to_string()),
            Ok(outcome) => {
                let (detail, reply) = match outcome {
                    CucOutcome::Registered(t) => {
                        ("registered".to_owned(), Message::CucRegistered { device: device.clone(), transmission: t })
                    }
                    CucOutcome::Rejected(reason) => {
                        (format!("rejected {reason:?}"), Message::CucRejected { device: device.clone(), reason })
                    }
                };
                self.audit.append(engine.clock(), "cuc", AuditAction::Admission, &format!("{device}: {detail}"));
                engine.reply(event, reply);
            }
        }
    }

    // ---- use cases -----------------------------------------------------

    fn endpoint_node(&self, id: &str) -> Option<(usize, Option<DeviceId>)> {
        let dev = DeviceId::from(id);
        if let Some(r) = self.registrants.get(&dev) {
            return Some((self.topo.node_idx(&r.spec.node)?, Some(dev)));
        }
        Some((self.topo.node_idx(&NodeId::from(id))?, None))
    }

    fn endpoint_devices(&self, i: usize) -> Vec<DeviceId> {
        let spec = &self.use_cases[i].0;
        std::iter::once(&spec.talker)
            .chain(&spec.listeners)
            .filter_map(|e| self.endpoint_node(e).and_then(|(_, d)| d))
            .collect()
    }

    fn start_ready_use_cases(&mut self, engine: &mut Engine<Message>) {
        let ready: Vec<usize> = self
            .waiting
            .iter()
            .copied()
            .filter(|&i| {
                self.endpoint_devices(i).iter().all(|d| self.registrants[d].state == RegistrationState::Operational)
            })
            .collect();
        for i in ready {
            self.waiting.remove(&i);
            self.provision_use_case(engine, i);
        }
    }

    fn fail_use_cases_of(&mut self, engine: &mut Engine<Message>, device: &DeviceId) {
        let hit: Vec<usize> =
            self.waiting.iter().copied().filter(|&i| self.endpoint_devices(i).contains(device)).collect();
        for i in hit {
            self.waiting.remove(&i);
            let failures = vec![DomainFailure { domain: None, reason: format!("endpoint {device} Rejected") }];
            self.fail_use_case(engine, i, failures);
        }
    }

    fn fail_use_case(&mut self, engine: &mut Engine<Message>, i: usize, failures: Vec<DomainFailure>) {
        let name = self.use_cases[i].1.name.clone();
        let text: Vec<String> = failures.iter().map(|f| format!("{:?}: {}", f.domain, f.reason)).collect();
        self.audit.append(
            engine.clock(),
            "orchestrator",
            AuditAction::Provision,
            &format!("{name}: failed {}", text.join("; ")),
        );
        engine.note(Message::ProvisionFailure { use_case: name, failures: failures.clone() });
        self.outcomes[i] = UseCaseOutcome::Failed { failures };
    }

    /// Provisions use case `i` now.
    fn provision_use_case(&mut self, engine: &mut Engine<Message>, i: usize) {
        let (spec, uc) = self.use_cases[i].clone();
        let mut failures = Vec::new();
        let mut nodes = Vec::new();
        for e in std::iter::once(&spec.talker).chain(&spec.listeners) {
            match self.endpoint_node(e) {
                Some((n, Some(d))) if self.registrants[&d].state != RegistrationState::Operational => {
                    failures.push(DomainFailure {
                        domain: None,
                        reason: format!("endpoint {d} is {}", self.registrants[&d].state),
                    });
                    nodes.push(n);
                }
                Some((n, _)) => nodes.push(n),
                None => failures.push(DomainFailure { domain: None, reason: format!("unknown endpoint {e}") }),
            }
        }
        if !failures.is_empty() {
            self.fail_use_case(engine, i, failures);
            return;
        }
        let id = self.provisions.len();
        let excluded = engine.links_down_at(engine.clock());
        match self.plan(engine, id, 0, &uc, nodes[0], &nodes[1..], &excluded) {
            Err(failures) => self.fail_use_case(engine, i, failures),
            Ok(plan) => {
                self.provisions.push(ProvisionRecord {
                    id,
                    use_case: uc,
                    status: ProvisionStatus::Active,
                    budgets: Vec::new(),
                    listener_latency_us: BTreeMap::new(),
                    total_latency_us: 0,
                    epoch: 0,
                    retried: false,
                    observed_max_latency_us: BTreeMap::new(),
                    observations: 0,
                    violations: 0,
                    talker: nodes[0],
                    listeners: nodes[1..].to_vec(),
                    plan: None,
                });
                self.outcomes[i] = UseCaseOutcome::Provisioned { provision: id };
                self.activate(engine, id, plan);
            }
        }
    }

    fn activate(&mut self, engine: &mut Engine<Message>, id: usize, plan: Plan) {
        let p = &mut self.provisions[id];
        p.status = ProvisionStatus::Active;
        p.budgets = plan.budgets.clone();
        p.listener_latency_us = plan.listener_latency.clone();
        p.total_latency_us = plan.total_latency;
        let local_control = p.use_case.group == Some(UseCaseGroup::LocalControl);
        let note = Message::Provision {
            provision: id,
            use_case: p.use_case.name.clone(),
            local_control,
            max_e2e_latency_us: p.use_case.qos.max_e2e_latency_us,
            budgets: plan.budgets.clone(),
            listener_latency_us: plan.listener_latency.clone(),
            total_latency_us: plan.total_latency,
        };
        let outcome = format!("{}: active, total {} µs", p.use_case.name, plan.total_latency);
        p.plan = Some(plan);
        let (period, _) = stream_shape(&p.use_case.qos.traffic);
        let (epoch, talker) = (p.epoch, self.topo.node_id(p.talker).clone());
        self.audit.append(engine.clock(), "orchestrator", AuditAction::Provision, &outcome);
        engine.note(note);
        let first = engine.clock().div_ceil(period);
        for k in 0..self.replay_cycles as u64 {
            let cycle = first + k;
            let payload = Message::CycleStart { provision: id, epoch, cycle };
            engine
                .schedule(cycle * period, talker.clone(), talker.clone(), payload)
                .expect("cycle start is not in the past");
        }
    }

    fn release_plan(&mut self, engine: &mut Engine<Message>, id: usize, plan: &Plan) {
        for s in plan.streams.iter().rev() {
            self.release_stream(engine, id, s);
        }
        for b in plan.bearers.iter().rev() {
            self.release_bearer(engine, id, *b);
        }
    }

    fn release_stream(&mut self, engine: &mut Engine<Message>, id: usize, s: &StreamId) {
        if self.cnc.release_stream(s).is_ok() {
            self.audit.append(engine.clock(), "cnc", AuditAction::Admission, &format!("release {s}"));
            engine.note(Message::Release { provision: id, stream_id: s.clone() });
        }
    }

    fn release_bearer(&mut self, engine: &mut Engine<Message>, id: usize, b: u64) {
        if self.bearers.remove(&b).is_some() {
            self.audit.append(engine.clock(), "orchestrator", AuditAction::Admission, &format!("release bearer {b}"));
            engine.note(Message::BearerRelease { provision: id, bearer: b });
        }
    }

    /// Acquires every segment reservation of one provisioning attempt, or none.
    #[allow(clippy::too_many_arguments)]
    fn plan(
        &mut self,
        engine: &mut Engine<Message>,
        id: usize,
        epoch: u32,
        uc: &UseCase,
        talker: usize,
        listeners: &[usize],
        excluded: &BTreeSet<usize>,
    ) -> Result<Plan, Vec<DomainFailure>> {
        let qos = &uc.qos;
        let (period, frame_bytes) = stream_shape(&qos.traffic);
        let bits = frame_bytes * 8;
        let mut failures = Vec::new();

        // per listener: segments as (domain, hops)
        let mut segments: Vec<Vec<(Domain, Vec<Hop>)>> = Vec::new();
        for &l in listeners {
            let Some(path) = self.topo.shortest_path(talker, l, excluded) else {
                failures.push(DomainFailure { domain: None, reason: format!("NoPath to {}", self.topo.node_id(l)) });
                segments.push(Vec::new());
                continue;
            };
            let mut segs: Vec<(Domain, Vec<Hop>)> = Vec::new();
            for h in path {
                let d = self.topo.link(h.link).domain;
                match segs.last_mut() {
                    Some((sd, hops)) if *sd == d => hops.push(h),
                    _ => segs.push((d, vec![h])),
                }
            }
            segments.push(segs);
        }
        if !failures.is_empty() {
            return Err(failures);
        }

        // segments from the same start node form one group (paths share prefixes)
        struct Group {
            domain: Domain,
            start: usize,
            members: Vec<(usize, Vec<Hop>)>,
        }
        let mut groups: Vec<Group> = Vec::new();
        let mut group_at: BTreeMap<usize, usize> = BTreeMap::new();
        for segs in &segments {
            for (d, hops) in segs {
                let start = hops[0].from;
                let end = hops.last().expect("segment has hops").to;
                let gi = *group_at.entry(start).or_insert_with(|| {
                    groups.push(Group { domain: *d, start, members: Vec::new() });
                    groups.len() - 1
                });
                if !groups[gi].members.iter().any(|(e, _)| *e == end) {
                    groups[gi].members.push((end, hops.clone()));
                }
            }
        }

        let now = engine.clock();
        let mut reached: BTreeMap<usize, Micros> = BTreeMap::from([(talker, 0)]);
        let mut budgets = Vec::new();
        let mut streams = Vec::new();
        let mut bearers = Vec::new();
        let mut legs_at: BTreeMap<usize, Leg> = BTreeMap::new(); // keyed by segment end
        for (gi, g) in groups.iter().enumerate() {
            let cum = reached.get(&g.start).copied().unwrap_or(0);
            let start_id = self.topo.node_id(g.start).clone();
            let ends: Vec<NodeId> = g.members.iter().map(|(e, _)| self.topo.node_id(*e).clone()).collect();
            if g.domain == Domain::Tsn {
                let remaining = qos.max_e2e_latency_us.saturating_sub(cum);
                let stream_id = StreamId::from(format!("{}/{epoch}/{gi}", uc.name));
                if (bits as u128) * 1_000_000 < qos.min_throughput_bps as u128 * period as u128 {
                    failures.push(DomainFailure {
                        domain: Some(Domain::Tsn),
                        reason: format!("ThroughputShortfall: {bits} bits per {period} µs"),
                    });
                    for (e, _) in &g.members {
                        reached.insert(*e, cum);
                    }
                    continue;
                }
                let request = StreamRequest {
                    stream_id: stream_id.clone(),
                    talker: start_id.clone(),
                    listeners: ends.clone(),
                    period_us: period,
                    frame_bytes,
                    max_e2e_latency_us: remaining.max(1),
                    priority: qos.priority,
                };
                let paths: Vec<Vec<Hop>> = g.members.iter().map(|(_, h)| h.clone()).collect();
                match self.cnc.admit_on_paths(&request, &self.topo, &paths, now, cum) {
                    Err(r) => {
                        self.audit.append(
                            now,
                            "cnc",
                            AuditAction::Admission,
                            &format!("reject {stream_id}: {:?}", r.reason),
                        );
                        failures.push(DomainFailure {
                            domain: Some(Domain::Tsn),
                            reason: format!("{:?}: {}", r.reason, r.detail),
                        });
                        for (e, _) in &g.members {
                            reached.insert(*e, cum);
                        }
                    }
                    Ok(r) => {
                        let r = r.clone();
                        self.audit.append(now, "cnc", AuditAction::Admission, &format!("admit {stream_id}"));
                        engine.note(Message::Reservation {
                            provision: id,
                            stream_id: stream_id.clone(),
                            release_us: r.release_us,
                            windows: r.windows.clone(),
                            e2e_latency_us: r.e2e_latency_us.clone(),
                        });
                        for (e, hops) in &g.members {
                            let eid = self.topo.node_id(*e);
                            reached.insert(*e, cum + r.e2e_latency_us[eid]);
                            let windows = r.path_windows[eid].iter().map(|&w| r.windows[w].clone()).collect();
                            legs_at.insert(*e, Leg::Tsn { hops: hops.clone(), windows });
                        }
                        budgets.push(DomainBudget {
                            domain: Domain::Tsn,
                            start: start_id,
                            ends,
                            latency_budget_us: r.max_e2e_latency(),
                            throughput_commit_bps: (bits as u128 * 1_000_000 / period as u128) as u64,
                            backing: Backing::Stream(stream_id.clone()),
                        });
                        streams.push(stream_id);
                    }
                }
            } else {
                let budget = self.domain_latency[&g.domain];
                let commit = qos.min_throughput_bps;
                let links: BTreeSet<usize> = g.members.iter().flat_map(|(_, h)| h.iter().map(|x| x.link)).collect();
                let mut problem = None;
                for &l in &links {
                    let link = self.topo.link(l);
                    if self.bearer_load(l) as u128 + commit as u128 > link.capacity_bps as u128 {
                        problem = Some(format!("CapacityExceeded on {}", link.link_id));
                        break;
                    }
                }
                if problem.is_none() {
                    let slowest = g.members.iter().map(|(_, h)| self.topo.transit_time(h, bits)).max().unwrap_or(0);
                    if slowest > budget {
                        problem = Some(format!("TransitExceedsBudget: {slowest} µs against {budget} µs"));
                    }
                }
                for (e, hops) in &g.members {
                    reached.insert(*e, cum + budget);
                    legs_at.insert(*e, Leg::Bearer { hops: hops.clone(), budget });
                }
                match problem {
                    Some(reason) => {
                        self.audit.append(
                            now,
                            "orchestrator",
                            AuditAction::Admission,
                            &format!("reject bearer {:?}: {reason}", g.domain),
                        );
                        failures.push(DomainFailure { domain: Some(g.domain), reason });
                    }
                    None => {
                        let b = self.next_bearer;
                        self.next_bearer += 1;
                        self.bearers.insert(b, Bearer { links: links.iter().copied().collect(), commit_bps: commit });
                        self.audit.append(now, "orchestrator", AuditAction::Admission, &format!("admit bearer {b}"));
                        engine.note(Message::BearerCommit {
                            provision: id,
                            bearer: b,
                            domain: g.domain,
                            links: links.iter().map(|&l| self.topo.link_id(l).clone()).collect(),
                            commit_bps: commit,
                        });
                        budgets.push(DomainBudget {
                            domain: g.domain,
                            start: start_id,
                            ends,
                            latency_budget_us: budget,
                            throughput_commit_bps: commit,
                            backing: Backing::Bearer(b),
                        });
                        bearers.push(b);
                    }
                }
            }
        }

        let listener_latency: BTreeMap<NodeId, Micros> =
            listeners.iter().map(|&l| (self.topo.node_id(l).clone(), reached.get(&l).copied().unwrap_or(0))).collect();
        let total_latency = listener_latency.values().copied().max().unwrap_or(0);
        if failures.is_empty() && total_latency > qos.max_e2e_latency_us {
            failures.push(DomainFailure {
                domain: None,
                reason: format!("LatencyExceeded: {total_latency} µs against {} µs", qos.max_e2e_latency_us),
            });
        }
        if failures.is_empty()
            && uc.group == Some(UseCaseGroup::LocalControl)
            && total_latency >= URLLC_LATENCY_BOUND_US
        {
            failures.push(DomainFailure {
                domain: None,
                reason: format!("UrllcBound: {total_latency} µs is not below {URLLC_LATENCY_BOUND_US} µs"),
            });
        }
        let plan = Plan { budgets, listener_latency, total_latency, legs: Vec::new(), streams, bearers };
        if !failures.is_empty() {
            self.release_plan(engine, id, &plan);
            return Err(failures);
        }
        let legs = segments
            .iter()
            .map(|segs| {
                segs.iter().map(|(_, hops)| legs_at[&hops.last().expect("segment has hops").to].clone()).collect()
            })
            .collect();
        Ok(Plan { legs, ..plan })
    }

    // ---- data-plane replay --------------------------------------------

    fn live(&self, frame: &Frame) -> bool {
        let p = &self.provisions[frame.provision];
        p.status == ProvisionStatus::Active && p.epoch == frame.epoch
    }

    fn on_cycle_start(&mut self, engine: &mut Engine<Message>, provision: usize, epoch: u32, cycle: u64) {
        let p = &self.provisions[provision];
        if p.status != ProvisionStatus::Active || p.epoch != epoch {
            return;
        }
        let (_, frame_bytes) = stream_shape(&p.use_case.qos.traffic);
        let now = engine.clock();
        for listener in 0..p.listeners.len() {
            let frame = Frame {
                provision,
                epoch,
                listener,
                cycle,
                generated_at: now,
                leg: 0,
                hop: 0,
                leg_entry: now,
                bits: frame_bytes * 8,
            };
            self.advance(engine, frame);
            let p = &self.provisions[provision];
            if p.status != ProvisionStatus::Active || p.epoch != epoch {
                break;
            }
        }
    }

    /// Moves a frame that sits at the start of hop `frame.hop` of leg `frame.leg`.
    fn advance(&mut self, engine: &mut Engine<Message>, frame: Frame) {
        let p = &self.provisions[frame.provision];
        let plan = p.plan.as_ref().expect("active provision has a plan");
        let legs = &plan.legs[frame.listener];
        let now = engine.clock();
        let Some(leg) = legs.get(frame.leg) else {
            self.observe(engine, frame);
            return;
        };
        match leg {
            Leg::Tsn { windows, hops } => {
                let w = &windows[frame.hop];
                let wait = (w.offset_us + w.period_us - now % w.period_us) % w.period_us;
                if wait > 0 {
                    let node = self.topo.node_id(hops[frame.hop].from).clone();
                    engine.timer(wait, &node, Message::GateOpen { frame });
                } else {
                    let hop = hops[frame.hop];
                    self.transmit(engine, frame, vec![hop]);
                }
            }
            Leg::Bearer { hops, .. } => {
                let hops = hops.clone();
                self.transmit(engine, frame, hops);
            }
        }
    }

    fn transmit(&mut self, engine: &mut Engine<Message>, frame: Frame, hops: Vec<Hop>) {
        let src = self.topo.node_id(hops[0].from).clone();
        let dst = self.topo.node_id(hops.last().expect("non-empty").to).clone();
        if let Delivery::Dropped(reason) =
            engine.send_along(src, dst, hops, Message::DataFrame { frame: frame.clone() })
        {
            self.violation(engine, &frame, format!("frame dropped: {reason}"));
        }
    }

    fn on_data_frame(&mut self, engine: &mut Engine<Message>, mut frame: Frame) {
        let now = engine.clock();
        let plan = self.provisions[frame.provision].plan.as_ref().expect("live provision has a plan");
        match &plan.legs[frame.listener][frame.leg] {
            Leg::Tsn { hops, .. } => {
                frame.hop += 1;
                if frame.hop == hops.len() {
                    frame.leg += 1;
                    frame.hop = 0;
                    frame.leg_entry = now;
                }
                self.advance(engine, frame);
            }
            Leg::Bearer { budget, hops } => {
                let exit = frame.leg_entry + budget;
                if now > exit {
                    let detail = format!("bearer transit {} µs exceeds {budget} µs", now - frame.leg_entry);
                    self.violation(engine, &frame, detail);
                    return;
                }
                let node = self.topo.node_id(hops.last().expect("non-empty").to).clone();
                frame.leg += 1;
                frame.hop = 0;
                frame.leg_entry = exit;
                if exit > now {
                    engine.timer(exit - now, &node, Message::BearerExit { frame });
                } else {
                    self.advance(engine, frame);
                }
            }
        }
    }

    fn observe(&mut self, engine: &mut Engine<Message>, frame: Frame) {
        let now = engine.clock();
        let p = &mut self.provisions[frame.provision];
        let listener = self.topo.node_id(p.listeners[frame.listener]).clone();
        let latency = now - frame.generated_at;
        let expected = p.listener_latency_us[&listener];
        p.observations += 1;
        let max = p.observed_max_latency_us.entry(listener.clone()).or_insert(0);
        *max = (*max).max(latency);
        engine.note(Message::Observation {
            provision: frame.provision,
            listener,
            cycle: frame.cycle,
            latency_us: latency,
            expected_us: expected,
        });
        if latency > expected {
            self.violation(engine, &frame, format!("latency {latency} µs exceeds {expected} µs"));
        }
    }

    fn set_status(&mut self, engine: &mut Engine<Message>, id: usize, status: ProvisionStatus, detail: String) {
        let p = &mut self.provisions[id];
        p.status = status;
        let outcome = format!("{}: {status:?} ({detail})", p.use_case.name);
        self.audit.append(engine.clock(), "orchestrator", AuditAction::Provision, &outcome);
        engine.note(Message::StatusChange { provision: id, status, detail });
    }

    /// Marks the provision Degraded, releases it and tries once to provision
    /// it again around the links that are down; Withdrawn if that fails.
    fn violation(&mut self, engine: &mut Engine<Message>, frame: &Frame, detail: String) {
        if !self.live(frame) {
            return;
        }
        let id = frame.provision;
        let listener = self.topo.node_id(self.provisions[id].listeners[frame.listener]).clone();
        self.provisions[id].violations += 1;
        engine.note(Message::Violation { provision: id, listener, cycle: frame.cycle, detail: detail.clone() });
        self.set_status(engine, id, ProvisionStatus::Degraded, detail);
        let plan = self.provisions[id].plan.take().expect("live provision has a plan");
        self.release_plan(engine, id, &plan);
        if self.provisions[id].retried {
            self.set_status(engine, id, ProvisionStatus::Withdrawn, "violation after re-provisioning".into());
            return;
        }
        let p = &mut self.provisions[id];
        p.retried = true;
        p.epoch += 1;
        let (uc, talker, listeners, epoch) = (p.use_case.clone(), p.talker, p.listeners.clone(), p.epoch);
        let excluded = engine.links_down_at(engine.clock());
        match self.plan(engine, id, epoch, &uc, talker, &listeners, &excluded) {
            Ok(plan) => self.activate(engine, id, plan),
            Err(failures) => {
                let text: Vec<String> = failures.iter().map(|f| f.reason.clone()).collect();
                self.set_status(
                    engine,
                    id,
                    ProvisionStatus::Withdrawn,
                    format!("re-provisioning failed: {}", text.join("; ")),
                );
            }
        }
    }
}

fn tag(m: &Message) -> &'static str {
    use crate::engine::Payload;
    m.tag()
}

impl Handler<Message> for Orchestrator {
    fn handle(&mut self, engine: &mut Engine<Message>, event: &SimEvent<Message>) {
        if let Some(sync) = self.sync.as_mut() {
            if sync.handle(engine, event) {
                return;
            }
        }
        match &event.payload {
            Message::OperatorProvision { device } => self.on_operator_provision(engine, device),
            Message::StoreConfig { device, config } => {
                let state = self.registrants[device].state;
                self.store(engine, config.clone(), state);
            }
            Message::PowerOn { device } => {
                let spec = &self.registrants[device].spec;
                let msg = Message::AttachRequest {
                    device: device.clone(),
                    dce: spec.dce_id.clone(),
                    secure_element_id: spec.secure_element_id.clone(),
                };
                let (node, core) = (spec.node.clone(), self.services.core_auth.clone());
                self.send(engine, &node, &core, msg);
            }
            Message::AttachRequest { device, .. } => self.on_attach_request(engine, event, device),
            Message::AuthChallenge { device, nonce } => {
                let response = challenge_response(&self.registrants[device].spec.secret, nonce);
                engine.reply(event, Message::AuthResponse { device: device.clone(), response });
            }
            Message::AuthResponse { device, response } => self.on_auth_response(engine, event, device, response),
            Message::RadioAttachOk { device } => self.apply(engine, device, RegistrationEvent::RadioAttachOk),
            Message::RadioAttachFail { device } => self.apply(engine, device, RegistrationEvent::RadioAttachFail),
            Message::AuthzRequest { device, signature } => self.on_authz_request(engine, event, device, signature),
            Message::AuthzGranted { device, scope } => {
                self.apply(engine, device, RegistrationEvent::AuthzGranted { scope: scope.clone() })
            }
            Message::AuthzDenied { device, reason } => {
                self.apply(engine, device, RegistrationEvent::AuthzDenied { reason: *reason })
            }
            Message::ConfigRequest { device, .. } => self.on_config_request(engine, event, device),
            Message::ConfigDelivered { device, config } => {
                self.apply(engine, device, RegistrationEvent::ConfigDelivered { config: config.clone() })
            }
            Message::ConfigUnavailable { device, .. } => {
                self.apply(engine, device, RegistrationEvent::ConfigUnavailable)
            }
            Message::RetryTimer { device, attempt } => {
                if self.registrants[device].state == RegistrationState::Authorized {
                    let node = self.device_node(device);
                    let server = self.services.config_server.clone();
                    self.send(
                        engine,
                        &node,
                        &server,
                        Message::ConfigRequest { device: device.clone(), attempt: *attempt },
                    );
                }
            }
            Message::CucRegisterRequest { device, transmission } => {
                self.on_cuc_request(engine, event, device, *transmission)
            }
            Message::CucRegistered { device, transmission } => {
                self.apply(engine, device, RegistrationEvent::CucRegistered { transmission: *transmission })
            }
            Message::CucRejected { device, .. } => self.apply(engine, device, RegistrationEvent::CucRejected),
            Message::TsnAnnounce { .. } => {}
            Message::UseCaseStart { use_case } => self.provision_use_case(engine, *use_case),
            Message::CycleStart { provision, epoch, cycle } => self.on_cycle_start(engine, *provision, *epoch, *cycle),
            Message::GateOpen { frame } => {
                if self.live(frame) {
                    let plan = self.provisions[frame.provision].plan.as_ref().expect("live");
                    let Leg::Tsn { hops, .. } = &plan.legs[frame.listener][frame.leg] else {
                        unreachable!("gates only on TSN legs")
                    };
                    let hop = hops[frame.hop];
                    self.transmit(engine, frame.clone(), vec![hop]);
                }
            }
            Message::BearerExit { frame } | Message::DataFrame { frame } => {
                if self.live(frame) {
                    if matches!(event.payload, Message::DataFrame { .. }) {
                        self.on_data_frame(engine, frame.clone());
                    } else {
                        self.advance(engine, frame.clone());
                    }
                }
            }
            Message::Horizon => self.finish(engine),
            Message::SpectrumTick => {
                engine.note(Message::SpectrumHeartbeat);
                if let Some(p) = self.spectrum_period {
                    let here = self.services.orchestrator.clone();
                    engine.timer(p, &here, Message::SpectrumTick);
                }
            }
            _ => {}
        }
    }
}
