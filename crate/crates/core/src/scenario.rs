//! Scenario documents: one JSON object describing the network, the device
//! roster, operator actions, use cases, faults and run parameters.
//!
//! Field names are listed in `schema/scenario.schema.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::FaultSpec;
use crate::model::{
    derive_qos_profile, hex_bytes, DeviceId, DeviceRecord, Domain, Link, Micros, NetworkGraph, Node, NodeId,
    QosOverride, QosProfile, RegistrationState, Role, SecureElementId, UseCase, UseCaseClass, UseCaseGroup,
};
use crate::registration::DeviceConfig;
use crate::security::CredentialStore;
use crate::timesync::TimeSyncSpec;

pub const FORMAT_VERSION: u32 = 1;

fn default_replay_cycles() -> u32 {
    2
}

/// Nodes hosting the control and management functions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Services {
    /// Multi-domain manager; operator actions enter here.
    pub orchestrator: NodeId,
    /// 3GPP core authentication.
    pub core_auth: NodeId,
    /// DTE signature check and authorization.
    pub authz: NodeId,
    pub config_server: NodeId,
    pub cuc: NodeId,
    pub cnc: NodeId,
}

impl Services {
    fn named(&self) -> [(&'static str, &NodeId); 6] {
        [
            ("orchestrator", &self.orchestrator),
            ("core_auth", &self.core_auth),
            ("authz", &self.authz),
            ("config_server", &self.config_server),
            ("cuc", &self.cuc),
            ("cnc", &self.cnc),
        ]
    }
}

/// A DTE and its DCE, attached at one node, with the credentials they present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub dte_id: DeviceId,
    pub dce_id: DeviceId,
    pub node: NodeId,
    pub secure_element_id: SecureElementId,
    /// Key held by the secure element.
    #[serde(with = "hex_bytes")]
    pub secret: Vec<u8>,
    /// Signature the DTE presents.
    #[serde(with = "hex_bytes")]
    pub dte_signature: Vec<u8>,
    #[serde(default)]
    pub is_tsn_end_device: bool,
    /// Final state the run must end in; Operational or Rejected when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<RegistrationState>,
}

impl DeviceSpec {
    /// DTE and DCE records in state `state`.
    pub fn records(&self, state: RegistrationState) -> (DeviceRecord, DeviceRecord) {
        let dte = DeviceRecord {
            device_id: self.dte_id.clone(),
            role: Role::Dte,
            paired_with: self.dce_id.clone(),
            secure_element_id: Some(self.secure_element_id.clone()),
            dte_signature: Some(self.dte_signature.clone()),
            is_tsn_end_device: self.is_tsn_end_device,
            state,
        };
        let dce = DeviceRecord {
            device_id: self.dce_id.clone(),
            role: Role::Dce,
            paired_with: self.dte_id.clone(),
            secure_element_id: Some(self.secure_element_id.clone()),
            dte_signature: None,
            is_tsn_end_device: false,
            state,
        };
        (dte, dce)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", deny_unknown_fields)]
pub enum OperatorAction {
    /// Stores the device's config and admits it to registration.
    Provision { at: Micros, device_id: DeviceId },
    /// Overwrites a stored config; refused while the device is registering.
    StoreConfig { at: Micros, config: DeviceConfig },
}

impl OperatorAction {
    pub fn at(&self) -> Micros {
        match self {
            OperatorAction::Provision { at, .. } | OperatorAction::StoreConfig { at, .. } => *at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpectedOutcome {
    Active,
    ProvisionFailure,
    Withdrawn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UseCaseSpec {
    pub name: String,
    #[serde(default = "default_class")]
    pub use_case_class: UseCaseClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<UseCaseGroup>,
    /// Full profile; required when `group` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qos: Option<QosProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qos_override: Option<QosOverride>,
    /// Device id (DTE) or node id.
    pub talker: String,
    pub listeners: Vec<String>,
    /// Provisioning time; when absent, as soon as every endpoint device is Operational.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<Micros>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<ExpectedOutcome>,
}

fn default_class() -> UseCaseClass {
    UseCaseClass::IndustrialApplication
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x_m: f64,
    pub y_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub seed: u64,
    pub horizon_us: Micros,
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub services: Services,
    #[serde(default)]
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub credentials: CredentialStore,
    #[serde(default)]
    pub configs: Vec<DeviceConfig>,
    #[serde(default)]
    pub operator_actions: Vec<OperatorAction>,
    #[serde(default)]
    pub use_cases: Vec<UseCaseSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    /// Per-group changes to the default QoS profiles.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub profile_overrides: BTreeMap<UseCaseGroup, QosOverride>,
    /// Segment latency of non-TSN domains; defaults in [`default_domain_latency`].
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub domain_latency_us: BTreeMap<Domain, Micros>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timesync: Option<TimeSyncSpec>,
    /// Data-plane cycles replayed per provision.
    #[serde(default = "default_replay_cycles")]
    pub replay_cycles: u32,
    /// Uniform extra delay in `[0, n]` µs on every control message.
    #[serde(default)]
    pub control_jitter_us: Micros,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum_heartbeat_us: Option<Micros>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub localization: BTreeMap<DeviceId, Position>,
}

/// Segment latency of a non-TSN domain when the scenario does not set one.
pub fn default_domain_latency(domain: Domain) -> Micros {
    match domain {
        Domain::FiveG => 1_000,
        Domain::Sdn => 200,
        Domain::IndustrialEthernet => 500,
        Domain::Tsn => 0,
    }
}

impl Scenario {
    pub fn graph(&self) -> NetworkGraph {
        NetworkGraph { nodes: self.nodes.clone(), links: self.links.clone() }
    }

    pub fn domain_latency(&self, domain: Domain) -> Micros {
        self.domain_latency_us.get(&domain).copied().unwrap_or_else(|| default_domain_latency(domain))
    }

    pub fn profile(&self, group: UseCaseGroup) -> QosProfile {
        let base = derive_qos_profile(group);
        match self.profile_overrides.get(&group) {
            Some(o) => o.apply(&base),
            None => base,
        }
    }

    /// The use case as a model value: explicit `qos`, else the group profile
    /// with scenario and per-use-case overrides applied.
    pub fn resolve_use_case(&self, spec: &UseCaseSpec) -> Option<UseCase> {
        let base = match (&spec.qos, spec.group) {
            (Some(q), _) => q.clone(),
            (None, Some(g)) => self.profile(g),
            (None, None) => return None,
        };
        let qos = match &spec.qos_override {
            Some(o) => o.apply(&base),
            None => base,
        };
        Some(UseCase {
            name: spec.name.clone(),
            use_case_class: spec.use_case_class,
            group: spec.group,
            qos,
            talker: spec.talker.as_str().into(),
            listeners: spec.listeners.iter().map(|l| l.as_str().into()).collect(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// One semantic problem, located by document path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ScenarioIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Shape { path: String, message: String },
    #[error("{} problem(s):\n{}", .0.len(), .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ScenarioIssue>),
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    // syntax first so malformed text reports a position, not a path
    if let Err(e) = serde_json::from_str::<serde::de::IgnoredAny>(text) {
        return Err(ScenarioError::Syntax { line: e.line(), column: e.column(), message: e.to_string() });
    }
    let mut de = serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        ScenarioError::Shape { path, message: e.into_inner().to_string() }
    })?;
    let issues = validate_scenario(&scenario);
    if issues.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::Invalid(issues))
    }
}

struct Issues(Vec<ScenarioIssue>);

impl Issues {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ScenarioIssue { path: path.into(), message: message.into() });
    }
}

/// Every semantic problem of `s`; empty when the scenario is runnable.
pub fn validate_scenario(s: &Scenario) -> Vec<ScenarioIssue> {
    let mut out = Issues(Vec::new());
    if s.horizon_us == 0 {
        out.push("horizon_us", "must be positive");
    }

    let mut node_at: BTreeMap<&NodeId, usize> = BTreeMap::new();
    for (i, n) in s.nodes.iter().enumerate() {
        if let Some(j) = node_at.insert(&n.id, i) {
            out.push(format!("nodes[{i}].id"), format!("duplicate node id {} (also nodes[{j}])", n.id));
            node_at.insert(&n.id, j);
        }
    }
    let node_ok = |id: &NodeId| node_at.contains_key(id);
    let mut link_at: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, l) in s.links.iter().enumerate() {
        if let Some(j) = link_at.insert(l.link_id.as_str(), i) {
            out.push(format!("links[{i}].link_id"), format!("duplicate link id {} (also links[{j}])", l.link_id));
            link_at.insert(l.link_id.as_str(), j);
        }
        for (k, end) in [&l.endpoints.0, &l.endpoints.1].into_iter().enumerate() {
            if !node_ok(end) {
                out.push(format!("links[{i}].endpoints[{k}]"), format!("undefined node {end}"));
            }
        }
        if l.capacity_bps == 0 {
            out.push(format!("links[{i}].capacity_bps"), "must be positive");
        }
        if l.propagation_delay_us < 0 {
            out.push(format!("links[{i}].propagation_delay_us"), "must not be negative");
        }
        if l.reverse_delay_us.is_some_and(|d| d < 0) {
            out.push(format!("links[{i}].reverse_delay_us"), "must not be negative");
        }
    }

    for (name, node) in s.services.named() {
        if !node_ok(node) {
            out.push(format!("services.{name}"), format!("undefined node {node}"));
        }
    }

    let mut ids: BTreeMap<&DeviceId, (usize, &str)> = BTreeMap::new();
    for (i, d) in s.devices.iter().enumerate() {
        for (field, id) in [("dte_id", &d.dte_id), ("dce_id", &d.dce_id)] {
            match ids.get(id) {
                Some(&(j, other)) => out.push(
                    format!("devices[{i}].{field}"),
                    format!("duplicate device_id {id}: devices[{j}].{other} and devices[{i}].{field}"),
                ),
                None => {
                    ids.insert(id, (i, field));
                }
            }
        }
        if !node_ok(&d.node) {
            out.push(format!("devices[{i}].node"), format!("undefined node {}", d.node));
        }
        let (dte, dce) = d.records(RegistrationState::Unprovisioned);
        for v in DeviceRecord::pair_violations(&dte, &dce) {
            out.push(format!("devices[{i}]"), v);
        }
    }
    let dtes: BTreeMap<&DeviceId, &DeviceSpec> = s.devices.iter().map(|d| (&d.dte_id, d)).collect();

    let mut configured = BTreeSet::new();
    for (i, c) in s.configs.iter().enumerate() {
        if !dtes.contains_key(&c.device_id) {
            out.push(format!("configs[{i}].device_id"), format!("unknown device {}", c.device_id));
        }
        if !configured.insert(&c.device_id) {
            out.push(format!("configs[{i}].device_id"), format!("second config for {}", c.device_id));
        }
    }
    for (i, a) in s.operator_actions.iter().enumerate() {
        match a {
            OperatorAction::Provision { device_id, .. } => {
                if !dtes.contains_key(device_id) {
                    out.push(format!("operator_actions[{i}].device_id"), format!("unknown device {device_id}"));
                } else if !configured.contains(device_id) {
                    out.push(format!("operator_actions[{i}].device_id"), format!("no config for {device_id}"));
                }
            }
            OperatorAction::StoreConfig { config, .. } => {
                if !dtes.contains_key(&config.device_id) {
                    out.push(
                        format!("operator_actions[{i}].config.device_id"),
                        format!("unknown device {}", config.device_id),
                    );
                }
            }
        }
    }

    let endpoint_ok = |id: &str| dtes.contains_key(&DeviceId::from(id)) || node_ok(&NodeId::from(id));
    let mut uc_names = BTreeSet::new();
    for (i, u) in s.use_cases.iter().enumerate() {
        if !uc_names.insert(u.name.as_str()) {
            out.push(format!("use_cases[{i}].name"), format!("duplicate use case name {}", u.name));
        }
        if !endpoint_ok(&u.talker) {
            out.push(format!("use_cases[{i}].talker"), format!("unknown device or node {}", u.talker));
        }
        for (k, l) in u.listeners.iter().enumerate() {
            if !endpoint_ok(l) {
                out.push(format!("use_cases[{i}].listeners[{k}]"), format!("unknown device or node {l}"));
            }
            if *l == u.talker {
                out.push(format!("use_cases[{i}].listeners[{k}]"), "listener equals talker");
            }
        }
        match s.resolve_use_case(u) {
            None => out.push(format!("use_cases[{i}].qos"), "required when group is absent"),
            Some(uc) => {
                for v in uc.violations() {
                    out.push(format!("use_cases[{i}]"), v);
                }
            }
        }
    }

    for (i, f) in s.faults.iter().enumerate() {
        if let Err(e) = f.well_formed() {
            out.push(format!("faults[{i}]"), e);
        }
        match f {
            FaultSpec::LinkDown { link_id, .. } if !link_at.contains_key(link_id.as_str()) => {
                out.push(format!("faults[{i}].link_id"), format!("unknown link {link_id}"));
            }
            FaultSpec::AuthReject { device_id } if !dtes.contains_key(device_id) => {
                out.push(format!("faults[{i}].device_id"), format!("unknown device {device_id}"));
            }
            _ => {}
        }
    }

    if let Some(ts) = &s.timesync {
        if !node_ok(&ts.reference) {
            out.push("timesync.reference", format!("undefined node {}", ts.reference));
        }
        for (k, n) in ts.nodes.iter().flatten().enumerate() {
            if !node_ok(n) {
                out.push(format!("timesync.nodes[{k}]"), format!("undefined node {n}"));
            }
        }
        for n in ts.clock_offsets_us.keys() {
            if !node_ok(n) {
                out.push(format!("timesync.clock_offsets_us.{n}"), format!("undefined node {n}"));
            }
        }
    }
    for d in s.localization.keys() {
        if !dtes.contains_key(d) {
            out.push(format!("localization.{d}"), format!("unknown device {d}"));
        }
    }
    out.0
}
