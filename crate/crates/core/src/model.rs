//! Shared domain types: devices, QoS profiles, use cases and the network graph.
//!
//! All durations are integer microseconds. Throughput and capacity are bits per
//! second.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Simulation time and all durations, in microseconds.
pub type Micros = u64;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Opaque device identifier (DTE or DCE).
    DeviceId
);
string_id!(NodeId);
string_id!(LinkId);
string_id!(
    /// Identifier of a system a device may be authorized to reach.
    SystemId
);
string_id!(SecureElementId);
string_id!(
    /// TSN stream identifier.
    StreamId
);

impl SystemId {
    pub const CONFIG_SERVER: &'static str = "ConfigServer";
    pub const CUC: &'static str = "CUC";

    pub fn config_server() -> Self {
        Self::from(Self::CONFIG_SERVER)
    }

    pub fn cuc() -> Self {
        Self::from(Self::CUC)
    }
}

pub type Scope = BTreeSet<SystemId>;

/// Hex (de)serialization for opaque byte strings.
pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }

    pub mod option {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(bytes: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
            match bytes {
                Some(b) => s.serialize_some(&hex::encode(b)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
            Option::<String>::deserialize(d)?.map(|s| hex::decode(s).map_err(serde::de::Error::custom)).transpose()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "DTE")]
    Dte,
    #[serde(rename = "DCE")]
    Dce,
}

/// Progress of a registrant through initial registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RegistrationState {
    Unprovisioned,
    Provisioned,
    RadioAttached,
    Authorized,
    Configured,
    TsnRegistered,
    Operational,
    Rejected,
}

impl RegistrationState {
    pub const ALL: [RegistrationState; 8] = [
        Self::Unprovisioned,
        Self::Provisioned,
        Self::RadioAttached,
        Self::Authorized,
        Self::Configured,
        Self::TsnRegistered,
        Self::Operational,
        Self::Rejected,
    ];

    /// Position along the happy path. `Rejected` sits outside the order.
    pub fn progress_index(self) -> Option<u8> {
        match self {
            Self::Unprovisioned => Some(0),
            Self::Provisioned => Some(1),
            Self::RadioAttached => Some(2),
            Self::Authorized => Some(3),
            Self::Configured => Some(4),
            Self::TsnRegistered => Some(5),
            Self::Operational => Some(6),
            Self::Rejected => None,
        }
    }

    pub fn is_final(self) -> bool {
        matches!(self, Self::Operational | Self::Rejected)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Unprovisioned => "Unprovisioned",
            Self::Provisioned => "Provisioned",
            Self::RadioAttached => "RadioAttached",
            Self::Authorized => "Authorized",
            Self::Configured => "Configured",
            Self::TsnRegistered => "TsnRegistered",
            Self::Operational => "Operational",
            Self::Rejected => "Rejected",
        }
    }
}

impl fmt::Display for RegistrationState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device_id: DeviceId,
    pub role: Role,
    pub paired_with: DeviceId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secure_element_id: Option<SecureElementId>,
    #[serde(default, with = "hex_bytes::option", skip_serializing_if = "Option::is_none")]
    pub dte_signature: Option<Vec<u8>>,
    #[serde(default)]
    pub is_tsn_end_device: bool,
    pub state: RegistrationState,
}

impl DeviceRecord {
    /// Invariant violations of a DTE/DCE pair, as human-readable strings.
    pub fn pair_violations(dte: &DeviceRecord, dce: &DeviceRecord) -> Vec<String> {
        let mut out = Vec::new();
        if dte.role != Role::Dte {
            out.push(format!("{} is not a DTE", dte.device_id));
        }
        if dce.role != Role::Dce {
            out.push(format!("{} is not a DCE", dce.device_id));
        }
        if dte.paired_with != dce.device_id || dce.paired_with != dte.device_id {
            out.push(format!("{} and {} are not paired with each other", dte.device_id, dce.device_id));
        }
        for rec in [dte, dce] {
            if rec.state != RegistrationState::Unprovisioned && rec.secure_element_id.is_none() {
                out.push(format!("{} is {} without a secure element", rec.device_id, rec.state));
            }
            if rec.is_tsn_end_device && rec.role != Role::Dte {
                out.push(format!("{} is a TSN end device but not a DTE", rec.device_id));
            }
            if rec.state == RegistrationState::TsnRegistered && !dte.is_tsn_end_device {
                out.push(format!("{} is TsnRegistered without TSN capability", rec.device_id));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Traffic {
    Periodic { period_us: Micros, frame_bytes: u64 },
    Bursty { mean_rate_bps: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosProfile {
    pub max_e2e_latency_us: Micros,
    pub min_throughput_bps: u64,
    pub reliability_target: f64,
    pub traffic: Traffic,
    /// Lower is more critical.
    pub priority: u8,
}

impl QosProfile {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_e2e_latency_us == 0 {
            out.push("max_e2e_latency_us must be positive".to_owned());
        }
        if !(0.0..=1.0).contains(&self.reliability_target) {
            out.push("reliability_target must lie in [0, 1]".to_owned());
        }
        match self.traffic {
            Traffic::Periodic { period_us, frame_bytes } => {
                if period_us == 0 {
                    out.push("traffic.period_us must be positive".to_owned());
                }
                if frame_bytes == 0 {
                    out.push("traffic.frame_bytes must be positive".to_owned());
                }
            }
            Traffic::Bursty { mean_rate_bps } => {
                if mean_rate_bps == 0 {
                    out.push("traffic.mean_rate_bps must be positive".to_owned());
                }
            }
        }
        out
    }
}

/// Partial override of a [`QosProfile`], applied field by field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_e2e_latency_us: Option<Micros>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_throughput_bps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliability_target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic: Option<Traffic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<u8>,
}

impl QosOverride {
    pub fn apply(&self, base: &QosProfile) -> QosProfile {
        QosProfile {
            max_e2e_latency_us: self.max_e2e_latency_us.unwrap_or(base.max_e2e_latency_us),
            min_throughput_bps: self.min_throughput_bps.unwrap_or(base.min_throughput_bps),
            reliability_target: self.reliability_target.unwrap_or(base.reliability_target),
            traffic: self.traffic.clone().unwrap_or_else(|| base.traffic.clone()),
            priority: self.priority.unwrap_or(base.priority),
        }
    }

    /// A complete profile when every field is set.
    pub fn complete(&self) -> Option<QosProfile> {
        Some(QosProfile {
            max_e2e_latency_us: self.max_e2e_latency_us?,
            min_throughput_bps: self.min_throughput_bps?,
            reliability_target: self.reliability_target?,
            traffic: self.traffic.clone()?,
            priority: self.priority?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UseCaseClass {
    IndustrialApplication,
    GeneralFunctionality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UseCaseGroup {
    Monitoring,
    RemoteControl,
    LocalControl,
    MobileRobotics,
}

impl UseCaseGroup {
    pub const ALL: [UseCaseGroup; 4] =
        [Self::Monitoring, Self::RemoteControl, Self::LocalControl, Self::MobileRobotics];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UseCase {
    pub name: String,
    pub use_case_class: UseCaseClass,
    /// `None` exactly for general-functionality use cases.
    pub group: Option<UseCaseGroup>,
    pub qos: QosProfile,
    pub talker: DeviceId,
    pub listeners: Vec<DeviceId>,
}

impl UseCase {
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.qos.violations();
        let general = self.use_case_class == UseCaseClass::GeneralFunctionality;
        if general != self.group.is_none() {
            out.push("group must be absent iff use_case_class is GeneralFunctionality".to_owned());
        }
        if self.listeners.is_empty() {
            out.push("listeners must not be empty".to_owned());
        }
        out
    }
}

/// End-to-end latency bound that URLLC-class (local control) flows must stay below.
pub const URLLC_LATENCY_BOUND_US: Micros = 5_000;
/// Peak downlink throughput target, bits per second.
pub const PEAK_DOWNLINK_BPS: u64 = 20_000_000_000;
/// Peak uplink throughput target, bits per second.
pub const PEAK_UPLINK_BPS: u64 = 10_000_000_000;
/// Connection density target, devices per square kilometre.
pub const DEVICE_DENSITY_PER_KM2: u64 = 1_000_000;

/// Canonical default QoS profile of a use-case group.
///
/// | group          | latency µs | throughput b/s | traffic                 | prio |
/// |----------------|-----------:|---------------:|-------------------------|-----:|
/// | LocalControl   |      5 000 |      1 000 000 | periodic 1 000 µs, 125 B |    0 |
/// | MobileRobotics |     10 000 |      1 000 000 | periodic 2 000 µs, 250 B |    1 |
/// | RemoteControl  |     20 000 |    100 000 000 | bursty 100 Mb/s          |    2 |
/// | Monitoring     |    100 000 |         10 000 | periodic 100 ms, 125 B   |    3 |
///
/// Only the 5 ms local-control bound is a 5G capability target; the rest are
/// implementer defaults and can be overridden per scenario.
pub fn derive_qos_profile(group: UseCaseGroup) -> QosProfile {
    match group {
        UseCaseGroup::LocalControl => QosProfile {
            max_e2e_latency_us: URLLC_LATENCY_BOUND_US,
            min_throughput_bps: 1_000_000,
            reliability_target: 0.999_99,
            traffic: Traffic::Periodic { period_us: 1_000, frame_bytes: 125 },
            priority: 0,
        },
        UseCaseGroup::MobileRobotics => QosProfile {
            max_e2e_latency_us: 10_000,
            min_throughput_bps: 1_000_000,
            reliability_target: 0.999_9,
            traffic: Traffic::Periodic { period_us: 2_000, frame_bytes: 250 },
            priority: 1,
        },
        UseCaseGroup::RemoteControl => QosProfile {
            max_e2e_latency_us: 20_000,
            min_throughput_bps: 100_000_000,
            reliability_target: 0.999,
            traffic: Traffic::Bursty { mean_rate_bps: 100_000_000 },
            priority: 2,
        },
        UseCaseGroup::Monitoring => QosProfile {
            max_e2e_latency_us: 100_000,
            min_throughput_bps: 10_000,
            reliability_target: 0.99,
            traffic: Traffic::Periodic { period_us: 100_000, frame_bytes: 125 },
            priority: 3,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    EndDevice,
    TsnBridge,
    SdnSwitch,
    BaseStation,
    CoreFunction,
    EdgeCloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    FiveG,
    #[serde(rename = "TSN")]
    Tsn,
    #[serde(rename = "SDN")]
    Sdn,
    IndustrialEthernet,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::FiveG => "FiveG",
            Domain::Tsn => "TSN",
            Domain::Sdn => "SDN",
            Domain::IndustrialEthernet => "IndustrialEthernet",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub domain: Domain,
}

fn default_true() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub link_id: LinkId,
    pub endpoints: (NodeId, NodeId),
    pub capacity_bps: u64,
    /// Delay from `endpoints.0` to `endpoints.1`.
    pub propagation_delay_us: i64,
    /// Delay in the opposite direction when it differs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverse_delay_us: Option<i64>,
    pub domain: Domain,
    /// Link carries encrypted transport.
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub secure: bool,
}

impl Link {
    pub fn new(id: &str, a: &str, b: &str, capacity_bps: u64, delay_us: i64, domain: Domain) -> Self {
        Link {
            link_id: LinkId::from(id),
            endpoints: (NodeId::from(a), NodeId::from(b)),
            capacity_bps,
            propagation_delay_us: delay_us,
            reverse_delay_us: None,
            domain,
            secure: true,
        }
    }

    /// Propagation delay when entering from `from`. Negative delays read as zero;
    /// `validate_graph` reports them.
    pub fn delay_from(&self, from: &NodeId) -> Micros {
        let d = if *from == self.endpoints.0 {
            self.propagation_delay_us
        } else {
            self.reverse_delay_us.unwrap_or(self.propagation_delay_us)
        };
        d.max(0) as Micros
    }

    /// Serialization time of `bits` on this link, rounded up.
    pub fn transmission_us(&self, bits: u64) -> Micros {
        if bits == 0 {
            return 0;
        }
        let num = bits as u128 * 1_000_000;
        num.div_ceil(self.capacity_bps.max(1) as u128) as Micros
    }

    pub fn other_end(&self, node: &NodeId) -> &NodeId {
        if *node == self.endpoints.0 {
            &self.endpoints.1
        } else {
            &self.endpoints.0
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphViolation {
    DuplicateNode { node: NodeId },
    DuplicateLink { link: LinkId },
    DanglingEndpoint { link: LinkId, node: NodeId },
    NonPositiveCapacity { link: LinkId },
    NegativeDelay { link: LinkId },
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateNode { node } => write!(f, "duplicate node id {node}"),
            Self::DuplicateLink { link } => write!(f, "duplicate link id {link}"),
            Self::DanglingEndpoint { link, node } => {
                write!(f, "link {link} references missing node {node}")
            }
            Self::NonPositiveCapacity { link } => write!(f, "link {link} has zero capacity"),
            Self::NegativeDelay { link } => write!(f, "link {link} has a negative delay"),
        }
    }
}

impl NetworkGraph {
    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == *id)
    }

    pub fn link(&self, id: &LinkId) -> Option<&Link> {
        self.links.iter().find(|l| l.link_id == *id)
    }

    pub fn link_index(&self) -> BTreeMap<&LinkId, &Link> {
        self.links.iter().map(|l| (&l.link_id, l)).collect()
    }
}

/// Every invariant violation of `graph`; empty iff the graph is valid.
pub fn validate_graph(graph: &NetworkGraph) -> Vec<GraphViolation> {
    let mut out = Vec::new();
    let mut nodes = BTreeSet::new();
    for n in &graph.nodes {
        if !nodes.insert(&n.id) {
            out.push(GraphViolation::DuplicateNode { node: n.id.clone() });
        }
    }
    let mut links = BTreeSet::new();
    for l in &graph.links {
        if !links.insert(&l.link_id) {
            out.push(GraphViolation::DuplicateLink { link: l.link_id.clone() });
        }
        for end in [&l.endpoints.0, &l.endpoints.1] {
            if !nodes.contains(end) {
                out.push(GraphViolation::DanglingEndpoint { link: l.link_id.clone(), node: end.clone() });
            }
        }
        if l.capacity_bps == 0 {
            out.push(GraphViolation::NonPositiveCapacity { link: l.link_id.clone() });
        }
        if l.propagation_delay_us < 0 || l.reverse_delay_us.is_some_and(|d| d < 0) {
            out.push(GraphViolation::NegativeDelay { link: l.link_id.clone() });
        }
    }
    out
}
