//! Message and note payloads carried through the engine.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::Payload;
use crate::model::{hex_bytes, DeviceId, Domain, LinkId, Micros, NodeId, Scope, SecureElementId, StreamId};
use crate::registration::{DeviceConfig, TsnTransmissionType};
use crate::security::DenyReason;
use crate::tsn::{CucRejectReason, GateWindow};

/// Which of the two authentication steps a decision belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuthStage {
    RadioAttach,
    Authorization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProvisionStatus {
    Active,
    Degraded,
    Withdrawn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backing {
    Stream(StreamId),
    Bearer(u64),
}

/// Latency and throughput one domain segment contributes to a provision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainBudget {
    pub domain: Domain,
    pub start: NodeId,
    /// Segment end node per listener it serves.
    pub ends: Vec<NodeId>,
    /// Largest latency over `ends`.
    pub latency_budget_us: Micros,
    pub throughput_commit_bps: u64,
    pub backing: Backing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainFailure {
    /// `None` for failures of the path as a whole.
    pub domain: Option<Domain>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "msg")]
pub enum Message {
    // operator and registration
    OperatorProvision {
        device: DeviceId,
    },
    StoreConfig {
        device: DeviceId,
        config: DeviceConfig,
    },
    PowerOn {
        device: DeviceId,
    },
    AttachRequest {
        device: DeviceId,
        dce: DeviceId,
        secure_element_id: SecureElementId,
    },
    AuthChallenge {
        device: DeviceId,
        #[serde(with = "hex_bytes")]
        nonce: Vec<u8>,
    },
    AuthResponse {
        device: DeviceId,
        #[serde(with = "hex_bytes")]
        response: Vec<u8>,
    },
    RadioAttachOk {
        device: DeviceId,
    },
    RadioAttachFail {
        device: DeviceId,
    },
    AuthzRequest {
        device: DeviceId,
        #[serde(with = "hex_bytes")]
        signature: Vec<u8>,
    },
    AuthzGranted {
        device: DeviceId,
        scope: Scope,
    },
    AuthzDenied {
        device: DeviceId,
        reason: DenyReason,
    },
    ConfigRequest {
        device: DeviceId,
        attempt: u32,
    },
    ConfigDelivered {
        device: DeviceId,
        config: DeviceConfig,
    },
    ConfigUnavailable {
        device: DeviceId,
        reason: String,
    },
    RetryTimer {
        device: DeviceId,
        attempt: u32,
    },
    CucRegisterRequest {
        device: DeviceId,
        transmission: TsnTransmissionType,
    },
    CucRegistered {
        device: DeviceId,
        transmission: TsnTransmissionType,
    },
    CucRejected {
        device: DeviceId,
        reason: CucRejectReason,
    },
    TsnAnnounce {
        device: DeviceId,
    },

    // use cases and data plane
    UseCaseStart {
        use_case: usize,
    },
    CycleStart {
        provision: usize,
        epoch: u32,
        cycle: u64,
    },
    GateOpen {
        frame: Frame,
    },
    BearerExit {
        frame: Frame,
    },
    DataFrame {
        frame: Frame,
    },

    // time sync
    SyncStart {
        round: u32,
    },
    SyncRequest {
        client: NodeId,
        round: u32,
        t0: i64,
    },
    SyncProcess {
        client: NodeId,
        round: u32,
    },
    SyncResponse {
        client: NodeId,
        round: u32,
        t0: i64,
        t1: i64,
        t2: i64,
    },

    // stubs
    SpectrumTick,
    /// End of the simulated horizon.
    Horizon,

    // notes
    ConfigStored {
        device: DeviceId,
        accepted: bool,
        detail: String,
    },
    AuthDecision {
        device: DeviceId,
        stage: AuthStage,
        granted: bool,
        detail: String,
    },
    Reservation {
        provision: usize,
        stream_id: StreamId,
        release_us: Micros,
        windows: Vec<GateWindow>,
        e2e_latency_us: BTreeMap<NodeId, Micros>,
    },
    Release {
        provision: usize,
        stream_id: StreamId,
    },
    BearerCommit {
        provision: usize,
        bearer: u64,
        domain: Domain,
        links: Vec<LinkId>,
        commit_bps: u64,
    },
    BearerRelease {
        provision: usize,
        bearer: u64,
    },
    Provision {
        provision: usize,
        use_case: String,
        local_control: bool,
        max_e2e_latency_us: Micros,
        budgets: Vec<DomainBudget>,
        listener_latency_us: BTreeMap<NodeId, Micros>,
        total_latency_us: Micros,
    },
    ProvisionFailure {
        use_case: String,
        failures: Vec<DomainFailure>,
    },
    StatusChange {
        provision: usize,
        status: ProvisionStatus,
        detail: String,
    },
    Observation {
        provision: usize,
        listener: NodeId,
        cycle: u64,
        latency_us: Micros,
        expected_us: Micros,
    },
    Violation {
        provision: usize,
        listener: NodeId,
        cycle: u64,
        detail: String,
    },
    SyncResult {
        node: NodeId,
        round: u32,
        estimate_us: i64,
        true_offset_us: i64,
    },
    SyncTimeout {
        node: NodeId,
        round: u32,
    },
    SpectrumHeartbeat,
    LocalizationFix {
        device: DeviceId,
        x_m: f64,
        y_m: f64,
    },
    OrderViolation {
        device: DeviceId,
        detail: String,
    },
    Unroutable {
        src: NodeId,
        dst: NodeId,
        what: String,
    },
}

/// Position of one data-plane frame copy within its provision's replay plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub provision: usize,
    pub epoch: u32,
    pub listener: usize,
    pub cycle: u64,
    pub generated_at: Micros,
    pub leg: usize,
    pub hop: usize,
    pub leg_entry: Micros,
    pub bits: u64,
}

impl Payload for Message {
    fn tag(&self) -> &'static str {
        use Message::*;
        match self {
            OperatorProvision { .. } => "OperatorProvision",
            StoreConfig { .. } => "StoreConfig",
            PowerOn { .. } => "PowerOn",
            AttachRequest { .. } => "AttachRequest",
            AuthChallenge { .. } => "AuthChallenge",
            AuthResponse { .. } => "AuthResponse",
            RadioAttachOk { .. } => "RadioAttachOk",
            RadioAttachFail { .. } => "RadioAttachFail",
            AuthzRequest { .. } => "AuthzRequest",
            AuthzGranted { .. } => "AuthzGranted",
            AuthzDenied { .. } => "AuthzDenied",
            ConfigRequest { .. } => "ConfigRequest",
            ConfigDelivered { .. } => "ConfigDelivered",
            ConfigUnavailable { .. } => "ConfigUnavailable",
            RetryTimer { .. } => "RetryTimer",
            CucRegisterRequest { .. } => "CucRegisterRequest",
            CucRegistered { .. } => "CucRegistered",
            CucRejected { .. } => "CucRejected",
            TsnAnnounce { .. } => "TsnAnnounce",
            UseCaseStart { .. } => "UseCaseStart",
            CycleStart { .. } => "CycleStart",
            GateOpen { .. } => "GateOpen",
            BearerExit { .. } => "BearerExit",
            DataFrame { .. } => "DataFrame",
            SyncStart { .. } => "SyncStart",
            SyncRequest { .. } => "SyncRequest",
            SyncProcess { .. } => "SyncProcess",
            SyncResponse { .. } => "SyncResponse",
            SpectrumTick => "SpectrumTick",
            Horizon => "Horizon",
            ConfigStored { .. } => "ConfigStored",
            AuthDecision { .. } => "AuthDecision",
            Reservation { .. } => "Reservation",
            Release { .. } => "Release",
            BearerCommit { .. } => "BearerCommit",
            BearerRelease { .. } => "BearerRelease",
            Provision { .. } => "Provision",
            ProvisionFailure { .. } => "ProvisionFailure",
            StatusChange { .. } => "StatusChange",
            Observation { .. } => "Observation",
            Violation { .. } => "Violation",
            SyncResult { .. } => "SyncResult",
            SyncTimeout { .. } => "SyncTimeout",
            SpectrumHeartbeat => "SpectrumHeartbeat",
            LocalizationFix { .. } => "LocalizationFix",
            OrderViolation { .. } => "OrderViolation",
            Unroutable { .. } => "Unroutable",
        }
    }

    fn frame_bits(&self) -> u64 {
        match self {
            Message::DataFrame { frame } => frame.bits,
            _ => 0,
        }
    }

    fn device(&self) -> Option<&DeviceId> {
        use Message::*;
        match self {
            OperatorProvision { device }
            | StoreConfig { device, .. }
            | PowerOn { device }
            | AttachRequest { device, .. }
            | AuthChallenge { device, .. }
            | AuthResponse { device, .. }
            | RadioAttachOk { device }
            | RadioAttachFail { device }
            | AuthzRequest { device, .. }
            | AuthzGranted { device, .. }
            | AuthzDenied { device, .. }
            | ConfigRequest { device, .. }
            | ConfigDelivered { device, .. }
            | ConfigUnavailable { device, .. }
            | RetryTimer { device, .. }
            | CucRegisterRequest { device, .. }
            | CucRegistered { device, .. }
            | CucRejected { device, .. }
            | TsnAnnounce { device }
            | ConfigStored { device, .. }
            | AuthDecision { device, .. }
            | LocalizationFix { device, .. }
            | OrderViolation { device, .. } => Some(device),
            _ => None,
        }
    }

    fn is_control(&self) -> bool {
        !matches!(self, Message::DataFrame { .. })
    }
}
