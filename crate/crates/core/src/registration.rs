//! Initial registration state machine and the configuration server.
//!
//! The transition relation:
//!
//! ```text
//! Unprovisioned | Rejected --OperatorProvision--> Provisioned      [PowerOn]
//! Provisioned   --RadioAttachOk-->   RadioAttached                  [RequestAuthorization]
//! RadioAttached --AuthzGranted-->    Authorized                     [RequestConfiguration]
//! Authorized    --ConfigDelivered--> Configured                     [RegisterAtCuc]       (TSN)
//!                                    Configured -> Operational      [GoOperational]       (non-TSN)
//! Authorized    --ConfigUnavailable--> Authorized                   [RetryConfiguration]
//! Configured    --CucRegistered-->   TsnRegistered -> Operational   [AnnounceReady]
//! Provisioned   --RadioAttachFail--> Rejected
//! RadioAttached --AuthzDenied-->     Rejected
//! Configured    --CucRejected-->     Rejected
//! Authorized    --ConfigUnavailable (5th)--> Rejected
//! ```
//!
//! Every other pair is an [`IllegalTransition`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DeviceId, Micros, RegistrationState, Scope, SecureElementId};
use crate::security::DenyReason;

/// Kind of TSN transmission a device registers for at the CUC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TsnTransmissionType {
    EndToEnd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub device_id: DeviceId,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub settings: BTreeMap<String, String>,
    #[serde(default)]
    pub authorized_systems: Scope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tsn_transmission_type: Option<TsnTransmissionType>,
}

impl DeviceConfig {
    pub fn new(device_id: DeviceId) -> Self {
        DeviceConfig {
            device_id,
            settings: BTreeMap::new(),
            authorized_systems: Scope::new(),
            tsn_transmission_type: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum RegistrationEvent {
    OperatorProvision { config: DeviceConfig, secure_element_id: SecureElementId },
    RadioAttachOk,
    RadioAttachFail,
    AuthzGranted { scope: Scope },
    AuthzDenied { reason: DenyReason },
    ConfigDelivered { config: DeviceConfig },
    ConfigUnavailable,
    CucRegistered { transmission: TsnTransmissionType },
    CucRejected,
}

impl RegistrationEvent {
    pub fn name(&self) -> &'static str {
        match self {
            Self::OperatorProvision { .. } => "OperatorProvision",
            Self::RadioAttachOk => "RadioAttachOk",
            Self::RadioAttachFail => "RadioAttachFail",
            Self::AuthzGranted { .. } => "AuthzGranted",
            Self::AuthzDenied { .. } => "AuthzDenied",
            Self::ConfigDelivered { .. } => "ConfigDelivered",
            Self::ConfigUnavailable => "ConfigUnavailable",
            Self::CucRegistered { .. } => "CucRegistered",
            Self::CucRejected => "CucRejected",
        }
    }
}

/// Side effects the driver must carry out after a transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    PowerOn,
    RequestAuthorization,
    RequestConfiguration,
    RetryConfiguration { after: Micros },
    RegisterAtCuc,
    GoOperational,
    AnnounceReady,
}

/// Per-registrant inputs to [`transition`] beyond the state itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Capabilities {
    pub is_tsn_end_device: bool,
    /// `ConfigUnavailable` answers received so far, not counting the current one.
    pub config_failures: u32,
}

pub const CONFIG_RETRY_BASE_US: Micros = 1_000;
pub const CONFIG_RETRY_FACTOR: Micros = 2;
pub const MAX_CONFIG_ATTEMPTS: u32 = 5;

/// Delay before retry number `n` (1-based).
pub fn config_retry_delay(n: u32) -> Micros {
    CONFIG_RETRY_BASE_US * CONFIG_RETRY_FACTOR.pow(n.saturating_sub(1))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    /// States entered, in order. Zero-delay internal steps appear as extra entries.
    pub path: Vec<RegistrationState>,
    pub actions: Vec<Action>,
}

impl Transition {
    fn to(state: RegistrationState, actions: Vec<Action>) -> Self {
        Transition { path: vec![state], actions }
    }

    pub fn next(&self) -> RegistrationState {
        *self.path.last().expect("transition enters at least one state")
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("illegal transition: {event} in state {state}")]
pub struct IllegalTransition {
    pub state: RegistrationState,
    pub event: &'static str,
}

/// Pure transition function of the registration state machine.
pub fn transition(
    state: RegistrationState,
    event: &RegistrationEvent,
    caps: Capabilities,
) -> Result<Transition, IllegalTransition> {
    use RegistrationEvent as E;
    use RegistrationState as S;

    let t = match (state, event) {
        (S::Unprovisioned | S::Rejected, E::OperatorProvision { .. }) => {
            Transition::to(S::Provisioned, vec![Action::PowerOn])
        }
        (S::Provisioned, E::RadioAttachOk) => Transition::to(S::RadioAttached, vec![Action::RequestAuthorization]),
        (S::Provisioned, E::RadioAttachFail) => Transition::to(S::Rejected, vec![]),
        (S::RadioAttached, E::AuthzGranted { .. }) => Transition::to(S::Authorized, vec![Action::RequestConfiguration]),
        (S::RadioAttached, E::AuthzDenied { .. }) => Transition::to(S::Rejected, vec![]),
        (S::Authorized, E::ConfigDelivered { .. }) if caps.is_tsn_end_device => {
            Transition::to(S::Configured, vec![Action::RegisterAtCuc])
        }
        (S::Authorized, E::ConfigDelivered { .. }) => {
            Transition { path: vec![S::Configured, S::Operational], actions: vec![Action::GoOperational] }
        }
        (S::Authorized, E::ConfigUnavailable) => {
            let failures = caps.config_failures + 1;
            if failures >= MAX_CONFIG_ATTEMPTS {
                Transition::to(S::Rejected, vec![])
            } else {
                Transition::to(S::Authorized, vec![Action::RetryConfiguration { after: config_retry_delay(failures) }])
            }
        }
        (S::Configured, E::CucRegistered { .. }) if caps.is_tsn_end_device => {
            Transition { path: vec![S::TsnRegistered, S::Operational], actions: vec![Action::AnnounceReady] }
        }
        (S::Configured, E::CucRejected) if caps.is_tsn_end_device => Transition::to(S::Rejected, vec![]),
        _ => return Err(IllegalTransition { state, event: event.name() }),
    };
    Ok(t)
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("configuration of {device} is locked while the device is {state}")]
    ConfigLocked { device: DeviceId, state: RegistrationState },
    #[error("configuration of {0} is unavailable")]
    ConfigUnavailable(DeviceId),
}

/// Configuration server holding per-device initial settings.
#[derive(Debug, Clone, Default)]
pub struct ConfigServer {
    configs: BTreeMap<DeviceId, DeviceConfig>,
}

impl ConfigServer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `config`. Writing is refused while the device is anywhere
    /// between `Provisioned` and `Operational`; unknown devices are accepted.
    pub fn store_config(
        &mut self,
        config: DeviceConfig,
        device_state: Option<RegistrationState>,
    ) -> Result<(), ConfigError> {
        if let Some(state) = device_state {
            if !matches!(state, RegistrationState::Unprovisioned | RegistrationState::Rejected) {
                return Err(ConfigError::ConfigLocked { device: config.device_id, state });
            }
        }
        self.configs.insert(config.device_id.clone(), config);
        Ok(())
    }

    /// Looks up a stored config; `suppressed` models an active outage.
    pub fn fetch_config(&self, device: &DeviceId, suppressed: bool) -> Result<&DeviceConfig, ConfigError> {
        if suppressed {
            return Err(ConfigError::ConfigUnavailable(device.clone()));
        }
        self.configs.get(device).ok_or_else(|| ConfigError::ConfigUnavailable(device.clone()))
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }
}
