//! Security plane: radio-attach authentication, DTE authorization and the
//! tamper-evident audit log.
//!
//! Attach authentication is a single keyed-digest challenge/response
//! (HMAC-SHA-256 over the challenge, keyed by the secure element's shared
//! secret). The audit log is a SHA-256 hash chain.

use std::collections::BTreeMap;

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{hex_bytes, DeviceId, Micros, Scope, SecureElementId};

type HmacSha256 = Hmac<Sha256>;

/// Digest used by the audit chain, recorded in the audit file header.
pub const AUDIT_DIGEST: &str = "sha256";

/// Opaque byte string, hex encoded in JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Secret(#[serde(with = "hex_bytes")] pub Vec<u8>);

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialStore {
    #[serde(default)]
    pub secure_elements: BTreeMap<SecureElementId, Secret>,
    #[serde(default)]
    pub dte_signatures: BTreeMap<DeviceId, Secret>,
    #[serde(default)]
    pub authorized_systems: BTreeMap<DeviceId, Scope>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RadioAttach {
    Ok,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DenyReason {
    SignatureMismatch,
    UnknownDevice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuthzDecision {
    Granted { scope: Scope },
    Denied { reason: DenyReason },
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("order violation: {device} asked for authorization before radio attach")]
pub struct OrderViolation {
    pub device: DeviceId,
}

/// Response a secure element computes for `challenge`.
pub fn challenge_response(secret: &[u8], challenge: &[u8]) -> Vec<u8> {
    let mut mac = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
    mac.update(challenge);
    mac.finalize().into_bytes().to_vec()
}

impl CredentialStore {
    /// `Ok` iff the secure element is known, the response is the keyed digest
    /// of the challenge, and no reject fault is active.
    pub fn radio_attach_auth(
        &self,
        se: &SecureElementId,
        challenge: &[u8],
        response: &[u8],
        reject_fault: bool,
    ) -> RadioAttach {
        if reject_fault {
            return RadioAttach::Fail;
        }
        let Some(secret) = self.secure_elements.get(se) else {
            return RadioAttach::Fail;
        };
        let mut mac = HmacSha256::new_from_slice(&secret.0).expect("hmac accepts any key length");
        mac.update(challenge);
        match mac.verify_slice(response) {
            Ok(()) => RadioAttach::Ok,
            Err(_) => RadioAttach::Fail,
        }
    }

    /// Checks the DTE signature and returns its authorized scope.
    pub fn authorize_dte(
        &self,
        device: &DeviceId,
        signature: &[u8],
        radio_attached: bool,
    ) -> Result<AuthzDecision, OrderViolation> {
        if !radio_attached {
            return Err(OrderViolation { device: device.clone() });
        }
        let decision = match self.dte_signatures.get(device) {
            None => AuthzDecision::Denied { reason: DenyReason::UnknownDevice },
            Some(expected) if expected.0 != signature => {
                AuthzDecision::Denied { reason: DenyReason::SignatureMismatch }
            }
            Some(_) => {
                AuthzDecision::Granted { scope: self.authorized_systems.get(device).cloned().unwrap_or_default() }
            }
        };
        Ok(decision)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditAction {
    Auth,
    Transition,
    Config,
    Admission,
    Provision,
}

impl AuditAction {
    fn as_str(self) -> &'static str {
        match self {
            AuditAction::Auth => "auth",
            AuditAction::Transition => "transition",
            AuditAction::Config => "config",
            AuditAction::Admission => "admission",
            AuditAction::Provision => "provision",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub index: u64,
    pub time: Micros,
    pub actor: String,
    pub action: AuditAction,
    pub outcome: String,
    /// Hex SHA-256 over the previous digest followed by this record's canonical bytes.
    pub chain_digest: String,
}

const CHAIN_SEED: [u8; 32] = [0; 32];

fn canonical_bytes(index: u64, time: Micros, actor: &str, action: AuditAction, outcome: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + actor.len() + outcome.len());
    out.extend_from_slice(&index.to_be_bytes());
    out.extend_from_slice(&time.to_be_bytes());
    for field in [actor, action.as_str(), outcome] {
        out.extend_from_slice(&(field.len() as u64).to_be_bytes());
        out.extend_from_slice(field.as_bytes());
    }
    out
}

fn chain_step(prev: &[u8], canonical: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(prev);
    h.update(canonical);
    h.finalize().into()
}

#[derive(Debug, Clone, Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
    head: Option<[u8; 32]>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, time: Micros, actor: &str, action: AuditAction, outcome: &str) -> &AuditRecord {
        let index = self.records.len() as u64;
        let prev = self.head.unwrap_or(CHAIN_SEED);
        let digest = chain_step(&prev, &canonical_bytes(index, time, actor, action, outcome));
        self.head = Some(digest);
        self.records.push(AuditRecord {
            index,
            time,
            actor: actor.to_owned(),
            action,
            outcome: outcome.to_owned(),
            chain_digest: hex::encode(digest),
        });
        self.records.last().expect("just pushed")
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, action: AuditAction) -> usize {
        self.records.iter().filter(|r| r.action == action).count()
    }
}

/// Recomputes the chain; `Err(i)` names the lowest record whose digest (or
/// index) does not match.
pub fn verify_chain(records: &[AuditRecord]) -> Result<(), u64> {
    let mut prev = CHAIN_SEED;
    for (i, r) in records.iter().enumerate() {
        let i = i as u64;
        if r.index != i {
            return Err(i);
        }
        let expected = chain_step(&prev, &canonical_bytes(r.index, r.time, &r.actor, r.action, &r.outcome));
        if hex::encode(expected) != r.chain_digest {
            return Err(i);
        }
        prev = expected;
    }
    Ok(())
}
