mod common;

use common::{Builder, GBPS};
use tacnet_core::engine::{FaultSpec, MessageMatch, TraceRecord};
use tacnet_core::messages::Message;
use tacnet_core::model::{Domain, NodeKind, RegistrationState};
use tacnet_core::runner::{run_scenario, RunOutcome};

fn tags(out: &RunOutcome, device: &str) -> Vec<&'static str> {
    out.trace
        .delivered()
        .filter(|e| tacnet_core::engine::Payload::device(&e.payload).is_some_and(|d| d.as_str() == device))
        .map(|e| tacnet_core::engine::Payload::tag(&e.payload))
        .collect()
}

fn position(tags: &[&str], tag: &str) -> usize {
    tags.iter().position(|t| *t == tag).unwrap_or_else(|| panic!("{tag} missing from {tags:?}"))
}

fn one_device(tsn: bool) -> Builder {
    let mut b = Builder::new("one");
    b.node("dev", NodeKind::EndDevice, Domain::Tsn).link("l0", "dev", "core", GBPS, 10, Domain::Tsn);
    b.device("dev", tsn, 0);
    b
}

fn state(out: &RunOutcome) -> RegistrationState {
    out.summary.devices[0].state
}

#[test]
fn tsn_device_walks_every_phase_in_order() {
    let out = run_scenario(&one_device(true).build());
    assert_eq!(state(&out), RegistrationState::Operational);
    assert_eq!(out.exit_code(), 0, "{:?}", out.summary.problems);
    let t = tags(&out, "dte-dev");
    let phases = [
        "OperatorProvision",
        "PowerOn",
        "RadioAttachOk",
        "AuthzGranted",
        "ConfigDelivered",
        "CucRegistered",
        "TsnAnnounce",
    ];
    let at: Vec<usize> = phases.iter().map(|p| position(&t, p)).collect();
    assert!(at.windows(2).all(|w| w[0] < w[1]), "{t:?}");
}

#[test]
fn transitions_follow_the_state_machine() {
    let out = run_scenario(&one_device(true).build());
    let states: Vec<RegistrationState> = out
        .trace
        .records()
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Transition { to, .. } => Some(*to),
            _ => None,
        })
        .collect();
    use RegistrationState::*;
    assert_eq!(states, vec![Provisioned, RadioAttached, Authorized, Configured, TsnRegistered, Operational]);
}

#[test]
fn auth_reject_ends_rejected_without_config_fetch() {
    let mut b = one_device(true);
    b.fault(FaultSpec::AuthReject { device_id: "dte-dev".into() });
    b.s.devices[0].expect = Some(RegistrationState::Rejected);
    let out = run_scenario(&b.build());
    assert_eq!(state(&out), RegistrationState::Rejected);
    let t = tags(&out, "dte-dev");
    assert!(t.contains(&"RadioAttachFail"));
    assert!(!t.contains(&"ConfigRequest") && !t.contains(&"ConfigDelivered"), "{t:?}");
    // an annotated rejection is not a failure
    assert_eq!(out.exit_code(), 0, "{:?}", out.summary.problems);
}

#[test]
fn non_tsn_device_skips_the_cuc() {
    let out = run_scenario(&one_device(false).build());
    assert_eq!(state(&out), RegistrationState::Operational);
    let t = tags(&out, "dte-dev");
    assert!(t.iter().all(|m| !m.starts_with("Cuc") && *m != "TsnAnnounce"), "{t:?}");
}

#[test]
fn wrong_signature_is_denied() {
    let mut b = one_device(false);
    b.s.credentials.dte_signatures.insert("dte-dev".into(), tacnet_core::security::Secret(vec![1]));
    let out = run_scenario(&b.build());
    assert_eq!(state(&out), RegistrationState::Rejected);
    assert!(tags(&out, "dte-dev").contains(&"AuthzDenied"));
}

#[test]
fn unknown_secure_element_fails_attach() {
    let mut b = one_device(false);
    b.s.credentials.secure_elements.clear();
    let out = run_scenario(&b.build());
    assert_eq!(state(&out), RegistrationState::Rejected);
}

#[test]
fn config_outage_is_retried() {
    let mut b = one_device(false);
    // registration reaches the config request at 60 µs; back off 1000 then 2000
    b.fault(FaultSpec::ConfigUnavailable { from: 0, until: 2_000 });
    let out = run_scenario(&b.build());
    assert_eq!(state(&out), RegistrationState::Operational);
    let t = tags(&out, "dte-dev");
    assert_eq!(t.iter().filter(|m| **m == "ConfigUnavailable").count(), 2, "{t:?}");
    assert_eq!(t.iter().filter(|m| **m == "RetryTimer").count(), 2);
}

#[test]
fn permanent_config_outage_rejects() {
    let mut b = one_device(false);
    b.fault(FaultSpec::ConfigUnavailable { from: 0, until: 1_000_000 });
    let out = run_scenario(&b.build());
    assert_eq!(state(&out), RegistrationState::Rejected);
    let t = tags(&out, "dte-dev");
    assert_eq!(t.iter().filter(|m| **m == "ConfigUnavailable").count(), 5, "{t:?}");
}

#[test]
fn config_out_of_scope_is_unavailable() {
    let mut b = one_device(false);
    b.s.credentials.authorized_systems.insert("dte-dev".into(), Default::default());
    let out = run_scenario(&b.build());
    assert_eq!(state(&out), RegistrationState::Rejected);
    assert!(!tags(&out, "dte-dev").contains(&"ConfigDelivered"));
}

#[test]
fn cuc_outside_scope_rejects_tsn_device() {
    let mut b = one_device(true);
    b.s.credentials.authorized_systems.insert("dte-dev".into(), [tacnet_core::model::SystemId::config_server()].into());
    let out = run_scenario(&b.build());
    assert_eq!(state(&out), RegistrationState::Rejected);
    assert!(tags(&out, "dte-dev").contains(&"CucRejected"));
}

#[test]
fn dropped_attach_leaves_device_stuck_and_fails_the_run() {
    let mut b = one_device(false);
    b.fault(FaultSpec::DropMessage {
        matcher: MessageMatch { tag: Some("AttachRequest".into()), ..Default::default() },
    });
    let out = run_scenario(&b.build());
    assert_eq!(state(&out), RegistrationState::Provisioned);
    assert_eq!(out.exit_code(), 1);
    assert_eq!(out.summary.events_dropped, 1);
}

#[test]
fn every_auth_decision_is_audited() {
    let mut b = one_device(true);
    b.node("dev2", NodeKind::EndDevice, Domain::Tsn).link("l1", "dev2", "core", GBPS, 3, Domain::Tsn);
    b.device("dev2", false, 50);
    b.fault(FaultSpec::AuthReject { device_id: "dte-dev2".into() });
    let out = run_scenario(&b.build());
    let decisions = out
        .trace
        .records()
        .iter()
        .filter(|r| matches!(r, TraceRecord::Note { payload: Message::AuthDecision { .. }, .. }))
        .count();
    assert_eq!(decisions, 3);
    assert!(out.summary.audit_auth_complete);
    assert!(out.summary.audit_chain_ok);
}

#[test]
fn config_store_is_refused_while_registering() {
    let mut b = one_device(false);
    let config = b.s.configs[0].clone();
    b.s.operator_actions.push(tacnet_core::scenario::OperatorAction::StoreConfig { at: 15, config });
    let out = run_scenario(&b.build());
    let stored: Vec<bool> = out
        .trace
        .records()
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Note { payload: Message::ConfigStored { accepted, .. }, .. } => Some(*accepted),
            _ => None,
        })
        .collect();
    assert_eq!(stored, vec![true, false]);
    assert_eq!(state(&out), RegistrationState::Operational);
}
