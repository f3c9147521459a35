#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tacnet_core::engine::{FaultSpec, MessageMatch};
use tacnet_core::model::{
    Domain, Link, Micros, Node, NodeKind, QosProfile, Scope, SystemId, Traffic, UseCaseClass, UseCaseGroup,
};
use tacnet_core::registration::{DeviceConfig, TsnTransmissionType};
use tacnet_core::scenario::{DeviceSpec, ExpectedOutcome, OperatorAction, Scenario, Services, UseCaseSpec};
use tacnet_core::security::{CredentialStore, Secret};

pub const GBPS: u64 = 1_000_000_000;

/// Scenario under construction. Every service runs on node `core`.
pub struct Builder {
    pub s: Scenario,
}

impl Builder {
    pub fn new(name: &str) -> Self {
        let core = Node { id: "core".into(), kind: NodeKind::CoreFunction, domain: Domain::FiveG };
        let services = Services {
            orchestrator: "core".into(),
            core_auth: "core".into(),
            authz: "core".into(),
            config_server: "core".into(),
            cuc: "core".into(),
            cnc: "core".into(),
        };
        Builder {
            s: Scenario {
                name: name.into(),
                seed: 7,
                horizon_us: 100_000,
                nodes: vec![core],
                links: vec![],
                services,
                devices: vec![],
                credentials: CredentialStore::default(),
                configs: vec![],
                operator_actions: vec![],
                use_cases: vec![],
                faults: vec![],
                profile_overrides: BTreeMap::new(),
                domain_latency_us: BTreeMap::new(),
                timesync: None,
                replay_cycles: 2,
                control_jitter_us: 0,
                spectrum_heartbeat_us: None,
                localization: BTreeMap::new(),
            },
        }
    }

    pub fn node(&mut self, id: &str, kind: NodeKind, domain: Domain) -> &mut Self {
        self.s.nodes.push(Node { id: id.into(), kind, domain });
        self
    }

    pub fn link(&mut self, id: &str, a: &str, b: &str, capacity: u64, delay: i64, domain: Domain) -> &mut Self {
        self.s.links.push(Link::new(id, a, b, capacity, delay, domain));
        self
    }

    /// Device `dte-<node>` at `node`, credentialed and provisioned at `at`.
    pub fn device(&mut self, node: &str, tsn: bool, at: Micros) -> &mut Self {
        let i = self.s.devices.len() as u32;
        let dte = format!("dte-{node}");
        let secret = (i + 1).to_be_bytes().repeat(4);
        let signature = (i ^ 0xa0a0).to_be_bytes().to_vec();
        let mut scope = Scope::from([SystemId::config_server()]);
        if tsn {
            scope.insert(SystemId::cuc());
        }
        self.s.devices.push(DeviceSpec {
            dte_id: dte.as_str().into(),
            dce_id: format!("dce-{node}").as_str().into(),
            node: node.into(),
            secure_element_id: format!("se-{node}").as_str().into(),
            secret: secret.clone(),
            dte_signature: signature.clone(),
            is_tsn_end_device: tsn,
            expect: None,
        });
        let c = &mut self.s.credentials;
        c.secure_elements.insert(format!("se-{node}").as_str().into(), Secret(secret));
        c.dte_signatures.insert(dte.as_str().into(), Secret(signature));
        c.authorized_systems.insert(dte.as_str().into(), scope.clone());
        let mut config = DeviceConfig::new(dte.as_str().into());
        config.authorized_systems = scope;
        if tsn {
            config.tsn_transmission_type = Some(TsnTransmissionType::EndToEnd);
        }
        self.s.configs.push(config);
        self.s.operator_actions.push(OperatorAction::Provision { at, device_id: dte.as_str().into() });
        self
    }

    pub fn use_case(&mut self, name: &str, group: UseCaseGroup, talker: &str, listeners: &[&str]) -> &mut UseCaseSpec {
        self.s.use_cases.push(UseCaseSpec {
            name: name.into(),
            use_case_class: UseCaseClass::IndustrialApplication,
            group: Some(group),
            qos: None,
            qos_override: None,
            talker: talker.into(),
            listeners: listeners.iter().map(|l| l.to_string()).collect(),
            at: None,
            expect: None,
        });
        self.s.use_cases.last_mut().unwrap()
    }

    pub fn fault(&mut self, f: FaultSpec) -> &mut Self {
        self.s.faults.push(f);
        self
    }

    pub fn build(&self) -> Scenario {
        let issues = tacnet_core::scenario::validate_scenario(&self.s);
        assert!(issues.is_empty(), "fixture invalid: {issues:?}");
        self.s.clone()
    }
}

/// Periodic profile: one `bytes` frame per `period` µs, throughput exactly that rate.
pub fn periodic(period: Micros, bytes: u64, max_latency: Micros) -> QosProfile {
    QosProfile {
        max_e2e_latency_us: max_latency,
        min_throughput_bps: bytes * 8 * 1_000_000 / period,
        reliability_target: 0.999,
        traffic: Traffic::Periodic { period_us: period, frame_bytes: bytes },
        priority: 0,
    }
}

pub fn expect(u: &mut UseCaseSpec, e: ExpectedOutcome) {
    u.expect = Some(e);
}

const TAGS: [&str; 6] =
    ["AttachRequest", "AuthChallenge", "AuthzRequest", "ConfigRequest", "CucRegisterRequest", "RadioAttachOk"];

/// Random registration scenario: a star of 5G radios and TSN bridges around
/// `core`, a random TSN / non-TSN device mix with random provisioning times,
/// random faults and control-plane jitter.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::new(&format!("random-{seed}"));
    b.s.seed = seed;
    b.s.horizon_us = 200_000;
    b.s.control_jitter_us = rng.random_range(0..=50);
    b.node("gnb", NodeKind::BaseStation, Domain::FiveG)
        .node("br", NodeKind::TsnBridge, Domain::Tsn)
        .link("gnb-core", "gnb", "core", 10 * GBPS, rng.random_range(1..200), Domain::FiveG)
        .link("br-core", "br", "core", GBPS, rng.random_range(1..20), Domain::Tsn);
    let n = rng.random_range(1..=8);
    for i in 0..n {
        let tsn = rng.random_bool(0.5);
        let id = format!("d{i}");
        let (hub, domain) = if tsn { ("br", Domain::Tsn) } else { ("gnb", Domain::FiveG) };
        b.node(&id, NodeKind::EndDevice, domain);
        b.link(&format!("{id}-{hub}"), &id, hub, GBPS, rng.random_range(1..500), domain);
        b.device(&id, tsn, rng.random_range(0..20_000));
    }
    let devices: Vec<String> = b.s.devices.iter().map(|d| d.dte_id.to_string()).collect();
    for _ in 0..rng.random_range(0..=3) {
        let f = match rng.random_range(0..4) {
            0 => FaultSpec::AuthReject { device_id: devices[rng.random_range(0..devices.len())].as_str().into() },
            1 => {
                let from = rng.random_range(0..30_000);
                FaultSpec::ConfigUnavailable { from, until: from + rng.random_range(0..20_000) }
            }
            2 => {
                let from = rng.random_range(0..30_000);
                let link = b.s.links[rng.random_range(0..b.s.links.len())].link_id.clone();
                FaultSpec::LinkDown { link_id: link, from, until: from + rng.random_range(0..5_000) }
            }
            _ => FaultSpec::DropMessage {
                matcher: MessageMatch {
                    tag: Some(TAGS[rng.random_range(0..TAGS.len())].into()),
                    device: rng.random_bool(0.5).then(|| devices[rng.random_range(0..devices.len())].as_str().into()),
                    ..MessageMatch::default()
                },
            },
        };
        b.fault(f);
    }
    // a wrong signature now and then
    if rng.random_bool(0.1) {
        let d = &b.s.devices[0].dte_id.clone();
        b.s.credentials.dte_signatures.insert(d.clone(), Secret(vec![0xff]));
    }
    b.build()
}
