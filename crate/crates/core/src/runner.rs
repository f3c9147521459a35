//! Runs a scenario end to end and renders the output files.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::check::{check_trace, PropertyResult};
use crate::engine::{Engine, EngineStats, Trace};
use crate::messages::{DomainBudget, DomainFailure, Message, ProvisionStatus};
use crate::model::{DeviceId, LinkId, Micros, NodeId, RegistrationState};
use crate::orchestrator::{Orchestrator, UseCaseOutcome};
use crate::scenario::{ExpectedOutcome, Scenario, FORMAT_VERSION};
use crate::security::{verify_chain, AuditAction, AuditRecord};
use crate::timesync::SyncReport;
use crate::topology::Topology;
use crate::tsn::link_utilization;

/// First line of every JSON-lines output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
}

impl OutputHeader {
    fn new(format: &str, seed: u64) -> Self {
        OutputHeader { format: format.to_owned(), version: FORMAT_VERSION, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum Metric {
    Provision {
        id: usize,
        use_case: String,
        status: ProvisionStatus,
        total_latency_us: Micros,
        max_e2e_latency_us: Micros,
        min_throughput_bps: u64,
        budgets: Vec<DomainBudget>,
        observed_max_latency_us: std::collections::BTreeMap<NodeId, Micros>,
        observations: u64,
        violations: u64,
    },
    Link {
        link_id: LinkId,
        capacity_bps: u64,
        tsn_utilization: f64,
        bearer_commit_bps: u64,
    },
    Registration {
        device: DeviceId,
        state: RegistrationState,
        duration_us: Option<Micros>,
    },
    Sync {
        node: NodeId,
        offset_true_us: i64,
        offset_estimate_us: Option<i64>,
        residual_us: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSummary {
    pub device: DeviceId,
    pub state: RegistrationState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect: Option<RegistrationState>,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UseCaseSummary {
    pub name: String,
    /// Active, Degraded, Withdrawn, ProvisionFailure or Pending.
    pub outcome: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect: Option<ExpectedOutcome>,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_latency_us: Option<Micros>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub failures: Vec<DomainFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    #[serde(flatten)]
    pub header: OutputHeader,
    pub scenario: String,
    pub horizon_us: Micros,
    pub events_scheduled: u64,
    pub events_delivered: u64,
    pub events_dropped: u64,
    pub events_pending: usize,
    pub trace_records: usize,
    pub devices: Vec<DeviceSummary>,
    pub use_cases: Vec<UseCaseSummary>,
    pub properties: Vec<PropertyResult>,
    pub audit_records: usize,
    pub audit_chain_ok: bool,
    /// Every authentication decision in the trace has an audit record.
    pub audit_auth_complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sync: Option<SyncReport>,
    pub problems: Vec<String>,
    pub exit_code: i32,
}

pub struct RunOutcome {
    pub trace: Trace<Message>,
    pub audit: Vec<AuditRecord>,
    pub metrics: Vec<Metric>,
    pub summary: Summary,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.summary.exit_code
    }

    pub fn trace_jsonl(&self) -> String {
        let header = OutputHeader::new("tacnet-trace", self.summary.header.seed);
        let mut out = to_line(&header);
        out.push_str(&self.trace.to_jsonl());
        out
    }

    pub fn metrics_jsonl(&self) -> String {
        jsonl(&OutputHeader::new("tacnet-metrics", self.summary.header.seed), &self.metrics)
    }

    pub fn audit_jsonl(&self) -> String {
        jsonl(&OutputHeader::new("tacnet-audit", self.summary.header.seed), &self.audit)
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes") + "\n"
    }

    /// Writes trace.jsonl, metrics.jsonl, audit.jsonl and summary.json into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("trace.jsonl"), self.trace_jsonl())?;
        fs::write(dir.join("metrics.jsonl"), self.metrics_jsonl())?;
        fs::write(dir.join("audit.jsonl"), self.audit_jsonl())?;
        fs::write(dir.join("summary.json"), self.summary_json())?;
        Ok(())
    }
}

fn to_line<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string(v).expect("serializes");
    s.push('\n');
    s
}

fn jsonl<T: Serialize>(header: &OutputHeader, items: &[T]) -> String {
    let mut out = to_line(header);
    for item in items {
        out.push_str(&to_line(item));
    }
    out
}

/// Parses an audit.jsonl file back into records, skipping the header.
pub fn read_audit_jsonl(text: &str) -> Result<Vec<AuditRecord>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).skip(1).map(serde_json::from_str).collect()
}

/// Runs a validated scenario to its horizon.
pub fn run_scenario(scenario: &Scenario) -> RunOutcome {
    let mut orch = Orchestrator::new(scenario);
    let mut engine: Engine<Message> = Engine::new(Topology::new(scenario.graph()), scenario.seed);
    for f in &scenario.faults {
        engine.inject_fault(f.clone()).expect("validated fault");
    }
    engine.set_control_jitter(scenario.control_jitter_us);
    orch.prime(&mut engine);
    engine.run_until(scenario.horizon_us, &mut orch).expect("clock starts at zero");
    // scheduled last so it runs after everything else at the horizon
    let here = scenario.services.orchestrator.clone();
    engine.schedule(scenario.horizon_us, here.clone(), here, Message::Horizon).expect("clock is at the horizon");
    engine.run_until(scenario.horizon_us, &mut orch).expect("clock is at the horizon");

    let stats: EngineStats = engine.stats();
    let pending = engine.pending();
    let trace = engine.into_trace();
    let audit = orch.audit().records().to_vec();
    let metrics = metrics(&orch);
    let mut problems = Vec::new();

    let devices: Vec<DeviceSummary> = orch
        .registrants()
        .values()
        .map(|r| {
            let ok = match r.spec.expect {
                Some(s) => r.state == s,
                None => matches!(r.state, RegistrationState::Operational | RegistrationState::Rejected),
            };
            if !ok {
                problems.push(format!("device {} ended {}", r.spec.dte_id, r.state));
            }
            DeviceSummary { device: r.spec.dte_id.clone(), state: r.state, expect: r.spec.expect, ok }
        })
        .collect();

    let provisions = orch.provisions();
    let use_cases: Vec<UseCaseSummary> = orch
        .use_case_outcomes()
        .map(|(spec, outcome)| {
            let ok = Orchestrator::outcome_expected(spec, outcome, provisions);
            let (label, total, failures) = match outcome {
                UseCaseOutcome::Pending => ("Pending".to_owned(), None, vec![]),
                UseCaseOutcome::Failed { failures } => ("ProvisionFailure".to_owned(), None, failures.clone()),
                UseCaseOutcome::Provisioned { provision } => {
                    let p = &provisions[*provision];
                    (format!("{:?}", p.status), Some(p.total_latency_us), vec![])
                }
            };
            if !ok {
                problems.push(format!("use case {} ended {label}", spec.name));
            }
            UseCaseSummary {
                name: spec.name.clone(),
                outcome: label,
                expect: spec.expect,
                ok,
                total_latency_us: total,
                failures,
            }
        })
        .collect();

    let trace_text = trace.to_jsonl();
    let report = check_trace(&trace_text).expect("own trace parses");
    for p in report.properties.iter().filter(|p| !p.passed) {
        let c = p.counterexample.as_ref().expect("failing property has a counterexample");
        problems.push(format!("property {} failed at record {}: {}", p.name, c.line, c.detail));
    }

    let audit_chain_ok = verify_chain(&audit).is_ok();
    if !audit_chain_ok {
        problems.push("audit chain does not verify".into());
    }
    let decisions = trace
        .records()
        .iter()
        .filter(|r| matches!(r, crate::engine::TraceRecord::Note { payload: Message::AuthDecision { .. }, .. }))
        .count();
    let audit_auth_complete = decisions == orch.audit().count(AuditAction::Auth);
    if !audit_auth_complete {
        problems.push("authentication decisions missing from the audit log".into());
    }

    let exit_code = if problems.is_empty() { 0 } else { 1 };
    let summary = Summary {
        header: OutputHeader::new("tacnet-summary", scenario.seed),
        scenario: scenario.name.clone(),
        horizon_us: scenario.horizon_us,
        events_scheduled: stats.scheduled,
        events_delivered: stats.delivered,
        events_dropped: stats.dropped,
        events_pending: pending,
        trace_records: trace.len(),
        devices,
        use_cases,
        properties: report.properties,
        audit_records: audit.len(),
        audit_chain_ok,
        audit_auth_complete,
        sync: orch.sync().map(|s| s.report()),
        problems,
        exit_code,
    };
    RunOutcome { trace, audit, metrics, summary }
}

fn metrics(orch: &Orchestrator) -> Vec<Metric> {
    let mut out = Vec::new();
    for p in orch.provisions() {
        out.push(Metric::Provision {
            id: p.id,
            use_case: p.use_case.name.clone(),
            status: p.status,
            total_latency_us: p.total_latency_us,
            max_e2e_latency_us: p.use_case.qos.max_e2e_latency_us,
            min_throughput_bps: p.use_case.qos.min_throughput_bps,
            budgets: p.budgets.clone(),
            observed_max_latency_us: p.observed_max_latency_us.clone(),
            observations: p.observations,
            violations: p.violations,
        });
    }
    let topo = orch.topology();
    for (i, link) in topo.graph().links.iter().enumerate() {
        out.push(Metric::Link {
            link_id: link.link_id.clone(),
            capacity_bps: link.capacity_bps,
            tsn_utilization: link_utilization(&link.link_id, topo, orch.cnc().reservations()).expect("known link"),
            bearer_commit_bps: orch.bearer_load(i),
        });
    }
    for r in orch.registrants().values() {
        out.push(Metric::Registration {
            device: r.spec.dte_id.clone(),
            state: r.state,
            duration_us: r.registration_duration(),
        });
    }
    if let Some(sync) = orch.sync() {
        for c in sync.report().clocks {
            out.push(Metric::Sync {
                residual_us: c.residual(),
                node: c.node_id,
                offset_true_us: c.offset_true_us,
                offset_estimate_us: c.offset_estimate_us,
            });
        }
    }
    out
}
