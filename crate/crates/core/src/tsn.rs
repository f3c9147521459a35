//! CUC and CNC: TSN end-device registration and gate-window stream admission.
//!
//! Admission routes every listener over the minimum-hop path (ties broken by
//! the lexicographically smallest link-id sequence) and places one gate window
//! per link of the resulting multicast tree, all inside one stream period.
//! Window offsets are chosen first-fit in increasing integer microseconds.
//! The talker releases a frame at the start of every period, so a listener's
//! latency runs from cycle start to the end of its last window plus that
//! link's propagation delay. Earliest placement on every link also gives the
//! earliest arrival, so first-fit never rejects a stream some other offset
//! assignment would admit.
//!
//! Checks run in a fixed order: hyperperiod, frame length, link capacity,
//! schedule search, latency.

use std::collections::{BTreeMap, BTreeSet};

use num_integer::Integer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DeviceId, LinkId, Micros, NodeId, RegistrationState, Scope, StreamId, SystemId};
use crate::registration::TsnTransmissionType;
use crate::topology::{Hop, Topology};

/// Upper bound on any hyperperiod, µs.
pub const MAX_HYPERPERIOD_US: Micros = 1 << 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamRequest {
    pub stream_id: StreamId,
    pub talker: NodeId,
    pub listeners: Vec<NodeId>,
    pub period_us: Micros,
    pub frame_bytes: u64,
    pub max_e2e_latency_us: Micros,
    pub priority: u8,
}

impl StreamRequest {
    pub fn frame_bits(&self) -> u64 {
        self.frame_bytes * 8
    }
}

/// A reserved transmission interval, repeated every `period_us`, on the
/// egress port of `egress` onto `link_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateWindow {
    pub link_id: LinkId,
    pub egress: NodeId,
    pub offset_us: Micros,
    pub duration_us: Micros,
    pub period_us: Micros,
}

impl GateWindow {
    pub fn end(&self) -> Micros {
        self.offset_us + self.duration_us
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamReservation {
    pub stream_id: StreamId,
    pub talker: NodeId,
    pub period_us: Micros,
    pub frame_bytes: u64,
    /// Point in each cycle at which the talker has the frame ready. Windows
    /// and latencies are laid out from there.
    #[serde(default)]
    pub release_us: Micros,
    /// Link sequence from the talker, per listener.
    pub paths: BTreeMap<NodeId, Vec<LinkId>>,
    /// Index into `windows` for every hop of `paths`.
    pub path_windows: BTreeMap<NodeId, Vec<usize>>,
    /// One window per multicast tree edge, parents before children.
    pub windows: Vec<GateWindow>,
    /// Release to arrival at the listener.
    pub e2e_latency_us: BTreeMap<NodeId, Micros>,
    pub admitted_at: Micros,
}

impl StreamReservation {
    pub fn window_on(&self, link: &LinkId) -> Option<&GateWindow> {
        self.windows.iter().find(|w| w.link_id == *link)
    }

    pub fn windows_on<'a>(&'a self, link: &'a LinkId) -> impl Iterator<Item = &'a GateWindow> {
        self.windows.iter().filter(move |w| w.link_id == *link)
    }

    pub fn max_e2e_latency(&self) -> Micros {
        self.e2e_latency_us.values().copied().max().unwrap_or(0)
    }

    pub fn frame_bits(&self) -> u64 {
        self.frame_bytes * 8
    }

    /// Committed rate in bits per second.
    pub fn rate_bps(&self) -> f64 {
        self.frame_bits() as f64 * 1e6 / self.period_us as f64
    }

    /// Windows whose egress is `node`.
    pub fn windows_from<'a>(&'a self, node: &'a NodeId) -> impl Iterator<Item = &'a GateWindow> {
        self.windows.iter().filter(move |w| w.egress == *node)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RejectionReason {
    InvalidRequest,
    NoPath,
    HyperperiodOverflow,
    FrameExceedsPeriod,
    CapacityExceeded,
    NoFeasibleSchedule,
    LatencyExceeded,
}

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[error("stream {stream_id} rejected: {reason:?} ({detail})")]
pub struct Rejection {
    pub stream_id: StreamId,
    pub reason: RejectionReason,
    pub detail: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum HyperperiodError {
    #[error("period must be positive")]
    ZeroPeriod,
    #[error("hyperperiod exceeds 2^32 µs")]
    Overflow,
}

/// Least common multiple of `periods`; 1 for an empty list.
pub fn compute_hyperperiod(periods: impl IntoIterator<Item = Micros>) -> Result<Micros, HyperperiodError> {
    let mut h: Micros = 1;
    for p in periods {
        if p == 0 {
            return Err(HyperperiodError::ZeroPeriod);
        }
        h = h.lcm(&p);
        if h > MAX_HYPERPERIOD_US {
            return Err(HyperperiodError::Overflow);
        }
    }
    Ok(h)
}

/// Whether two periodic windows ever overlap. With `g = gcd(p1, p2)` the
/// instance start differences range over all values congruent to
/// `o2 - o1 (mod g)`; they overlap iff one such value lies in `(-d2, d1)`.
pub fn windows_collide(o1: Micros, d1: Micros, p1: Micros, o2: Micros, d2: Micros, p2: Micros) -> bool {
    let g = p1.gcd(&p2) as i128;
    let r = (o2 as i128 - o1 as i128).rem_euclid(g);
    r < d1 as i128 || r > g - d2 as i128
}

/// Earliest start `t >= lower` (µs after the release point) for a window of
/// `duration` that collides with none of `busy` (each `(offset, duration,
/// period)` within the cycle). The window sits at `(release + t) % period`
/// and may not run past the end of its cycle; a frame that misses it waits
/// for a later cycle. Only `t mod period` matters, so one period is scanned.
fn earliest_free(
    lower: Micros,
    duration: Micros,
    period: Micros,
    release: Micros,
    busy: &[(Micros, Micros, Micros)],
) -> Option<Micros> {
    let last = period.checked_sub(duration)?;
    let mut t = lower;
    'scan: while t < lower + period {
        let at = (release + t) % period;
        if at > last {
            t += period - at;
            continue;
        }
        for &(bo, bd, bp) in busy {
            if windows_collide(at, duration, period, bo, bd, bp) {
                let g = period.gcd(&bp);
                if duration + bd > g {
                    // blocks every residue
                    return None;
                }
                // jump to where this window's instance ends (mod g)
                let step = ((bo + bd) as i128 - at as i128).rem_euclid(g as i128) as Micros;
                t += step.max(1);
                continue 'scan;
            }
        }
        return Some(t);
    }
    None
}

struct TreeHop {
    hop: Hop,
    parent: Option<usize>,
    duration: Micros,
}

fn reject(req: &StreamRequest, reason: RejectionReason, detail: impl Into<String>) -> Rejection {
    Rejection { stream_id: req.stream_id.clone(), reason, detail: detail.into() }
}

/// Decides admission of `request` against `existing` reservations.
pub fn cnc_admit<'a>(
    request: &StreamRequest,
    topo: &Topology,
    existing: impl IntoIterator<Item = &'a StreamReservation>,
    now: Micros,
) -> Result<StreamReservation, Rejection> {
    cnc_admit_avoiding(request, topo, existing, now, &BTreeSet::new())
}

/// As [`cnc_admit`], routing around the link indices in `excluded`.
pub fn cnc_admit_avoiding<'a>(
    request: &StreamRequest,
    topo: &Topology,
    existing: impl IntoIterator<Item = &'a StreamReservation>,
    now: Micros,
    excluded: &BTreeSet<usize>,
) -> Result<StreamReservation, Rejection> {
    use RejectionReason as R;

    let talker = topo
        .node_idx(&request.talker)
        .ok_or_else(|| reject(request, R::NoPath, format!("unknown talker {}", request.talker)))?;
    let mut paths = Vec::with_capacity(request.listeners.len());
    for listener in &request.listeners {
        let li = topo
            .node_idx(listener)
            .ok_or_else(|| reject(request, R::NoPath, format!("unknown listener {listener}")))?;
        let path = topo
            .shortest_path(talker, li, excluded)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| reject(request, R::NoPath, format!("no path to {listener}")))?;
        paths.push(path);
    }
    cnc_admit_on_paths(request, topo, &paths, existing, now, 0)
}

/// Admission over given per-listener paths (same order as
/// `request.listeners`), with the frame ready `release_us` into each cycle.
pub fn cnc_admit_on_paths<'a>(
    request: &StreamRequest,
    topo: &Topology,
    paths: &[Vec<Hop>],
    existing: impl IntoIterator<Item = &'a StreamReservation>,
    now: Micros,
    release_us: Micros,
) -> Result<StreamReservation, Rejection> {
    use RejectionReason as R;

    let existing: Vec<&StreamReservation> = existing.into_iter().collect();
    if request.period_us == 0 || request.frame_bytes == 0 || request.max_e2e_latency_us == 0 {
        return Err(reject(request, R::InvalidRequest, "period, frame size and latency must be positive"));
    }
    if request.listeners.is_empty() || paths.len() != request.listeners.len() {
        return Err(reject(request, R::InvalidRequest, "one path per listener required"));
    }
    let period = request.period_us;
    let release = release_us % period;

    // multicast tree: listeners share a window only while their paths share a prefix
    let mut tree: Vec<TreeHop> = Vec::new();
    let mut tree_index: BTreeMap<(Option<usize>, usize), usize> = BTreeMap::new();
    let mut listener_hops: Vec<(NodeId, Vec<usize>)> = Vec::new();
    let bits = request.frame_bits();
    for (listener, path) in request.listeners.iter().zip(paths) {
        if path.is_empty() {
            return Err(reject(request, R::NoPath, format!("empty path to {listener}")));
        }
        let mut parent = None;
        let mut indices = Vec::with_capacity(path.len());
        for &hop in path {
            let idx = *tree_index.entry((parent, hop.link)).or_insert_with(|| {
                tree.push(TreeHop { hop, parent, duration: topo.link(hop.link).transmission_us(bits).max(1) });
                tree.len() - 1
            });
            indices.push(idx);
            parent = Some(idx);
        }
        listener_hops.push((listener.clone(), indices));
    }

    let hyperperiod = compute_hyperperiod(existing.iter().map(|r| r.period_us).chain([period]))
        .map_err(|e| reject(request, R::HyperperiodOverflow, e.to_string()))?;

    for th in &tree {
        if th.duration >= period {
            return Err(reject(
                request,
                R::FrameExceedsPeriod,
                format!("{} µs on {} against a {period} µs period", th.duration, topo.link_id(th.hop.link)),
            ));
        }
    }

    // exact utilization over the hyperperiod: Σ bits·(H/p)·10⁶ ≤ capacity·H
    let mut uses: BTreeMap<usize, u128> = BTreeMap::new();
    for th in &tree {
        *uses.entry(th.hop.link).or_default() += 1;
    }
    for (&l, &n) in &uses {
        let link = topo.link(l);
        let committed: u128 = existing
            .iter()
            .map(|r| {
                r.windows_on(&link.link_id).count() as u128
                    * r.frame_bits() as u128
                    * (hyperperiod / r.period_us) as u128
            })
            .sum::<u128>()
            + n * bits as u128 * (hyperperiod / period) as u128;
        if committed * 1_000_000 > link.capacity_bps as u128 * hyperperiod as u128 {
            return Err(reject(request, R::CapacityExceeded, format!("link {}", link.link_id)));
        }
    }

    let mut busy: BTreeMap<usize, Vec<(Micros, Micros, Micros)>> = BTreeMap::new();
    for &l in uses.keys() {
        let id = topo.link_id(l);
        busy.insert(
            l,
            existing.iter().flat_map(|r| r.windows_on(id)).map(|w| (w.offset_us, w.duration_us, w.period_us)).collect(),
        );
    }

    let mut offsets: Vec<Micros> = Vec::with_capacity(tree.len());
    for th in &tree {
        let ready = th.parent.map_or(0, |p| offsets[p] + tree[p].duration + topo.hop_delay(tree[p].hop));
        let link_busy = busy.get_mut(&th.hop.link).expect("busy list per used link");
        let o = earliest_free(ready, th.duration, period, release, link_busy).ok_or_else(|| {
            reject(request, R::NoFeasibleSchedule, format!("no window on {}", topo.link_id(th.hop.link)))
        })?;
        link_busy.push(((release + o) % period, th.duration, period));
        offsets.push(o);
    }
    let arrival = |last: usize| offsets[last] + tree[last].duration + topo.hop_delay(tree[last].hop);
    for (listener, hops) in &listener_hops {
        let latency = arrival(*hops.last().expect("non-empty path"));
        if latency > request.max_e2e_latency_us {
            return Err(reject(
                request,
                R::LatencyExceeded,
                format!("{latency} µs to {listener} against {} µs", request.max_e2e_latency_us),
            ));
        }
    }

    let windows = tree
        .iter()
        .enumerate()
        .map(|(i, th)| GateWindow {
            link_id: topo.link_id(th.hop.link).clone(),
            egress: topo.node_id(th.hop.from).clone(),
            offset_us: (release + offsets[i]) % period,
            duration_us: th.duration,
            period_us: period,
        })
        .collect();
    let mut path_links = BTreeMap::new();
    let mut path_windows = BTreeMap::new();
    let mut e2e = BTreeMap::new();
    for (listener, hops) in &listener_hops {
        path_links.insert(listener.clone(), hops.iter().map(|&i| topo.link_id(tree[i].hop.link).clone()).collect());
        path_windows.insert(listener.clone(), hops.clone());
        e2e.insert(listener.clone(), arrival(*hops.last().expect("non-empty path")));
    }
    Ok(StreamReservation {
        stream_id: request.stream_id.clone(),
        talker: request.talker.clone(),
        period_us: period,
        frame_bytes: request.frame_bytes,
        release_us: release,
        paths: path_links,
        path_windows,
        windows,
        e2e_latency_us: e2e,
        admitted_at: now,
    })
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("unknown stream {0}")]
pub struct UnknownStream(pub StreamId);

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("unknown link {0}")]
pub struct UnknownLink(pub LinkId);

/// Fraction of `link`'s capacity committed by `reservations`.
pub fn link_utilization<'a>(
    link: &LinkId,
    topo: &Topology,
    reservations: impl IntoIterator<Item = &'a StreamReservation>,
) -> Result<f64, UnknownLink> {
    let idx = topo.link_idx(link).ok_or_else(|| UnknownLink(link.clone()))?;
    let capacity = topo.link(idx).capacity_bps as f64;
    let rate: f64 = reservations.into_iter().map(|r| r.windows_on(link).count() as f64 * r.rate_bps()).sum();
    Ok(rate / capacity)
}

/// Centralized Network Controller: holds admitted reservations.
#[derive(Debug, Clone, Default)]
pub struct Cnc {
    reservations: BTreeMap<StreamId, StreamReservation>,
}

impl Cnc {
    pub fn new() -> Self {
        Self::default()
    }

    /// Admission is sequential: each request sees all earlier admissions.
    pub fn admit(
        &mut self,
        request: &StreamRequest,
        topo: &Topology,
        now: Micros,
        excluded: &BTreeSet<usize>,
    ) -> Result<&StreamReservation, Rejection> {
        if self.reservations.contains_key(&request.stream_id) {
            return Err(reject(request, RejectionReason::InvalidRequest, "duplicate stream id"));
        }
        let r = cnc_admit_avoiding(request, topo, self.reservations.values(), now, excluded)?;
        Ok(self.reservations.entry(request.stream_id.clone()).or_insert(r))
    }

    /// As [`Cnc::admit`] over explicit paths; see [`cnc_admit_on_paths`].
    pub fn admit_on_paths(
        &mut self,
        request: &StreamRequest,
        topo: &Topology,
        paths: &[Vec<Hop>],
        now: Micros,
        release_us: Micros,
    ) -> Result<&StreamReservation, Rejection> {
        if self.reservations.contains_key(&request.stream_id) {
            return Err(reject(request, RejectionReason::InvalidRequest, "duplicate stream id"));
        }
        let r = cnc_admit_on_paths(request, topo, paths, self.reservations.values(), now, release_us)?;
        Ok(self.reservations.entry(request.stream_id.clone()).or_insert(r))
    }

    pub fn release_stream(&mut self, id: &StreamId) -> Result<StreamReservation, UnknownStream> {
        self.reservations.remove(id).ok_or_else(|| UnknownStream(id.clone()))
    }

    pub fn get(&self, id: &StreamId) -> Option<&StreamReservation> {
        self.reservations.get(id)
    }

    pub fn reservations(&self) -> impl Iterator<Item = &StreamReservation> {
        self.reservations.values()
    }

    pub fn len(&self) -> usize {
        self.reservations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reservations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CucRejectReason {
    ScopeMissing,
    CncUnreachable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CucOutcome {
    Registered(TsnTransmissionType),
    Rejected(CucRejectReason),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("order violation: {device} registered at the CUC while {state} (TSN end device: {tsn})")]
pub struct CucOrderViolation {
    pub device: DeviceId,
    pub state: RegistrationState,
    pub tsn: bool,
}

/// Centralized User Configuration: TSN end-device registry.
#[derive(Debug, Clone, Default)]
pub struct Cuc {
    registered: BTreeMap<DeviceId, TsnTransmissionType>,
}

impl Cuc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cuc_register(
        &mut self,
        device: &DeviceId,
        transmission: TsnTransmissionType,
        state: RegistrationState,
        is_tsn_end_device: bool,
        scope: &Scope,
        cnc_reachable: bool,
    ) -> Result<CucOutcome, CucOrderViolation> {
        if state != RegistrationState::Configured || !is_tsn_end_device {
            return Err(CucOrderViolation { device: device.clone(), state, tsn: is_tsn_end_device });
        }
        if !scope.contains(&SystemId::cuc()) {
            return Ok(CucOutcome::Rejected(CucRejectReason::ScopeMissing));
        }
        if !cnc_reachable {
            return Ok(CucOutcome::Rejected(CucRejectReason::CncUnreachable));
        }
        self.registered.insert(device.clone(), transmission);
        Ok(CucOutcome::Registered(transmission))
    }

    pub fn is_registered(&self, device: &DeviceId) -> bool {
        self.registered.contains_key(device)
    }

    pub fn len(&self) -> usize {
        self.registered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registered.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Domain, Link, NetworkGraph, Node, NodeKind};

    fn single_link() -> Topology {
        let n = |id: &str| Node { id: id.into(), kind: NodeKind::TsnBridge, domain: Domain::Tsn };
        Topology::new(NetworkGraph {
            nodes: vec![n("t"), n("l")],
            links: vec![Link::new("l0", "t", "l", 1_000_000_000, 2, Domain::Tsn)],
        })
    }

    fn req(id: &str, period: Micros, bytes: u64, max: Micros) -> StreamRequest {
        StreamRequest {
            stream_id: id.into(),
            talker: "t".into(),
            listeners: vec!["l".into()],
            period_us: period,
            frame_bytes: bytes,
            max_e2e_latency_us: max,
            priority: 0,
        }
    }

    #[test]
    fn hyperperiods() {
        assert_eq!(compute_hyperperiod([100]), Ok(100));
        assert_eq!(compute_hyperperiod([100, 250]), Ok(500));
        assert_eq!(compute_hyperperiod([7, 11, 13]), Ok(1001));
        assert_eq!(compute_hyperperiod([0]), Err(HyperperiodError::ZeroPeriod));
        assert_eq!(compute_hyperperiod([65_537, 65_539, 65_543]), Err(HyperperiodError::Overflow));
    }

    #[test]
    fn late_frame_waits_for_the_next_cycle() {
        let n = |id: &str| Node { id: id.into(), kind: NodeKind::TsnBridge, domain: Domain::Tsn };
        let topo = Topology::new(NetworkGraph {
            nodes: vec![n("t"), n("m"), n("l")],
            links: vec![
                Link::new("l0", "t", "m", 1_000_000_000, 1, Domain::Tsn),
                Link::new("l1", "m", "l", 1_000_000_000, 1, Domain::Tsn),
            ],
        });
        // 30 µs frames in a 50 µs cycle reach m at 31, past the last start (20)
        let r = cnc_admit(&req("A", 50, 3_750, 100), &topo, [], 0).unwrap();
        let offsets: Vec<_> = r.windows.iter().map(|w| w.offset_us).collect();
        assert_eq!(offsets, vec![0, 0]);
        assert_eq!(r.e2e_latency_us[&NodeId::from("l")], 81);
        assert_eq!(
            cnc_admit(&req("A", 50, 3_750, 80), &topo, [], 0).unwrap_err().reason,
            RejectionReason::LatencyExceeded
        );
    }

    #[test]
    fn released_windows_stay_inside_the_cycle() {
        let topo = single_link();
        let paths = vec![topo.path_between(&"t".into(), &"l".into()).unwrap()];
        // ready 95 µs into a 100 µs cycle: a 10 µs window cannot start before the wrap
        let r = cnc_admit_on_paths(&req("A", 100, 1_250, 500), &topo, &paths, [], 0, 95).unwrap();
        assert_eq!(r.windows[0].offset_us, 0);
        assert_eq!(r.e2e_latency_us[&NodeId::from("l")], 17);
    }

    #[test]
    fn first_stream_gets_offset_zero() {
        let topo = single_link();
        let a = cnc_admit(&req("A", 100, 1_250, 50), &topo, [], 0).unwrap();
        assert_eq!(a.windows.len(), 1);
        assert_eq!((a.windows[0].offset_us, a.windows[0].end()), (0, 10));
        assert_eq!(a.e2e_latency_us[&NodeId::from("l")], 12);
        let b = cnc_admit(&req("B", 100, 1_250, 50), &topo, [&a], 0).unwrap();
        assert_eq!((b.windows[0].offset_us, b.windows[0].end()), (10, 20));
        assert_eq!(b.e2e_latency_us[&NodeId::from("l")], 22);
    }

    #[test]
    fn release_point_shifts_the_search() {
        let topo = single_link();
        let a = cnc_admit(&req("A", 100, 1_250, 50), &topo, [], 0).unwrap();
        let path = topo.path_between(&"t".into(), &"l".into()).unwrap();
        let b = cnc_admit_on_paths(&req("B", 100, 1_250, 50), &topo, &[path], [&a], 0, 95).unwrap();
        // A occupies local [5, 15) as seen from 95
        assert_eq!(b.windows[0].offset_us, 10);
        assert_eq!(b.e2e_latency_us[&NodeId::from("l")], 27);
    }

    #[test]
    fn long_frame_exceeds_period() {
        let topo = single_link();
        // 15 000 bytes = 120 µs at 1 Gb/s
        let err = cnc_admit(&req("A", 100, 15_000, 500), &topo, [], 0).unwrap_err();
        assert_eq!(err.reason, RejectionReason::FrameExceedsPeriod);
    }

    #[test]
    fn eleventh_stream_hits_capacity() {
        let topo = single_link();
        let mut cnc = Cnc::new();
        for i in 0..10 {
            cnc.admit(&req(&format!("s{i}"), 100, 1_250, 200), &topo, 0, &BTreeSet::new()).unwrap();
        }
        let err = cnc.admit(&req("s10", 100, 1_250, 200), &topo, 0, &BTreeSet::new()).unwrap_err();
        assert_eq!(err.reason, RejectionReason::CapacityExceeded);
    }

    #[test]
    fn release_frees_windows() {
        let topo = single_link();
        let mut cnc = Cnc::new();
        let first = cnc.admit(&req("A", 100, 1_250, 50), &topo, 0, &BTreeSet::new()).unwrap().windows.clone();
        cnc.release_stream(&"A".into()).unwrap();
        let again = cnc.admit(&req("A2", 100, 1_250, 50), &topo, 0, &BTreeSet::new()).unwrap();
        assert_eq!(again.windows, first);
        assert!(cnc.release_stream(&"A".into()).is_err());
        cnc.release_stream(&"A2".into()).unwrap();
        assert_eq!(cnc.release_stream(&"A2".into()), Err(UnknownStream("A2".into())));
    }

    #[test]
    fn utilization_arithmetic() {
        let topo = single_link();
        assert_eq!(link_utilization(&"l0".into(), &topo, []).unwrap(), 0.0);
        let a = cnc_admit(&req("A", 100, 1_250, 50), &topo, [], 0).unwrap();
        assert!((link_utilization(&"l0".into(), &topo, [&a]).unwrap() - 0.1).abs() < 1e-12);
        assert!(link_utilization(&"zz".into(), &topo, [&a]).is_err());
    }

    #[test]
    fn collision_rule_matches_expansion() {
        for (o1, d1, p1, o2, d2, p2) in
            [(0, 10, 100, 10, 10, 100), (0, 10, 100, 5, 10, 100), (0, 10, 100, 95, 10, 200), (30, 5, 50, 80, 5, 100)]
        {
            let h = p1.lcm(&p2);
            let mut brute = false;
            for a in (0..h).step_by(p1 as usize) {
                for b in (0..h).step_by(p2 as usize) {
                    if a + o1 < b + o2 + d2 && b + o2 < a + o1 + d1 {
                        brute = true;
                    }
                }
            }
            assert_eq!(windows_collide(o1, d1, p1, o2, d2, p2), brute, "{o1} {d1} {p1} {o2} {d2} {p2}");
        }
    }

    #[test]
    fn busy_second_hop_delays_arrival() {
        let n = |id: &str| Node { id: id.into(), kind: NodeKind::TsnBridge, domain: Domain::Tsn };
        let topo = Topology::new(NetworkGraph {
            nodes: vec![n("t"), n("m"), n("l")],
            links: vec![
                Link::new("a", "t", "m", 1_000_000_000, 0, Domain::Tsn),
                Link::new("b", "m", "l", 1_000_000_000, 0, Domain::Tsn),
            ],
        });
        let blocker = StreamRequest {
            stream_id: "x".into(),
            talker: "m".into(),
            listeners: vec!["l".into()],
            period_us: 100,
            frame_bytes: 5_000, // 40 µs
            max_e2e_latency_us: 100,
            priority: 0,
        };
        let x = cnc_admit(&blocker, &topo, [], 0).unwrap();
        let mut r = req("s", 100, 1_250, 50);
        let s = cnc_admit(&r, &topo, [&x], 0).unwrap();
        assert_eq!(s.window_on(&"a".into()).unwrap().offset_us, 0);
        assert_eq!(s.window_on(&"b".into()).unwrap().offset_us, 40);
        assert_eq!(s.e2e_latency_us[&NodeId::from("l")], 50);
        r.max_e2e_latency_us = 49;
        assert_eq!(cnc_admit(&r, &topo, [&x], 0).unwrap_err().reason, RejectionReason::LatencyExceeded);
    }

    #[test]
    fn cuc_registration_rules() {
        let mut cuc = Cuc::new();
        let scope = Scope::from([SystemId::cuc()]);
        let d: DeviceId = "d".into();
        let t = TsnTransmissionType::EndToEnd;
        assert_eq!(
            cuc.cuc_register(&d, t, RegistrationState::Configured, true, &scope, true),
            Ok(CucOutcome::Registered(t))
        );
        assert_eq!(
            cuc.cuc_register(&d, t, RegistrationState::Configured, true, &Scope::new(), true),
            Ok(CucOutcome::Rejected(CucRejectReason::ScopeMissing))
        );
        assert_eq!(
            cuc.cuc_register(&d, t, RegistrationState::Configured, true, &scope, false),
            Ok(CucOutcome::Rejected(CucRejectReason::CncUnreachable))
        );
        assert!(cuc.cuc_register(&d, t, RegistrationState::Configured, false, &scope, true).is_err());
        assert!(cuc.cuc_register(&d, t, RegistrationState::Authorized, true, &scope, true).is_err());
    }
}
