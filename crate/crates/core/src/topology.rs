//! Indexed view of a [`NetworkGraph`] with minimum-hop routing.
//!
//! Among all minimum-hop paths the router returns the one whose link-id
//! sequence is lexicographically smallest. Prefixes of such paths are
//! themselves lexicographically smallest, so the per-listener paths of one
//! talker always form a tree.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::model::{Link, LinkId, Micros, NetworkGraph, NodeId};

/// One traversal of a link in a given direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Hop {
    pub link: usize,
    pub from: usize,
    pub to: usize,
}

const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct Topology {
    graph: NetworkGraph,
    node_index: BTreeMap<NodeId, usize>,
    link_index: BTreeMap<LinkId, usize>,
    /// Per node: (link, neighbour), sorted by link id.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Topology {
    /// Builds the index. Links with unknown endpoints are ignored; callers
    /// validate the graph first.
    pub fn new(graph: NetworkGraph) -> Self {
        let node_index: BTreeMap<NodeId, usize> =
            graph.nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        let link_index: BTreeMap<LinkId, usize> =
            graph.links.iter().enumerate().map(|(i, l)| (l.link_id.clone(), i)).collect();
        let mut adjacency = vec![Vec::new(); graph.nodes.len()];
        for (li, l) in graph.links.iter().enumerate() {
            let (Some(&a), Some(&b)) = (node_index.get(&l.endpoints.0), node_index.get(&l.endpoints.1)) else {
                continue;
            };
            adjacency[a].push((li, b));
            if a != b {
                adjacency[b].push((li, a));
            }
        }
        for adj in &mut adjacency {
            adj.sort_by(|x, y| graph.links[x.0].link_id.cmp(&graph.links[y.0].link_id));
        }
        Topology { graph, node_index, link_index, adjacency }
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn node_idx(&self, id: &NodeId) -> Option<usize> {
        self.node_index.get(id).copied()
    }

    pub fn link_idx(&self, id: &LinkId) -> Option<usize> {
        self.link_index.get(id).copied()
    }

    pub fn node_id(&self, idx: usize) -> &NodeId {
        &self.graph.nodes[idx].id
    }

    pub fn link(&self, idx: usize) -> &Link {
        &self.graph.links[idx]
    }

    pub fn link_id(&self, idx: usize) -> &LinkId {
        &self.graph.links[idx].link_id
    }

    /// Hop distances to `target`, skipping links in `excluded`.
    pub fn distances_to(&self, target: usize, excluded: &BTreeSet<usize>) -> Vec<u32> {
        let mut dist = vec![UNREACHABLE; self.graph.nodes.len()];
        let mut queue = VecDeque::new();
        dist[target] = 0;
        queue.push_back(target);
        while let Some(u) = queue.pop_front() {
            for &(li, v) in &self.adjacency[u] {
                if excluded.contains(&li) || dist[v] != UNREACHABLE {
                    continue;
                }
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
        dist
    }

    /// Walks from `src` along `dist` (distances to the destination), always
    /// taking the smallest link id that stays on a shortest path.
    pub fn walk(&self, src: usize, dist: &[u32], excluded: &BTreeSet<usize>) -> Option<Vec<Hop>> {
        if dist[src] == UNREACHABLE {
            return None;
        }
        let mut hops = Vec::with_capacity(dist[src] as usize);
        let mut u = src;
        while dist[u] != 0 {
            let &(li, v) =
                self.adjacency[u].iter().find(|&&(li, v)| !excluded.contains(&li) && dist[v] + 1 == dist[u])?;
            hops.push(Hop { link: li, from: u, to: v });
            u = v;
        }
        Some(hops)
    }

    /// Minimum-hop, lexicographically smallest path from `src` to `dst`.
    pub fn shortest_path(&self, src: usize, dst: usize, excluded: &BTreeSet<usize>) -> Option<Vec<Hop>> {
        let dist = self.distances_to(dst, excluded);
        self.walk(src, &dist, excluded)
    }

    pub fn path_between(&self, src: &NodeId, dst: &NodeId) -> Option<Vec<Hop>> {
        self.shortest_path(self.node_idx(src)?, self.node_idx(dst)?, &BTreeSet::new())
    }

    pub fn hop_delay(&self, hop: Hop) -> Micros {
        self.link(hop.link).delay_from(self.node_id(hop.from))
    }

    /// Σ per hop of propagation delay plus serialization time (each rounded up).
    pub fn transit_time(&self, hops: &[Hop], frame_bits: u64) -> Micros {
        hops.iter().map(|&h| self.hop_delay(h) + self.link(h.link).transmission_us(frame_bits)).sum()
    }

    pub fn link_ids(&self, hops: &[Hop]) -> Vec<LinkId> {
        hops.iter().map(|h| self.link_id(h.link).clone()).collect()
    }

    /// Converts a list of link ids starting at `from` into hops.
    pub fn hops_along(&self, from: &NodeId, links: &[LinkId]) -> Option<Vec<Hop>> {
        let mut at = self.node_idx(from)?;
        let mut out = Vec::with_capacity(links.len());
        for id in links {
            let li = self.link_idx(id)?;
            let &(_, to) = self.adjacency[at].iter().find(|(l, _)| *l == li)?;
            out.push(Hop { link: li, from: at, to });
            at = to;
        }
        Some(out)
    }
}
