//! Heterogeneous knowledge graph built from a [`Corpus`], plus
//! importance-weighted neighborhood sampling via random walks with restart.
//!
//! The graph is immutable after [`build_graph`]; lookups and sampling are
//! read-only and safe to call concurrently. Nodes are stored sorted by
//! (kind, key) so that indices, neighbor order and exports are independent of
//! record order.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ingest::Corpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Engineer,
    Incident,
    Kba,
    Component,
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Engineer => "engineer",
            NodeKind::Incident => "incident",
            NodeKind::Kba => "kba",
            NodeKind::Component => "component",
        }
    }
}

/// Typed node identity: (kind, source record key).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub kind: NodeKind,
    pub key: String,
}

impl NodeId {
    pub fn new(kind: NodeKind, key: impl Into<String>) -> Self {
        NodeId { kind, key: key.into() }
    }
    pub fn engineer(key: impl Into<String>) -> Self {
        Self::new(NodeKind::Engineer, key)
    }
    pub fn incident(key: impl Into<String>) -> Self {
        Self::new(NodeKind::Incident, key)
    }
    pub fn kba(key: impl Into<String>) -> Self {
        Self::new(NodeKind::Kba, key)
    }
    pub fn component(key: impl Into<String>) -> Self {
        Self::new(NodeKind::Component, key)
    }

    /// Stable text label, `kind:key`, used in exports and vector files.
    pub fn label(&self) -> String {
        format!("{}:{}", self.kind.name(), self.key)
    }

    /// Parse a `kind:key` label.
    pub fn parse_label(label: &str) -> Result<NodeId> {
        let (kind, key) = label
            .split_once(':')
            .ok_or_else(|| Error::data(format!("node label without ':': {label:?}")))?;
        let kind = match kind {
            "engineer" => NodeKind::Engineer,
            "incident" => NodeKind::Incident,
            "kba" => NodeKind::Kba,
            "component" => NodeKind::Component,
            other => return Err(Error::data(format!("unknown node kind {other:?}"))),
        };
        Ok(NodeId::new(kind, key))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.name(), self.key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeType {
    /// Engineer – Incident, the incident's final processor.
    Resolved,
    /// Engineer – Incident, non-final processors.
    Participated,
    /// Engineer – KBA, responsible or processor.
    Authored,
    /// Engineer – Engineer, co-membership in a swarm or co-processing.
    SwarmedWith,
    /// Incident – Component and KBA – Component.
    Tagged,
    /// KBA – Incident, via swarm kba_ids.
    Documents,
}

impl EdgeType {
    pub const ALL: [EdgeType; 6] = [
        EdgeType::Resolved,
        EdgeType::Participated,
        EdgeType::Authored,
        EdgeType::SwarmedWith,
        EdgeType::Tagged,
        EdgeType::Documents,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::Resolved => "RESOLVED",
            EdgeType::Participated => "PARTICIPATED",
            EdgeType::Authored => "AUTHORED",
            EdgeType::SwarmedWith => "SWARMED_WITH",
            EdgeType::Tagged => "TAGGED",
            EdgeType::Documents => "DOCUMENTS",
        }
    }

    fn slot(self) -> usize {
        match self {
            EdgeType::Resolved => 0,
            EdgeType::Participated => 1,
            EdgeType::Authored => 2,
            EdgeType::SwarmedWith => 3,
            EdgeType::Tagged => 4,
            EdgeType::Documents => 5,
        }
    }
}

/// Which edge derivation rules are active. All on by default; individual
/// types can be switched off to study graph density.
#[derive(Debug, Clone, Copy)]
pub struct EdgeToggles {
    pub resolved: bool,
    pub participated: bool,
    pub authored: bool,
    pub swarmed_with: bool,
    pub tagged: bool,
    pub documents: bool,
}

impl Default for EdgeToggles {
    fn default() -> Self {
        EdgeToggles {
            resolved: true,
            participated: true,
            authored: true,
            swarmed_with: true,
            tagged: true,
            documents: true,
        }
    }
}

impl EdgeToggles {
    fn enabled(&self, t: EdgeType) -> bool {
        match t {
            EdgeType::Resolved => self.resolved,
            EdgeType::Participated => self.participated,
            EdgeType::Authored => self.authored,
            EdgeType::SwarmedWith => self.swarmed_with,
            EdgeType::Tagged => self.tagged,
            EdgeType::Documents => self.documents,
        }
    }
}

/// Random-walk sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkConfig {
    /// Walks started per source node.
    pub walk_count: usize,
    /// Steps per walk.
    pub walk_length: usize,
    /// Probability of restarting at the source on each step.
    pub restart_prob: f64,
    /// Top visited neighbors retained.
    pub neighborhood_size: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walk_count: 100,
            walk_length: 3,
            restart_prob: 0.5,
            neighborhood_size: 10,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walk_count == 0 || self.walk_length == 0 || self.neighborhood_size == 0 {
            return Err(Error::config(
                "walk_count, walk_length and neighborhood_size must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.restart_prob) {
            return Err(Error::config(format!(
                "restart_prob {} outside [0, 1]",
                self.restart_prob
            )));
        }
        Ok(())
    }
}

/// Immutable typed-node / typed-edge undirected adjacency structure.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    nodes: Vec<NodeId>,
    index: HashMap<NodeId, u32>,
    /// Per edge type, adjacency lists of node indices, sorted ascending.
    typed_adj: [Vec<Vec<u32>>; 6],
    /// Union of all types, sorted, deduplicated.
    merged_adj: Vec<Vec<u32>>,
}

impl HeteroGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn node_index(&self, node: &NodeId) -> Option<u32> {
        self.index.get(node).copied()
    }

    pub fn node_at(&self, idx: u32) -> &NodeId {
        &self.nodes[idx as usize]
    }

    pub fn nodes_of_kind(&self, kind: NodeKind) -> impl Iterator<Item = &NodeId> {
        self.nodes.iter().filter(move |n| n.kind == kind)
    }

    /// Merged-adjacency neighbor indices of `idx`, sorted ascending.
    pub fn neighbor_indices(&self, idx: u32) -> &[u32] {
        &self.merged_adj[idx as usize]
    }

    /// Neighbor indices of `idx` through one edge type, sorted ascending.
    pub fn typed_neighbor_indices(&self, idx: u32, edge_type: EdgeType) -> &[u32] {
        &self.typed_adj[edge_type.slot()][idx as usize]
    }

    /// Neighbors of `node`, optionally filtered to one edge type, sorted by
    /// (kind, key). Unknown nodes are an error, distinct from an empty list.
    pub fn neighbors(&self, node: &NodeId, edge_type: Option<EdgeType>) -> Result<Vec<NodeId>> {
        let idx = self
            .node_index(node)
            .ok_or_else(|| Error::UnknownNode(node.to_string()))?;
        let list = match edge_type {
            Some(t) => &self.typed_adj[t.slot()][idx as usize],
            None => &self.merged_adj[idx as usize],
        };
        Ok(list.iter().map(|&n| self.nodes[n as usize].clone()).collect())
    }

    /// Run `walk_count` restart walks from `node` and return the
    /// `neighborhood_size` most-visited other nodes with visit weights
    /// normalized to sum to 1. Ties are broken by node key.
    pub fn sample_importance_neighborhood(
        &self,
        node: &NodeId,
        config: &WalkConfig,
        rng: &mut impl Rng,
    ) -> Result<Vec<(NodeId, f64)>> {
        let idx = self
            .node_index(node)
            .ok_or_else(|| Error::UnknownNode(node.to_string()))?;
        Ok(self
            .sample_neighborhood_idx(idx, config, rng)
            .into_iter()
            .map(|(n, w)| (self.nodes[n as usize].clone(), w))
            .collect())
    }

    /// Index-level sampler used by the embedding layers.
    pub fn sample_neighborhood_idx(
        &self,
        source: u32,
        config: &WalkConfig,
        rng: &mut impl Rng,
    ) -> Vec<(u32, f64)> {
        sample_neighborhood_on(|v| self.neighbor_indices(v), source, config, rng)
    }

    /// Node counts per kind, edge counts per type and the merged degree
    /// histogram.
    pub fn stats(&self) -> GraphStats {
        let mut nodes_per_kind = [0usize; 4];
        for n in &self.nodes {
            let slot = match n.kind {
                NodeKind::Engineer => 0,
                NodeKind::Incident => 1,
                NodeKind::Kba => 2,
                NodeKind::Component => 3,
            };
            nodes_per_kind[slot] += 1;
        }
        let mut edges_per_type = [0usize; 6];
        for t in EdgeType::ALL {
            edges_per_type[t.slot()] =
                self.typed_adj[t.slot()].iter().map(|l| l.len()).sum::<usize>() / 2;
        }
        let mut degree_histogram = std::collections::BTreeMap::new();
        for list in &self.merged_adj {
            *degree_histogram.entry(list.len()).or_insert(0usize) += 1;
        }
        GraphStats {
            nodes_per_kind,
            edges_per_type,
            degree_histogram,
        }
    }

    /// Edge-list export, one line per undirected edge:
    /// `kind:key<TAB>EDGE_TYPE<TAB>kind:key`, lesser endpoint first, sorted.
    pub fn export_edges(&self) -> String {
        let mut lines = Vec::new();
        for t in EdgeType::ALL {
            for (u, list) in self.typed_adj[t.slot()].iter().enumerate() {
                for &v in list {
                    if (u as u32) < v {
                        lines.push(format!(
                            "{}\t{}\t{}",
                            self.nodes[u], t.name(), self.nodes[v as usize]
                        ));
                    }
                }
            }
        }
        lines.sort();
        let mut out = lines.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        out
    }

    pub fn write_edges(&self, path: &Path) -> Result<()> {
        fs::write(path, self.export_edges()).map_err(|e| Error::io(path, e))
    }

    /// Sorted (edge type, endpoint, endpoint) triples; test support.
    pub fn edge_multiset(&self) -> Vec<(EdgeType, NodeId, NodeId)> {
        let mut edges = Vec::new();
        for t in EdgeType::ALL {
            for (u, list) in self.typed_adj[t.slot()].iter().enumerate() {
                for &v in list {
                    if (u as u32) < v {
                        edges.push((
                            t,
                            self.nodes[u].clone(),
                            self.nodes[v as usize].clone(),
                        ));
                    }
                }
            }
        }
        edges.sort();
        edges
    }
}

/// Walk-with-restart sampler over an arbitrary neighbor function. The
/// embedding pipeline reuses this for overlay graphs with a temporary query
/// node.
pub fn sample_neighborhood_on<'a, F>(
    neighbors_of: F,
    source: u32,
    config: &WalkConfig,
    rng: &mut impl Rng,
) -> Vec<(u32, f64)>
where
    F: Fn(u32) -> &'a [u32],
{
    if neighbors_of(source).is_empty() {
        return Vec::new();
    }
    let mut visits: HashMap<u32, u64> = HashMap::new();
    for _ in 0..config.walk_count {
        let mut current = source;
        for _ in 0..config.walk_length {
            if rng.gen::<f64>() < config.restart_prob {
                current = source;
                continue;
            }
            let neighbors = neighbors_of(current);
            if neighbors.is_empty() {
                break;
            }
            current = neighbors[rng.gen_range(0..neighbors.len())];
            if current != source {
                *visits.entry(current).or_insert(0) += 1;
            }
        }
    }
    let mut counted: Vec<(u32, u64)> = visits.into_iter().collect();
    // Most visited first; ties by node index, which is (kind, key) order.
    counted.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    counted.truncate(config.neighborhood_size);
    let total: u64 = counted.iter().map(|(_, c)| c).sum();
    if total == 0 {
        return Vec::new();
    }
    counted
        .into_iter()
        .map(|(n, c)| (n, c as f64 / total as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphStats {
    /// [engineers, incidents, kbas, components]
    pub nodes_per_kind: [usize; 4],
    /// Indexed by [`EdgeType::slot`] order: RESOLVED, PARTICIPATED, AUTHORED,
    /// SWARMED_WITH, TAGGED, DOCUMENTS.
    pub edges_per_type: [usize; 6],
    pub degree_histogram: std::collections::BTreeMap<usize, usize>,
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "nodes: {} engineers, {} incidents, {} kbas, {} components",
            self.nodes_per_kind[0],
            self.nodes_per_kind[1],
            self.nodes_per_kind[2],
            self.nodes_per_kind[3]
        )?;
        for t in EdgeType::ALL {
            writeln!(f, "edges {}: {}", t.name(), self.edges_per_type[t.slot()])?;
        }
        let max_degree = self.degree_histogram.keys().max().copied().unwrap_or(0);
        let isolated = self.degree_histogram.get(&0).copied().unwrap_or(0);
        write!(f, "degree: max {max_degree}, isolated {isolated}")
    }
}

/// Derive the full edge set from a joined corpus. See [`EdgeType`] for the
/// rules; duplicates collapse and self-loops are dropped.
pub fn build_graph(corpus: &Corpus) -> HeteroGraph {
    build_graph_with(corpus, &EdgeToggles::default())
}

pub fn build_graph_with(corpus: &Corpus, toggles: &EdgeToggles) -> HeteroGraph {
    let mut nodes: Vec<NodeId> = Vec::new();
    nodes.extend(corpus.engineers.iter().map(|e| NodeId::engineer(&e.engineer_id)));
    nodes.extend(corpus.incidents.iter().map(|i| NodeId::incident(&i.incident_id)));
    nodes.extend(corpus.kbas.iter().map(|k| NodeId::kba(&k.kba_id)));
    nodes.extend(corpus.components.iter().map(|c| NodeId::component(&c.component_id)));
    nodes.sort();
    nodes.dedup();

    let index: HashMap<NodeId, u32> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i as u32))
        .collect();
    let at = |node: NodeId| -> u32 { index[&node] };

    let mut edge_sets: [BTreeSet<(u32, u32)>; 6] = Default::default();
    let mut add = |t: EdgeType, a: u32, b: u32| {
        if a != b && toggles.enabled(t) {
            edge_sets[t.slot()].insert((a.min(b), a.max(b)));
        }
    };

    for incident in &corpus.incidents {
        let inc = at(NodeId::incident(&incident.incident_id));
        if let Some(resolver) = Corpus::resolver_of(incident) {
            add(EdgeType::Resolved, at(NodeId::engineer(resolver)), inc);
        }
        let participants = Corpus::participants_of(incident);
        for p in &participants {
            add(EdgeType::Participated, at(NodeId::engineer(*p)), inc);
        }
        // Co-processors of one incident count as having swarmed together.
        let processors: Vec<u32> = incident
            .processor_ids
            .iter()
            .map(|p| at(NodeId::engineer(p)))
            .collect();
        for (i, &a) in processors.iter().enumerate() {
            for &b in &processors[i + 1..] {
                add(EdgeType::SwarmedWith, a, b);
            }
        }
        for c in &incident.component_ids {
            add(EdgeType::Tagged, inc, at(NodeId::component(c)));
        }
    }

    for kba in &corpus.kbas {
        let k = at(NodeId::kba(&kba.kba_id));
        add(EdgeType::Authored, at(NodeId::engineer(&kba.responsible_id)), k);
        for p in &kba.processor_ids {
            add(EdgeType::Authored, at(NodeId::engineer(p)), k);
        }
        add(EdgeType::Tagged, k, at(NodeId::component(&kba.component_id)));
    }

    for swarm in &corpus.swarms {
        let mut members: Vec<u32> = vec![at(NodeId::engineer(&swarm.requestor_id))];
        for r in &swarm.responder_ids {
            let idx = at(NodeId::engineer(r));
            if !members.contains(&idx) {
                members.push(idx);
            }
        }
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                add(EdgeType::SwarmedWith, a, b);
            }
        }
        let inc = at(NodeId::incident(&swarm.incident_id));
        for kba_id in &swarm.kba_ids {
            add(EdgeType::Documents, at(NodeId::kba(kba_id)), inc);
        }
    }

    let n = nodes.len();
    let mut typed_adj: [Vec<Vec<u32>>; 6] = Default::default();
    let mut merged_sets: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
    for t in EdgeType::ALL {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &edge_sets[t.slot()] {
            adj[a as usize].push(b);
            adj[b as usize].push(a);
            merged_sets[a as usize].insert(b);
            merged_sets[b as usize].insert(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        typed_adj[t.slot()] = adj;
    }
    let merged_adj: Vec<Vec<u32>> = merged_sets
        .into_iter()
        .map(|s| s.into_iter().collect())
        .collect();

    HeteroGraph {
        nodes,
        index,
        typed_adj,
        merged_adj,
    }
}
