//! Inductive ranking: embed a new incident by attaching it to the graph as a
//! temporary node with component edges only, optionally fuse current-swarm
//! context, and score every indexed engineer by cosine similarity.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::featurize::{query_feature_vector, ComponentEncoder, NodeFeatures, Vocabulary};
use crate::gnn::{
    embed_plan, sample_view_neighborhood, BaseView, EmbedPlan, Embedding, GnnModel, GraphView,
    NeighborhoodCache,
};
use crate::kgraph::{HeteroGraph, NodeId, WalkConfig};

/// An incoming incident: the fields knowable before anyone resolves it, plus
/// the engineers already swarming on it (possibly none).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub incident_id: String,
    pub description: String,
    pub communication: String,
    pub component_ids: Vec<String>,
    pub current_swarm: Vec<String>,
}

impl Query {
    pub fn text(&self) -> String {
        format!("{} {}", self.description, self.communication)
    }
}

/// On-disk query record: the incident schema plus an optional current_swarm
/// list. One JSON object.
#[derive(Debug, Deserialize)]
struct QueryRecord {
    incident_id: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    communication_summary: String,
    #[serde(default)]
    component_ids: Vec<String>,
    #[serde(default)]
    current_swarm: Vec<String>,
}

pub fn load_query(path: &Path) -> Result<Query> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let record: QueryRecord = serde_json::from_str(text.trim())
        .map_err(|e| Error::data(format!("{}: bad query record: {e}", path.display())))?;
    Ok(Query {
        incident_id: record.incident_id,
        description: record.description,
        communication: record.communication_summary,
        component_ids: record.component_ids,
        current_swarm: record.current_swarm,
    })
}

/// Descending-score list of engineers with deterministic tie-breaking by
/// ascending id. Contains every indexed engineer exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    entries: Vec<(String, f64)>,
}

impl RankedList {
    /// Sort scored engineers into ranked order.
    pub fn from_scores(mut scores: Vec<(String, f64)>) -> RankedList {
        debug_assert!(scores.iter().all(|(_, s)| s.is_finite()));
        scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        RankedList { entries: scores }
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top_k(&self, k: usize) -> &[(String, f64)] {
        &self.entries[..k.min(self.entries.len())]
    }

    /// Position of an engineer, 1-based.
    pub fn rank_of(&self, engineer_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|(id, _)| id == engineer_id)
            .map(|p| p + 1)
    }

    /// `rank,engineer_id,score` CSV with a header row.
    pub fn to_csv(&self, k: Option<usize>) -> String {
        let mut out = String::from("rank,engineer_id,score\n");
        let limit = k.unwrap_or(self.entries.len());
        for (i, (id, score)) in self.entries.iter().take(limit).enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, id, score));
        }
        out
    }
}

/// engineer id -> unit-norm embedding for all retained engineers, stamped
/// with the parameter hash of the checkpoint that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineerIndex {
    pub embeddings: BTreeMap<String, Embedding>,
    pub model_hash: String,
}

impl EngineerIndex {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("# engineer index v1\n# model_hash = {}\n", self.model_hash);
        for (id, emb) in &self.embeddings {
            out.push_str(id);
            out.push('\t');
            let mut first = true;
            for v in emb.values() {
                if !first {
                    out.push(' ');
                }
                out.push_str(&format!("{v}"));
                first = false;
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<EngineerIndex> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut model_hash = String::new();
        let mut embeddings = BTreeMap::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once('=') {
                    if k.trim() == "model_hash" {
                        model_hash = v.trim().to_string();
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (id, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::data(format!("index line without tab: {line:?}")))?;
            let values: Vec<f64> = rest
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::data(format!("index vector for {id}: {e}")))?;
            embeddings.insert(id.to_string(), Embedding(values));
        }
        Ok(EngineerIndex { embeddings, model_hash })
    }
}

/// Embed every engineer node with a fixed seed.
pub fn build_engineer_index(
    model: &GnnModel,
    graph: &HeteroGraph,
    features: &NodeFeatures,
    walk_config: &WalkConfig,
    seed: u64,
    cache: Option<&NeighborhoodCache>,
) -> Result<EngineerIndex> {
    let engineers: Vec<NodeId> = graph
        .nodes_of_kind(crate::kgraph::NodeKind::Engineer)
        .cloned()
        .collect();
    let embedded =
        crate::gnn::embed_nodes(model, graph, features, &engineers, walk_config, seed, cache)?;
    let embeddings = embedded
        .into_iter()
        .map(|(node, emb)| (node.key, emb))
        .collect();
    Ok(EngineerIndex { embeddings, model_hash: model.param_hash() })
}

/// Base graph plus one temporary incident node attached through TAGGED
/// component edges. The base graph itself is never modified; if the query id
/// already names a graph node, that node's adjacency is replaced by the
/// component edges for the duration of the view.
pub struct QueryOverlay<'a> {
    base: BaseView<'a>,
    query_idx: u32,
    query_label: String,
    query_adj: Vec<u32>,
    patched: HashMap<u32, Vec<u32>>,
    query_features: Vec<f64>,
}

impl<'a> QueryOverlay<'a> {
    pub fn new(
        graph: &'a HeteroGraph,
        features: &'a NodeFeatures,
        query: &Query,
        query_features: Vec<f64>,
    ) -> QueryOverlay<'a> {
        let node = NodeId::incident(&query.incident_id);
        let query_idx = graph
            .node_index(&node)
            .unwrap_or(graph.node_count() as u32);
        let mut query_adj: Vec<u32> = query
            .component_ids
            .iter()
            .filter_map(|c| graph.node_index(&NodeId::component(c)))
            .collect();
        query_adj.sort_unstable();
        query_adj.dedup();
        let mut patched = HashMap::new();
        for &c in &query_adj {
            let mut list = graph.neighbor_indices(c).to_vec();
            if let Err(pos) = list.binary_search(&query_idx) {
                list.insert(pos, query_idx);
            }
            patched.insert(c, list);
        }
        QueryOverlay {
            base: BaseView { graph, features },
            query_idx,
            query_label: node.label(),
            query_adj,
            patched,
            query_features,
        }
    }

    pub fn query_idx(&self) -> u32 {
        self.query_idx
    }
}

impl GraphView for QueryOverlay<'_> {
    fn neighbor_slice(&self, idx: u32) -> &[u32] {
        if idx == self.query_idx {
            &self.query_adj
        } else if let Some(list) = self.patched.get(&idx) {
            list
        } else {
            self.base.neighbor_slice(idx)
        }
    }

    fn node_label(&self, idx: u32) -> String {
        if idx == self.query_idx {
            self.query_label.clone()
        } else {
            self.base.node_label(idx)
        }
    }

    fn feature_of(&self, idx: u32) -> Option<&[f64]> {
        if idx == self.query_idx {
            Some(&self.query_features)
        } else {
            self.base.feature_of(idx)
        }
    }
}

/// Inductively embed an incident query. Returns the embedding and a degraded
/// flag set when the query had neither in-vocabulary text nor known
/// components.
pub fn embed_incident(
    model: &GnnModel,
    graph: &HeteroGraph,
    features: &NodeFeatures,
    vocab: &Vocabulary,
    encoder: &ComponentEncoder,
    query: &Query,
    walk_config: &WalkConfig,
    seed: u64,
) -> Result<(Embedding, bool)> {
    let vector = query_feature_vector(
        vocab,
        encoder,
        features.p,
        seed,
        &query.text(),
        &query.component_ids,
    );
    let degraded = vector[..features.p + features.c].iter().all(|x| *x == 0.0);
    if degraded {
        log::warn!(
            "query {}: no in-vocabulary text and no known components; low-confidence result",
            query.incident_id
        );
    }
    let overlay = QueryOverlay::new(graph, features, query, vector);
    let target = overlay.query_idx();
    let plan = EmbedPlan::build(&[target], model.dims.layers, |idx| {
        sample_view_neighborhood(&overlay, idx, walk_config, seed)
    });
    let embeddings = embed_plan(model, &plan, &overlay)?;
    Ok((embeddings.into_iter().next().unwrap(), degraded))
}

/// `normalize(lambda * incident + (1 - lambda) * mean(swarm))`. An empty
/// swarm returns the incident embedding unchanged; a zero resultant falls
/// back to the incident embedding with a warning.
pub fn combine_with_swarm(
    incident_emb: &Embedding,
    swarm_embs: &[Embedding],
    lambda: f64,
) -> Result<Embedding> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!("lambda {lambda} outside [0, 1]")));
    }
    if swarm_embs.is_empty() {
        return Ok(incident_emb.clone());
    }
    let d = incident_emb.values().len();
    let mut mean = vec![0.0; d];
    for emb in swarm_embs {
        for (m, v) in mean.iter_mut().zip(emb.values()) {
            *m += v;
        }
    }
    let inv = 1.0 / swarm_embs.len() as f64;
    let mut combined: Vec<f64> = incident_emb
        .values()
        .iter()
        .zip(&mean)
        .map(|(inc, m)| lambda * inc + (1.0 - lambda) * m * inv)
        .collect();
    let norm = combined.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        log::warn!("swarm fusion produced a zero vector; falling back to the incident embedding");
        return Ok(incident_emb.clone());
    }
    for x in &mut combined {
        *x /= norm;
    }
    Ok(Embedding(combined))
}

/// Score every indexed engineer against the query embedding (dot product of
/// unit vectors), drop the excluded set, and sort with the deterministic
/// tie-break.
pub fn rank_engineers(
    query_emb: &Embedding,
    index: &EngineerIndex,
    exclude: &BTreeSet<String>,
) -> RankedList {
    let scores: Vec<(String, f64)> = index
        .embeddings
        .iter()
        .filter(|(id, _)| !exclude.contains(*id))
        .map(|(id, emb)| (id.clone(), query_emb.dot(emb)))
        .collect();
    RankedList::from_scores(scores)
}

/// The trained ranker: embeds a query inductively, fuses current-swarm
/// embeddings, and ranks all engineers outside the swarm.
pub struct GnnRanker<'a> {
    pub model: &'a GnnModel,
    pub graph: &'a HeteroGraph,
    pub features: &'a NodeFeatures,
    pub vocab: &'a Vocabulary,
    pub encoder: &'a ComponentEncoder,
    pub index: &'a EngineerIndex,
    pub walk_config: WalkConfig,
    pub seed: u64,
    pub lambda: f64,
}

impl GnnRanker<'_> {
    pub fn rank_query(&self, query: &Query) -> Result<RankedList> {
        let (incident_emb, _degraded) = embed_incident(
            self.model,
            self.graph,
            self.features,
            self.vocab,
            self.encoder,
            query,
            &self.walk_config,
            self.seed,
        )?;
        let swarm_embs: Vec<Embedding> = query
            .current_swarm
            .iter()
            .filter_map(|id| self.index.embeddings.get(id).cloned())
            .collect();
        let fused = combine_with_swarm(&incident_emb, &swarm_embs, self.lambda)?;
        let exclude: BTreeSet<String> = query.current_swarm.iter().cloned().collect();
        Ok(rank_engineers(&fused, self.index, &exclude))
    }
}
