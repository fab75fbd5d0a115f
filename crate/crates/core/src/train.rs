//! Triplet construction from historical resolutions and swarms, minibatch
//! gradient descent on the triplet loss with negative sampling, and best-
//! checkpoint selection by validation hit ratio.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::evalbench::{build_cases, evaluate, EvalCase};
use crate::featurize::{ComponentEncoder, NodeFeatures, Vocabulary};
use crate::gnn::{
    forward_backward, gradient_check, sample_view_neighborhood, BaseView, EmbedPlan, GnnDims,
    GnnModel, GraphView, NeighborhoodCache,
};
use crate::ingest::Corpus;
use crate::kgraph::{EdgeType, HeteroGraph, NodeId, WalkConfig};
use crate::rank::{build_engineer_index, GnnRanker};
use crate::util::keyed_rng;

/// A contrastive training example: the query incident, an engineer who truly
/// handled it, and one who did not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub query: NodeId,
    pub positive: NodeId,
    pub negative: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Hinge margin.
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    /// Fraction of negatives drawn from engineers sharing a component with
    /// the incident.
    pub hard_negative_fraction: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Validation hit@k cutoff.
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 0.2,
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 128,
            negatives_per_positive: 5,
            hard_negative_fraction: 0.5,
            seed: 42,
            patience: 5,
            eval_k: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin <= 0.0 {
            return Err(Error::config("train.margin must be positive"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("train.learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.negatives_per_positive == 0 || self.eval_k == 0 {
            return Err(Error::config(
                "train.batch_size, train.negatives_per_positive and train.eval_k must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.hard_negative_fraction) {
            return Err(Error::config(format!(
                "train.hard_negative_fraction {} outside [0, 1]",
                self.hard_negative_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_hit: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// `epoch,loss,val_hit,seconds` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_hit,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.mean_loss, e.val_hit, e.seconds
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn best_val_hit(&self) -> f64 {
        self.epochs.iter().map(|e| e.val_hit).fold(0.0, f64::max)
    }
}

/// Positive pairs for an incident: the final resolver plus every swarm
/// responder, deduplicated.
fn positive_sets(train: &Corpus) -> BTreeMap<String, BTreeSet<String>> {
    let engineer_ids: BTreeSet<&str> = train
        .engineers
        .iter()
        .map(|e| e.engineer_id.as_str())
        .collect();
    let mut positives: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for incident in &train.incidents {
        let mut set = BTreeSet::new();
        if let Some(resolver) = Corpus::resolver_of(incident) {
            if engineer_ids.contains(resolver) {
                set.insert(resolver.to_string());
            }
        }
        if let Some(swarm_indices) = train.swarms_of.get(&incident.incident_id) {
            for &idx in swarm_indices {
                for responder in &train.swarms[idx].responder_ids {
                    if engineer_ids.contains(responder.as_str()) {
                        set.insert(responder.clone());
                    }
                }
            }
        }
        if !set.is_empty() {
            positives.insert(incident.incident_id.clone(), set);
        }
    }
    positives
}

/// Construct triplets: one positive pair per (incident, resolver) and per
/// (swarm incident, responder); for each positive,
/// `negatives_per_positive` negatives, a [`TrainConfig::hard_negative_fraction`]
/// share of them from engineers sharing a component with the incident.
/// Deterministic under the config seed, independent of iteration order.
pub fn make_triplets(train: &Corpus, config: &TrainConfig) -> Result<Vec<Triplet>> {
    if train.incidents.is_empty() {
        return Err(Error::data("make_triplets on an empty train split"));
    }
    let engineers: Vec<String> = train.engineer_ids();
    let by_component: BTreeMap<&str, Vec<&str>> = {
        let mut map: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for engineer in &train.engineers {
            for component in engineer.expertise.keys() {
                map.entry(component.as_str())
                    .or_default()
                    .push(engineer.engineer_id.as_str());
            }
        }
        map
    };
    let positives = positive_sets(train);
    let mut triplets = Vec::new();
    for incident in &train.incidents {
        let positive_set = match positives.get(&incident.incident_id) {
            Some(s) => s,
            None => continue,
        };
        if positive_set.len() == engineers.len() {
            log::warn!(
                "incident {}: every engineer is a positive, skipped",
                incident.incident_id
            );
            continue;
        }
        // Engineers declaring expertise in any of the incident's components,
        // minus the positives: the confusable hard-negative pool.
        let hard_pool: Vec<&str> = {
            let mut pool: Vec<&str> = incident
                .component_ids
                .iter()
                .filter_map(|c| by_component.get(c.as_str()))
                .flatten()
                .copied()
                .filter(|e| !positive_set.contains(*e))
                .collect();
            pool.sort_unstable();
            pool.dedup();
            pool
        };
        let easy_pool: Vec<&str> = engineers
            .iter()
            .map(|e| e.as_str())
            .filter(|e| !positive_set.contains(*e))
            .collect();
        let n = config.negatives_per_positive;
        for positive in positive_set {
            let mut rng = keyed_rng(
                config.seed,
                &format!("neg:{}:{}", incident.incident_id, positive),
            );
            let mut used: BTreeSet<&str> = BTreeSet::new();
            for j in 0..n {
                let want_hard =
                    (j as f64 + 0.5) / n as f64 <= config.hard_negative_fraction;
                let pool: &[&str] = if want_hard && !hard_pool.is_empty() {
                    &hard_pool
                } else {
                    &easy_pool
                };
                let mut negative = pool[rng.gen_range(0..pool.len())];
                for _ in 0..10 {
                    if !used.contains(negative) || pool.len() <= used.len() {
                        break;
                    }
                    negative = pool[rng.gen_range(0..pool.len())];
                }
                used.insert(negative);
                triplets.push(Triplet {
                    query: NodeId::incident(&incident.incident_id),
                    positive: NodeId::engineer(positive),
                    negative: NodeId::engineer(negative),
                });
            }
        }
    }
    Ok(triplets)
}

/// Everything the trainer needs besides the model and config.
pub struct TrainContext<'a> {
    pub graph: &'a HeteroGraph,
    pub features: &'a NodeFeatures,
    pub train_corpus: &'a Corpus,
    pub val_corpus: &'a Corpus,
    pub vocab: &'a Vocabulary,
    pub encoder: &'a ComponentEncoder,
    pub walk_config: WalkConfig,
    /// Seed for neighborhood sampling and query embedding; the pipeline
    /// propagates one global seed here.
    pub seed: u64,
    /// When set, the query side of each triplet embeds through a view that
    /// restricts the query incident to its TAGGED component edges, matching
    /// what an incoming incident looks like at inference time. The default
    /// embeds the incident's true graph node with all its edges.
    pub query_inference_parity: bool,
}

/// Graph view that restricts selected incident nodes to their TAGGED edges;
/// every other node keeps its full adjacency.
struct ParityView<'a> {
    base: BaseView<'a>,
    restricted: std::collections::HashMap<u32, Vec<u32>>,
}

impl GraphView for ParityView<'_> {
    fn neighbor_slice(&self, idx: u32) -> &[u32] {
        match self.restricted.get(&idx) {
            Some(list) => list,
            None => self.base.neighbor_slice(idx),
        }
    }
    fn node_label(&self, idx: u32) -> String {
        self.base.node_label(idx)
    }
    fn feature_of(&self, idx: u32) -> Option<&[f64]> {
        self.base.feature_of(idx)
    }
}

/// Epoch loop: shuffled minibatches, plain gradient descent with fixed
/// learning rate, per-epoch validation hit@eval_k through the ranking
/// pathway, early stopping on patience, best checkpoint returned.
///
/// A gradient check on a tiny model guards the run at startup.
pub fn train(
    model: GnnModel,
    ctx: &TrainContext,
    config: &TrainConfig,
) -> Result<(GnnModel, TrainHistory)> {
    config.validate()?;
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok((model, history));
    }

    // Guard: analytic gradients must match finite differences before we
    // spend minutes descending them.
    let check_dims = GnnDims {
        input_dim: 6,
        layers: model.dims.layers.min(2),
        d_msg: 4,
        hidden: 5,
        embed_dim: 3,
    };
    let check_err = gradient_check(check_dims, config.seed)?;
    if check_err >= 1e-4 {
        return Err(Error::numeric(format!(
            "startup gradient check failed: max relative error {check_err}"
        )));
    }

    let cache = NeighborhoodCache::sample_all(ctx.graph, &ctx.walk_config, ctx.seed);
    let triplets = make_triplets(ctx.train_corpus, config)?;
    if triplets.is_empty() {
        return Err(Error::data("no training triplets could be constructed"));
    }
    log::info!("training on {} triplets", triplets.len());
    let indexed: Vec<(u32, u32, u32)> = {
        let mut out = Vec::with_capacity(triplets.len());
        for t in &triplets {
            let q = ctx
                .graph
                .node_index(&t.query)
                .ok_or_else(|| Error::UnknownNode(t.query.to_string()))?;
            let p = ctx
                .graph
                .node_index(&t.positive)
                .ok_or_else(|| Error::UnknownNode(t.positive.to_string()))?;
            let n = ctx
                .graph
                .node_index(&t.negative)
                .ok_or_else(|| Error::UnknownNode(t.negative.to_string()))?;
            out.push((q, p, n));
        }
        out
    };
    let val_cases: Vec<EvalCase> = build_cases(ctx.val_corpus);

    let mut model = model;
    let mut best_model = model.clone();
    let mut best_hit = f64::NEG_INFINITY;
    let mut epochs_since_improvement = 0usize;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..indexed.len()).collect();
        let mut rng = keyed_rng(config.seed, &format!("epoch-shuffle:{epoch}"));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch_indices in order.chunks(config.batch_size) {
            let batch: Vec<(u32, u32, u32)> =
                batch_indices.iter().map(|&i| indexed[i]).collect();
            let targets: Vec<u32> = {
                let mut t: Vec<u32> = batch
                    .iter()
                    .flat_map(|&(q, p, n)| [q, p, n])
                    .collect();
                t.sort_unstable();
                t.dedup();
                t
            };
            let (loss, grads) = if ctx.query_inference_parity {
                let mut restricted = std::collections::HashMap::new();
                for &(q, _, _) in &batch {
                    restricted.entry(q).or_insert_with(|| {
                        ctx.graph.typed_neighbor_indices(q, EdgeType::Tagged).to_vec()
                    });
                }
                let view = ParityView {
                    base: BaseView { graph: ctx.graph, features: ctx.features },
                    restricted,
                };
                let plan = EmbedPlan::build(&targets, model.dims.layers, |idx| {
                    if view.restricted.contains_key(&idx) {
                        sample_view_neighborhood(&view, idx, &ctx.walk_config, ctx.seed)
                    } else {
                        cache.map.get(&idx).cloned().unwrap_or_default()
                    }
                });
                forward_backward(&model, &plan, &view, &batch, config.margin)?
            } else {
                let plan = EmbedPlan::build(&targets, model.dims.layers, |idx| {
                    cache.map.get(&idx).cloned().unwrap_or_default()
                });
                let view = BaseView { graph: ctx.graph, features: ctx.features };
                forward_backward(&model, &plan, &view, &batch, config.margin)?
            };
            if !loss.is_finite() {
                let dump: Vec<String> = batch_indices
                    .iter()
                    .take(8)
                    .map(|&i| {
                        format!(
                            "({}, {}, {})",
                            triplets[i].query, triplets[i].positive, triplets[i].negative
                        )
                    })
                    .collect();
                return Err(Error::numeric(format!(
                    "non-finite loss {loss} at epoch {epoch}; offending batch starts {}",
                    dump.join(" ")
                )));
            }
            loss_sum += loss * batch.len() as f64;
            model.apply_gradients(&grads, config.learning_rate);
        }
        let mean_loss = loss_sum / indexed.len() as f64;

        // Validation hit@eval_k through the full ranking pathway.
        let val_hit = if val_cases.is_empty() {
            0.0
        } else {
            let index = build_engineer_index(
                &model,
                ctx.graph,
                ctx.features,
                &ctx.walk_config,
                ctx.seed,
                Some(&cache),
            )?;
            let ranker = GnnRanker {
                model: &model,
                graph: ctx.graph,
                features: ctx.features,
                vocab: ctx.vocab,
                encoder: ctx.encoder,
                index: &index,
                walk_config: ctx.walk_config,
                seed: ctx.seed,
                lambda: 0.5,
            };
            let report = evaluate(
                &RankerAdapter(&ranker),
                &val_cases,
                &[config.eval_k],
                None,
                ctx.seed,
            )?;
            report.hits[0].1
        };

        let seconds = started.elapsed().as_secs_f64();
        history.epochs.push(EpochStats { epoch, mean_loss, val_hit, seconds });
        log::info!(
            "epoch {epoch}: loss {mean_loss:.6}, val hit@{} {val_hit:.4} ({seconds:.1}s)",
            config.eval_k
        );

        if val_hit > best_hit {
            best_hit = val_hit;
            best_model = model.clone();
            epochs_since_improvement = 0;
        } else {
            epochs_since_improvement += 1;
            if epochs_since_improvement >= config.patience {
                log::info!("early stop after {epoch} epochs (patience {})", config.patience);
                break;
            }
        }
    }
    Ok((best_model, history))
}

/// Adapter so the trainer can evaluate the GNN ranker without owning it.
pub struct RankerAdapter<'a, 'b>(pub &'a GnnRanker<'b>);

impl crate::evalbench::Ranker for RankerAdapter<'_, '_> {
    fn name(&self) -> &str {
        "gnn"
    }
    fn rank(&self, case: &EvalCase) -> Result<crate::rank::RankedList> {
        self.0.rank_query(&case.query)
    }
}

/// Per-triplet hinge loss on unit vectors; see the gnn module for the
/// batched version with gradients.
pub fn triplet_loss(
    z_q: &crate::gnn::Embedding,
    z_pos: &crate::gnn::Embedding,
    z_neg: &crate::gnn::Embedding,
    margin: f64,
) -> f64 {
    crate::gnn::triplet_loss(z_q, z_pos, z_neg, margin)
}
