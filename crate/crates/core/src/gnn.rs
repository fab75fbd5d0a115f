//! Importance-pooling graph convolution layers mapping node input features
//! plus sampled neighborhoods to unit-norm embeddings, with exact gradients
//! for the max-margin triplet loss.
//!
//! A layer transforms neighbor representations through `relu(Q h + q)`, pools
//! them by visit weight, concatenates with the self representation and applies
//! `relu(W [self || pooled] + w)` followed by L2 normalization. The final
//! layer is a plain projection (no relu) followed by normalization.
//!
//! Neighborhoods are sampled once per node and reused across layers, so each
//! embedding is a fixed computation graph and gradients of the loss with
//! respect to every parameter are exact (verified against central finite
//! differences by [`gradient_check`]).

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::featurize::NodeFeatures;
use crate::kgraph::{HeteroGraph, NodeId, WalkConfig};
use crate::par::{map_chunks, par_map, par_map_indexed};
use crate::util::keyed_rng;

/// Fixed chunk size for gradient reductions. Chunk boundaries are independent
/// of the worker count, so summation order (and therefore every bit of the
/// result) is reproducible in parallel and sequential builds alike.
const GRAD_CHUNK: usize = 8;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    fn uniform_init(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// out = A x + b
    pub fn matvec_bias(&self, x: &[f64], bias: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            out[r] = dot(self.row(r), x) + bias[r];
        }
    }

    /// out += A^T g
    pub fn transpose_matvec_add(&self, g: &[f64], out: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for r in 0..self.rows {
            let gr = g[r];
            if gr != 0.0 {
                for (o, w) in out.iter_mut().zip(self.row(r)) {
                    *o += w * gr;
                }
            }
        }
    }

    /// self += g (outer) x
    pub fn add_outer(&mut self, g: &[f64], x: &[f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for r in 0..self.rows {
            let gr = g[r];
            if gr != 0.0 {
                let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
                for (w, xv) in row.iter_mut().zip(x) {
                    *w += gr * xv;
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// One convolution layer: neighbor transform `Q, q` and self+pooled
/// transform `W, w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub q_w: Mat,
    pub q_b: Vec<f64>,
    pub w_w: Mat,
    pub w_b: Vec<f64>,
}

/// Layer-stack dimensions: `input_dim -> hidden -> ... -> embed_dim` with
/// `layers` convolutions and message width `d_msg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GnnDims {
    pub input_dim: usize,
    pub layers: usize,
    pub d_msg: usize,
    pub hidden: usize,
    pub embed_dim: usize,
}

impl GnnDims {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 {
            return Err(Error::config("input_dim and embed_dim must be positive"));
        }
        if self.layers > 0 && (self.d_msg == 0 || self.hidden == 0) {
            return Err(Error::config("d_msg and hidden must be positive when layers > 0"));
        }
        Ok(())
    }

    fn layer_in(&self, k: usize) -> usize {
        if k == 0 {
            self.input_dim
        } else {
            self.hidden
        }
    }

    fn proj_in(&self) -> usize {
        if self.layers == 0 {
            self.input_dim
        } else {
            self.hidden
        }
    }
}

/// Full model: convolution layers plus the final projection `G, g`.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub dims: GnnDims,
    pub layers: Vec<LayerParams>,
    pub proj_w: Mat,
    pub proj_b: Vec<f64>,
}

impl GnnModel {
    /// Seeded scaled-uniform initialization, biases zero.
    pub fn init(dims: GnnDims, seed: u64) -> Result<GnnModel> {
        dims.validate()?;
        let mut rng = keyed_rng(seed, "gnn-init");
        let mut layers = Vec::with_capacity(dims.layers);
        for k in 0..dims.layers {
            let d_in = dims.layer_in(k);
            layers.push(LayerParams {
                q_w: Mat::uniform_init(dims.d_msg, d_in, &mut rng),
                q_b: vec![0.0; dims.d_msg],
                w_w: Mat::uniform_init(dims.hidden, d_in + dims.d_msg, &mut rng),
                w_b: vec![0.0; dims.hidden],
            });
        }
        let proj_w = Mat::uniform_init(dims.embed_dim, dims.proj_in(), &mut rng);
        let proj_b = vec![0.0; dims.embed_dim];
        Ok(GnnModel { dims, layers, proj_w, proj_b })
    }

    /// Parameter tensors in declared order, shared with [`Grads`].
    pub fn param_blocks(&self) -> Vec<&[f64]> {
        let mut blocks = Vec::new();
        for layer in &self.layers {
            blocks.push(layer.q_w.data.as_slice());
            blocks.push(layer.q_b.as_slice());
            blocks.push(layer.w_w.data.as_slice());
            blocks.push(layer.w_b.as_slice());
        }
        blocks.push(self.proj_w.data.as_slice());
        blocks.push(self.proj_b.as_slice());
        blocks
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks = Vec::new();
        for layer in &mut self.layers {
            blocks.push(layer.q_w.data.as_mut_slice());
            blocks.push(layer.q_b.as_mut_slice());
            blocks.push(layer.w_w.data.as_mut_slice());
            blocks.push(layer.w_b.as_mut_slice());
        }
        blocks.push(self.proj_w.data.as_mut_slice());
        blocks.push(self.proj_b.as_mut_slice());
        blocks
    }

    pub fn param_count(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum()
    }

    /// Gradient-descent step: params -= lr * grads.
    pub fn apply_gradients(&mut self, grads: &Grads, lr: f64) {
        for (p, g) in self.param_blocks_mut().into_iter().zip(grads.blocks()) {
            for (pv, gv) in p.iter_mut().zip(g) {
                *pv -= lr * gv;
            }
        }
    }

    /// Hash over the serialized parameters; stamps derived artifacts.
    pub fn param_hash(&self) -> String {
        let mut bytes = Vec::with_capacity(self.param_count() * 4);
        for block in self.param_blocks() {
            for v in block {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        crate::util::sha256_hex(&bytes)
    }
}

/// Gradient accumulator with the same block layout as [`GnnModel`].
#[derive(Debug, Clone)]
pub struct Grads {
    blocks: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(model: &GnnModel) -> Grads {
        Grads {
            blocks: model.param_blocks().iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.blocks.iter().map(|b| b.as_slice())
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for block in &mut self.blocks {
            for x in block.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Unit-norm (or flagged zero) embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|x| *x == 0.0)
    }
}

/// Graph view used by embedding: a plain graph or a base graph with one
/// temporary query node attached through component edges.
pub trait GraphView: Sync {
    fn neighbor_slice(&self, idx: u32) -> &[u32];
    fn node_label(&self, idx: u32) -> String;
    fn feature_of(&self, idx: u32) -> Option<&[f64]>;
}

/// The base case: every node's features come from a [`NodeFeatures`] table.
pub struct BaseView<'a> {
    pub graph: &'a HeteroGraph,
    pub features: &'a NodeFeatures,
}

impl GraphView for BaseView<'_> {
    fn neighbor_slice(&self, idx: u32) -> &[u32] {
        self.graph.neighbor_indices(idx)
    }
    fn node_label(&self, idx: u32) -> String {
        self.graph.node_at(idx).label()
    }
    fn feature_of(&self, idx: u32) -> Option<&[f64]> {
        self.features.get(self.graph.node_at(idx)).map(|v| v.as_slice())
    }
}

/// Sampled neighborhoods for a node set, keyed by node index. Sampling a
/// node's neighborhood uses an RNG stream derived from `(seed, node label)`,
/// so the result is independent of sampling order and identical for the same
/// node across calls.
#[derive(Debug, Clone, Default)]
pub struct NeighborhoodCache {
    pub map: HashMap<u32, Vec<(u32, f64)>>,
}

impl NeighborhoodCache {
    /// Sample every node of the graph once.
    pub fn sample_all(graph: &HeteroGraph, config: &WalkConfig, seed: u64) -> NeighborhoodCache {
        let indices: Vec<u32> = (0..graph.node_count() as u32).collect();
        let sampled = par_map(&indices, |&idx| {
            let label = graph.node_at(idx).label();
            let mut rng = keyed_rng(seed, &format!("nbhd:{label}"));
            graph.sample_neighborhood_idx(idx, config, &mut rng)
        });
        NeighborhoodCache {
            map: indices.into_iter().zip(sampled).collect(),
        }
    }
}

/// Sample one node's neighborhood on an arbitrary view with the keyed-stream
/// discipline shared by [`NeighborhoodCache::sample_all`].
pub fn sample_view_neighborhood(
    view: &impl GraphView,
    idx: u32,
    config: &WalkConfig,
    seed: u64,
) -> Vec<(u32, f64)> {
    let label = view.node_label(idx);
    let mut rng = keyed_rng(seed, &format!("nbhd:{label}"));
    crate::kgraph::sample_neighborhood_on(|v| view.neighbor_slice(v), idx, config, &mut rng)
}

/// The fixed computation graph for one embedding call: per-layer node sets,
/// per-node sampled neighborhoods and reverse pooling edges.
pub struct EmbedPlan {
    /// `layer_nodes[k]`: sorted node indices whose layer-k representation is
    /// computed; `layer_nodes[L]` are the targets.
    layer_nodes: Vec<Vec<u32>>,
    /// position of a node inside each `layer_nodes[k]`.
    pos: Vec<HashMap<u32, usize>>,
    /// per layer k >= 1: sorted nodes whose message transform is needed.
    msg_nodes: Vec<Vec<u32>>,
    msg_pos: Vec<HashMap<u32, usize>>,
    /// sampled neighborhood per node index.
    nbhd: HashMap<u32, Vec<(u32, f64)>>,
    /// per layer k >= 1: for each message node, the (pooling node position,
    /// weight) pairs that consume it, in ascending pooler order.
    rev: Vec<Vec<Vec<(usize, f64)>>>,
}

impl EmbedPlan {
    /// Build the plan for `targets` with `layers` convolutions, sampling
    /// neighborhoods through `sampler` (memoized, once per node).
    pub fn build<F>(targets: &[u32], layers: usize, mut sampler: F) -> EmbedPlan
    where
        F: FnMut(u32) -> Vec<(u32, f64)>,
    {
        let mut layer_nodes = vec![Vec::new(); layers + 1];
        let mut top: Vec<u32> = targets.to_vec();
        top.sort_unstable();
        top.dedup();
        layer_nodes[layers] = top;
        let mut nbhd: HashMap<u32, Vec<(u32, f64)>> = HashMap::new();
        for k in (1..=layers).rev() {
            let mut next: Vec<u32> = layer_nodes[k].clone();
            for &v in &layer_nodes[k] {
                let neighborhood = nbhd
                    .entry(v)
                    .or_insert_with(|| sampler(v))
                    .clone();
                next.extend(neighborhood.iter().map(|(u, _)| *u));
            }
            next.sort_unstable();
            next.dedup();
            layer_nodes[k - 1] = next;
        }
        let pos: Vec<HashMap<u32, usize>> = layer_nodes
            .iter()
            .map(|nodes| nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect())
            .collect();
        let mut msg_nodes = Vec::with_capacity(layers);
        let mut msg_pos = Vec::with_capacity(layers);
        let mut rev = Vec::with_capacity(layers);
        for k in 1..=layers {
            let mut needed: Vec<u32> = layer_nodes[k]
                .iter()
                .flat_map(|v| nbhd[v].iter().map(|(u, _)| *u))
                .collect();
            needed.sort_unstable();
            needed.dedup();
            let positions: HashMap<u32, usize> =
                needed.iter().enumerate().map(|(i, &n)| (n, i)).collect();
            let mut reverse = vec![Vec::new(); needed.len()];
            for (v_pos, v) in layer_nodes[k].iter().enumerate() {
                for (u, weight) in &nbhd[v] {
                    reverse[positions[u]].push((v_pos, *weight));
                }
            }
            msg_nodes.push(needed);
            msg_pos.push(positions);
            rev.push(reverse);
        }
        EmbedPlan { layer_nodes, pos, msg_nodes, msg_pos, nbhd, rev }
    }

    pub fn targets(&self) -> &[u32] {
        self.layer_nodes.last().unwrap()
    }

    pub fn base_nodes(&self) -> &[u32] {
        &self.layer_nodes[0]
    }

    pub fn neighborhood(&self, node: u32) -> Option<&[(u32, f64)]> {
        self.nbhd.get(&node).map(|v| v.as_slice())
    }
}

/// Forward tape: everything backward needs, plus kink margins for the
/// finite-difference check.
pub struct ForwardTape {
    /// h[k][i]: layer-k representation of layer_nodes[k][i].
    h: Vec<Vec<Vec<f64>>>,
    /// msg_pre[k-1][j], msg[k-1][j] for msg_nodes[k-1][j].
    msg_pre: Vec<Vec<Vec<f64>>>,
    msg: Vec<Vec<Vec<f64>>>,
    /// conv pre-activation and post-relu norm per layer-k node.
    conv_pre: Vec<Vec<Vec<f64>>>,
    conv_norm: Vec<Vec<f64>>,
    /// final projection pre-normalization norms per target.
    proj_norm: Vec<f64>,
    /// final embeddings per target (same order as plan targets).
    pub embeddings: Vec<Vec<f64>>,
    /// smallest |pre-activation| seen across all relu inputs.
    pub min_abs_pre: f64,
    /// smallest pre-normalization norm seen.
    pub min_norm: f64,
}

/// Single-layer convolve, exposed for direct use and tests. `strict` rejects
/// neighbor weights that do not sum to 1.
pub fn convolve(
    layer: &LayerParams,
    self_vec: &[f64],
    neighbors: &[(&[f64], f64)],
    strict: bool,
) -> Result<Vec<f64>> {
    let d_in = layer.q_w.cols;
    let d_msg = layer.q_w.rows;
    if self_vec.len() != d_in {
        return Err(Error::numeric(format!(
            "convolve: self vector has dim {}, layer expects {d_in}",
            self_vec.len()
        )));
    }
    if strict && !neighbors.is_empty() {
        let total: f64 = neighbors.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::numeric(format!(
                "convolve: neighbor weights sum to {total}, expected 1"
            )));
        }
    }
    let mut pooled = vec![0.0; d_msg];
    let mut msg = vec![0.0; d_msg];
    for (vec, weight) in neighbors {
        if vec.len() != d_in {
            return Err(Error::numeric(format!(
                "convolve: neighbor vector has dim {}, layer expects {d_in}",
                vec.len()
            )));
        }
        layer.q_w.matvec_bias(vec, &layer.q_b, &mut msg);
        for (p, m) in pooled.iter_mut().zip(&msg) {
            *p += weight * m.max(0.0);
        }
    }
    let mut concat = Vec::with_capacity(d_in + d_msg);
    concat.extend_from_slice(self_vec);
    concat.extend_from_slice(&pooled);
    let mut out = vec![0.0; layer.w_w.rows];
    layer.w_w.matvec_bias(&concat, &layer.w_b, &mut out);
    for x in &mut out {
        *x = x.max(0.0);
    }
    let norm = l2_norm(&out);
    if norm > 0.0 {
        for x in &mut out {
            *x /= norm;
        }
    }
    Ok(out)
}

/// Run the full forward pass over a plan, recording the tape.
pub fn forward(model: &GnnModel, plan: &EmbedPlan, view: &impl GraphView) -> Result<ForwardTape> {
    let layers = model.dims.layers;
    let mut h: Vec<Vec<Vec<f64>>> = Vec::with_capacity(layers + 1);
    let base = par_map(plan.base_nodes(), |&idx| {
        view.feature_of(idx).map(|f| f.to_vec())
    });
    let mut h0 = Vec::with_capacity(base.len());
    for (value, &idx) in base.into_iter().zip(plan.base_nodes()) {
        match value {
            Some(v) => h0.push(v),
            None => {
                return Err(Error::numeric(format!(
                    "missing feature vector for node {}",
                    view.node_label(idx)
                )))
            }
        }
    }
    h.push(h0);

    let mut msg_pre_all = Vec::with_capacity(layers);
    let mut msg_all = Vec::with_capacity(layers);
    let mut conv_pre_all = Vec::with_capacity(layers);
    let mut conv_norm_all = Vec::with_capacity(layers);
    let mut min_abs_pre = f64::INFINITY;
    let mut min_norm = f64::INFINITY;

    for k in 1..=layers {
        let layer = &model.layers[k - 1];
        let prev = &h[k - 1];
        let prev_pos = &plan.pos[k - 1];
        // Message transform once per unique pooled node.
        let msg_pairs: Vec<(Vec<f64>, Vec<f64>)> = par_map(&plan.msg_nodes[k - 1], |u| {
            let x = &prev[prev_pos[u]];
            let mut pre = vec![0.0; layer.q_w.rows];
            layer.q_w.matvec_bias(x, &layer.q_b, &mut pre);
            let post: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
            (pre, post)
        });
        let mut msg_pre = Vec::with_capacity(msg_pairs.len());
        let mut msg = Vec::with_capacity(msg_pairs.len());
        for (pre, post) in msg_pairs {
            for v in &pre {
                min_abs_pre = min_abs_pre.min(v.abs());
            }
            msg_pre.push(pre);
            msg.push(post);
        }
        // Convolution per layer-k node.
        let msg_pos = &plan.msg_pos[k - 1];
        let rows: Vec<(Vec<f64>, f64, Vec<f64>)> = par_map(&plan.layer_nodes[k], |v| {
            let self_vec = &prev[prev_pos[v]];
            let d_msg = layer.q_w.rows;
            let mut pooled = vec![0.0; d_msg];
            for (u, weight) in &plan.nbhd[v] {
                let m = &msg[msg_pos[u]];
                for (p, mv) in pooled.iter_mut().zip(m) {
                    *p += weight * mv;
                }
            }
            let mut concat = Vec::with_capacity(self_vec.len() + d_msg);
            concat.extend_from_slice(self_vec);
            concat.extend_from_slice(&pooled);
            let mut pre = vec![0.0; layer.w_w.rows];
            layer.w_w.matvec_bias(&concat, &layer.w_b, &mut pre);
            let post: Vec<f64> = pre.iter().map(|x| x.max(0.0)).collect();
            let norm = l2_norm(&post);
            let out = if norm > 0.0 {
                post.iter().map(|x| x / norm).collect()
            } else {
                post
            };
            (pre, norm, out)
        });
        let mut conv_pre = Vec::with_capacity(rows.len());
        let mut conv_norm = Vec::with_capacity(rows.len());
        let mut hk = Vec::with_capacity(rows.len());
        for (pre, norm, out) in rows {
            for v in &pre {
                min_abs_pre = min_abs_pre.min(v.abs());
            }
            min_norm = min_norm.min(norm);
            conv_pre.push(pre);
            conv_norm.push(norm);
            hk.push(out);
        }
        msg_pre_all.push(msg_pre);
        msg_all.push(msg);
        conv_pre_all.push(conv_pre);
        conv_norm_all.push(conv_norm);
        h.push(hk);
    }

    // Final projection, relu omitted, then normalization.
    let top = &h[layers];
    let top_pos = &plan.pos[layers];
    let projected: Vec<(Vec<f64>, f64, Vec<f64>)> = par_map(plan.targets(), |t| {
        let x = &top[top_pos[t]];
        let mut pre = vec![0.0; model.dims.embed_dim];
        model.proj_w.matvec_bias(x, &model.proj_b, &mut pre);
        let norm = l2_norm(&pre);
        let out = if norm > 0.0 {
            pre.iter().map(|v| v / norm).collect()
        } else {
            pre.clone()
        };
        (pre, norm, out)
    });
    let mut proj_norm = Vec::with_capacity(projected.len());
    let mut embeddings = Vec::with_capacity(projected.len());
    for (_pre, norm, out) in projected {
        min_norm = min_norm.min(norm);
        proj_norm.push(norm);
        embeddings.push(out);
    }

    Ok(ForwardTape {
        h,
        msg_pre: msg_pre_all,
        msg: msg_all,
        conv_pre: conv_pre_all,
        conv_norm: conv_norm_all,
        proj_norm,
        embeddings,
        min_abs_pre,
        min_norm,
    })
}

/// Gradient of `y = x / ||x||` at the recorded norm: maps dL/dy to dL/dx.
/// The zero-norm branch is the identity map.
fn normalize_backward(y: &[f64], norm: f64, dy: &[f64], dx: &mut [f64]) {
    if norm == 0.0 {
        dx.copy_from_slice(dy);
        return;
    }
    let proj = dot(y, dy);
    for ((out, &dyv), &yv) in dx.iter_mut().zip(dy).zip(y) {
        *out = (dyv - yv * proj) / norm;
    }
}

/// Backpropagate dL/d(embedding) for every target through the tape,
/// returning parameter gradients. Reductions run over fixed-size chunks in
/// chunk order, so results are bit-reproducible at any worker count.
pub fn backward(
    model: &GnnModel,
    plan: &EmbedPlan,
    tape: &ForwardTape,
    d_embeddings: &[Vec<f64>],
) -> Grads {
    let layers = model.dims.layers;
    let mut grads = Grads::zeros_like(model);

    // Projection layer.
    let top_pos = &plan.pos[layers];
    let top = &tape.h[layers];
    let proj_rows: Vec<(Vec<f64>, usize)> = par_map_indexed(plan.targets(), |i, t| {
        let mut d_pre = vec![0.0; model.dims.embed_dim];
        normalize_backward(
            &tape.embeddings[i],
            tape.proj_norm[i],
            &d_embeddings[i],
            &mut d_pre,
        );
        (d_pre, top_pos[t])
    });
    // dG, dg: ordered chunk reduction over targets.
    {
        let pieces = map_chunks(&proj_rows, GRAD_CHUNK, |chunk| {
            let mut dw = Mat::zeros(model.proj_w.rows, model.proj_w.cols);
            let mut db = vec![0.0; model.dims.embed_dim];
            for (d_pre, pos) in chunk {
                dw.add_outer(d_pre, &top[*pos]);
                for (b, d) in db.iter_mut().zip(d_pre) {
                    *b += d;
                }
            }
            (dw, db)
        });
        let nblocks = grads.blocks.len();
        for (dw, db) in pieces {
            for (a, b) in grads.blocks[nblocks - 2].iter_mut().zip(&dw.data) {
                *a += b;
            }
            for (a, b) in grads.blocks[nblocks - 1].iter_mut().zip(&db) {
                *a += b;
            }
        }
    }
    // dL/dh[L]: one slot per top node; a node can be pointed at by exactly
    // one target (targets are deduplicated), plus nothing else at this stage.
    let mut dh: Vec<Vec<f64>> = vec![vec![0.0; hdim(model, layers)]; top.len()];
    for (d_pre, pos) in &proj_rows {
        model.proj_w.transpose_matvec_add(d_pre, &mut dh[*pos]);
    }

    for k in (1..=layers).rev() {
        let layer = &model.layers[k - 1];
        let d_in = layer.q_w.cols;
        let d_msg = layer.q_w.rows;
        let prev = &tape.h[k - 1];
        let prev_pos = &plan.pos[k - 1];
        let msg_pos = &plan.msg_pos[k - 1];

        // Per layer-k node: through normalization and relu, split W^T into
        // self and pooled parts.
        struct NodeBack {
            d_pre: Vec<f64>,
            d_self: Vec<f64>,
            d_pooled: Vec<f64>,
            concat: Vec<f64>,
        }
        let node_rows: Vec<NodeBack> = par_map_indexed(&plan.layer_nodes[k], |i, v| {
            let y = &tape.h[k][i];
            let norm = tape.conv_norm[k - 1][i];
            let mut d_post = vec![0.0; y.len()];
            normalize_backward(y, norm, &dh[i], &mut d_post);
            let pre = &tape.conv_pre[k - 1][i];
            let d_pre: Vec<f64> = d_post
                .iter()
                .zip(pre)
                .map(|(d, p)| if *p > 0.0 { *d } else { 0.0 })
                .collect();
            let mut d_concat = vec![0.0; d_in + d_msg];
            layer.w_w.transpose_matvec_add(&d_pre, &mut d_concat);
            // Rebuild the concat input from the tape (self || pooled).
            let self_vec = &prev[prev_pos[v]];
            let mut pooled = vec![0.0; d_msg];
            for (u, weight) in &plan.nbhd[v] {
                let m = &tape.msg[k - 1][msg_pos[u]];
                for (p, mv) in pooled.iter_mut().zip(m) {
                    *p += weight * mv;
                }
            }
            let mut concat = Vec::with_capacity(d_in + d_msg);
            concat.extend_from_slice(self_vec);
            concat.extend_from_slice(&pooled);
            NodeBack {
                d_self: d_concat[..d_in].to_vec(),
                d_pooled: d_concat[d_in..].to_vec(),
                d_pre,
                concat,
            }
        });
        // dW, dw.
        {
            let pieces = map_chunks(&node_rows, GRAD_CHUNK, |chunk| {
                let mut dw = Mat::zeros(layer.w_w.rows, layer.w_w.cols);
                let mut db = vec![0.0; layer.w_b.len()];
                for row in chunk {
                    dw.add_outer(&row.d_pre, &row.concat);
                    for (b, d) in db.iter_mut().zip(&row.d_pre) {
                        *b += d;
                    }
                }
                (dw, db)
            });
            let base = (k - 1) * 4;
            for (dw, db) in pieces {
                for (a, b) in grads.blocks[base + 2].iter_mut().zip(&dw.data) {
                    *a += b;
                }
                for (a, b) in grads.blocks[base + 3].iter_mut().zip(&db) {
                    *a += b;
                }
            }
        }
        // Per message node: collect pooled gradients from all consumers (in
        // ascending consumer order), apply the relu mask.
        let msg_back: Vec<Vec<f64>> = par_map_indexed(&plan.msg_nodes[k - 1], |j, _u| {
            let mut d_msg_vec = vec![0.0; d_msg];
            for (v_pos, weight) in &plan.rev[k - 1][j] {
                let d_pooled = &node_rows[*v_pos].d_pooled;
                for (d, g) in d_msg_vec.iter_mut().zip(d_pooled) {
                    *d += weight * g;
                }
            }
            let pre = &tape.msg_pre[k - 1][j];
            for (d, p) in d_msg_vec.iter_mut().zip(pre) {
                if *p <= 0.0 {
                    *d = 0.0;
                }
            }
            d_msg_vec
        });
        // dQ, dq.
        {
            let pairs: Vec<(usize, &Vec<f64>)> = msg_back.iter().enumerate().collect();
            let pieces = map_chunks(&pairs, GRAD_CHUNK, |chunk| {
                let mut dq = Mat::zeros(layer.q_w.rows, layer.q_w.cols);
                let mut db = vec![0.0; layer.q_b.len()];
                for (j, d_msgpre) in chunk {
                    let u = plan.msg_nodes[k - 1][*j];
                    dq.add_outer(d_msgpre, &prev[prev_pos[&u]]);
                    for (b, d) in db.iter_mut().zip(*d_msgpre) {
                        *b += d;
                    }
                }
                (dq, db)
            });
            let base = (k - 1) * 4;
            for (dq, db) in pieces {
                for (a, b) in grads.blocks[base].iter_mut().zip(&dq.data) {
                    *a += b;
                }
                for (a, b) in grads.blocks[base + 1].iter_mut().zip(&db) {
                    *a += b;
                }
            }
        }
        // dL/dh[k-1]: self-path plus message-path per slot, each slot owned
        // by exactly one task.
        let kpos = &plan.pos[k];
        let dh_prev: Vec<Vec<f64>> = par_map(&plan.layer_nodes[k - 1], |x| {
            let mut acc = vec![0.0; prev[0].len()];
            if let Some(&i) = kpos.get(x) {
                for (a, b) in acc.iter_mut().zip(&node_rows[i].d_self) {
                    *a += b;
                }
            }
            if let Some(&j) = msg_pos.get(x) {
                layer.q_w.transpose_matvec_add(&msg_back[j], &mut acc);
            }
            acc
        });
        dh = dh_prev;
    }
    let _ = dh;
    grads
}

fn hdim(model: &GnnModel, k: usize) -> usize {
    if k == 0 {
        model.dims.input_dim
    } else {
        model.dims.hidden
    }
}

/// Embed `nodes` on a graph, sampling neighborhoods once per node from the
/// keyed stream of `seed` (or reusing `cache` when given).
pub fn embed_nodes(
    model: &GnnModel,
    graph: &HeteroGraph,
    features: &NodeFeatures,
    nodes: &[NodeId],
    walk_config: &WalkConfig,
    seed: u64,
    cache: Option<&NeighborhoodCache>,
) -> Result<Vec<(NodeId, Embedding)>> {
    let view = BaseView { graph, features };
    let mut targets = Vec::with_capacity(nodes.len());
    for node in nodes {
        let idx = graph
            .node_index(node)
            .ok_or_else(|| Error::UnknownNode(node.to_string()))?;
        targets.push(idx);
    }
    let plan = EmbedPlan::build(&targets, model.dims.layers, |idx| match cache {
        Some(c) => c.map.get(&idx).cloned().unwrap_or_default(),
        None => sample_view_neighborhood(&view, idx, walk_config, seed),
    });
    let tape = forward(model, &plan, &view)?;
    let by_target: HashMap<u32, &Vec<f64>> = plan
        .targets()
        .iter()
        .copied()
        .zip(tape.embeddings.iter())
        .collect();
    Ok(nodes
        .iter()
        .zip(&targets)
        .map(|(node, idx)| (node.clone(), Embedding(by_target[idx].clone())))
        .collect())
}

/// Embed pre-planned targets on any view; used by the ranking overlay.
pub fn embed_plan(
    model: &GnnModel,
    plan: &EmbedPlan,
    view: &impl GraphView,
) -> Result<Vec<Embedding>> {
    let tape = forward(model, plan, view)?;
    Ok(tape.embeddings.into_iter().map(Embedding).collect())
}

/// Per-triplet hinge: `max(0, z_q . z_neg - z_q . z_pos + margin)`.
pub fn triplet_loss(z_q: &Embedding, z_pos: &Embedding, z_neg: &Embedding, margin: f64) -> f64 {
    (z_q.dot(z_neg) - z_q.dot(z_pos) + margin).max(0.0)
}

/// Mean triplet loss over a batch plus exact gradients for every parameter.
///
/// Targets shared between triplets are embedded once; inactive triplets
/// contribute zero gradient.
pub fn forward_backward(
    model: &GnnModel,
    plan: &EmbedPlan,
    view: &impl GraphView,
    triplets: &[(u32, u32, u32)],
    margin: f64,
) -> Result<(f64, Grads)> {
    if triplets.is_empty() {
        return Err(Error::numeric("forward_backward on an empty batch"));
    }
    let tape = forward(model, plan, view)?;
    let target_pos: HashMap<u32, usize> = plan
        .targets()
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, i))
        .collect();
    let b = triplets.len() as f64;
    let mut loss = 0.0;
    let mut d_emb: Vec<Vec<f64>> =
        vec![vec![0.0; model.dims.embed_dim]; plan.targets().len()];
    for &(q, p, n) in triplets {
        let zq = &tape.embeddings[target_pos[&q]];
        let zp = &tape.embeddings[target_pos[&p]];
        let zn = &tape.embeddings[target_pos[&n]];
        let value = dot(zq, zn) - dot(zq, zp) + margin;
        if value > 0.0 {
            loss += value;
            let (qi, pi, ni) = (target_pos[&q], target_pos[&p], target_pos[&n]);
            for k in 0..model.dims.embed_dim {
                d_emb[qi][k] += (zn[k] - zp[k]) / b;
                d_emb[pi][k] += -zq[k] / b;
                d_emb[ni][k] += zq[k] / b;
            }
        }
    }
    loss /= b;
    if !loss.is_finite() {
        return Err(Error::numeric(format!("non-finite batch loss {loss}")));
    }
    let grads = backward(model, plan, &tape, &d_emb);
    Ok((loss, grads))
}

/// Forward-only batch loss; the quantity differentiated by [`gradient_check`].
pub fn batch_loss(
    model: &GnnModel,
    plan: &EmbedPlan,
    view: &impl GraphView,
    triplets: &[(u32, u32, u32)],
    margin: f64,
) -> Result<f64> {
    let tape = forward(model, plan, view)?;
    let target_pos: HashMap<u32, usize> = plan
        .targets()
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, i))
        .collect();
    let mut loss = 0.0;
    for &(q, p, n) in triplets {
        let zq = &tape.embeddings[target_pos[&q]];
        let zp = &tape.embeddings[target_pos[&p]];
        let zn = &tape.embeddings[target_pos[&n]];
        loss += (dot(zq, zn) - dot(zq, zp) + margin).max(0.0);
    }
    Ok(loss / triplets.len() as f64)
}

/// Random small fixture for the gradient check: a star-and-path graph with
/// seeded features, re-drawn until all relu inputs, norms and hinge slacks
/// are clear of their kinks.
pub struct CheckFixture {
    pub graph: HeteroGraph,
    pub features: NodeFeatures,
    pub triplets: Vec<(NodeId, NodeId, NodeId)>,
}

impl CheckFixture {
    pub fn generate(input_dim: usize, seed: u64) -> CheckFixture {
        use crate::ingest::{
            join_corpus, ComponentRecord, EngineerRecord, IncidentRecord,
        };
        let incidents = vec![
            IncidentRecord {
                incident_id: "i1".into(),
                description: String::new(),
                communication_summary: String::new(),
                processor_ids: vec!["e1".into(), "e2".into()],
                component_ids: vec!["c1".into()],
                created_date: chrono::NaiveDate::from_ymd_opt(2019, 1, 1).unwrap(),
                confirmed_date: None,
            },
            IncidentRecord {
                incident_id: "i2".into(),
                description: String::new(),
                communication_summary: String::new(),
                processor_ids: vec!["e3".into()],
                component_ids: vec!["c1".into()],
                created_date: chrono::NaiveDate::from_ymd_opt(2019, 2, 1).unwrap(),
                confirmed_date: None,
            },
        ];
        let engineers = ["e1", "e2", "e3"]
            .iter()
            .map(|e| EngineerRecord {
                engineer_id: (*e).to_string(),
                expertise: Default::default(),
            })
            .collect();
        let components = vec![ComponentRecord {
            component_id: "c1".into(),
            description: String::new(),
        }];
        let (corpus, _) =
            join_corpus(incidents, engineers, vec![], vec![], components, 10).unwrap();
        let graph = crate::kgraph::build_graph(&corpus);
        let mut features = NodeFeatures::empty(input_dim, 0, 0);
        let mut rng = keyed_rng(seed, "check-features");
        for node in graph.nodes() {
            let v: Vec<f64> = (0..input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            features.insert(node.clone(), v);
        }
        let triplets = vec![
            (NodeId::incident("i1"), NodeId::engineer("e2"), NodeId::engineer("e3")),
            (NodeId::incident("i2"), NodeId::engineer("e3"), NodeId::engineer("e1")),
        ];
        CheckFixture { graph, features, triplets }
    }
}

/// Compare analytic gradients against central finite differences (64-bit) on
/// a random small model and return the maximum relative error over every
/// parameter tensor. `dims` bounds the layer widths; keep them <= 8.
pub fn gradient_check(dims: GnnDims, seed: u64) -> Result<f64> {
    const STEP: f64 = 1e-5;
    const KINK_MARGIN: f64 = 1e-3;
    let walk = WalkConfig {
        walk_count: 30,
        walk_length: 2,
        restart_prob: 0.3,
        neighborhood_size: 4,
    };
    for attempt in 0..64u64 {
        let fixture = CheckFixture::generate(dims.input_dim, seed.wrapping_add(attempt * 7919));
        let mut model = GnnModel::init(dims, seed.wrapping_add(attempt))?;
        // Non-zero biases move pre-activations off the relu kink.
        for block in model.param_blocks_mut() {
            for v in block.iter_mut() {
                if *v == 0.0 {
                    *v = 0.05;
                }
            }
        }
        let graph = &fixture.graph;
        let view = BaseView { graph, features: &fixture.features };
        let targets: Vec<u32> = {
            let mut t: Vec<u32> = fixture
                .triplets
                .iter()
                .flat_map(|(q, p, n)| [q, p, n])
                .map(|id| graph.node_index(id).unwrap())
                .collect();
            t.sort_unstable();
            t.dedup();
            t
        };
        let plan = EmbedPlan::build(&targets, dims.layers, |idx| {
            sample_view_neighborhood(&view, idx, &walk, seed.wrapping_add(attempt))
        });
        let triplets: Vec<(u32, u32, u32)> = fixture
            .triplets
            .iter()
            .map(|(q, p, n)| {
                (
                    graph.node_index(q).unwrap(),
                    graph.node_index(p).unwrap(),
                    graph.node_index(n).unwrap(),
                )
            })
            .collect();
        // Kink avoidance: retry when a relu input, a norm or a hinge slack is
        // too close to its non-differentiable point.
        let tape = forward(&model, &plan, &view)?;
        if tape.min_abs_pre < KINK_MARGIN || tape.min_norm < KINK_MARGIN {
            continue;
        }
        let margin = 0.25;
        let target_pos: HashMap<u32, usize> = plan
            .targets()
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, i))
            .collect();
        let slack_ok = triplets.iter().all(|&(q, p, n)| {
            let zq = &tape.embeddings[target_pos[&q]];
            let zp = &tape.embeddings[target_pos[&p]];
            let zn = &tape.embeddings[target_pos[&n]];
            (dot(zq, zn) - dot(zq, zp) + margin).abs() > KINK_MARGIN
        });
        if !slack_ok {
            continue;
        }

        let (_, analytic) = forward_backward(&model, &plan, &view, &triplets, margin)?;
        let analytic_blocks: Vec<Vec<f64>> =
            analytic.blocks().map(|b| b.to_vec()).collect();
        let mut max_rel = 0.0f64;
        let n_blocks = model.param_blocks().len();
        for block_idx in 0..n_blocks {
            let len = model.param_blocks()[block_idx].len();
            for i in 0..len {
                let original = model.param_blocks()[block_idx][i];
                model.param_blocks_mut()[block_idx][i] = original + STEP;
                let plus = batch_loss(&model, &plan, &view, &triplets, margin)?;
                model.param_blocks_mut()[block_idx][i] = original - STEP;
                let minus = batch_loss(&model, &plan, &view, &triplets, margin)?;
                model.param_blocks_mut()[block_idx][i] = original;
                let numeric = (plus - minus) / (2.0 * STEP);
                let a = analytic_blocks[block_idx][i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                max_rel = max_rel.max(rel);
            }
        }
        return Ok(max_rel);
    }
    Err(Error::numeric(
        "gradient check could not find a kink-free fixture",
    ))
}

/// Checkpoint format: a text header terminated by `---` followed by raw
/// little-endian f32 parameter blocks in declared order.
pub struct Checkpoint {
    pub dims: GnnDims,
    pub margin: f64,
    pub seed: u64,
    pub vocab_hash: String,
    pub corpus_hash: String,
    pub config_hash: String,
}

const CHECKPOINT_MAGIC: &str = "expertmatch checkpoint v1";

pub fn save_checkpoint(path: &Path, model: &GnnModel, meta: &Checkpoint) -> Result<()> {
    let header = format!(
        "{CHECKPOINT_MAGIC}\ninput_dim = {}\nlayers = {}\nd_msg = {}\nhidden = {}\n\
         embed_dim = {}\nmargin = {}\nseed = {}\nvocab_hash = {}\ncorpus_hash = {}\n\
         config_hash = {}\nparams = {}\n---\n",
        meta.dims.input_dim,
        meta.dims.layers,
        meta.dims.d_msg,
        meta.dims.hidden,
        meta.dims.embed_dim,
        meta.margin,
        meta.seed,
        meta.vocab_hash,
        meta.corpus_hash,
        meta.config_hash,
        model.param_count(),
    );
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(header.as_bytes()).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(model.param_count() * 4);
    for block in model.param_blocks() {
        for v in block {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(GnnModel, Checkpoint)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let marker = b"---\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::data(format!("{}: missing checkpoint header terminator", path.display())))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::data(format!("{}: non-utf8 checkpoint header", path.display())))?;
    let body = &bytes[split + marker.len()..];
    let mut lines = header.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(Error::data(format!(
            "{}: not an expertmatch checkpoint",
            path.display()
        )));
    }
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for line in lines {
        if let Some((k, v)) = line.split_once('=') {
            fields.insert(k.trim(), v.trim());
        }
    }
    let get = |key: &str| -> Result<&str> {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| Error::data(format!("checkpoint header missing {key:?}")))
    };
    let parse_usize = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|e| Error::data(format!("checkpoint {key}: {e}")))
    };
    let dims = GnnDims {
        input_dim: parse_usize("input_dim")?,
        layers: parse_usize("layers")?,
        d_msg: parse_usize("d_msg")?,
        hidden: parse_usize("hidden")?,
        embed_dim: parse_usize("embed_dim")?,
    };
    let meta = Checkpoint {
        dims,
        margin: get("margin")?
            .parse()
            .map_err(|e| Error::data(format!("checkpoint margin: {e}")))?,
        seed: get("seed")?
            .parse()
            .map_err(|e| Error::data(format!("checkpoint seed: {e}")))?,
        vocab_hash: get("vocab_hash")?.to_string(),
        corpus_hash: get("corpus_hash")?.to_string(),
        config_hash: get("config_hash")?.to_string(),
    };
    let expected = parse_usize("params")?;
    if body.len() != expected * 4 {
        return Err(Error::data(format!(
            "{}: parameter block is {} bytes, expected {}",
            path.display(),
            body.len(),
            expected * 4
        )));
    }
    let mut model = GnnModel::init(dims, 0)?;
    if model.param_count() != expected {
        return Err(Error::data(format!(
            "{}: header params {} do not match dims",
            path.display(),
            expected
        )));
    }
    let mut offset = 0usize;
    for block in model.param_blocks_mut() {
        for v in block.iter_mut() {
            let mut raw = [0u8; 4];
            raw.copy_from_slice(&body[offset..offset + 4]);
            *v = f64::from(f32::from_le_bytes(raw));
            offset += 4;
        }
    }
    Ok((model, meta))
}

impl Checkpoint {
    /// Refuse a checkpoint whose vocabulary or corpus hash does not match the
    /// artifacts it is being used with.
    pub fn validate_against(&self, vocab_hash: &str, corpus_hash: &str) -> Result<()> {
        if self.vocab_hash != vocab_hash {
            return Err(Error::data(format!(
                "checkpoint vocabulary hash {} does not match current vocabulary {}",
                self.vocab_hash, vocab_hash
            )));
        }
        if self.corpus_hash != corpus_hash {
            return Err(Error::data(format!(
                "checkpoint corpus hash {} does not match current corpus {}",
                self.corpus_hash, corpus_hash
            )));
        }
        Ok(())
    }
}
