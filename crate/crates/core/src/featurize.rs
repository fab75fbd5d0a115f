//! Text and component featurization: TF-IDF over a fitted vocabulary, signed
//! feature hashing down to a fixed text dimension, one-hot component encoding
//! and per-node feature assembly for the GNN input layer.
//!
//! This replaces heavyweight language-model encoders with a deterministic,
//! CPU-cheap pipeline; precomputed dense vectors can be loaded from file to
//! slot external embeddings in without code changes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{parse_messages, Corpus};
use crate::kgraph::NodeId;
use crate::par::par_map;
use crate::util::{hash_bytes, mix64, sha256_hex};

/// Lowercased Unicode-alphanumeric-run tokens; tokens shorter than 2
/// characters are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else if !current.is_empty() {
            if current.chars().count() >= 2 {
                tokens.push(std::mem::take(&mut current));
            } else {
                current.clear();
            }
        }
    }
    if current.chars().count() >= 2 {
        tokens.push(current);
    }
    tokens
}

/// Fitted term dictionary with document frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    /// Terms in lexicographic order; position is the column index.
    terms: Vec<String>,
    index: HashMap<String, u32>,
    document_frequency: Vec<u32>,
    pub n_docs: usize,
    pub min_df: usize,
    pub max_df_ratio: f64,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn term_at(&self, idx: u32) -> &str {
        &self.terms[idx as usize]
    }

    pub fn df_at(&self, idx: u32) -> u32 {
        self.document_frequency[idx as usize]
    }

    /// Smoothed inverse document frequency: `ln((1 + n) / (1 + df)) + 1`.
    pub fn idf(&self, idx: u32) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.document_frequency[idx as usize] as f64)).ln()
            + 1.0
    }

    /// Content hash over terms, document frequencies and corpus size; stamps
    /// checkpoints and engineer indexes so stale artifact pairs are refused.
    pub fn content_hash(&self) -> String {
        let mut acc = format!("n_docs={}\n", self.n_docs);
        for (term, df) in self.terms.iter().zip(&self.document_frequency) {
            acc.push_str(term);
            acc.push(' ');
            acc.push_str(&df.to_string());
            acc.push('\n');
        }
        sha256_hex(acc.as_bytes())
    }

    /// Tab-separated dump: header lines then `term<TAB>df` rows.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!(
            "# vocabulary v1\n# n_docs = {}\n# min_df = {}\n# max_df_ratio = {}\n",
            self.n_docs, self.min_df, self.max_df_ratio
        );
        for (term, df) in self.terms.iter().zip(&self.document_frequency) {
            out.push_str(&format!("{term}\t{df}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut n_docs = None;
        let mut min_df = 1usize;
        let mut max_df_ratio = 1.0f64;
        let mut terms = Vec::new();
        let mut dfs = Vec::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some((k, v)) = rest.split_once('=') {
                    match k.trim() {
                        "n_docs" => n_docs = v.trim().parse().ok(),
                        "min_df" => min_df = v.trim().parse().unwrap_or(1),
                        "max_df_ratio" => max_df_ratio = v.trim().parse().unwrap_or(1.0),
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (term, df) = line
                .split_once('\t')
                .ok_or_else(|| Error::data(format!("vocabulary line without tab: {line:?}")))?;
            terms.push(term.to_string());
            dfs.push(
                df.parse()
                    .map_err(|e| Error::data(format!("vocabulary df {df:?}: {e}")))?,
            );
        }
        let n_docs = n_docs.ok_or_else(|| Error::data("vocabulary file missing n_docs"))?;
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            terms,
            index,
            document_frequency: dfs,
            n_docs,
            min_df,
            max_df_ratio,
        })
    }
}

/// Fit a vocabulary over documents, keeping terms with
/// `min_df <= df && df / n_docs <= max_df_ratio`. Indices are assigned in
/// lexicographic term order.
pub fn fit_vocabulary(documents: &[String], min_df: usize, max_df_ratio: f64) -> Result<Vocabulary> {
    if documents.is_empty() {
        return Err(Error::data("cannot fit vocabulary on zero documents"));
    }
    let n_docs = documents.len();
    let mut df: BTreeMap<String, u32> = BTreeMap::new();
    for doc in documents {
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for token in tokenize(doc) {
            seen.insert(token);
        }
        for token in seen {
            *df.entry(token).or_insert(0) += 1;
        }
    }
    let mut terms = Vec::new();
    let mut dfs = Vec::new();
    for (term, count) in df {
        let ratio = count as f64 / n_docs as f64;
        if count as usize >= min_df && ratio <= max_df_ratio {
            terms.push(term);
            dfs.push(count);
        }
    }
    if terms.is_empty() {
        return Err(Error::data(format!(
            "vocabulary empty after filtering (min_df={min_df}, max_df_ratio={max_df_ratio})"
        )));
    }
    let index = terms
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    Ok(Vocabulary {
        terms,
        index,
        document_frequency: dfs,
        n_docs,
        min_df,
        max_df_ratio,
    })
}

/// Sparse vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    pub dimension: u32,
    /// (index, weight) pairs sorted by index.
    pub entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn zero(dimension: u32) -> Self {
        SparseVector { dimension, entries: Vec::new() }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    /// Dot product of two sorted sparse vectors.
    pub fn dot(&self, other: &SparseVector) -> f64 {
        let mut sum = 0.0;
        let (mut i, mut j) = (0, 0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, wa) = self.entries[i];
            let (b, wb) = other.entries[j];
            match a.cmp(&b) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    sum += wa * wb;
                    i += 1;
                    j += 1;
                }
            }
        }
        sum
    }
}

/// L2-normalized TF-IDF vector of a document: raw term counts times smoothed
/// IDF. Out-of-vocabulary terms are ignored; an all-OOV document yields the
/// zero vector.
pub fn tfidf_vector(vocab: &Vocabulary, document: &str) -> SparseVector {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for token in tokenize(document) {
        if let Some(idx) = vocab.index_of(&token) {
            *counts.entry(idx).or_insert(0.0) += 1.0;
        }
    }
    let mut entries: Vec<(u32, f64)> = counts
        .into_iter()
        .map(|(idx, tf)| (idx, tf * vocab.idf(idx)))
        .collect();
    let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, w) in &mut entries {
            *w /= norm;
        }
    }
    SparseVector { dimension: vocab.len() as u32, entries }
}

/// Signed feature hashing without the final normalization; linear in its
/// input. Index `i` lands in bucket `h(i) mod p` with sign from an
/// independent hash bit.
pub fn hash_project_raw(sparse: &SparseVector, p: usize, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; p];
    for &(idx, weight) in &sparse.entries {
        let h = hash_bytes(seed, &idx.to_le_bytes());
        let bucket = (h % p as u64) as usize;
        let sign = if mix64(h) & 1 == 0 { 1.0 } else { -1.0 };
        out[bucket] += sign * weight;
    }
    out
}

/// Signed feature hashing re-normalized to unit L2 norm (zero stays zero).
pub fn project_text(sparse: &SparseVector, p: usize, seed: u64) -> Vec<f64> {
    let mut out = hash_project_raw(sparse, p, seed);
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut out {
            *x /= norm;
        }
    }
    out
}

/// Bijective component id -> column index map, in lexicographic id order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentEncoder {
    ids: Vec<String>,
    index: HashMap<String, u32>,
}

impl ComponentEncoder {
    pub fn fit(corpus: &Corpus) -> ComponentEncoder {
        let mut ids: Vec<String> = corpus
            .components
            .iter()
            .map(|c| c.component_id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        let index = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        ComponentEncoder { ids, index }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, component_id: &str) -> Option<u32> {
        self.index.get(component_id).copied()
    }
}

/// Multi-hot encoding of component ids: 1.0 at each listed component's
/// column. Unknown ids are ignored with a warning.
pub fn one_hot_components(encoder: &ComponentEncoder, component_ids: &[String]) -> Vec<f64> {
    let mut out = vec![0.0; encoder.len()];
    for id in component_ids {
        match encoder.index_of(id) {
            Some(idx) => out[idx as usize] = 1.0,
            None => log::warn!("unknown component id {id:?} ignored in encoding"),
        }
    }
    out
}

/// Fixed-width input features for every graph node.
///
/// Layout per vector: `[text block (p) | component block (c) | stats (s)]`.
#[derive(Debug, Clone)]
pub struct NodeFeatures {
    vectors: HashMap<NodeId, Vec<f64>>,
    pub p: usize,
    pub c: usize,
    pub s: usize,
    /// Nodes with an all-zero text-and-component block.
    pub flagged: BTreeSet<NodeId>,
}

impl NodeFeatures {
    /// Empty table with the given block widths; used by fixtures and loaders
    /// that fill vectors directly.
    pub fn empty(p: usize, c: usize, s: usize) -> NodeFeatures {
        NodeFeatures {
            vectors: HashMap::new(),
            p,
            c,
            s,
            flagged: BTreeSet::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.p + self.c + self.s
    }

    pub fn get(&self, node: &NodeId) -> Option<&Vec<f64>> {
        self.vectors.get(node)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, node: NodeId, vector: Vec<f64>) {
        debug_assert_eq!(vector.len(), self.dim());
        self.vectors.insert(node, vector);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &Vec<f64>)> {
        self.vectors.iter()
    }
}

/// Optional file of precomputed dense vectors, one `label<TAB>v1 v2 ...` line
/// per node; labels are `kind:key`. All rows must share one dimension.
#[derive(Debug, Clone)]
pub struct PretrainedVectors {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl PretrainedVectors {
    pub fn load(path: &Path) -> Result<PretrainedVectors> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vectors = BTreeMap::new();
        let mut dim = None;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (label, rest) = line.split_once('\t').ok_or_else(|| {
                Error::data(format!("{}:{}: vector line without tab", path.display(), lineno + 1))
            })?;
            let values: Vec<f64> = rest
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| {
                    Error::data(format!("{}:{}: bad vector value: {e}", path.display(), lineno + 1))
                })?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::data(format!(
                        "{}:{}: vector dimension {} != {}",
                        path.display(),
                        lineno + 1,
                        values.len(),
                        d
                    )))
                }
                _ => {}
            }
            vectors.insert(label.to_string(), values);
        }
        let dim = dim.ok_or_else(|| Error::data("pretrained vector file is empty"))?;
        Ok(PretrainedVectors { dim, vectors })
    }
}

/// The text a node contributes to the vocabulary corpus and to its own text
/// block.
pub fn incident_text(incident: &crate::ingest::IncidentRecord) -> String {
    format!("{} {}", incident.description, incident.communication_summary)
}

/// All fit documents for a corpus: incident texts, KBA texts and component
/// descriptions, in that order.
pub fn corpus_documents(corpus: &Corpus) -> Vec<String> {
    let mut docs = Vec::with_capacity(
        corpus.incidents.len() + corpus.kbas.len() + corpus.components.len(),
    );
    docs.extend(corpus.incidents.iter().map(incident_text));
    docs.extend(corpus.kbas.iter().map(|k| k.full_text.clone()));
    docs.extend(corpus.components.iter().map(|c| c.description.clone()));
    docs
}

/// Documents authored by each engineer: KBA texts where they are responsible
/// or a processor, plus their own messages within each incident's
/// communication summary (one document per incident).
pub fn engineer_documents(corpus: &Corpus) -> BTreeMap<String, Vec<String>> {
    let mut docs: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for engineer in &corpus.engineers {
        docs.insert(engineer.engineer_id.clone(), Vec::new());
    }
    for (engineer_id, kba_indices) in &corpus.kbas_by {
        if let Some(list) = docs.get_mut(engineer_id) {
            for &idx in kba_indices {
                list.push(corpus.kbas[idx].full_text.clone());
            }
        }
    }
    for incident in &corpus.incidents {
        let mut by_author: BTreeMap<String, String> = BTreeMap::new();
        for message in parse_messages(&incident.communication_summary) {
            if docs.contains_key(&message.author) {
                let entry = by_author.entry(message.author).or_default();
                if !entry.is_empty() {
                    entry.push(' ');
                }
                entry.push_str(&message.text);
            }
        }
        for (author, text) in by_author {
            docs.get_mut(&author).expect("author checked above").push(text);
        }
    }
    docs
}

/// Assemble input features for every node of a corpus.
///
/// Text blocks are hashed TF-IDF projections; engineers average the
/// projections of documents they authored. Component blocks are one-hot or
/// multi-hot; engineer component blocks carry expertise ratings scaled to
/// [0, 1]. Stats are `[ln(1+resolved), ln(1+kbas), ln(1+swarms)]` for
/// engineers, zeros otherwise. When `pretrained` is given its vectors replace
/// the text block and `p` becomes the file's dimension.
pub fn build_node_features(
    corpus: &Corpus,
    vocab: &Vocabulary,
    encoder: &ComponentEncoder,
    p: usize,
    seed: u64,
    pretrained: Option<&PretrainedVectors>,
) -> NodeFeatures {
    let p = pretrained.map(|pv| pv.dim).unwrap_or(p);
    let c = encoder.len();
    let s = 3usize;
    let mut features = NodeFeatures {
        vectors: HashMap::new(),
        p,
        c,
        s,
        flagged: BTreeSet::new(),
    };

    let text_block = |node: &NodeId, text: &str| -> Vec<f64> {
        if let Some(pv) = pretrained {
            return pv
                .vectors
                .get(&node.label())
                .cloned()
                .unwrap_or_else(|| vec![0.0; p]);
        }
        project_text(&tfidf_vector(vocab, text), p, seed)
    };

    // Incidents.
    let incident_rows: Vec<(NodeId, Vec<f64>)> = par_map(&corpus.incidents, |incident| {
        let node = NodeId::incident(&incident.incident_id);
        let mut v = text_block(&node, &incident_text(incident));
        v.extend(one_hot_components(encoder, &incident.component_ids));
        v.extend([0.0; 3]);
        (node, v)
    });
    // KBAs.
    let kba_rows: Vec<(NodeId, Vec<f64>)> = par_map(&corpus.kbas, |kba| {
        let node = NodeId::kba(&kba.kba_id);
        let mut v = text_block(&node, &kba.full_text);
        v.extend(one_hot_components(encoder, std::slice::from_ref(&kba.component_id)));
        v.extend([0.0; 3]);
        (node, v)
    });
    // Components.
    let component_rows: Vec<(NodeId, Vec<f64>)> = par_map(&corpus.components, |component| {
        let node = NodeId::component(&component.component_id);
        let mut v = text_block(&node, &component.description);
        v.extend(one_hot_components(
            encoder,
            std::slice::from_ref(&component.component_id),
        ));
        v.extend([0.0; 3]);
        (node, v)
    });

    // Engineers: mean of authored-document projections, expertise ratings,
    // activity stats.
    let authored = engineer_documents(corpus);
    let swarm_membership: BTreeMap<&str, usize> = {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for swarm in &corpus.swarms {
            let mut members: Vec<&str> = vec![swarm.requestor_id.as_str()];
            for r in &swarm.responder_ids {
                if !members.contains(&r.as_str()) {
                    members.push(r);
                }
            }
            for m in members {
                *counts.entry(m).or_insert(0) += 1;
            }
        }
        counts
    };
    let engineer_rows: Vec<(NodeId, Vec<f64>)> = par_map(&corpus.engineers, |engineer| {
        let node = NodeId::engineer(&engineer.engineer_id);
        let text = if let Some(pv) = pretrained {
            pv.vectors
                .get(&node.label())
                .cloned()
                .unwrap_or_else(|| vec![0.0; p])
        } else {
            let docs = authored
                .get(&engineer.engineer_id)
                .map(|d| d.as_slice())
                .unwrap_or(&[]);
            let mut mean = vec![0.0; p];
            let mut n_nonzero = 0usize;
            for doc in docs {
                let projected = project_text(&tfidf_vector(vocab, doc), p, seed);
                if projected.iter().any(|x| *x != 0.0) {
                    n_nonzero += 1;
                    for (m, x) in mean.iter_mut().zip(&projected) {
                        *m += x;
                    }
                }
            }
            if n_nonzero > 0 {
                for m in &mut mean {
                    *m /= n_nonzero as f64;
                }
            }
            mean
        };
        let mut v = text;
        let mut expertise = vec![0.0; encoder.len()];
        for (component, rating) in &engineer.expertise {
            if let Some(idx) = encoder.index_of(component) {
                expertise[idx as usize] = f64::from(*rating) / 5.0;
            }
        }
        v.extend(expertise);
        let resolved = corpus
            .resolved_by
            .get(&engineer.engineer_id)
            .map(|v| v.len())
            .unwrap_or(0);
        let kbas = corpus
            .kbas_by
            .get(&engineer.engineer_id)
            .map(|v| v.len())
            .unwrap_or(0);
        let swarms = swarm_membership
            .get(engineer.engineer_id.as_str())
            .copied()
            .unwrap_or(0);
        v.extend([
            (1.0 + resolved as f64).ln(),
            (1.0 + kbas as f64).ln(),
            (1.0 + swarms as f64).ln(),
        ]);
        (node, v)
    });

    for rows in [incident_rows, kba_rows, component_rows, engineer_rows] {
        for (node, v) in rows {
            debug_assert_eq!(v.len(), features.dim());
            debug_assert!(v.iter().all(|x| x.is_finite()));
            if v[..p + c].iter().all(|x| *x == 0.0) {
                features.flagged.insert(node.clone());
            }
            features.vectors.insert(node, v);
        }
    }
    if !features.flagged.is_empty() {
        log::warn!(
            "{} nodes have zero text and component features",
            features.flagged.len()
        );
    }
    features
}

/// Build the feature vector for an ad-hoc incident query, matching the
/// layout produced by [`build_node_features`] for incident nodes.
pub fn query_feature_vector(
    vocab: &Vocabulary,
    encoder: &ComponentEncoder,
    p: usize,
    seed: u64,
    text: &str,
    component_ids: &[String],
) -> Vec<f64> {
    let mut v = project_text(&tfidf_vector(vocab, text), p, seed);
    v.extend(one_hot_components(encoder, component_ids));
    v.extend([0.0; 3]);
    v
}
