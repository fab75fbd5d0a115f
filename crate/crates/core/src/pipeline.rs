//! End-to-end command implementations behind the CLI: synth, train, rank,
//! bench and check. Each command is reproducible from its config and seed;
//! artifacts are stamped with the config hash and verified on load.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::baselines::{
    PopularityRanker, RandomRanker, ScorePooling, StaticWeights, TfidfRanker,
    WeightedFeatureRanker,
};
use crate::config::{ArtifactStore, RunConfig};
use crate::error::{Error, Result};
use crate::evalbench::{
    build_cases, compare, evaluate, reference_rows_10k, reference_rows_100k, ComparisonTable,
    EvalCase, HitReport, Ranker,
};
use crate::featurize::{
    build_node_features, corpus_documents, fit_vocabulary, ComponentEncoder, NodeFeatures,
    PretrainedVectors, Vocabulary,
};
use crate::gnn::{
    gradient_check, load_checkpoint, save_checkpoint, Checkpoint, GnnDims, GnnModel,
    NeighborhoodCache,
};
use crate::ingest::{load_and_join, split_by_time, Corpus, CorpusManifest};
use crate::kgraph::{build_graph, HeteroGraph};
use crate::rank::{
    build_engineer_index, combine_with_swarm, embed_incident, load_query, rank_engineers,
    EngineerIndex, GnnRanker, Query, RankedList,
};
use crate::synthgen::{write_corpus, OracleRanker, PlantedTruth, SynthOutputs};
use crate::train::{train, RankerAdapter, TrainContext, TrainHistory};

/// Query-side embedding during training matches the inference pathway: the
/// query incident is restricted to its TAGGED component edges. With the
/// incident's full training-time edge set (resolver, participants, swarms)
/// the hinge can be satisfied through edges that do not exist for an
/// incoming incident, which measurably degrades validation and test ranking.
pub const QUERY_INFERENCE_PARITY: bool = true;

/// Artifact file names inside the output directory.
pub mod artifact {
    pub const CONFIG_LOCK: &str = "config.lock";
    pub const VOCABULARY: &str = "vocab.tsv";
    pub const GRAPH_EDGES: &str = "graph.edges";
    pub const CHECKPOINT: &str = "model.ckpt";
    pub const ENGINEER_INDEX: &str = "engineer_index.tsv";
    pub const HISTORY: &str = "history.csv";
    pub const BENCH_CSV: &str = "bench.csv";
    pub const BENCH_TXT: &str = "bench.txt";
}

/// Generate the synthetic corpus named by the config into
/// `<out_dir>/corpus/`.
pub fn run_synth(cfg: &RunConfig, force: bool) -> Result<SynthOutputs> {
    let corpus_dir = cfg.out_dir.join("corpus");
    if !force {
        let manifest = corpus_dir.join("corpus.manifest");
        if manifest.exists() {
            log::info!("corpus already present at {}", manifest.display());
        }
    }
    let outputs = write_corpus(&corpus_dir, &cfg.synth)?;
    log::info!(
        "synthetic corpus written: {} incidents, {} engineers ({})",
        cfg.synth.n_incidents,
        cfg.synth.n_engineers,
        outputs.manifest_path.display()
    );
    Ok(outputs)
}

/// Everything shared by train and bench: the joined corpus, splits,
/// vocabulary, features and graph for the training split.
pub struct Prepared {
    pub corpus: Corpus,
    pub train_corpus: Corpus,
    pub val_corpus: Corpus,
    pub test_corpus: Corpus,
    pub vocab: Vocabulary,
    pub encoder: ComponentEncoder,
    pub features: NodeFeatures,
    pub graph: HeteroGraph,
    pub corpus_hash: String,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let manifest = CorpusManifest::load(&cfg.manifest)?;
    let (corpus, report) = load_and_join(&manifest)?;
    log::info!("{}", report.summary());
    let corpus_hash = corpus.content_hash();
    let (train_corpus, val_corpus, test_corpus) =
        split_by_time(&corpus, manifest.train_cutoff, manifest.val_cutoff)?;
    log::info!(
        "splits: {} train / {} val / {} test incidents",
        train_corpus.incidents.len(),
        val_corpus.incidents.len(),
        test_corpus.incidents.len()
    );
    let vocab = fit_vocabulary(
        &corpus_documents(&train_corpus),
        cfg.featurize.min_df,
        cfg.featurize.max_df_ratio,
    )?;
    let encoder = ComponentEncoder::fit(&corpus);
    let pretrained = match &cfg.featurize.pretrained {
        Some(path) => Some(PretrainedVectors::load(path)?),
        None => None,
    };
    let features = build_node_features(
        &train_corpus,
        &vocab,
        &encoder,
        cfg.featurize.p,
        cfg.seed,
        pretrained.as_ref(),
    );
    let graph = build_graph(&train_corpus);
    log::info!("{}", graph.stats());
    Ok(Prepared {
        corpus,
        train_corpus,
        val_corpus,
        test_corpus,
        vocab,
        encoder,
        features,
        graph,
        corpus_hash,
    })
}

pub struct TrainedArtifacts {
    pub checkpoint_path: PathBuf,
    pub index_path: PathBuf,
    pub history: TrainHistory,
    pub best_val_hit: f64,
}

/// Full training pipeline: ingest, featurize, build graph, train, persist
/// checkpoint + vocabulary + engineer index + history.
pub fn run_train(cfg: &RunConfig, force: bool) -> Result<TrainedArtifacts> {
    let store = ArtifactStore::create(&cfg.out_dir, cfg.hash(), force)?;
    let prepared = prepare(cfg)?;
    let dims = GnnDims {
        input_dim: prepared.features.dim(),
        layers: cfg.gnn.layers,
        d_msg: cfg.gnn.d_msg,
        hidden: cfg.gnn.hidden,
        embed_dim: cfg.gnn.embed_dim,
    };
    let model = GnnModel::init(dims, cfg.seed)?;
    let ctx = TrainContext {
        graph: &prepared.graph,
        features: &prepared.features,
        train_corpus: &prepared.train_corpus,
        val_corpus: &prepared.val_corpus,
        vocab: &prepared.vocab,
        encoder: &prepared.encoder,
        walk_config: cfg.walk,
        seed: cfg.seed,
        query_inference_parity: QUERY_INFERENCE_PARITY,
    };
    let (best, mut history) = train(model, &ctx, &cfg.train)?;
    if cfg.deterministic {
        // Deterministic mode trades timing columns for byte-identical
        // artifacts across runs.
        for epoch in &mut history.epochs {
            epoch.seconds = 0.0;
        }
    }

    // Persist artifacts; refuse to clobber mismatched-config outputs.
    store.write_stamped(artifact::CONFIG_LOCK, &cfg.canonical())?;
    let vocab_path = store.path(artifact::VOCABULARY);
    store.guard_overwrite(&vocab_path)?;
    prepared.vocab.save(&vocab_path)?;
    let edges_path = store.path(artifact::GRAPH_EDGES);
    store.guard_overwrite(&edges_path)?;
    prepared.graph.write_edges(&edges_path)?;
    let checkpoint_path = store.path(artifact::CHECKPOINT);
    store.guard_overwrite(&checkpoint_path)?;
    save_checkpoint(
        &checkpoint_path,
        &best,
        &Checkpoint {
            dims,
            margin: cfg.train.margin,
            seed: cfg.seed,
            vocab_hash: prepared.vocab.content_hash(),
            corpus_hash: prepared.corpus_hash.clone(),
            config_hash: cfg.hash(),
        },
    )?;
    let cache = NeighborhoodCache::sample_all(&prepared.graph, &cfg.walk, cfg.seed);
    let index = build_engineer_index(
        &best,
        &prepared.graph,
        &prepared.features,
        &cfg.walk,
        cfg.seed,
        Some(&cache),
    )?;
    let index_path = store.path(artifact::ENGINEER_INDEX);
    store.guard_overwrite(&index_path)?;
    index.save(&index_path)?;
    let history_path = store.path(artifact::HISTORY);
    store.guard_overwrite(&history_path)?;
    history.save(&history_path)?;

    let best_val_hit = history.best_val_hit();
    log::info!(
        "training done: best validation hit@{} = {:.4}",
        cfg.train.eval_k,
        best_val_hit
    );
    Ok(TrainedArtifacts {
        checkpoint_path,
        index_path,
        history,
        best_val_hit,
    })
}

/// Load the trained model and engineer index, verifying hashes against the
/// current corpus and vocabulary.
pub fn load_trained(
    cfg: &RunConfig,
    prepared: &Prepared,
) -> Result<(GnnModel, Checkpoint, EngineerIndex)> {
    let checkpoint_path = cfg.out_dir.join(artifact::CHECKPOINT);
    let (model, meta) = load_checkpoint(&checkpoint_path)?;
    meta.validate_against(&prepared.vocab.content_hash(), &prepared.corpus_hash)?;
    let index_path = cfg.out_dir.join(artifact::ENGINEER_INDEX);
    let index = EngineerIndex::load(&index_path)?;
    if index.model_hash != model.param_hash() {
        return Err(Error::data(format!(
            "engineer index {} was built from a different checkpoint",
            index_path.display()
        )));
    }
    Ok((model, meta, index))
}

pub struct BenchOutputs {
    pub table: ComparisonTable,
    pub csv_path: PathBuf,
    pub txt_path: PathBuf,
}

/// Evaluate the trained ranker and every baseline over the test split and
/// write the comparison table (CSV and aligned text) including the published
/// reference rows.
pub fn run_bench(cfg: &RunConfig, force: bool) -> Result<BenchOutputs> {
    let store = ArtifactStore::create(&cfg.out_dir, cfg.hash(), force)?;
    let prepared = prepare(cfg)?;
    let (model, _meta, index) = load_trained(cfg, &prepared)?;
    let cases = build_cases(&prepared.test_corpus);
    if cases.is_empty() {
        return Err(Error::data("empty test split: nothing to evaluate"));
    }
    log::info!("benchmarking over {} test cases", cases.len());

    let gnn_ranker = GnnRanker {
        model: &model,
        graph: &prepared.graph,
        features: &prepared.features,
        vocab: &prepared.vocab,
        encoder: &prepared.encoder,
        index: &index,
        walk_config: cfg.walk,
        seed: cfg.seed,
        lambda: cfg.lambda,
    };
    let tfidf = TfidfRanker::new(&prepared.train_corpus, prepared.vocab.clone(), ScorePooling::Max)?;
    let weighted = WeightedFeatureRanker::new(
        &prepared.train_corpus,
        prepared.vocab.clone(),
        StaticWeights::default(),
    );
    let popularity = PopularityRanker::new(&prepared.train_corpus);
    let random = RandomRanker::new(prepared.train_corpus.engineer_ids(), cfg.seed);

    let mut reports: Vec<HitReport> = Vec::new();
    let adapter = RankerAdapter(&gnn_ranker);
    for ranker in [
        &adapter as &dyn Ranker,
        &tfidf,
        &weighted,
        &popularity,
        &random,
    ] {
        let mut report = evaluate(ranker, &cases, &cfg.eval_ks, cfg.eval_sample_size, cfg.seed)?;
        log_report(&report);
        if cfg.deterministic {
            report.seconds = 0.0;
        }
        reports.push(report);
    }
    // The planted-truth oracle applies only to synthetic corpora; include it
    // when the generator's truth file sits next to the manifest.
    let truth_path = cfg
        .manifest
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("truth.tsv");
    if truth_path.exists() {
        let oracle = OracleRanker {
            truth: PlantedTruth::load(&truth_path)?,
            engineers: prepared.train_corpus.engineer_ids(),
        };
        let mut report = evaluate(&oracle, &cases, &cfg.eval_ks, cfg.eval_sample_size, cfg.seed)?;
        log_report(&report);
        if cfg.deterministic {
            report.seconds = 0.0;
        }
        reports.push(report);
    }

    let mut references = reference_rows_10k();
    references.extend(reference_rows_100k());
    let table = compare(&reports, &references)?;
    let csv_path = store.write_stamped(artifact::BENCH_CSV, &table.to_csv())?;
    let txt_path = store.write_stamped(artifact::BENCH_TXT, &table.to_text())?;
    Ok(BenchOutputs { table, csv_path, txt_path })
}

fn log_report(report: &HitReport) {
    let cells: Vec<String> = report
        .hits
        .iter()
        .map(|(k, r)| format!("hit@{k} {r:.4}"))
        .collect();
    log::info!(
        "{}: {} over {} cases ({:.1}s)",
        report.ranker,
        cells.join(", "),
        report.sample_size,
        report.seconds
    );
}

pub struct RankOutputs {
    pub ranked: RankedList,
    pub csv: String,
    pub degraded: bool,
}

/// Rank engineers for one query file against the trained artifacts.
pub fn run_rank(
    cfg: &RunConfig,
    query_path: &Path,
    swarm_override: Option<Vec<String>>,
    k: Option<usize>,
    lambda_override: Option<f64>,
) -> Result<RankOutputs> {
    let prepared = prepare(cfg)?;
    let (model, _meta, index) = load_trained(cfg, &prepared)?;
    let mut query: Query = load_query(query_path)?;
    if let Some(swarm) = swarm_override {
        query.current_swarm = swarm;
    }
    let lambda = lambda_override.unwrap_or(cfg.lambda);
    let (incident_emb, degraded) = embed_incident(
        &model,
        &prepared.graph,
        &prepared.features,
        &prepared.vocab,
        &prepared.encoder,
        &query,
        &cfg.walk,
        cfg.seed,
    )?;
    let swarm_embs: Vec<_> = query
        .current_swarm
        .iter()
        .filter_map(|id| index.embeddings.get(id).cloned())
        .collect();
    let fused = combine_with_swarm(&incident_emb, &swarm_embs, lambda)?;
    let exclude: BTreeSet<String> = query.current_swarm.iter().cloned().collect();
    let ranked = rank_engineers(&fused, &index, &exclude);
    let csv = ranked.to_csv(k);
    Ok(RankOutputs { ranked, csv, degraded })
}

pub struct CheckOutputs {
    pub gradient_errors: Vec<(u64, f64)>,
    pub invariants_ok: bool,
    pub lines: Vec<String>,
}

/// Numeric self-checks: gradient checks over several seeds plus fast
/// invariant probes on a small synthetic corpus.
pub fn run_check(seed: u64) -> Result<CheckOutputs> {
    let mut lines = Vec::new();
    let dims = GnnDims {
        input_dim: 6,
        layers: 2,
        d_msg: 4,
        hidden: 5,
        embed_dim: 3,
    };
    let mut gradient_errors = Vec::new();
    let mut all_ok = true;
    for offset in 0..5u64 {
        let s = seed.wrapping_add(offset);
        let err = gradient_check(dims, s)?;
        let ok = err < 1e-4;
        all_ok &= ok;
        lines.push(format!(
            "gradient check seed {s}: max relative error {err:.3e} [{}]",
            if ok { "pass" } else { "FAIL" }
        ));
        gradient_errors.push((s, err));
    }

    // Invariant probes on a small synthetic corpus.
    let synth = crate::synthgen::SynthConfig {
        n_engineers: 30,
        n_components: 5,
        n_incidents: 300,
        n_kbas: 30,
        experts_per_component: 4,
        vocab_per_component: 30,
        shared_vocab: 60,
        text_len: 24,
        seed,
        ..crate::synthgen::SynthConfig::default()
    };
    let generated = crate::synthgen::generate(&synth)?;
    let corpus = crate::synthgen::join_generated(&generated)?;
    let vocab = fit_vocabulary(&corpus_documents(&corpus), 1, 1.0)?;
    let encoder = ComponentEncoder::fit(&corpus);
    let features = build_node_features(&corpus, &vocab, &encoder, 32, seed, None);
    let graph = build_graph(&corpus);
    let model = GnnModel::init(
        GnnDims {
            input_dim: features.dim(),
            layers: 2,
            d_msg: 16,
            hidden: 16,
            embed_dim: 8,
        },
        seed,
    )?;
    let walk = crate::kgraph::WalkConfig::default();
    let index = build_engineer_index(&model, &graph, &features, &walk, seed, None)?;
    let mut norm_ok = true;
    for emb in index.embeddings.values() {
        if !emb.is_zero() && (emb.norm() - 1.0).abs() > 1e-6 {
            norm_ok = false;
        }
    }
    all_ok &= norm_ok;
    lines.push(format!(
        "embedding norms within 1e-6 of 1 over {} engineers [{}]",
        index.len(),
        if norm_ok { "pass" } else { "FAIL" }
    ));

    let mut weight_ok = true;
    for node in graph.nodes() {
        let mut rng = crate::util::keyed_rng(seed, &format!("check-walk:{node}"));
        let sampled = graph.sample_importance_neighborhood(node, &walk, &mut rng)?;
        if !sampled.is_empty() {
            let total: f64 = sampled.iter().map(|(_, w)| w).sum();
            if (total - 1.0).abs() > 1e-9 {
                weight_ok = false;
            }
        }
    }
    all_ok &= weight_ok;
    lines.push(format!(
        "sampled neighborhood weights sum to 1 over {} nodes [{}]",
        graph.node_count(),
        if weight_ok { "pass" } else { "FAIL" }
    ));

    let cases = build_cases(&corpus);
    let random = RandomRanker::new(corpus.engineer_ids(), seed);
    let sample: Vec<EvalCase> = cases.into_iter().take(50).collect();
    let mut hit_ok = true;
    for case in &sample {
        let ranked = random.rank(case)?;
        for k in [1usize, 5, 30] {
            let fast = crate::evalbench::hit_at_k(&ranked, &case.truth, k)?;
            let brute = u32::from(
                ranked
                    .entries()
                    .iter()
                    .take(k)
                    .any(|(id, _)| case.truth.contains(id)),
            );
            if fast != brute {
                hit_ok = false;
            }
        }
    }
    all_ok &= hit_ok;
    lines.push(format!(
        "hit@k equals brute-force membership scan over {} cases [{}]",
        sample.len(),
        if hit_ok { "pass" } else { "FAIL" }
    ));

    Ok(CheckOutputs {
        gradient_errors,
        invariants_ok: all_ok,
        lines,
    })
}
