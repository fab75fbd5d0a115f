//! Acceptance suite: every release-gating criterion, one test each, with the
//! tolerance pinned in code. Each test prints a `[PASS]`/`[FAIL]` line (run
//! with `--nocapture` to see them on success).
//!
//! The published Table-1 numbers come from proprietary corpora and are NOT
//! reproducible here; they appear as labeled reference rows only. The
//! criteria below are property-based and ordinal checks on synthetic corpora.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use expertmatch::baselines::{
    PopularityRanker, RandomRanker, ScorePooling, StaticWeights, TfidfRanker,
    WeightedFeatureRanker,
};
use expertmatch::config::RunConfig;
use expertmatch::evalbench::{
    build_cases, compare, evaluate, hit_at_k, reference_rows_100k, reference_rows_10k, HitReport,
    Ranker,
};
use expertmatch::featurize::{
    build_node_features, corpus_documents, fit_vocabulary, tfidf_vector, ComponentEncoder,
};
use expertmatch::gnn::{embed_nodes, gradient_check, GnnDims, GnnModel};
use expertmatch::ingest::Corpus;
use expertmatch::kgraph::{build_graph, EdgeType, NodeId, WalkConfig};
use expertmatch::pipeline;
use expertmatch::rank::{build_engineer_index, GnnRanker, RankedList};
use expertmatch::synthgen::{
    generate, join_generated, OracleRanker, SynthConfig, RESOLUTION_SENTINEL,
};
use expertmatch::train::{train, RankerAdapter, TrainConfig, TrainContext};
use expertmatch::util::keyed_rng;

use rand::Rng;

fn pass(name: &str, detail: &str) {
    println!("[PASS] {name}: {detail}");
}

/// The lean acceptance training profile: the corpus is the pinned default
/// (10K incidents, 200 engineers); model dims are sized for the time budget.
fn acceptance_config(dir: &Path, corpus_seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.manifest = dir.join("corpus/corpus.manifest");
    cfg.out_dir = dir.to_path_buf();
    cfg.seed = corpus_seed;
    cfg.synth.seed = corpus_seed;
    cfg.featurize.p = 128;
    cfg.gnn.layers = 2;
    cfg.gnn.d_msg = 64;
    cfg.gnn.hidden = 64;
    cfg.gnn.embed_dim = 32;
    cfg.train.seed = corpus_seed;
    cfg.train.epochs = 6;
    cfg.train.batch_size = 64;
    cfg.train.negatives_per_positive = 2;
    cfg.train.hard_negative_fraction = 0.25;
    cfg.train.patience = 2;
    cfg.train.eval_k = 50;
    cfg
}

fn ratio(report: &HitReport, k: usize) -> f64 {
    report.ratio_at(k).unwrap_or_else(|| panic!("report {} lacks k={k}", report.ranker))
}

fn row_ratio(table: &expertmatch::evalbench::ComparisonTable, ranker: &str, k: usize) -> f64 {
    table
        .rows
        .iter()
        .find(|r| r.ranker == ranker && r.k == k && r.source == "measured")
        .unwrap_or_else(|| panic!("no measured row for {ranker} at k={k}"))
        .hit_ratio
}

/// Criterion: Table 1's absolute numbers are displayed as reference rows
/// only, labeled as published and not reproduced.
#[test]
fn criterion_non_reproducibility_statement() {
    let measured = HitReport {
        ranker: "gnn".into(),
        sample_size: 10,
        hits: vec![(50, 0.9), (100, 0.95), (200, 1.0)],
        seconds: 0.0,
    };
    let mut references = reference_rows_10k();
    references.extend(reference_rows_100k());
    let table = compare(&[measured], &references).unwrap();
    // The published KG row (0.64/0.77/0.85 on the 10K set) is present,
    // flagged as paper-table-1, and excluded from measured comparisons.
    let kg_row = table
        .rows
        .iter()
        .find(|r| r.ranker.contains("Knowledge Graph") && r.k == 50 && r.ranker.contains("10K"))
        .expect("published KG row missing");
    assert_eq!(kg_row.source, "paper-table-1");
    assert!((kg_row.hit_ratio - 0.64).abs() < 1e-12);
    assert!(table.to_text().contains("published, not reproduced"));
    pass(
        "non-reproducibility-statement",
        "published Table-1 values are reference rows only (proprietary corpora; \
         not reproducible at desk scale); synthetic ordinal checks substitute",
    );
}

/// Criterion: on the default synthetic corpus, trained-GNN hit@50 exceeds
/// TF-IDF hit@50 by at least 0.05 absolute and both exceed random, for at
/// least 2 of 3 seeds, inside the 15-minute budget.
#[test]
fn criterion_central_hypothesis() {
    let started = Instant::now();
    let base = tempfile::tempdir().unwrap();
    let mut wins = 0usize;
    let mut detail = Vec::new();
    for seed in [42u64, 43, 44] {
        let dir = base.path().join(format!("seed{seed}"));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = acceptance_config(&dir, seed);
        assert_eq!(cfg.synth.n_incidents, 10_000);
        assert_eq!(cfg.synth.n_engineers, 200);
        pipeline::run_synth(&cfg, true).unwrap();
        pipeline::run_train(&cfg, true).unwrap();
        let bench = pipeline::run_bench(&cfg, true).unwrap();
        let gnn = row_ratio(&bench.table, "gnn", 50);
        let tfidf = row_ratio(&bench.table, "tf-idf", 50);
        let random = row_ratio(&bench.table, "random", 50);
        let ok = gnn >= tfidf + 0.05 && tfidf > random && gnn > random;
        detail.push(format!(
            "seed {seed}: gnn {gnn:.3} vs tf-idf {tfidf:.3} vs random {random:.3} [{}]",
            if ok { "ok" } else { "miss" }
        ));
        if ok {
            wins += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        wins >= 2,
        "central hypothesis held for {wins}/3 seeds: {}",
        detail.join("; ")
    );
    assert!(
        elapsed <= 15.0 * 60.0,
        "central hypothesis run took {elapsed:.0}s, budget is 900s"
    );
    pass(
        "central-hypothesis",
        &format!("{}/3 seeds, {:.0}s total; {}", wins, elapsed, detail.join("; ")),
    );
}

/// Criterion: analytic gradients match central finite differences within
/// 1e-4 relative error on models with dims <= 8, over 5 seeds.
#[test]
fn criterion_gradient_correctness() {
    let dims = GnnDims {
        input_dim: 6,
        layers: 2,
        d_msg: 4,
        hidden: 5,
        embed_dim: 3,
    };
    let mut worst = 0.0f64;
    for seed in 1..=5u64 {
        let err = gradient_check(dims, seed).unwrap();
        assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        worst = worst.max(err);
    }
    pass(
        "gradient-correctness",
        &format!("5 seeds, dims <= 8, worst max relative error {worst:.3e} < 1e-4"),
    );
}

/// Criterion: hit_at_k matches a brute-force membership scan on 1000 random
/// (ranking, truth, k) instances with zero mismatches.
#[test]
fn criterion_hit_at_k_oracle_equivalence() {
    let mut rng = keyed_rng(2024, "hit-oracle");
    let mut mismatches = 0usize;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=200usize);
        let ids: Vec<String> = (0..n).map(|i| format!("e{i:03}")).collect();
        let ranked = RankedList::from_scores(
            ids.iter()
                .map(|id| (id.clone(), rng.gen_range(-1.0..1.0)))
                .collect(),
        );
        let truth_size = rng.gen_range(1..=n.min(8));
        let truth: BTreeSet<String> = (0..truth_size)
            .map(|_| ids[rng.gen_range(0..n)].clone())
            .collect();
        let k = rng.gen_range(1..=250usize);
        let fast = hit_at_k(&ranked, &truth, k).unwrap();
        let brute = u32::from(
            ranked
                .entries()
                .iter()
                .take(k.min(n))
                .any(|(id, _)| truth.contains(id)),
        );
        if fast != brute {
            mismatches += 1;
        }
    }
    assert_eq!(mismatches, 0);
    pass(
        "hit-at-k-oracle-equivalence",
        "1000 random instances, 0 mismatches against brute-force scan",
    );
}

struct SmallRun {
    corpus: Corpus,
    truth: expertmatch::synthgen::PlantedTruth,
    cases: Vec<expertmatch::evalbench::EvalCase>,
    reports: Vec<HitReport>,
    flagged_zero: usize,
    norms_checked: usize,
    max_norm_err: f64,
}

/// Train a small model on a small corpus and evaluate every ranker; shared
/// by the monotonicity / dominance / norm criteria.
fn small_synthetic_run(noise: f64, seed: u64, ks: &[usize]) -> SmallRun {
    let synth = SynthConfig {
        n_engineers: 50,
        n_components: 5,
        n_incidents: 1500,
        n_kbas: 120,
        experts_per_component: 5,
        vocab_per_component: 40,
        shared_vocab: 80,
        text_len: 30,
        noise,
        seed,
        ..SynthConfig::default()
    };
    let generated = generate(&synth).unwrap();
    let corpus = join_generated(&generated).unwrap();
    let span = (synth.date_end - synth.date_start).num_days();
    let (train_corpus, val_corpus, test_corpus) = expertmatch::ingest::split_by_time(
        &corpus,
        synth.date_start + chrono::Duration::days(span * 70 / 100),
        synth.date_start + chrono::Duration::days(span * 85 / 100),
    )
    .unwrap();
    let vocab = fit_vocabulary(&corpus_documents(&train_corpus), 2, 0.95).unwrap();
    let encoder = ComponentEncoder::fit(&corpus);
    let features = build_node_features(&train_corpus, &vocab, &encoder, 64, seed, None);
    let graph = build_graph(&train_corpus);
    let dims = GnnDims {
        input_dim: features.dim(),
        layers: 2,
        d_msg: 32,
        hidden: 32,
        embed_dim: 16,
    };
    let model = GnnModel::init(dims, seed).unwrap();
    let walk = WalkConfig::default();
    let ctx = TrainContext {
        graph: &graph,
        features: &features,
        train_corpus: &train_corpus,
        val_corpus: &val_corpus,
        vocab: &vocab,
        encoder: &encoder,
        walk_config: walk,
        seed,
        query_inference_parity: true,
    };
    let config = TrainConfig {
        epochs: 3,
        batch_size: 64,
        negatives_per_positive: 2,
        hard_negative_fraction: 0.25,
        patience: 3,
        eval_k: 10,
        seed,
        ..TrainConfig::default()
    };
    let (best, _history) = train(model, &ctx, &config).unwrap();

    // Norm audit over every node kind.
    let nodes: Vec<NodeId> = graph.nodes().to_vec();
    let embedded = embed_nodes(&best, &graph, &features, &nodes, &walk, seed, None).unwrap();
    let mut flagged_zero = 0usize;
    let mut max_norm_err = 0.0f64;
    for (_, emb) in &embedded {
        if emb.is_zero() {
            flagged_zero += 1;
        } else {
            max_norm_err = max_norm_err.max((emb.norm() - 1.0).abs());
        }
    }

    let index = build_engineer_index(&best, &graph, &features, &walk, seed, None).unwrap();
    let gnn_ranker = GnnRanker {
        model: &best,
        graph: &graph,
        features: &features,
        vocab: &vocab,
        encoder: &encoder,
        index: &index,
        walk_config: walk,
        seed,
        lambda: 0.5,
    };
    let tfidf = TfidfRanker::new(&train_corpus, vocab.clone(), ScorePooling::Max).unwrap();
    let weighted =
        WeightedFeatureRanker::new(&train_corpus, vocab.clone(), StaticWeights::default());
    let popularity = PopularityRanker::new(&train_corpus);
    let random = RandomRanker::new(train_corpus.engineer_ids(), seed);
    let oracle = OracleRanker {
        truth: generated.truth.clone(),
        engineers: train_corpus.engineer_ids(),
    };
    let cases = build_cases(&test_corpus);
    assert!(!cases.is_empty());
    let adapter = RankerAdapter(&gnn_ranker);
    let rankers: Vec<&dyn Ranker> = vec![&adapter, &tfidf, &weighted, &popularity, &random, &oracle];
    let reports = rankers
        .iter()
        .map(|r| evaluate(*r, &cases, ks, None, seed).unwrap())
        .collect();
    SmallRun {
        corpus,
        truth: generated.truth,
        cases,
        reports,
        flagged_zero,
        norms_checked: embedded.len(),
        max_norm_err,
    }
}

/// Criterion: hit ratio is non-decreasing in k for every ranker, and top-k
/// lists are prefixes of top-k' lists for k <= k'.
#[test]
fn criterion_monotonicity_suite() {
    let ks = [5usize, 10, 25, 50, 100];
    let run = small_synthetic_run(0.2, 7, &ks);
    for report in &run.reports {
        for window in report.hits.windows(2) {
            assert!(
                window[0].1 <= window[1].1 + 1e-12,
                "{}: hit@{} = {} > hit@{} = {}",
                report.ranker,
                window[0].0,
                window[0].1,
                window[1].0,
                window[1].1
            );
        }
    }
    // Prefix property on concrete ranked lists.
    let random = RandomRanker::new(run.corpus.engineer_ids(), 3);
    for case in run.cases.iter().take(20) {
        let ranked = random.rank(case).unwrap();
        for k in 0..ranked.len() {
            assert_eq!(ranked.top_k(k), &ranked.top_k(k + 1)[..k]);
        }
    }
    pass(
        "monotonicity-suite",
        &format!(
            "hit ratios non-decreasing in k for {} rankers at ks {:?}; prefix property verified",
            run.reports.len(),
            ks
        ),
    );
}

/// Criterion: random_rank hit@50 with 200 engineers and single-truth cases
/// is 0.25 +/- 0.02 over at least 10^4 cases.
#[test]
fn criterion_random_baseline_calibration() {
    let n = 200usize;
    let engineers: Vec<String> = (0..n).map(|i| format!("E{i:04}")).collect();
    let random = RandomRanker::new(engineers.clone(), 11);
    let trials = 10_000usize;
    let mut hits = 0u32;
    let mut rng = keyed_rng(11, "calibration-truth");
    for t in 0..trials {
        let ranked = random.permutation(&format!("case{t}"));
        let truth: BTreeSet<String> =
            [engineers[rng.gen_range(0..n)].clone()].into_iter().collect();
        hits += hit_at_k(&ranked, &truth, 50).unwrap();
    }
    let ratio = f64::from(hits) / trials as f64;
    assert!(
        (ratio - 0.25).abs() <= 0.02,
        "random hit@50 = {ratio}, expected 0.25 +/- 0.02"
    );
    pass(
        "random-baseline-calibration",
        &format!("hit@50 = {ratio:.4} over {trials} single-truth cases (0.25 +/- 0.02)"),
    );
}

/// Criterion: with noise = 0, the planted-truth oracle achieves hit@50 = 1.0
/// exactly and weakly dominates every other ranker at every k.
#[test]
fn criterion_oracle_dominance() {
    let ks = [5usize, 10, 25, 50];
    let run = small_synthetic_run(0.0, 9, &ks);
    let oracle = run
        .reports
        .iter()
        .find(|r| r.ranker == "oracle")
        .expect("oracle report");
    assert_eq!(
        ratio(oracle, 50),
        1.0,
        "oracle hit@50 must be exactly 1.0 at noise = 0"
    );
    for report in &run.reports {
        for &(k, r) in &report.hits {
            assert!(
                ratio(oracle, k) + 1e-12 >= r,
                "oracle {} < {} {} at k={k}",
                ratio(oracle, k),
                report.ranker,
                r
            );
        }
    }
    let _ = &run.truth;
    pass(
        "oracle-dominance",
        &format!(
            "noise = 0: oracle hit@50 = 1.0 exactly; weakly dominates {} rankers at ks {:?}",
            run.reports.len() - 1,
            ks
        ),
    );
}

/// Criterion: TF-IDF vectorizer output matches an independent brute-force
/// implementation of tf, idf and L2 normalization to 1e-9 on a 5-document
/// fixture.
#[test]
fn criterion_tfidf_correctness() {
    let documents: Vec<String> = [
        "soap adapter timeout when exporting ledger",
        "payroll run aborts with rounding error",
        "login fails after certificate rotation",
        "ledger export slow timeout adapter",
        "rounding differences in payroll export",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let vocab = fit_vocabulary(&documents, 1, 1.0).unwrap();

    // Independent brute-force oracle, scalar loops only.
    let tokenize = |text: &str| -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| t.chars().count() >= 2)
            .map(|t| t.to_lowercase())
            .collect()
    };
    let n = documents.len() as f64;
    let mut worst = 0.0f64;
    for query in &documents {
        let mut df: std::collections::BTreeMap<String, f64> = Default::default();
        for d in &documents {
            let mut seen = BTreeSet::new();
            for t in tokenize(d) {
                seen.insert(t);
            }
            for t in seen {
                *df.entry(t).or_insert(0.0) += 1.0;
            }
        }
        let mut tf: std::collections::BTreeMap<String, f64> = Default::default();
        for t in tokenize(query) {
            *tf.entry(t).or_insert(0.0) += 1.0;
        }
        let mut expected: std::collections::BTreeMap<String, f64> = Default::default();
        for (t, count) in &tf {
            if let Some(dft) = df.get(t) {
                expected.insert(t.clone(), count * (((1.0 + n) / (1.0 + dft)).ln() + 1.0));
            }
        }
        let norm = expected.values().map(|w| w * w).sum::<f64>().sqrt();
        for w in expected.values_mut() {
            *w /= norm;
        }

        let got = tfidf_vector(&vocab, query);
        assert_eq!(got.entries.len(), expected.len());
        for (idx, w) in &got.entries {
            let term = vocab.term_at(*idx);
            let diff = (w - expected[term]).abs();
            assert!(diff < 1e-9, "term {term}: {w} vs {}", expected[term]);
            worst = worst.max(diff);
        }
    }
    pass(
        "tfidf-correctness",
        &format!("5-document fixture, max deviation {worst:.2e} < 1e-9"),
    );
}

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_expertmatch")
}

fn run_binary(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(binary())
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn small_cli_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.conf");
    std::fs::write(
        &path,
        "manifest = corpus/corpus.manifest\nout_dir = out\nseed = 5\n\
         deterministic = true\n\
         synth.n_engineers = 30\nsynth.n_components = 5\nsynth.n_incidents = 700\n\
         synth.n_kbas = 60\nsynth.experts_per_component = 4\nsynth.vocab_per_component = 30\n\
         synth.shared_vocab = 60\nsynth.text_len = 24\n\
         featurize.p = 32\ngnn.layers = 2\ngnn.d_msg = 16\ngnn.hidden = 16\ngnn.embed_dim = 8\n\
         train.epochs = 2\ntrain.batch_size = 32\ntrain.negatives_per_positive = 2\n\
         train.patience = 2\ntrain.eval_k = 10\neval.ks = 10,25,50\n",
    )
    .unwrap();
    path
}

/// Criterion: cmd_train and cmd_bench in deterministic mode with a fixed
/// seed produce byte-identical checkpoints and reports across two runs.
#[test]
fn criterion_determinism() {
    let dir = tempfile::tempdir().unwrap();
    small_cli_config(dir.path());
    let synth = run_binary(&["synth", "run.conf"], dir.path());
    assert!(synth.status.success(), "{}", String::from_utf8_lossy(&synth.stderr));
    for out in ["out_a", "out_b"] {
        let train = run_binary(
            &["train", "run.conf", "--out", out, "--deterministic"],
            dir.path(),
        );
        assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
        let bench = run_binary(
            &["bench", "run.conf", "--out", out, "--deterministic"],
            dir.path(),
        );
        assert!(bench.status.success(), "{}", String::from_utf8_lossy(&bench.stderr));
    }
    let mut compared = Vec::new();
    for name in [
        "model.ckpt",
        "engineer_index.tsv",
        "history.csv",
        "vocab.tsv",
        "graph.edges",
        "bench.csv",
        "bench.txt",
    ] {
        let a = std::fs::read(dir.path().join("out_a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("out_b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
        compared.push(name);
    }
    pass(
        "determinism",
        &format!("byte-identical across two train+bench runs: {}", compared.join(", ")),
    );
}

/// Criterion: every emitted embedding has unit L2 norm within 1e-6, with
/// flagged zero-vector exceptions excluded and counted.
#[test]
fn criterion_embedding_norm_invariant() {
    let run = small_synthetic_run(0.2, 21, &[10, 50]);
    assert!(
        run.max_norm_err <= 1e-6,
        "worst norm deviation {} over {} embeddings",
        run.max_norm_err,
        run.norms_checked
    );
    pass(
        "embedding-norm-invariant",
        &format!(
            "{} embeddings (all node kinds), worst |norm - 1| = {:.2e} <= 1e-6, {} flagged zero vectors",
            run.norms_checked, run.max_norm_err, run.flagged_zero
        ),
    );
}

/// Criterion: the derived edge multiset on a <= 50-record fixture equals an
/// independent edge-derivation oracle exactly.
#[test]
fn criterion_graph_derivation() {
    let synth = SynthConfig {
        n_engineers: 12,
        n_components: 4,
        n_incidents: 25,
        n_kbas: 8,
        experts_per_component: 3,
        vocab_per_component: 20,
        shared_vocab: 30,
        text_len: 16,
        seed: 77,
        ..SynthConfig::default()
    };
    let generated = generate(&synth).unwrap();
    let corpus = join_generated(&generated).unwrap();
    let graph = build_graph(&corpus);

    // Independent oracle: re-derive every edge from the record definitions.
    let mut expected: BTreeSet<(EdgeType, NodeId, NodeId)> = BTreeSet::new();
    let mut put = |t: EdgeType, a: NodeId, b: NodeId| {
        if a != b {
            let (x, y) = if a <= b { (a, b) } else { (b, a) };
            expected.insert((t, x, y));
        }
    };
    for incident in &corpus.incidents {
        let node = NodeId::incident(&incident.incident_id);
        if let Some(resolver) = Corpus::resolver_of(incident) {
            put(EdgeType::Resolved, NodeId::engineer(resolver), node.clone());
            for participant in Corpus::participants_of(incident) {
                put(EdgeType::Participated, NodeId::engineer(participant), node.clone());
            }
        }
        for (i, a) in incident.processor_ids.iter().enumerate() {
            for b in &incident.processor_ids[i + 1..] {
                put(EdgeType::SwarmedWith, NodeId::engineer(a), NodeId::engineer(b));
            }
        }
        for component in &incident.component_ids {
            put(EdgeType::Tagged, node.clone(), NodeId::component(component));
        }
    }
    for kba in &corpus.kbas {
        let node = NodeId::kba(&kba.kba_id);
        put(EdgeType::Authored, NodeId::engineer(&kba.responsible_id), node.clone());
        for p in &kba.processor_ids {
            put(EdgeType::Authored, NodeId::engineer(p), node.clone());
        }
        put(EdgeType::Tagged, node.clone(), NodeId::component(&kba.component_id));
    }
    for swarm in &corpus.swarms {
        let mut members = vec![swarm.requestor_id.clone()];
        members.extend(swarm.responder_ids.iter().cloned());
        for (i, a) in members.iter().enumerate() {
            for b in &members[i + 1..] {
                put(EdgeType::SwarmedWith, NodeId::engineer(a), NodeId::engineer(b));
            }
        }
        for kba_id in &swarm.kba_ids {
            put(
                EdgeType::Documents,
                NodeId::kba(kba_id),
                NodeId::incident(&swarm.incident_id),
            );
        }
    }
    let expected: Vec<_> = expected.into_iter().collect();
    let got = graph.edge_multiset();
    assert_eq!(got, expected, "edge multiset mismatch");
    pass(
        "graph-derivation",
        &format!(
            "{} edges on a {}-incident fixture match the independent oracle exactly",
            got.len(),
            corpus.incidents.len()
        ),
    );
}

/// Criterion: no evaluation-case query text contains the resolution
/// sentinel planted by the generator.
#[test]
fn criterion_leakage_guard() {
    let synth = SynthConfig {
        n_engineers: 40,
        n_components: 6,
        n_incidents: 2000,
        n_kbas: 100,
        experts_per_component: 5,
        vocab_per_component: 30,
        shared_vocab: 60,
        text_len: 24,
        seed: 31,
        ..SynthConfig::default()
    };
    let generated = generate(&synth).unwrap();
    let corpus = join_generated(&generated).unwrap();
    let cases = build_cases(&corpus);
    assert!(!cases.is_empty());
    for case in &cases {
        assert!(
            !case.query.description.contains(RESOLUTION_SENTINEL)
                && !case.query.communication.contains(RESOLUTION_SENTINEL),
            "sentinel leaked into query {}",
            case.query.incident_id
        );
    }
    pass(
        "leakage-guard",
        &format!("{} cases, no query text contains the resolution sentinel", cases.len()),
    );
}
