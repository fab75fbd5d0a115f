//! Top-k hit-ratio evaluation over test incidents and comparison tables
//! across rankers, including published reference rows.
//!
//! An evaluation case pairs a query (with communication truncated to
//! pre-resolution content, so outcome text never leaks into the ranking
//! input) with the truth set of engineers who actually resolved or
//! swarm-responded to the incident.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::ingest::{join_messages, parse_messages, Corpus};
use crate::par::par_map;
use crate::rank::{Query, RankedList};
use crate::util::keyed_rng;

/// One test incident: the pre-resolution query and the engineers who truly
/// handled it (final resolver plus swarm responders).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub query: Query,
    pub truth: BTreeSet<String>,
}

/// Build evaluation cases from a corpus split. Incidents without a resolver
/// are context, not targets, and are skipped. Communication is cut at the
/// first message authored by any truth engineer.
pub fn build_cases(split: &Corpus) -> Vec<EvalCase> {
    let engineer_ids: BTreeSet<&str> = split
        .engineers
        .iter()
        .map(|e| e.engineer_id.as_str())
        .collect();
    let mut cases = Vec::new();
    for incident in &split.incidents {
        let resolver = match Corpus::resolver_of(incident) {
            Some(r) => r,
            None => continue,
        };
        let mut truth: BTreeSet<String> = BTreeSet::new();
        if engineer_ids.contains(resolver) {
            truth.insert(resolver.to_string());
        }
        if let Some(swarm_indices) = split.swarms_of.get(&incident.incident_id) {
            for &idx in swarm_indices {
                for responder in &split.swarms[idx].responder_ids {
                    if engineer_ids.contains(responder.as_str()) {
                        truth.insert(responder.clone());
                    }
                }
            }
        }
        if truth.is_empty() {
            continue;
        }
        let messages = parse_messages(&incident.communication_summary);
        let visible: Vec<_> = messages
            .into_iter()
            .take_while(|m| !truth.contains(&m.author))
            .collect();
        cases.push(EvalCase {
            query: Query {
                incident_id: incident.incident_id.clone(),
                description: incident.description.clone(),
                communication: join_messages(&visible),
                component_ids: incident.component_ids.clone(),
                current_swarm: Vec::new(),
            },
            truth,
        });
    }
    cases
}

/// 1 iff any truth engineer appears among the first `min(k, len)` entries.
pub fn hit_at_k(ranked: &RankedList, truth: &BTreeSet<String>, k: usize) -> Result<u32> {
    if truth.is_empty() {
        return Err(Error::data("hit_at_k called with an empty truth set"));
    }
    if k == 0 {
        return Err(Error::config("hit_at_k requires k >= 1"));
    }
    let hit = ranked
        .top_k(k)
        .iter()
        .any(|(id, _)| truth.contains(id));
    Ok(u32::from(hit))
}

/// Anything that can rank engineers for an evaluation case.
pub trait Ranker: Sync {
    fn name(&self) -> &str;
    fn rank(&self, case: &EvalCase) -> Result<RankedList>;
}

/// Per-ranker hit ratios at each k.
#[derive(Debug, Clone, PartialEq)]
pub struct HitReport {
    pub ranker: String,
    pub sample_size: usize,
    /// k -> hit ratio in [0, 1].
    pub hits: Vec<(usize, f64)>,
    pub seconds: f64,
}

impl HitReport {
    pub fn ratio_at(&self, k: usize) -> Option<f64> {
        self.hits.iter().find(|(kk, _)| *kk == k).map(|(_, r)| *r)
    }
}

/// Evaluate a ranker over cases, optionally on a seeded uniform subsample,
/// and average hit@k per k. Cases are ranked independently and in parallel.
pub fn evaluate<R: Ranker + ?Sized>(
    ranker: &R,
    cases: &[EvalCase],
    ks: &[usize],
    sample_size: Option<usize>,
    seed: u64,
) -> Result<HitReport> {
    if cases.is_empty() {
        return Err(Error::data("evaluate called with zero cases"));
    }
    if ks.is_empty() {
        return Err(Error::config("evaluate needs at least one k"));
    }
    let sampled: Vec<&EvalCase> = match sample_size {
        Some(m) if m < cases.len() => {
            let mut indices: Vec<usize> = (0..cases.len()).collect();
            let mut rng = keyed_rng(seed, "eval-sample");
            indices.shuffle(&mut rng);
            indices.truncate(m);
            indices.sort_unstable();
            indices.into_iter().map(|i| &cases[i]).collect()
        }
        _ => cases.iter().collect(),
    };
    let started = Instant::now();
    let per_case: Vec<Result<Vec<u32>>> = par_map(&sampled, |case| {
        let ranked = ranker.rank(case)?;
        ks.iter()
            .map(|&k| hit_at_k(&ranked, &case.truth, k))
            .collect()
    });
    let mut totals = vec![0u64; ks.len()];
    for row in per_case {
        for (t, h) in totals.iter_mut().zip(row?) {
            *t += u64::from(h);
        }
    }
    let n = sampled.len();
    let hits = ks
        .iter()
        .zip(&totals)
        .map(|(&k, &t)| (k, t as f64 / n as f64))
        .collect();
    Ok(HitReport {
        ranker: ranker.name().to_string(),
        sample_size: n,
        hits,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// A published reference row displayed alongside measured reports.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRow {
    pub ranker: String,
    pub hits: Vec<(usize, f64)>,
}

/// Published hit ratios for the 10K example set, shown for side-by-side
/// display only; they come from proprietary data and are not reproduced here.
pub fn reference_rows_10k() -> Vec<ReferenceRow> {
    let row = |name: &str, h50: f64, h100: f64, h200: f64| ReferenceRow {
        ranker: name.to_string(),
        hits: vec![(50, h50), (100, h100), (200, h200)],
    };
    vec![
        row("TF-IDF (10K)", 0.48, 0.58, 0.68),
        row("Random Forest (10K)", 0.0065, 0.015, 0.043),
        row("XGBoost (10K)", 0.011, 0.023, 0.101),
        row("Knowledge Graph with PinSage and embeddings (10K)", 0.64, 0.77, 0.85),
    ]
}

/// Published hit ratios for the 100K example set.
pub fn reference_rows_100k() -> Vec<ReferenceRow> {
    let row = |name: &str, h50: f64, h100: f64, h200: f64| ReferenceRow {
        ranker: name.to_string(),
        hits: vec![(50, h50), (100, h100), (200, h200)],
    };
    vec![
        row("TF-IDF (100K)", 0.35, 0.59, 0.55),
        row("Random Forest (100K)", 0.007, 0.012, 0.02),
        row("XGBoost (100K)", 0.01, 0.014, 0.021),
        row("Knowledge Graph with PinSage and embeddings (100K)", 0.70, 0.65, 0.78),
    ]
}

/// Comparison table rows: measured reports first, then reference rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub ranker: String,
    pub sample_size: usize,
    pub k: usize,
    pub hit_ratio: f64,
    pub seconds: f64,
    /// "measured" or "paper-table-1" (published, not reproduced).
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub ks: Vec<usize>,
    pub rows: Vec<ComparisonRow>,
}

/// Assemble a comparison table. All measured reports must share the same k
/// sequence; reference rows contribute only the ks the reports use.
pub fn compare(reports: &[HitReport], references: &[ReferenceRow]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::data("compare needs at least one report"));
    }
    let ks: Vec<usize> = reports[0].hits.iter().map(|(k, _)| *k).collect();
    for report in reports {
        let this: Vec<usize> = report.hits.iter().map(|(k, _)| *k).collect();
        if this != ks {
            return Err(Error::data(format!(
                "report {} has ks {:?}, expected {:?}",
                report.ranker, this, ks
            )));
        }
    }
    let mut rows = Vec::new();
    for report in reports {
        for &(k, ratio) in &report.hits {
            rows.push(ComparisonRow {
                ranker: report.ranker.clone(),
                sample_size: report.sample_size,
                k,
                hit_ratio: ratio,
                seconds: report.seconds,
                source: "measured".to_string(),
            });
        }
    }
    for reference in references {
        for &(k, ratio) in &reference.hits {
            if ks.contains(&k) {
                rows.push(ComparisonRow {
                    ranker: reference.ranker.clone(),
                    sample_size: 0,
                    k,
                    hit_ratio: ratio,
                    seconds: 0.0,
                    source: "paper-table-1".to_string(),
                });
            }
        }
    }
    Ok(ComparisonTable { ks, rows })
}

impl ComparisonTable {
    /// `ranker,n,k,hit_ratio,seconds,source` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ranker,n,k,hit_ratio,seconds,source\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.ranker, row.sample_size, row.k, row.hit_ratio, row.seconds, row.source
            ));
        }
        out
    }

    /// Exact-value round trip of [`ComparisonTable::to_csv`].
    pub fn from_csv(text: &str) -> Result<ComparisonTable> {
        let mut rows = Vec::new();
        let mut ks: Vec<usize> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 6 {
                return Err(Error::data(format!(
                    "comparison csv line {} has {} fields, expected 6",
                    lineno + 1,
                    parts.len()
                )));
            }
            let k: usize = parts[2]
                .parse()
                .map_err(|e| Error::data(format!("csv k: {e}")))?;
            if !ks.contains(&k) {
                ks.push(k);
            }
            rows.push(ComparisonRow {
                ranker: parts[0].to_string(),
                sample_size: parts[1]
                    .parse()
                    .map_err(|e| Error::data(format!("csv n: {e}")))?,
                k,
                hit_ratio: parts[3]
                    .parse()
                    .map_err(|e| Error::data(format!("csv hit_ratio: {e}")))?,
                seconds: parts[4]
                    .parse()
                    .map_err(|e| Error::data(format!("csv seconds: {e}")))?,
                source: parts[5].to_string(),
            });
        }
        ks.sort_unstable();
        Ok(ComparisonTable { ks, rows })
    }

    /// Aligned plain-text table, one line per ranker with a column per k.
    /// Reference rows are marked "published, not reproduced".
    pub fn to_text(&self) -> String {
        let mut names: Vec<(String, String)> = Vec::new();
        for row in &self.rows {
            let pair = (row.ranker.clone(), row.source.clone());
            if !names.contains(&pair) {
                names.push(pair);
            }
        }
        let name_width = names
            .iter()
            .map(|(n, _)| n.len())
            .chain(["ranker".len()])
            .max()
            .unwrap();
        let mut out = format!("{:<name_width$}", "ranker");
        for k in &self.ks {
            out.push_str(&format!("  {:>8}", format!("top-{k}")));
        }
        out.push_str("  note\n");
        for (name, source) in names {
            out.push_str(&format!("{name:<name_width$}"));
            for k in &self.ks {
                let cell = self
                    .rows
                    .iter()
                    .find(|r| r.ranker == name && r.source == source && r.k == *k)
                    .map(|r| format!("{:>8.4}", r.hit_ratio))
                    .unwrap_or_else(|| format!("{:>8}", "-"));
                out.push_str(&format!("  {cell}"));
            }
            if source == "paper-table-1" {
                out.push_str("  published, not reproduced");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{
        join_corpus, ComponentRecord, EngineerRecord, IncidentRecord, SwarmRecord,
    };
    use crate::rank::RankedList;

    fn list(ids: &[&str]) -> RankedList {
        let n = ids.len();
        RankedList::from_scores(
            ids.iter()
                .enumerate()
                .map(|(i, id)| (id.to_string(), (n - i) as f64))
                .collect(),
        )
    }

    fn truth(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hit_at_k_examples() {
        let ranked = list(&["e1", "e2", "e3"]);
        assert_eq!(hit_at_k(&ranked, &truth(&["e1"]), 50).unwrap(), 1);
        assert_eq!(hit_at_k(&ranked, &truth(&["e3"]), 2).unwrap(), 0);
        // k beyond the list length still hits when truth is present.
        assert_eq!(hit_at_k(&ranked, &truth(&["e3"]), 10).unwrap(), 1);
        assert!(hit_at_k(&ranked, &BTreeSet::new(), 5).is_err());
    }

    /// Boundary from the definition: a truth engineer at rank 51 misses k=50.
    #[test]
    fn hit_at_k_rank_boundary() {
        let ids: Vec<String> = (0..60).map(|i| format!("e{i:02}")).collect();
        let refs: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
        let ranked = list(&refs);
        let at_51 = truth(&[refs[50]]);
        assert_eq!(hit_at_k(&ranked, &at_51, 50).unwrap(), 0);
        assert_eq!(hit_at_k(&ranked, &at_51, 51).unwrap(), 1);
    }

    struct FixedRanker(Vec<String>);

    impl Ranker for FixedRanker {
        fn name(&self) -> &str {
            "fixed"
        }
        fn rank(&self, _case: &EvalCase) -> Result<RankedList> {
            let n = self.0.len();
            Ok(RankedList::from_scores(
                self.0
                    .iter()
                    .enumerate()
                    .map(|(i, id)| (id.clone(), (n - i) as f64))
                    .collect(),
            ))
        }
    }

    fn case(id: &str, truth_ids: &[&str]) -> EvalCase {
        EvalCase {
            query: Query {
                incident_id: id.to_string(),
                description: String::new(),
                communication: String::new(),
                component_ids: vec![],
                current_swarm: vec![],
            },
            truth: truth(truth_ids),
        }
    }

    #[test]
    fn evaluate_single_case_with_truth_on_top() {
        let ranker = FixedRanker(vec!["e1".into(), "e2".into()]);
        let report = evaluate(&ranker, &[case("I1", &["e1"])], &[1, 2, 5], None, 0).unwrap();
        for (_, ratio) in &report.hits {
            assert_eq!(*ratio, 1.0);
        }
        assert_eq!(report.sample_size, 1);
    }

    #[test]
    fn evaluate_means_match_independent_recount() {
        let ranker = FixedRanker((0..10).map(|i| format!("e{i}")).collect());
        let cases: Vec<EvalCase> = (0..30)
            .map(|i| case(&format!("I{i}"), &[&format!("e{}", i % 10)]))
            .collect();
        let ks = [1usize, 3, 5];
        let report = evaluate(&ranker, &cases, &ks, None, 0).unwrap();
        // Independent recount: case i has truth e_{i%10}, ranked at position
        // i%10 + 1; hit at k iff i%10 < k.
        for (ki, &k) in ks.iter().enumerate() {
            let expected = (0..30).filter(|i| i % 10 < k).count() as f64 / 30.0;
            assert!((report.hits[ki].1 - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_subsample_is_seeded_and_bounded() {
        let ranker = FixedRanker(vec!["e1".into()]);
        let cases: Vec<EvalCase> = (0..100).map(|i| case(&format!("I{i}"), &["e1"])).collect();
        let a = evaluate(&ranker, &cases, &[1], Some(10), 7).unwrap();
        let b = evaluate(&ranker, &cases, &[1], Some(10), 7).unwrap();
        assert_eq!(a.sample_size, 10);
        assert_eq!(a.hits, b.hits);
    }

    #[test]
    fn compare_requires_matching_ks() {
        let r1 = HitReport {
            ranker: "a".into(),
            sample_size: 5,
            hits: vec![(50, 0.5), (100, 0.7)],
            seconds: 0.0,
        };
        let mut r2 = r1.clone();
        r2.ranker = "b".into();
        assert!(compare(&[r1.clone(), r2], &[]).is_ok());
        let r3 = HitReport {
            ranker: "c".into(),
            sample_size: 5,
            hits: vec![(50, 0.5)],
            seconds: 0.0,
        };
        assert!(compare(&[r1, r3], &[]).is_err());
    }

    #[test]
    fn identical_reports_produce_identical_rows() {
        let r = HitReport {
            ranker: "same".into(),
            sample_size: 9,
            hits: vec![(50, 0.25)],
            seconds: 1.5,
        };
        let table = compare(&[r.clone(), r], &[]).unwrap();
        assert_eq!(table.rows[0], {
            let mut row = table.rows[1].clone();
            row.ranker = table.rows[0].ranker.clone();
            row
        });
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let reports = vec![HitReport {
            ranker: "gnn".into(),
            sample_size: 123,
            hits: vec![(50, 0.123456789012345), (100, 2.0 / 3.0), (200, 1.0)],
            seconds: 12.75,
        }];
        let table = compare(&reports, &reference_rows_10k()).unwrap();
        let csv = table.to_csv();
        let parsed = ComparisonTable::from_csv(&csv).unwrap();
        assert_eq!(parsed.rows.len(), table.rows.len());
        for (a, b) in table.rows.iter().zip(&parsed.rows) {
            assert_eq!(a.ranker, b.ranker);
            assert_eq!(a.k, b.k);
            // Shortest round-trip formatting parses back to the same bits.
            assert_eq!(a.hit_ratio.to_bits(), b.hit_ratio.to_bits());
            assert_eq!(a.seconds.to_bits(), b.seconds.to_bits());
        }
    }

    #[test]
    fn reference_rows_are_labeled_not_reproduced() {
        let reports = vec![HitReport {
            ranker: "gnn".into(),
            sample_size: 10,
            hits: vec![(50, 0.5), (100, 0.6), (200, 0.9)],
            seconds: 0.1,
        }];
        let table = compare(&reports, &reference_rows_10k()).unwrap();
        assert!(table.rows.iter().any(|r| r.source == "paper-table-1"));
        let text = table.to_text();
        assert!(text.contains("published, not reproduced"));
        let csv = table.to_csv();
        assert!(csv.contains("paper-table-1"));
    }

    #[test]
    fn cases_truncate_communication_before_truth_messages() {
        let incidents = vec![IncidentRecord {
            incident_id: "I1".into(),
            description: "export failing".into(),
            communication_summary: "customer: it fails || e2: checking logs || e1: zz fixed"
                .into(),
            processor_ids: vec!["e2".into(), "e1".into()],
            component_ids: vec!["C1".into()],
            created_date: "2019-05-01".parse().unwrap(),
            confirmed_date: None,
        }];
        let engineers = vec![
            EngineerRecord { engineer_id: "e1".into(), expertise: Default::default() },
            EngineerRecord { engineer_id: "e2".into(), expertise: Default::default() },
            EngineerRecord { engineer_id: "e3".into(), expertise: Default::default() },
        ];
        let swarms = vec![SwarmRecord {
            swarm_id: "S1".into(),
            incident_id: "I1".into(),
            requestor_id: "e2".into(),
            responder_ids: vec!["e3".into()],
            kba_ids: vec![],
            component_id: "C1".into(),
            created_date: "2019-05-02".parse().unwrap(),
        }];
        let components = vec![ComponentRecord { component_id: "C1".into(), description: "c".into() }];
        let (corpus, _) =
            join_corpus(incidents, engineers, vec![], swarms, components, 10).unwrap();
        let cases = build_cases(&corpus);
        assert_eq!(cases.len(), 1);
        // Truth is resolver e1 plus responder e3.
        assert_eq!(cases[0].truth, truth(&["e1", "e3"]));
        // e2 is not truth, so its message survives; e1's resolution text is cut.
        assert!(cases[0].query.communication.contains("checking logs"));
        assert!(!cases[0].query.communication.contains("fixed"));
    }

    #[test]
    fn incidents_without_processors_are_not_cases() {
        let incidents = vec![IncidentRecord {
            incident_id: "I1".into(),
            description: "x".into(),
            communication_summary: String::new(),
            processor_ids: vec![],
            component_ids: vec!["C1".into()],
            created_date: "2019-05-01".parse().unwrap(),
            confirmed_date: None,
        }];
        let engineers = vec![EngineerRecord { engineer_id: "e1".into(), expertise: Default::default() }];
        let components = vec![ComponentRecord { component_id: "C1".into(), description: "c".into() }];
        let (corpus, _) = join_corpus(incidents, engineers, vec![], vec![], components, 10).unwrap();
        assert!(build_cases(&corpus).is_empty());
    }
}
