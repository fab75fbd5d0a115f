//! Non-graph ranking baselines: TF-IDF cosine retrieval over per-engineer
//! document profiles, a predefined-weight feature scorer, resolution-count
//! popularity, and a seeded random control.
//!
//! All baselines are built from the training split only and return full
//! permutations of the engineer set with deterministic tie-breaks.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::evalbench::{EvalCase, Ranker};
use crate::featurize::{tfidf_vector, SparseVector, Vocabulary};
use crate::ingest::Corpus;
use crate::rank::RankedList;
use crate::util::keyed_rng;

/// How an engineer's per-document similarities pool into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScorePooling {
    /// An expert is as relevant as their most similar document.
    #[default]
    Max,
    Mean,
}

/// TF-IDF vectors of the documents attributed to each engineer: authored
/// KBAs plus the communication summaries of incidents they processed.
#[derive(Debug, Clone)]
pub struct EngineerDocProfile {
    pub docs: BTreeMap<String, Vec<SparseVector>>,
}

/// Build profiles from the training split. Engineers with no documents get
/// an empty list (and score 0 everywhere).
pub fn build_profiles(train: &Corpus, vocab: &Vocabulary) -> EngineerDocProfile {
    let mut docs: BTreeMap<String, Vec<SparseVector>> = BTreeMap::new();
    for engineer in &train.engineers {
        docs.insert(engineer.engineer_id.clone(), Vec::new());
    }
    for (engineer_id, kba_indices) in &train.kbas_by {
        if let Some(list) = docs.get_mut(engineer_id) {
            for &idx in kba_indices {
                let v = tfidf_vector(vocab, &train.kbas[idx].full_text);
                if !v.is_zero() {
                    list.push(v);
                }
            }
        }
    }
    for incident in &train.incidents {
        if incident.processor_ids.is_empty() || incident.communication_summary.is_empty() {
            continue;
        }
        let v = tfidf_vector(vocab, &incident.communication_summary);
        if v.is_zero() {
            continue;
        }
        for processor in &incident.processor_ids {
            if let Some(list) = docs.get_mut(processor) {
                list.push(v.clone());
            }
        }
    }
    EngineerDocProfile { docs }
}

fn pooled_score(docs: &[SparseVector], query: &SparseVector, pooling: ScorePooling) -> f64 {
    if docs.is_empty() || query.is_zero() {
        return 0.0;
    }
    match pooling {
        ScorePooling::Max => docs
            .iter()
            .map(|d| query.dot(d))
            .fold(0.0f64, f64::max),
        ScorePooling::Mean => {
            docs.iter().map(|d| query.dot(d)).sum::<f64>() / docs.len() as f64
        }
    }
}

/// Cosine retrieval against engineer document profiles. Vectors are unit
/// norm, so dot product equals cosine.
pub struct TfidfRanker {
    pub profiles: EngineerDocProfile,
    pub vocab: Vocabulary,
    pub pooling: ScorePooling,
}

impl TfidfRanker {
    pub fn new(train: &Corpus, vocab: Vocabulary, pooling: ScorePooling) -> Result<TfidfRanker> {
        if vocab.is_empty() {
            return Err(Error::data("tfidf ranker needs a non-empty vocabulary"));
        }
        Ok(TfidfRanker {
            profiles: build_profiles(train, &vocab),
            vocab,
            pooling,
        })
    }

    pub fn rank_text(&self, query_text: &str) -> RankedList {
        let query = tfidf_vector(&self.vocab, query_text);
        let scores: Vec<(String, f64)> = self
            .profiles
            .docs
            .iter()
            .map(|(id, docs)| (id.clone(), pooled_score(docs, &query, self.pooling)))
            .collect();
        RankedList::from_scores(scores)
    }
}

impl Ranker for TfidfRanker {
    fn name(&self) -> &str {
        "tf-idf"
    }
    fn rank(&self, case: &EvalCase) -> Result<RankedList> {
        Ok(self.rank_text(&case.query.text()))
    }
}

/// The deployed-system stand-in: a fixed linear combination of activity
/// counts, text similarity and recency. No learning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticWeights {
    pub w_solved: f64,
    pub w_kba: f64,
    pub w_text: f64,
    pub w_recency: f64,
    pub half_life_days: f64,
}

impl Default for StaticWeights {
    fn default() -> Self {
        StaticWeights {
            w_solved: 1.0,
            w_kba: 0.5,
            w_text: 1.0,
            w_recency: 0.5,
            half_life_days: 90.0,
        }
    }
}

/// Per-engineer precomputed activity features for the weighted scorer.
pub struct WeightedFeatureRanker {
    weights: StaticWeights,
    profiles: EngineerDocProfile,
    vocab: Vocabulary,
    /// engineer -> component -> resolved count.
    solved: BTreeMap<String, BTreeMap<String, usize>>,
    /// engineer -> component -> authored KBA count.
    kbas: BTreeMap<String, BTreeMap<String, usize>>,
    /// engineer -> date of last training activity.
    last_activity: BTreeMap<String, NaiveDate>,
    /// The "now" against which recency decays: newest training date.
    reference_date: NaiveDate,
    engineers: Vec<String>,
}

impl WeightedFeatureRanker {
    pub fn new(train: &Corpus, vocab: Vocabulary, weights: StaticWeights) -> WeightedFeatureRanker {
        let profiles = build_profiles(train, &vocab);
        let mut solved: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        let mut kbas: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        let mut last_activity: BTreeMap<String, NaiveDate> = BTreeMap::new();
        let mut reference_date = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
        let touch = |map: &mut BTreeMap<String, NaiveDate>, id: &str, date: NaiveDate| {
            let entry = map.entry(id.to_string()).or_insert(date);
            if date > *entry {
                *entry = date;
            }
        };
        for incident in &train.incidents {
            reference_date = reference_date.max(incident.created_date);
            if let Some(resolver) = Corpus::resolver_of(incident) {
                for component in &incident.component_ids {
                    *solved
                        .entry(resolver.to_string())
                        .or_default()
                        .entry(component.clone())
                        .or_default() += 1;
                }
            }
            for processor in &incident.processor_ids {
                touch(&mut last_activity, processor, incident.created_date);
            }
        }
        for kba in &train.kbas {
            reference_date = reference_date.max(kba.created_date);
            let mut authors = vec![kba.responsible_id.clone()];
            for p in &kba.processor_ids {
                if !authors.contains(p) {
                    authors.push(p.clone());
                }
            }
            for author in authors {
                *kbas
                    .entry(author.clone())
                    .or_default()
                    .entry(kba.component_id.clone())
                    .or_default() += 1;
                touch(&mut last_activity, &author, kba.created_date);
            }
        }
        for swarm in &train.swarms {
            reference_date = reference_date.max(swarm.created_date);
            touch(&mut last_activity, &swarm.requestor_id, swarm.created_date);
            for responder in &swarm.responder_ids {
                touch(&mut last_activity, responder, swarm.created_date);
            }
        }
        WeightedFeatureRanker {
            weights,
            profiles,
            vocab,
            solved,
            kbas,
            last_activity,
            reference_date,
            engineers: train.engineer_ids(),
        }
    }

    fn count_in_components(
        map: &BTreeMap<String, BTreeMap<String, usize>>,
        engineer: &str,
        components: &[String],
    ) -> usize {
        map.get(engineer)
            .map(|per_component| {
                components
                    .iter()
                    .filter_map(|c| per_component.get(c))
                    .sum()
            })
            .unwrap_or(0)
    }

    pub fn rank_query(&self, query_text: &str, query_components: &[String]) -> RankedList {
        let w = self.weights;
        let query_vec = tfidf_vector(&self.vocab, query_text);
        let scores: Vec<(String, f64)> = self
            .engineers
            .iter()
            .map(|id| {
                let solved =
                    Self::count_in_components(&self.solved, id, query_components) as f64;
                let kbas = Self::count_in_components(&self.kbas, id, query_components) as f64;
                let text = self
                    .profiles
                    .docs
                    .get(id)
                    .map(|docs| pooled_score(docs, &query_vec, ScorePooling::Max))
                    .unwrap_or(0.0);
                let recency = match self.last_activity.get(id) {
                    Some(date) => {
                        let days = (self.reference_date - *date).num_days().max(0) as f64;
                        (-days * std::f64::consts::LN_2 / w.half_life_days).exp()
                    }
                    None => 0.0,
                };
                let score = w.w_solved * (1.0 + solved).ln()
                    + w.w_kba * (1.0 + kbas).ln()
                    + w.w_text * text
                    + w.w_recency * recency;
                (id.clone(), score)
            })
            .collect();
        RankedList::from_scores(scores)
    }
}

impl Ranker for WeightedFeatureRanker {
    fn name(&self) -> &str {
        "weighted-features"
    }
    fn rank(&self, case: &EvalCase) -> Result<RankedList> {
        Ok(self.rank_query(&case.query.text(), &case.query.component_ids))
    }
}

/// Total resolved-incident count, descending.
pub struct PopularityRanker {
    ranked: RankedList,
}

impl PopularityRanker {
    pub fn new(train: &Corpus) -> PopularityRanker {
        let scores: Vec<(String, f64)> = train
            .engineers
            .iter()
            .map(|e| {
                let count = train
                    .resolved_by
                    .get(&e.engineer_id)
                    .map(|v| v.len())
                    .unwrap_or(0);
                (e.engineer_id.clone(), count as f64)
            })
            .collect();
        PopularityRanker { ranked: RankedList::from_scores(scores) }
    }
}

impl Ranker for PopularityRanker {
    fn name(&self) -> &str {
        "popularity"
    }
    fn rank(&self, _case: &EvalCase) -> Result<RankedList> {
        Ok(self.ranked.clone())
    }
}

/// Seeded random permutation of the engineer set. Draws are keyed by the
/// case id, so evaluation order does not matter and repeated runs agree.
pub struct RandomRanker {
    pub engineers: Vec<String>,
    pub seed: u64,
}

impl RandomRanker {
    pub fn new(engineers: Vec<String>, seed: u64) -> RandomRanker {
        RandomRanker { engineers, seed }
    }

    /// One seeded shuffle, as a ranked list with descending synthetic scores.
    pub fn permutation(&self, key: &str) -> RankedList {
        let mut ids = self.engineers.clone();
        ids.sort();
        let mut rng = keyed_rng(self.seed, &format!("random-rank:{key}"));
        ids.shuffle(&mut rng);
        let n = ids.len();
        RankedList::from_scores(
            ids.into_iter()
                .enumerate()
                .map(|(i, id)| (id, (n - i) as f64))
                .collect(),
        )
    }
}

impl Ranker for RandomRanker {
    fn name(&self) -> &str {
        "random"
    }
    fn rank(&self, case: &EvalCase) -> Result<RankedList> {
        Ok(self.permutation(&case.query.incident_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalbench::hit_at_k;
    use crate::featurize::{corpus_documents, fit_vocabulary};
    use crate::ingest::{join_corpus, ComponentRecord, EngineerRecord, IncidentRecord, KbaRecord};
    use crate::rank::Query;
    use std::collections::BTreeSet;

    fn fixture() -> Corpus {
        let incidents = vec![
            IncidentRecord {
                incident_id: "I1".into(),
                description: "payroll export stuck".into(),
                communication_summary: "e1: payroll export mapping repaired".into(),
                processor_ids: vec!["e1".into()],
                component_ids: vec!["C1".into()],
                created_date: "2019-06-01".parse().unwrap(),
                confirmed_date: None,
            },
            IncidentRecord {
                incident_id: "I2".into(),
                description: "soap timeout error".into(),
                communication_summary: "e2: increased soap adapter timeout".into(),
                processor_ids: vec!["e2".into()],
                component_ids: vec!["C2".into()],
                created_date: "2019-07-01".parse().unwrap(),
                confirmed_date: None,
            },
            IncidentRecord {
                incident_id: "I3".into(),
                description: "payroll rounding issue".into(),
                communication_summary: "e1: rounding rule adjusted in payroll".into(),
                processor_ids: vec!["e1".into()],
                component_ids: vec!["C1".into()],
                created_date: "2019-08-01".parse().unwrap(),
                confirmed_date: None,
            },
        ];
        let engineers = ["e1", "e2", "e3", "e4", "e5"]
            .iter()
            .map(|e| EngineerRecord { engineer_id: (*e).into(), expertise: Default::default() })
            .collect();
        let kbas = vec![KbaRecord {
            kba_id: "K1".into(),
            full_text: "soap adapter configuration guide".into(),
            responsible_id: "e2".into(),
            processor_ids: vec![],
            category: "guide".into(),
            component_id: "C2".into(),
            created_date: "2019-05-01".parse().unwrap(),
        }];
        let components = vec![
            ComponentRecord { component_id: "C1".into(), description: "payroll".into() },
            ComponentRecord { component_id: "C2".into(), description: "integration".into() },
        ];
        let (corpus, _) = join_corpus(incidents, engineers, kbas, vec![], components, 10).unwrap();
        corpus
    }

    fn eval_case(text: &str, components: &[&str]) -> EvalCase {
        EvalCase {
            query: Query {
                incident_id: "Q1".into(),
                description: text.into(),
                communication: String::new(),
                component_ids: components.iter().map(|s| s.to_string()).collect(),
                current_swarm: vec![],
            },
            truth: ["e1".to_string()].into_iter().collect(),
        }
    }

    #[test]
    fn identical_document_scores_one_and_ranks_first() {
        let corpus = fixture();
        let vocab = fit_vocabulary(&corpus_documents(&corpus), 1, 1.0).unwrap();
        let ranker = TfidfRanker::new(&corpus, vocab, ScorePooling::Max).unwrap();
        // Query exactly e2's KBA text.
        let ranked = ranker.rank_text("soap adapter configuration guide");
        assert_eq!(ranked.entries()[0].0, "e2");
        assert!((ranked.entries()[0].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn all_oov_query_scores_zero_in_id_order() {
        let corpus = fixture();
        let vocab = fit_vocabulary(&corpus_documents(&corpus), 1, 1.0).unwrap();
        let ranker = TfidfRanker::new(&corpus, vocab, ScorePooling::Max).unwrap();
        let ranked = ranker.rank_text("qqqq wwww zzzz");
        let ids: Vec<&str> = ranked.entries().iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["e1", "e2", "e3", "e4", "e5"]);
        assert!(ranked.entries().iter().all(|(_, s)| *s == 0.0));
    }

    #[test]
    fn tfidf_matches_brute_force_cosine() {
        let corpus = fixture();
        let vocab = fit_vocabulary(&corpus_documents(&corpus), 1, 1.0).unwrap();
        let ranker = TfidfRanker::new(&corpus, vocab.clone(), ScorePooling::Max).unwrap();
        let query_text = "payroll export timeout";
        let ranked = ranker.rank_text(query_text);

        // Brute force: for each engineer, max cosine over their documents,
        // with documents re-derived straight from the corpus definition.
        let q = tfidf_vector(&vocab, query_text);
        let mut expected: Vec<(String, f64)> = corpus
            .engineers
            .iter()
            .map(|e| {
                let mut texts: Vec<String> = Vec::new();
                for (i, kba) in corpus.kbas.iter().enumerate() {
                    let _ = i;
                    if kba.responsible_id == e.engineer_id
                        || kba.processor_ids.contains(&e.engineer_id)
                    {
                        texts.push(kba.full_text.clone());
                    }
                }
                for incident in &corpus.incidents {
                    if incident.processor_ids.contains(&e.engineer_id)
                        && !incident.communication_summary.is_empty()
                    {
                        texts.push(incident.communication_summary.clone());
                    }
                }
                let score = texts
                    .iter()
                    .map(|t| q.dot(&tfidf_vector(&vocab, t)))
                    .fold(0.0f64, f64::max);
                (e.engineer_id.clone(), score)
            })
            .collect();
        expected.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for ((a, sa), (b, sb)) in ranked.entries().iter().zip(&expected) {
            assert_eq!(a, b);
            assert!((sa - sb).abs() < 1e-12);
        }
    }

    #[test]
    fn tfidf_is_invariant_to_duplicated_documents() {
        let corpus = fixture();
        let vocab = fit_vocabulary(&corpus_documents(&corpus), 1, 1.0).unwrap();
        let mut duplicated = corpus.clone();
        duplicated.kbas.push({
            let mut k = corpus.kbas[0].clone();
            k.kba_id = "K1-copy".into();
            k
        });
        let (duplicated, _) = join_corpus(
            duplicated.incidents,
            duplicated.engineers,
            duplicated.kbas,
            duplicated.swarms,
            duplicated.components,
            10,
        )
        .unwrap();
        // Refit and rebuild both on their own corpora is not the point here:
        // same vocabulary, same query, duplicated profile document.
        let a = TfidfRanker::new(&corpus, vocab.clone(), ScorePooling::Max).unwrap();
        let b = TfidfRanker::new(&duplicated, vocab, ScorePooling::Max).unwrap();
        let qa = a.rank_text("soap adapter guide");
        let qb = b.rank_text("soap adapter guide");
        let ia: Vec<&str> = qa.entries().iter().map(|(id, _)| id.as_str()).collect();
        let ib: Vec<&str> = qb.entries().iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ia, ib);
    }

    #[test]
    fn weighted_ranker_zero_weights_gives_id_order() {
        let corpus = fixture();
        let vocab = fit_vocabulary(&corpus_documents(&corpus), 1, 1.0).unwrap();
        let weights = StaticWeights {
            w_solved: 0.0,
            w_kba: 0.0,
            w_text: 0.0,
            w_recency: 0.0,
            half_life_days: 90.0,
        };
        let ranker = WeightedFeatureRanker::new(&corpus, vocab, weights);
        let ranked = ranker.rank_query("payroll", &["C1".into()]);
        let ids: Vec<&str> = ranked.entries().iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["e1", "e2", "e3", "e4", "e5"]);
        assert!(ranked.entries().iter().all(|(_, s)| *s == 0.0));
    }

    #[test]
    fn weighted_ranker_solved_only_puts_most_prolific_first() {
        let corpus = fixture();
        let vocab = fit_vocabulary(&corpus_documents(&corpus), 1, 1.0).unwrap();
        let weights = StaticWeights {
            w_solved: 1.0,
            w_kba: 0.0,
            w_text: 0.0,
            w_recency: 0.0,
            half_life_days: 90.0,
        };
        let ranker = WeightedFeatureRanker::new(&corpus, vocab, weights);
        // e1 solved two C1 incidents; everyone else none.
        let ranked = ranker.rank_query("anything", &["C1".into()]);
        assert_eq!(ranked.entries()[0].0, "e1");
    }

    #[test]
    fn weighted_ranker_matches_spreadsheet_recomputation() {
        let corpus = fixture();
        let vocab = fit_vocabulary(&corpus_documents(&corpus), 1, 1.0).unwrap();
        let weights = StaticWeights::default();
        let ranker = WeightedFeatureRanker::new(&corpus, vocab.clone(), weights);
        let query_text = "payroll export";
        let components = vec!["C1".to_string()];
        let ranked = ranker.rank_query(query_text, &components);

        // Spreadsheet-style recomputation for e1:
        // solved_in_C1 = 2, kbas_in_C1 = 0.
        // text = max cosine over e1's two incident communications.
        // last activity 2019-08-01, reference date 2019-08-01 -> recency 1.
        let q = tfidf_vector(&vocab, query_text);
        let d1 = tfidf_vector(&vocab, "e1: payroll export mapping repaired");
        let d3 = tfidf_vector(&vocab, "e1: rounding rule adjusted in payroll");
        let text = q.dot(&d1).max(q.dot(&d3));
        let expected = 1.0 * (1.0 + 2.0f64).ln() + 0.5 * 1.0f64.ln() + 1.0 * text + 0.5 * 1.0;
        let e1_score = ranked
            .entries()
            .iter()
            .find(|(id, _)| id == "e1")
            .unwrap()
            .1;
        assert!((e1_score - expected).abs() < 1e-12, "{e1_score} vs {expected}");
    }

    #[test]
    fn popularity_and_random_basics() {
        let corpus = fixture();
        let popularity = PopularityRanker::new(&corpus);
        let ranked = popularity.rank(&eval_case("x", &[])).unwrap();
        assert_eq!(ranked.entries()[0].0, "e1"); // 2 resolutions
        assert_eq!(ranked.len(), 5);

        let random = RandomRanker::new(corpus.engineer_ids(), 9);
        let a = random.permutation("I1");
        let b = random.permutation("I1");
        assert_eq!(a, b);
        // A permutation of the full engineer set.
        let mut ids: Vec<&str> = a.entries().iter().map(|(id, _)| id.as_str()).collect();
        ids.sort();
        assert_eq!(ids, vec!["e1", "e2", "e3", "e4", "e5"]);
    }

    #[test]
    fn single_engineer_rankings_are_singletons() {
        let incidents = vec![];
        let engineers = vec![EngineerRecord { engineer_id: "only".into(), expertise: Default::default() }];
        let (corpus, _) = join_corpus(incidents, engineers, vec![], vec![], vec![], 10).unwrap();
        let popularity = PopularityRanker::new(&corpus);
        assert_eq!(popularity.ranked.len(), 1);
        let random = RandomRanker::new(corpus.engineer_ids(), 1);
        assert_eq!(random.permutation("x").len(), 1);
    }

    /// Monte-Carlo calibration: with one true resolver among N engineers, the
    /// expected hit@k of a random ranking is k/N.
    #[test]
    fn random_rank_hit_rate_is_k_over_n() {
        let n = 40usize;
        let k = 10usize;
        let engineers: Vec<String> = (0..n).map(|i| format!("e{i:03}")).collect();
        let random = RandomRanker::new(engineers.clone(), 3);
        let trials = 10_000usize;
        let mut hits = 0u32;
        for t in 0..trials {
            let ranked = random.permutation(&format!("case{t}"));
            let truth: BTreeSet<String> = [engineers[t % n].clone()].into_iter().collect();
            hits += hit_at_k(&ranked, &truth, k).unwrap();
        }
        let ratio = f64::from(hits) / trials as f64;
        let expected = k as f64 / n as f64;
        assert!(
            (ratio - expected).abs() < 0.02,
            "hit ratio {ratio}, expected {expected}"
        );
    }
}
