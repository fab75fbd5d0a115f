//! Synthetic corpus generator with planted component-expertise and
//! swarm-affinity structure, plus the planted-truth oracle ranker.
//!
//! Each component owns a disjoint token vocabulary; engineer-authored text is
//! jargon-dense while customer descriptions and early triage messages are
//! dominated by the shared vocabulary. Resolution messages always carry
//! [`RESOLUTION_SENTINEL`], which lets leakage tests assert that evaluation
//! queries never contain post-resolution text.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::Rng;

use crate::error::{Error, Result};
use crate::evalbench::{EvalCase, Ranker};
use crate::ingest::{
    join_corpus, join_messages, save_jsonl, ComponentRecord, Corpus, CorpusManifest,
    EngineerRecord, IncidentRecord, KbaRecord, Message, SwarmRecord, CUSTOMER_AUTHOR,
};
use crate::rank::RankedList;
use crate::util::keyed_rng;

/// Token planted into every message authored by a truth engineer.
pub const RESOLUTION_SENTINEL: &str = "zzresolvedzz";

// Fraction of component-vocabulary tokens per author voice. Customers and
// early triage barely use component jargon; experts and KBAs are dense in it.
const CUSTOMER_JARGON: f64 = 0.03;
const INVESTIGATOR_JARGON: f64 = 0.05;
const EXPERT_JARGON: f64 = 0.9;
const KBA_JARGON: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_engineers: usize,
    pub n_components: usize,
    pub n_incidents: usize,
    pub n_kbas: usize,
    pub experts_per_component: usize,
    pub vocab_per_component: usize,
    pub shared_vocab: usize,
    /// Nominal tokens per document; individual fields scale off this.
    pub text_len: usize,
    /// Probability an incident gets a swarm.
    pub swarm_rate: f64,
    /// Probability the resolver is drawn uniformly instead of from experts.
    pub noise: f64,
    pub date_start: NaiveDate,
    pub date_end: NaiveDate,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_engineers: 200,
            n_components: 20,
            n_incidents: 10_000,
            n_kbas: 1_000,
            experts_per_component: 10,
            vocab_per_component: 50,
            shared_vocab: 200,
            text_len: 40,
            swarm_rate: 0.3,
            noise: 0.2,
            date_start: NaiveDate::from_ymd_opt(2019, 1, 1).unwrap(),
            date_end: NaiveDate::from_ymd_opt(2020, 12, 31).unwrap(),
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_engineers == 0
            || self.n_components == 0
            || self.n_incidents == 0
            || self.vocab_per_component == 0
            || self.shared_vocab == 0
            || self.text_len == 0
        {
            return Err(Error::config("synth sizes must be positive"));
        }
        if self.experts_per_component == 0 || self.experts_per_component > self.n_engineers {
            return Err(Error::config(format!(
                "experts_per_component {} must be in 1..={}",
                self.experts_per_component, self.n_engineers
            )));
        }
        if self.n_components * self.experts_per_component > 3 * self.n_engineers {
            return Err(Error::config(
                "expert slots exceed 3 per engineer; lower experts_per_component",
            ));
        }
        for (name, value) in [("swarm_rate", self.swarm_rate), ("noise", self.noise)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::config(format!("synth.{name} {value} outside [0, 1]")));
            }
        }
        if self.date_start >= self.date_end {
            return Err(Error::config("synth date_start must precede date_end"));
        }
        Ok(())
    }
}

/// Which engineers were planted as experts of which components.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlantedTruth {
    pub experts_of: BTreeMap<String, BTreeSet<String>>,
    pub components_of: BTreeMap<String, BTreeSet<String>>,
}

impl PlantedTruth {
    fn insert(&mut self, component: &str, engineer: &str) {
        self.experts_of
            .entry(component.to_string())
            .or_default()
            .insert(engineer.to_string());
        self.components_of
            .entry(engineer.to_string())
            .or_default()
            .insert(component.to_string());
    }

    /// `component<TAB>engineer ids` rows.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("# planted truth v1\n");
        for (component, experts) in &self.experts_of {
            out.push_str(component);
            out.push('\t');
            out.push_str(&experts.iter().cloned().collect::<Vec<_>>().join(" "));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<PlantedTruth> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut truth = PlantedTruth::default();
        for line in text.lines() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let (component, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::data(format!("truth line without tab: {line:?}")))?;
            for engineer in rest.split_whitespace() {
                truth.insert(component, engineer);
            }
        }
        Ok(truth)
    }
}

/// Generated record collections before joining.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub incidents: Vec<IncidentRecord>,
    pub engineers: Vec<EngineerRecord>,
    pub kbas: Vec<KbaRecord>,
    pub swarms: Vec<SwarmRecord>,
    pub components: Vec<ComponentRecord>,
    pub truth: PlantedTruth,
}

fn component_token(component: usize, token: usize) -> String {
    format!("c{component:02}w{token:03}")
}

fn shared_token(token: usize) -> String {
    format!("sh{token:03}")
}

/// Draw `len` tokens: each from the component vocabulary with probability
/// `jargon`, otherwise from the shared pool.
fn draw_text(
    rng: &mut impl Rng,
    component: usize,
    jargon: f64,
    len: usize,
    config: &SynthConfig,
) -> String {
    let mut tokens = Vec::with_capacity(len);
    for _ in 0..len {
        if rng.gen::<f64>() < jargon {
            tokens.push(component_token(component, rng.gen_range(0..config.vocab_per_component)));
        } else {
            tokens.push(shared_token(rng.gen_range(0..config.shared_vocab)));
        }
    }
    tokens.join(" ")
}

fn draw_date(rng: &mut impl Rng, config: &SynthConfig) -> NaiveDate {
    let span = (config.date_end - config.date_start).num_days();
    config.date_start + chrono::Duration::days(rng.gen_range(0..=span))
}

fn engineer_id(i: usize) -> String {
    format!("E{i:04}")
}

fn component_id(i: usize) -> String {
    format!("C{i:02}")
}

/// Generate a corpus with planted structure. Deterministic per config: all
/// randomness comes from streams keyed to the config seed and record ids.
pub fn generate(config: &SynthConfig) -> Result<GeneratedCorpus> {
    config.validate()?;

    // Components and their descriptions (component-voiced).
    let components: Vec<ComponentRecord> = (0..config.n_components)
        .map(|c| {
            let mut rng = keyed_rng(config.seed, &format!("component:{c}"));
            let len = config.text_len / 2 + 4;
            ComponentRecord {
                component_id: component_id(c),
                description: draw_text(&mut rng, c, KBA_JARGON, len, config),
            }
        })
        .collect();

    // Expert assignment: deal component expert slots around a shuffled
    // engineer ring, capping each engineer at 3 components; engineers left
    // without a slot get one extra component so everyone is an expert
    // somewhere.
    let mut truth = PlantedTruth::default();
    let mut load = vec![0usize; config.n_engineers];
    {
        let mut rng = keyed_rng(config.seed, "experts");
        let mut ring: Vec<usize> = (0..config.n_engineers).collect();
        use rand::seq::SliceRandom;
        ring.shuffle(&mut rng);
        let mut cursor = 0usize;
        for c in 0..config.n_components {
            let mut assigned = 0usize;
            while assigned < config.experts_per_component {
                let engineer = ring[cursor % ring.len()];
                cursor += 1;
                if load[engineer] >= 3
                    || truth
                        .experts_of
                        .get(&component_id(c))
                        .is_some_and(|s| s.contains(&engineer_id(engineer)))
                {
                    continue;
                }
                truth.insert(&component_id(c), &engineer_id(engineer));
                load[engineer] += 1;
                assigned += 1;
            }
        }
        for (engineer, count) in load.iter_mut().enumerate() {
            if *count == 0 {
                let c = rng.gen_range(0..config.n_components);
                truth.insert(&component_id(c), &engineer_id(engineer));
                *count = 1;
            }
        }
    }

    // Engineers: expertise ratings 4-5 on planted components, occasionally a
    // low rating elsewhere.
    let engineers: Vec<EngineerRecord> = (0..config.n_engineers)
        .map(|e| {
            let id = engineer_id(e);
            let mut rng = keyed_rng(config.seed, &format!("engineer:{id}"));
            let mut expertise: BTreeMap<String, u8> = BTreeMap::new();
            if let Some(components) = truth.components_of.get(&id) {
                for component in components {
                    expertise.insert(component.clone(), rng.gen_range(4..=5));
                }
            }
            for _ in 0..rng.gen_range(0..=2u8) {
                let c = component_id(rng.gen_range(0..config.n_components));
                expertise.entry(c).or_insert_with(|| rng.gen_range(1..=2));
            }
            EngineerRecord { engineer_id: id, expertise }
        })
        .collect();

    let experts_by_component: Vec<Vec<String>> = (0..config.n_components)
        .map(|c| {
            truth
                .experts_of
                .get(&component_id(c))
                .map(|s| s.iter().cloned().collect())
                .unwrap_or_default()
        })
        .collect();

    // KBAs: authored by experts, jargon-dense text.
    let kbas: Vec<KbaRecord> = (0..config.n_kbas)
        .map(|k| {
            let id = format!("K{k:05}");
            let mut rng = keyed_rng(config.seed, &format!("kba:{id}"));
            let c = rng.gen_range(0..config.n_components);
            let experts = &experts_by_component[c];
            let responsible = experts[rng.gen_range(0..experts.len())].clone();
            let mut processors = Vec::new();
            for _ in 0..rng.gen_range(0..=2usize) {
                let p = experts[rng.gen_range(0..experts.len())].clone();
                if p != responsible && !processors.contains(&p) {
                    processors.push(p);
                }
            }
            KbaRecord {
                kba_id: id,
                full_text: draw_text(&mut rng, c, KBA_JARGON, config.text_len, config),
                responsible_id: responsible,
                processor_ids: processors,
                category: format!("cat{}", c % 5),
                component_id: component_id(c),
                created_date: draw_date(&mut rng, config),
            }
        })
        .collect();
    let kbas_per_component: Vec<Vec<&KbaRecord>> = (0..config.n_components)
        .map(|c| {
            kbas.iter()
                .filter(|k| k.component_id == component_id(c))
                .collect()
        })
        .collect();

    // Incidents and swarms.
    let mut incidents = Vec::with_capacity(config.n_incidents);
    let mut swarms = Vec::new();
    for i in 0..config.n_incidents {
        let id = format!("I{i:06}");
        let mut rng = keyed_rng(config.seed, &format!("incident:{id}"));
        let c = rng.gen_range(0..config.n_components);
        let experts = &experts_by_component[c];
        let resolver = if rng.gen::<f64>() < config.noise {
            engineer_id(rng.gen_range(0..config.n_engineers))
        } else {
            experts[rng.gen_range(0..experts.len())].clone()
        };
        // The engineers assigned first are usually not the final processor:
        // draw 0-2 uniform triage engineers ahead of the resolver.
        let mut early: Vec<String> = Vec::new();
        for _ in 0..rng.gen_range(0..=2usize) {
            let e = engineer_id(rng.gen_range(0..config.n_engineers));
            if e != resolver && !early.contains(&e) {
                early.push(e);
            }
        }
        let created = draw_date(&mut rng, config);
        let confirmed = created + chrono::Duration::days(rng.gen_range(1..=14));

        // Swarm decision happens before the message log so responder
        // messages can be generated in order.
        let swarm = if rng.gen::<f64>() < config.swarm_rate {
            let mut responders: Vec<String> = Vec::new();
            let want = rng.gen_range(2..=3usize);
            for _ in 0..want * 3 {
                if responders.len() >= want {
                    break;
                }
                let r = experts[rng.gen_range(0..experts.len())].clone();
                if !responders.contains(&r) {
                    responders.push(r);
                }
            }
            let requestor = early.first().cloned().unwrap_or_else(|| resolver.clone());
            responders.retain(|r| *r != requestor);
            if responders.is_empty() {
                None
            } else {
                Some((requestor, responders))
            }
        } else {
            None
        };

        let truth_set: BTreeSet<&str> = {
            let mut set: BTreeSet<&str> = BTreeSet::new();
            set.insert(resolver.as_str());
            if let Some((_, responders)) = &swarm {
                set.extend(responders.iter().map(|r| r.as_str()));
            }
            set
        };

        let description = draw_text(&mut rng, c, CUSTOMER_JARGON, config.text_len * 2 / 5, config);
        let mut messages = vec![Message {
            author: CUSTOMER_AUTHOR.to_string(),
            text: draw_text(&mut rng, c, CUSTOMER_JARGON, config.text_len / 5 + 2, config),
        }];
        for e in &early {
            // Early triage by a non-truth engineer stays sentinel-free; if a
            // triage engineer later turns out to be a responder, truncation
            // cuts at their message anyway.
            let jargon = if truth_set.contains(e.as_str()) {
                EXPERT_JARGON
            } else {
                INVESTIGATOR_JARGON
            };
            let mut text = draw_text(&mut rng, c, jargon, config.text_len * 2 / 5, config);
            if truth_set.contains(e.as_str()) {
                text = format!("{RESOLUTION_SENTINEL} {text}");
            }
            messages.push(Message { author: e.clone(), text });
        }
        if let Some((_, responders)) = &swarm {
            for r in responders {
                messages.push(Message {
                    author: r.clone(),
                    text: format!(
                        "{RESOLUTION_SENTINEL} {}",
                        draw_text(&mut rng, c, EXPERT_JARGON, config.text_len / 2, config)
                    ),
                });
            }
        }
        for _ in 0..rng.gen_range(1..=2usize) {
            messages.push(Message {
                author: resolver.clone(),
                text: format!(
                    "{RESOLUTION_SENTINEL} {}",
                    draw_text(&mut rng, c, EXPERT_JARGON, config.text_len / 2, config)
                ),
            });
        }

        let mut processor_ids = early.clone();
        processor_ids.push(resolver.clone());
        incidents.push(IncidentRecord {
            incident_id: id.clone(),
            description,
            communication_summary: join_messages(&messages),
            processor_ids,
            component_ids: vec![component_id(c)],
            created_date: created,
            confirmed_date: Some(confirmed.min(config.date_end + chrono::Duration::days(30))),
        });

        if let Some((requestor, responders)) = swarm {
            let kba_ids = if rng.gen::<f64>() < 0.5 && !kbas_per_component[c].is_empty() {
                let pick = rng.gen_range(0..kbas_per_component[c].len());
                vec![kbas_per_component[c][pick].kba_id.clone()]
            } else {
                vec![]
            };
            swarms.push(SwarmRecord {
                swarm_id: format!("S{i:06}"),
                incident_id: id,
                requestor_id: requestor,
                responder_ids: responders,
                kba_ids,
                component_id: component_id(c),
                created_date: created + chrono::Duration::days(1),
            });
        }
    }

    Ok(GeneratedCorpus {
        incidents,
        engineers,
        kbas,
        swarms,
        components,
        truth,
    })
}

/// Paths produced by [`write_corpus`].
#[derive(Debug, Clone)]
pub struct SynthOutputs {
    pub manifest_path: PathBuf,
    pub truth_path: PathBuf,
    pub manifest: CorpusManifest,
}

/// Generate and write the five record files, the corpus manifest (with
/// top_m = n_engineers and 70/15/15 temporal cutoffs) and the planted-truth
/// file into `dir`.
pub fn write_corpus(dir: &Path, config: &SynthConfig) -> Result<SynthOutputs> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let generated = generate(config)?;
    save_jsonl(&dir.join("incidents.jsonl"), &generated.incidents)?;
    save_jsonl(&dir.join("engineers.jsonl"), &generated.engineers)?;
    save_jsonl(&dir.join("kbas.jsonl"), &generated.kbas)?;
    save_jsonl(&dir.join("swarms.jsonl"), &generated.swarms)?;
    save_jsonl(&dir.join("components.jsonl"), &generated.components)?;
    let truth_path = dir.join("truth.tsv");
    generated.truth.save(&truth_path)?;

    let span = (config.date_end - config.date_start).num_days();
    let train_cutoff = config.date_start + chrono::Duration::days(span * 70 / 100);
    let val_cutoff = config.date_start + chrono::Duration::days(span * 85 / 100);
    let manifest = CorpusManifest {
        incidents: dir.join("incidents.jsonl"),
        engineers: dir.join("engineers.jsonl"),
        kbas: dir.join("kbas.jsonl"),
        swarms: dir.join("swarms.jsonl"),
        components: dir.join("components.jsonl"),
        top_m: config.n_engineers,
        train_cutoff,
        val_cutoff,
    };
    let manifest_path = dir.join("corpus.manifest");
    manifest.save(&manifest_path)?;
    Ok(SynthOutputs { manifest_path, truth_path, manifest })
}

/// Upper-bound control: rank the planted experts of the query's component
/// first (id order), then everyone else (id order).
pub struct OracleRanker {
    pub truth: PlantedTruth,
    pub engineers: Vec<String>,
}

impl OracleRanker {
    pub fn rank_components(&self, component_ids: &[String]) -> RankedList {
        let experts: BTreeSet<&String> = component_ids
            .first()
            .and_then(|c| self.truth.experts_of.get(c))
            .map(|s| s.iter().collect())
            .unwrap_or_default();
        RankedList::from_scores(
            self.engineers
                .iter()
                .map(|id| {
                    let score = if experts.contains(id) { 1.0 } else { 0.0 };
                    (id.clone(), score)
                })
                .collect(),
        )
    }
}

impl Ranker for OracleRanker {
    fn name(&self) -> &str {
        "oracle"
    }
    fn rank(&self, case: &EvalCase) -> Result<RankedList> {
        Ok(self.rank_components(&case.query.component_ids))
    }
}

/// Join a generated corpus without dropping anything (top_m = n_engineers).
pub fn join_generated(generated: &GeneratedCorpus) -> Result<Corpus> {
    let (corpus, report) = join_corpus(
        generated.incidents.clone(),
        generated.engineers.clone(),
        generated.kbas.clone(),
        generated.swarms.clone(),
        generated.components.clone(),
        generated.engineers.len(),
    )?;
    if report.dropped_dangling > 0 {
        return Err(Error::data(format!(
            "generator produced {} dangling records",
            report.dropped_dangling
        )));
    }
    Ok(corpus)
}
