//! Source record schemas, flat-file loading, corpus join/validation and
//! temporal train/validation/test splits.
//!
//! Input files are UTF-8, one JSON record per line. Dates are ISO-8601
//! (`YYYY-MM-DD`). A communication summary is a single string of messages
//! joined by [`MESSAGE_SEPARATOR`], each message `"<author>: <text>"` where
//! the author is an engineer id or `"customer"`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator between messages inside a communication summary.
pub const MESSAGE_SEPARATOR: &str = " || ";

/// Author label for customer-side messages.
pub const CUSTOMER_AUTHOR: &str = "customer";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub incident_id: String,
    pub description: String,
    /// Concatenated anonymized messages; see [`parse_messages`].
    pub communication_summary: String,
    /// Ordered processor engineer ids; the final processor is the resolver.
    #[serde(default)]
    pub processor_ids: Vec<String>,
    pub component_ids: Vec<String>,
    pub created_date: NaiveDate,
    #[serde(default)]
    pub confirmed_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineerRecord {
    pub engineer_id: String,
    /// component id -> expertise rating in 0..=5.
    #[serde(default)]
    pub expertise: BTreeMap<String, u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbaRecord {
    pub kba_id: String,
    /// Article body with "See Also" and "Keywords" sections concatenated.
    pub full_text: String,
    pub responsible_id: String,
    #[serde(default)]
    pub processor_ids: Vec<String>,
    pub category: String,
    pub component_id: String,
    pub created_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmRecord {
    pub swarm_id: String,
    pub incident_id: String,
    pub requestor_id: String,
    pub responder_ids: Vec<String>,
    #[serde(default)]
    pub kba_ids: Vec<String>,
    pub component_id: String,
    pub created_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub component_id: String,
    pub description: String,
}

/// One message of a communication summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub author: String,
    pub text: String,
}

/// Split a communication summary into messages. A part without an
/// `"author: "` prefix becomes a message with an empty author.
pub fn parse_messages(summary: &str) -> Vec<Message> {
    if summary.is_empty() {
        return Vec::new();
    }
    summary
        .split(MESSAGE_SEPARATOR)
        .map(|part| match part.split_once(": ") {
            Some((author, text)) => Message {
                author: author.to_string(),
                text: text.to_string(),
            },
            None => Message {
                author: String::new(),
                text: part.to_string(),
            },
        })
        .collect()
}

/// Inverse of [`parse_messages`].
pub fn join_messages(messages: &[Message]) -> String {
    messages
        .iter()
        .map(|m| {
            if m.author.is_empty() {
                m.text.clone()
            } else {
                format!("{}: {}", m.author, m.text)
            }
        })
        .collect::<Vec<_>>()
        .join(MESSAGE_SEPARATOR)
}

trait ValidateRecord {
    fn validate(&self) -> std::result::Result<(), String>;
}

impl ValidateRecord for IncidentRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.incident_id.is_empty() {
            return Err("empty incident_id".into());
        }
        if let Some(confirmed) = self.confirmed_date {
            if self.created_date > confirmed {
                return Err(format!(
                    "created_date {} after confirmed_date {}",
                    self.created_date, confirmed
                ));
            }
        }
        Ok(())
    }
}

impl ValidateRecord for EngineerRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.engineer_id.is_empty() {
            return Err("empty engineer_id".into());
        }
        if let Some((c, r)) = self.expertise.iter().find(|(_, r)| **r > 5) {
            return Err(format!("expertise rating {r} for {c} outside 0..=5"));
        }
        Ok(())
    }
}

impl ValidateRecord for KbaRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.kba_id.is_empty() {
            return Err("empty kba_id".into());
        }
        if self.responsible_id.is_empty() {
            return Err("missing responsible_id".into());
        }
        Ok(())
    }
}

impl ValidateRecord for SwarmRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.swarm_id.is_empty() {
            return Err("empty swarm_id".into());
        }
        if self.responder_ids.is_empty() {
            return Err("empty responder_ids".into());
        }
        Ok(())
    }
}

impl ValidateRecord for ComponentRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.component_id.is_empty() {
            return Err("empty component_id".into());
        }
        Ok(())
    }
}

fn load_jsonl<T: DeserializeOwned + ValidateRecord>(path: &Path) -> Result<(Vec<T>, usize)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut skipped = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(record) => match record.validate() {
                Ok(()) => records.push(record),
                Err(msg) => {
                    skipped += 1;
                    log::warn!("{}:{}: invalid record skipped: {msg}", path.display(), lineno + 1);
                }
            },
            Err(err) => {
                skipped += 1;
                log::warn!("{}:{}: malformed line skipped: {err}", path.display(), lineno + 1);
            }
        }
    }
    Ok((records, skipped))
}

pub fn load_incidents(path: &Path) -> Result<(Vec<IncidentRecord>, usize)> {
    load_jsonl(path)
}
pub fn load_engineers(path: &Path) -> Result<(Vec<EngineerRecord>, usize)> {
    load_jsonl(path)
}
pub fn load_kbas(path: &Path) -> Result<(Vec<KbaRecord>, usize)> {
    load_jsonl(path)
}
pub fn load_swarms(path: &Path) -> Result<(Vec<SwarmRecord>, usize)> {
    load_jsonl(path)
}
pub fn load_components(path: &Path) -> Result<(Vec<ComponentRecord>, usize)> {
    load_jsonl(path)
}

/// Write records as one JSON object per line.
pub fn save_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::data(format!("serialize record: {e}")))?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Joined, validated collection of all five record kinds plus index maps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub incidents: Vec<IncidentRecord>,
    pub engineers: Vec<EngineerRecord>,
    pub kbas: Vec<KbaRecord>,
    pub swarms: Vec<SwarmRecord>,
    pub components: Vec<ComponentRecord>,
    /// engineer id -> indices of incidents they resolved.
    pub resolved_by: BTreeMap<String, Vec<usize>>,
    /// engineer id -> indices of KBAs they authored (responsible or processor).
    pub kbas_by: BTreeMap<String, Vec<usize>>,
    /// incident id -> indices of swarms attached to it.
    pub swarms_of: BTreeMap<String, Vec<usize>>,
}

impl Corpus {
    /// The ground-truth resolver: the last processor id on the incident.
    pub fn resolver_of(incident: &IncidentRecord) -> Option<&str> {
        incident.processor_ids.last().map(|s| s.as_str())
    }

    /// Non-resolver processors, in first-occurrence order.
    pub fn participants_of(incident: &IncidentRecord) -> Vec<&str> {
        match Self::resolver_of(incident) {
            None => Vec::new(),
            Some(resolver) => incident
                .processor_ids
                .iter()
                .filter(|p| p.as_str() != resolver)
                .map(|p| p.as_str())
                .collect(),
        }
    }

    pub fn engineer_ids(&self) -> Vec<String> {
        self.engineers.iter().map(|e| e.engineer_id.clone()).collect()
    }

    /// Stable content hash over record keys and counts, used to stamp
    /// artifacts derived from this corpus.
    pub fn content_hash(&self) -> String {
        let mut acc = String::new();
        acc.push_str(&format!(
            "incidents={} engineers={} kbas={} swarms={} components={}\n",
            self.incidents.len(),
            self.engineers.len(),
            self.kbas.len(),
            self.swarms.len(),
            self.components.len()
        ));
        for i in &self.incidents {
            acc.push_str(&i.incident_id);
            acc.push('\n');
        }
        for e in &self.engineers {
            acc.push_str(&e.engineer_id);
            acc.push('\n');
        }
        for k in &self.kbas {
            acc.push_str(&k.kba_id);
            acc.push('\n');
        }
        for s in &self.swarms {
            acc.push_str(&s.swarm_id);
            acc.push('\n');
        }
        for c in &self.components {
            acc.push_str(&c.component_id);
            acc.push('\n');
        }
        crate::util::sha256_hex(acc.as_bytes())
    }

    fn rebuild_indexes(&mut self) {
        self.resolved_by.clear();
        self.kbas_by.clear();
        self.swarms_of.clear();
        for (idx, incident) in self.incidents.iter().enumerate() {
            if let Some(resolver) = Self::resolver_of(incident) {
                self.resolved_by
                    .entry(resolver.to_string())
                    .or_default()
                    .push(idx);
            }
        }
        for (idx, kba) in self.kbas.iter().enumerate() {
            let mut authors: Vec<&str> = vec![kba.responsible_id.as_str()];
            for p in &kba.processor_ids {
                if !authors.contains(&p.as_str()) {
                    authors.push(p.as_str());
                }
            }
            for author in authors {
                self.kbas_by.entry(author.to_string()).or_default().push(idx);
            }
        }
        for (idx, swarm) in self.swarms.iter().enumerate() {
            self.swarms_of
                .entry(swarm.incident_id.clone())
                .or_default()
                .push(idx);
        }
    }
}

/// Per-category drop counts from [`join_corpus`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JoinReport {
    pub duplicate_records: usize,
    pub dropped_dangling: usize,
    pub dropped_by_prolific_filter: usize,
    pub engineers_dropped: usize,
    pub participants_pruned: usize,
}

impl JoinReport {
    pub fn summary(&self) -> String {
        format!(
            "join: {} duplicate records, {} dangling records dropped, \
             {} engineers below prolific cutoff, {} records dropped by filter, \
             {} participant references pruned",
            self.duplicate_records,
            self.dropped_dangling,
            self.engineers_dropped,
            self.dropped_by_prolific_filter,
            self.participants_pruned
        )
    }
}

fn dedup_by_key<T, F: Fn(&T) -> &str>(records: Vec<T>, key: F, dupes: &mut usize) -> Vec<T> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if seen.insert(key(&r).to_string()) {
            out.push(r);
        } else {
            *dupes += 1;
            log::warn!("duplicate record key {:?} dropped", key(&r));
        }
    }
    out
}

/// Normalize processor ids: deduplicate preserving first occurrence, then
/// move the resolver (last id of the raw list) to the final position.
fn normalize_processors(raw: &[String]) -> Vec<String> {
    let resolver = match raw.last() {
        Some(r) => r.clone(),
        None => return Vec::new(),
    };
    let mut out: Vec<String> = Vec::new();
    for p in raw {
        if *p != resolver && !out.contains(p) {
            out.push(p.clone());
        }
    }
    out.push(resolver);
    out
}

/// Join the five record collections into a validated [`Corpus`].
///
/// Records referencing unknown engineers or components are dropped. Engineers
/// are ranked by resolved-incident count (ties by id) and only the `top_m`
/// most prolific are retained together with their records; incidents kept as
/// graph context lose pruned participant references but survive as long as
/// their resolver survives.
pub fn join_corpus(
    incidents: Vec<IncidentRecord>,
    engineers: Vec<EngineerRecord>,
    kbas: Vec<KbaRecord>,
    swarms: Vec<SwarmRecord>,
    components: Vec<ComponentRecord>,
    top_m: usize,
) -> Result<(Corpus, JoinReport)> {
    if top_m == 0 {
        return Err(Error::config("top_m must be positive"));
    }
    let mut report = JoinReport::default();

    let incidents = dedup_by_key(incidents, |r| &r.incident_id, &mut report.duplicate_records);
    let engineers = dedup_by_key(engineers, |r| &r.engineer_id, &mut report.duplicate_records);
    let kbas = dedup_by_key(kbas, |r| &r.kba_id, &mut report.duplicate_records);
    let swarms = dedup_by_key(swarms, |r| &r.swarm_id, &mut report.duplicate_records);
    let components = dedup_by_key(components, |r| &r.component_id, &mut report.duplicate_records);

    let engineer_ids: BTreeSet<&str> = engineers.iter().map(|e| e.engineer_id.as_str()).collect();
    let component_ids: BTreeSet<&str> =
        components.iter().map(|c| c.component_id.as_str()).collect();

    // Phase 1: referential integrity against engineers/components.
    let mut incidents: Vec<IncidentRecord> = incidents
        .into_iter()
        .filter(|i| {
            let ok = !i.component_ids.is_empty()
                && i.component_ids.iter().all(|c| component_ids.contains(c.as_str()))
                && i.processor_ids.iter().all(|p| engineer_ids.contains(p.as_str()));
            if !ok {
                report.dropped_dangling += 1;
            }
            ok
        })
        .collect();
    for incident in &mut incidents {
        incident.processor_ids = normalize_processors(&incident.processor_ids);
    }
    let kbas: Vec<KbaRecord> = kbas
        .into_iter()
        .filter(|k| {
            let ok = engineer_ids.contains(k.responsible_id.as_str())
                && k.processor_ids.iter().all(|p| engineer_ids.contains(p.as_str()))
                && component_ids.contains(k.component_id.as_str());
            if !ok {
                report.dropped_dangling += 1;
            }
            ok
        })
        .collect();
    let incident_ids: BTreeSet<&str> = incidents.iter().map(|i| i.incident_id.as_str()).collect();
    let kba_ids: BTreeSet<&str> = kbas.iter().map(|k| k.kba_id.as_str()).collect();
    let mut swarms: Vec<SwarmRecord> = swarms
        .into_iter()
        .filter(|s| {
            let ok = incident_ids.contains(s.incident_id.as_str())
                && engineer_ids.contains(s.requestor_id.as_str())
                && s.responder_ids.iter().all(|r| engineer_ids.contains(r.as_str()))
                && s.kba_ids.iter().all(|k| kba_ids.contains(k.as_str()))
                && component_ids.contains(s.component_id.as_str());
            if !ok {
                report.dropped_dangling += 1;
            }
            ok
        })
        .collect();
    for swarm in &mut swarms {
        // Responder lists are deduplicated on load, preserving order.
        let mut seen = BTreeSet::new();
        swarm.responder_ids.retain(|r| seen.insert(r.clone()));
    }

    // Phase 2: prolific filter. Rank by resolved count descending, id ascending.
    let mut resolved_count: BTreeMap<&str, usize> = BTreeMap::new();
    for incident in &incidents {
        if let Some(resolver) = Corpus::resolver_of(incident) {
            *resolved_count.entry(resolver).or_default() += 1;
        }
    }
    let mut ranked: Vec<&EngineerRecord> = engineers.iter().collect();
    ranked.sort_by(|a, b| {
        let ca = resolved_count.get(a.engineer_id.as_str()).copied().unwrap_or(0);
        let cb = resolved_count.get(b.engineer_id.as_str()).copied().unwrap_or(0);
        cb.cmp(&ca).then_with(|| a.engineer_id.cmp(&b.engineer_id))
    });
    let retained_ids: BTreeSet<String> = ranked
        .iter()
        .take(top_m)
        .map(|e| e.engineer_id.clone())
        .collect();
    if retained_ids.is_empty() {
        return Err(Error::data("no engineers survive the prolific filter"));
    }
    report.engineers_dropped = engineers.len().saturating_sub(retained_ids.len());
    let engineers: Vec<EngineerRecord> = engineers
        .into_iter()
        .filter(|e| retained_ids.contains(&e.engineer_id))
        .collect();

    let incidents: Vec<IncidentRecord> = incidents
        .into_iter()
        .filter_map(|mut i| {
            if let Some(resolver) = Corpus::resolver_of(&i) {
                if !retained_ids.contains(resolver) {
                    report.dropped_by_prolific_filter += 1;
                    return None;
                }
            }
            let before = i.processor_ids.len();
            i.processor_ids.retain(|p| retained_ids.contains(p));
            report.participants_pruned += before - i.processor_ids.len();
            Some(i)
        })
        .collect();
    let kbas: Vec<KbaRecord> = kbas
        .into_iter()
        .filter_map(|mut k| {
            if !retained_ids.contains(&k.responsible_id) {
                report.dropped_by_prolific_filter += 1;
                return None;
            }
            k.processor_ids.retain(|p| retained_ids.contains(p));
            Some(k)
        })
        .collect();
    let incident_ids: BTreeSet<&str> = incidents.iter().map(|i| i.incident_id.as_str()).collect();
    let kba_ids: BTreeSet<&str> = kbas.iter().map(|k| k.kba_id.as_str()).collect();
    let swarms: Vec<SwarmRecord> = swarms
        .into_iter()
        .filter_map(|mut s| {
            s.responder_ids.retain(|r| retained_ids.contains(r));
            s.kba_ids.retain(|k| kba_ids.contains(k.as_str()));
            if s.responder_ids.is_empty()
                || !retained_ids.contains(&s.requestor_id)
                || !incident_ids.contains(s.incident_id.as_str())
            {
                report.dropped_by_prolific_filter += 1;
                return None;
            }
            Some(s)
        })
        .collect();

    let mut corpus = Corpus {
        incidents,
        engineers,
        kbas,
        swarms,
        components,
        ..Default::default()
    };
    corpus.rebuild_indexes();
    Ok((corpus, report))
}

/// Partition a corpus by incident `created_date` into half-open intervals
/// `[min, train_cutoff)`, `[train_cutoff, val_cutoff)` and `[val_cutoff, max]`.
/// Swarms follow their incident; engineers, KBAs and components are context
/// and appear in every split.
pub fn split_by_time(
    corpus: &Corpus,
    train_cutoff: NaiveDate,
    val_cutoff: NaiveDate,
) -> Result<(Corpus, Corpus, Corpus)> {
    if train_cutoff >= val_cutoff {
        return Err(Error::config(format!(
            "train_cutoff {train_cutoff} must precede val_cutoff {val_cutoff}"
        )));
    }
    let mut split_incidents: [Vec<IncidentRecord>; 3] = Default::default();
    for incident in &corpus.incidents {
        let bucket = if incident.created_date < train_cutoff {
            0
        } else if incident.created_date < val_cutoff {
            1
        } else {
            2
        };
        split_incidents[bucket].push(incident.clone());
    }
    if split_incidents[0].is_empty() {
        return Err(Error::data("empty train split"));
    }
    if split_incidents[2].is_empty() {
        log::warn!("empty test split: all incidents precede val_cutoff {val_cutoff}");
    }
    let mut out = Vec::with_capacity(3);
    for incidents in split_incidents {
        let ids: BTreeSet<&str> = incidents.iter().map(|i| i.incident_id.as_str()).collect();
        let swarms: Vec<SwarmRecord> = corpus
            .swarms
            .iter()
            .filter(|s| ids.contains(s.incident_id.as_str()))
            .cloned()
            .collect();
        let mut split = Corpus {
            incidents,
            engineers: corpus.engineers.clone(),
            kbas: corpus.kbas.clone(),
            swarms,
            components: corpus.components.clone(),
            ..Default::default()
        };
        split.rebuild_indexes();
        out.push(split);
    }
    let test = out.pop().unwrap();
    let val = out.pop().unwrap();
    let train = out.pop().unwrap();
    Ok((train, val, test))
}

/// Manifest file naming the five record files plus join/split parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub incidents: PathBuf,
    pub engineers: PathBuf,
    pub kbas: PathBuf,
    pub swarms: PathBuf,
    pub components: PathBuf,
    pub top_m: usize,
    pub train_cutoff: NaiveDate,
    pub val_cutoff: NaiveDate,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("manifest line without '=': {line:?}")))?;
            fields.insert(key.trim(), value.trim());
        }
        let take = |key: &str| -> Result<&str> {
            fields
                .get(key)
                .copied()
                .ok_or_else(|| Error::config(format!("manifest missing key {key:?}")))
        };
        let path_of = |key: &str| -> Result<PathBuf> {
            let raw = Path::new(take(key)?);
            Ok(if raw.is_absolute() {
                raw.to_path_buf()
            } else {
                dir.join(raw)
            })
        };
        let date_of = |key: &str| -> Result<NaiveDate> {
            take(key)?
                .parse()
                .map_err(|e| Error::config(format!("manifest {key}: {e}")))
        };
        Ok(CorpusManifest {
            incidents: path_of("incidents")?,
            engineers: path_of("engineers")?,
            kbas: path_of("kbas")?,
            swarms: path_of("swarms")?,
            components: path_of("components")?,
            top_m: take("top_m")?
                .parse()
                .map_err(|e| Error::config(format!("manifest top_m: {e}")))?,
            train_cutoff: date_of("train_cutoff")?,
            val_cutoff: date_of("val_cutoff")?,
        })
    }

    /// Write the manifest with paths stored relative to its directory when
    /// possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let rel = |p: &Path| -> String {
            p.strip_prefix(dir).unwrap_or(p).display().to_string()
        };
        let text = format!(
            "incidents = {}\nengineers = {}\nkbas = {}\nswarms = {}\ncomponents = {}\n\
             top_m = {}\ntrain_cutoff = {}\nval_cutoff = {}\n",
            rel(&self.incidents),
            rel(&self.engineers),
            rel(&self.kbas),
            rel(&self.swarms),
            rel(&self.components),
            self.top_m,
            self.train_cutoff,
            self.val_cutoff
        );
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Load all five record files named by a manifest and join them.
pub fn load_and_join(manifest: &CorpusManifest) -> Result<(Corpus, JoinReport)> {
    let (incidents, s1) = load_incidents(&manifest.incidents)?;
    let (engineers, s2) = load_engineers(&manifest.engineers)?;
    let (kbas, s3) = load_kbas(&manifest.kbas)?;
    let (swarms, s4) = load_swarms(&manifest.swarms)?;
    let (components, s5) = load_components(&manifest.components)?;
    let skipped = s1 + s2 + s3 + s4 + s5;
    if skipped > 0 {
        log::warn!("{skipped} malformed lines skipped across input files");
    }
    join_corpus(incidents, engineers, kbas, swarms, components, manifest.top_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn incident(id: &str, processors: &[&str], components: &[&str], created: &str) -> IncidentRecord {
        IncidentRecord {
            incident_id: id.to_string(),
            description: format!("issue {id}"),
            communication_summary: String::new(),
            processor_ids: processors.iter().map(|s| s.to_string()).collect(),
            component_ids: components.iter().map(|s| s.to_string()).collect(),
            created_date: date(created),
            confirmed_date: None,
        }
    }

    fn engineer(id: &str) -> EngineerRecord {
        EngineerRecord {
            engineer_id: id.to_string(),
            expertise: BTreeMap::new(),
        }
    }

    fn component(id: &str) -> ComponentRecord {
        ComponentRecord {
            component_id: id.to_string(),
            description: format!("component {id}"),
        }
    }

    fn tiny_inputs() -> (
        Vec<IncidentRecord>,
        Vec<EngineerRecord>,
        Vec<KbaRecord>,
        Vec<SwarmRecord>,
        Vec<ComponentRecord>,
    ) {
        let incidents = vec![
            incident("I1", &["e1", "e2"], &["C1"], "2019-03-01"),
            incident("I2", &["e2"], &["C1"], "2019-06-01"),
            incident("I3", &["e3"], &["C2"], "2020-02-01"),
        ];
        let engineers = vec![engineer("e1"), engineer("e2"), engineer("e3")];
        let kbas = vec![KbaRecord {
            kba_id: "K1".into(),
            full_text: "restart the adapter".into(),
            responsible_id: "e2".into(),
            processor_ids: vec!["e1".into()],
            category: "howto".into(),
            component_id: "C1".into(),
            created_date: date("2019-01-15"),
        }];
        let swarms = vec![SwarmRecord {
            swarm_id: "S1".into(),
            incident_id: "I1".into(),
            requestor_id: "e1".into(),
            responder_ids: vec!["e2".into(), "e3".into(), "e2".into()],
            kba_ids: vec!["K1".into()],
            component_id: "C1".into(),
            created_date: date("2019-03-02"),
        }];
        let components = vec![component("C1"), component("C2")];
        (incidents, engineers, kbas, swarms, components)
    }

    #[test]
    fn load_empty_file_gives_empty_list() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("incidents.jsonl");
        fs::write(&path, "").unwrap();
        let (records, skipped) = load_incidents(&path).unwrap();
        assert!(records.is_empty());
        assert_eq!(skipped, 0);
    }

    #[test]
    fn load_three_valid_incident_lines() {
        // Expected values hand-checked against the written JSON fixture.
        let dir = tempdir().unwrap();
        let path = dir.path().join("incidents.jsonl");
        let fixture = vec![
            incident("I1", &["e1"], &["C1"], "2019-01-01"),
            incident("I2", &["e1", "e2"], &["C1", "C2"], "2019-05-05"),
            incident("I3", &[], &["C2"], "2020-12-31"),
        ];
        save_jsonl(&path, &fixture).unwrap();
        let (records, skipped) = load_incidents(&path).unwrap();
        assert_eq!(records, fixture);
        assert_eq!(skipped, 0);
    }

    #[test]
    fn truncated_line_is_skipped_with_count() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("incidents.jsonl");
        let fixture = vec![
            incident("I1", &["e1"], &["C1"], "2019-01-01"),
            incident("I2", &["e2"], &["C1"], "2019-02-01"),
        ];
        let mut text = String::new();
        for r in &fixture {
            text.push_str(&serde_json::to_string(r).unwrap());
            text.push('\n');
        }
        // Cut the third line mid-field.
        let full = serde_json::to_string(&incident("I3", &["e1"], &["C1"], "2019-03-01")).unwrap();
        text.push_str(&full[..full.len() / 2]);
        text.push('\n');
        fs::write(&path, text).unwrap();
        let (records, skipped) = load_incidents(&path).unwrap();
        assert_eq!(records, fixture);
        assert_eq!(skipped, 1);
    }

    #[test]
    fn created_after_confirmed_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("incidents.jsonl");
        let mut bad = incident("I1", &["e1"], &["C1"], "2019-05-01");
        bad.confirmed_date = Some(date("2019-01-01"));
        save_jsonl(&path, &[bad]).unwrap();
        let (records, skipped) = load_incidents(&path).unwrap();
        assert!(records.is_empty());
        assert_eq!(skipped, 1);
    }

    #[test]
    fn join_drops_dangling_references() {
        let (mut incidents, engineers, kbas, swarms, components) = tiny_inputs();
        incidents.push(incident("I9", &["ghost"], &["C1"], "2019-01-01"));
        incidents.push(incident("I10", &["e1"], &["nope"], "2019-01-01"));
        let (corpus, report) =
            join_corpus(incidents, engineers, kbas, swarms, components, 100).unwrap();
        assert_eq!(corpus.incidents.len(), 3);
        assert_eq!(report.dropped_dangling, 2);
        // Swarm responders deduplicated.
        assert_eq!(corpus.swarms[0].responder_ids, vec!["e2", "e3"]);
    }

    #[test]
    fn top_m_at_least_engineer_count_is_identity() {
        let (incidents, engineers, kbas, swarms, components) = tiny_inputs();
        let (corpus, report) = join_corpus(
            incidents.clone(),
            engineers.clone(),
            kbas,
            swarms,
            components,
            3,
        )
        .unwrap();
        assert_eq!(corpus.incidents.len(), incidents.len());
        assert_eq!(corpus.engineers.len(), engineers.len());
        assert_eq!(report.dropped_by_prolific_filter, 0);
    }

    #[test]
    fn single_prolific_engineer_retains_their_incidents() {
        let incidents = vec![
            incident("I1", &["e1"], &["C1"], "2019-01-01"),
            incident("I2", &["e1"], &["C1"], "2019-02-01"),
            incident("I3", &["e1"], &["C1"], "2019-03-01"),
        ];
        let engineers = vec![engineer("e1"), engineer("e2")];
        let (corpus, _) = join_corpus(
            incidents,
            engineers,
            vec![],
            vec![],
            vec![component("C1")],
            1,
        )
        .unwrap();
        assert_eq!(corpus.incidents.len(), 3);
        assert_eq!(corpus.engineers.len(), 1);
        assert_eq!(corpus.engineers[0].engineer_id, "e1");
    }

    #[test]
    fn join_is_idempotent() {
        let (incidents, engineers, kbas, swarms, components) = tiny_inputs();
        let (first, _) = join_corpus(incidents, engineers, kbas, swarms, components, 2).unwrap();
        let (second, report) = join_corpus(
            first.incidents.clone(),
            first.engineers.clone(),
            first.kbas.clone(),
            first.swarms.clone(),
            first.components.clone(),
            2,
        )
        .unwrap();
        assert_eq!(first, second);
        assert_eq!(report.dropped_dangling, 0);
        assert_eq!(report.dropped_by_prolific_filter, 0);
    }

    #[test]
    fn resolver_is_last_raw_processor_after_dedup() {
        let (mut incidents, engineers, kbas, swarms, components) = tiny_inputs();
        incidents[0].processor_ids = vec!["e2".into(), "e1".into(), "e2".into()];
        let (corpus, _) = join_corpus(incidents, engineers, kbas, swarms, components, 10).unwrap();
        assert_eq!(corpus.incidents[0].processor_ids, vec!["e1", "e2"]);
        assert_eq!(Corpus::resolver_of(&corpus.incidents[0]), Some("e2"));
        assert_eq!(Corpus::participants_of(&corpus.incidents[0]), vec!["e1"]);
    }

    #[test]
    fn split_partitions_by_created_date() {
        let (incidents, engineers, kbas, swarms, components) = tiny_inputs();
        let (corpus, _) = join_corpus(incidents, engineers, kbas, swarms, components, 10).unwrap();
        let (train, val, test) =
            split_by_time(&corpus, date("2019-06-01"), date("2020-01-01")).unwrap();
        // Counted by hand from the fixture dates: I1 (2019-03) trains, I2
        // lands exactly on the train cutoff so it validates, I3 (2020-02) tests.
        assert_eq!(train.incidents.len(), 1);
        assert_eq!(val.incidents.len(), 1);
        assert_eq!(val.incidents[0].incident_id, "I2");
        assert_eq!(test.incidents.len(), 1);
        let total = train.incidents.len() + val.incidents.len() + test.incidents.len();
        assert_eq!(total, corpus.incidents.len());
        // Swarms follow their incident; KBAs and engineers are context everywhere.
        assert_eq!(train.swarms.len(), 1);
        assert_eq!(test.swarms.len(), 0);
        assert_eq!(test.kbas.len(), corpus.kbas.len());
        assert_eq!(test.engineers.len(), corpus.engineers.len());
    }

    #[test]
    fn split_with_everything_before_cutoffs_leaves_test_empty() {
        let (incidents, engineers, kbas, swarms, components) = tiny_inputs();
        let (corpus, _) = join_corpus(incidents, engineers, kbas, swarms, components, 10).unwrap();
        let (_, _, test) = split_by_time(&corpus, date("2020-06-01"), date("2021-01-01")).unwrap();
        assert!(test.incidents.is_empty());
    }

    #[test]
    fn empty_train_split_is_fatal() {
        let (incidents, engineers, kbas, swarms, components) = tiny_inputs();
        let (corpus, _) = join_corpus(incidents, engineers, kbas, swarms, components, 10).unwrap();
        assert!(split_by_time(&corpus, date("2010-01-01"), date("2011-01-01")).is_err());
    }

    #[test]
    fn messages_round_trip() {
        let messages = vec![
            Message {
                author: CUSTOMER_AUTHOR.into(),
                text: "the export fails with a timeout".into(),
            },
            Message {
                author: "e7".into(),
                text: "please attach the trace file".into(),
            },
        ];
        let joined = join_messages(&messages);
        assert_eq!(parse_messages(&joined), messages);
        assert!(parse_messages("").is_empty());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempdir().unwrap();
        let manifest = CorpusManifest {
            incidents: dir.path().join("incidents.jsonl"),
            engineers: dir.path().join("engineers.jsonl"),
            kbas: dir.path().join("kbas.jsonl"),
            swarms: dir.path().join("swarms.jsonl"),
            components: dir.path().join("components.jsonl"),
            top_m: 5000,
            train_cutoff: date("2019-01-01"),
            val_cutoff: date("2020-01-01"),
        };
        let path = dir.path().join("corpus.manifest");
        manifest.save(&path).unwrap();
        assert_eq!(CorpusManifest::load(&path).unwrap(), manifest);
    }
}
