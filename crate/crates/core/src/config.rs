//! Run configuration: flat `key = value` text with section prefixes
//! (`train.margin`), environment-variable overrides, a canonical config hash,
//! and the artifact store layout that every command reads and writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::kgraph::WalkConfig;
use crate::synthgen::SynthConfig;
use crate::train::TrainConfig;
use crate::util::sha256_hex;

/// Prefix for environment overrides: `train.margin` becomes
/// `EXPERTMATCH_TRAIN_MARGIN`.
pub const ENV_PREFIX: &str = "EXPERTMATCH_";

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizeConfig {
    /// Projected text dimension.
    pub p: usize,
    pub min_df: usize,
    pub max_df_ratio: f64,
    /// Optional file of precomputed per-node dense vectors.
    pub pretrained: Option<PathBuf>,
}

impl Default for FeaturizeConfig {
    fn default() -> Self {
        FeaturizeConfig {
            p: 256,
            min_df: 2,
            max_df_ratio: 0.95,
            pretrained: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GnnConfig {
    pub layers: usize,
    pub d_msg: usize,
    pub hidden: usize,
    pub embed_dim: usize,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig { layers: 2, d_msg: 128, hidden: 128, embed_dim: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Accepted for compatibility; this implementation is deterministic in
    /// both modes (keyed RNG streams, fixed-order reductions).
    pub deterministic: bool,
    pub threads: Option<usize>,
    pub synth: SynthConfig,
    pub featurize: FeaturizeConfig,
    pub walk: WalkConfig,
    pub gnn: GnnConfig,
    pub train: TrainConfig,
    pub lambda: f64,
    pub eval_ks: Vec<usize>,
    pub eval_sample_size: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: PathBuf::from("corpus/corpus.manifest"),
            out_dir: PathBuf::from("out"),
            seed: 42,
            deterministic: true,
            threads: None,
            synth: SynthConfig::default(),
            featurize: FeaturizeConfig::default(),
            walk: WalkConfig::default(),
            gnn: GnnConfig::default(),
            train: TrainConfig::default(),
            lambda: 0.5,
            eval_ks: vec![50, 100, 200],
            eval_sample_size: None,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "manifest",
    "out_dir",
    "seed",
    "deterministic",
    "threads",
    "synth.n_engineers",
    "synth.n_components",
    "synth.n_incidents",
    "synth.n_kbas",
    "synth.experts_per_component",
    "synth.vocab_per_component",
    "synth.shared_vocab",
    "synth.text_len",
    "synth.swarm_rate",
    "synth.noise",
    "synth.date_start",
    "synth.date_end",
    "featurize.p",
    "featurize.min_df",
    "featurize.max_df_ratio",
    "featurize.pretrained",
    "walk.walk_count",
    "walk.walk_length",
    "walk.restart_prob",
    "walk.neighborhood_size",
    "gnn.layers",
    "gnn.d_msg",
    "gnn.hidden",
    "gnn.embed_dim",
    "train.margin",
    "train.learning_rate",
    "train.epochs",
    "train.batch_size",
    "train.negatives_per_positive",
    "train.hard_negative_fraction",
    "train.seed",
    "train.patience",
    "train.eval_k",
    "rank.lambda",
    "eval.ks",
    "eval.sample_size",
];

fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_uppercase())
}

impl RunConfig {
    /// Parse a config file, apply environment overrides, and resolve relative
    /// paths against the file's directory. Unknown keys are rejected with the
    /// offending key named.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "{}:{}: expected 'key = value', got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::config(format!(
                    "{}:{}: unknown configuration key {key:?}",
                    path.display(),
                    lineno + 1
                )));
            }
            pairs.insert(key, value.trim().to_string());
        }
        for key in KNOWN_KEYS {
            if let Ok(value) = std::env::var(env_name(key)) {
                pairs.insert((*key).to_string(), value);
            }
        }
        Self::from_pairs(&pairs, &dir)
    }

    fn from_pairs(pairs: &BTreeMap<String, String>, dir: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let parse_err =
            |key: &str, value: &str, what: &str| Error::config(format!("{key} = {value:?}: {what}"));
        let resolve = |raw: &str| -> PathBuf {
            let p = Path::new(raw);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                dir.join(p)
            }
        };
        for (key, value) in pairs {
            let usize_of = || -> Result<usize> {
                value
                    .parse()
                    .map_err(|_| parse_err(key, value, "expected a non-negative integer"))
            };
            let f64_of = || -> Result<f64> {
                value
                    .parse()
                    .map_err(|_| parse_err(key, value, "expected a number"))
            };
            let date_of = || -> Result<NaiveDate> {
                value
                    .parse()
                    .map_err(|_| parse_err(key, value, "expected YYYY-MM-DD"))
            };
            match key.as_str() {
                "manifest" => cfg.manifest = resolve(value),
                "out_dir" => cfg.out_dir = resolve(value),
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| parse_err(key, value, "expected an integer seed"))?
                }
                "deterministic" => {
                    cfg.deterministic = value
                        .parse()
                        .map_err(|_| parse_err(key, value, "expected true or false"))?
                }
                "threads" => cfg.threads = Some(usize_of()?),
                "synth.n_engineers" => cfg.synth.n_engineers = usize_of()?,
                "synth.n_components" => cfg.synth.n_components = usize_of()?,
                "synth.n_incidents" => cfg.synth.n_incidents = usize_of()?,
                "synth.n_kbas" => cfg.synth.n_kbas = usize_of()?,
                "synth.experts_per_component" => cfg.synth.experts_per_component = usize_of()?,
                "synth.vocab_per_component" => cfg.synth.vocab_per_component = usize_of()?,
                "synth.shared_vocab" => cfg.synth.shared_vocab = usize_of()?,
                "synth.text_len" => cfg.synth.text_len = usize_of()?,
                "synth.swarm_rate" => cfg.synth.swarm_rate = f64_of()?,
                "synth.noise" => cfg.synth.noise = f64_of()?,
                "synth.date_start" => cfg.synth.date_start = date_of()?,
                "synth.date_end" => cfg.synth.date_end = date_of()?,
                "featurize.p" => cfg.featurize.p = usize_of()?,
                "featurize.min_df" => cfg.featurize.min_df = usize_of()?,
                "featurize.max_df_ratio" => cfg.featurize.max_df_ratio = f64_of()?,
                "featurize.pretrained" => cfg.featurize.pretrained = Some(resolve(value)),
                "walk.walk_count" => cfg.walk.walk_count = usize_of()?,
                "walk.walk_length" => cfg.walk.walk_length = usize_of()?,
                "walk.restart_prob" => cfg.walk.restart_prob = f64_of()?,
                "walk.neighborhood_size" => cfg.walk.neighborhood_size = usize_of()?,
                "gnn.layers" => cfg.gnn.layers = usize_of()?,
                "gnn.d_msg" => cfg.gnn.d_msg = usize_of()?,
                "gnn.hidden" => cfg.gnn.hidden = usize_of()?,
                "gnn.embed_dim" => cfg.gnn.embed_dim = usize_of()?,
                "train.margin" => cfg.train.margin = f64_of()?,
                "train.learning_rate" => cfg.train.learning_rate = f64_of()?,
                "train.epochs" => cfg.train.epochs = usize_of()?,
                "train.batch_size" => cfg.train.batch_size = usize_of()?,
                "train.negatives_per_positive" => cfg.train.negatives_per_positive = usize_of()?,
                "train.hard_negative_fraction" => cfg.train.hard_negative_fraction = f64_of()?,
                "train.seed" => {
                    cfg.train.seed = value
                        .parse()
                        .map_err(|_| parse_err(key, value, "expected an integer seed"))?
                }
                "train.patience" => cfg.train.patience = usize_of()?,
                "train.eval_k" => cfg.train.eval_k = usize_of()?,
                "rank.lambda" => cfg.lambda = f64_of()?,
                "eval.ks" => {
                    let ks: std::result::Result<Vec<usize>, _> =
                        value.split(',').map(|k| k.trim().parse()).collect();
                    cfg.eval_ks =
                        ks.map_err(|_| parse_err(key, value, "expected comma-separated integers"))?;
                }
                "eval.sample_size" => cfg.eval_sample_size = Some(usize_of()?),
                other => return Err(Error::config(format!("unknown configuration key {other:?}"))),
            }
        }
        // One global seed drives every seeded component unless train.seed is
        // overridden explicitly.
        if !pairs.contains_key("train.seed") {
            cfg.train.seed = cfg.seed;
        }
        cfg.synth.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.walk.validate()?;
        self.train.validate()?;
        if self.featurize.p == 0 {
            return Err(Error::config("featurize.p must be positive"));
        }
        if self.featurize.min_df == 0 {
            return Err(Error::config("featurize.min_df must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.featurize.max_df_ratio) {
            return Err(Error::config(format!(
                "featurize.max_df_ratio {} outside [0, 1]",
                self.featurize.max_df_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!("rank.lambda {} outside [0, 1]", self.lambda)));
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(Error::config("eval.ks must be positive integers"));
        }
        if self.gnn.embed_dim == 0 {
            return Err(Error::config("gnn.embed_dim must be positive"));
        }
        Ok(())
    }

    /// Canonical text form: every known key with its resolved value, sorted.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("deterministic", self.deterministic.to_string());
        push("eval.ks", self.eval_ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","));
        push(
            "eval.sample_size",
            self.eval_sample_size.map(|s| s.to_string()).unwrap_or_else(|| "all".into()),
        );
        push("featurize.max_df_ratio", self.featurize.max_df_ratio.to_string());
        push("featurize.min_df", self.featurize.min_df.to_string());
        push("featurize.p", self.featurize.p.to_string());
        push(
            "featurize.pretrained",
            self.featurize
                .pretrained
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "none".into()),
        );
        push("gnn.d_msg", self.gnn.d_msg.to_string());
        push("gnn.embed_dim", self.gnn.embed_dim.to_string());
        push("gnn.hidden", self.gnn.hidden.to_string());
        push("gnn.layers", self.gnn.layers.to_string());
        push("manifest", self.manifest.display().to_string());
        push("rank.lambda", self.lambda.to_string());
        push("seed", self.seed.to_string());
        push("synth.date_end", self.synth.date_end.to_string());
        push("synth.date_start", self.synth.date_start.to_string());
        push("synth.experts_per_component", self.synth.experts_per_component.to_string());
        push("synth.n_components", self.synth.n_components.to_string());
        push("synth.n_engineers", self.synth.n_engineers.to_string());
        push("synth.n_incidents", self.synth.n_incidents.to_string());
        push("synth.n_kbas", self.synth.n_kbas.to_string());
        push("synth.noise", self.synth.noise.to_string());
        push("synth.shared_vocab", self.synth.shared_vocab.to_string());
        push("synth.swarm_rate", self.synth.swarm_rate.to_string());
        push("synth.text_len", self.synth.text_len.to_string());
        push("synth.vocab_per_component", self.synth.vocab_per_component.to_string());
        push("train.batch_size", self.train.batch_size.to_string());
        push("train.epochs", self.train.epochs.to_string());
        push("train.eval_k", self.train.eval_k.to_string());
        push("train.hard_negative_fraction", self.train.hard_negative_fraction.to_string());
        push("train.learning_rate", self.train.learning_rate.to_string());
        push("train.margin", self.train.margin.to_string());
        push("train.negatives_per_positive", self.train.negatives_per_positive.to_string());
        push("train.patience", self.train.patience.to_string());
        push("train.seed", self.train.seed.to_string());
        push("walk.neighborhood_size", self.walk.neighborhood_size.to_string());
        push("walk.restart_prob", self.walk.restart_prob.to_string());
        push("walk.walk_count", self.walk.walk_count.to_string());
        push("walk.walk_length", self.walk.walk_length.to_string());
        out
    }

    /// Hash stamped into every artifact this config produces.
    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }
}

/// Output directory with config-hash stamping. Loaders verify stamps and
/// refuse artifacts produced by a different configuration unless forced.
pub struct ArtifactStore {
    pub dir: PathBuf,
    pub config_hash: String,
    pub force: bool,
}

pub const STAMP_PREFIX: &str = "# config_hash = ";

impl ArtifactStore {
    pub fn create(dir: &Path, config_hash: String, force: bool) -> Result<ArtifactStore> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(ArtifactStore {
            dir: dir.to_path_buf(),
            config_hash,
            force,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Read the stamp of an existing artifact, if any.
    pub fn stamp_of(path: &Path) -> Option<String> {
        let file = fs::File::open(path).ok()?;
        use std::io::{BufRead, BufReader};
        let mut first = String::new();
        BufReader::new(file).read_line(&mut first).ok()?;
        first
            .strip_prefix(STAMP_PREFIX)
            .map(|h| h.trim().to_string())
    }

    /// Refuse to overwrite an artifact stamped by a different config.
    pub fn guard_overwrite(&self, path: &Path) -> Result<()> {
        if self.force || !path.exists() {
            return Ok(());
        }
        if let Some(stamp) = Self::stamp_of(path) {
            if stamp != self.config_hash {
                return Err(Error::data(format!(
                    "{} was produced by config {} (current {}); \
                     remove it or pass --force to overwrite",
                    path.display(),
                    &stamp[..12.min(stamp.len())],
                    &self.config_hash[..12]
                )));
            }
        }
        Ok(())
    }

    /// Write a text artifact with the config-hash stamp on the first line.
    pub fn write_stamped(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.path(name);
        self.guard_overwrite(&path)?;
        let content = format!("{STAMP_PREFIX}{}\n{body}", self.config_hash);
        fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Read a stamped artifact, verifying the stamp.
    pub fn read_stamped(&self, name: &str) -> Result<String> {
        let path = self.path(name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        match text.split_once('\n') {
            Some((first, rest)) if first.starts_with(STAMP_PREFIX) => {
                let stamp = first.trim_start_matches(STAMP_PREFIX).trim();
                if stamp != self.config_hash {
                    return Err(Error::data(format!(
                        "{} carries config hash {}, expected {}",
                        path.display(),
                        &stamp[..12.min(stamp.len())],
                        &self.config_hash[..12]
                    )));
                }
                Ok(rest.to_string())
            }
            _ => Err(Error::data(format!("{} is not a stamped artifact", path.display()))),
        }
    }
}
