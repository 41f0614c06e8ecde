//! Flat `section.key = value` pipeline configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::classify::SvmParams;
use crate::corpus::{CorpusSpec, SplitSpec};
use crate::dbn::Architecture;
use crate::embed::TsneParams;
use crate::error::{Error, Result};
use crate::nncore::{Activation, TrainConfig};

pub const ARTIFACTS_ENV: &str = "SIGFORGE_ARTIFACTS";
pub const DEFAULT_ARTIFACTS_DIR: &str = "artifacts";

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    /// External corpus; when unset the `gen` stage writes one under the
    /// artifacts directory.
    pub corpus_dir: Option<PathBuf>,
    pub artifacts_dir: PathBuf,
    pub corpus: CorpusSpec,
    pub top_n: usize,
    pub split: SplitSpec,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
    pub knn_k: usize,
    pub svm: SvmParams,
    pub tsne: TsneParams,
    seed_overrides: SeedOverrides,
}

/// Seeds given explicitly in the file; the rest follow the global seed.
#[derive(Clone, Debug, Default, PartialEq)]
struct SeedOverrides {
    corpus: Option<u64>,
    split: Option<u64>,
    train: Option<u64>,
    finetune: Option<u64>,
    svm: Option<u64>,
    tsne: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut cfg = PipelineConfig {
            seed: 42,
            corpus_dir: None,
            artifacts_dir: PathBuf::from(DEFAULT_ARTIFACTS_DIR),
            corpus: CorpusSpec::default(),
            top_n: 2000,
            split: SplitSpec::default(),
            arch: Architecture::desk_scale(),
            train: TrainConfig {
                epochs: 50,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                epochs: 50,
                ..TrainConfig::default()
            },
            knn_k: 1,
            svm: SvmParams::default(),
            tsne: TsneParams::default(),
            seed_overrides: SeedOverrides::default(),
        };
        cfg.apply_seed(42, &SeedOverrides::default());
        cfg
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn set_train_key(cfg: &mut TrainConfig, seed: &mut Option<u64>, key: &str, field: &str, value: &str) -> Result<bool> {
    match field {
        "noise_ratio" => cfg.noise_ratio = parse_value(key, value)?,
        "dropout_prob" => cfg.dropout_prob = parse_value(key, value)?,
        "lr_start" => cfg.lr_start = parse_value(key, value)?,
        "lr_end" => cfg.lr_end = parse_value(key, value)?,
        "epochs" => cfg.epochs = parse_value(key, value)?,
        "batch_size" => cfg.batch_size = parse_value(key, value)?,
        "l2_coeff" => cfg.l2_coeff = parse_value(key, value)?,
        "tied_weights" => cfg.tied_weights = parse_bool(key, value)?,
        "activation" => {
            cfg.activation = Activation::from_name(value)
                .ok_or_else(|| Error::Config(format!("`{key}`: unknown activation `{value}`")))?
        }
        "seed" => *seed = Some(parse_value(key, value)?),
        _ => return Ok(false),
    }
    Ok(true)
}

impl PipelineConfig {
    /// Parses config text on top of the defaults. `artifacts_dir` falls back
    /// to `$SIGFORGE_ARTIFACTS` when the file does not set it.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_env(text, std::env::var_os(ARTIFACTS_ENV).map(PathBuf::from))
    }

    pub fn parse_with_env(text: &str, env_artifacts: Option<PathBuf>) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        if let Some(dir) = env_artifacts {
            cfg.artifacts_dir = dir;
        }
        let mut seeds = SeedOverrides::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            if !seen.insert(key.to_owned()) {
                return Err(Error::Config(format!("line {}: `{key}` given twice", lineno + 1)));
            }
            if !cfg.set(&mut seeds, key, value)? {
                return Err(Error::Config(format!("line {}: unknown key `{key}`", lineno + 1)));
            }
        }
        cfg.apply_seed(cfg.seed, &seeds);
        cfg.seed_overrides = seeds;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, seeds: &mut SeedOverrides, key: &str, value: &str) -> Result<bool> {
        let (section, field) = key.split_once('.').unwrap_or(("", key));
        match (section, field) {
            ("", "seed") => self.seed = parse_value(key, value)?,
            ("paths", "corpus_dir") => self.corpus_dir = Some(PathBuf::from(value)),
            ("paths", "artifacts_dir") => self.artifacts_dir = PathBuf::from(value),
            ("corpus", "n_families") => self.corpus.n_families = parse_value(key, value)?,
            ("corpus", "variants_per_family") => self.corpus.variants_per_family = parse_value(key, value)?,
            ("corpus", "base_tokens_per_family") => self.corpus.base_tokens_per_family = parse_value(key, value)?,
            ("corpus", "shared_token_pool") => self.corpus.shared_token_pool = parse_value(key, value)?,
            ("corpus", "perturbation_rate") => self.corpus.perturbation_rate = parse_value(key, value)?,
            ("corpus", "seed") => seeds.corpus = Some(parse_value(key, value)?),
            ("dict", "top_n") => self.top_n = parse_value(key, value)?,
            ("split", "train_per_class") => self.split.train_per_class = parse_value(key, value)?,
            ("split", "test_per_class") => self.split.test_per_class = parse_value(key, value)?,
            ("split", "seed") => seeds.split = Some(parse_value(key, value)?),
            ("arch", "layers") => {
                let widths = value
                    .split(',')
                    .map(|w| parse_value::<usize>(key, w.trim()))
                    .collect::<Result<Vec<_>>>()?;
                self.arch = Architecture::new(widths).map_err(|e| Error::Config(format!("`{key}`: {e}")))?;
            }
            ("train", f) => return set_train_key(&mut self.train, &mut seeds.train, key, f, value),
            ("finetune", f) => return set_train_key(&mut self.finetune, &mut seeds.finetune, key, f, value),
            ("knn", "k") => self.knn_k = parse_value(key, value)?,
            ("svm", "epochs") => self.svm.epochs = parse_value(key, value)?,
            ("svm", "lambda") => self.svm.lambda = parse_value(key, value)?,
            ("svm", "seed") => seeds.svm = Some(parse_value(key, value)?),
            ("tsne", "perplexity") => self.tsne.perplexity = parse_value(key, value)?,
            ("tsne", "iterations") => self.tsne.iterations = parse_value(key, value)?,
            ("tsne", "learning_rate") => self.tsne.learning_rate = parse_value(key, value)?,
            ("tsne", "early_exaggeration") => self.tsne.early_exaggeration = parse_value(key, value)?,
            ("tsne", "exaggeration_iterations") => self.tsne.exaggeration_iterations = parse_value(key, value)?,
            ("tsne", "initial_momentum") => self.tsne.initial_momentum = parse_value(key, value)?,
            ("tsne", "final_momentum") => self.tsne.final_momentum = parse_value(key, value)?,
            ("tsne", "momentum_switch") => self.tsne.momentum_switch = parse_value(key, value)?,
            ("tsne", "seed") => seeds.tsne = Some(parse_value(key, value)?),
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn apply_seed(&mut self, seed: u64, o: &SeedOverrides) {
        self.seed = seed;
        self.corpus.seed = o.corpus.unwrap_or(seed);
        self.split.seed = o.split.unwrap_or(seed);
        self.train.seed = o.train.unwrap_or(seed);
        self.finetune.seed = o.finetune.unwrap_or(seed);
        self.svm.seed = o.svm.unwrap_or(seed);
        self.tsne.seed = o.tsne.unwrap_or(seed);
    }

    /// Replaces the global seed, keeping per-section seeds given in the file.
    pub fn override_seed(&mut self, seed: u64) {
        let overrides = self.seed_overrides.clone();
        self.apply_seed(seed, &overrides);
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.train.validate()?;
        self.finetune.validate()?;
        self.tsne.validate()?;
        if self.top_n == 0 {
            return Err(Error::Config("dict.top_n must be at least 1".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn.k must be at least 1".into()));
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if !(self.svm.lambda > 0.0) {
            return Err(Error::Config("svm.lambda must be positive".into()));
        }
        Ok(())
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.corpus_dir.clone().unwrap_or_else(|| self.artifacts_dir.join("corpus"))
    }

    /// Canonical text listing every effective setting.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        if let Some(dir) = &self.corpus_dir {
            kv("paths.corpus_dir", dir.display().to_string());
        }
        kv("paths.artifacts_dir", self.artifacts_dir.display().to_string());
        let c = &self.corpus;
        kv("corpus.n_families", c.n_families.to_string());
        kv("corpus.variants_per_family", c.variants_per_family.to_string());
        kv("corpus.base_tokens_per_family", c.base_tokens_per_family.to_string());
        kv("corpus.shared_token_pool", c.shared_token_pool.to_string());
        kv("corpus.perturbation_rate", c.perturbation_rate.to_string());
        kv("corpus.seed", c.seed.to_string());
        kv("dict.top_n", self.top_n.to_string());
        kv("split.train_per_class", self.split.train_per_class.to_string());
        kv("split.test_per_class", self.split.test_per_class.to_string());
        kv("split.seed", self.split.seed.to_string());
        let widths: Vec<String> = self.arch.widths().iter().map(usize::to_string).collect();
        kv("arch.layers", widths.join(","));
        for (section, t) in [("train", &self.train), ("finetune", &self.finetune)] {
            kv(&format!("{section}.noise_ratio"), t.noise_ratio.to_string());
            kv(&format!("{section}.dropout_prob"), t.dropout_prob.to_string());
            kv(&format!("{section}.lr_start"), t.lr_start.to_string());
            kv(&format!("{section}.lr_end"), t.lr_end.to_string());
            kv(&format!("{section}.epochs"), t.epochs.to_string());
            kv(&format!("{section}.batch_size"), t.batch_size.to_string());
            kv(&format!("{section}.l2_coeff"), t.l2_coeff.to_string());
            kv(&format!("{section}.tied_weights"), t.tied_weights.to_string());
            kv(&format!("{section}.activation"), t.activation.name().to_string());
            kv(&format!("{section}.seed"), t.seed.to_string());
        }
        kv("knn.k", self.knn_k.to_string());
        kv("svm.epochs", self.svm.epochs.to_string());
        kv("svm.lambda", self.svm.lambda.to_string());
        kv("svm.seed", self.svm.seed.to_string());
        let t = &self.tsne;
        kv("tsne.perplexity", t.perplexity.to_string());
        kv("tsne.iterations", t.iterations.to_string());
        kv("tsne.learning_rate", t.learning_rate.to_string());
        kv("tsne.early_exaggeration", t.early_exaggeration.to_string());
        kv("tsne.exaggeration_iterations", t.exaggeration_iterations.to_string());
        kv("tsne.initial_momentum", t.initial_momentum.to_string());
        kv("tsne.final_momentum", t.final_momentum.to_string());
        kv("tsne.momentum_switch", t.momentum_switch.to_string());
        kv("tsne.seed", t.seed.to_string());
        s
    }
}
