//! Run configuration: a plain key=value file, overridable by flags.
//!
//! Every resolved value is echoed into the run manifest, so an experiment
//! can always be reconstructed from its artifacts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use ur3_core::lm_backend::{BackendConfig, HttpBackendConfig};
use ur3_core::scoring::{DEFAULT_ALPHA, DEFAULT_LAMBDA};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Retriever {
    Bm25,
    /// Import a precomputed run file instead of searching.
    RunFile(PathBuf),
}

impl fmt::Display for Retriever {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Retriever::Bm25 => f.write_str("bm25"),
            Retriever::RunFile(path) => write!(f, "{}", path.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    None,
    Upr,
    Ur3,
    Interpolation,
}

impl fmt::Display for MethodChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodChoice::None => "none",
            MethodChoice::Upr => "upr",
            MethodChoice::Ur3 => "ur3",
            MethodChoice::Interpolation => "interpolation",
        })
    }
}

impl FromStr for MethodChoice {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MethodChoice::None),
            "upr" => Ok(MethodChoice::Upr),
            "ur3" => Ok(MethodChoice::Ur3),
            "interpolation" => Ok(MethodChoice::Interpolation),
            other => bail!("unknown method {other:?}, expected none|upr|ur3|interpolation"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendChoice {
    Ngram,
    Http,
}

impl fmt::Display for BackendChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendChoice::Ngram => "ngram",
            BackendChoice::Http => "http",
        })
    }
}

impl FromStr for BackendChoice {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ngram" => Ok(BackendChoice::Ngram),
            "http" => Ok(BackendChoice::Http),
            other => bail!("unknown backend {other:?}, expected ngram|http"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub retriever: Retriever,
    /// Index snapshot location; defaults to `{out}/index.json`.
    pub index: Option<PathBuf>,
    pub pool: usize,
    pub method: MethodChoice,
    pub alpha: f64,
    pub lambda: f64,
    pub backend: BackendChoice,
    pub ngram_order: usize,
    pub ngram_k: f64,
    /// Training text for the ngram backend.
    pub train: Option<PathBuf>,
    pub max_context: usize,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub cache_dir: Option<PathBuf>,
    pub out: PathBuf,
    /// Seed for fixture generation.
    pub seed: u64,
    /// Trial count for the fixture statistics run.
    pub trials: usize,
    /// How many trials the fixture merges into the demo corpus.
    pub fixture_trials: usize,
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            dataset: None,
            retriever: Retriever::Bm25,
            index: None,
            pool: 100,
            method: MethodChoice::Ur3,
            alpha: DEFAULT_ALPHA,
            lambda: DEFAULT_LAMBDA,
            backend: BackendChoice::Ngram,
            ngram_order: 3,
            ngram_k: 0.5,
            train: None,
            max_context: 8192,
            endpoint: None,
            model: None,
            api_key_env: None,
            timeout_secs: 120,
            max_in_flight: 4,
            cache_dir: None,
            out: PathBuf::from("runs"),
            seed: 17,
            trials: 100,
            fixture_trials: 8,
            timing: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config = RunConfig::default();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "{}:{}: expected `key = value`, got {raw:?}",
                    path.display(),
                    number + 1
                );
            };
            config
                .set(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), number + 1))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "corpus" => self.corpus = Some(PathBuf::from(value)),
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "retriever" => {
                self.retriever = if value == "bm25" {
                    Retriever::Bm25
                } else {
                    Retriever::RunFile(PathBuf::from(value))
                }
            }
            "index" => self.index = Some(PathBuf::from(value)),
            "pool" => self.pool = parse(key, value)?,
            "method" => self.method = value.parse()?,
            "alpha" => self.alpha = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "backend" => self.backend = value.parse()?,
            "ngram_order" => self.ngram_order = parse(key, value)?,
            "ngram_k" => self.ngram_k = parse(key, value)?,
            "train" => self.train = Some(PathBuf::from(value)),
            "max_context" => self.max_context = parse(key, value)?,
            "endpoint" => self.endpoint = Some(value.to_string()),
            "model" => self.model = Some(value.to_string()),
            "api_key_env" => self.api_key_env = Some(value.to_string()),
            "timeout_secs" => self.timeout_secs = parse(key, value)?,
            "max_in_flight" => self.max_in_flight = parse(key, value)?,
            "cache_dir" => self.cache_dir = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "fixture_trials" => self.fixture_trials = parse(key, value)?,
            "timing" => self.timing = parse(key, value)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool == 0 {
            bail!("pool size must be at least 1");
        }
        Ok(())
    }

    pub fn corpus_path(&self) -> Result<&Path> {
        self.corpus
            .as_deref()
            .context("config needs `corpus = <path>`")
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .context("config needs `dataset = <path>`")
    }

    pub fn index_path(&self) -> PathBuf {
        self.index
            .clone()
            .unwrap_or_else(|| self.out.join("index.json"))
    }

    pub fn backend_config(&self) -> Result<BackendConfig> {
        match self.backend {
            BackendChoice::Ngram => {
                let train = self
                    .train
                    .clone()
                    .context("ngram backend needs `train = <path>`")?;
                Ok(BackendConfig::Ngram {
                    order: self.ngram_order,
                    k: self.ngram_k,
                    train,
                    max_context_tokens: self.max_context,
                })
            }
            BackendChoice::Http => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .context("http backend needs `endpoint = <url>`")?;
                let model = self
                    .model
                    .clone()
                    .context("http backend needs `model = <name>`")?;
                Ok(BackendConfig::Http(HttpBackendConfig {
                    endpoint,
                    model,
                    api_key_env: self.api_key_env.clone(),
                    max_context_tokens: self.max_context,
                    timeout_secs: self.timeout_secs,
                    max_in_flight: self.max_in_flight,
                }))
            }
        }
    }

    /// Every resolved value, stringified, for the manifest.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let opt_path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let opt_str = |s: &Option<String>| s.clone().unwrap_or_default();
        let mut snap = BTreeMap::new();
        snap.insert("corpus".into(), opt_path(&self.corpus));
        snap.insert("dataset".into(), opt_path(&self.dataset));
        snap.insert("retriever".into(), self.retriever.to_string());
        snap.insert("index".into(), self.index_path().display().to_string());
        snap.insert("pool".into(), self.pool.to_string());
        snap.insert("method".into(), self.method.to_string());
        snap.insert("alpha".into(), self.alpha.to_string());
        snap.insert("lambda".into(), self.lambda.to_string());
        snap.insert("backend".into(), self.backend.to_string());
        snap.insert("ngram_order".into(), self.ngram_order.to_string());
        snap.insert("ngram_k".into(), self.ngram_k.to_string());
        snap.insert("train".into(), opt_path(&self.train));
        snap.insert("max_context".into(), self.max_context.to_string());
        snap.insert("endpoint".into(), opt_str(&self.endpoint));
        snap.insert("model".into(), opt_str(&self.model));
        snap.insert("api_key_env".into(), opt_str(&self.api_key_env));
        snap.insert("timeout_secs".into(), self.timeout_secs.to_string());
        snap.insert("max_in_flight".into(), self.max_in_flight.to_string());
        snap.insert("cache_dir".into(), opt_path(&self.cache_dir));
        snap.insert("out".into(), self.out.display().to_string());
        snap.insert("seed".into(), self.seed.to_string());
        snap.insert("trials".into(), self.trials.to_string());
        snap.insert("fixture_trials".into(), self.fixture_trials.to_string());
        snap.insert("timing".into(), self.timing.to_string());
        snap
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("config key {key}: cannot parse {value:?}: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn load_text(text: &str) -> Result<RunConfig> {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(text.as_bytes()).unwrap();
        RunConfig::load(file.path())
    }

    #[test]
    fn parses_comments_blanks_and_values() {
        let config = load_text(
            "# a comment\n\
             \n\
             corpus = data/corpus.jsonl\n\
             pool = 20\n\
             alpha = 0.5\n\
             timing = true\n\
             retriever = external/dpr.run\n",
        )
        .unwrap();
        assert_eq!(config.corpus.as_deref(), Some(Path::new("data/corpus.jsonl")));
        assert_eq!(config.pool, 20);
        assert_eq!(config.alpha, 0.5);
        assert!(config.timing);
        assert_eq!(
            config.retriever,
            Retriever::RunFile(PathBuf::from("external/dpr.run"))
        );
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = load_text("bogus = 1\n").unwrap_err();
        assert!(format!("{err:#}").contains("bogus"));
    }

    #[test]
    fn missing_equals_is_an_error() {
        let err = load_text("corpus data.jsonl\n").unwrap_err();
        assert!(format!("{err:#}").contains("key = value"));
    }

    #[test]
    fn zero_pool_is_rejected() {
        let err = load_text("pool = 0\n").unwrap_err();
        assert!(format!("{err:#}").contains("pool"));
    }

    #[test]
    fn the_index_path_defaults_under_out() {
        let config = load_text("out = exp1\n").unwrap();
        assert_eq!(config.index_path(), PathBuf::from("exp1/index.json"));
        let config = load_text("index = elsewhere.json\n").unwrap();
        assert_eq!(config.index_path(), PathBuf::from("elsewhere.json"));
    }

    #[test]
    fn snapshot_echoes_every_field() {
        let snap = RunConfig::default().snapshot();
        for key in [
            "corpus", "dataset", "retriever", "index", "pool", "method", "alpha", "lambda",
            "backend", "ngram_order", "ngram_k", "train", "max_context", "endpoint", "model",
            "api_key_env", "timeout_secs", "max_in_flight", "cache_dir", "out", "seed", "trials",
            "fixture_trials", "timing",
        ] {
            assert!(snap.contains_key(key), "snapshot missing {key}");
        }
        assert_eq!(snap["alpha"], "0.25");
        assert_eq!(snap["method"], "ur3");
    }

    #[test]
    fn backend_config_requires_the_training_text() {
        let config = RunConfig::default();
        let err = config.backend_config().unwrap_err();
        assert!(format!("{err:#}").contains("train"));
    }
}
