//! Run configuration: one TOML file plus command-line overrides.
//!
//! ```toml
//! dataset = "data/test.jsonl"
//! fixture = "fixtures/world.json"   # optional; the bundled world otherwise
//! registry = "config/tools.toml"    # optional; the bundled tool set otherwise
//! gate = 3
//! parallelism = 4
//! output = "runs/replay"
//! seed = 0
//!
//! [backend]
//! kind = "replay"
//! transcript = "transcripts/gt.jsonl"
//!
//! [synthesis]                       # optional; defaults to [backend]
//! kind = "remote"
//! endpoint = "http://localhost:8000/v1/chat/completions"
//! model = "qwen2.5-7b-instruct"
//! credential_env = "CTXAGENT_API_KEY"
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use clap::Args;
use ctxagent::domain::GateConfig;
use ctxagent::reasoner::BackendConfig;
use ctxagent::toolset::{fixture_default, registry_default, ToolRegistry, WorldFixture};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Backend selection flags. Any of them replaces the configured backend.
#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    /// Replay completions from a transcript file.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["stub", "endpoint"])]
    pub transcript: Option<PathBuf>,
    /// Return this completion for every request.
    #[arg(long, value_name = "TEXT", conflicts_with = "endpoint")]
    pub stub: Option<String>,
    /// Chat-completions endpoint URL.
    #[arg(long, value_name = "URL", requires = "model")]
    pub endpoint: Option<String>,
    /// Model id sent to the endpoint.
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the endpoint's API key.
    #[arg(long, value_name = "VAR")]
    pub credential_env: Option<String>,
}

impl BackendArgs {
    pub fn apply(&self, base: Option<BackendConfig>) -> Option<BackendConfig> {
        let mut cfg = if let Some(t) = &self.transcript {
            Some(BackendConfig::replay(t))
        } else if let Some(s) = &self.stub {
            Some(BackendConfig::stub(s))
        } else if let Some(e) = &self.endpoint {
            Some(BackendConfig::remote(e, self.model.clone().unwrap_or_default()))
        } else {
            base
        };
        if let (Some(cfg), Some(var)) = (cfg.as_mut(), &self.credential_env) {
            cfg.credential_env = Some(var.clone());
        }
        cfg
    }
}

/// Overrides shared by `run` and `infer`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Run configuration file (TOML).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Dataset to run over.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Tool registry (TOML); the bundled registry by default.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// World fixture (JSON); the bundled fixture by default.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Gate threshold: act when the score is at least this (2-5).
    #[arg(long, value_parser = clap::value_parser!(i64).range(2..=5))]
    pub gate: Option<i64>,
    /// Samples processed at once (1 = sequential).
    #[arg(long, short = 'j', value_parser = clap::value_parser!(u64).range(1..))]
    pub parallelism: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    dataset: Option<PathBuf>,
    registry: Option<PathBuf>,
    fixture: Option<PathBuf>,
    gate: Option<i64>,
    parallelism: Option<usize>,
    output: Option<PathBuf>,
    seed: Option<u64>,
    backend: Option<BackendConfig>,
    synthesis: Option<BackendConfig>,
}

/// Fully resolved run settings; paths are checked to exist.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub registry: Option<PathBuf>,
    pub fixture: Option<PathBuf>,
    pub backend: BackendConfig,
    pub synthesis: Option<BackendConfig>,
    pub gate: u8,
    pub parallelism: usize,
    pub output: Option<PathBuf>,
    pub seed: u64,
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p
    }
}

fn must_exist(what: &str, p: &Path) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::Fatal(format!("{what} {} does not exist", p.display())))
    }
}

impl RunConfig {
    pub fn load(args: &RunArgs, output: Option<PathBuf>) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| CliError::Fatal(format!("{}: {e}", path.display())))?;
                let mut file: ConfigFile =
                    toml::from_str(&text).map_err(|e| CliError::Fatal(format!("{}: {e}", path.display())))?;
                let base = path.parent().unwrap_or(Path::new(""));
                file.dataset = file.dataset.map(|p| resolve(base, p));
                file.registry = file.registry.map(|p| resolve(base, p));
                file.fixture = file.fixture.map(|p| resolve(base, p));
                file.output = file.output.map(|p| resolve(base, p));
                file.backend = file.backend.map(|b| b.relative_to(base));
                file.synthesis = file.synthesis.map(|b| b.relative_to(base));
                file
            }
            None => ConfigFile::default(),
        };

        let dataset = args
            .dataset
            .clone()
            .or(file.dataset)
            .ok_or_else(|| CliError::Fatal("no dataset given (--dataset or `dataset` in the config)".into()))?;
        let backend = args.backend.apply(file.backend).ok_or_else(|| {
            CliError::Fatal("no backend given (--transcript, --stub, --endpoint or [backend] in the config)".into())
        })?;
        let gate = args
            .gate
            .or(file.gate)
            .unwrap_or(GateConfig::DEFAULT.threshold().into());
        let gate = GateConfig::new(gate).map_err(|e| CliError::Fatal(e.to_string()))?;
        let parallelism = args.parallelism.map(|p| p as usize).or(file.parallelism).unwrap_or(1);
        if parallelism == 0 {
            return Err(CliError::Fatal("parallelism must be at least 1".into()));
        }

        let cfg = Self {
            dataset,
            registry: args.registry.clone().or(file.registry),
            fixture: args.fixture.clone().or(file.fixture),
            backend,
            synthesis: file.synthesis,
            gate: gate.threshold(),
            parallelism,
            output: output.or(file.output),
            seed: args.seed.or(file.seed).unwrap_or(0),
        };
        must_exist("dataset", &cfg.dataset)?;
        for (what, p) in [("registry", &cfg.registry), ("fixture", &cfg.fixture)] {
            if let Some(p) = p {
                must_exist(what, p)?;
            }
        }
        for b in std::iter::once(&cfg.backend).chain(&cfg.synthesis) {
            b.validate().map_err(|e| CliError::Fatal(e.to_string()))?;
            if let Some(t) = &b.transcript {
                must_exist("transcript", t)?;
            }
        }
        Ok(cfg)
    }

    pub fn gate(&self) -> GateConfig {
        GateConfig::new(self.gate.into()).expect("checked at load")
    }

    pub fn registry(&self) -> Result<ToolRegistry, CliError> {
        load_registry(self.registry.as_deref())
    }

    pub fn world(&self) -> Result<WorldFixture, CliError> {
        match &self.fixture {
            Some(p) => WorldFixture::load(p).map_err(|e| CliError::Fatal(e.to_string())),
            None => Ok(fixture_default()),
        }
    }
}

pub fn load_registry(path: Option<&Path>) -> Result<ToolRegistry, CliError> {
    match path {
        Some(p) => ToolRegistry::load(p).map_err(|e| CliError::Fatal(format!("{}: {e}", p.display()))),
        None => Ok(registry_default()),
    }
}
