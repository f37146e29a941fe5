use crate::agents::{PromptTemplate, SHIPPED_LANGUAGES};
use crate::game::{check_dilemma, GameKind, PayoffMatrix2, Personality, PggParams};
use crate::intent::{ModelKind, SynthConfig, TrainConfig, DEFAULT_TAU, DEFAULT_TOLERANCE};
use crate::llm::EndpointConfig;
use crate::util::{derive_seed, sha256_hex};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{line}:{column}: field `{field}`: {message}")]
    Parse {
        path: String,
        field: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    /// Dotted path of the offending field, when known.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Io { .. } => None,
            ConfigError::Parse { field, .. } | ConfigError::Invalid { field, .. } => Some(field),
        }
    }
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

/// Penalty cells of the symmetric PD base matrix (lower is better).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PenaltyTable {
    pub temptation: f64,
    pub reward: f64,
    pub punishment: f64,
    pub sucker: f64,
}

impl Default for PenaltyTable {
    fn default() -> Self {
        let m = PayoffMatrix2::baseline();
        PenaltyTable {
            temptation: m.temptation(),
            reward: m.reward(),
            punishment: m.punishment(),
            sucker: m.sucker(),
        }
    }
}

impl PenaltyTable {
    pub fn matrix(&self) -> PayoffMatrix2 {
        PayoffMatrix2::from_penalties(self.temptation, self.reward, self.punishment, self.sucker)
    }
}

fn ten() -> u32 {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PdSettings {
    #[serde(default)]
    pub base: PenaltyTable,
    pub lambdas: Vec<f64>,
    #[serde(default = "ten")]
    pub rounds: u32,
}

fn three() -> usize {
    3
}

fn cost() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PggSettings {
    #[serde(default = "three")]
    pub num_agents: usize,
    #[serde(default = "cost")]
    pub contribution_cost: f64,
    pub multiplication_factors: Vec<f64>,
    #[serde(default = "ten")]
    pub rounds: u32,
}

/// A backend is either the string `"mock"` (optionally `"mock:<label>"`, so
/// several offline backends can stand in for distinct models) or an endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Backend {
    Mock(String),
    Endpoint(EndpointConfig),
}

impl Backend {
    /// Identifier recorded as the agents' `backend` metadata.
    pub fn id(&self) -> &str {
        match self {
            Backend::Mock(s) => s,
            Backend::Endpoint(e) => &e.name,
        }
    }

    pub fn is_mock(&self) -> bool {
        matches!(self, Backend::Mock(_))
    }

    /// Replaces an endpoint by a scripted backend with the same label.
    pub fn into_mock(self) -> Backend {
        match self {
            Backend::Endpoint(e) => Backend::Mock(format!("mock:{}", e.name)),
            m => m,
        }
    }
}

fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

/// Settings for the encode, train and classify stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct IntentSettings {
    pub synthetic: SynthConfig,
    pub train: TrainConfig,
    /// Models fitted by the train stage.
    pub models: Vec<ModelKind>,
    /// Model used by the classify stage.
    pub classifier: ModelKind,
    pub tau: f64,
    pub tolerance: u32,
}

impl Default for IntentSettings {
    fn default() -> Self {
        IntentSettings {
            synthetic: SynthConfig::default(),
            train: TrainConfig::default(),
            models: default_models(),
            classifier: ModelKind::Lstm,
            tau: DEFAULT_TAU,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

fn default_name() -> String {
    "experiment".into()
}

fn yes() -> bool {
    true
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

fn one() -> usize {
    1
}

fn default_mock_noise() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub game: GameKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pd: Option<PdSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pgg: Option<PggSettings>,
    pub languages: Vec<String>,
    pub backends: Vec<Backend>,
    /// Without `allAgentPermutations`: one entry per seat (or empty for no
    /// personality). With it: the set the assignments are drawn from.
    #[serde(default)]
    pub personalities: Vec<Personality>,
    #[serde(default)]
    pub all_agent_permutations: bool,
    pub runs: u32,
    #[serde(default = "yes")]
    pub horizon_known: bool,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    /// Execution noise of scripted backends.
    #[serde(default = "default_mock_noise")]
    pub mock_noise: f64,
    /// Directory with `<game>_<language>.txt` templates; shipped ones otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_dir: Option<PathBuf>,
    #[serde(default)]
    pub intent: IntentSettings,
}

/// Parses and validates a JSON configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text, &path.display().to_string())
}

/// Parses and validates configuration text; `origin` labels error locations.
pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::Parse {
            path: origin.to_string(),
            field,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn num_agents(&self) -> usize {
        match (self.game, &self.pgg) {
            (GameKind::Pgg, Some(p)) => p.num_agents,
            _ => 2,
        }
    }

    pub fn rounds(&self) -> u32 {
        match self.game {
            GameKind::Pd => self.pd.as_ref().map_or(10, |p| p.rounds),
            GameKind::Pgg => self.pgg.as_ref().map_or(10, |p| p.rounds),
        }
    }

    /// The swept payoff parameter: λ for PD, r for PGG.
    pub fn parameter_values(&self) -> Vec<f64> {
        match self.game {
            GameKind::Pd => self.pd.as_ref().map(|p| p.lambdas.clone()).unwrap_or_default(),
            GameKind::Pgg => self
                .pgg
                .as_ref()
                .map(|p| p.multiplication_factors.clone())
                .unwrap_or_default(),
        }
    }

    pub fn parameter_name(&self) -> &'static str {
        match self.game {
            GameKind::Pd => "lambda",
            GameKind::Pgg => "r",
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.game {
            GameKind::Pd => {
                let pd = self.pd.as_ref().ok_or_else(|| invalid("pd", "required when game is PD"))?;
                if self.pgg.is_some() {
                    return Err(invalid("pgg", "not allowed when game is PD"));
                }
                let base = pd.base.matrix();
                if !check_dilemma(&base) {
                    return Err(invalid("pd.base", "penalties must satisfy temptation < reward < punishment < sucker"));
                }
                if pd.lambdas.is_empty() {
                    return Err(invalid("pd.lambdas", "must not be empty"));
                }
                for (i, &l) in pd.lambdas.iter().enumerate() {
                    base.scale(l).map_err(|e| invalid(format!("pd.lambdas[{i}]"), e.to_string()))?;
                }
                if pd.rounds < 1 {
                    return Err(invalid("pd.rounds", "must be at least 1"));
                }
            }
            GameKind::Pgg => {
                let pgg = self.pgg.as_ref().ok_or_else(|| invalid("pgg", "required when game is PGG"))?;
                if self.pd.is_some() {
                    return Err(invalid("pd", "not allowed when game is PGG"));
                }
                if pgg.multiplication_factors.is_empty() {
                    return Err(invalid("pgg.multiplicationFactors", "must not be empty"));
                }
                for (i, &r) in pgg.multiplication_factors.iter().enumerate() {
                    let mut p = PggParams::new(pgg.num_agents, pgg.contribution_cost, r, pgg.rounds);
                    p.horizon_known = self.horizon_known;
                    p.validate()
                        .map_err(|e| invalid(format!("pgg.multiplicationFactors[{i}]"), e.to_string()))?;
                }
            }
        }
        if self.languages.is_empty() {
            return Err(invalid("languages", "must not be empty"));
        }
        let mut seen = BTreeSet::new();
        for (i, lang) in self.languages.iter().enumerate() {
            let field = format!("languages[{i}]");
            if lang.trim().is_empty() {
                return Err(invalid(field, "must not be blank"));
            }
            if !seen.insert(lang) {
                return Err(invalid(field, format!("duplicate language `{lang}`")));
            }
            match &self.template_dir {
                None if !SHIPPED_LANGUAGES.contains(&lang.as_str()) => {
                    return Err(invalid(
                        field,
                        format!("no shipped template for `{lang}`; set templateDir or use one of {SHIPPED_LANGUAGES:?}"),
                    ));
                }
                Some(dir) => {
                    PromptTemplate::load(dir, lang, self.game).map_err(|e| invalid(field, e.to_string()))?;
                }
                None => {}
            }
        }
        if self.backends.is_empty() {
            return Err(invalid("backends", "must not be empty"));
        }
        let mut ids = BTreeSet::new();
        for (i, b) in self.backends.iter().enumerate() {
            let field = format!("backends[{i}]");
            match b {
                Backend::Mock(s) if s != "mock" && !s.starts_with("mock:") => {
                    return Err(invalid(field, format!("`{s}` is neither \"mock\", \"mock:<label>\" nor an endpoint object")));
                }
                Backend::Endpoint(e) => e.validate().map_err(|e| invalid(field.clone(), e.to_string()))?,
                _ => {}
            }
            if !ids.insert(file_safe(b.id())) {
                return Err(invalid(field, format!("duplicate backend `{}`", b.id())));
            }
        }
        if self.all_agent_permutations {
            if self.personalities.is_empty() {
                return Err(invalid("personalities", "must not be empty when allAgentPermutations is set"));
            }
        } else if !self.personalities.is_empty() && self.personalities.len() != self.num_agents() {
            return Err(invalid(
                "personalities",
                format!(
                    "expected one entry per agent ({}), got {}",
                    self.num_agents(),
                    self.personalities.len()
                ),
            ));
        }
        if self.runs < 1 {
            return Err(invalid("runs", "must be at least 1"));
        }
        if self.workers < 1 {
            return Err(invalid("workers", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.mock_noise) {
            return Err(invalid("mockNoise", "must lie in [0, 1]"));
        }
        let intent = &self.intent;
        intent
            .synthetic
            .validate()
            .map_err(|e| invalid("intent.synthetic", e.to_string()))?;
        if intent.synthetic.horizon != self.rounds() as usize {
            return Err(invalid(
                "intent.synthetic.horizon",
                format!("{} differs from the game's {} rounds", intent.synthetic.horizon, self.rounds()),
            ));
        }
        if intent.models.is_empty() {
            return Err(invalid("intent.models", "must not be empty"));
        }
        let k = intent.synthetic.strategies.len() as f64;
        if !(intent.tau > 1.0 / k && intent.tau <= 1.0) {
            return Err(invalid("intent.tau", format!("must lie in (1/{k}, 1]")));
        }
        Ok(())
    }

    /// Hash of the canonical JSON form, ignoring fields that cannot change
    /// results (`outputDir`, `workers`). Defaults are filled in before
    /// hashing, so spelling out a default value does not change the hash.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("outputDir");
            obj.remove("workers");
        }
        sha256_hex(v.to_string().as_bytes())
    }
}

/// One fully resolved game to play.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentInstance {
    pub game_id: String,
    pub backend: String,
    pub language: String,
    pub parameter: f64,
    pub personalities: Vec<Option<Personality>>,
    pub run: u32,
    pub seed: u64,
}

/// Replaces characters that are unsafe in file names.
pub(crate) fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '-' })
        .collect()
}

struct Pers<'a>(&'a [Option<Personality>]);

impl fmt::Display for Pers<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.iter().all(Option::is_none) {
            return f.write_str("none");
        }
        for p in self.0 {
            write!(f, "{}", p.map_or('-', |p| p.initial()))?;
        }
        Ok(())
    }
}

/// Personality assignments: one explicit assignment, unordered pairings for
/// PD, or every positional assignment for PGG.
pub fn personality_assignments(cfg: &ExperimentConfig) -> Vec<Vec<Option<Personality>>> {
    let n = cfg.num_agents();
    if !cfg.all_agent_permutations {
        return if cfg.personalities.is_empty() {
            vec![vec![None; n]]
        } else {
            vec![cfg.personalities.iter().copied().map(Some).collect()]
        };
    }
    let set: Vec<Personality> = cfg.personalities.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut out = Vec::new();
    match cfg.game {
        GameKind::Pd => {
            for i in 0..set.len() {
                for j in i..set.len() {
                    out.push(vec![Some(set[i]), Some(set[j])]);
                }
            }
        }
        GameKind::Pgg => {
            let total = set.len().pow(n as u32);
            for mut code in 0..total {
                let mut a = vec![None; n];
                for slot in a.iter_mut().rev() {
                    *slot = Some(set[code % set.len()]);
                    code /= set.len();
                }
                out.push(a);
            }
        }
    }
    out
}

/// Cartesian product backends × languages × parameter values × personality
/// assignments × runs, in that nesting order.
pub fn enumerate_instances(cfg: &ExperimentConfig) -> Vec<ExperimentInstance> {
    let assignments = personality_assignments(cfg);
    let params = cfg.parameter_values();
    let mut out = Vec::new();
    for backend in &cfg.backends {
        for lang in &cfg.languages {
            for &value in &params {
                for pers in &assignments {
                    for run in 0..cfg.runs {
                        let coords = format!(
                            "{}_{}_{}_{}{}_{}_run{:03}",
                            cfg.game,
                            backend.id(),
                            lang,
                            cfg.parameter_name(),
                            value,
                            Pers(pers),
                            run + 1
                        );
                        out.push(ExperimentInstance {
                            game_id: file_safe(&coords),
                            backend: backend.id().to_string(),
                            language: lang.clone(),
                            parameter: value,
                            personalities: pers.clone(),
                            run: run + 1,
                            seed: derive_seed(cfg.master_seed, &coords),
                        });
                    }
                }
            }
        }
    }
    out
}
