use super::config::{enumerate_instances, Backend, ExperimentConfig, ExperimentInstance, PdSettings};
use crate::agents::{LlmAgent, MockAgent, NoiseRate, PromptTemplate, StrategyKind};
use crate::analysis::{
    avg_choice_trajectory, cooperation_rate_by_round, cooperation_rate_per_run, emit_report, end_game_windows,
    group_by, mismatch_rate, strategy_distribution, total_penalties, trajectory_key, AnalysisError, CiEstimate,
    EndGameSummary, GroupKey, LabelEntry, ReportFormat, SeriesByRound,
};
use crate::encoding::{encode, EncodedSequence};
use crate::game::{run_game, Agent, AgentMeta, GameKind, GameSpec, PggParams, Trajectory};
use crate::intent::{
    eval_csv, evaluate, expand_composite, predict, rule_match_sequence, canonical_strategies, train_model, Dataset,
    DatasetRecord, EvalRow, ModelKind, PredictError, Split, TrainedModel,
};
use crate::llm::{HttpChatClient, LlmClient};
use crate::util::{atomic_write, read_jsonl, sha256_hex, to_jsonl};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

pub const TRAJECTORIES: &str = "trajectories.jsonl";
pub const INSTANCE_DIR: &str = "trajectories";
pub const SYNTHETIC: &str = "dataset/synthetic.jsonl";
pub const SEQUENCES: &str = "dataset/sequences.jsonl";
pub const MODEL_DIR: &str = "models";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const REPORT_DIR: &str = "reports";
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Run,
    Encode,
    Train,
    Classify,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Run, Stage::Encode, Stage::Train, Stage::Classify, Stage::Analyze];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Run => "run",
            Stage::Encode => "encode",
            Stage::Train => "train",
            Stage::Classify => "classify",
            Stage::Analyze => "analyze",
        }
    }

    /// Parses a comma-separated list such as `run,encode` (or `all`).
    pub fn parse_list(s: &str) -> Result<Vec<Stage>, String> {
        if s.trim() == "all" {
            return Ok(Stage::ALL.to_vec());
        }
        let mut out: Vec<Stage> = s
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<_, _>>()?;
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err("no stages given".into());
        }
        Ok(out)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}` (expected one of run, encode, train, classify, analyze)"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] super::ConfigError),
    #[error("{stage} stage needs {}: {hint}", path.display())]
    MissingInput { stage: Stage, path: PathBuf, hint: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    /// 1 for validation errors, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, body: &[u8]) -> Result<(), PipelineError> {
    atomic_write(path, body).map_err(io_err(path))
}

fn require(stage: Stage, path: &Path, hint: &str) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput {
            stage,
            path: path.to_path_buf(),
            hint: hint.to_string(),
        })
    }
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    read_jsonl(path).map_err(io_err(path))
}

/// One classified agent, as written to `predictions.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentClassification {
    pub game_id: String,
    pub agent_index: usize,
    /// Grouping attributes: game, model, language, parameter, personalities,
    /// agent role and the agent's own personality.
    pub key: GroupKey,
    pub classifier: ModelKind,
    pub distribution: Vec<f64>,
    pub label: StrategyKind,
    pub confidence: f64,
    /// `confidence > tau`.
    pub confident: bool,
    pub rule_matched: BTreeSet<StrategyKind>,
    pub deviations: BTreeMap<StrategyKind, f64>,
    /// Hybrid label set; empty means emergent behaviour.
    pub labels: BTreeSet<StrategyKind>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrajectoryStats {
    pub games: usize,
    pub complete: usize,
    pub aborted: Vec<String>,
    /// Completed runs per backend/language/parameter cell.
    pub completed_runs: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub stages: Vec<Stage>,
    pub instances: usize,
    /// Derived seed per game id.
    pub seeds: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<TrajectoryStats>,
    /// Relative path to SHA-256 of every output file.
    pub files: BTreeMap<String, String>,
}

fn template_for(cfg: &ExperimentConfig, lang: &str) -> Result<PromptTemplate, PipelineError> {
    let res = match &cfg.template_dir {
        Some(dir) => PromptTemplate::load(dir, lang, cfg.game),
        None => PromptTemplate::shipped(lang, cfg.game),
    };
    res.map_err(|e| PipelineError::Runtime(e.to_string()))
}

fn game_spec(cfg: &ExperimentConfig, value: f64) -> Result<GameSpec, PipelineError> {
    let spec = match cfg.game {
        GameKind::Pd => {
            let pd: &PdSettings = cfg.pd.as_ref().expect("validated PD config");
            let m = pd
                .base
                .matrix()
                .scale(value)
                .map_err(|e| PipelineError::Runtime(e.to_string()))?;
            let mut s = GameSpec::pd(m, pd.rounds);
            s.horizon_known = cfg.horizon_known;
            s
        }
        GameKind::Pgg => {
            let p = cfg.pgg.as_ref().expect("validated PGG config");
            let mut params = PggParams::new(p.num_agents, p.contribution_cost, value, p.rounds);
            params.horizon_known = cfg.horizon_known;
            GameSpec::pgg(params)
        }
    };
    Ok(spec)
}

fn run_instance(
    cfg: &ExperimentConfig,
    inst: &ExperimentInstance,
    clients: &BTreeMap<String, Arc<dyn LlmClient>>,
    templates: &BTreeMap<String, PromptTemplate>,
) -> Result<Trajectory, PipelineError> {
    let spec = game_spec(cfg, inst.parameter)?;
    let template = templates[&inst.language].clone();
    let noise = NoiseRate::new(cfg.mock_noise).map_err(|e| PipelineError::Runtime(e.to_string()))?;
    let mut agents: Vec<Box<dyn Agent>> = inst
        .personalities
        .iter()
        .enumerate()
        .map(|(seat, &personality)| {
            let meta = AgentMeta {
                name: format!("Agent {}", seat + 1),
                backend: inst.backend.clone(),
                language: inst.language.clone(),
                personality,
            };
            match clients.get(&inst.backend) {
                Some(client) => Box::new(LlmAgent {
                    client: client.clone(),
                    template: template.clone(),
                    meta,
                    opponent_hints: Vec::new(),
                    retries: 2,
                    communicate: false,
                }) as Box<dyn Agent>,
                None => Box::new(MockAgent::new(template.clone(), meta, noise)),
            }
        })
        .collect();
    let traj = run_game(&inst.game_id, &spec, &mut agents, inst.seed).map_err(|e| PipelineError::Runtime(e.to_string()))?;
    if let Some(reason) = &traj.aborted {
        log::warn!("{} aborted: {reason}", inst.game_id);
    }
    let path = cfg.output_dir.join(INSTANCE_DIR).join(format!("{}.json", inst.game_id));
    let mut body = traj.to_json();
    body.push('\n');
    write(&path, body.as_bytes())?;
    Ok(traj)
}

fn stage_run(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let out = &cfg.output_dir;
    let instances = enumerate_instances(cfg);
    let mut templates = BTreeMap::new();
    for lang in &cfg.languages {
        templates.insert(lang.clone(), template_for(cfg, lang)?);
    }
    let mut clients: BTreeMap<String, Arc<dyn LlmClient>> = BTreeMap::new();
    for b in &cfg.backends {
        if let Backend::Endpoint(e) = b {
            let audit = out.join("llm_audit").join(format!("{}.jsonl", super::config::file_safe(&e.name)));
            std::fs::create_dir_all(audit.parent().unwrap()).map_err(io_err(out))?;
            let client = HttpChatClient::new(e.clone())
                .map_err(|e| PipelineError::Runtime(e.to_string()))?
                .with_audit_file(audit);
            clients.insert(e.name.clone(), Arc::new(client));
        }
    }
    let dir = out.join(INSTANCE_DIR);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Runtime(e.to_string()))?;
    log::info!("run: {} instances on {} workers", instances.len(), cfg.workers);
    let trajs: Vec<Trajectory> = pool.install(|| {
        instances
            .par_iter()
            .map(|inst| run_instance(cfg, inst, &clients, &templates))
            .collect::<Result<_, _>>()
    })?;
    let path = out.join(TRAJECTORIES);
    write(&path, to_jsonl(&trajs).as_bytes())
}

/// Writes the labelled synthetic dataset.
pub fn generate_synthetic(cfg: &ExperimentConfig) -> Result<Dataset, PipelineError> {
    let ds = crate::intent::gen_synthetic(&cfg.intent.synthetic).map_err(|e| PipelineError::Runtime(e.to_string()))?;
    let path = cfg.output_dir.join(SYNTHETIC);
    write(&path, to_jsonl(&ds.records).as_bytes())?;
    log::info!("encode: {} synthetic sequences", ds.records.len());
    Ok(ds)
}

fn load_trajectories(stage: Stage, out: &Path) -> Result<Vec<Trajectory>, PipelineError> {
    let path = out.join(TRAJECTORIES);
    require(stage, &path, "run the `run` stage first or ingest recorded logs with --input")?;
    read_lines(&path)
}

fn stage_encode(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let out = &cfg.output_dir;
    let trajs = load_trajectories(Stage::Encode, out)?;
    generate_synthetic(cfg)?;
    let mut seqs = Vec::new();
    for t in &trajs {
        if t.records.is_empty() {
            log::warn!("{}: no recorded rounds, not encoded", t.game_id);
            continue;
        }
        for agent in 0..t.num_agents() {
            seqs.push(encode(t, agent).map_err(|e| PipelineError::Runtime(e.to_string()))?);
        }
    }
    let path = out.join(SEQUENCES);
    write(&path, to_jsonl(&seqs).as_bytes())?;
    log::info!("encode: {} game sequences", seqs.len());
    Ok(())
}

pub fn model_path(out: &Path, kind: ModelKind) -> PathBuf {
    out.join(MODEL_DIR).join(format!("{}.json", kind.file_stem()))
}

fn stage_train(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let out = &cfg.output_dir;
    let path = out.join(SYNTHETIC);
    require(Stage::Train, &path, "run the `encode` stage (or `gen-synthetic`) first")?;
    let records: Vec<DatasetRecord> = read_lines(&path)?;
    let ds = Dataset::from_records(records).map_err(|e| PipelineError::Runtime(e.to_string()))?;
    let test = ds.split(Split::Test);
    let mut rows = Vec::new();
    let mut losses = String::from("model,epoch,loss\n");
    for &kind in &cfg.intent.models {
        log::info!("train: fitting {kind}");
        let outcome = train_model(kind, &ds, &cfg.intent.train).map_err(|e| PipelineError::Runtime(format!("{kind}: {e}")))?;
        for (i, l) in outcome.loss_history.iter().enumerate() {
            losses.push_str(&format!("{},{},{}\n", kind, i + 1, crate::util::fmt_metric(*l)));
        }
        write(&model_path(out, kind), outcome.model.to_json().as_bytes())?;
        if !test.is_empty() {
            let report = evaluate(&outcome.model, &test).map_err(|e| PipelineError::Runtime(e.to_string()))?;
            log::info!("train: {kind} test accuracy {:.4}", report.accuracy);
            rows.push(EvalRow {
                model: kind.to_string(),
                epsilon: cfg.intent.synthetic.noise.value(),
                report,
            });
        }
    }
    let dir = out.join(MODEL_DIR);
    write(&dir.join("evaluation.csv"), eval_csv(&rows).as_bytes())?;
    let json: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| serde_json::json!({"model": r.model, "epsilon": r.epsilon, "report": r.report}))
        .collect();
    let mut body = serde_json::to_string_pretty(&json).expect("serializable");
    body.push('\n');
    write(&dir.join("evaluation.json"), body.as_bytes())?;
    write(&dir.join("loss_history.csv"), losses.as_bytes())
}

fn agent_key(t: &Trajectory, agent: usize) -> GroupKey {
    let mut key = trajectory_key(t);
    key.insert("game".into(), t.kind().to_string());
    key.insert("agent".into(), format!("Agent {}", agent + 1));
    key.insert(
        "personality".into(),
        t.agent_meta[agent]
            .personality
            .map_or("none".to_string(), |p| format!("{p:?}").to_lowercase()),
    );
    key
}

/// Classifies every encoded agent with the hybrid model-plus-rules labeller.
pub fn classify_sequences(
    model: &TrainedModel,
    seqs: &[EncodedSequence],
    trajs: &[Trajectory],
    tau: f64,
    tolerance: u32,
    gtft_forgiveness: f64,
) -> Result<Vec<AgentClassification>, PipelineError> {
    let by_id: BTreeMap<&str, &Trajectory> = trajs.iter().map(|t| (t.game_id.as_str(), t)).collect();
    let strategies = canonical_strategies(gtft_forgiveness);
    let mut out = Vec::with_capacity(seqs.len());
    for s in seqs {
        let traj = by_id.get(s.meta.game_id.as_str()).ok_or_else(|| {
            PipelineError::Runtime(format!("sequence for unknown game `{}`", s.meta.game_id))
        })?;
        let pred = match predict(model, s) {
            Ok(p) => p,
            Err(PredictError::Length { expected, actual }) => {
                log::warn!(
                    "{} agent {}: {actual} rounds but {} expects {expected}, not classified",
                    s.meta.game_id,
                    s.meta.agent_index,
                    model.kind()
                );
                continue;
            }
            Err(e) => return Err(PipelineError::Runtime(e.to_string())),
        };
        let rules = rule_match_sequence(s, tolerance, &strategies);
        let labels = expand_composite(&rules, Some(&pred), tau);
        out.push(AgentClassification {
            game_id: s.meta.game_id.clone(),
            agent_index: s.meta.agent_index,
            key: agent_key(traj, s.meta.agent_index),
            classifier: model.kind(),
            confident: pred.confidence > tau,
            distribution: pred.distribution,
            label: pred.label,
            confidence: pred.confidence,
            rule_matched: rules.matched,
            deviations: rules.deviations,
            labels,
        });
    }
    Ok(out)
}

fn stage_classify(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let out = &cfg.output_dir;
    let mpath = model_path(out, cfg.intent.classifier);
    require(
        Stage::Classify,
        &mpath,
        &format!("train a {} model first (`train` stage)", cfg.intent.classifier),
    )?;
    let text = std::fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let model = TrainedModel::from_json(&text).map_err(|e| PipelineError::Runtime(format!("{}: {e}", mpath.display())))?;
    let spath = out.join(SEQUENCES);
    require(Stage::Classify, &spath, "run the `encode` stage first")?;
    let seqs: Vec<EncodedSequence> = read_lines(&spath)?;
    let trajs = load_trajectories(Stage::Classify, out)?;
    let preds = classify_sequences(
        &model,
        &seqs,
        &trajs,
        cfg.intent.tau,
        cfg.intent.tolerance,
        cfg.intent.synthetic.gtft_forgiveness,
    )?;
    log::info!(
        "classify: {} agents, {} confident",
        preds.len(),
        preds.iter().filter(|p| p.confident).count()
    );
    write(&out.join(PREDICTIONS), to_jsonl(&preds).as_bytes())
}

fn keyed<T>(
    groups: &BTreeMap<GroupKey, Vec<&Trajectory>>,
    f: impl Fn(&[&Trajectory]) -> Result<T, AnalysisError>,
    set_key: impl Fn(&mut T, GroupKey),
) -> Vec<T> {
    let mut out = Vec::new();
    for (key, trajs) in groups {
        match f(trajs) {
            Ok(mut v) => {
                set_key(&mut v, key.clone());
                out.push(v);
            }
            Err(e) => log::warn!("group {key:?} skipped: {e}"),
        }
    }
    out
}

fn series_key(s: &mut SeriesByRound, k: GroupKey) {
    s.key = k;
}

fn ci_key(c: &mut CiEstimate, k: GroupKey) {
    c.key = k;
}

/// Regenerates every aggregate report from trajectories and, when given,
/// classifier output. Returns the written files.
pub fn analyze(
    trajs: &[Trajectory],
    predictions: Option<&[AgentClassification]>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    let dir = out_dir.join(REPORT_DIR);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let mut written = Vec::new();
    let mut put = |files: io::Result<Vec<PathBuf>>| -> Result<(), PipelineError> {
        written.extend(files.map_err(io_err(&dir))?);
        Ok(())
    };
    let fmts = ReportFormat::ALL;
    let pd: Vec<&Trajectory> = trajs.iter().filter(|t| t.kind() == GameKind::Pd).collect();
    let pgg: Vec<&Trajectory> = trajs.iter().filter(|t| t.kind() == GameKind::Pgg).collect();
    for batch in [&pd, &pgg] {
        if let Some(first) = batch.first() {
            if batch.iter().any(|t| t.horizon != first.horizon) {
                return Err(PipelineError::Runtime(format!(
                    "{} trajectories mix horizons; analyze them separately",
                    first.kind()
                )));
            }
        }
    }

    if !pd.is_empty() {
        let g = group_by(&pd, &["model", "language", "lambda", "personalities"]);
        let totals = keyed(&g, total_penalties, ci_key);
        put(emit_report(&totals[..], &fmts, &dir, "pd_total_penalties", "Total penalties per run (95% CI over runs)"))?;
        let g = group_by(&pd, &["model", "language", "lambda"]);
        let choice = keyed(&g, avg_choice_trajectory, series_key);
        put(emit_report(&choice[..], &fmts, &dir, "pd_avg_choice", "Average choice per round (+1 OptionA, -1 OptionB)"))?;
        let coop = keyed(&g, cooperation_rate_by_round, series_key);
        put(emit_report(&coop[..], &fmts, &dir, "pd_cooperation_rate", "Cooperation rate per round"))?;
    }

    if !pgg.is_empty() {
        let g = group_by(&pgg, &["model", "language", "r"]);
        let coop = keyed(&g, cooperation_rate_by_round, series_key);
        put(emit_report(&coop[..], &fmts, &dir, "pgg_cooperation_rate", "Cooperation rate per round"))?;
        let g = group_by(&pgg, &["model", "language", "personalities"]);
        let by_pers = keyed(&g, cooperation_rate_per_run, ci_key);
        put(emit_report(
                &by_pers[..],
                &fmts,
                &dir,
                "pgg_cooperation_by_personality",
                "Cooperation rate per run by personality and language (95% CI over runs)",
            ))?;
        if pgg.iter().all(|t| t.num_agents() == 3) {
            let g = group_by(&pgg, &["model"]);
            let mm = keyed(&g, mismatch_rate, series_key);
            put(emit_report(&mm[..], &fmts, &dir, "pgg_mismatch_rate", "Mismatch rate per round"))?;
            let g = group_by(&pgg, &["model", "personalities"]);
            let mm_p = keyed(&g, mismatch_rate, series_key);
            put(emit_report(&mm_p[..], &fmts, &dir, "pgg_mismatch_by_personality", "Mismatch rate per round by personality"))?;
            let horizon = pgg[0].horizon as usize;
            if horizon >= 6 {
                let coop_p = keyed(&g, cooperation_rate_by_round, series_key);
                let end: Vec<EndGameSummary> = coop_p
                    .iter()
                    .chain(&mm_p)
                    .filter_map(|s| end_game_windows(s, (1, 3), (horizon - 2, horizon)).ok())
                    .collect();
                put(emit_report(&end[..], &fmts, &dir, "pgg_end_game", "First three versus last three rounds"))?;
            }
        }
    }

    if let Some(preds) = predictions.filter(|p| !p.is_empty()) {
        let entries: Vec<LabelEntry> = preds
            .iter()
            .map(|p| LabelEntry {
                key: p.key.clone(),
                labels: p.labels.clone(),
            })
            .collect();
        let first: Vec<LabelEntry> = entries
            .iter()
            .filter(|e| e.key.get("agent").map(String::as_str) == Some("Agent 1"))
            .cloned()
            .collect();
        let reports: [(&str, &str, &[LabelEntry], &[&str]); 4] = [
            ("strategy_by_model_agent1", "Strategy distribution of Agent 1 per model", &first, &["game", "model"]),
            ("strategy_by_language", "Strategy distribution per model and language", &entries, &["game", "model", "language"]),
            ("strategy_by_language_overall", "Strategy distribution per language", &entries, &["game", "language"]),
            ("strategy_by_agent", "Strategy distribution per agent role", &entries, &["game", "agent"]),
        ];
        for (stem, title, e, axes) in reports {
            let d = strategy_distribution(e, axes);
            put(emit_report(&d[..], &fmts, &dir, stem, title))?;
        }
    }
    written.sort();
    Ok(written)
}

fn stage_analyze(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let out = &cfg.output_dir;
    let trajs = load_trajectories(Stage::Analyze, out)?;
    let ppath = out.join(PREDICTIONS);
    let preds: Option<Vec<AgentClassification>> = if ppath.is_file() {
        Some(read_lines(&ppath)?)
    } else {
        log::info!("analyze: no {PREDICTIONS}, strategy distributions skipped");
        None
    };
    let files = analyze(&trajs, preds.as_deref(), out)?;
    log::info!("analyze: {} report files", files.len());
    Ok(())
}

/// Copies recorded trajectories (JSON Lines or a JSON array) into the output
/// directory after validating each one.
pub fn ingest_trajectories(src: &Path, out_dir: &Path) -> Result<usize, PipelineError> {
    let text = std::fs::read_to_string(src).map_err(io_err(src))?;
    let trajs: Vec<Trajectory> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| PipelineError::Runtime(format!("{}: {e}", src.display())))?
    } else {
        let mut v = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            v.push(
                serde_json::from_str(line)
                    .map_err(|e| PipelineError::Runtime(format!("{}:{}: {e}", src.display(), i + 1)))?,
            );
        }
        v
    };
    let ids: BTreeSet<&str> = trajs.iter().map(|t| t.game_id.as_str()).collect();
    if ids.len() != trajs.len() {
        return Err(PipelineError::Runtime(format!("{}: duplicate game ids", src.display())));
    }
    write(&out_dir.join(TRAJECTORIES), to_jsonl(&trajs).as_bytes())?;
    Ok(trajs.len())
}

fn inventory(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) -> io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            inventory(&p, root, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            if rel == MANIFEST || rel.ends_with(".tmp") {
                continue;
            }
            out.insert(rel, sha256_hex(&std::fs::read(&p)?));
        }
    }
    Ok(())
}

fn trajectory_stats(cfg: &ExperimentConfig) -> Result<Option<TrajectoryStats>, PipelineError> {
    let path = cfg.output_dir.join(TRAJECTORIES);
    if !path.is_file() {
        return Ok(None);
    }
    let trajs: Vec<Trajectory> = read_lines(&path)?;
    let mut stats = TrajectoryStats {
        games: trajs.len(),
        ..TrajectoryStats::default()
    };
    for t in &trajs {
        if t.is_complete() {
            stats.complete += 1;
            let k = trajectory_key(t);
            let param = k.get("lambda").or_else(|| k.get("r")).cloned().unwrap_or_default();
            *stats
                .completed_runs
                .entry(format!("{}/{}/{}", k["model"], k["language"], param))
                .or_insert(0) += 1;
        } else {
            stats.aborted.push(t.game_id.clone());
        }
    }
    Ok(Some(stats))
}

/// Runs the requested stages in pipeline order and writes `manifest.json`.
pub fn run_pipeline(cfg: &ExperimentConfig, stages: &[Stage]) -> Result<Manifest, PipelineError> {
    cfg.validate()?;
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    for &stage in &stages {
        log::info!("stage {stage}");
        match stage {
            Stage::Run => stage_run(cfg)?,
            Stage::Encode => stage_encode(cfg)?,
            Stage::Train => stage_train(cfg)?,
            Stage::Classify => stage_classify(cfg)?,
            Stage::Analyze => stage_analyze(cfg)?,
        }
    }
    write_manifest(cfg, stages)
}

pub fn write_manifest(cfg: &ExperimentConfig, stages: Vec<Stage>) -> Result<Manifest, PipelineError> {
    let out = &cfg.output_dir;
    let instances = enumerate_instances(cfg);
    let mut files = BTreeMap::new();
    inventory(out, out, &mut files).map_err(io_err(out))?;
    let manifest = Manifest {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        master_seed: cfg.master_seed,
        stages,
        instances: instances.len(),
        seeds: instances.iter().map(|i| (i.game_id.clone(), i.seed)).collect(),
        trajectories: trajectory_stats(cfg)?,
        files,
    };
    let mut body = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
    body.push('\n');
    write(&out.join(MANIFEST), body.as_bytes())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::parse_config;

    fn small(out: &Path) -> ExperimentConfig {
        let text = format!(
            r#"{{
                "game": "PGG",
                "pgg": {{ "multiplicationFactors": [1.1, 2.9] }},
                "languages": ["en", "vn"],
                "backends": ["mock:a", "mock:b"],
                "personalities": ["selfish", "selfish", "cooperative"],
                "runs": 2,
                "masterSeed": 5,
                "outputDir": {out:?},
                "intent": {{
                    "synthetic": {{ "samplesPerClass": 40, "noise": 0.05, "seed": 3 }},
                    "train": {{ "forest": {{ "trees": 5 }}, "lstm": {{ "hiddenSize": 6, "epochs": 3 }} }}
                }}
            }}"#
        );
        parse_config(&text, "test").unwrap()
    }

    #[test]
    fn stage_list_parsing() {
        assert_eq!(Stage::parse_list("analyze,run").unwrap(), vec![Stage::Run, Stage::Analyze]);
        assert_eq!(Stage::parse_list("all").unwrap().len(), 5);
        assert!(Stage::parse_list("run,fly").is_err());
    }

    #[test]
    fn full_mock_pipeline() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let m = run_pipeline(&cfg, &Stage::ALL).unwrap();
        assert_eq!(m.instances, 2 * 2 * 2 * 2);
        let stats = m.trajectories.unwrap();
        assert_eq!(stats.complete, 16);
        for f in [TRAJECTORIES, SYNTHETIC, SEQUENCES, PREDICTIONS, "models/lstm.json", "models/evaluation.csv"] {
            assert!(m.files.contains_key(f), "{f}");
        }
        assert!(m.files.keys().any(|f| f.starts_with("reports/pgg_cooperation_rate.")));
        assert!(m.files.keys().any(|f| f.starts_with("reports/strategy_by_agent.")));
        let preds: Vec<AgentClassification> = read_jsonl(&dir.path().join(PREDICTIONS)).unwrap();
        assert_eq!(preds.len(), 16 * 3);
    }

    #[test]
    fn classify_without_model_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        run_pipeline(&cfg, &[Stage::Run]).unwrap();
        let e = run_pipeline(&cfg, &[Stage::Classify]).unwrap_err();
        assert!(e.to_string().contains("lstm.json"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn analyze_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        run_pipeline(&cfg, &[Stage::Run, Stage::Analyze]).unwrap();
        let a = std::fs::read(dir.path().join(MANIFEST)).unwrap();
        run_pipeline(&cfg, &[Stage::Run, Stage::Analyze]).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join(MANIFEST)).unwrap());
    }
}
