//! Prompt templates and rendering.
//!
//! A template file is UTF-8 text split into sections by `=== name ===` lines.
//! `body` is the prompt itself. Optional sections (`intro`, `opponentIntro`,
//! `gameLength`, `communicate`) are substituted for the placeholder of the
//! same name when enabled by the context, and render empty otherwise.
//! `choose`, `clarify`, `noHistory`, `historyRound`, `historyChoice` and the
//! `personality.*` words localise the rest.

use crate::game::{Action, GameKind, GameParams, Personality, RoundRecord, RoundView};
use crate::util::fmt_num;
use regex::Regex;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("unresolved placeholder {{{placeholder}}} in section `{section}`")]
    Unresolved { placeholder: String, section: String },
    #[error("template {0} is missing required section `{1}`")]
    MissingSection(String, &'static str),
    #[error("invalid context: {0}")]
    InvalidContext(String),
    #[error("no shipped template for language `{0}`")]
    UnknownLanguage(String),
    #[error("reading template {path}: {message}")]
    Io { path: String, message: String },
}

const REQUIRED: [&str; 6] = ["body", "choose", "clarify", "noHistory", "historyRound", "historyChoice"];

/// Languages with built-in templates.
pub const SHIPPED_LANGUAGES: [&str; 2] = ["en", "vn"];

#[derive(Clone, Debug, PartialEq)]
pub struct PromptTemplate {
    pub language: String,
    pub kind: GameKind,
    sections: BTreeMap<String, String>,
}

fn section_header() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^=== ([A-Za-z][A-Za-z0-9.]*) ===\s*$").unwrap())
}

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z][A-Za-z0-9]*)\}").unwrap())
}

impl PromptTemplate {
    pub fn parse(language: &str, kind: GameKind, text: &str) -> Result<Self, PromptError> {
        let mut sections = BTreeMap::new();
        let mut current: Option<(String, Vec<&str>)> = None;
        for line in text.lines() {
            if let Some(c) = section_header().captures(line) {
                if let Some((name, lines)) = current.take() {
                    sections.insert(name, lines.join("\n").trim().to_string());
                }
                current = Some((c[1].to_string(), Vec::new()));
            } else if let Some((_, lines)) = current.as_mut() {
                lines.push(line);
            }
        }
        if let Some((name, lines)) = current {
            sections.insert(name, lines.join("\n").trim().to_string());
        }
        let tpl = PromptTemplate {
            language: language.to_string(),
            kind,
            sections,
        };
        for req in REQUIRED {
            if !tpl.sections.contains_key(req) {
                return Err(PromptError::MissingSection(tpl.file_name(), req));
            }
        }
        Ok(tpl)
    }

    pub fn file_name(&self) -> String {
        file_name(&self.language, self.kind)
    }

    pub fn shipped(language: &str, kind: GameKind) -> Result<Self, PromptError> {
        let text = match (language, kind) {
            ("en", GameKind::Pgg) => include_str!("../../templates/pgg_en.txt"),
            ("vn", GameKind::Pgg) => include_str!("../../templates/pgg_vn.txt"),
            ("en", GameKind::Pd) => include_str!("../../templates/pd_en.txt"),
            ("vn", GameKind::Pd) => include_str!("../../templates/pd_vn.txt"),
            _ => return Err(PromptError::UnknownLanguage(language.to_string())),
        };
        Self::parse(language, kind, text)
    }

    /// Loads `<dir>/<pgg|pd>_<language>.txt`.
    pub fn load(dir: &Path, language: &str, kind: GameKind) -> Result<Self, PromptError> {
        let path = dir.join(file_name(language, kind));
        let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(language, kind, &text)
    }

    pub fn section(&self, name: &str) -> Option<&str> {
        self.sections.get(name).map(String::as_str)
    }

    fn required(&self, name: &'static str) -> Result<&str, PromptError> {
        self.section(name)
            .ok_or_else(|| PromptError::MissingSection(self.file_name(), name))
    }

    fn personality_word(&self, p: Personality) -> String {
        let key = match p {
            Personality::Cooperative => "personality.cooperative",
            Personality::Selfish => "personality.selfish",
        };
        self.section(key).map(str::to_string).unwrap_or_else(|| {
            match p {
                Personality::Cooperative => "cooperative",
                Personality::Selfish => "selfish",
            }
            .to_string()
        })
    }
}

fn file_name(language: &str, kind: GameKind) -> String {
    let k = match kind {
        GameKind::Pd => "pd",
        GameKind::Pgg => "pgg",
    };
    format!("{k}_{language}.txt")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpponentHint {
    pub personality: Personality,
    /// Probability in `[0, 1]`; rendered as a percentage.
    pub probability: f64,
}

/// Everything a prompt may refer to, from one agent's point of view.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentContext {
    pub seat: usize,
    /// Names of all seats, in seat order.
    pub names: Vec<String>,
    pub personality: Option<Personality>,
    /// One hint per co-player in seat order, or empty to disable the section.
    pub opponent_hints: Vec<OpponentHint>,
    pub params: GameParams,
    pub horizon: u32,
    pub horizon_known: bool,
    pub current_round: u32,
    pub history: Vec<RoundRecord>,
    pub communicate: bool,
}

impl AgentContext {
    pub fn from_view(
        view: &RoundView<'_>,
        personality: Option<Personality>,
        opponent_hints: Vec<OpponentHint>,
    ) -> Self {
        AgentContext {
            seat: view.seat,
            names: view.agent_meta.iter().map(|m| m.name.clone()).collect(),
            personality,
            opponent_hints,
            params: view.spec.params,
            horizon: view.spec.horizon,
            horizon_known: view.spec.horizon_known,
            current_round: view.round,
            history: view.history.to_vec(),
            communicate: false,
        }
    }

    pub fn kind(&self) -> GameKind {
        self.params.kind()
    }

    fn co_players(&self) -> impl Iterator<Item = &String> {
        self.names
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.seat)
            .map(|(_, n)| n)
    }

    fn validate(&self) -> Result<(), PromptError> {
        let n = self.params.num_agents();
        if self.names.len() != n {
            return Err(PromptError::InvalidContext(format!(
                "{} names for {n} seats",
                self.names.len()
            )));
        }
        if self.seat >= n {
            return Err(PromptError::InvalidContext(format!("seat {} out of range", self.seat)));
        }
        if !self.opponent_hints.is_empty() && self.opponent_hints.len() != n - 1 {
            return Err(PromptError::InvalidContext(format!(
                "{} opponent hints for {} co-players",
                self.opponent_hints.len(),
                n - 1
            )));
        }
        if self.current_round < 1 {
            return Err(PromptError::InvalidContext("rounds are 1-based".into()));
        }
        if self.history.iter().any(|r| r.t >= self.current_round) {
            return Err(PromptError::InvalidContext(format!(
                "history contains rounds at or after the current round {}",
                self.current_round
            )));
        }
        Ok(())
    }
}

fn fill(text: &str, values: &BTreeMap<String, String>, section: &str) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len() + 64);
    let mut last = 0;
    for c in placeholder().captures_iter(text) {
        let m = c.get(0).unwrap();
        let name = &c[1];
        let value = values.get(name).ok_or_else(|| PromptError::Unresolved {
            placeholder: name.to_string(),
            section: section.to_string(),
        })?;
        out.push_str(&text[last..m.start()]);
        out.push_str(value);
        last = m.end();
    }
    out.push_str(&text[last..]);
    Ok(out)
}

fn render_history(
    tpl: &PromptTemplate,
    ctx: &AgentContext,
    base: &BTreeMap<String, String>,
) -> Result<String, PromptError> {
    if ctx.history.is_empty() {
        return fill(tpl.required("noHistory")?, base, "noHistory");
    }
    let kind = ctx.kind();
    let mut lines = Vec::with_capacity(ctx.history.len());
    for r in &ctx.history {
        let mut choices = Vec::with_capacity(r.profile.len());
        for (seat, (a, p)) in r.profile.iter().zip(&r.payoffs).enumerate() {
            let mut v = base.clone();
            v.insert("player".into(), ctx.names[seat].clone());
            v.insert("action".into(), kind.label(*a).to_string());
            v.insert("payoff".into(), fmt_num(*p));
            choices.push(fill(tpl.required("historyChoice")?, &v, "historyChoice")?);
        }
        let mut v = base.clone();
        v.insert("round".into(), r.t.to_string());
        v.insert("choices".into(), choices.join("; "));
        lines.push(fill(tpl.required("historyRound")?, &v, "historyRound")?);
    }
    Ok(format!("\n{}\n", lines.join("\n")))
}

/// Placeholder values derived from the context, excluding optional sections
/// and the history.
fn base_values(tpl: &PromptTemplate, ctx: &AgentContext) -> BTreeMap<String, String> {
    let mut v = BTreeMap::new();
    let kind = ctx.kind();
    let [s1, s2] = kind.presentation_order();
    v.insert("currentPlayerName".into(), ctx.names[ctx.seat].clone());
    for (i, name) in ctx.co_players().enumerate() {
        v.insert(format!("opponent{}", i + 1), name.clone());
    }
    if let Some(p) = ctx.personality {
        v.insert("personality".into(), tpl.personality_word(p));
    }
    for (i, hint) in ctx.opponent_hints.iter().enumerate() {
        v.insert(format!("opponentPersonality{}", i + 1), tpl.personality_word(hint.personality));
        v.insert(
            format!("opponentPersonalityProbability{}", i + 1),
            fmt_num(hint.probability * 100.0),
        );
    }
    v.insert("strategy1".into(), kind.label(s1).to_string());
    v.insert("strategy2".into(), kind.label(s2).to_string());
    v.insert("nRounds".into(), ctx.horizon.to_string());
    v.insert("currentRound".into(), ctx.current_round.to_string());
    match &ctx.params {
        GameParams::Pgg(p) => {
            let (c, r, n) = (p.contribution_cost, p.multiplication_factor, p.num_agents as f64);
            v.insert("contributionCost".into(), fmt_num(c));
            v.insert("multiplicationFactor".into(), fmt_num(r));
            v.insert("numAgents".into(), p.num_agents.to_string());
            v.insert("totalIfAllContribute".into(), fmt_num(n * c));
            v.insert("payoffIfAllContribute".into(), fmt_num(r * n * c / n));
            v.insert("netGainIfAllContribute".into(), fmt_num(r * c - c));
            v.insert("soloContributionReturn".into(), fmt_num(r * c / n));
            v.insert("soloContributionNet".into(), fmt_num(r * c / n - c));
        }
        GameParams::Pd(m) => {
            let (d, c) = (Action::Defect, Action::Cooperate);
            v.insert("numAgents".into(), "2".into());
            v.insert("penaltyBothA".into(), fmt_num(m.cell(d, d).0));
            v.insert("penaltyBothB".into(), fmt_num(m.cell(c, c).0));
            v.insert("penaltyAvsB".into(), fmt_num(m.cell(d, c).0));
            v.insert("penaltyBvsA".into(), fmt_num(m.cell(c, d).0));
        }
    }
    v
}

fn collapse_blank_lines(s: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\n[ \t]*(\n[ \t]*)+\n").unwrap());
    re.replace_all(s, "\n\n").trim().to_string()
}

/// Substitutes every placeholder of the template body.
pub fn render_prompt(tpl: &PromptTemplate, ctx: &AgentContext) -> Result<String, PromptError> {
    ctx.validate()?;
    let mut values = base_values(tpl, ctx);
    let optional = [
        ("intro", ctx.personality.is_some()),
        ("opponentIntro", !ctx.opponent_hints.is_empty()),
        ("gameLength", ctx.horizon_known),
        ("communicate", ctx.communicate),
    ];
    for (name, enabled) in optional {
        let text = match (enabled, tpl.section(name)) {
            (true, Some(body)) => fill(body, &values, name)?,
            _ => String::new(),
        };
        values.insert(name.to_string(), text);
    }
    let choose = fill(tpl.required("choose")?, &values, "choose")?;
    values.insert("choose".into(), choose);
    let history = render_history(tpl, ctx, &values)?;
    values.insert("history".into(), history);
    let body = fill(tpl.required("body")?, &values, "body")?;
    Ok(collapse_blank_lines(&body))
}

/// The clarification appended when an answer could not be parsed.
pub fn render_clarification(tpl: &PromptTemplate, ctx: &AgentContext) -> Result<String, PromptError> {
    fill(tpl.required("clarify")?, &base_values(tpl, ctx), "clarify")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{PayoffMatrix2, PggParams};

    fn pgg_ctx(r: f64) -> AgentContext {
        AgentContext {
            seat: 0,
            names: vec!["Alice".into(), "Bob".into(), "Carol".into()],
            personality: None,
            opponent_hints: vec![],
            params: GameParams::Pgg(PggParams::new(3, 10.0, r, 10)),
            horizon: 10,
            horizon_known: true,
            current_round: 1,
            history: vec![],
            communicate: false,
        }
    }

    fn values(ctx: &AgentContext) -> BTreeMap<String, String> {
        base_values(&PromptTemplate::shipped("en", ctx.kind()).unwrap(), ctx)
    }

    #[test]
    fn derived_quantities_r2() {
        let v = values(&pgg_ctx(2.0));
        assert_eq!(v["totalIfAllContribute"], "30");
        assert_eq!(v["payoffIfAllContribute"], "20");
        assert_eq!(v["netGainIfAllContribute"], "10");
    }

    #[test]
    fn derived_quantities_r11() {
        let v = values(&pgg_ctx(1.1));
        assert_eq!(v["soloContributionReturn"], "3.67");
        assert_eq!(v["soloContributionNet"], "-6.33");
    }

    #[test]
    fn empty_history_marker() {
        for lang in SHIPPED_LANGUAGES {
            let tpl = PromptTemplate::shipped(lang, GameKind::Pgg).unwrap();
            let text = render_prompt(&tpl, &pgg_ctx(2.0)).unwrap();
            assert!(text.contains(tpl.section("noHistory").unwrap()), "{lang}");
            assert!(!text.contains('{'));
        }
    }

    #[test]
    fn full_render_with_sections() {
        let tpl = PromptTemplate::shipped("en", GameKind::Pgg).unwrap();
        let mut ctx = pgg_ctx(2.0);
        ctx.personality = Some(Personality::Selfish);
        ctx.opponent_hints = vec![
            OpponentHint { personality: Personality::Cooperative, probability: 0.8 },
            OpponentHint { personality: Personality::Selfish, probability: 0.25 },
        ];
        ctx.current_round = 2;
        ctx.history = vec![RoundRecord {
            t: 1,
            profile: vec![Action::Cooperate, Action::Defect, Action::Cooperate],
            payoffs: vec![3.333333, 13.333333, 3.333333],
            responses: None,
        }];
        let text = render_prompt(&tpl, &ctx).unwrap();
        assert!(text.starts_with("You are Alice. Your fellow participants are Bob and Carol."));
        assert!(text.contains("You are selfish."));
        assert!(text.contains("Bob has a probability of 80% of being cooperative"));
        assert!(text.contains("There are 10 rounds in total."));
        assert!(text.contains("Round 1: Alice chose Contribute (payoff 3.33); Bob chose Keep (payoff 13.33)"));
        assert!(text.ends_with("Choose between Contribute and Keep. Output ONLY the choice."));
        assert!(!text.contains("\n\n\n"));
    }

    #[test]
    fn disabled_sections_render_empty() {
        let tpl = PromptTemplate::shipped("en", GameKind::Pgg).unwrap();
        let mut ctx = pgg_ctx(2.0);
        ctx.horizon_known = false;
        let text = render_prompt(&tpl, &ctx).unwrap();
        assert!(!text.contains("rounds in total"));
        assert!(!text.contains("You are cooperative"));
        assert!(!text.contains("send a message"));
    }

    #[test]
    fn unresolved_placeholder_is_named() {
        let tpl = PromptTemplate::parse(
            "xx",
            GameKind::Pgg,
            "=== body ===\nHello {mystery}\n=== choose ===\nc\n=== clarify ===\nc\n=== noHistory ===\nnone\n=== historyRound ===\n{round}\n=== historyChoice ===\n{action}\n",
        )
        .unwrap();
        assert_eq!(
            render_prompt(&tpl, &pgg_ctx(2.0)),
            Err(PromptError::Unresolved {
                placeholder: "mystery".into(),
                section: "body".into()
            })
        );
    }

    #[test]
    fn missing_section_rejected() {
        let err = PromptTemplate::parse("xx", GameKind::Pd, "=== body ===\nhi\n").unwrap_err();
        assert!(matches!(err, PromptError::MissingSection(_, "choose")));
    }

    #[test]
    fn future_history_rejected() {
        let tpl = PromptTemplate::shipped("en", GameKind::Pgg).unwrap();
        let mut ctx = pgg_ctx(2.0);
        ctx.history = vec![RoundRecord {
            t: 1,
            profile: vec![Action::Cooperate; 3],
            payoffs: vec![10.0; 3],
            responses: None,
        }];
        assert!(matches!(render_prompt(&tpl, &ctx), Err(PromptError::InvalidContext(_))));
    }

    #[test]
    fn pd_penalties_rendered() {
        let tpl = PromptTemplate::shipped("en", GameKind::Pd).unwrap();
        let ctx = AgentContext {
            seat: 1,
            names: vec!["Agent 1".into(), "Agent 2".into()],
            personality: Some(Personality::Cooperative),
            opponent_hints: vec![],
            params: GameParams::Pd(PayoffMatrix2::baseline().scale(0.1).unwrap()),
            horizon: 10,
            horizon_known: true,
            current_round: 1,
            history: vec![],
            communicate: false,
        };
        let text = render_prompt(&tpl, &ctx).unwrap();
        assert!(text.contains("You are Agent 2. You are playing against Agent 1."));
        assert!(text.contains("each of you receives a penalty of 0.6"));
        assert!(text.contains("you receive a penalty of 0 and Agent 1 receives 1."));
        assert!(text.contains("Choose between OptionA and OptionB."));
    }

    #[test]
    fn clarification_names_both_labels() {
        let tpl = PromptTemplate::shipped("vn", GameKind::Pgg).unwrap();
        let text = render_clarification(&tpl, &pgg_ctx(2.0)).unwrap();
        assert!(text.contains("Contribute") && text.contains("Keep"));
    }
}
