//! Decision-makers: canonical noisy strategies, LLM-backed agents and the
//! persona-scripted mock used for offline runs.

mod parse;
mod prompt;
mod strategy;

pub use crate::game::Personality;
pub use parse::{parse_action, ParseError};
pub use prompt::{
    render_clarification, render_prompt, AgentContext, OpponentHint, PromptError, PromptTemplate,
    SHIPPED_LANGUAGES,
};
pub use strategy::{
    adapt_strategy_to_pgg, decide_canonical, dyadic_view, majority_opponent, NoiseRate, Strategy,
    StrategyError, StrategyKind, DEFAULT_GTFT_FORGIVENESS,
};

use crate::game::{Action, Agent, AgentError, AgentMeta, Decision, RoundView};
use crate::llm::{ChatPrompt, LlmClient, LlmError};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecideError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Transport(#[from] LlmError),
    #[error("no parseable action after {attempts} requests (last response: {last:?})")]
    Unparseable { attempts: usize, last: String },
}

impl From<DecideError> for AgentError {
    fn from(e: DecideError) -> Self {
        AgentError(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlmDecision {
    pub action: Action,
    /// Every raw response received, in order.
    pub responses: Vec<String>,
}

impl LlmDecision {
    pub fn requests(&self) -> usize {
        self.responses.len()
    }
}

/// Renders the prompt, queries the backend and parses the answer, re-asking
/// with a clarification up to `retries` times when parsing fails.
pub fn llm_decide(
    client: &dyn LlmClient,
    tpl: &PromptTemplate,
    ctx: &AgentContext,
    retries: u32,
) -> Result<LlmDecision, DecideError> {
    let prompt = render_prompt(tpl, ctx)?;
    let vocab = ctx.kind().vocab();
    let mut responses = Vec::new();
    let mut request = ChatPrompt::user(prompt.clone());
    for attempt in 0..=retries {
        let text = client.send_chat(&request)?;
        let parsed = parse_action(&text, &vocab);
        responses.push(text);
        match parsed {
            Ok(action) => return Ok(LlmDecision { action, responses }),
            Err(e) => {
                log::debug!("{}: attempt {} unparseable: {e}", client.id(), attempt + 1);
                if attempt == 0 {
                    request = ChatPrompt::user(format!(
                        "{prompt}\n\n{}",
                        render_clarification(tpl, ctx)?
                    ));
                }
            }
        }
    }
    Err(DecideError::Unparseable {
        attempts: responses.len(),
        last: responses.pop().unwrap_or_default(),
    })
}

/// Plays a canonical strategy with execution noise. Groups larger than two
/// are reduced to the co-players' majority action.
pub struct CanonicalAgent {
    pub strategy: Strategy,
    pub noise: NoiseRate,
    pub meta: AgentMeta,
}

impl CanonicalAgent {
    pub fn new(strategy: Strategy, noise: NoiseRate, name: impl Into<String>) -> Self {
        let meta = AgentMeta {
            name: name.into(),
            backend: format!("canonical:{}", strategy.kind()),
            language: String::new(),
            personality: None,
        };
        CanonicalAgent { strategy, noise, meta }
    }
}

impl Agent for CanonicalAgent {
    fn meta(&self) -> AgentMeta {
        self.meta.clone()
    }

    fn decide(&mut self, view: &RoundView<'_>, rng: &mut ChaCha8Rng) -> Result<Decision, AgentError> {
        Ok(adapt_strategy_to_pgg(&self.strategy, view.history, view.seat, self.noise, rng).into())
    }
}

/// Agent backed by a chat-completion client.
pub struct LlmAgent {
    pub client: Arc<dyn LlmClient>,
    pub template: PromptTemplate,
    pub meta: AgentMeta,
    pub opponent_hints: Vec<OpponentHint>,
    pub retries: u32,
    pub communicate: bool,
}

impl Agent for LlmAgent {
    fn meta(&self) -> AgentMeta {
        self.meta.clone()
    }

    fn decide(&mut self, view: &RoundView<'_>, _rng: &mut ChaCha8Rng) -> Result<Decision, AgentError> {
        let mut ctx = AgentContext::from_view(view, self.meta.personality, self.opponent_hints.clone());
        ctx.communicate = self.communicate;
        let d = llm_decide(self.client.as_ref(), &self.template, &ctx, self.retries)?;
        Ok(Decision {
            action: d.action,
            raw: d.responses.last().cloned(),
        })
    }
}

/// Canonical strategy a persona-scripted mock plays for a personality.
pub fn persona_strategy(personality: Option<Personality>) -> Strategy {
    match personality {
        Some(Personality::Cooperative) => Strategy::Tft,
        Some(Personality::Selfish) => Strategy::AllD,
        None => Strategy::Wsls,
    }
}

/// Offline stand-in for an LLM backend. It renders the real prompt (so
/// template errors surface exactly as they would online), then answers with
/// the label chosen by a noisy canonical strategy derived from its personality.
pub struct MockAgent {
    pub template: PromptTemplate,
    pub meta: AgentMeta,
    pub strategy: Strategy,
    pub noise: NoiseRate,
}

impl MockAgent {
    pub fn new(template: PromptTemplate, meta: AgentMeta, noise: NoiseRate) -> Self {
        MockAgent {
            strategy: persona_strategy(meta.personality),
            template,
            meta,
            noise,
        }
    }
}

impl Agent for MockAgent {
    fn meta(&self) -> AgentMeta {
        self.meta.clone()
    }

    fn decide(&mut self, view: &RoundView<'_>, rng: &mut ChaCha8Rng) -> Result<Decision, AgentError> {
        let ctx = AgentContext::from_view(view, self.meta.personality, Vec::new());
        render_prompt(&self.template, &ctx).map_err(DecideError::from)?;
        let action = adapt_strategy_to_pgg(&self.strategy, view.history, view.seat, self.noise, rng);
        Ok(Decision {
            action,
            raw: Some(view.spec.kind().label(action).to_string()),
        })
    }
}
