//! State-action encoding of trajectories.
//!
//! Token `t` pairs the outcome of round `t - 1` (from the encoded agent's point
//! of view) with the agent's action in round `t`; the first token's state is
//! `START`. One-hot features use a 10-symbol alphabet ordered by state
//! (`P`, `R`, `S`, `START`, `T`) then action (`C`, `D`).

use crate::agents::{dyadic_view, StrategyKind};
use crate::game::{Action, Trajectory};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of distinct state-action tokens.
pub const TOKEN_DIM: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("cannot encode an empty trajectory ({0})")]
    Empty(String),
    #[error("agent index {index} out of range for {agents} agents")]
    AgentIndex { index: usize, agents: usize },
    #[error("START may only appear as the first token (found at position {0})")]
    MisplacedStart(usize),
    #[error("first token must have state START")]
    MissingStart,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "START")]
    Start,
    R,
    P,
    T,
    S,
}

impl Outcome {
    fn dim_index(self) -> usize {
        match self {
            Outcome::P => 0,
            Outcome::R => 1,
            Outcome::S => 2,
            Outcome::Start => 3,
            Outcome::T => 4,
        }
    }
}

/// Outcome of a dyadic round for the agent playing `own`.
pub fn outcome_of(own: Action, opp: Action) -> Outcome {
    match (own, opp) {
        (Action::Cooperate, Action::Cooperate) => Outcome::R,
        (Action::Defect, Action::Defect) => Outcome::P,
        (Action::Defect, Action::Cooperate) => Outcome::T,
        (Action::Cooperate, Action::Defect) => Outcome::S,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Token {
    pub state: Outcome,
    pub action: Action,
}

impl Token {
    pub fn index(self) -> usize {
        let a = match self.action {
            Action::Cooperate => 0,
            Action::Defect => 1,
        };
        self.state.dim_index() * 2 + a
    }
}

impl Serialize for Token {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        (self.state, self.action.to_char().to_string()).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let (state, action): (Outcome, String) = Deserialize::deserialize(d)?;
        let action = match action.as_str() {
            "C" => Action::Cooperate,
            "D" => Action::Defect,
            other => {
                return Err(serde::de::Error::custom(format!("unknown action `{other}`")));
            }
        };
        Ok(Token { state, action })
    }
}

/// Tokens for a sequence of `(own, opponent)` action pairs.
pub fn encode_pairs(pairs: &[(Action, Action)]) -> Vec<Token> {
    pairs
        .iter()
        .enumerate()
        .map(|(t, &(own, _))| Token {
            state: if t == 0 {
                Outcome::Start
            } else {
                let (prev_own, prev_opp) = pairs[t - 1];
                outcome_of(prev_own, prev_opp)
            },
            action: own,
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SequenceMeta {
    pub game_id: String,
    pub agent_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SequenceWire")]
pub struct EncodedSequence {
    pub tokens: Vec<Token>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<StrategyKind>,
    pub meta: SequenceMeta,
}

#[derive(Deserialize)]
struct SequenceWire {
    tokens: Vec<Token>,
    #[serde(default)]
    label: Option<StrategyKind>,
    meta: SequenceMeta,
}

impl TryFrom<SequenceWire> for EncodedSequence {
    type Error = EncodeError;
    fn try_from(w: SequenceWire) -> Result<Self, Self::Error> {
        EncodedSequence::new(w.tokens, w.label, w.meta)
    }
}

impl EncodedSequence {
    pub fn new(
        tokens: Vec<Token>,
        label: Option<StrategyKind>,
        meta: SequenceMeta,
    ) -> Result<Self, EncodeError> {
        match tokens.first() {
            None => return Err(EncodeError::Empty(meta.game_id)),
            Some(t) if t.state != Outcome::Start => return Err(EncodeError::MissingStart),
            _ => {}
        }
        if let Some(pos) = tokens.iter().skip(1).position(|t| t.state == Outcome::Start) {
            return Err(EncodeError::MisplacedStart(pos + 2));
        }
        Ok(EncodedSequence { tokens, label, meta })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The encoded agent's own actions, in order.
    pub fn actions(&self) -> Vec<Action> {
        self.tokens.iter().map(|t| t.action).collect()
    }
}

/// Encodes one agent's view of a trajectory. Groups of more than two use the
/// majority-opponent reduction.
pub fn encode(traj: &Trajectory, agent_index: usize) -> Result<EncodedSequence, EncodeError> {
    let agents = traj.num_agents();
    if agent_index >= agents {
        return Err(EncodeError::AgentIndex {
            index: agent_index,
            agents,
        });
    }
    if traj.records.is_empty() {
        return Err(EncodeError::Empty(traj.game_id.clone()));
    }
    let pairs = dyadic_view(&traj.records, agent_index);
    EncodedSequence::new(
        encode_pairs(&pairs),
        None,
        SequenceMeta {
            game_id: traj.game_id.clone(),
            agent_index,
        },
    )
}

/// Concatenated one-hot tokens, `TOKEN_DIM` entries per round.
pub fn featurize_flat(seq: &EncodedSequence) -> Vec<f64> {
    let mut v = vec![0.0; TOKEN_DIM * seq.len()];
    for (t, tok) in seq.tokens.iter().enumerate() {
        v[t * TOKEN_DIM + tok.index()] = 1.0;
    }
    v
}

/// One one-hot vector per round.
pub fn featurize_seq(seq: &EncodedSequence) -> Vec<[f64; TOKEN_DIM]> {
    seq.tokens
        .iter()
        .map(|tok| {
            let mut v = [0.0; TOKEN_DIM];
            v[tok.index()] = 1.0;
            v
        })
        .collect()
}
