//! Games, payoffs and the round-by-round execution loop.
//!
//! Two games are supported: a symmetric 2x2 Prisoner's Dilemma whose matrix
//! holds *penalties* (lower is better) and an N-player Public Goods Game whose
//! per-round payoff is `r * (sum_j s_j * c) / N - s_i * c`.
//!
//! Actions are stored semantically as [`Action::Cooperate`] / [`Action::Defect`].
//! On the wire each game kind uses its own labels: the Prisoner's Dilemma uses
//! `OptionA` (defect) and `OptionB` (cooperate); the Public Goods Game uses
//! `Contribute` and `Keep`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("dimension mismatch: expected {expected} entries, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("unknown action label `{0}`")]
    UnknownLabel(String),
}

fn invalid(name: &'static str, reason: impl Into<String>) -> GameError {
    GameError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// A binary choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Cooperate,
    Defect,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Defect, Action::Cooperate];

    pub fn flip(self) -> Self {
        match self {
            Action::Cooperate => Action::Defect,
            Action::Defect => Action::Cooperate,
        }
    }

    pub fn is_cooperate(self) -> bool {
        self == Action::Cooperate
    }

    /// Row/column index in a [`PayoffMatrix2`]: `OptionA` (defect) first.
    pub fn matrix_index(self) -> usize {
        match self {
            Action::Defect => 0,
            Action::Cooperate => 1,
        }
    }

    pub fn to_char(self) -> char {
        match self {
            Action::Cooperate => 'C',
            Action::Defect => 'D',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GameKind {
    Pd,
    Pgg,
}

impl GameKind {
    /// Wire label for an action in this game.
    pub fn label(self, action: Action) -> &'static str {
        match (self, action) {
            (GameKind::Pd, Action::Defect) => "OptionA",
            (GameKind::Pd, Action::Cooperate) => "OptionB",
            (GameKind::Pgg, Action::Cooperate) => "Contribute",
            (GameKind::Pgg, Action::Defect) => "Keep",
        }
    }

    /// Actions in the order they are presented to agents (`{strategy1}`, `{strategy2}`).
    pub fn presentation_order(self) -> [Action; 2] {
        match self {
            GameKind::Pd => [Action::Defect, Action::Cooperate],
            GameKind::Pgg => [Action::Cooperate, Action::Defect],
        }
    }

    pub fn vocab(self) -> [(&'static str, Action); 2] {
        let [a, b] = self.presentation_order();
        [(self.label(a), a), (self.label(b), b)]
    }

    pub fn parse_label(self, label: &str) -> Result<Action, GameError> {
        self.vocab()
            .into_iter()
            .find(|(l, _)| *l == label)
            .map(|(_, a)| a)
            .ok_or_else(|| GameError::UnknownLabel(label.to_string()))
    }
}

impl fmt::Display for GameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GameKind::Pd => f.write_str("PD"),
            GameKind::Pgg => f.write_str("PGG"),
        }
    }
}

/// Symmetric 2x2 penalty matrix. `cells[row][col]` holds `(row penalty, col penalty)`
/// with index 0 = `OptionA` (defect) and 1 = `OptionB` (cooperate).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffMatrix2 {
    pub cells: [[(f64, f64); 2]; 2],
    /// Cumulative scaling applied relative to the matrix this one was derived from.
    pub lambda: f64,
}

impl Default for PayoffMatrix2 {
    fn default() -> Self {
        Self::baseline()
    }
}

impl PayoffMatrix2 {
    /// The baseline matrix: mutual defection 6, mutual cooperation 2,
    /// unilateral defection 0 against a cooperator's 10.
    pub fn baseline() -> Self {
        Self::from_penalties(0.0, 2.0, 6.0, 10.0)
    }

    /// Builds a symmetric matrix from the temptation, reward, punishment and
    /// sucker penalties.
    pub fn from_penalties(temptation: f64, reward: f64, punishment: f64, sucker: f64) -> Self {
        PayoffMatrix2 {
            cells: [
                [(punishment, punishment), (temptation, sucker)],
                [(sucker, temptation), (reward, reward)],
            ],
            lambda: 1.0,
        }
    }

    pub fn cell(&self, row: Action, col: Action) -> (f64, f64) {
        self.cells[row.matrix_index()][col.matrix_index()]
    }

    pub fn temptation(&self) -> f64 {
        self.cell(Action::Defect, Action::Cooperate).0
    }
    pub fn reward(&self) -> f64 {
        self.cell(Action::Cooperate, Action::Cooperate).0
    }
    pub fn punishment(&self) -> f64 {
        self.cell(Action::Defect, Action::Defect).0
    }
    pub fn sucker(&self) -> f64 {
        self.cell(Action::Cooperate, Action::Defect).0
    }

    /// Multiplies every entry by `lambda`; cell positions never move.
    pub fn scale(&self, lambda: f64) -> Result<Self, GameError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(invalid("lambda", format!("must be positive, got {lambda}")));
        }
        let mut cells = self.cells;
        for row in cells.iter_mut() {
            for (a, b) in row.iter_mut() {
                *a *= lambda;
                *b *= lambda;
            }
        }
        Ok(PayoffMatrix2 {
            cells,
            lambda: self.lambda * lambda,
        })
    }

    /// `(row, col)` penalties for a joint action.
    pub fn payoff(&self, row: Action, col: Action) -> (f64, f64) {
        self.cell(row, col)
    }

    fn is_symmetric(&self) -> bool {
        Action::ALL.iter().all(|&a| {
            Action::ALL
                .iter()
                .all(|&b| self.cell(a, b).1 == self.cell(b, a).0)
        })
    }

    /// True iff the matrix is symmetric and its penalties are strictly ordered
    /// temptation < reward < punishment < sucker.
    pub fn is_dilemma(&self) -> bool {
        let (t, r, p, s) = (
            self.temptation(),
            self.reward(),
            self.punishment(),
            self.sucker(),
        );
        [t, r, p, s].iter().all(|v| v.is_finite()) && self.is_symmetric() && t < r && r < p && p < s
    }

    /// Row actions minimising the row player's penalty against `opponent`.
    pub fn best_responses(&self, opponent: Action) -> Vec<Action> {
        let best = Action::ALL
            .iter()
            .map(|&a| self.cell(a, opponent).0)
            .fold(f64::INFINITY, f64::min);
        Action::ALL
            .iter()
            .copied()
            .filter(|&a| self.cell(a, opponent).0 == best)
            .collect()
    }
}

pub fn scale_matrix(base: &PayoffMatrix2, lambda: f64) -> Result<PayoffMatrix2, GameError> {
    base.scale(lambda)
}

pub fn pd_payoff(m: &PayoffMatrix2, a1: Action, a2: Action) -> (f64, f64) {
    m.payoff(a1, a2)
}

pub fn check_dilemma(m: &PayoffMatrix2) -> bool {
    m.is_dilemma()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PggParams {
    pub num_agents: usize,
    pub contribution_cost: f64,
    pub multiplication_factor: f64,
    pub rounds: u32,
    #[serde(default = "default_true")]
    pub horizon_known: bool,
}

fn default_true() -> bool {
    true
}

impl Default for PggParams {
    fn default() -> Self {
        PggParams {
            num_agents: 3,
            contribution_cost: 10.0,
            multiplication_factor: 2.0,
            rounds: 10,
            horizon_known: true,
        }
    }
}

impl PggParams {
    pub fn new(num_agents: usize, contribution_cost: f64, multiplication_factor: f64, rounds: u32) -> Self {
        PggParams {
            num_agents,
            contribution_cost,
            multiplication_factor,
            rounds,
            horizon_known: true,
        }
    }

    /// Rejects structurally invalid parameters; warns when `r` lies outside `(1, N)`.
    pub fn validate(&self) -> Result<(), GameError> {
        if self.num_agents < 2 {
            return Err(invalid("numAgents", format!("need at least 2, got {}", self.num_agents)));
        }
        if self.rounds < 1 {
            return Err(invalid("rounds", "need at least 1 round"));
        }
        if !(self.contribution_cost.is_finite() && self.contribution_cost > 0.0) {
            return Err(invalid("contributionCost", "must be positive"));
        }
        let r = self.multiplication_factor;
        if !(r.is_finite() && r > 0.0) {
            return Err(invalid("multiplicationFactor", "must be positive"));
        }
        if !self.is_strict_dilemma() {
            log::warn!(
                "multiplication factor {r} is outside (1, {}); not a strict social dilemma",
                self.num_agents
            );
        }
        Ok(())
    }

    pub fn is_strict_dilemma(&self) -> bool {
        let r = self.multiplication_factor;
        r > 1.0 && r < self.num_agents as f64
    }
}

/// Per-round payoffs of a Public Goods Game profile.
pub fn pgg_payoff(profile: &[Action], p: &PggParams) -> Result<Vec<f64>, GameError> {
    if profile.len() != p.num_agents {
        return Err(GameError::Dimension {
            expected: p.num_agents,
            actual: profile.len(),
        });
    }
    let c = p.contribution_cost;
    let pool: f64 = profile.iter().filter(|a| a.is_cooperate()).count() as f64 * c;
    let share = p.multiplication_factor * pool / p.num_agents as f64;
    Ok(profile
        .iter()
        .map(|a| if a.is_cooperate() { share - c } else { share })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GameParams {
    Pd(PayoffMatrix2),
    Pgg(PggParams),
}

impl GameParams {
    pub fn kind(&self) -> GameKind {
        match self {
            GameParams::Pd(_) => GameKind::Pd,
            GameParams::Pgg(_) => GameKind::Pgg,
        }
    }

    pub fn num_agents(&self) -> usize {
        match self {
            GameParams::Pd(_) => 2,
            GameParams::Pgg(p) => p.num_agents,
        }
    }

    pub fn payoffs(&self, profile: &[Action]) -> Result<Vec<f64>, GameError> {
        match self {
            GameParams::Pd(m) => {
                if profile.len() != 2 {
                    return Err(GameError::Dimension {
                        expected: 2,
                        actual: profile.len(),
                    });
                }
                let (a, b) = m.payoff(profile[0], profile[1]);
                Ok(vec![a, b])
            }
            GameParams::Pgg(p) => pgg_payoff(profile, p),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum StopCondition {
    #[default]
    FixedRounds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameSpec {
    pub params: GameParams,
    pub horizon: u32,
    pub horizon_known: bool,
    pub stop: StopCondition,
}

impl GameSpec {
    pub fn pd(matrix: PayoffMatrix2, horizon: u32) -> Self {
        GameSpec {
            params: GameParams::Pd(matrix),
            horizon,
            horizon_known: true,
            stop: StopCondition::FixedRounds,
        }
    }

    pub fn pgg(params: PggParams) -> Self {
        GameSpec {
            params: GameParams::Pgg(params),
            horizon: params.rounds,
            horizon_known: params.horizon_known,
            stop: StopCondition::FixedRounds,
        }
    }

    pub fn kind(&self) -> GameKind {
        self.params.kind()
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if self.horizon < 1 {
            return Err(invalid("horizon", "need at least 1 round"));
        }
        if let GameParams::Pgg(p) = &self.params {
            p.validate()?;
            if p.rounds != self.horizon {
                return Err(invalid(
                    "horizon",
                    format!("{} does not match PGG rounds {}", self.horizon, p.rounds),
                ));
            }
        }
        Ok(())
    }

    fn should_continue(&self, next_round: u32) -> bool {
        match self.stop {
            StopCondition::FixedRounds => next_round <= self.horizon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Personality {
    Cooperative,
    Selfish,
}

impl Personality {
    pub fn initial(self) -> char {
        match self {
            Personality::Cooperative => 'C',
            Personality::Selfish => 'S',
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentMeta {
    pub name: String,
    pub backend: String,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub personality: Option<Personality>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub t: u32,
    pub profile: Vec<Action>,
    pub payoffs: Vec<f64>,
    /// Raw agent output per seat, when the agent produced text.
    pub responses: Option<Vec<Option<String>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub game_id: String,
    pub params: GameParams,
    pub horizon: u32,
    pub agent_meta: Vec<AgentMeta>,
    pub records: Vec<RoundRecord>,
    pub seed: u64,
    /// `None` for a completed game; the abort reason otherwise.
    pub aborted: Option<String>,
}

impl Trajectory {
    pub fn kind(&self) -> GameKind {
        self.params.kind()
    }

    pub fn num_agents(&self) -> usize {
        self.params.num_agents()
    }

    pub fn is_complete(&self) -> bool {
        self.aborted.is_none() && self.records.len() == self.horizon as usize
    }

    pub fn actions_of(&self, seat: usize) -> Vec<Action> {
        self.records.iter().map(|r| r.profile[seat]).collect()
    }

    pub fn cumulative_scores(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.num_agents()];
        for r in &self.records {
            for (t, p) in totals.iter_mut().zip(&r.payoffs) {
                *t += p;
            }
        }
        totals
    }

    /// Checks the structural invariants of a (possibly externally recorded) log.
    pub fn validate(&self) -> Result<(), GameError> {
        let n = self.num_agents();
        if self.agent_meta.len() != n {
            return Err(GameError::Dimension {
                expected: n,
                actual: self.agent_meta.len(),
            });
        }
        if self.records.len() > self.horizon as usize {
            return Err(invalid("records", "more rounds than the horizon"));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.t as usize != i + 1 {
                return Err(invalid("records", format!("round {} out of order at position {}", r.t, i + 1)));
            }
            if r.profile.len() != n || r.payoffs.len() != n {
                return Err(GameError::Dimension {
                    expected: n,
                    actual: r.profile.len().min(r.payoffs.len()),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trajectory serialization is infallible")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct RecordWire {
    t: u32,
    profile: Vec<String>,
    payoffs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    responses: Option<Vec<Option<String>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct TrajectoryWire {
    game_id: String,
    kind: GameKind,
    params: GameParams,
    horizon: u32,
    seed: u64,
    agent_meta: Vec<AgentMeta>,
    records: Vec<RecordWire>,
    complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    abort_reason: Option<String>,
}

impl Serialize for Trajectory {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let kind = self.kind();
        TrajectoryWire {
            game_id: self.game_id.clone(),
            kind,
            params: self.params,
            horizon: self.horizon,
            seed: self.seed,
            agent_meta: self.agent_meta.clone(),
            records: self
                .records
                .iter()
                .map(|r| RecordWire {
                    t: r.t,
                    profile: r.profile.iter().map(|a| kind.label(*a).to_string()).collect(),
                    payoffs: r.payoffs.clone(),
                    responses: r.responses.clone(),
                })
                .collect(),
            complete: self.is_complete(),
            abort_reason: self.aborted.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Trajectory {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let w = TrajectoryWire::deserialize(deserializer)?;
        if w.params.kind() != w.kind {
            return Err(D::Error::custom(format!(
                "params do not match game kind {}",
                w.kind
            )));
        }
        let records = w
            .records
            .into_iter()
            .map(|r| {
                let profile = r
                    .profile
                    .iter()
                    .map(|l| w.kind.parse_label(l))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(D::Error::custom)?;
                Ok(RoundRecord {
                    t: r.t,
                    profile,
                    payoffs: r.payoffs,
                    responses: r.responses,
                })
            })
            .collect::<Result<Vec<_>, D::Error>>()?;
        let aborted = match (w.complete, w.abort_reason) {
            (_, Some(reason)) => Some(reason),
            (false, None) => Some("incomplete".to_string()),
            (true, None) => None,
        };
        let traj = Trajectory {
            game_id: w.game_id,
            params: w.params,
            horizon: w.horizon,
            agent_meta: w.agent_meta,
            records,
            seed: w.seed,
            aborted,
        };
        traj.validate().map_err(D::Error::custom)?;
        Ok(traj)
    }
}

/// What an agent sees when asked for its move in round `round`.
pub struct RoundView<'a> {
    pub game_id: &'a str,
    pub spec: &'a GameSpec,
    pub seat: usize,
    pub round: u32,
    /// Completed rounds only (`t < round`).
    pub history: &'a [RoundRecord],
    pub agent_meta: &'a [AgentMeta],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub raw: Option<String>,
}

impl From<Action> for Decision {
    fn from(action: Action) -> Self {
        Decision { action, raw: None }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct AgentError(pub String);

/// A decision-maker seated in a game.
pub trait Agent: Send {
    fn meta(&self) -> AgentMeta;

    fn decide(&mut self, view: &RoundView<'_>, rng: &mut ChaCha8Rng) -> Result<Decision, AgentError>;
}

/// Per-seat random stream for a game: independent of query order.
pub fn seat_rng(seed: u64, seat: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(seat as u64 + 1);
    rng
}

/// Plays a game to its horizon.
///
/// Every agent in round `t` sees history up to `t - 1` only. An agent failure
/// aborts the game and returns the partial trajectory with `aborted` set.
pub fn run_game(
    game_id: &str,
    spec: &GameSpec,
    agents: &mut [Box<dyn Agent>],
    seed: u64,
) -> Result<Trajectory, GameError> {
    spec.validate()?;
    let n = spec.params.num_agents();
    if agents.len() != n {
        return Err(GameError::Dimension {
            expected: n,
            actual: agents.len(),
        });
    }
    let agent_meta: Vec<AgentMeta> = agents.iter().map(|a| a.meta()).collect();
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|seat| seat_rng(seed, seat)).collect();
    let mut records: Vec<RoundRecord> = Vec::with_capacity(spec.horizon as usize);
    let mut scores = vec![0.0; n];
    let mut aborted = None;

    let mut t = 1;
    'rounds: while spec.should_continue(t) {
        let mut profile = Vec::with_capacity(n);
        let mut responses = Vec::with_capacity(n);
        for (seat, (agent, rng)) in agents.iter_mut().zip(rngs.iter_mut()).enumerate() {
            let view = RoundView {
                game_id,
                spec,
                seat,
                round: t,
                history: &records,
                agent_meta: &agent_meta,
            };
            match agent.decide(&view, rng) {
                Ok(d) => {
                    profile.push(d.action);
                    responses.push(d.raw);
                }
                Err(e) => {
                    aborted = Some(format!("round {t}: {} failed: {e}", agent_meta[seat].name));
                    break 'rounds;
                }
            }
        }
        let payoffs = spec.params.payoffs(&profile)?;
        for (s, p) in scores.iter_mut().zip(&payoffs) {
            *s += p;
        }
        records.push(RoundRecord {
            t,
            profile,
            payoffs,
            responses: responses.iter().any(Option::is_some).then_some(responses),
        });
        t += 1;
    }
    log::debug!("game {game_id} finished after {} rounds, scores {scores:?}", records.len());

    Ok(Trajectory {
        game_id: game_id.to_string(),
        params: spec.params,
        horizon: spec.horizon,
        agent_meta,
        records,
        seed,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Action::*;

    struct Scripted {
        moves: Vec<Action>,
        fail_at: Option<u32>,
    }

    impl Agent for Scripted {
        fn meta(&self) -> AgentMeta {
            AgentMeta {
                name: "scripted".into(),
                backend: "script".into(),
                language: "en".into(),
                personality: None,
            }
        }
        fn decide(&mut self, view: &RoundView<'_>, _rng: &mut ChaCha8Rng) -> Result<Decision, AgentError> {
            if Some(view.round) == self.fail_at {
                return Err(AgentError("boom".into()));
            }
            assert_eq!(view.history.len() as u32, view.round - 1);
            Ok(self.moves[(view.round as usize - 1) % self.moves.len()].into())
        }
    }

    fn scripted(moves: Vec<Action>) -> Box<dyn Agent> {
        Box::new(Scripted { moves, fail_at: None })
    }

    #[test]
    fn baseline_cells() {
        let m = PayoffMatrix2::baseline();
        assert_eq!(pd_payoff(&m, Defect, Defect), (6.0, 6.0));
        assert_eq!(pd_payoff(&m, Cooperate, Cooperate), (2.0, 2.0));
        assert_eq!(pd_payoff(&m, Defect, Cooperate), (0.0, 10.0));
        assert_eq!(pd_payoff(&m, Cooperate, Defect), (10.0, 0.0));
    }

    #[test]
    fn scaling_by_ten() {
        let m = scale_matrix(&PayoffMatrix2::baseline(), 10.0).unwrap();
        assert_eq!(m.cells[0], [(60.0, 60.0), (0.0, 100.0)]);
        assert_eq!(m.cells[1], [(100.0, 0.0), (20.0, 20.0)]);
        assert_eq!(m.lambda, 10.0);
    }

    #[test]
    fn scaling_identity_and_tenth() {
        let base = PayoffMatrix2::baseline();
        assert_eq!(scale_matrix(&base, 1.0).unwrap().cells, base.cells);
        let small = scale_matrix(&base, 0.1).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert!((small.cells[r][c].0 - base.cells[r][c].0 / 10.0).abs() < 1e-15);
                assert!((small.cells[r][c].1 - base.cells[r][c].1 / 10.0).abs() < 1e-15);
            }
        }
        let order = |m: &PayoffMatrix2| {
            let mut v = [m.temptation(), m.reward(), m.punishment(), m.sucker()]
                .iter()
                .enumerate()
                .map(|(i, x)| (*x, i))
                .collect::<Vec<_>>();
            v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            v.into_iter().map(|(_, i)| i).collect::<Vec<_>>()
        };
        assert_eq!(order(&small), order(&base));
    }

    #[test]
    fn non_positive_lambda_rejected() {
        let base = PayoffMatrix2::baseline();
        for l in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                scale_matrix(&base, l),
                Err(GameError::InvalidParameter { name: "lambda", .. })
            ));
        }
    }

    #[test]
    fn dilemma_check() {
        let base = PayoffMatrix2::baseline();
        assert!(check_dilemma(&base));
        assert!(!check_dilemma(&PayoffMatrix2::from_penalties(3.0, 3.0, 3.0, 3.0)));
        for l in [0.1, 1.0, 10.0] {
            assert!(check_dilemma(&scale_matrix(&base, l).unwrap()));
        }
        let mut asym = base;
        asym.cells[0][1].1 = 11.0;
        assert!(!check_dilemma(&asym));
    }

    #[test]
    fn pgg_examples() {
        let p = PggParams::new(3, 10.0, 2.0, 10);
        assert_eq!(pgg_payoff(&[Cooperate; 3], &p).unwrap(), vec![10.0; 3]);
        assert_eq!(pgg_payoff(&[Defect; 3], &p).unwrap(), vec![0.0; 3]);
        let p = PggParams::new(3, 10.0, 1.1, 10);
        let v = pgg_payoff(&[Cooperate, Defect, Defect], &p).unwrap();
        let expected = [-19.0 / 3.0, 11.0 / 3.0, 11.0 / 3.0];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(
            pgg_payoff(&[Cooperate; 2], &p),
            Err(GameError::Dimension { expected: 3, actual: 2 })
        );
    }

    #[test]
    fn pgg_param_validation() {
        assert!(PggParams::new(1, 10.0, 2.0, 10).validate().is_err());
        assert!(PggParams::new(3, 10.0, 2.0, 0).validate().is_err());
        // outside (1, N) only warns
        assert!(PggParams::new(3, 10.0, 4.0, 10).validate().is_ok());
        assert!(!PggParams::new(3, 10.0, 4.0, 10).is_strict_dilemma());
    }

    #[test]
    fn pgg_all_contribute_game() {
        let spec = GameSpec::pgg(PggParams::new(3, 10.0, 2.0, 10));
        let mut agents: Vec<_> = (0..3).map(|_| scripted(vec![Cooperate])).collect();
        let traj = run_game("g", &spec, &mut agents, 1).unwrap();
        assert!(traj.is_complete());
        assert_eq!(traj.records.len(), 10);
        for r in &traj.records {
            assert_eq!(r.payoffs, vec![10.0; 3]);
        }
        assert_eq!(traj.cumulative_scores(), vec![100.0; 3]);
    }

    #[test]
    fn pd_alld_game() {
        let spec = GameSpec::pd(PayoffMatrix2::baseline(), 10);
        let mut agents = vec![scripted(vec![Defect]), scripted(vec![Defect])];
        let traj = run_game("g", &spec, &mut agents, 1).unwrap();
        for r in &traj.records {
            assert_eq!(r.profile, vec![Defect, Defect]);
            assert_eq!(r.payoffs, vec![6.0, 6.0]);
        }
    }

    #[test]
    fn pgg_alternating_profiles() {
        let spec = GameSpec::pgg(PggParams::new(3, 10.0, 2.9, 10));
        let mut agents: Vec<_> = (0..3).map(|_| scripted(vec![Cooperate, Defect])).collect();
        let traj = run_game("g", &spec, &mut agents, 1).unwrap();
        for r in &traj.records {
            let expected = if r.t % 2 == 1 { 19.0 } else { 0.0 };
            for p in &r.payoffs {
                assert!((p - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn agent_failure_yields_incomplete_trajectory() {
        let spec = GameSpec::pd(PayoffMatrix2::baseline(), 10);
        let mut agents: Vec<Box<dyn Agent>> = vec![
            scripted(vec![Cooperate]),
            Box::new(Scripted {
                moves: vec![Cooperate],
                fail_at: Some(4),
            }),
        ];
        let traj = run_game("g", &spec, &mut agents, 1).unwrap();
        assert!(!traj.is_complete());
        assert_eq!(traj.records.len(), 3);
        let json = traj.to_json();
        assert!(json.contains("\"complete\":false"));
        let back: Trajectory = serde_json::from_str(&json).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn wrong_agent_count_rejected() {
        let spec = GameSpec::pd(PayoffMatrix2::baseline(), 10);
        let mut agents = vec![scripted(vec![Cooperate])];
        assert!(run_game("g", &spec, &mut agents, 1).is_err());
    }

    #[test]
    fn replay_is_byte_identical() {
        let spec = GameSpec::pgg(PggParams::new(3, 10.0, 1.1, 10));
        let run = || {
            let mut agents: Vec<_> = (0..3)
                .map(|i| scripted(vec![Cooperate, Defect, if i == 0 { Cooperate } else { Defect }]))
                .collect();
            run_game("g", &spec, &mut agents, 99).unwrap().to_json()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn wire_format_uses_game_labels() {
        let spec = GameSpec::pd(PayoffMatrix2::baseline(), 2);
        let mut agents = vec![scripted(vec![Cooperate]), scripted(vec![Defect])];
        let traj = run_game("g1", &spec, &mut agents, 7).unwrap();
        let v: serde_json::Value = serde_json::from_str(&traj.to_json()).unwrap();
        assert_eq!(v["kind"], "PD");
        assert_eq!(v["gameId"], "g1");
        assert_eq!(v["records"][0]["profile"][0], "OptionB");
        assert_eq!(v["records"][0]["profile"][1], "OptionA");
        assert_eq!(v["records"][0]["payoffs"][0], 10.0);
    }
}
