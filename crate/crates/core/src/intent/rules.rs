use super::model::Prediction;
use crate::agents::{dyadic_view, Strategy, StrategyKind};
use crate::encoding::{EncodeError, EncodedSequence, Outcome};
use crate::game::{Action, Trajectory};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RuleMatchResult {
    /// Expected number of rounds where the observed action differs from the
    /// strategy's noiseless prediction. Mixed policies contribute fractional
    /// counts.
    pub deviations: BTreeMap<StrategyKind, f64>,
    pub tolerance: u32,
    pub matched: BTreeSet<StrategyKind>,
}

/// Canonical strategies the matcher checks.
pub fn canonical_strategies(gtft_forgiveness: f64) -> Vec<Strategy> {
    StrategyKind::CANONICAL
        .iter()
        .map(|&k| match k {
            StrategyKind::Gtft => Strategy::Gtft {
                forgiveness: gtft_forgiveness,
            },
            k => k.into(),
        })
        .collect()
}

/// Deviation of `own` from `strategy` replayed against the observed opponent
/// moves. `opp` needs at least `own.len() - 1` entries.
pub fn replay_deviation(strategy: &Strategy, own: &[Action], opp: &[Action]) -> f64 {
    let mut history: Vec<(Action, Action)> = Vec::with_capacity(own.len());
    let mut dev = 0.0;
    for (t, &a) in own.iter().enumerate() {
        let p = strategy.cooperate_probability(&history);
        dev += if a.is_cooperate() { 1.0 - p } else { p };
        if t + 1 < own.len() {
            history.push((a, opp[t]));
        }
    }
    dev
}

pub fn rule_match_actions(own: &[Action], opp: &[Action], strategies: &[Strategy], k: u32) -> RuleMatchResult {
    let deviations: BTreeMap<StrategyKind, f64> = strategies
        .iter()
        .map(|s| (s.kind(), replay_deviation(s, own, opp)))
        .collect();
    let matched = deviations
        .iter()
        .filter(|(_, &d)| d <= k as f64 + 1e-9)
        .map(|(&s, _)| s)
        .collect();
    RuleMatchResult {
        deviations,
        tolerance: k,
        matched,
    }
}

/// Matches one agent of a trajectory against the canonical strategies.
/// Groups larger than two use the majority-opponent view.
pub fn rule_match(
    traj: &Trajectory,
    agent_index: usize,
    k: u32,
    strategies: &[Strategy],
) -> Result<RuleMatchResult, EncodeError> {
    if agent_index >= traj.num_agents() {
        return Err(EncodeError::AgentIndex {
            index: agent_index,
            agents: traj.num_agents(),
        });
    }
    if traj.records.is_empty() {
        return Err(EncodeError::Empty(traj.game_id.clone()));
    }
    let (own, opp): (Vec<Action>, Vec<Action>) = dyadic_view(&traj.records, agent_index).into_iter().unzip();
    Ok(rule_match_actions(&own, &opp, strategies, k))
}

/// Same as [`rule_match`] but from an encoded sequence: the opponent's move
/// in round `t` is recovered from the state of token `t + 1`.
pub fn rule_match_sequence(seq: &EncodedSequence, k: u32, strategies: &[Strategy]) -> RuleMatchResult {
    let own = seq.actions();
    let opp: Vec<Action> = seq.tokens[1..]
        .iter()
        .map(|t| match t.state {
            Outcome::R | Outcome::T => Action::Cooperate,
            _ => Action::Defect,
        })
        .collect();
    rule_match_actions(&own, &opp, strategies, k)
}

/// Union of the model's label (only when confident, `confidence > tau`) and
/// the rule-matched labels. An empty result is emergent behaviour.
pub fn expand_composite(result: &RuleMatchResult, pred: Option<&Prediction>, tau: f64) -> BTreeSet<StrategyKind> {
    let mut out = result.matched.clone();
    if let Some(p) = pred.filter(|p| p.confidence > tau) {
        out.insert(p.label);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use Action::*;
    use StrategyKind::*;

    fn set(v: &[StrategyKind]) -> BTreeSet<StrategyKind> {
        v.iter().copied().collect()
    }

    fn matched(own: &[Action], opp: &[Action], k: u32) -> BTreeSet<StrategyKind> {
        rule_match_actions(own, opp, &canonical_strategies(0.3), k).matched
    }

    #[test]
    fn allc_self_play() {
        let c = [Cooperate; 10];
        assert_eq!(matched(&c, &c, 0), set(&[AllC, Tft, Gtft, Wsls]));
    }

    #[test]
    fn alld_self_play() {
        let d = [Defect; 10];
        assert_eq!(matched(&d, &d, 1), set(&[AllD, Tft]));
        let r = rule_match_actions(&d, &d, &canonical_strategies(0.3), 1);
        assert_eq!(r.deviations[&Tft], 1.0);
        assert_eq!(r.deviations[&AllD], 0.0);
        assert!((r.deviations[&Gtft] - 3.7).abs() < 1e-12);
        assert_eq!(r.deviations[&Wsls], 10.0);
    }

    #[test]
    fn vacuous_tolerance() {
        let own = [Cooperate, Defect, Defect, Cooperate, Defect];
        let opp = [Defect, Cooperate, Defect, Defect, Cooperate];
        assert_eq!(matched(&own, &opp, 5).len(), 5);
    }

    #[test]
    fn composite_expansion() {
        let rules = RuleMatchResult {
            deviations: BTreeMap::new(),
            tolerance: 1,
            matched: set(&[AllD, Tft]),
        };
        let confident = Prediction::from_distribution(&[AllC, AllD, Tft, Wsls], vec![0.02, 0.95, 0.02, 0.01]);
        assert_eq!(expand_composite(&rules, Some(&confident), 0.9), set(&[AllD, Tft]));
        let unsure = Prediction::from_distribution(&[AllC, AllD, Tft, Wsls], vec![0.5, 0.3, 0.1, 0.1]);
        let allc = RuleMatchResult {
            matched: set(&[AllC]),
            ..rules.clone()
        };
        assert_eq!(expand_composite(&allc, Some(&unsure), 0.9), set(&[AllC]));
        let none = RuleMatchResult {
            matched: BTreeSet::new(),
            ..rules
        };
        assert!(expand_composite(&none, Some(&unsure), 0.9).is_empty());
        assert_eq!(expand_composite(&none, Some(&confident), 0.9), set(&[AllD]));
    }

    #[test]
    fn sequence_and_action_views_agree() {
        use crate::encoding::{encode_pairs, SequenceMeta};
        let own = [Cooperate, Cooperate, Defect, Cooperate, Defect];
        let opp = [Cooperate, Defect, Defect, Cooperate, Cooperate];
        let pairs: Vec<_> = own.iter().copied().zip(opp.iter().copied()).collect();
        let seq = EncodedSequence::new(encode_pairs(&pairs), None, SequenceMeta::default()).unwrap();
        let strategies = canonical_strategies(0.3);
        assert_eq!(
            rule_match_sequence(&seq, 1, &strategies),
            rule_match_actions(&own, &opp, &strategies, 1)
        );
    }
}
