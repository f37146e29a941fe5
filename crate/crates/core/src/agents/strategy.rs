use crate::game::{Action, RoundRecord};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Forgiveness probability used for GTFT unless configured otherwise.
pub const DEFAULT_GTFT_FORGIVENESS: f64 = 0.3;

#[derive(Debug, Error, PartialEq)]
pub enum StrategyError {
    #[error("noise rate {0} outside [0, 0.5]")]
    Noise(f64),
    #[error("forgiveness {0} outside [0, 1]")]
    Forgiveness(f64),
    #[error("unknown strategy `{0}`")]
    Unknown(String),
}

/// Strategy labels. Also used as classifier classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "ALLC")]
    AllC,
    #[serde(rename = "ALLD")]
    AllD,
    #[serde(rename = "TFT")]
    Tft,
    #[serde(rename = "GTFT")]
    Gtft,
    #[serde(rename = "WSLS")]
    Wsls,
    #[serde(rename = "RANDOM")]
    Random,
}

impl StrategyKind {
    pub const CANONICAL: [StrategyKind; 5] = [
        StrategyKind::AllC,
        StrategyKind::AllD,
        StrategyKind::Tft,
        StrategyKind::Gtft,
        StrategyKind::Wsls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::AllC => "ALLC",
            StrategyKind::AllD => "ALLD",
            StrategyKind::Tft => "TFT",
            StrategyKind::Gtft => "GTFT",
            StrategyKind::Wsls => "WSLS",
            StrategyKind::Random => "RANDOM",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            StrategyKind::AllC,
            StrategyKind::AllD,
            StrategyKind::Tft,
            StrategyKind::Gtft,
            StrategyKind::Wsls,
            StrategyKind::Random,
        ]
        .into_iter()
        .find(|k| k.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| StrategyError::Unknown(s.to_string()))
    }
}

/// A playable strategy: a kind plus its parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    AllC,
    AllD,
    Tft,
    Gtft { forgiveness: f64 },
    Wsls,
    Random,
}

impl Strategy {
    pub fn gtft(forgiveness: f64) -> Result<Self, StrategyError> {
        if !(0.0..=1.0).contains(&forgiveness) {
            return Err(StrategyError::Forgiveness(forgiveness));
        }
        Ok(Strategy::Gtft { forgiveness })
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::AllC => StrategyKind::AllC,
            Strategy::AllD => StrategyKind::AllD,
            Strategy::Tft => StrategyKind::Tft,
            Strategy::Gtft { .. } => StrategyKind::Gtft,
            Strategy::Wsls => StrategyKind::Wsls,
            Strategy::Random => StrategyKind::Random,
        }
    }

    /// Noiseless probability of cooperating given the `(own, opponent)` history.
    ///
    /// Conditional strategies open with C. WSLS repeats its last move after
    /// R or T (the opponent cooperated) and switches after P or S.
    pub fn cooperate_probability(&self, history: &[(Action, Action)]) -> f64 {
        let p = |a: Action| if a.is_cooperate() { 1.0 } else { 0.0 };
        match (self, history.last()) {
            (Strategy::AllC, _) => 1.0,
            (Strategy::AllD, _) => 0.0,
            (Strategy::Random, _) => 0.5,
            (_, None) => 1.0,
            (Strategy::Tft, Some(&(_, opp))) => p(opp),
            (Strategy::Gtft { forgiveness }, Some(&(_, opp))) => {
                if opp.is_cooperate() {
                    1.0
                } else {
                    *forgiveness
                }
            }
            (Strategy::Wsls, Some(&(own, opp))) => {
                if opp.is_cooperate() {
                    p(own)
                } else {
                    p(own.flip())
                }
            }
        }
    }

    /// Intended move before execution noise. Draws from `rng` only when the
    /// policy is mixed at this history.
    pub fn intended<R: Rng + ?Sized>(&self, history: &[(Action, Action)], rng: &mut R) -> Action {
        let p = self.cooperate_probability(history);
        let cooperate = if p >= 1.0 {
            true
        } else if p <= 0.0 {
            false
        } else {
            rng.gen_bool(p)
        };
        if cooperate {
            Action::Cooperate
        } else {
            Action::Defect
        }
    }
}

impl From<StrategyKind> for Strategy {
    fn from(kind: StrategyKind) -> Self {
        match kind {
            StrategyKind::AllC => Strategy::AllC,
            StrategyKind::AllD => Strategy::AllD,
            StrategyKind::Tft => Strategy::Tft,
            StrategyKind::Gtft => Strategy::Gtft {
                forgiveness: DEFAULT_GTFT_FORGIVENESS,
            },
            StrategyKind::Wsls => Strategy::Wsls,
            StrategyKind::Random => Strategy::Random,
        }
    }
}

/// Per-move probability that an intended action is flipped.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct NoiseRate(f64);

impl NoiseRate {
    pub const ZERO: NoiseRate = NoiseRate(0.0);

    pub fn new(epsilon: f64) -> Result<Self, StrategyError> {
        if (0.0..=0.5).contains(&epsilon) {
            Ok(NoiseRate(epsilon))
        } else {
            Err(StrategyError::Noise(epsilon))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn apply<R: Rng + ?Sized>(self, action: Action, rng: &mut R) -> Action {
        if self.0 > 0.0 && rng.gen_bool(self.0) {
            action.flip()
        } else {
            action
        }
    }
}

impl TryFrom<f64> for NoiseRate {
    type Error = StrategyError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        NoiseRate::new(v)
    }
}

impl From<NoiseRate> for f64 {
    fn from(n: NoiseRate) -> f64 {
        n.0
    }
}

/// Intended move per the strategy, then flipped with probability ε.
pub fn decide_canonical<R: Rng + ?Sized>(
    strategy: &Strategy,
    history: &[(Action, Action)],
    eps: NoiseRate,
    rng: &mut R,
) -> Action {
    let intended = strategy.intended(history, rng);
    eps.apply(intended, rng)
}

/// Majority action of everyone but `seat`; ties count as cooperation.
pub fn majority_opponent(profile: &[Action], seat: usize) -> Action {
    let (mut coop, mut defect) = (0, 0);
    for (i, a) in profile.iter().enumerate() {
        if i == seat {
            continue;
        }
        if a.is_cooperate() {
            coop += 1;
        } else {
            defect += 1;
        }
    }
    if coop >= defect {
        Action::Cooperate
    } else {
        Action::Defect
    }
}

/// Dyadic `(own, opponent)` view of a history. Two-player games use the other
/// seat directly; larger groups collapse to the co-players' majority action.
pub fn dyadic_view(history: &[RoundRecord], seat: usize) -> Vec<(Action, Action)> {
    history
        .iter()
        .map(|r| {
            let opp = if r.profile.len() == 2 {
                r.profile[1 - seat]
            } else {
                majority_opponent(&r.profile, seat)
            };
            (r.profile[seat], opp)
        })
        .collect()
}

/// Canonical strategy applied to a group via the majority-opponent reduction.
pub fn adapt_strategy_to_pgg<R: Rng + ?Sized>(
    strategy: &Strategy,
    history: &[RoundRecord],
    seat: usize,
    eps: NoiseRate,
    rng: &mut R,
) -> Action {
    decide_canonical(strategy, &dyadic_view(history, seat), eps, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use Action::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn tft_copies_defection() {
        let h = [(Cooperate, Defect)];
        assert_eq!(decide_canonical(&Strategy::Tft, &h, NoiseRate::ZERO, &mut rng()), Defect);
    }

    #[test]
    fn wsls_lose_shift() {
        let h = [(Defect, Defect)];
        assert_eq!(decide_canonical(&Strategy::Wsls, &h, NoiseRate::ZERO, &mut rng()), Cooperate);
        let h = [(Defect, Cooperate)];
        assert_eq!(decide_canonical(&Strategy::Wsls, &h, NoiseRate::ZERO, &mut rng()), Defect);
    }

    #[test]
    fn openings_cooperate() {
        for s in [Strategy::Tft, Strategy::Wsls, Strategy::AllC, Strategy::gtft(0.3).unwrap()] {
            assert_eq!(s.intended(&[], &mut rng()), Cooperate);
        }
        assert_eq!(Strategy::AllD.intended(&[], &mut rng()), Defect);
    }

    #[test]
    fn noise_rate_bounds() {
        assert!(NoiseRate::new(0.6).is_err());
        assert!(NoiseRate::new(-0.1).is_err());
        assert!(NoiseRate::new(0.5).is_ok());
        let parsed: Result<NoiseRate, _> = serde_json::from_str("0.7");
        assert!(parsed.is_err());
    }

    #[test]
    fn allc_flip_rate() {
        // 99% two-sided binomial interval for n = 10_000, p = 0.05 is [445, 557].
        let mut r = rng();
        let eps = NoiseRate::new(0.05).unwrap();
        let flips = (0..10_000)
            .filter(|_| decide_canonical(&Strategy::AllC, &[], eps, &mut r) == Defect)
            .count();
        assert!((445..=557).contains(&flips), "flips = {flips}");
    }

    #[test]
    fn pgg_reduction() {
        let rec = |p: Vec<Action>| RoundRecord {
            t: 1,
            payoffs: vec![0.0; p.len()],
            profile: p,
            responses: None,
        };
        let tie = [rec(vec![Cooperate, Cooperate, Defect])];
        assert_eq!(
            adapt_strategy_to_pgg(&Strategy::Tft, &tie, 0, NoiseRate::ZERO, &mut rng()),
            Cooperate
        );
        let both_keep = [rec(vec![Cooperate, Defect, Defect])];
        assert_eq!(
            adapt_strategy_to_pgg(&Strategy::Tft, &both_keep, 0, NoiseRate::ZERO, &mut rng()),
            Defect
        );
    }

    #[test]
    fn wsls_in_cooperative_group_stays() {
        let mut history: Vec<RoundRecord> = Vec::new();
        for t in 1..=10 {
            let a = adapt_strategy_to_pgg(&Strategy::Wsls, &history, 0, NoiseRate::ZERO, &mut rng());
            assert_eq!(a, Cooperate);
            history.push(RoundRecord {
                t,
                profile: vec![a, Cooperate, Cooperate],
                payoffs: vec![0.0; 3],
                responses: None,
            });
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("tft".parse::<StrategyKind>().unwrap(), StrategyKind::Tft);
        assert_eq!(serde_json::to_string(&StrategyKind::AllD).unwrap(), "\"ALLD\"");
        assert!("nope".parse::<StrategyKind>().is_err());
    }
}
