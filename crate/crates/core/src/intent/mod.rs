//! Strategy inference: labelled synthetic data, the classifier suite
//! (logistic regression, random forest, LSTM), confidence filtering and the
//! rule-based matcher used for hybrid labelling.

mod eval;
mod forest;
mod logreg;
mod lstm;
mod model;
mod rules;
mod synth;

pub use eval::{eval_csv, evaluate, evaluate_labels, ClassMetrics, EvalReport, EvalRow};
pub use forest::{train_forest, ForestHyper, ForestModel, Tree};
pub use logreg::{train_logreg, LogRegHyper, LogRegModel};
pub use lstm::{train_lstm, LstmGrads, LstmHyper, LstmModel, Step};
pub use model::{
    filter_high_confidence, predict, Model, ModelKind, PredictError, Prediction, Tensor, TrainError,
    TrainedModel,
};
pub use rules::{
    canonical_strategies, expand_composite, replay_deviation, rule_match, rule_match_actions,
    rule_match_sequence, RuleMatchResult,
};
pub use synth::{gen_synthetic, play_pair, Dataset, DatasetRecord, Split, SynthConfig, SynthError};

use crate::encoding::{featurize_flat, featurize_seq};
use serde::{Deserialize, Serialize};

/// Confidence threshold for keeping a model label.
pub const DEFAULT_TAU: f64 = 0.9;

/// Default rule-matching tolerance: one deviation per 10-round game.
pub const DEFAULT_TOLERANCE: u32 = 1;

/// Hyperparameters for every model kind plus the training seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct TrainConfig {
    pub logreg: LogRegHyper,
    pub forest: ForestHyper,
    pub lstm: LstmHyper,
    pub seed: u64,
}

/// Fitted model plus its per-epoch training loss (empty for forests).
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub loss_history: Vec<f64>,
}

/// Trains on the dataset's train split and records validation metrics.
pub fn train_model(kind: ModelKind, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let train = ds.split(Split::Train);
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let y = ds.labels(&train);
    let k = ds.classes.len();
    let (model, loss_history) = match kind {
        ModelKind::LogReg => {
            let x: Vec<Vec<f64>> = train.iter().map(|s| featurize_flat(s)).collect();
            let (m, h) = train_logreg(&x, &y, k, &cfg.logreg)?;
            (Model::LogReg(m), h)
        }
        ModelKind::Forest => {
            let x: Vec<Vec<f64>> = train.iter().map(|s| featurize_flat(s)).collect();
            (Model::Forest(train_forest(&x, &y, k, &cfg.forest, cfg.seed)?), Vec::new())
        }
        ModelKind::Lstm => {
            let x: Vec<Vec<Step>> = train.iter().map(|s| featurize_seq(s)).collect();
            let (m, h) = train_lstm(&x, &y, k, &cfg.lstm, cfg.seed)?;
            (Model::Lstm(m), h)
        }
    };
    let mut trained = TrainedModel {
        model,
        classes: ds.classes.clone(),
        horizon: ds.horizon,
        seed: cfg.seed,
        metrics: None,
    };
    let validation = ds.split(Split::Validation);
    if !validation.is_empty() {
        trained.metrics = Some(evaluate(&trained, &validation).expect("validation matches training shapes"));
    }
    Ok(TrainOutcome {
        model: trained,
        loss_history,
    })
}
