use super::eval::EvalReport;
use super::forest::ForestModel;
use super::logreg::LogRegModel;
use super::lstm::LstmModel;
use crate::agents::StrategyKind;
use crate::encoding::{featurize_flat, featurize_seq, EncodedSequence, SequenceMeta};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("training split is empty")]
    EmptyTrainingSet,
    #[error("loss became non-finite at epoch {epoch} (last finite loss {last_finite})")]
    Diverged { epoch: usize, last_finite: f64 },
    #[error("invalid hyperparameter: {0}")]
    Hyper(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum PredictError {
    #[error("sequence has {actual} rounds but the model was trained on {expected}")]
    Length { expected: usize, actual: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// Dense row-major array with an explicit shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.shape.iter().product::<usize>() == self.data.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "LOGREG")]
    LogReg,
    #[serde(rename = "FOREST")]
    Forest,
    #[serde(rename = "LSTM")]
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::LogReg, ModelKind::Forest, ModelKind::Lstm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LogReg => "LOGREG",
            ModelKind::Forest => "FOREST",
            ModelKind::Lstm => "LSTM",
        }
    }

    /// File stem used for saved models.
    pub fn file_stem(self) -> &'static str {
        match self {
            ModelKind::LogReg => "logreg",
            ModelKind::Forest => "forest",
            ModelKind::Lstm => "lstm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s) || k.file_stem() == s)
            .ok_or_else(|| format!("unknown model kind `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Model {
    #[serde(rename = "LOGREG")]
    LogReg(LogRegModel),
    #[serde(rename = "FOREST")]
    Forest(ForestModel),
    #[serde(rename = "LSTM")]
    Lstm(LstmModel),
}

/// A fitted classifier plus the metadata needed to use and audit it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainedModel {
    #[serde(flatten)]
    pub model: Model,
    pub classes: Vec<StrategyKind>,
    pub horizon: usize,
    pub seed: u64,
    /// Metrics on the validation split, when one was available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<EvalReport>,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self.model {
            Model::LogReg(_) => ModelKind::LogReg,
            Model::Forest(_) => ModelKind::Forest,
            Model::Lstm(_) => ModelKind::Lstm,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable model")
    }

    pub fn from_json(s: &str) -> Result<Self, PredictError> {
        let m: TrainedModel = serde_json::from_str(s).map_err(|e| PredictError::Invalid(e.to_string()))?;
        m.check_shapes()?;
        Ok(m)
    }

    /// Parameter shapes agree with the feature dimension and class count.
    pub fn check_shapes(&self) -> Result<(), PredictError> {
        let k = self.classes.len();
        let ok = match &self.model {
            Model::LogReg(m) => m.check_shapes(self.horizon * crate::encoding::TOKEN_DIM, k),
            Model::Forest(m) => m.check_shapes(self.horizon * crate::encoding::TOKEN_DIM, k),
            Model::Lstm(m) => m.check_shapes(crate::encoding::TOKEN_DIM, k),
        };
        if k < 2 {
            return Err(PredictError::Invalid("at least two classes required".into()));
        }
        ok.map_err(PredictError::Invalid)
    }

    /// Class distribution for one sequence.
    pub fn distribution(&self, seq: &EncodedSequence) -> Result<Vec<f64>, PredictError> {
        match &self.model {
            Model::Lstm(m) => Ok(m.forward(&featurize_seq(seq))),
            Model::LogReg(m) => {
                self.check_len(seq)?;
                Ok(m.predict_proba(&featurize_flat(seq)))
            }
            Model::Forest(m) => {
                self.check_len(seq)?;
                Ok(m.predict_proba(&featurize_flat(seq)))
            }
        }
    }

    fn check_len(&self, seq: &EncodedSequence) -> Result<(), PredictError> {
        if seq.len() != self.horizon {
            return Err(PredictError::Length {
                expected: self.horizon,
                actual: seq.len(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Prediction {
    pub distribution: Vec<f64>,
    pub label: StrategyKind,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<SequenceMeta>,
}

impl Prediction {
    /// Argmax (first index on ties) and its probability.
    pub fn from_distribution(classes: &[StrategyKind], distribution: Vec<f64>) -> Self {
        let (idx, conf) = distribution
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
        Prediction {
            label: classes[idx],
            confidence: conf,
            distribution,
            meta: None,
        }
    }

    pub fn class_index(&self, classes: &[StrategyKind]) -> usize {
        classes.iter().position(|&c| c == self.label).expect("label among classes")
    }
}

pub fn predict(model: &TrainedModel, seq: &EncodedSequence) -> Result<Prediction, PredictError> {
    let mut p = Prediction::from_distribution(&model.classes, model.distribution(seq)?);
    p.meta = Some(seq.meta.clone());
    Ok(p)
}

/// Splits predictions into confident (`confidence > tau`) and deferred ones.
pub fn filter_high_confidence(
    preds: Vec<Prediction>,
    tau: f64,
) -> Result<(Vec<Prediction>, Vec<Prediction>), String> {
    // With no predictions the class count is unknown; only the upper bound applies.
    let k = preds.first().map_or(f64::INFINITY, |p| p.distribution.len().max(1) as f64);
    if !(tau > 1.0 / k && tau <= 1.0) {
        return Err(format!("tau {tau} outside (1/{k}, 1]"));
    }
    Ok(preds.into_iter().partition(|p| p.confidence > tau))
}

/// Numerically stable in-place softmax.
pub(crate) fn softmax(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use StrategyKind::*;

    fn pred(d: &[f64]) -> Prediction {
        Prediction::from_distribution(&[AllC, AllD, Tft, Wsls], d.to_vec())
    }

    #[test]
    fn threshold_examples() {
        let preds = vec![
            pred(&[0.95, 0.03, 0.01, 0.01]),
            pred(&[0.60, 0.30, 0.05, 0.05]),
            pred(&[0.05, 0.9, 0.05, 0.0]),
        ];
        let (kept, deferred) = filter_high_confidence(preds, 0.9).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].label, AllC);
        assert_eq!(deferred.len(), 2);
        assert_eq!(deferred[1].confidence, 0.9);
    }

    #[test]
    fn tau_bounds() {
        assert!(filter_high_confidence(vec![pred(&[0.25; 4])], 0.25).is_err());
        assert!(filter_high_confidence(vec![pred(&[0.25; 4])], 1.01).is_err());
        assert!(filter_high_confidence(vec![pred(&[0.25; 4])], 1.0).is_ok());
        assert!(filter_high_confidence(Vec::new(), 0.9).is_ok());
    }

    #[test]
    fn argmax_ties_take_first() {
        let p = pred(&[0.4, 0.4, 0.1, 0.1]);
        assert_eq!(p.label, AllC);
        assert_eq!(p.confidence, 0.4);
    }

    #[test]
    fn softmax_normalizes() {
        let mut z = [1000.0, 1000.0, -5.0];
        softmax(&mut z);
        assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((z[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kind_names() {
        assert_eq!("lstm".parse::<ModelKind>().unwrap(), ModelKind::Lstm);
        assert_eq!("LOGREG".parse::<ModelKind>().unwrap(), ModelKind::LogReg);
        assert!("mlp".parse::<ModelKind>().is_err());
    }
}
