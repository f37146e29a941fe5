use super::model::{predict, PredictError, TrainedModel};
use crate::agents::StrategyKind;
use crate::encoding::EncodedSequence;
use crate::util::fmt_metric;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassMetrics {
    pub label: StrategyKind,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
}

/// Accuracy, macro-F1 and confusion matrix from class indices. Precision of a
/// class that is never predicted is 0, as is F1 when precision and recall are both 0.
pub fn evaluate_labels(classes: &[StrategyKind], truth: &[usize], predicted: &[usize]) -> EvalReport {
    let k = classes.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    let n = truth.len();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let recall = if support > 0 { tp / support as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                label: classes[c],
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    EvalReport {
        n,
        accuracy: if n > 0 { correct as f64 / n as f64 } else { 0.0 },
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / k.max(1) as f64,
        confusion,
        per_class,
    }
}

/// Scores a model on labelled sequences, which must be disjoint from its training data.
pub fn evaluate(model: &TrainedModel, seqs: &[&EncodedSequence]) -> Result<EvalReport, PredictError> {
    let mut truth = Vec::with_capacity(seqs.len());
    let mut predicted = Vec::with_capacity(seqs.len());
    for s in seqs {
        let label = s
            .label
            .ok_or_else(|| PredictError::Invalid(format!("{}: unlabelled sequence", s.meta.game_id)))?;
        let t = model
            .classes
            .iter()
            .position(|&c| c == label)
            .ok_or_else(|| PredictError::Invalid(format!("label {label} not among model classes")))?;
        truth.push(t);
        predicted.push(predict(model, s)?.class_index(&model.classes));
    }
    Ok(evaluate_labels(&model.classes, &truth, &predicted))
}

/// One row of the evaluation table.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub epsilon: f64,
    pub report: EvalReport,
}

/// `model,epsilon,accuracy,macroF1` followed by precision, recall and F1 per class.
pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("model,epsilon,accuracy,macroF1");
    if let Some(first) = rows.first() {
        for m in &first.report.per_class {
            out.push_str(&format!(",precision_{0},recall_{0},f1_{0}", m.label));
        }
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}",
            r.model,
            r.epsilon,
            fmt_metric(r.report.accuracy),
            fmt_metric(r.report.macro_f1)
        ));
        for m in &r.report.per_class {
            out.push_str(&format!(
                ",{},{},{}",
                fmt_metric(m.precision),
                fmt_metric(m.recall),
                fmt_metric(m.f1)
            ));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use StrategyKind::*;

    const CLASSES: [StrategyKind; 4] = [AllC, AllD, Tft, Wsls];

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 3, 0, 1];
        let r = evaluate_labels(&CLASSES, &y, &y);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn confusion_rows_sum_to_support() {
        let truth = [0, 0, 1, 2, 3, 3, 3];
        let pred = [0, 1, 1, 3, 3, 2, 0];
        let r = evaluate_labels(&CLASSES, &truth, &pred);
        for (c, row) in r.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), r.per_class[c].support);
        }
        assert!((r.accuracy - 3.0 / 7.0).abs() < 1e-12);
        // Class 0: tp 1, predicted 2, support 2.
        assert!((r.per_class[0].precision - 0.5).abs() < 1e-12);
        assert!((r.per_class[0].recall - 0.5).abs() < 1e-12);
        assert_eq!(r.per_class[2].f1, 0.0);
    }

    #[test]
    fn uniform_random_predictor() {
        // Binomial(4000, 0.25): sd = 0.00685, so 0.25 +- 0.027 is about a 4-sigma band.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let truth: Vec<usize> = (0..4000).map(|i| i % 4).collect();
        let pred: Vec<usize> = (0..4000).map(|_| rng.gen_range(0..4)).collect();
        let r = evaluate_labels(&CLASSES, &truth, &pred);
        assert!((r.accuracy - 0.25).abs() < 0.027, "{}", r.accuracy);
    }

    #[test]
    fn csv_header() {
        let r = evaluate_labels(&CLASSES, &[0, 1, 2, 3], &[0, 1, 2, 3]);
        let csv = eval_csv(&[EvalRow {
            model: "LSTM".into(),
            epsilon: 0.05,
            report: r,
        }]);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("model,epsilon,accuracy,macroF1,precision_ALLC,recall_ALLC,f1_ALLC"));
        assert!(lines.next().unwrap().starts_with("LSTM,0.05,1,1,"));
    }
}
