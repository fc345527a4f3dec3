//! Test-set evaluation: confusion matrices, F1 scores and per-timestep error curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::nn::{argmax, Network, OUTPUT_WIDTH};
use crate::trajectory::RoadUserClass;

/// Anything producing one probability row per timestep.
pub trait SequenceClassifier: Sync {
    fn predict_proba(&self, seq: &FeatureSequence) -> Vec<[f64; OUTPUT_WIDTH]>;
}

impl SequenceClassifier for Network {
    fn predict_proba(&self, seq: &FeatureSequence) -> Vec<[f64; OUTPUT_WIDTH]> {
        self.forward(seq)
    }
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; 4]; 4]) -> Self {
        Self { counts }
    }

    pub fn record(&mut self, truth: RoadUserClass, predicted: RoadUserClass) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

fn predicted_class(row: &[f64; OUTPUT_WIDTH]) -> RoadUserClass {
    RoadUserClass::ALL[argmax(row)]
}

/// Classifies each sequence by the argmax of its final timestep.
pub fn confusion_matrix<C: SequenceClassifier + ?Sized>(model: &C, test: &[FeatureSequence]) -> ConfusionMatrix {
    let predictions: Vec<RoadUserClass> = test
        .par_iter()
        .map(|s| {
            let probs = model.predict_proba(s);
            predicted_class(probs.last().expect("non-empty sequence"))
        })
        .collect();
    let mut cm = ConfusionMatrix::default();
    for (s, p) in test.iter().zip(predictions) {
        cm.record(s.label, p);
    }
    cm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub precision: [f64; 4],
    pub recall: [f64; 4],
    pub per_class: [f64; 4],
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class F1 and the unweighted macro average. Zero denominators give 0.
pub fn f1_report(cm: &ConfusionMatrix) -> F1Report {
    let precision: [f64; 4] = std::array::from_fn(|c| ratio(cm.counts[c][c], cm.col_sum(c)));
    let recall: [f64; 4] = std::array::from_fn(|c| ratio(cm.counts[c][c], cm.row_sum(c)));
    let per_class: [f64; 4] = std::array::from_fn(|c| {
        let (p, r) = (precision[c], recall[c]);
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    });
    F1Report {
        precision,
        recall,
        macro_f1: per_class.iter().sum::<f64>() / 4.0,
        per_class,
    }
}

/// Per class, the share of its test sequences misclassified at each timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub class_counts: [usize; 4],
    /// `per_class[c][t]` for t = 0..T.
    pub per_class: [Vec<f64>; 4],
}

impl ErrorCurve {
    pub fn steps(&self) -> usize {
        self.per_class[0].len()
    }

    /// `timestep,pedestrian,cyclist,motorcyclist,passenger_car`, timesteps from 1.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["timestep"];
        header.extend(RoadUserClass::names());
        w.write_record(&header)?;
        for t in 0..self.steps() {
            let mut row = vec![(t + 1).to_string()];
            row.extend(self.per_class.iter().map(|c| c[t].to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("error curve", e))
    }

    /// Whitespace-separated columns with a `#` header, for gnuplot.
    pub fn write_gnuplot<W: Write>(&self, mut sink: W) -> Result<()> {
        let io = |e| Error::io("gnuplot data", e);
        writeln!(sink, "# timestep {}", RoadUserClass::names().join(" ")).map_err(io)?;
        for t in 0..self.steps() {
            let values: Vec<String> = self.per_class.iter().map(|c| format!("{:.6}", c[t])).collect();
            writeln!(sink, "{} {}", t + 1, values.join(" ")).map_err(io)?;
        }
        Ok(())
    }
}

pub fn error_rate_curve<C: SequenceClassifier + ?Sized>(model: &C, test: &[FeatureSequence]) -> Result<ErrorCurve> {
    let Some(first) = test.first() else {
        return Err(Error::Evaluation("error curve needs a non-empty test set".into()));
    };
    let steps = first.len();
    if steps == 0 || test.iter().any(|s| s.len() != steps) {
        return Err(Error::Evaluation("test sequences must share one non-zero length".into()));
    }
    let wrong: Vec<Vec<bool>> = test
        .par_iter()
        .map(|s| {
            model
                .predict_proba(s)
                .iter()
                .map(|row| predicted_class(row) != s.label)
                .collect()
        })
        .collect();
    let mut class_counts = [0usize; 4];
    let mut errors: [Vec<usize>; 4] = std::array::from_fn(|_| vec![0; steps]);
    for (s, w) in test.iter().zip(&wrong) {
        let c = s.label.index();
        class_counts[c] += 1;
        for (t, &bad) in w.iter().enumerate() {
            errors[c][t] += bad as usize;
        }
    }
    let per_class = std::array::from_fn(|c| {
        errors[c]
            .iter()
            .map(|&e| if class_counts[c] == 0 { 0.0 } else { e as f64 / class_counts[c] as f64 })
            .collect()
    });
    Ok(ErrorCurve {
        class_counts,
        per_class,
    })
}

/// Contents of `eval.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_order: Vec<String>,
    pub confusion_matrix: [[u64; 4]; 4],
    pub f1: [f64; 4],
    pub precision: [f64; 4],
    pub recall: [f64; 4],
    pub macro_f1: f64,
    pub test_count: u64,
}

impl EvalReport {
    pub fn new(cm: &ConfusionMatrix) -> Self {
        let f1 = f1_report(cm);
        Self {
            class_order: RoadUserClass::names().iter().map(|s| s.to_string()).collect(),
            confusion_matrix: cm.counts,
            f1: f1.per_class,
            precision: f1.precision,
            recall: f1.recall,
            macro_f1: f1.macro_f1,
            test_count: cm.total(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;
    use crate::reference::PUBLISHED_CONFUSION;
    use proptest::prelude::*;

    /// Predicts the sequence's own label, or a fixed class.
    struct Fixed(Option<RoadUserClass>);
    impl SequenceClassifier for Fixed {
        fn predict_proba(&self, seq: &FeatureSequence) -> Vec<[f64; 4]> {
            let class = self.0.unwrap_or(seq.label);
            let mut row = [0.0; 4];
            row[class.index()] = 1.0;
            vec![row; seq.len()]
        }
    }

    struct Uniform;
    impl SequenceClassifier for Uniform {
        fn predict_proba(&self, seq: &FeatureSequence) -> Vec<[f64; 4]> {
            vec![[0.25; 4]; seq.len()]
        }
    }

    /// Replays a list of predicted classes by sequence id.
    struct Replay(Vec<RoadUserClass>);
    impl SequenceClassifier for Replay {
        fn predict_proba(&self, seq: &FeatureSequence) -> Vec<[f64; 4]> {
            let i: usize = seq.id.parse().unwrap();
            let mut row = [0.1; 4];
            row[self.0[i].index()] = 0.7;
            vec![row; seq.len()]
        }
    }

    fn seqs(counts: [usize; 4], len: usize) -> Vec<FeatureSequence> {
        let mut out = Vec::new();
        for (c, n) in RoadUserClass::ALL.iter().zip(counts) {
            for _ in 0..n {
                out.push(FeatureSequence {
                    id: out.len().to_string(),
                    label: *c,
                    steps: vec![FeatureVector::default(); len],
                });
            }
        }
        out
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let test = seqs([3, 5, 2, 4], 3);
        let cm = confusion_matrix(&Fixed(None), &test);
        assert_eq!(cm.counts, [[3, 0, 0, 0], [0, 5, 0, 0], [0, 0, 2, 0], [0, 0, 0, 4]]);
        let r = f1_report(&cm);
        assert_eq!(r.per_class, [1.0; 4]);
        assert_eq!(r.macro_f1, 1.0);

        let cm = confusion_matrix(&Fixed(Some(RoadUserClass::Motorcyclist)), &test);
        for c in 0..4 {
            assert_eq!(cm.col_sum(c), if c == 2 { 14 } else { 0 });
        }
        let r = f1_report(&cm);
        assert_eq!(r.per_class[0], 0.0);
    }

    #[test]
    fn replayed_published_matrix() {
        let (_, published) = PUBLISHED_CONFUSION[0];
        let counts: [usize; 4] = std::array::from_fn(|r| published[r].iter().sum::<u64>() as usize);
        let test = seqs(counts, 2);
        let mut preds = Vec::new();
        for row in published {
            for (p, &n) in row.iter().enumerate() {
                preds.extend(std::iter::repeat(RoadUserClass::ALL[p]).take(n as usize));
            }
        }
        let cm = confusion_matrix(&Replay(preds), &test);
        assert_eq!(cm.counts, published);
        assert_eq!(cm.counts, [[92, 0, 0, 1], [2, 106, 0, 7], [0, 1, 62, 32], [0, 2, 42, 109]]);
    }

    #[test]
    fn published_f1_values() {
        let expected = [
            ([0.9840, 0.9464, 0.6231, 0.7219], 0.8189),
            ([0.9756, 0.9825, 0.7692, 0.8525], 0.8950),
        ];
        for ((_, m), (f1, macro_f1)) in [PUBLISHED_CONFUSION[0], PUBLISHED_CONFUSION[2]].iter().zip(expected) {
            let r = f1_report(&ConfusionMatrix::new(*m));
            for c in 0..4 {
                assert!((r.per_class[c] - f1[c]).abs() < 5e-4);
            }
            assert!((r.macro_f1 - macro_f1).abs() < 5e-4);
        }
    }

    #[test]
    fn curves_for_trivial_predictors() {
        let test = seqs([2, 3, 1, 2], 4);
        let curve = error_rate_curve(&Fixed(None), &test).unwrap();
        assert!(curve.per_class.iter().all(|c| c.iter().all(|v| *v == 0.0)));
        let curve = error_rate_curve(&Uniform, &test).unwrap();
        assert_eq!(curve.per_class[0], vec![0.0; 4]);
        for c in 1..4 {
            assert_eq!(curve.per_class[c], vec![1.0; 4]);
        }
        assert_eq!(curve.class_counts, [2, 3, 1, 2]);
    }

    #[test]
    fn final_step_matches_confusion() {
        let net = crate::nn::build_network(
            crate::nn::HyperParams::new(1, 1, 1, 6, crate::nn::Activation::Tanh).unwrap(),
            17,
        )
        .unwrap();
        let mut test = seqs([4, 4, 4, 4], 5);
        for (i, s) in test.iter_mut().enumerate() {
            for (t, step) in s.steps.iter_mut().enumerate() {
                *step = FeatureVector::from_array(std::array::from_fn(|k| ((i * 7 + t * 3 + k) as f64).sin()));
            }
        }
        let cm = confusion_matrix(&net, &test);
        let curve = error_rate_curve(&net, &test).unwrap();
        for c in 0..4 {
            let expected = 1.0 - cm.counts[c][c] as f64 / cm.row_sum(c) as f64;
            assert!((curve.per_class[c][4] - expected).abs() < 1e-12);
        }
        // order invariance
        let mut shuffled = test.clone();
        shuffled.reverse();
        assert_eq!(confusion_matrix(&net, &shuffled), cm);
        assert_eq!(error_rate_curve(&net, &shuffled).unwrap(), curve);
    }

    #[test]
    fn curve_rejects_ragged_or_empty() {
        assert!(error_rate_curve(&Uniform, &[]).is_err());
        let mut test = seqs([1, 1, 1, 1], 3);
        test[2].steps.pop();
        assert!(error_rate_curve(&Uniform, &test).is_err());
    }

    #[test]
    fn curve_outputs() {
        let curve = error_rate_curve(&Uniform, &seqs([1, 1, 0, 0], 2)).unwrap();
        let mut csv = Vec::new();
        curve.write_csv(&mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "timestep,pedestrian,cyclist,motorcyclist,passenger_car\n1,0,1,0,0\n2,0,1,0,0\n"
        );
        let mut plot = Vec::new();
        curve.write_gnuplot(&mut plot).unwrap();
        assert!(String::from_utf8(plot).unwrap().starts_with("# timestep pedestrian"));
    }

    /// One-vs-rest precision/recall computed from scratch.
    fn brute_force_f1(m: &[[u64; 4]; 4], class: usize) -> f64 {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for t in 0..4 {
            for p in 0..4 {
                let n = m[t][p];
                match (t == class, p == class) {
                    (true, true) => tp += n,
                    (false, true) => fp += n,
                    (true, false) => fn_ += n,
                    _ => {}
                }
            }
        }
        if tp == 0 {
            return 0.0;
        }
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }

    proptest! {
        #[test]
        fn f1_matches_brute_force(cells in prop::array::uniform16(0u64..20)) {
            let m: [[u64; 4]; 4] = std::array::from_fn(|r| std::array::from_fn(|c| cells[r * 4 + c]));
            let r = f1_report(&ConfusionMatrix::new(m));
            for c in 0..4 {
                prop_assert!((r.per_class[c] - brute_force_f1(&m, c)).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&r.per_class[c]));
            }
            prop_assert!((r.macro_f1 - r.per_class.iter().sum::<f64>() / 4.0).abs() < 1e-15);
        }
    }
}
