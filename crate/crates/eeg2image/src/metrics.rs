//! Generation quality metrics over the frozen classifier's predictions:
//! inception score and per-class diversity score.

use crate::cformer::CFormer;
use crate::cgan::{embed_windows, Generator};
use crate::classifier::ImageClassifier;
use crate::dataio::{EEGWindow, CLASS_NAMES, IMG_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::rng::RngStream;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// A batch of class probability rows, validated on construction: every row
/// is a distribution (entries in [0, 1], summing to 1 within 1e-9).
pub struct PredictionBatch {
    probs: Vec<f64>,
    n: usize,
    m: usize,
}

impl PredictionBatch {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<PredictionBatch> {
        if rows.is_empty() {
            return Err(Error::Data("PredictionBatch: no rows".into()));
        }
        let m = rows[0].len();
        if m == 0 {
            return Err(Error::Data("PredictionBatch: zero classes".into()));
        }
        let mut probs = Vec::with_capacity(rows.len() * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Shape(format!(
                    "PredictionBatch: row {i} has {} entries, expected {m}",
                    row.len()
                )));
            }
            let mut sum = 0.0;
            for &v in row {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Data(format!(
                        "PredictionBatch: row {i} contains {v} outside [0, 1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Data(format!(
                    "PredictionBatch: row {i} sums to {sum}, not 1"
                )));
            }
            probs.extend_from_slice(row);
        }
        Ok(PredictionBatch { probs, n: rows.len(), m })
    }

    pub fn num_rows(&self) -> usize {
        self.n
    }

    pub fn num_classes(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.m..(i + 1) * self.m]
    }
}

/// Inception score: exp of the mean KL divergence between each row and the
/// marginal (column mean), natural log, with the 0*ln(0) := 0 convention.
/// Always within [1, M] for M classes.
pub fn inception_score(batch: &PredictionBatch) -> f64 {
    let (n, m) = (batch.n, batch.m);
    let mut marginal = vec![0.0; m];
    for i in 0..n {
        for (j, v) in batch.row(i).iter().enumerate() {
            marginal[j] += v / n as f64;
        }
    }
    let mut mean_kl = 0.0;
    for i in 0..n {
        let row = batch.row(i);
        let mut kl = 0.0;
        for j in 0..m {
            if row[j] > 0.0 {
                // marginal[j] >= row[j] / n > 0 here
                kl += row[j] * (row[j] / marginal[j]).ln();
            }
        }
        mean_kl += kl / n as f64;
    }
    mean_kl.exp()
}

/// Diversity of hard class decisions: entropy of the argmax histogram
/// normalized by ln(M), in [0, 1]. Argmax ties resolve to the lowest class
/// index.
pub fn class_diversity_score(batch: &PredictionBatch) -> f64 {
    let (n, m) = (batch.n, batch.m);
    let mut counts = vec![0usize; m];
    for i in 0..n {
        counts[crate::cformer::argmax(batch.row(i))] += 1;
    }
    if m == 1 {
        return 0.0; // a single class has no diversity to measure
    }
    let mut entropy = 0.0;
    for &c in &counts {
        if c > 0 {
            let q = c as f64 / n as f64;
            entropy -= q * q.ln();
        }
    }
    entropy / (m as f64).ln()
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct ConditionScores {
    pub condition1: f64,
    pub condition2: f64,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub inception_score: ConditionScores,
    /// Per-class diversity in CLASS_NAMES order; None when no window of
    /// that class was available.
    pub diversity_per_class: Vec<Option<f64>>,
    pub diversity_mean: f64,
    pub num_images: usize,
}

impl MetricsReport {
    pub fn to_json(&self) -> serde_json::Value {
        let mut diversity = serde_json::Map::new();
        for (name, v) in CLASS_NAMES.iter().zip(&self.diversity_per_class) {
            diversity.insert(name.to_string(), serde_json::json!(v));
        }
        diversity.insert("mean".into(), serde_json::json!(self.diversity_mean));
        serde_json::json!({
            "inception_score": {
                "condition1": self.inception_score.condition1,
                "condition2": self.inception_score.condition2,
            },
            "diversity": diversity,
            "num_images": self.num_images,
        })
    }
}

/// Generate one image per EEG window, classify it with the frozen
/// classifier, and score the predictions. Condition 1 covers train+test
/// windows, condition 2 the test windows alone. Diversity is computed per
/// conditioned class over condition 1.
pub fn evaluate_generator(
    generator: &Generator,
    encoder: &CFormer,
    classifier: &ImageClassifier,
    eeg_train: &[EEGWindow],
    eeg_test: &[EEGWindow],
    allow_untrained: bool,
) -> Result<MetricsReport> {
    if eeg_test.is_empty() {
        return Err(Error::Data("evaluate_generator: empty test set".into()));
    }
    if !classifier.is_trained() && !allow_untrained {
        return Err(Error::Checkpoint(
            "evaluation requires a trained classifier checkpoint".into(),
        ));
    }
    let mut windows: Vec<EEGWindow> = eeg_train.to_vec();
    windows.extend_from_slice(eeg_test);
    let embeddings = embed_windows(encoder, &windows, allow_untrained)?;

    let m = classifier.cfg.num_classes;
    let dim = generator.cfg.embed_dim;
    let s = generator.cfg.img_size;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(windows.len());
    let mut rng = RngStream::new(0);
    for chunk in embeddings.chunks(50) {
        let mut z_data = Vec::with_capacity(chunk.len() * dim);
        for e in chunk {
            z_data.extend_from_slice(e);
        }
        let z = Tensor::from_vec(z_data, &[chunk.len(), dim])?;
        let imgs = generator.forward(&z, Mode::Eval)?.detach();
        debug_assert_eq!(imgs.shape(), &[chunk.len(), IMG_CHANNELS, s, s]);
        let probs = classifier.forward(&imgs, Mode::Eval, &mut rng)?;
        probs.with_data(|p| {
            for r in 0..chunk.len() {
                rows.push(p[r * m..(r + 1) * m].to_vec());
            }
        });
    }

    let all = PredictionBatch::new(rows.clone())?;
    let test_rows = rows[eeg_train.len()..].to_vec();
    let test_batch = PredictionBatch::new(test_rows)?;
    let inception = ConditionScores {
        condition1: inception_score(&all),
        condition2: inception_score(&test_batch),
    };

    let mut per_class = vec![Vec::new(); m];
    for (w, row) in windows.iter().zip(&rows) {
        per_class[w.label].push(row.clone());
    }
    let mut diversity_per_class = Vec::with_capacity(m);
    let mut sum = 0.0;
    let mut present = 0usize;
    for class_rows in per_class {
        if class_rows.is_empty() {
            diversity_per_class.push(None);
        } else {
            let d = class_diversity_score(&PredictionBatch::new(class_rows)?);
            diversity_per_class.push(Some(d));
            sum += d;
            present += 1;
        }
    }
    Ok(MetricsReport {
        inception_score: inception,
        diversity_per_class,
        diversity_mean: if present > 0 { sum / present as f64 } else { 0.0 },
        num_images: windows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cformer::CFormerConfig;
    use crate::cgan::GanConfig;
    use crate::classifier::ImageClassifierConfig;
    use crate::dataio::synth_eeg;

    fn batch(rows: &[&[f64]]) -> PredictionBatch {
        PredictionBatch::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    /// Deliberately different arithmetic from the production code: log2
    /// based entropy/KL converted back to nats at the end.
    fn is_reference(rows: &[Vec<f64>]) -> f64 {
        let n = rows.len() as f64;
        let m = rows[0].len();
        let marginal: Vec<f64> =
            (0..m).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let mut acc = 0.0;
        for r in rows {
            for j in 0..m {
                if r[j] > 0.0 {
                    acc += r[j] * (r[j].log2() - marginal[j].log2());
                }
            }
        }
        std::f64::consts::E.powf(acc / n * std::f64::consts::LN_2)
    }

    fn diversity_reference(rows: &[Vec<f64>]) -> f64 {
        let m = rows[0].len();
        let mut counts = vec![0.0; m];
        for r in rows {
            let mut best = 0;
            for (j, v) in r.iter().enumerate() {
                if *v > r[best] {
                    best = j;
                }
            }
            counts[best] += 1.0;
        }
        let n: f64 = counts.iter().sum();
        let h: f64 = counts
            .iter()
            .filter(|c| **c > 0.0)
            .map(|c| {
                let q = c / n;
                -q * q.log2() * std::f64::consts::LN_2
            })
            .sum();
        h / (m as f64).ln()
    }

    #[test]
    fn prediction_batch_validation() {
        assert!(PredictionBatch::new(vec![]).is_err());
        assert!(PredictionBatch::new(vec![vec![0.5, 0.6]]).is_err()); // sum 1.1
        assert!(PredictionBatch::new(vec![vec![1.2, -0.2]]).is_err()); // out of range
        assert!(PredictionBatch::new(vec![vec![0.5, 0.5], vec![1.0]]).is_err()); // ragged
        assert!(PredictionBatch::new(vec![vec![0.25; 4]]).is_ok());
    }

    #[test]
    fn inception_score_hand_values() {
        // perfectly confident and perfectly diverse: IS = M exactly
        let mut rows = Vec::new();
        for c in 0..10 {
            let mut r = vec![0.0; 10];
            r[c] = 1.0;
            rows.push(r);
        }
        let is = inception_score(&PredictionBatch::new(rows).unwrap());
        assert!((is - 10.0).abs() < 1e-12);

        // two soft rows: marginal is uniform, KL = ln2*0.8 + ... known value
        let is = inception_score(&batch(&[&[0.9, 0.1], &[0.1, 0.9]]));
        let expected = (0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln()).exp();
        assert!((is - expected).abs() < 1e-12);
        assert!((is - 1.444934).abs() < 1e-5);

        // identical uniform rows carry no information: IS = 1
        let is = inception_score(&batch(&[&[0.25; 4], &[0.25; 4]]));
        assert!((is - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diversity_hand_values() {
        // 3 rows argmax class 0, 1 row argmax class 1, out of 10 classes
        let rows: Vec<Vec<f64>> = vec![
            vec![0.8, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.6, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.55, 0.45, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.3, 0.7, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ];
        let d = class_diversity_score(&PredictionBatch::new(rows).unwrap());
        let h = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((d - h / 10f64.ln()).abs() < 1e-12);
        assert!((d - 0.244219).abs() < 1e-5);

        // collapsed predictions: zero diversity
        let d = class_diversity_score(&batch(&[&[1.0, 0.0], &[1.0, 0.0]]));
        assert_eq!(d, 0.0);

        // one hard prediction per class: maximal diversity
        let mut rows = Vec::new();
        for c in 0..10 {
            let mut r = vec![0.0; 10];
            r[c] = 1.0;
            rows.push(r);
        }
        let d = class_diversity_score(&PredictionBatch::new(rows).unwrap());
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_resolve_to_lowest_index() {
        let d = class_diversity_score(&batch(&[&[0.5, 0.5], &[0.5, 0.5]]));
        assert_eq!(d, 0.0);
    }

    #[test]
    fn scores_match_independent_reference_and_bounds() {
        let mut rng = RngStream::new(99);
        for trial in 0..1000 {
            let n = 2 + rng.below(6);
            let m = 2 + rng.below(9);
            let mut rows = Vec::with_capacity(n);
            for _ in 0..n {
                let mut r: Vec<f64> = (0..m).map(|_| rng.uniform(1e-6, 1.0)).collect();
                let s: f64 = r.iter().sum();
                for v in &mut r {
                    *v /= s;
                }
                rows.push(r);
            }
            let b = PredictionBatch::new(rows.clone()).unwrap();
            let is = inception_score(&b);
            let d = class_diversity_score(&b);
            assert!(
                (is - is_reference(&rows)).abs() <= 1e-12 * is.max(1.0),
                "trial {trial}"
            );
            assert!((d - diversity_reference(&rows)).abs() <= 1e-12, "trial {trial}");
            assert!((1.0 - 1e-12..=m as f64 + 1e-12).contains(&is), "trial {trial}: IS {is}");
            assert!((-1e-12..=1.0 + 1e-12).contains(&d), "trial {trial}: diversity {d}");
        }
    }

    #[test]
    fn evaluate_generator_report_shape_and_absent_class_nulls() {
        let encoder = CFormer::new(
            CFormerConfig { conv_channels: 8, heads: 2, ff_dim: 16, ..CFormerConfig::default() },
            1,
        )
        .unwrap();
        let classifier = ImageClassifier::new(
            ImageClassifierConfig {
                conv_channels: [4, 4, 8],
                fc1: 16,
                fc2: 8,
                ..ImageClassifierConfig::default()
            },
            2,
        )
        .unwrap();
        let generator = Generator::new(
            GanConfig {
                g_channels: vec![8, 8, 8, 8],
                d_channels: vec![4, 8],
                ..GanConfig::default()
            },
            3,
        )
        .unwrap();
        // classes 0 and 1 only; the rest must be null in the report
        let mut train = synth_eeg(0, 3, 1).unwrap();
        train.extend(synth_eeg(1, 3, 1).unwrap());
        let test = synth_eeg(0, 2, 2).unwrap();

        let report =
            evaluate_generator(&generator, &encoder, &classifier, &train, &test, true).unwrap();
        assert_eq!(report.num_images, 8);
        assert!(report.diversity_per_class[0].is_some());
        assert!(report.diversity_per_class[1].is_some());
        for c in 2..10 {
            assert!(report.diversity_per_class[c].is_none());
        }
        assert!(report.inception_score.condition1 >= 1.0 - 1e-12);
        assert!(report.inception_score.condition2 >= 1.0 - 1e-12);

        let json = report.to_json();
        assert!(json["diversity"]["mean"].is_number());
        assert!(json["diversity"][CLASS_NAMES[2]].is_null());
        assert_eq!(json["num_images"], 8);
        // keys appear in declaration order: class names then mean
        let keys: Vec<&String> = json["diversity"].as_object().unwrap().keys().collect();
        assert_eq!(keys[0], CLASS_NAMES[0]);
        assert_eq!(keys[10], "mean");
    }

    #[test]
    fn evaluate_generator_rejects_untrained_without_flag() {
        let encoder = CFormer::new(
            CFormerConfig { conv_channels: 8, heads: 2, ff_dim: 16, ..CFormerConfig::default() },
            1,
        )
        .unwrap();
        let classifier =
            ImageClassifier::new(ImageClassifierConfig::default(), 2).unwrap();
        let generator = Generator::new(GanConfig::default(), 3).unwrap();
        let test = synth_eeg(0, 2, 2).unwrap();
        assert!(
            evaluate_generator(&generator, &encoder, &classifier, &[], &test, false).is_err()
        );
    }
}
