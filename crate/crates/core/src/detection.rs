//! Tumor instances, overlap matching and precision/recall/F-score.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::grid::{LabelMap, PetImage};
use crate::networks::{detector_forward, Detector};
use crate::regions::connected_components;
use crate::{Error, Result};

pub const DEFAULT_MIN_AREA: usize = 2;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// A matched pair counts as a hit only when its overlap ratio exceeds this.
pub const HIT_OVERLAP: f64 = 0.5;

/// One 8-connected component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TumorInstance {
    /// Sorted raster indices.
    pub pixels: Vec<usize>,
    pub area: usize,
    /// (row, col) mean of the pixel centres.
    pub centroid: (f64, f64),
}

impl TumorInstance {
    pub fn from_pixels(mut pixels: Vec<usize>, width: usize) -> Self {
        pixels.sort_unstable();
        let n = pixels.len() as f64;
        let (rs, cs) = pixels
            .iter()
            .fold((0.0, 0.0), |(r, c), &p| (r + (p / width) as f64, c + (p % width) as f64));
        TumorInstance {
            area: pixels.len(),
            centroid: (rs / n, cs / n),
            pixels,
        }
    }
}

/// Components of `mask` with at least `min_area` pixels, ordered by first raster pixel.
pub fn extract_instances(mask: &[bool], height: usize, width: usize, min_area: usize) -> Vec<TumorInstance> {
    connected_components(mask, height, width)
        .into_iter()
        .filter(|c| c.len() >= min_area.max(1))
        .map(|c| TumorInstance::from_pixels(c, width))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapDenominator {
    /// Intersection over union.
    #[default]
    Union,
    /// Intersection over the ground-truth area.
    Truth,
}

fn intersection(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

pub fn overlap_ratio(detected: &TumorInstance, truth: &TumorInstance, denom: OverlapDenominator) -> f64 {
    let inter = intersection(&detected.pixels, &truth.pixels);
    let d = match denom {
        OverlapDenominator::Union => detected.area + truth.area - inter,
        OverlapDenominator::Truth => truth.area,
    };
    if d == 0 {
        0.0
    } else {
        inter as f64 / d as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub detected: usize,
    pub truth: usize,
    pub overlap: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub matches: Vec<Match>,
}

/// Greedy one-to-one matching on `overlaps[detected][truth]`.
///
/// Pairs are taken in descending overlap (ties by detected then truth index)
/// while both sides are free. Only pairs above [`HIT_OVERLAP`] can become
/// hits; every other detection is a false positive and every other truth a
/// false negative.
pub fn match_overlap_matrix(overlaps: &[Vec<f64>], n_truth: usize) -> MatchOutcome {
    let mut pairs: Vec<Match> = overlaps
        .iter()
        .enumerate()
        .flat_map(|(d, row)| {
            assert_eq!(row.len(), n_truth);
            row.iter().enumerate().map(move |(t, &o)| Match {
                detected: d,
                truth: t,
                overlap: o,
            })
        })
        .filter(|m| m.overlap > HIT_OVERLAP)
        .collect();
    pairs.sort_by(|a, b| {
        b.overlap
            .total_cmp(&a.overlap)
            .then(a.detected.cmp(&b.detected))
            .then(a.truth.cmp(&b.truth))
    });
    let mut det_used = vec![false; overlaps.len()];
    let mut truth_used = vec![false; n_truth];
    let mut matches = Vec::new();
    for m in pairs {
        if !det_used[m.detected] && !truth_used[m.truth] {
            det_used[m.detected] = true;
            truth_used[m.truth] = true;
            matches.push(m);
        }
    }
    let tp = matches.len();
    MatchOutcome {
        tp,
        fp: overlaps.len() - tp,
        fn_: n_truth - tp,
        matches,
    }
}

pub fn match_instances(
    detected: &[TumorInstance],
    truth: &[TumorInstance],
    denom: OverlapDenominator,
) -> MatchOutcome {
    let overlaps: Vec<Vec<f64>> = detected
        .iter()
        .map(|d| truth.iter().map(|t| overlap_ratio(d, t, denom)).collect())
        .collect();
    match_overlap_matrix(&overlaps, truth.len())
}

/// Precision, recall and F-score in percent; each is 0 when undefined.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    let p = pct(tp, tp + fp);
    let r = pct(tp, tp + fn_);
    (p, r, f_score(p, r))
}

/// Harmonic mean of precision and recall (same units as the inputs).
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Probability cut for binarizing detector output.
    pub threshold: f64,
    pub min_area: usize,
    pub denominator: OverlapDenominator,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: DEFAULT_THRESHOLD,
            min_area: DEFAULT_MIN_AREA,
            denominator: OverlapDenominator::Union,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Validation(format!(
                "eval.threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub index: usize,
    pub detected: usize,
    pub truth: usize,
    pub outcome: MatchOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub images: Vec<ImageDetections>,
}

impl DetectionReport {
    pub fn from_images(images: Vec<ImageDetections>) -> Self {
        let (tp, fp, fn_) = images.iter().fold((0, 0, 0), |(a, b, c), i| {
            (a + i.outcome.tp, b + i.outcome.fp, c + i.outcome.fn_)
        });
        let (precision, recall, f_score) = prf(tp, fp, fn_);
        DetectionReport {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f_score,
            images,
        }
    }

    /// Pools reports by summing their counts; image indices are renumbered in order.
    pub fn merge(parts: &[&DetectionReport]) -> Self {
        let images = parts
            .iter()
            .flat_map(|r| r.images.iter().cloned())
            .enumerate()
            .map(|(index, i)| ImageDetections { index, ..i })
            .collect();
        Self::from_images(images)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores predicted binary masks against label maps.
pub fn evaluate_masks(predicted: &[Vec<bool>], truth: &[LabelMap], cfg: &EvalConfig) -> Result<DetectionReport> {
    if truth.is_empty() {
        return Err(Error::Precondition("test set is empty".into()));
    }
    if predicted.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predicted masks for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let images = predicted
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(index, (pred, label))| {
            let (h, w) = label.grid().dims();
            if pred.len() != h * w {
                return Err(Error::Contract(format!("mask {index} has the wrong size")));
            }
            let det = extract_instances(pred, h, w, cfg.min_area);
            let tru = extract_instances(&label.mask(), h, w, cfg.min_area);
            Ok(ImageDetections {
                index,
                detected: det.len(),
                truth: tru.len(),
                outcome: match_instances(&det, &tru, cfg.denominator),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectionReport::from_images(images))
}

/// Binarizes detector probabilities, extracts instances and matches them per image.
pub fn evaluate_detector(
    f: &Detector<f32>,
    test_set: &[(PetImage, LabelMap)],
    cfg: &EvalConfig,
) -> Result<DetectionReport> {
    cfg.validate()?;
    if test_set.is_empty() {
        return Err(Error::Precondition("test set is empty".into()));
    }
    let mut masks = Vec::with_capacity(test_set.len());
    for (pet, _) in test_set {
        let probs = detector_forward(f, pet)?;
        masks.push(probs.iter().map(|&p| p as f64 > cfg.threshold).collect());
    }
    let labels: Vec<LabelMap> = test_set.iter().map(|(_, l)| l.clone()).collect();
    evaluate_masks(&masks, &labels, cfg)
}

/// Aligned text table with one row per training source.
pub fn format_detection_table(rows: &[(String, &DetectionReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(13);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>9}  {:>7}  {:>7}  {:>5}  {:>5}  {:>5}",
        "Training data", "Precision", "Recall", "F-score", "TP", "FP", "FN"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.2}  {:>7.2}  {:>7.2}  {:>5}  {:>5}  {:>5}",
            name, r.precision, r.recall, r.f_score, r.tp, r.fp, r.fn_
        );
    }
    out
}
