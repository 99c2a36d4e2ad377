//! Core segmentation data types and evaluation metrics.
//!
//! Arrays are `ndarray`-backed and validated on construction, so downstream
//! code can rely on the invariants (probabilities on the simplex, labels in
//! range, masks strictly 0/1) without re-checking.

use ndarray::{Array2, Array3};

use crate::error::{check_same_shape, Error, Result};

pub mod io;

/// Default reserved label for pixels excluded from supervision and scoring.
pub const DEFAULT_IGNORE: u8 = 255;

/// Per-pixel probability vectors must sum to 1 within this tolerance.
pub const PROB_SUM_TOL: f64 = 1e-5;

/// An RGB image with channel values in `[0, 1]`, stored H×W×3.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pixels: Array3<f64>,
}

impl ImageTensor {
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 {
            return Err(Error::EmptyInput("image"));
        }
        if c != 3 {
            return Err(Error::invalid(format!("image must have 3 channels, got {c}")));
        }
        if !pixels.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image values must lie in [0, 1]"));
        }
        Ok(Self { pixels })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((height, width, 3), value))
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.pixels
    }

    /// Internal constructor for values already known to be clipped.
    pub(crate) fn from_clipped(pixels: Array3<f64>) -> Self {
        debug_assert!(pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { pixels }
    }
}

/// Per-pixel class labels, each in `[0, num_classes)` or equal to the
/// reserved ignore value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    labels: Array2<u8>,
    num_classes: usize,
    ignore_value: u8,
}

impl LabelMap {
    pub fn new(labels: Array2<u8>, num_classes: usize, ignore_value: u8) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("label map"));
        }
        if num_classes < 1 || num_classes > 255 {
            return Err(Error::invalid(format!(
                "num_classes must be in [1, 255], got {num_classes}"
            )));
        }
        if (ignore_value as usize) < num_classes {
            return Err(Error::invalid(format!(
                "ignore value {ignore_value} collides with class range [0, {num_classes})"
            )));
        }
        if !labels
            .iter()
            .all(|&l| (l as usize) < num_classes || l == ignore_value)
        {
            return Err(Error::invalid("label outside [0, num_classes) and not ignore"));
        }
        Ok(Self {
            labels,
            num_classes,
            ignore_value,
        })
    }

    pub fn height(&self) -> usize {
        self.labels.dim().0
    }

    pub fn width(&self) -> usize {
        self.labels.dim().1
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ignore_value(&self) -> u8 {
        self.ignore_value
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }

    /// Count of pixels not equal to the ignore value.
    pub fn num_evaluated(&self) -> usize {
        self.labels.iter().filter(|&&l| l != self.ignore_value).count()
    }

    /// Sorted list of distinct non-ignored classes present in the map.
    pub fn present_classes(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in self.labels.iter() {
            if l != self.ignore_value {
                seen[l as usize] = true;
            }
        }
        (0u16..256).filter(|&c| seen[c as usize]).map(|c| c as u8).collect()
    }
}

/// Raw pre-softmax class scores, H×W×C, finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMap {
    scores: Array3<f64>,
}

impl LogitMap {
    pub fn new(scores: Array3<f64>) -> Result<Self> {
        let (h, w, c) = scores.dim();
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::EmptyInput("logit map"));
        }
        if !scores.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("logit map contains non-finite values"));
        }
        Ok(Self { scores })
    }

    pub fn num_classes(&self) -> usize {
        self.scores.dim().2
    }

    pub fn scores(&self) -> &Array3<f64> {
        &self.scores
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.scores
    }
}

/// Per-pixel class probabilities, H×W×C, entries ≥ 0, channels summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    probs: Array3<f64>,
}

impl ProbMap {
    pub fn new(probs: Array3<f64>) -> Result<Self> {
        let (h, w, c) = probs.dim();
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::EmptyInput("probability map"));
        }
        if !probs.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::invalid("probabilities must be finite and non-negative"));
        }
        for lane in probs.rows() {
            let sum: f64 = lane.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::invalid(format!(
                    "pixel probabilities sum to {sum}, expected 1 within {PROB_SUM_TOL}"
                )));
            }
        }
        Ok(Self { probs })
    }

    pub fn height(&self) -> usize {
        self.probs.dim().0
    }

    pub fn width(&self) -> usize {
        self.probs.dim().1
    }

    pub fn num_classes(&self) -> usize {
        self.probs.dim().2
    }

    pub fn probs(&self) -> &Array3<f64> {
        &self.probs
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.probs
    }

    /// Internal constructor for arrays produced by normalization itself.
    pub(crate) fn from_normalized(probs: Array3<f64>) -> Self {
        Self { probs }
    }
}

/// An H×W mask with entries exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    mask: Array2<u8>,
}

impl BinaryMask {
    pub fn new(mask: Array2<u8>) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::EmptyInput("binary mask"));
        }
        if !mask.iter().all(|&m| m <= 1) {
            return Err(Error::invalid("mask entries must be 0 or 1"));
        }
        Ok(Self { mask })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            mask: Array2::from_elem((height, width), 1),
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            mask: Array2::zeros((height, width)),
        }
    }

    pub fn height(&self) -> usize {
        self.mask.dim().0
    }

    pub fn width(&self) -> usize {
        self.mask.dim().1
    }

    pub fn mask(&self) -> &Array2<u8> {
        &self.mask
    }

    pub fn count_ones(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    /// Fraction of pixels with mask value 1.
    pub fn fraction_ones(&self) -> f64 {
        self.count_ones() as f64 / self.mask.len() as f64
    }

    pub(crate) fn from_bits(mask: Array2<u8>) -> Self {
        debug_assert!(mask.iter().all(|&m| m <= 1));
        Self { mask }
    }
}

/// Class confusion counts; rows index ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            counts: Array2::zeros((num_classes, num_classes)),
        }
    }

    pub fn new(counts: Array2<u64>) -> Result<Self> {
        let (r, c) = counts.dim();
        if r == 0 || r != c {
            return Err(Error::invalid(format!(
                "confusion matrix must be square and non-empty, got {r}x{c}"
            )));
        }
        Ok(Self { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.dim().0
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds another matrix of the same size into this one.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        check_same_shape(
            "confusion merge",
            self.counts.shape(),
            other.counts.shape(),
        )?;
        self.counts += &other.counts;
        Ok(())
    }
}

/// Per-class IoU (`None` where the union is empty) and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// Exponential normalization per pixel (softmax over the channel axis).
///
/// Shift-invariant and order-preserving: the per-pixel argmax of the output
/// equals the argmax of the raw scores.
pub fn normalize(logits: &LogitMap) -> ProbMap {
    let scores = logits.scores();
    let mut probs = scores.clone();
    for mut lane in probs.rows_mut() {
        let max = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in lane.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in lane.iter_mut() {
            *v /= sum;
        }
    }
    ProbMap::from_normalized(probs)
}

/// Per-pixel index of the maximal channel; ties break toward the lowest
/// class index.
pub fn argmax_labels(probs: &ProbMap) -> LabelMap {
    let (h, w, c) = probs.probs().dim();
    debug_assert!(c <= 255);
    let mut labels = Array2::zeros((h, w));
    for (lane, out) in probs.probs().rows().into_iter().zip(labels.iter_mut()) {
        let mut best = 0usize;
        let mut best_val = lane[0];
        for (ix, &v) in lane.iter().enumerate().skip(1) {
            if v > best_val {
                best = ix;
                best_val = v;
            }
        }
        *out = best as u8;
    }
    LabelMap {
        labels,
        num_classes: c,
        ignore_value: DEFAULT_IGNORE,
    }
}

/// Tallies prediction vs ground truth; pixels where the ground truth equals
/// its ignore value are skipped.
pub fn confusion(pred: &LabelMap, gt: &LabelMap) -> Result<ConfusionMatrix> {
    check_same_shape("confusion inputs", gt.labels.shape(), pred.labels.shape())?;
    if pred.num_classes != gt.num_classes {
        return Err(Error::invalid(format!(
            "class count mismatch: pred {} vs gt {}",
            pred.num_classes, gt.num_classes
        )));
    }
    let c = gt.num_classes;
    let mut counts = Array2::<u64>::zeros((c, c));
    for (&p, &g) in pred.labels.iter().zip(gt.labels.iter()) {
        if g == gt.ignore_value {
            continue;
        }
        if p == pred.ignore_value {
            return Err(Error::invalid(
                "prediction contains the ignore value at an evaluated pixel",
            ));
        }
        counts[(g as usize, p as usize)] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Per-class IoU and its mean. Classes whose union is empty (never present
/// in ground truth nor predicted) are excluded from the mean; if every class
/// is excluded the evaluation is empty and an error is returned.
pub fn miou(cm: &ConfusionMatrix) -> Result<IouReport> {
    let c = cm.num_classes();
    let counts = cm.counts();
    let mut per_class = Vec::with_capacity(c);
    let mut sum = 0.0;
    let mut defined = 0usize;
    for k in 0..c {
        let tp = counts[(k, k)];
        let row: u64 = (0..c).map(|j| counts[(k, j)]).sum();
        let col: u64 = (0..c).map(|i| counts[(i, k)]).sum();
        let union = row + col - tp;
        if union == 0 {
            per_class.push(None);
        } else {
            let iou = tp as f64 / union as f64;
            per_class.push(Some(iou));
            sum += iou;
            defined += 1;
        }
    }
    if defined == 0 {
        return Err(Error::EmptyInput("confusion matrix has no evaluated pixels"));
    }
    Ok(IouReport {
        per_class,
        mean: sum / defined as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn logits_of(values: Array3<f64>) -> LogitMap {
        LogitMap::new(values).unwrap()
    }

    #[test]
    fn normalize_all_zero_logits_is_uniform() {
        let probs = normalize(&logits_of(Array3::zeros((2, 3, 4))));
        for &p in probs.probs().iter() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_matches_hand_evaluated_ratio() {
        // logits (ln 1, ln 3) -> (0.25, 0.75)
        let l = array![[[0.0, 3.0f64.ln()]]];
        let probs = normalize(&logits_of(l));
        assert!((probs.probs()[(0, 0, 0)] - 0.25).abs() < 1e-12);
        assert!((probs.probs()[(0, 0, 1)] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn normalize_shift_invariant() {
        let mut rng = crate::rng::stream(11, "segcore-test", &[0]);
        let base = Array3::from_shape_fn((3, 3, 5), |_| rng.gen_range(-4.0..4.0));
        let shifted = &base + 7.5;
        let a = normalize(&logits_of(base));
        let b = normalize(&logits_of(shifted));
        for (x, y) in a.probs().iter().zip(b.probs().iter()) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn normalize_rejected_for_non_finite_logits() {
        let res = LogitMap::new(array![[[f64::NAN, 0.0]]]);
        assert!(res.is_err());
    }

    #[test]
    fn argmax_unique_max_and_tie_break() {
        let p = ProbMap::new(array![[[0.1, 0.7, 0.2]]]).unwrap();
        assert_eq!(argmax_labels(&p).labels()[(0, 0)], 1);
        let tie = ProbMap::new(array![[[0.5, 0.5]]]).unwrap();
        assert_eq!(argmax_labels(&tie).labels()[(0, 0)], 0);
    }

    #[test]
    fn argmax_matches_linear_scan_oracle() {
        let mut rng = crate::rng::stream(11, "segcore-test", &[1]);
        let raw = Array3::from_shape_fn((8, 8, 5), |_| rng.gen_range(0.0..1.0));
        // normalize rows so ProbMap::new accepts them
        let mut probs = raw.clone();
        for mut lane in probs.rows_mut() {
            let s: f64 = lane.iter().sum();
            lane.mapv_inplace(|v| v / s);
        }
        let pm = ProbMap::new(probs.clone()).unwrap();
        let labels = argmax_labels(&pm);
        for i in 0..8 {
            for j in 0..8 {
                let mut best = 0;
                for k in 1..5 {
                    if probs[(i, j, k)] > probs[(i, j, best)] {
                        best = k;
                    }
                }
                assert_eq!(labels.labels()[(i, j)] as usize, best);
            }
        }
    }

    #[test]
    fn confusion_perfect_prediction_is_diagonal() {
        let labels = Array2::from_shape_fn((4, 4), |(i, j)| ((i + j) % 3) as u8);
        let gt = LabelMap::new(labels.clone(), 3, DEFAULT_IGNORE).unwrap();
        let pred = LabelMap::new(labels, 3, DEFAULT_IGNORE).unwrap();
        let cm = confusion(&pred, &gt).unwrap();
        assert_eq!(cm.total(), 16);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(cm.counts()[(i, j)], 0);
                }
            }
        }
        assert!((miou(&cm).unwrap().mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confusion_all_ignored_is_zero() {
        let gt = LabelMap::new(Array2::from_elem((4, 4), DEFAULT_IGNORE), 3, DEFAULT_IGNORE).unwrap();
        let pred = LabelMap::new(Array2::zeros((4, 4)), 3, DEFAULT_IGNORE).unwrap();
        let cm = confusion(&pred, &gt).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(miou(&cm).is_err());
    }

    #[test]
    fn confusion_matches_tally_oracle() {
        let mut rng = crate::rng::stream(11, "segcore-test", &[2]);
        let gt_raw = Array2::from_shape_fn((16, 16), |_| {
            if rng.gen_bool(0.1) {
                DEFAULT_IGNORE
            } else {
                rng.gen_range(0..5u8)
            }
        });
        let pred_raw = Array2::from_shape_fn((16, 16), |_| rng.gen_range(0..5u8));
        let gt = LabelMap::new(gt_raw.clone(), 5, DEFAULT_IGNORE).unwrap();
        let pred = LabelMap::new(pred_raw.clone(), 5, DEFAULT_IGNORE).unwrap();
        let cm = confusion(&pred, &gt).unwrap();

        let mut expected = Array2::<u64>::zeros((5, 5));
        let mut ignored = 0usize;
        for i in 0..16 {
            for j in 0..16 {
                let g = gt_raw[(i, j)];
                if g == DEFAULT_IGNORE {
                    ignored += 1;
                    continue;
                }
                expected[(g as usize, pred_raw[(i, j)] as usize)] += 1;
            }
        }
        assert_eq!(cm.counts(), &expected);
        assert_eq!(cm.total() as usize + ignored, 16 * 16);
    }

    #[test]
    fn confusion_rejects_shape_mismatch() {
        let a = LabelMap::new(Array2::zeros((4, 4)), 3, DEFAULT_IGNORE).unwrap();
        let b = LabelMap::new(Array2::zeros((4, 5)), 3, DEFAULT_IGNORE).unwrap();
        assert!(confusion(&a, &b).is_err());
    }

    #[test]
    fn miou_hand_evaluated_two_class_case() {
        let cm = ConfusionMatrix::new(array![[6u64, 2], [1, 7]]).unwrap();
        let report = miou(&cm).unwrap();
        assert!((report.per_class[0].unwrap() - 6.0 / 9.0).abs() < 1e-12);
        assert!((report.per_class[1].unwrap() - 7.0 / 10.0).abs() < 1e-12);
        assert!((report.mean - (6.0 / 9.0 + 7.0 / 10.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn miou_disjoint_class_is_zero_and_absent_class_excluded() {
        // class 0 and 1 fully confused with each other, class 2 absent
        let cm = ConfusionMatrix::new(array![[0u64, 4, 0], [3, 0, 0], [0, 0, 0]]).unwrap();
        let report = miou(&cm).unwrap();
        assert_eq!(report.per_class[0], Some(0.0));
        assert_eq!(report.per_class[1], Some(0.0));
        assert_eq!(report.per_class[2], None);
        assert_eq!(report.mean, 0.0);
    }

    #[test]
    fn probmap_rejects_bad_sum() {
        assert!(ProbMap::new(array![[[0.5, 0.6]]]).is_err());
        assert!(ProbMap::new(array![[[-0.1, 1.1]]]).is_err());
    }

    #[test]
    fn labelmap_rejects_out_of_range() {
        assert!(LabelMap::new(array![[7u8]], 5, DEFAULT_IGNORE).is_err());
        assert!(LabelMap::new(array![[2u8]], 5, 3).is_err());
    }

    #[test]
    fn present_classes_sorted_unique() {
        let lm = LabelMap::new(array![[4u8, 0], [2, DEFAULT_IGNORE]], 5, DEFAULT_IGNORE).unwrap();
        assert_eq!(lm.present_classes(), vec![0, 2, 4]);
    }
}
