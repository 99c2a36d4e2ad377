//! Predictive-entropy uncertainty estimation over a stochastic ensemble of
//! teacher predictions, and the time-dependent threshold that turns entropy
//! into a binary confidence mask.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_same_shape, Error, Result};
use crate::segcore::{normalize, BinaryMask, ImageTensor, LogitMap, ProbMap};

/// Per-pixel predictive entropy in nats. Entries are non-negative and, for
/// any valid C-class probability map, bounded by `ln C`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap {
    entropy: Array2<f64>,
}

impl EntropyMap {
    pub fn new(entropy: Array2<f64>) -> Result<Self> {
        if entropy.is_empty() {
            return Err(Error::EmptyInput("entropy map"));
        }
        if !entropy.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::invalid("entropy must be finite and non-negative"));
        }
        Ok(Self { entropy })
    }

    pub fn height(&self) -> usize {
        self.entropy.dim().0
    }

    pub fn width(&self) -> usize {
        self.entropy.dim().1
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.entropy
    }

    pub fn max(&self) -> f64 {
        self.entropy.iter().cloned().fold(0.0, f64::max)
    }
}

/// Ensemble settings: number of stochastic passes and the pixel-noise level
/// injected into each copy of the input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyConfig {
    pub num_passes: usize,
    pub noise_sigma: f64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self {
            num_passes: 8,
            noise_sigma: 0.05,
        }
    }
}

impl UncertaintyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_passes < 1 {
            return Err(Error::config("num_passes must be >= 1"));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::config("noise_sigma must be finite and >= 0"));
        }
        Ok(())
    }
}

/// How the entropy upper bound feeding the threshold is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZSupMode {
    /// Maximum entropy observed in the current batch of maps.
    BatchMax,
    /// The closed-form bound `ln C`.
    Theoretical,
}

/// Parameters of the time-dependent confidence threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    pub thresh_alpha: f64,
    pub thresh_beta: f64,
    pub t_max: u64,
    pub z_sup_mode: ZSupMode,
}

impl Default for ThresholdSchedule {
    fn default() -> Self {
        Self {
            thresh_alpha: 0.75,
            thresh_beta: -5.0,
            t_max: 1,
            z_sup_mode: ZSupMode::BatchMax,
        }
    }
}

impl ThresholdSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.thresh_alpha && self.thresh_alpha < 1.0) {
            return Err(Error::config("thresh_alpha must lie in (0, 1)"));
        }
        if !(self.thresh_beta < 0.0) {
            return Err(Error::config("thresh_beta must be negative"));
        }
        if self.t_max < 1 {
            return Err(Error::config("t_max must be >= 1"));
        }
        Ok(())
    }
}

/// Element-wise arithmetic mean of probability maps. The mean of simplex
/// points stays on the simplex, so the result is a valid map.
pub fn average_prediction(preds: &[ProbMap]) -> Result<ProbMap> {
    let first = preds.first().ok_or(Error::EmptyInput("prediction ensemble"))?;
    let mut sum = first.probs().clone();
    for p in &preds[1..] {
        check_same_shape("ensemble member", first.probs().shape(), p.probs().shape())?;
        sum += p.probs();
    }
    sum /= preds.len() as f64;
    Ok(ProbMap::from_normalized(sum))
}

/// Pixel-wise predictive entropy `-sum_c p_c ln p_c` in nats, with the
/// convention `0 ln 0 = 0` (probabilities floored at 1e-12 inside the log).
pub fn predictive_entropy(p_hat: &ProbMap) -> EntropyMap {
    let (h, w, _) = p_hat.probs().dim();
    let mut entropy = Array2::zeros((h, w));
    for (lane, out) in p_hat.probs().rows().into_iter().zip(entropy.iter_mut()) {
        let mut mu = 0.0;
        for &p in lane.iter() {
            if p > 0.0 {
                mu -= p * p.max(1e-12).ln();
            }
        }
        *out = mu.max(0.0);
    }
    EntropyMap { entropy }
}

/// Upper bound of the entropy values: the observed map maximum, or `ln C`.
pub fn z_sup(entropy: &EntropyMap, mode: ZSupMode, num_classes: usize) -> Result<f64> {
    if entropy.entropy.is_empty() {
        return Err(Error::EmptyInput("entropy map"));
    }
    match mode {
        ZSupMode::BatchMax => Ok(entropy.max()),
        ZSupMode::Theoretical => Ok((num_classes as f64).ln()),
    }
}

/// Upper bound across a batch of entropy maps.
pub fn z_sup_batch(maps: &[EntropyMap], mode: ZSupMode, num_classes: usize) -> Result<f64> {
    if maps.is_empty() {
        return Err(Error::EmptyInput("entropy batch"));
    }
    match mode {
        ZSupMode::Theoretical => Ok((num_classes as f64).ln()),
        ZSupMode::BatchMax => Ok(maps.iter().map(EntropyMap::max).fold(0.0, f64::max)),
    }
}

/// The dynamic confidence threshold
/// `R = alpha + (1 - alpha) * exp(beta * (1 - t/t_max)^2) * z_sup`,
/// increasing in `t` so that more pixels pass as training progresses.
pub fn dynamic_threshold(t: u64, sched: &ThresholdSchedule, z_sup: f64) -> Result<f64> {
    sched.validate()?;
    if t > sched.t_max {
        return Err(Error::invalid(format!(
            "step {t} exceeds t_max {}",
            sched.t_max
        )));
    }
    let alpha = sched.thresh_alpha;
    let progress = 1.0 - t as f64 / sched.t_max as f64;
    Ok(alpha + (1.0 - alpha) * (sched.thresh_beta * progress * progress).exp() * z_sup)
}

/// Mask of confident pixels: 1 where entropy is strictly below `r`.
pub fn uncertainty_mask(entropy: &EntropyMap, r: f64) -> BinaryMask {
    BinaryMask::from_bits(entropy.entropy.mapv(|mu| u8::from(mu < r)))
}

/// Runs `cfg.num_passes` stochastic forward passes of `model` on noisy
/// copies of `image` and returns the ensemble mean plus each member.
///
/// Each member draws its noise from an independent stream seeded up front,
/// so members are reproducible and order-independent; passes run in
/// parallel.
pub fn stochastic_ensemble<F>(
    model: F,
    image: &ImageTensor,
    cfg: &UncertaintyConfig,
    rng: &mut impl Rng,
) -> Result<(ProbMap, Vec<ProbMap>)>
where
    F: Fn(&ImageTensor) -> Result<LogitMap> + Sync,
{
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.num_passes).map(|_| rng.gen()).collect();
    let members: Vec<ProbMap> = seeds
        .into_par_iter()
        .map(|seed| {
            let mut member_rng = ChaCha8Rng::seed_from_u64(seed);
            let noisy = noisy_copy(image, cfg.noise_sigma, &mut member_rng);
            Ok(normalize(&model(&noisy)?))
        })
        .collect::<Result<_>>()?;
    let mean = average_prediction(&members)?;
    Ok((mean, members))
}

/// Adds i.i.d. Gaussian pixel noise and clips back to `[0, 1]`.
pub fn noisy_copy(image: &ImageTensor, sigma: f64, rng: &mut impl Rng) -> ImageTensor {
    if sigma == 0.0 {
        return image.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated non-negative");
    let mut pixels = image.pixels().clone();
    for v in pixels.iter_mut() {
        *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
    }
    ImageTensor::from_clipped(pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::{array, Array3};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn random_probmap(seed: u64, h: usize, w: usize, c: usize) -> ProbMap {
        let mut rng = stream(seed, "uncertainty-test", &[]);
        let mut raw = Array3::from_shape_fn((h, w, c), |_| rng.gen_range(0.01..1.0));
        for mut lane in raw.rows_mut() {
            let s: f64 = lane.iter().sum();
            lane.mapv_inplace(|v| v / s);
        }
        ProbMap::new(raw).unwrap()
    }

    #[test]
    fn average_of_one_is_identity() {
        let p = random_probmap(1, 4, 4, 3);
        let mean = average_prediction(std::slice::from_ref(&p)).unwrap();
        assert_eq!(mean.probs(), p.probs());
    }

    #[test]
    fn average_two_single_pixel_maps() {
        let a = ProbMap::new(array![[[0.2, 0.8]]]).unwrap();
        let b = ProbMap::new(array![[[0.6, 0.4]]]).unwrap();
        let mean = average_prediction(&[a, b]).unwrap();
        assert!((mean.probs()[(0, 0, 0)] - 0.4).abs() < 1e-15);
        assert!((mean.probs()[(0, 0, 1)] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn average_matches_accumulation_oracle() {
        let members: Vec<ProbMap> = (0..8).map(|s| random_probmap(s, 6, 5, 4)).collect();
        let mean = average_prediction(&members).unwrap();
        for i in 0..6 {
            for j in 0..5 {
                for k in 0..4 {
                    let oracle: f64 =
                        members.iter().map(|m| m.probs()[(i, j, k)]).sum::<f64>() / 8.0;
                    assert!((mean.probs()[(i, j, k)] - oracle).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn average_rejects_empty_and_mismatched() {
        assert!(average_prediction(&[]).is_err());
        let a = random_probmap(1, 4, 4, 3);
        let b = random_probmap(2, 4, 5, 3);
        assert!(average_prediction(&[a, b]).is_err());
    }

    #[test]
    fn entropy_of_one_hot_is_zero() {
        let p = ProbMap::new(array![[[1.0, 0.0, 0.0]]]).unwrap();
        assert_eq!(predictive_entropy(&p).values()[(0, 0)], 0.0);
    }

    #[test]
    fn entropy_of_uniform_is_ln_c() {
        let c = 19;
        let p = ProbMap::new(Array3::from_elem((1, 1, c), 1.0 / c as f64)).unwrap();
        let mu = predictive_entropy(&p).values()[(0, 0)];
        assert!((mu - (c as f64).ln()).abs() < 1e-9, "mu = {mu}");
    }

    #[test]
    fn entropy_of_binary_symmetric_is_ln_2() {
        let p = ProbMap::new(array![[[0.5, 0.5]]]).unwrap();
        let mu = predictive_entropy(&p).values()[(0, 0)];
        assert!((mu - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn z_sup_modes() {
        let zero = EntropyMap::new(Array2::zeros((3, 3))).unwrap();
        assert_eq!(z_sup(&zero, ZSupMode::BatchMax, 19).unwrap(), 0.0);
        assert!((z_sup(&zero, ZSupMode::Theoretical, 19).unwrap() - 19f64.ln()).abs() < 1e-15);

        let mut rng = stream(3, "uncertainty-test", &[1]);
        let vals = Array2::from_shape_fn((7, 9), |_| rng.gen_range(0.0..2.0));
        let oracle = vals.iter().cloned().fold(f64::MIN, f64::max);
        let map = EntropyMap::new(vals).unwrap();
        assert_eq!(z_sup(&map, ZSupMode::BatchMax, 19).unwrap(), oracle);
    }

    #[test]
    fn threshold_endpoint_and_frozen_value() {
        let sched = ThresholdSchedule {
            thresh_alpha: 0.75,
            thresh_beta: -5.0,
            t_max: 1000,
            z_sup_mode: ZSupMode::Theoretical,
        };
        let z = 19f64.ln();
        // endpoint: exponent vanishes
        let r_end = dynamic_threshold(1000, &sched, z).unwrap();
        assert!((r_end - (0.75 + 0.25 * z)).abs() < 1e-12);
        // high-precision evaluation at t = 0
        let r0 = dynamic_threshold(0, &sched, z).unwrap();
        assert!((r0 - 0.75495986844591619842).abs() < 1e-12, "r0 = {r0}");
    }

    #[test]
    fn threshold_accepts_swept_parameters() {
        let sched = ThresholdSchedule {
            thresh_alpha: 0.725,
            thresh_beta: -4.8,
            t_max: 100,
            z_sup_mode: ZSupMode::BatchMax,
        };
        for t in [0, 1, 37, 99, 100] {
            let r = dynamic_threshold(t, &sched, 1.7).unwrap();
            assert!(r.is_finite() && r > 0.0);
        }
    }

    #[test]
    fn threshold_rejects_step_past_horizon() {
        let sched = ThresholdSchedule::default();
        assert!(dynamic_threshold(2, &sched, 1.0).is_err());
    }

    #[test]
    fn threshold_is_increasing_in_t() {
        let sched = ThresholdSchedule {
            thresh_alpha: 0.75,
            thresh_beta: -5.0,
            t_max: 50,
            z_sup_mode: ZSupMode::BatchMax,
        };
        let mut prev = f64::MIN;
        for t in 0..=50 {
            let r = dynamic_threshold(t, &sched, 2.0).unwrap();
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn mask_extremes_and_oracle() {
        let zero = EntropyMap::new(Array2::zeros((4, 4))).unwrap();
        assert_eq!(uncertainty_mask(&zero, 0.1).count_ones(), 16);

        let c = 5.0f64;
        let uniform = EntropyMap::new(Array2::from_elem((4, 4), c.ln())).unwrap();
        assert_eq!(uncertainty_mask(&uniform, c.ln() * 0.9).count_ones(), 0);

        let mut rng = stream(4, "uncertainty-test", &[2]);
        let vals = Array2::from_shape_fn((8, 8), |_| rng.gen_range(0.0..1.5));
        let r = 0.8;
        let map = EntropyMap::new(vals.clone()).unwrap();
        let mask = uncertainty_mask(&map, r);
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(mask.mask()[(i, j)] == 1, vals[(i, j)] < r);
            }
        }
    }

    #[test]
    fn strict_inequality_excludes_boundary() {
        let map = EntropyMap::new(array![[0.5]]).unwrap();
        assert_eq!(uncertainty_mask(&map, 0.5).count_ones(), 0);
    }

    fn toy_model(image: &ImageTensor) -> Result<LogitMap> {
        // logits derived from the red channel so noise shows up in outputs
        let (h, w, _) = image.pixels().dim();
        let mut scores = Array3::zeros((h, w, 3));
        for i in 0..h {
            for j in 0..w {
                let r = image.pixels()[(i, j, 0)];
                scores[(i, j, 0)] = r;
                scores[(i, j, 1)] = 1.0 - r;
                scores[(i, j, 2)] = 0.5 * r;
            }
        }
        LogitMap::new(scores)
    }

    #[test]
    fn ensemble_degenerate_noise_gives_identical_members() {
        let image = ImageTensor::filled(4, 4, 0.5).unwrap();
        let cfg = UncertaintyConfig {
            num_passes: 4,
            noise_sigma: 0.0,
        };
        let mut rng = stream(5, "uncertainty-test", &[3]);
        let (mean, members) = stochastic_ensemble(toy_model, &image, &cfg, &mut rng).unwrap();
        for m in &members {
            assert_eq!(m.probs(), members[0].probs());
        }
        for (a, b) in mean.probs().iter().zip(members[0].probs().iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ensemble_performs_exactly_n_passes() {
        let calls = AtomicUsize::new(0);
        let image = ImageTensor::filled(4, 4, 0.5).unwrap();
        let cfg = UncertaintyConfig::default();
        let mut rng = stream(5, "uncertainty-test", &[4]);
        let counting = |img: &ImageTensor| {
            calls.fetch_add(1, Ordering::SeqCst);
            toy_model(img)
        };
        let (_, members) = stochastic_ensemble(counting, &image, &cfg, &mut rng).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 8);
        assert_eq!(members.len(), 8);
    }

    #[test]
    fn ensemble_is_deterministic_for_fixed_seed() {
        let image = ImageTensor::filled(6, 6, 0.4).unwrap();
        let cfg = UncertaintyConfig {
            num_passes: 5,
            noise_sigma: 0.1,
        };
        let run = || {
            let mut rng = stream(9, "uncertainty-test", &[5]);
            stochastic_ensemble(toy_model, &image, &cfg, &mut rng).unwrap()
        };
        let (mean_a, members_a) = run();
        let (mean_b, members_b) = run();
        assert_eq!(mean_a.probs(), mean_b.probs());
        for (a, b) in members_a.iter().zip(members_b.iter()) {
            assert_eq!(a.probs(), b.probs());
        }
    }

    #[test]
    fn jensen_inequality_holds_per_pixel() {
        let members: Vec<ProbMap> = (10..16).map(|s| random_probmap(s, 5, 5, 4)).collect();
        let mean = average_prediction(&members).unwrap();
        let mean_entropy = predictive_entropy(&mean);
        let member_entropies: Vec<EntropyMap> =
            members.iter().map(predictive_entropy).collect();
        for i in 0..5 {
            for j in 0..5 {
                let avg: f64 = member_entropies
                    .iter()
                    .map(|e| e.values()[(i, j)])
                    .sum::<f64>()
                    / members.len() as f64;
                assert!(mean_entropy.values()[(i, j)] + 1e-7 >= avg);
            }
        }
    }
}
