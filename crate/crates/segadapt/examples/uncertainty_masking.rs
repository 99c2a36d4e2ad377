//! The uncertainty path in isolation: run a stochastic ensemble of teacher
//! passes on a noisy image, average the predictions, compute pixel-wise
//! predictive entropy, and threshold it with the time-dependent schedule.
//! Exports the entropy map and masks as PNGs.

use segadapt::adapt::{Model, SegModelSpec};
use segadapt::rng;
use segadapt::segcore::io::{save_entropy_png, save_mask_png};
use segadapt::segcore::ImageTensor;
use segadapt::uncertainty::{
    dynamic_threshold, predictive_entropy, stochastic_ensemble, uncertainty_mask, z_sup,
    ThresholdSchedule, UncertaintyConfig, ZSupMode,
};
use ndarray::Array3;
use rand::Rng;

fn main() -> segadapt::Result<()> {
    let out = std::env::temp_dir().join("segadapt-examples/uncertainty");
    let spec = SegModelSpec {
        num_classes: 5,
        widths: [8, 12, 16],
        input_size: (32, 32),
        init_seed: 3,
    };
    let model = Model::new(&spec, &spec.init_parameters()?)?;

    let mut img_rng = rng::stream(1, "example-image", &[]);
    let image = ImageTensor::new(Array3::from_shape_fn((32, 32, 3), |_| {
        img_rng.gen_range(0.0..1.0)
    }))?;

    let cfg = UncertaintyConfig {
        num_passes: 8,
        noise_sigma: 0.05,
    };
    // an untrained network predicts near-uniformly everywhere; sharpening
    // its logits stands in for a partially trained teacher so the entropy
    // map has structure worth masking
    let sharpened = |im: &ImageTensor| {
        model
            .forward(im)
            .and_then(|l| segadapt::segcore::LogitMap::new(l.scores() * 30.0))
    };
    let mut ens_rng = rng::stream(1, "example-ensemble", &[]);
    let (mean, members) = stochastic_ensemble(sharpened, &image, &cfg, &mut ens_rng)?;
    println!("{} stochastic passes averaged", members.len());

    let entropy = predictive_entropy(&mean);
    let z = z_sup(&entropy, ZSupMode::BatchMax, spec.num_classes)?;
    println!(
        "entropy range [0, {z:.4}] nats (ln C = {:.4})",
        (spec.num_classes as f64).ln()
    );

    let sched = ThresholdSchedule {
        thresh_alpha: 0.75,
        thresh_beta: -5.0,
        t_max: 1000,
        z_sup_mode: ZSupMode::BatchMax,
    };
    save_entropy_png(&entropy, out.join("entropy.png"))?;
    for t in [0u64, 500, 1000] {
        let r = dynamic_threshold(t, &sched, z)?;
        let mask = uncertainty_mask(&entropy, r);
        println!(
            "t = {t:>4}: threshold {r:.4}, {:>5.1}% of pixels confident",
            100.0 * mask.fraction_ones()
        );
        save_mask_png(&mask, out.join(format!("mask_t{t}.png")))?;
    }
    println!("entropy map and masks written under {}", out.display());
    Ok(())
}
