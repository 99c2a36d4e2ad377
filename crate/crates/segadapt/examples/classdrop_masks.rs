//! Class-wise perturbation: derive pseudo-labels from a teacher prediction,
//! draw ClassDrop masks that keep a random subset of the present classes,
//! apply one to an image, and combine it with an uncertainty-style gate.

use ndarray::Array2;
use segadapt::classdrop::{apply_mask, combine_masks, generate_classdrop_mask, ClassDropConfig};
use segadapt::rng;
use segadapt::segcore::io::{save_image_png, save_mask_png};
use segadapt::segcore::BinaryMask;
use segadapt::workbench::scene::{render_scene, sample_scene, DomainStyle, SceneSpec};

fn main() -> segadapt::Result<()> {
    let out = std::env::temp_dir().join("segadapt-examples/classdrop");
    let spec = SceneSpec {
        height: 48,
        width: 48,
        num_shape_classes: 4,
        shapes_per_image: (4, 6),
        seed: 2,
    };
    let style = DomainStyle::neutral();
    let mut scene_rng = rng::stream(2, "example-scene", &[]);
    let scene = sample_scene(&spec, &style.background_palette, &mut scene_rng)?;
    let (image, labels) = render_scene(&spec, &scene, &style, &mut scene_rng)?;
    save_image_png(&image, out.join("scene.png"))?;
    println!("scene classes present: {:?}", labels.present_classes());

    // here the rendered labels stand in for teacher pseudo-labels
    let cfg = ClassDropConfig {
        min_ratio: 0.4,
        max_ratio: 0.8,
        fill_value: 0.0,
    };
    for draw in 0..3u64 {
        let mut rng = rng::stream(2, "example-classdrop", &[draw]);
        let outcome = generate_classdrop_mask(&labels, &cfg, &mut rng)?;
        println!(
            "draw {draw}: ratio {:.2}, kept classes {:?}, {:.1}% of pixels survive",
            outcome.ratio_drawn,
            outcome.kept_classes,
            100.0 * outcome.mask.fraction_ones()
        );
        save_mask_png(&outcome.mask, out.join(format!("classdrop_{draw}.png")))?;
        if draw == 0 {
            let dropped = apply_mask(&image, &outcome.mask, cfg.fill_value)?;
            save_image_png(&dropped, out.join("scene_dropped.png"))?;
        }
    }

    // composing with a second gate only ever removes pixels
    let mut rng = rng::stream(2, "example-classdrop", &[0]);
    let outcome = generate_classdrop_mask(&labels, &cfg, &mut rng)?;
    let stripes = BinaryMask::new(Array2::from_shape_fn((48, 48), |(i, _)| {
        u8::from(i % 4 != 0)
    }))?;
    let gate = combine_masks(&outcome.mask, &stripes)?;
    println!(
        "classdrop {:.1}% AND stripe gate {:.1}% -> {:.1}%",
        100.0 * outcome.mask.fraction_ones(),
        100.0 * stripes.fraction_ones(),
        100.0 * gate.fraction_ones()
    );

    println!("masks written under {}", out.display());
    Ok(())
}
