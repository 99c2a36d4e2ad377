//! One training iteration under the microscope: builds a student/teacher
//! pair, runs a single `train_step`, and prints every quantity the step
//! produces (losses, ramp weight, gate fraction, parameter movement).

use ndarray::{Array2, Array3};
use rand::Rng;
use segadapt::adapt::{
    train_step, AdamConfig, AugmentationConfig, EmaConfig, SegModelSpec, TrainState,
    TrainerConfig,
};
use segadapt::classdrop::ClassDropConfig;
use segadapt::losses::ConsistencyNorm;
use segadapt::rng;
use segadapt::segcore::{ImageTensor, LabelMap, DEFAULT_IGNORE};
use segadapt::uncertainty::{ThresholdSchedule, UncertaintyConfig, ZSupMode};

fn main() -> segadapt::Result<()> {
    let t_max = 100;
    let cfg = TrainerConfig {
        model: SegModelSpec {
            num_classes: 5,
            widths: [8, 12, 16],
            input_size: (32, 32),
            init_seed: 0,
        },
        optimizer: AdamConfig::default(),
        ema: EmaConfig { decay: 0.99 },
        augment: AugmentationConfig::default(),
        augment_source: false,
        uncertainty: UncertaintyConfig {
            num_passes: 8,
            noise_sigma: 0.05,
        },
        threshold: ThresholdSchedule {
            thresh_alpha: 0.75,
            thresh_beta: -5.0,
            t_max,
            z_sup_mode: ZSupMode::BatchMax,
        },
        lambda0: 0.1,
        classdrop: ClassDropConfig::default(),
        use_uncertainty_mask: true,
        use_classdrop_mask: true,
        consistency_norm: ConsistencyNorm::AllPixels,
    };

    let mut data_rng = rng::stream(5, "example-step", &[]);
    let source: Vec<(ImageTensor, LabelMap)> = (0..4)
        .map(|_| {
            let img = ImageTensor::new(Array3::from_shape_fn((32, 32, 3), |_| {
                data_rng.gen_range(0.0..1.0)
            }))
            .unwrap();
            let labels = LabelMap::new(
                Array2::from_shape_fn((32, 32), |_| data_rng.gen_range(0..5u8)),
                5,
                DEFAULT_IGNORE,
            )
            .unwrap();
            (img, labels)
        })
        .collect();
    let targets: Vec<ImageTensor> = (0..4)
        .map(|_| {
            ImageTensor::new(Array3::from_shape_fn((32, 32, 3), |_| {
                data_rng.gen_range(0.0..1.0)
            }))
            .unwrap()
        })
        .collect();

    let params = cfg.model.init_parameters()?;
    println!("model: {} parameters", params.num_scalars());
    let mut state = TrainState::new(params.clone(), t_max, 9)?;

    for _ in 0..3 {
        let before = state.student.clone();
        let report = train_step(&mut state, &source, &targets, &cfg)?;
        let moved = state.student.l2_distance(&before)?;
        let teacher_gap = state.teacher.l2_distance(&state.student)?;
        println!(
            "step {:>2}: seg {:.4}  con {:.6}  lambda {:.5}  gate {:.2}  |dstudent| {:.4}  |teacher-student| {:.4}",
            state.step,
            report.seg_loss,
            report.con_loss,
            report.lambda_con,
            report.masked_fraction,
            moved,
            teacher_gap
        );
    }
    println!("teacher lags the student through the EMA, as it should");
    Ok(())
}
