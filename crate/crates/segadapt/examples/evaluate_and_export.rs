//! Evaluation and reporting: scores a parameter snapshot on a labeled
//! split, prints per-class IoU, and writes the confusion matrix and IoU
//! report as CSV.

use segadapt::adapt::{Model, SegModelSpec};
use segadapt::segcore::io::{confusion_to_csv, iou_report_to_csv, write_text};
use segadapt::segcore::{argmax_labels, confusion, normalize, ConfusionMatrix};
use segadapt::workbench::scene::DomainStyle;
use segadapt::workbench::{evaluate, generate_dataset, DomainPairDataset, SceneSpec, SplitCounts};

fn main() -> segadapt::Result<()> {
    let root = std::env::temp_dir().join("segadapt-examples/evaluate");
    let data_dir = root.join("data");
    let spec = SceneSpec {
        height: 32,
        width: 32,
        num_shape_classes: 4,
        shapes_per_image: (3, 5),
        seed: 4,
    };
    generate_dataset(
        &spec,
        &DomainStyle::neutral(),
        &DomainStyle::shifted(),
        &SplitCounts {
            source: 8,
            target_train: 8,
            target_eval: 8,
        },
        &data_dir,
    )?;
    let dataset = DomainPairDataset::load(&data_dir)?;

    let model_spec = SegModelSpec {
        num_classes: 5,
        widths: [8, 12, 16],
        input_size: (32, 32),
        init_seed: 11,
    };
    let params = model_spec.init_parameters()?;

    // an untrained snapshot scores low; the call shape is what matters here
    let report = evaluate(&params, &model_spec, dataset.target_eval())?;
    println!("untrained snapshot on target-eval: mIoU {:.4}", report.mean);
    for (k, iou) in report.per_class.iter().enumerate() {
        match iou {
            Some(v) => println!("  class {k}: IoU {v:.4}"),
            None => println!("  class {k}: absent from both prediction and truth"),
        }
    }

    // the same confusion matrix the evaluation aggregates, exported as CSV
    let model = Model::new(&model_spec, &params)?;
    let mut total = ConfusionMatrix::zeros(model_spec.num_classes);
    for (image, labels) in dataset.target_eval() {
        let pred = argmax_labels(&normalize(&model.forward(image)?));
        total.merge(&confusion(&pred, labels)?)?;
    }
    write_text(root.join("confusion.csv"), &confusion_to_csv(&total))?;
    write_text(root.join("iou.csv"), &iou_report_to_csv(&report))?;
    println!("confusion.csv and iou.csv written under {}", root.display());
    Ok(())
}
