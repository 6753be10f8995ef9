//! Train the auxiliary image classifier on synthetic shape/hue images and
//! save a frozen checkpoint.

use eeg2image::classifier::{train_image_classifier, ClassifierTrainConfig, ImageClassifierConfig};
use eeg2image::dataio::synth_image_corpus;
use std::path::Path;
use std::time::Instant;

fn main() -> eeg2image::Result<()> {
    let images = synth_image_corpus(50, 13)?;
    let train_cfg = ClassifierTrainConfig {
        epochs: 6,
        early_stop_accuracy: Some(0.95),
        seed: 13,
        ..ClassifierTrainConfig::default()
    };
    let start = Instant::now();
    let (model, stats) =
        train_image_classifier(&images, ImageClassifierConfig::default(), &train_cfg)?;
    for s in &stats {
        println!(
            "epoch {:2}  train loss {:.4}  train acc {:.4}  test acc {:.4}",
            s.epoch, s.train_loss, s.train_accuracy, s.test_accuracy
        );
    }
    println!("trained in {:.1?}", start.elapsed());
    let dir = Path::new("target/example-classifier");
    model.save(dir, true)?;
    println!("frozen checkpoint saved to {}", dir.display());
    Ok(())
}
