//! Train the EEG encoder on a synthetic corpus and save its checkpoint.

use eeg2image::cformer::{train_encoder, CFormerConfig, EncoderTrainConfig};
use eeg2image::dataio::synth_eeg_corpus;
use std::path::Path;
use std::time::Instant;

fn main() -> eeg2image::Result<()> {
    let windows = synth_eeg_corpus(100, 11)?;
    let train_cfg = EncoderTrainConfig {
        epochs: 20,
        lr: 2e-3,
        early_stop_accuracy: Some(0.95),
        seed: 11,
        ..EncoderTrainConfig::default()
    };
    let start = Instant::now();
    let (model, stats) = train_encoder(&windows, CFormerConfig::default(), &train_cfg)?;
    for s in &stats {
        println!(
            "epoch {:2}  train loss {:.4}  train acc {:.4}  test acc {:.4}",
            s.epoch, s.train_loss, s.train_accuracy, s.test_accuracy
        );
    }
    println!("trained in {:.1?}", start.elapsed());
    let dir = Path::new("target/example-encoder");
    model.save(dir)?;
    println!("checkpoint saved to {}", dir.display());
    Ok(())
}
