//! Short conditional-GAN training run on top of freshly trained encoder
//! and classifier stages, with loss log and sample grids written to disk.
//!
//! Uses reduced widths and a small corpus so the whole run stays in the
//! minutes range on one core; raise the sizes for better images.

use eeg2image::cformer::{train_encoder, CFormerConfig, EncoderTrainConfig};
use eeg2image::cgan::{train_gan, GanConfig, GanTrainConfig};
use eeg2image::classifier::{train_image_classifier, ClassifierTrainConfig, ImageClassifierConfig};
use eeg2image::dataio::{synth_eeg_corpus, synth_image_corpus};
use std::path::Path;
use std::time::Instant;

fn main() -> eeg2image::Result<()> {
    let windows = synth_eeg_corpus(50, 17)?;
    let images = synth_image_corpus(20, 17)?;

    println!("training encoder...");
    let (encoder, _) = train_encoder(
        &windows,
        CFormerConfig::default(),
        &EncoderTrainConfig { epochs: 5, lr: 2e-3, seed: 17, ..EncoderTrainConfig::default() },
    )?;
    println!("training classifier...");
    let (classifier, _) = train_image_classifier(
        &images,
        ImageClassifierConfig::default(),
        &ClassifierTrainConfig { epochs: 3, seed: 17, ..ClassifierTrainConfig::default() },
    )?;

    let cfg = GanConfig {
        g_channels: vec![64, 32, 16, 8],
        d_channels: vec![8, 16, 32, 64],
        ..GanConfig::default()
    };
    let tcfg = GanTrainConfig {
        iterations: 40,
        batch: 10,
        g_lr: 2e-4,
        d_lr: 2e-4,
        seed: 17,
        sample_every: Some(20),
        ..GanTrainConfig::default()
    };
    let out = Path::new("target/example-gan");
    println!("training GAN...");
    let start = Instant::now();
    let (gan, records) = train_gan(&windows, &images, &encoder, &classifier, cfg, &tcfg, Some(out))?;
    for r in records.iter().step_by(10) {
        println!(
            "iter {:3}  L1_D {:.4}  L1_G {:.4}  L2 {:.4}  L3 {:.4}  total {:.4}",
            r.iter, r.l1_d, r.l1_g, r.l2, r.l3, r.total
        );
    }
    println!("trained in {:.1?}", start.elapsed());
    gan.save(&out.join("final"))?;
    println!("artifacts under {}", out.display());
    Ok(())
}
