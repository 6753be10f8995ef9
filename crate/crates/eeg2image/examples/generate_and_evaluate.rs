//! Generate images from EEG windows with a (quickly trained) pipeline and
//! score them with the inception and diversity metrics.

use eeg2image::cformer::{train_encoder, CFormerConfig, EncoderTrainConfig};
use eeg2image::cgan::{train_gan, write_ppm_grid, GanConfig, GanTrainConfig};
use eeg2image::classifier::{train_image_classifier, ClassifierTrainConfig, ImageClassifierConfig};
use eeg2image::dataio::{synth_eeg_corpus, synth_image_corpus, CLASS_NAMES};
use eeg2image::metrics::evaluate_generator;
use std::path::Path;

fn main() -> eeg2image::Result<()> {
    let windows = synth_eeg_corpus(40, 23)?;
    let images = synth_image_corpus(20, 23)?;

    println!("training pipeline stages (small settings)...");
    let (encoder, _) = train_encoder(
        &windows,
        CFormerConfig::default(),
        &EncoderTrainConfig { epochs: 4, lr: 2e-3, seed: 23, ..EncoderTrainConfig::default() },
    )?;
    let (classifier, _) = train_image_classifier(
        &images,
        ImageClassifierConfig::default(),
        &ClassifierTrainConfig { epochs: 2, seed: 23, ..ClassifierTrainConfig::default() },
    )?;
    let (gan, _) = train_gan(
        &windows,
        &images,
        &encoder,
        &classifier,
        GanConfig {
            g_channels: vec![32, 16, 8, 8],
            d_channels: vec![8, 16, 32, 64],
            ..GanConfig::default()
        },
        &GanTrainConfig {
            iterations: 30,
            batch: 10,
            g_lr: 2e-4,
            d_lr: 2e-4,
            seed: 23,
            ..GanTrainConfig::default()
        },
        None,
    )?;

    // one generated image per class, tiled into a grid
    let out = Path::new("target/example-generated");
    std::fs::create_dir_all(out)?;
    let mut tiles = Vec::new();
    for class in 0..10 {
        let w = windows.iter().find(|w| w.label == class).expect("class present");
        let embedding = encoder.embed(w, false)?;
        tiles.push(gan.generator.generate(&embedding)?);
        println!("generated image for {}", CLASS_NAMES[class]);
    }
    write_ppm_grid(&out.join("grid.ppm"), &tiles, 5)?;
    println!("grid written to {}", out.join("grid.ppm").display());

    let test = synth_eeg_corpus(5, 29)?;
    let report = evaluate_generator(&gan.generator, &encoder, &classifier, &windows, &test, false)?;
    println!("{}", serde_json::to_string_pretty(&report.to_json()).expect("report"));
    Ok(())
}
