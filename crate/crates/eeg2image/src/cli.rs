//! Command-line front-end. Every subcommand is a thin wrapper over library
//! calls; exit codes are 0 (ok), 2 (usage/config), 3 (I/O), 4 (numerical
//! divergence).

use crate::cformer::{train_encoder, CFormer};
use crate::cgan::{train_gan, write_ppm_grid, Gan};
use crate::classifier::{confusion_matrix, train_image_classifier, ImageClassifier};
use crate::config::RunConfig;
use crate::dataio::{
    load_eeg_dataset, load_image_dataset, save_eeg_dataset, save_image_dataset,
    synth_eeg_corpus, synth_image_corpus, EEGWindow, ImageSample, CLASS_NAMES,
};
use crate::error::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

fn config_help() -> String {
    format!(
        "Config keys and defaults (JSON accepted by --config):\n{}",
        serde_json::to_string_pretty(&RunConfig::default()).expect("default config serializes")
    )
}

#[derive(Parser)]
#[command(
    name = "eeg2image",
    version,
    about = "EEG-conditioned image synthesis pipeline",
    after_long_help = config_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Eeg,
    Images,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset to a directory.
    SynthData {
        #[arg(long, value_enum)]
        kind: DataKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the EEG encoder and save its checkpoint under out_dir/encoder.
    TrainEncoder {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the image classifier and save a frozen checkpoint under
    /// out_dir/classifier.
    TrainClassifier {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the conditional GAN against the frozen encoder and classifier
    /// checkpoints in out_dir; saves under out_dir/gan.
    TrainGan {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate one image per EEG window as PPM files.
    Generate {
        #[arg(long)]
        gan: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        eeg: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a combined grid.ppm.
        #[arg(long)]
        grid: bool,
    },
    /// Score a trained generator and write a metrics report JSON.
    Evaluate {
        #[arg(long)]
        gan: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        eeg_train: PathBuf,
        #[arg(long)]
        eeg_test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Checkpoint(_) | Error::Data(_) => 3,
        Error::Divergence(_) | Error::NonFinite(_) => 4,
        _ => 2,
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_eeg_from(cfg: &RunConfig) -> Result<Vec<EEGWindow>> {
    match &cfg.data.eeg_dir {
        Some(dir) => Ok(load_eeg_dataset(dir)?.0),
        None => synth_eeg_corpus(cfg.data.eeg_per_class, cfg.seed),
    }
}

fn load_images_from(cfg: &RunConfig) -> Result<Vec<ImageSample>> {
    match &cfg.data.images_dir {
        Some(dir) => Ok(load_image_dataset(dir)?.0),
        None => synth_image_corpus(cfg.data.images_per_class, cfg.seed),
    }
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for row in rows {
        writeln!(f, "{}", serde_json::to_string(row)?)?;
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthData { kind, out, per_class, seed } => {
            if per_class == 0 {
                return Err(Error::Config("--per-class must be positive".into()));
            }
            match kind {
                DataKind::Eeg => {
                    let windows = synth_eeg_corpus(per_class, seed)?;
                    save_eeg_dataset(&out, &windows)?;
                    println!("wrote {} EEG windows to {}", windows.len(), out.display());
                }
                DataKind::Images => {
                    let images = synth_image_corpus(per_class, seed)?;
                    save_image_dataset(&out, &images)?;
                    println!("wrote {} images to {}", images.len(), out.display());
                }
            }
            Ok(())
        }
        Command::TrainEncoder { config } => {
            let cfg = RunConfig::load(&config)?;
            let windows = load_eeg_from(&cfg)?;
            let (model, stats) =
                train_encoder(&windows, cfg.encoder.model.clone(), &cfg.encoder.train)?;
            fs::create_dir_all(&cfg.out_dir)?;
            model.save(&cfg.out_dir.join("encoder"))?;
            write_jsonl(&cfg.out_dir.join("encoder-train.jsonl"), &stats)?;
            let last = stats.last().expect("at least one epoch");
            println!(
                "encoder: {} epochs, final test accuracy {:.4}",
                stats.len(),
                last.test_accuracy
            );
            Ok(())
        }
        Command::TrainClassifier { config } => {
            let cfg = RunConfig::load(&config)?;
            let images = load_images_from(&cfg)?;
            let (model, stats) = train_image_classifier(
                &images,
                cfg.classifier.model.clone(),
                &cfg.classifier.train,
            )?;
            fs::create_dir_all(&cfg.out_dir)?;
            model.save(&cfg.out_dir.join("classifier"), true)?;
            write_jsonl(&cfg.out_dir.join("classifier-train.jsonl"), &stats)?;
            let idx: Vec<usize> = (0..images.len()).collect();
            let cm = confusion_matrix(&model, &images, &idx)?;
            fs::write(
                cfg.out_dir.join("classifier-confusion.json"),
                serde_json::to_vec_pretty(&serde_json::json!({
                    "classes": CLASS_NAMES,
                    "rows_true_cols_predicted": cm,
                }))?,
            )?;
            let last = stats.last().expect("at least one epoch");
            println!(
                "classifier: {} epochs, final test accuracy {:.4}",
                stats.len(),
                last.test_accuracy
            );
            Ok(())
        }
        Command::TrainGan { config } => {
            let cfg = RunConfig::load(&config)?;
            let encoder = CFormer::load(&cfg.out_dir.join("encoder"))?;
            let classifier = ImageClassifier::load(&cfg.out_dir.join("classifier"))?;
            let windows = load_eeg_from(&cfg)?;
            let images = load_images_from(&cfg)?;
            let gan_dir = cfg.out_dir.join("gan");
            let (gan, records) = train_gan(
                &windows,
                &images,
                &encoder,
                &classifier,
                cfg.gan.model.clone(),
                &cfg.gan.train,
                Some(&gan_dir),
            )?;
            gan.save(&gan_dir.join("final"))?;
            let last = records.last().expect("at least one iteration");
            println!(
                "gan: {} iterations, final losses L1_D {:.4} L1_G {:.4} L2 {:.4} L3 {:.4}",
                records.len(),
                last.l1_d,
                last.l1_g,
                last.l2,
                last.l3
            );
            Ok(())
        }
        Command::Generate { gan, encoder, eeg, out, grid } => {
            let gan = Gan::load(&gan)?;
            let encoder = CFormer::load(&encoder)?;
            let (windows, _) = load_eeg_dataset(&eeg)?;
            if windows.is_empty() {
                return Err(Error::Data("no EEG windows to generate from".into()));
            }
            fs::create_dir_all(&out)?;
            let mut images = Vec::with_capacity(windows.len());
            for (i, w) in windows.iter().enumerate() {
                let e = encoder.embed(w, false)?;
                let img = gan.generator.generate(&e)?;
                write_ppm_grid(
                    &out.join(format!("{i:05}-{}.ppm", CLASS_NAMES[w.label])),
                    std::slice::from_ref(&img),
                    1,
                )?;
                images.push(img);
            }
            if grid {
                write_ppm_grid(&out.join("grid.ppm"), &images, 8)?;
            }
            println!("wrote {} images to {}", images.len(), out.display());
            Ok(())
        }
        Command::Evaluate { gan, encoder, classifier, eeg_train, eeg_test, out } => {
            let gan = Gan::load(&gan)?;
            let encoder = CFormer::load(&encoder)?;
            let classifier = ImageClassifier::load(&classifier)?;
            let (train, _) = load_eeg_dataset(&eeg_train)?;
            let (test, _) = load_eeg_dataset(&eeg_test)?;
            let report = crate::metrics::evaluate_generator(
                &gan.generator,
                &encoder,
                &classifier,
                &train,
                &test,
                false,
            )?;
            let json = report.to_json();
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            fs::write(&out, serde_json::to_vec_pretty(&json)?)?;
            println!("{}", serde_json::to_string_pretty(&json)?);
            Ok(())
        }
    }
}
