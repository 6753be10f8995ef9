//! Dataset ingestion, windowing and deterministic synthetic corpora.
//!
//! On-disk layout for both dataset kinds: a directory holding `meta.json`,
//! `data.bin` (little-endian f32 payload) and `labels.bin` (one unsigned
//! byte per item). EEG windows are stored as 14x32 (channels x samples)
//! blocks; images as 3x64x64 CHW blocks with pixels in [-1, 1].
//!
//! Synthetic values are rounded through f32 at generation time so that a
//! save/load round trip is bit-exact.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const EEG_CHANNELS: usize = 14;
pub const EEG_SAMPLES: usize = 32;
pub const EEG_SAMPLE_RATE: f64 = 128.0;
pub const IMG_CHANNELS: usize = 3;
pub const IMG_SIZE: usize = 64;
pub const NUM_CLASSES: usize = 10;

/// shape x hue naming for the 10 synthetic classes.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "circle_warm",
    "square_warm",
    "triangle_warm",
    "cross_warm",
    "ring_warm",
    "circle_cool",
    "square_cool",
    "triangle_cool",
    "cross_cool",
    "ring_cool",
];

#[derive(Clone, Debug)]
pub struct EEGWindow {
    /// [14, 32] channels x samples, microvolt-scale reals.
    pub samples: Tensor,
    pub label: usize,
    pub subject: usize,
}

#[derive(Clone, Debug)]
pub struct ImageSample {
    /// [3, 64, 64] CHW in [-1, 1].
    pub pixels: Tensor,
    pub label: usize,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields)]
pub struct EegMeta {
    pub magic: String,
    pub version: u32,
    pub count: usize,
    pub channels: usize,
    pub samples: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields)]
pub struct ImageMeta {
    pub magic: String,
    pub version: u32,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

/// Cut a continuous [channels, T] signal into fixed windows. With the
/// defaults (window 32, overlap 8) consecutive windows share 8 samples,
/// i.e. the stride is 24; a trailing partial window is discarded.
pub fn window_signal(signal: &Tensor, window: usize, overlap: usize) -> Result<Vec<Tensor>> {
    let (channels, t) = match signal.shape() {
        [c, t] => (*c, *t),
        s => return Err(Error::Shape(format!("window_signal: got {s:?}"))),
    };
    if overlap >= window {
        return Err(Error::Config(format!(
            "overlap {overlap} must be smaller than window {window}"
        )));
    }
    if t < window {
        return Err(Error::Data(format!(
            "signal too short: {t} samples for window {window}"
        )));
    }
    let stride = window - overlap;
    let count = (t - window) / stride + 1;
    let data = signal.data();
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        let mut block = Vec::with_capacity(channels * window);
        for c in 0..channels {
            block.extend_from_slice(&data[c * t + start..c * t + start + window]);
        }
        out.push(Tensor::from_vec(block, &[channels, window])?);
    }
    Ok(out)
}

/// Per-channel z-score over one window; scale-free model input.
pub fn zscore_window(window: &Tensor) -> Result<Tensor> {
    let (channels, samples) = match window.shape() {
        [c, s] => (*c, *s),
        s => return Err(Error::Shape(format!("zscore_window: got {s:?}"))),
    };
    let mut data = window.data();
    for c in 0..channels {
        let row = &mut data[c * samples..(c + 1) * samples];
        let mean: f64 = row.iter().sum::<f64>() / samples as f64;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / samples as f64;
        let inv = 1.0 / (var.sqrt() + 1e-8);
        row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
    Tensor::from_vec(data, &[channels, samples])
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Synthetic EEG windows for one class: two class-specific sinusoids
/// (f = 4 + 2*class_id Hz and 1.5x that) with per-channel random phases,
/// plus Gaussian noise at `noise_scale` times the clean signal RMS.
pub fn synth_eeg_with_noise(
    class_id: usize,
    n: usize,
    seed: u64,
    noise_scale: f64,
) -> Result<Vec<EEGWindow>> {
    if class_id >= NUM_CLASSES {
        return Err(Error::Index(format!("class_id {class_id} >= {NUM_CLASSES}")));
    }
    // one DFT bin of a 32-sample window is 4 Hz; spacing classes a full
    // bin apart keeps them resolvable at this window length
    let f1 = 4.0 + 4.0 * class_id as f64;
    let f2 = 1.5 * f1;
    let mut rng = RngStream::new(seed).derive(class_id as u64);
    let mut windows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut data = vec![0.0; EEG_CHANNELS * EEG_SAMPLES];
        for c in 0..EEG_CHANNELS {
            let phase1 = rng.uniform(0.0, std::f64::consts::TAU);
            let phase2 = rng.uniform(0.0, std::f64::consts::TAU);
            let row = &mut data[c * EEG_SAMPLES..(c + 1) * EEG_SAMPLES];
            for (t, v) in row.iter_mut().enumerate() {
                let time = t as f64 / EEG_SAMPLE_RATE;
                *v = (std::f64::consts::TAU * f1 * time + phase1).sin()
                    + 0.5 * (std::f64::consts::TAU * f2 * time + phase2).sin();
            }
            if noise_scale > 0.0 {
                let rms =
                    (row.iter().map(|v| v * v).sum::<f64>() / EEG_SAMPLES as f64).sqrt();
                let sigma = noise_scale * rms;
                for v in row.iter_mut() {
                    *v += sigma * rng.normal();
                }
            }
            row.iter_mut().for_each(|v| *v = round_f32(*v));
        }
        windows.push(EEGWindow {
            samples: Tensor::from_vec(data, &[EEG_CHANNELS, EEG_SAMPLES])?,
            label: class_id,
            subject: 0,
        });
    }
    Ok(windows)
}

pub fn synth_eeg(class_id: usize, n: usize, seed: u64) -> Result<Vec<EEGWindow>> {
    synth_eeg_with_noise(class_id, n, seed, 0.5)
}

#[derive(Clone, Copy)]
enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
    Ring,
}

const SHAPES: [Shape; 5] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Cross, Shape::Ring];
// warm / cool foreground colors in [0, 1] RGB
const HUES: [[f64; 3]; 2] = [[0.88, 0.25, 0.15], [0.15, 0.35, 0.88]];

fn inside(shape: Shape, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        Shape::Circle => dx * dx + dy * dy <= r * r,
        Shape::Square => dx.abs() <= r && dy.abs() <= r,
        Shape::Triangle => {
            // upward triangle inscribed in the radius-r box
            dy >= -r && dy <= r && dx.abs() <= (r - dy) / 2.0
        }
        Shape::Cross => (dx.abs() <= r * 0.35 && dy.abs() <= r) || (dy.abs() <= r * 0.35 && dx.abs() <= r),
        Shape::Ring => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
        }
    }
}

/// Procedural 64x64 renders for one class; (shape, hue) is fixed by the
/// class, position/scale/background jitter comes from the seed.
pub fn synth_images(class_id: usize, n: usize, seed: u64) -> Result<Vec<ImageSample>> {
    if class_id >= NUM_CLASSES {
        return Err(Error::Index(format!("class_id {class_id} >= {NUM_CLASSES}")));
    }
    let shape = SHAPES[class_id % 5];
    let hue = HUES[class_id / 5];
    let mut rng = RngStream::new(seed).derive(1000 + class_id as u64);
    let mut out = Vec::with_capacity(n);
    let sz = IMG_SIZE as f64;
    for _ in 0..n {
        let cx = sz / 2.0 + rng.uniform(-8.0, 8.0);
        let cy = sz / 2.0 + rng.uniform(-8.0, 8.0);
        let r = rng.uniform(0.28, 0.42) * sz;
        let bg = rng.uniform(-0.9, -0.3);
        let jitter = rng.uniform(-0.06, 0.06);
        let fg: Vec<f64> = hue
            .iter()
            .map(|v| ((v + jitter).clamp(0.0, 1.0)) * 2.0 - 1.0)
            .collect();
        let mut pixels = vec![0.0; IMG_CHANNELS * IMG_SIZE * IMG_SIZE];
        for y in 0..IMG_SIZE {
            for x in 0..IMG_SIZE {
                let hit = inside(shape, x as f64 - cx, y as f64 - cy, r);
                for c in 0..IMG_CHANNELS {
                    let v = if hit { fg[c] } else { bg };
                    pixels[c * IMG_SIZE * IMG_SIZE + y * IMG_SIZE + x] =
                        round_f32(v.clamp(-1.0, 1.0));
                }
            }
        }
        out.push(ImageSample {
            pixels: Tensor::from_vec(pixels, &[IMG_CHANNELS, IMG_SIZE, IMG_SIZE])?,
            label: class_id,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Stratified train/test split over item labels; per-class train count is
/// round(train_fraction * class count).
pub fn split_dataset(labels: &[usize], train_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if labels.is_empty() {
        return Err(Error::Data("split_dataset: empty dataset".into()));
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l].push(i);
    }
    let mut rng = RngStream::new(seed).derive(0x51); // split stream
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, idxs) in per_class.iter_mut().enumerate() {
        if idxs.is_empty() {
            continue;
        }
        if idxs.len() < 5 {
            return Err(Error::Data(format!(
                "class {class} has only {} items; at least 5 required for a stratified split",
                idxs.len()
            )));
        }
        rng.shuffle(idxs);
        let n_train = (train_fraction * idxs.len() as f64).round() as usize;
        train.extend_from_slice(&idxs[..n_train]);
        test.extend_from_slice(&idxs[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit { train, test, seed })
}

fn write_f32_payload(values: impl Iterator<Item = f64>, out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_f32_payload(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect()
}

pub fn save_eeg_dataset(dir: &Path, windows: &[EEGWindow]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = EegMeta {
        magic: "EEGW".into(),
        version: 1,
        count: windows.len(),
        channels: EEG_CHANNELS,
        samples: EEG_SAMPLES,
        num_classes: NUM_CLASSES,
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    let mut data = Vec::with_capacity(windows.len() * EEG_CHANNELS * EEG_SAMPLES * 4);
    let mut labels = Vec::with_capacity(windows.len());
    for w in windows {
        if w.samples.shape() != [EEG_CHANNELS, EEG_SAMPLES] {
            return Err(Error::Shape(format!(
                "EEG window shape {:?}, expected [{EEG_CHANNELS}, {EEG_SAMPLES}]",
                w.samples.shape()
            )));
        }
        write_f32_payload(w.samples.data().into_iter(), &mut data);
        labels.push(w.label as u8);
    }
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    fs::write(dir.join("data.bin"), &data)?;
    fs::write(dir.join("labels.bin"), &labels)?;
    Ok(())
}

pub fn load_eeg_dataset(dir: &Path) -> Result<(Vec<EEGWindow>, EegMeta)> {
    let meta: EegMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
    if meta.magic != "EEGW" {
        return Err(Error::Data(format!("bad magic '{}', expected 'EEGW'", meta.magic)));
    }
    if meta.version != 1 {
        return Err(Error::Data(format!("unsupported version {}", meta.version)));
    }
    let data = fs::read(dir.join("data.bin"))?;
    let expected = meta.count * meta.channels * meta.samples * 4;
    if data.len() != expected {
        return Err(Error::Data(format!(
            "data.bin length mismatch: expected {expected} bytes, found {}",
            data.len()
        )));
    }
    let labels = fs::read(dir.join("labels.bin"))?;
    if labels.len() != meta.count {
        return Err(Error::Data(format!(
            "labels.bin length mismatch: expected {} bytes, found {}",
            meta.count,
            labels.len()
        )));
    }
    let block = meta.channels * meta.samples;
    let values = read_f32_payload(&data);
    let mut windows = Vec::with_capacity(meta.count);
    for i in 0..meta.count {
        let label = labels[i] as usize;
        if label >= meta.num_classes {
            return Err(Error::Data(format!(
                "label {label} of window {i} >= num_classes {}",
                meta.num_classes
            )));
        }
        windows.push(EEGWindow {
            samples: Tensor::from_vec(
                values[i * block..(i + 1) * block].to_vec(),
                &[meta.channels, meta.samples],
            )?,
            label,
            subject: 0,
        });
    }
    Ok((windows, meta))
}

pub fn save_image_dataset(dir: &Path, images: &[ImageSample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = ImageMeta {
        magic: "IMGS".into(),
        version: 1,
        count: images.len(),
        height: IMG_SIZE,
        width: IMG_SIZE,
        channels: IMG_CHANNELS,
        num_classes: NUM_CLASSES,
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    let mut data = Vec::with_capacity(images.len() * IMG_CHANNELS * IMG_SIZE * IMG_SIZE * 4);
    let mut labels = Vec::with_capacity(images.len());
    for img in images {
        if img.pixels.shape() != [IMG_CHANNELS, IMG_SIZE, IMG_SIZE] {
            return Err(Error::Shape(format!(
                "image shape {:?}, expected [{IMG_CHANNELS}, {IMG_SIZE}, {IMG_SIZE}]",
                img.pixels.shape()
            )));
        }
        img.pixels.with_data(|d| {
            if let Some(bad) = d.iter().find(|v| v.abs() > 1.0) {
                return Err(Error::Data(format!("pixel {bad} outside [-1, 1]")));
            }
            Ok(())
        })?;
        write_f32_payload(img.pixels.data().into_iter(), &mut data);
        labels.push(img.label as u8);
    }
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
    fs::write(dir.join("data.bin"), &data)?;
    fs::write(dir.join("labels.bin"), &labels)?;
    Ok(())
}

pub fn load_image_dataset(dir: &Path) -> Result<(Vec<ImageSample>, ImageMeta)> {
    let meta: ImageMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
    if meta.magic != "IMGS" {
        return Err(Error::Data(format!("bad magic '{}', expected 'IMGS'", meta.magic)));
    }
    if meta.version != 1 {
        return Err(Error::Data(format!("unsupported version {}", meta.version)));
    }
    let data = fs::read(dir.join("data.bin"))?;
    let block = meta.channels * meta.height * meta.width;
    let expected = meta.count * block * 4;
    if data.len() != expected {
        return Err(Error::Data(format!(
            "data.bin length mismatch: expected {expected} bytes, found {}",
            data.len()
        )));
    }
    let labels = fs::read(dir.join("labels.bin"))?;
    if labels.len() != meta.count {
        return Err(Error::Data(format!(
            "labels.bin length mismatch: expected {} bytes, found {}",
            meta.count,
            labels.len()
        )));
    }
    let values = read_f32_payload(&data);
    let mut images = Vec::with_capacity(meta.count);
    for i in 0..meta.count {
        let label = labels[i] as usize;
        if label >= meta.num_classes {
            return Err(Error::Data(format!(
                "label {label} of image {i} >= num_classes {}",
                meta.num_classes
            )));
        }
        let chunk = &values[i * block..(i + 1) * block];
        if let Some(bad) = chunk.iter().find(|v| v.abs() > 1.0) {
            return Err(Error::Data(format!("pixel {bad} of image {i} outside [-1, 1]")));
        }
        images.push(ImageSample {
            pixels: Tensor::from_vec(chunk.to_vec(), &[meta.channels, meta.height, meta.width])?,
            label,
        });
    }
    Ok((images, meta))
}

/// Default synthetic corpus sizes: small enough for minutes-scale runs.
pub const DEFAULT_EEG_PER_CLASS: usize = 500;
pub const DEFAULT_IMAGES_PER_CLASS: usize = 200;

pub fn synth_eeg_corpus(per_class: usize, seed: u64) -> Result<Vec<EEGWindow>> {
    let mut all = Vec::with_capacity(per_class * NUM_CLASSES);
    for class in 0..NUM_CLASSES {
        all.extend(synth_eeg(class, per_class, seed)?);
    }
    Ok(all)
}

pub fn synth_image_corpus(per_class: usize, seed: u64) -> Result<Vec<ImageSample>> {
    let mut all = Vec::with_capacity(per_class * NUM_CLASSES);
    for class in 0..NUM_CLASSES {
        all.extend(synth_images(class, per_class, seed)?);
    }
    Ok(all)
}
