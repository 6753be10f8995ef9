//! Auxiliary image classifier: three conv+relu+maxpool stages and a small
//! fully connected head. Trained on real images, then frozen; downstream it
//! supplies class probabilities for the classification loss and intermediate
//! activations ("taps") for the perceptual loss.

use crate::checkpoint;
use crate::dataio::{ImageSample, IMG_CHANNELS, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Linear, Mode, NamedParams};
use crate::optim::{Adam, AdamConfig};
use crate::rng::RngStream;
use crate::tensor::{Padding, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct ImageClassifierConfig {
    pub img_size: usize,
    pub conv_channels: [usize; 3],
    pub fc1: usize,
    pub fc2: usize,
    pub num_classes: usize,
    pub dropout: f64,
}

impl Default for ImageClassifierConfig {
    fn default() -> Self {
        ImageClassifierConfig {
            img_size: 64,
            conv_channels: [32, 32, 64],
            fc1: 128,
            fc2: 64,
            num_classes: NUM_CLASSES,
            dropout: 0.25,
        }
    }
}

impl ImageClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.img_size % 8 != 0 || self.img_size == 0 {
            return Err(Error::Config(format!(
                "img_size {} must be a positive multiple of 8 (three 2x2 pools)",
                self.img_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Flattened width after the third pool.
    pub fn flat_dim(&self) -> usize {
        let side = self.img_size / 8;
        self.conv_channels[2] * side * side
    }
}

/// Valid arguments to [`ImageClassifier::features`], outermost first.
pub const TAPS: [&str; 5] = ["pool1", "pool2", "pool3", "fc1", "fc2"];

pub struct ImageClassifier {
    pub cfg: ImageClassifierConfig,
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    fc1: Linear,
    fc2: Linear,
    fc_out: Linear,
    trained: bool,
}

impl ImageClassifier {
    pub fn new(cfg: ImageClassifierConfig, seed: u64) -> Result<ImageClassifier> {
        cfg.validate()?;
        let mut rng = RngStream::new(seed).derive(0xC1);
        let [c1, c2, c3] = cfg.conv_channels;
        Ok(ImageClassifier {
            conv1: Conv2d::new("conv1", IMG_CHANNELS, c1, 3, 3, (1, 1), Padding::Same, &mut rng),
            conv2: Conv2d::new("conv2", c1, c2, 3, 3, (1, 1), Padding::Same, &mut rng),
            conv3: Conv2d::new("conv3", c2, c3, 3, 3, (1, 1), Padding::Same, &mut rng),
            fc1: Linear::new("fc1", cfg.flat_dim(), cfg.fc1, &mut rng),
            fc2: Linear::new("fc2", cfg.fc1, cfg.fc2, &mut rng),
            fc_out: Linear::new("fc_out", cfg.fc2, cfg.num_classes, &mut rng),
            trained: false,
            cfg,
        })
    }

    pub fn params(&self) -> NamedParams {
        let mut p = Vec::new();
        p.extend(self.conv1.params());
        p.extend(self.conv2.params());
        p.extend(self.conv3.params());
        p.extend(self.fc1.params());
        p.extend(self.fc2.params());
        p.extend(self.fc_out.params());
        p
    }

    pub fn freeze(&self) {
        crate::nn::freeze_all(&self.params());
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let s = self.cfg.img_size;
        match x.shape() {
            [b, c, h, w] if *c == IMG_CHANNELS && *h == s && *w == s => {
                x.with_data(|d| {
                    if let Some(bad) = d.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                        return Err(Error::Data(format!(
                            "classifier input pixel {bad} outside [-1, 1]"
                        )));
                    }
                    Ok(())
                })?;
                Ok(*b)
            }
            shape => Err(Error::Shape(format!(
                "classifier input: expected [B, {IMG_CHANNELS}, {s}, {s}], got {shape:?}"
            ))),
        }
    }

    /// Run up to (and including) the named tap; gradients flow back into
    /// `x`, which is what the perceptual loss relies on.
    pub fn features(&self, x: &Tensor, tap: &str) -> Result<Tensor> {
        let batch = self.check_input(x)?;
        let p1 = self.conv1.forward(x)?.relu().maxpool2()?;
        if tap == "pool1" {
            return flatten(&p1, batch);
        }
        let p2 = self.conv2.forward(&p1)?.relu().maxpool2()?;
        if tap == "pool2" {
            return flatten(&p2, batch);
        }
        let p3 = self.conv3.forward(&p2)?.relu().maxpool2()?;
        if tap == "pool3" {
            return flatten(&p3, batch);
        }
        let h1 = self.fc1.forward(&flatten(&p3, batch)?)?.relu();
        if tap == "fc1" {
            return Ok(h1);
        }
        let h2 = self.fc2.forward(&h1)?.relu();
        if tap == "fc2" {
            return Ok(h2);
        }
        Err(Error::Config(format!("unknown feature tap '{tap}'; valid taps: {TAPS:?}")))
    }

    /// Full forward: class probabilities [B, M]. Dropout after fc1 in
    /// training mode only.
    pub fn forward(&self, x: &Tensor, mode: Mode, rng: &mut RngStream) -> Result<Tensor> {
        let batch = self.check_input(x)?;
        let p1 = self.conv1.forward(x)?.relu().maxpool2()?;
        let p2 = self.conv2.forward(&p1)?.relu().maxpool2()?;
        let p3 = self.conv3.forward(&p2)?.relu().maxpool2()?;
        let h1 = self.fc1.forward(&flatten(&p3, batch)?)?.relu();
        let h1 = h1.dropout(self.cfg.dropout, rng, mode == Mode::Train);
        let h2 = self.fc2.forward(&h1)?.relu();
        self.fc_out.forward(&h2)?.softmax()
    }

    /// One pass returning both class probabilities and the named tap's
    /// features; avoids recomputing the conv stack when a caller (the GAN
    /// objective) needs both.
    pub fn forward_with_tap(
        &self,
        x: &Tensor,
        tap: &str,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(Tensor, Tensor)> {
        if !TAPS.contains(&tap) {
            return Err(Error::Config(format!(
                "unknown feature tap '{tap}'; valid taps: {TAPS:?}"
            )));
        }
        let batch = self.check_input(x)?;
        let p1 = self.conv1.forward(x)?.relu().maxpool2()?;
        let p2 = self.conv2.forward(&p1)?.relu().maxpool2()?;
        let p3 = self.conv3.forward(&p2)?.relu().maxpool2()?;
        let h1 = self.fc1.forward(&flatten(&p3, batch)?)?.relu();
        let h1d = h1.dropout(self.cfg.dropout, rng, mode == Mode::Train);
        let h2 = self.fc2.forward(&h1d)?.relu();
        let probs = self.fc_out.forward(&h2)?.softmax()?;
        let feat = match tap {
            "pool1" => flatten(&p1, batch)?,
            "pool2" => flatten(&p2, batch)?,
            "pool3" => flatten(&p3, batch)?,
            "fc1" => h1,
            _ => h2,
        };
        Ok((probs, feat))
    }

    /// Class probabilities for one image sample.
    pub fn classify_image(&self, sample: &ImageSample) -> Result<Tensor> {
        let s = self.cfg.img_size;
        let x = sample.pixels.reshape(&[1, IMG_CHANNELS, s, s])?.detach();
        let mut rng = RngStream::new(0);
        let probs = self.forward(&x, Mode::Eval, &mut rng)?;
        Ok(probs.reshape(&[self.cfg.num_classes])?.detach())
    }

    pub fn save(&self, dir: &Path, frozen: bool) -> Result<()> {
        checkpoint::save(
            dir,
            &self.params(),
            &Vec::new(),
            serde_json::to_value(&self.cfg)?,
            frozen,
        )
    }

    pub fn load(dir: &Path) -> Result<ImageClassifier> {
        let ck = checkpoint::read(dir)?;
        let cfg: ImageClassifierConfig = serde_json::from_value(ck.manifest.config.clone())?;
        let mut model = ImageClassifier::new(cfg, 0)?;
        ck.load_into(&model.params(), &Vec::new())?;
        model.trained = true;
        Ok(model)
    }
}

fn flatten(x: &Tensor, batch: usize) -> Result<Tensor> {
    x.reshape(&[batch, x.numel() / batch])
}

/// Stack image samples into a [B, 3, S, S] batch.
pub fn image_batch(samples: &[ImageSample]) -> Result<Tensor> {
    let b = samples.len();
    let per = samples[0].pixels.numel();
    let side = (per / IMG_CHANNELS) as f64;
    let s = side.sqrt() as usize;
    let mut data = Vec::with_capacity(b * per);
    for img in samples {
        data.extend(img.pixels.data());
    }
    Tensor::from_vec(data, &[b, IMG_CHANNELS, s, s])
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub early_stop_accuracy: Option<f64>,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            lr: 1e-3,
            batch: 100,
            epochs: 20,
            seed: 0,
            early_stop_accuracy: Some(0.97),
        }
    }
}

pub fn accuracy(model: &ImageClassifier, images: &[ImageSample], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let cm = confusion_matrix(model, images, idx)?;
    let correct: usize = (0..model.cfg.num_classes).map(|c| cm[c][c]).sum();
    Ok(correct as f64 / idx.len() as f64)
}

/// rows = true label, columns = predicted label.
pub fn confusion_matrix(
    model: &ImageClassifier,
    images: &[ImageSample],
    idx: &[usize],
) -> Result<Vec<Vec<usize>>> {
    let m = model.cfg.num_classes;
    let mut cm = vec![vec![0usize; m]; m];
    let mut rng = RngStream::new(0);
    for chunk in idx.chunks(50) {
        let batch: Vec<ImageSample> = chunk.iter().map(|&i| images[i].clone()).collect();
        let x = image_batch(&batch)?;
        let probs = model.forward(&x, Mode::Eval, &mut rng)?;
        probs.with_data(|p| {
            for (row, &i) in chunk.iter().enumerate() {
                let pred = crate::cformer::argmax(&p[row * m..(row + 1) * m]);
                cm[images[i].label][pred] += 1;
            }
        });
    }
    Ok(cm)
}

/// Train on a stratified 80/20 split; returns the model restored to its
/// best-test-accuracy parameters plus per-epoch stats.
pub fn train_image_classifier(
    images: &[ImageSample],
    cfg: ImageClassifierConfig,
    train_cfg: &ClassifierTrainConfig,
) -> Result<(ImageClassifier, Vec<crate::cformer::EpochStats>)> {
    if images.is_empty() {
        return Err(Error::Data("train_image_classifier: empty dataset".into()));
    }
    let labels: Vec<usize> = images.iter().map(|s| s.label).collect();
    let split = crate::dataio::split_dataset(&labels, 0.8, train_cfg.seed)?;
    let mut model = ImageClassifier::new(cfg, train_cfg.seed)?;
    let params = model.params();
    let mut opt = Adam::new(
        AdamConfig { beta1: 0.9, ..AdamConfig::with_lr(train_cfg.lr) },
        &params,
    );
    let mut shuffle_rng = RngStream::new(train_cfg.seed).derive(0xE1);
    let mut dropout_rng = RngStream::new(train_cfg.seed).derive(0xD1);

    let mut stats = Vec::new();
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut train_idx = split.train.clone();
    let m = model.cfg.num_classes;
    for epoch in 0..train_cfg.epochs {
        shuffle_rng.shuffle(&mut train_idx);
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for chunk in train_idx.chunks(train_cfg.batch) {
            let batch: Vec<ImageSample> = chunk.iter().map(|&i| images[i].clone()).collect();
            let x = image_batch(&batch)?;
            let y: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let probs = model.forward(&x, Mode::Train, &mut dropout_rng)?;
            let loss = probs.cross_entropy(&y)?;
            let loss_val = loss.item();
            if !loss_val.is_finite() {
                return Err(Error::Divergence(format!(
                    "classifier loss {loss_val} at epoch {epoch}, sample offset {seen}"
                )));
            }
            loss.backward()?;
            opt.step()?;
            epoch_loss += loss_val * chunk.len() as f64;
            probs.with_data(|p| {
                for (row, label) in y.iter().enumerate() {
                    if crate::cformer::argmax(&p[row * m..(row + 1) * m]) == *label {
                        correct += 1;
                    }
                }
            });
            seen += chunk.len();
        }
        let test_acc = accuracy(&model, images, &split.test)?;
        stats.push(crate::cformer::EpochStats {
            epoch,
            train_loss: epoch_loss / seen.max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            test_accuracy: test_acc,
        });
        if best.as_ref().map_or(true, |(acc, _)| test_acc > *acc) {
            best = Some((test_acc, params.iter().map(|(_, t)| t.data()).collect()));
        }
        if train_cfg.early_stop_accuracy.is_some_and(|bar| test_acc >= bar) {
            break;
        }
    }
    if let Some((_, snap)) = best {
        for ((_, t), d) in params.iter().zip(&snap) {
            t.set_data(d)?;
        }
    }
    model.trained = true;
    Ok((model, stats))
}
