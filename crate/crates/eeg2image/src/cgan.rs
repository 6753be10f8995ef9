//! Conditional GAN driven purely by EEG encodings (no separate noise
//! vector). The generator upsamples a 100-dim encoding to a 64x64 RGB
//! image; the discriminator is a strided conv stack with a sigmoid head.
//! Training combines the adversarial loss with a classification loss and a
//! perceptual feature loss, both supplied by the frozen image classifier.

use crate::cformer::CFormer;
use crate::checkpoint::{self, params_hash};
use crate::classifier::{image_batch, ImageClassifier};
use crate::dataio::{EEGWindow, ImageSample, IMG_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::{zero_grads, BatchNorm, Conv2d, Linear, Mode, NamedParams};
use crate::optim::{Adam, AdamConfig};
use crate::rng::RngStream;
use crate::tensor::{Padding, Tensor};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

/// Probability floor inside the adversarial log terms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub embed_dim: usize,
    pub img_size: usize,
    /// Channels entering each generator upsample block; the last block
    /// keeps its width, so [256, 128, 64, 32] runs 256@4 -> 128@8 -> 64@16
    /// -> 32@32 -> 32@64 before the output conv.
    pub g_channels: Vec<usize>,
    /// Output channels of each strided discriminator conv.
    pub d_channels: Vec<usize>,
    pub init_std: f64,
    pub leaky_slope: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            embed_dim: 100,
            img_size: 64,
            g_channels: vec![256, 128, 64, 32],
            d_channels: vec![32, 64, 128, 256],
            init_std: 0.02,
            leaky_slope: 0.2,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.g_channels.is_empty() || self.d_channels.is_empty() {
            return Err(Error::Config("empty generator/discriminator channel list".into()));
        }
        let up = 1usize << self.g_channels.len();
        if self.img_size % up != 0 || self.img_size / up == 0 {
            return Err(Error::Config(format!(
                "img_size {} not divisible into {} upsample blocks",
                self.img_size,
                self.g_channels.len()
            )));
        }
        let down = 1usize << self.d_channels.len();
        if self.img_size % down != 0 || self.img_size / down == 0 {
            return Err(Error::Config(format!(
                "img_size {} too small for {} strided discriminator convs",
                self.img_size,
                self.d_channels.len()
            )));
        }
        Ok(())
    }

    fn g_start_side(&self) -> usize {
        self.img_size >> self.g_channels.len()
    }

    fn d_final_side(&self) -> usize {
        self.img_size >> self.d_channels.len()
    }
}

pub struct Generator {
    pub cfg: GanConfig,
    fc: Linear,
    convs: Vec<Conv2d>,
    bns: Vec<BatchNorm>,
    out_conv: Conv2d,
}

impl Generator {
    pub fn new(cfg: GanConfig, seed: u64) -> Result<Generator> {
        cfg.validate()?;
        let mut rng = RngStream::new(seed).derive(0x6A);
        let side = cfg.g_start_side();
        let ch = &cfg.g_channels;
        let fc = Linear::new_with_std("g.fc", cfg.embed_dim, ch[0] * side * side, cfg.init_std, &mut rng);
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        for i in 0..ch.len() {
            let out_ch = *ch.get(i + 1).unwrap_or(ch.last().unwrap());
            convs.push(Conv2d::new_with_std(
                &format!("g.block{i}.conv"),
                ch[i],
                out_ch,
                3,
                3,
                (1, 1),
                Padding::Same,
                cfg.init_std,
                &mut rng,
            ));
            bns.push(BatchNorm::new(&format!("g.block{i}.bn"), out_ch));
        }
        let out_conv = Conv2d::new_with_std(
            "g.out",
            *ch.last().unwrap(),
            IMG_CHANNELS,
            3,
            3,
            (1, 1),
            Padding::Same,
            cfg.init_std,
            &mut rng,
        );
        Ok(Generator { cfg, fc, convs, bns, out_conv })
    }

    pub fn params(&self) -> NamedParams {
        let mut p = self.fc.params();
        for (c, b) in self.convs.iter().zip(&self.bns) {
            p.extend(c.params());
            p.extend(b.params());
        }
        p.extend(self.out_conv.params());
        p
    }

    pub fn buffers(&self) -> NamedParams {
        self.bns.iter().flat_map(|b| b.buffers()).collect()
    }

    /// z: [B, embed_dim] -> images [B, 3, S, S] in [-1, 1].
    pub fn forward(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        let batch = match z.shape() {
            [b, e] if *e == self.cfg.embed_dim => *b,
            s => {
                return Err(Error::Shape(format!(
                    "generator input: expected [B, {}], got {s:?}",
                    self.cfg.embed_dim
                )))
            }
        };
        let side = self.cfg.g_start_side();
        let mut h = self
            .fc
            .forward(z)?
            .reshape(&[batch, self.cfg.g_channels[0], side, side])?;
        for (conv, bn) in self.convs.iter().zip(&self.bns) {
            h = bn.forward(&conv.forward(&h.upsample2()?)?, mode)?.relu();
        }
        Ok(self.out_conv.forward(&h)?.tanh_act())
    }

    /// One image [3, S, S] from one encoding, eval mode.
    pub fn generate(&self, embedding: &Tensor) -> Result<Tensor> {
        let z = embedding.reshape(&[1, self.cfg.embed_dim])?.detach();
        let img = self.forward(&z, Mode::Eval)?;
        let s = self.cfg.img_size;
        img.reshape(&[IMG_CHANNELS, s, s]).map(|t| t.detach())
    }
}

pub struct Discriminator {
    pub cfg: GanConfig,
    convs: Vec<Conv2d>,
    final_conv: Conv2d,
}

impl Discriminator {
    pub fn new(cfg: GanConfig, seed: u64) -> Result<Discriminator> {
        cfg.validate()?;
        let mut rng = RngStream::new(seed).derive(0xD6);
        let mut convs = Vec::new();
        let mut in_ch = IMG_CHANNELS;
        for (i, &out_ch) in cfg.d_channels.iter().enumerate() {
            convs.push(Conv2d::new_with_std(
                &format!("d.conv{i}"),
                in_ch,
                out_ch,
                3,
                3,
                (2, 2),
                Padding::Same,
                cfg.init_std,
                &mut rng,
            ));
            in_ch = out_ch;
        }
        let side = cfg.d_final_side();
        let final_conv = Conv2d::new_with_std(
            "d.out",
            in_ch,
            1,
            side,
            side,
            (1, 1),
            Padding::Valid,
            cfg.init_std,
            &mut rng,
        );
        Ok(Discriminator { cfg, convs, final_conv })
    }

    pub fn params(&self) -> NamedParams {
        let mut p: NamedParams = self.convs.iter().flat_map(|c| c.params()).collect();
        p.extend(self.final_conv.params());
        p
    }

    /// x: [B, 3, S, S] -> realness probabilities [B, 1] in (0, 1).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let batch = x.shape()[0];
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?.leaky_relu(self.cfg.leaky_slope);
        }
        let h = self.final_conv.forward(&h)?.leaky_relu(self.cfg.leaky_slope);
        h.reshape(&[batch, 1]).map(|t| t.sigmoid())
    }
}

/// Discriminator-side adversarial loss: -E[ln D(x)] - E[ln(1 - D(G(z)))].
pub fn loss_adversarial_d(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    let ones = Tensor::full(d_fake.shape(), 1.0);
    let real_term = d_real.ln_floored(LOG_FLOOR).mean_all();
    let fake_term = ones.sub(d_fake)?.ln_floored(LOG_FLOOR).mean_all();
    Ok(real_term.add(&fake_term)?.neg())
}

/// Generator-side adversarial loss. The default non-saturating form is
/// -E[ln D(G(z))]; `saturating` gives the literal minimax term
/// E[ln(1 - D(G(z)))].
pub fn loss_adversarial_g(d_fake: &Tensor, saturating: bool) -> Result<Tensor> {
    if saturating {
        let ones = Tensor::full(d_fake.shape(), 1.0);
        Ok(ones.sub(d_fake)?.ln_floored(LOG_FLOOR).mean_all())
    } else {
        Ok(d_fake.ln_floored(LOG_FLOOR).mean_all().neg())
    }
}

/// Classification loss: cross-entropy of the frozen classifier's
/// predictions on generated images against the conditioned classes.
pub fn loss_classifier(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    probs.cross_entropy(labels)
}

/// Perceptual loss: mean absolute difference between classifier features
/// of paired real and generated images.
pub fn loss_perceptual(feat_real: &Tensor, feat_fake: &Tensor) -> Result<Tensor> {
    if feat_real.shape() != feat_fake.shape() {
        return Err(Error::Pairing(format!(
            "perceptual features: real {:?} vs fake {:?}",
            feat_real.shape(),
            feat_fake.shape()
        )));
    }
    Ok(feat_real.sub(feat_fake)?.abs().mean_all())
}

/// Real images must carry the same class as the EEG windows they are
/// paired with.
pub fn check_pairing(eeg_labels: &[usize], image_labels: &[usize]) -> Result<()> {
    if eeg_labels.len() != image_labels.len() {
        return Err(Error::Pairing(format!(
            "batch sizes differ: {} EEG windows vs {} images",
            eeg_labels.len(),
            image_labels.len()
        )));
    }
    for (i, (e, m)) in eeg_labels.iter().zip(image_labels).enumerate() {
        if e != m {
            return Err(Error::Pairing(format!(
                "pair {i}: EEG class {e} vs image class {m}"
            )));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct GanTrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub g_lr: f64,
    pub d_lr: f64,
    pub lambda_adv: f64,
    pub lambda_cls: f64,
    pub lambda_perc: f64,
    /// Classifier tap used by the perceptual loss.
    pub tap: String,
    pub saturating: bool,
    pub seed: u64,
    /// Accept untrained encoder/classifier inputs (testing only).
    pub allow_untrained: bool,
    pub sample_every: Option<usize>,
    pub checkpoint_every: Option<usize>,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            iterations: 2000,
            batch: 100,
            g_lr: 1e-5,
            d_lr: 1e-5,
            lambda_adv: 1.0,
            lambda_cls: 1.0,
            lambda_perc: 1.0,
            tap: "fc2".into(),
            saturating: false,
            seed: 0,
            allow_untrained: false,
            sample_every: None,
            checkpoint_every: None,
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct LossRecord {
    pub iter: usize,
    pub l1_d: f64,
    pub l1_g: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
}

pub struct Gan {
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl Gan {
    pub fn new(cfg: GanConfig, seed: u64) -> Result<Gan> {
        Ok(Gan {
            generator: Generator::new(cfg.clone(), seed)?,
            discriminator: Discriminator::new(cfg, seed.wrapping_add(1))?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut params = self.generator.params();
        params.extend(self.discriminator.params());
        checkpoint::save(
            dir,
            &params,
            &self.generator.buffers(),
            serde_json::to_value(&self.generator.cfg)?,
            false,
        )
    }

    pub fn load(dir: &Path) -> Result<Gan> {
        let ck = checkpoint::read(dir)?;
        let cfg: GanConfig = serde_json::from_value(ck.manifest.config.clone())?;
        let gan = Gan::new(cfg, 0)?;
        let mut params = gan.generator.params();
        params.extend(gan.discriminator.params());
        ck.load_into(&params, &gan.generator.buffers())?;
        Ok(gan)
    }
}

fn finite(value: f64, component: &str, iter: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Divergence(format!(
            "{component} loss became {value} at iteration {iter}"
        )))
    }
}

/// Precompute the frozen encoder's embeddings for every window.
pub fn embed_windows(
    encoder: &CFormer,
    windows: &[EEGWindow],
    allow_untrained: bool,
) -> Result<Vec<Vec<f64>>> {
    if !encoder.is_trained() && !allow_untrained {
        return Err(Error::Checkpoint(
            "GAN training requires a trained encoder checkpoint".into(),
        ));
    }
    let mut out = Vec::with_capacity(windows.len());
    let mut rng = RngStream::new(0);
    for chunk in windows.chunks(100) {
        let x = crate::cformer::batch_tensor(chunk)?;
        let (_, embed) = encoder.forward(&x, Mode::Eval, &mut rng)?;
        let e = embed.data();
        let dim = encoder.cfg.embed_dim;
        for row in 0..chunk.len() {
            out.push(e[row * dim..(row + 1) * dim].to_vec());
        }
    }
    Ok(out)
}

/// Alternate discriminator/generator updates on EEG-conditioned batches.
/// The encoder and classifier are frozen for the duration (verified by
/// parameter hash). Loss records are returned and, when `out_dir` is given,
/// streamed to `losses.jsonl` alongside optional periodic sample grids and
/// checkpoints.
#[allow(clippy::too_many_arguments)]
pub fn train_gan(
    windows: &[EEGWindow],
    images: &[ImageSample],
    encoder: &CFormer,
    classifier: &ImageClassifier,
    cfg: GanConfig,
    tcfg: &GanTrainConfig,
    out_dir: Option<&Path>,
) -> Result<(Gan, Vec<LossRecord>)> {
    cfg.validate()?;
    if windows.is_empty() || images.is_empty() {
        return Err(Error::Data("train_gan: empty EEG or image dataset".into()));
    }
    if !classifier.is_trained() && !tcfg.allow_untrained {
        return Err(Error::Checkpoint(
            "GAN training requires a trained classifier checkpoint".into(),
        ));
    }
    if cfg.img_size != classifier.cfg.img_size {
        return Err(Error::Config(format!(
            "GAN img_size {} vs classifier img_size {}",
            cfg.img_size, classifier.cfg.img_size
        )));
    }
    if cfg.embed_dim != encoder.cfg.embed_dim {
        return Err(Error::Config(format!(
            "GAN embed_dim {} vs encoder embed_dim {}",
            cfg.embed_dim, encoder.cfg.embed_dim
        )));
    }

    encoder.freeze();
    classifier.freeze();
    let encoder_hash = params_hash(&encoder.params());
    let classifier_hash = params_hash(&classifier.params());

    let embeddings = embed_windows(encoder, windows, tcfg.allow_untrained)?;
    let embed_dim = cfg.embed_dim;

    // same-class pairing pool: windows of a class draw real images of
    // that class
    let num_classes = classifier.cfg.num_classes;
    let mut images_by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, img) in images.iter().enumerate() {
        images_by_class[img.label].push(i);
    }
    for w in windows {
        if images_by_class.get(w.label).map_or(true, |v| v.is_empty()) {
            return Err(Error::Pairing(format!(
                "no real images available for EEG class {}",
                w.label
            )));
        }
    }

    let gan = Gan::new(cfg, tcfg.seed)?;
    let g_params = gan.generator.params();
    let d_params = gan.discriminator.params();
    let mut g_opt = Adam::new(AdamConfig::with_lr(tcfg.g_lr), &g_params);
    let mut d_opt = Adam::new(AdamConfig::with_lr(tcfg.d_lr), &d_params);
    let mut rng = RngStream::new(tcfg.seed).derive(0x6A17);

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut log_file = match out_dir {
        Some(dir) => Some(fs::File::create(dir.join("losses.jsonl"))?),
        None => None,
    };

    let mut records = Vec::with_capacity(tcfg.iterations);
    for iter in 0..tcfg.iterations {
        // sample conditioned batch: EEG windows plus same-class real images
        let mut z_data = Vec::with_capacity(tcfg.batch * embed_dim);
        let mut labels = Vec::with_capacity(tcfg.batch);
        let mut real = Vec::with_capacity(tcfg.batch);
        for _ in 0..tcfg.batch {
            let wi = rng.below(windows.len());
            let class = windows[wi].label;
            let pool = &images_by_class[class];
            let img = &images[pool[rng.below(pool.len())]];
            z_data.extend_from_slice(&embeddings[wi]);
            labels.push(class);
            real.push(img.clone());
        }
        check_pairing(&labels, &real.iter().map(|s| s.label).collect::<Vec<_>>())?;
        let z = Tensor::from_vec(z_data, &[tcfg.batch, embed_dim])?;
        let real_x = image_batch(&real)?;

        // discriminator step on detached fakes
        let fake = gan.generator.forward(&z, Mode::Train)?;
        let d_real = gan.discriminator.forward(&real_x)?;
        let d_fake = gan.discriminator.forward(&fake.detach())?;
        let l1_d_t = loss_adversarial_d(&d_real, &d_fake)?;
        let l1_d = finite(l1_d_t.item(), "discriminator adversarial", iter)?;
        l1_d_t.backward()?;
        d_opt.step()?;

        // generator step against the updated discriminator
        let d_fake2 = gan.discriminator.forward(&fake)?;
        let l1_g_t = loss_adversarial_g(&d_fake2, tcfg.saturating)?;
        let l1_g = finite(l1_g_t.item(), "generator adversarial", iter)?;
        let mut total_t = l1_g_t.scale(tcfg.lambda_adv);
        let mut dropout_rng = RngStream::new(0);
        let (fake_probs, fake_feat) = if tcfg.lambda_cls != 0.0 || tcfg.lambda_perc != 0.0 {
            let (p, f) =
                classifier.forward_with_tap(&fake, &tcfg.tap, Mode::Eval, &mut dropout_rng)?;
            (Some(p), Some(f))
        } else {
            (None, None)
        };
        let l2 = if tcfg.lambda_cls != 0.0 {
            let l2_t = loss_classifier(fake_probs.as_ref().unwrap(), &labels)?;
            let l2 = finite(l2_t.item(), "classification", iter)?;
            total_t = total_t.add(&l2_t.scale(tcfg.lambda_cls))?;
            l2
        } else {
            0.0
        };
        let l3 = if tcfg.lambda_perc != 0.0 {
            let f_real = classifier.features(&real_x, &tcfg.tap)?.detach();
            let l3_t = loss_perceptual(&f_real, fake_feat.as_ref().unwrap())?;
            let l3 = finite(l3_t.item(), "perceptual", iter)?;
            total_t = total_t.add(&l3_t.scale(tcfg.lambda_perc))?;
            l3
        } else {
            0.0
        };
        let total = finite(total_t.item(), "total generator", iter)?;
        total_t.backward()?;
        g_opt.step()?;
        zero_grads(&d_params); // G backward also reaches D parameters

        let record = LossRecord { iter, l1_d, l1_g, l2, l3, total };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&record)?)?;
        }
        records.push(record);

        if let (Some(dir), Some(every)) = (out_dir, tcfg.sample_every) {
            if every > 0 && (iter + 1) % every == 0 {
                let n = tcfg.batch.min(8);
                let grid: Vec<Tensor> = (0..n)
                    .map(|i| {
                        let start = i * embed_dim;
                        let e = Tensor::from_vec(
                            z.data()[start..start + embed_dim].to_vec(),
                            &[embed_dim],
                        )?;
                        gan.generator.generate(&e)
                    })
                    .collect::<Result<_>>()?;
                write_ppm_grid(&dir.join(format!("samples-{:06}.ppm", iter + 1)), &grid, 4)?;
            }
        }
        if let (Some(dir), Some(every)) = (out_dir, tcfg.checkpoint_every) {
            if every > 0 && (iter + 1) % every == 0 {
                gan.save(&dir.join(format!("gan-{:06}", iter + 1)))?;
            }
        }
    }

    if params_hash(&encoder.params()) != encoder_hash {
        return Err(Error::Checkpoint("frozen encoder parameters changed".into()));
    }
    if params_hash(&classifier.params()) != classifier_hash {
        return Err(Error::Checkpoint("frozen classifier parameters changed".into()));
    }
    Ok((gan, records))
}

/// Write images ([3, S, S], values in [-1, 1]) as a binary PPM grid.
pub fn write_ppm_grid(path: &Path, images: &[Tensor], cols: usize) -> Result<()> {
    if images.is_empty() || cols == 0 {
        return Err(Error::Data("write_ppm_grid: no images or zero columns".into()));
    }
    let s = match images[0].shape() {
        [c, h, w] if *c == IMG_CHANNELS && h == w => *h,
        shape => return Err(Error::Shape(format!("write_ppm_grid: got {shape:?}"))),
    };
    let rows = images.len().div_ceil(cols);
    let (width, height) = (cols * s, rows * s);
    let mut pixels = vec![0u8; width * height * 3];
    for (i, img) in images.iter().enumerate() {
        if img.shape() != images[0].shape() {
            return Err(Error::Shape("write_ppm_grid: mixed image shapes".into()));
        }
        let (gr, gc) = (i / cols, i % cols);
        img.with_data(|d| {
            for ch in 0..3 {
                for y in 0..s {
                    for x in 0..s {
                        let v = d[(ch * s + y) * s + x].clamp(-1.0, 1.0);
                        let byte = ((v + 1.0) * 127.5).round() as u8;
                        let px = ((gr * s + y) * width + gc * s + x) * 3 + ch;
                        pixels[px] = byte;
                    }
                }
            }
        });
    }
    let mut out = Vec::with_capacity(pixels.len() + 32);
    out.extend_from_slice(format!("P6\n{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(&pixels);
    fs::write(path, out)?;
    Ok(())
}
