//! EEG encoder: factored temporal/spatial convolutions, one multi-head
//! self-attention block, and a two-layer classifier head. Trained for
//! 10-class EEG window classification; the 100-unit penultimate activation
//! is the EEG encoding consumed by the generator.

use crate::checkpoint;
use crate::dataio::{zscore_window, EEGWindow, EEG_CHANNELS, EEG_SAMPLES};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, LayerNorm, Linear, Mode, NamedParams};
use crate::optim::{Adam, AdamConfig};
use crate::rng::RngStream;
use crate::tensor::{Padding, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct CFormerConfig {
    /// k: channels of both conv layers and token feature width.
    pub conv_channels: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub temporal_kernel: usize,
    /// Optional sinusoidal position signal added to tokens; off by default
    /// (the conv front-end already carries temporal order).
    pub positional_encoding: bool,
}

impl Default for CFormerConfig {
    fn default() -> Self {
        CFormerConfig {
            conv_channels: 40,
            heads: 8,
            ff_dim: 160,
            embed_dim: 100,
            num_classes: 10,
            dropout: 0.25,
            temporal_kernel: 5,
            positional_encoding: false,
        }
    }
}

impl CFormerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels % self.heads != 0 {
            return Err(Error::Config(format!(
                "conv_channels {} not divisible by heads {}",
                self.conv_channels, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn token_count(&self) -> usize {
        EEG_SAMPLES - self.temporal_kernel + 1
    }
}

pub struct CFormer {
    pub cfg: CFormerConfig,
    conv_t: Conv2d,
    conv_s: Conv2d,
    bn: BatchNorm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
    fc_embed: Linear,
    fc_out: Linear,
    trained: bool,
}

impl CFormer {
    pub fn new(cfg: CFormerConfig, seed: u64) -> Result<CFormer> {
        cfg.validate()?;
        let mut rng = RngStream::new(seed).derive(0xCF);
        let k = cfg.conv_channels;
        Ok(CFormer {
            conv_t: Conv2d::new("conv_t", 1, k, 1, cfg.temporal_kernel, (1, 1), Padding::Valid, &mut rng),
            conv_s: Conv2d::new("conv_s", k, k, EEG_CHANNELS, 1, (1, 1), Padding::Valid, &mut rng),
            bn: BatchNorm::new("bn", k),
            wq: Linear::new("attn.wq", k, k, &mut rng),
            wk: Linear::new("attn.wk", k, k, &mut rng),
            wv: Linear::new("attn.wv", k, k, &mut rng),
            wo: Linear::new("attn.wo", k, k, &mut rng),
            ln1: LayerNorm::new("ln1", k),
            ff1: Linear::new("ff1", k, cfg.ff_dim, &mut rng),
            ff2: Linear::new("ff2", cfg.ff_dim, k, &mut rng),
            ln2: LayerNorm::new("ln2", k),
            fc_embed: Linear::new("fc_embed", cfg.token_count() * k, cfg.embed_dim, &mut rng),
            fc_out: Linear::new("fc_out", cfg.embed_dim, cfg.num_classes, &mut rng),
            trained: false,
            cfg,
        })
    }

    pub fn params(&self) -> NamedParams {
        let mut p = Vec::new();
        p.extend(self.conv_t.params());
        p.extend(self.conv_s.params());
        p.extend(self.bn.params());
        p.extend(self.wq.params());
        p.extend(self.wk.params());
        p.extend(self.wv.params());
        p.extend(self.wo.params());
        p.extend(self.ln1.params());
        p.extend(self.ff1.params());
        p.extend(self.ff2.params());
        p.extend(self.ln2.params());
        p.extend(self.fc_embed.params());
        p.extend(self.fc_out.params());
        p
    }

    pub fn buffers(&self) -> NamedParams {
        self.bn.buffers()
    }

    pub fn freeze(&self) {
        crate::nn::freeze_all(&self.params());
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Convolution front-end: [B, 1, 14, 32] -> tokens [B*T', k].
    pub fn conv_module(
        &self,
        x: &Tensor,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Tensor> {
        let batch = match x.shape() {
            [b, 1, ch, s] if *ch == EEG_CHANNELS && *s == EEG_SAMPLES => *b,
            s => {
                return Err(Error::Shape(format!(
                    "conv_module: expected [B, 1, {EEG_CHANNELS}, {EEG_SAMPLES}], got {s:?}"
                )))
            }
        };
        let k = self.cfg.conv_channels;
        let t_tokens = self.cfg.token_count();
        let h = self.conv_t.forward(x)?;
        let h = self.conv_s.forward(&h)?;
        let h = self.bn.forward(&h, mode)?.relu();
        let h = h.dropout(self.cfg.dropout, rng, mode == Mode::Train);
        // [B, k, 1, T'] -> per-sample transpose to [T', k] tokens
        let flat = h.reshape(&[batch * k, t_tokens])?;
        let mut per_sample = Vec::with_capacity(batch);
        for b in 0..batch {
            per_sample.push(flat.slice_rows(b * k, k)?.transpose2()?);
        }
        let mut tokens = Tensor::concat_rows(&per_sample)?;
        if self.cfg.positional_encoding {
            tokens = tokens.add(&positional_signal(batch, t_tokens, k))?;
        }
        Ok(tokens)
    }

    /// Multi-head self-attention block over [B*T', k] tokens
    /// (attention sub-layer, then position-wise feed-forward, post-norm).
    pub fn attention_module(
        &self,
        tokens: &Tensor,
        batch: usize,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<Tensor> {
        let k = self.cfg.conv_channels;
        let heads = self.cfg.heads;
        let dh = k / heads;
        let t_tokens = tokens.shape()[0] / batch;
        let scale = 1.0 / (dh as f64).sqrt();

        let q = self.wq.forward(tokens)?;
        let key = self.wk.forward(tokens)?;
        let v = self.wv.forward(tokens)?;
        let mut per_sample = Vec::with_capacity(batch);
        for b in 0..batch {
            let qb = q.slice_rows(b * t_tokens, t_tokens)?;
            let kb = key.slice_rows(b * t_tokens, t_tokens)?;
            let vb = v.slice_rows(b * t_tokens, t_tokens)?;
            let mut head_outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = qb.slice_cols(hd * dh, dh)?;
                let kh = kb.slice_cols(hd * dh, dh)?;
                let vh = vb.slice_cols(hd * dh, dh)?;
                let weights = qh.matmul(&kh.transpose2()?)?.scale(scale).softmax()?;
                head_outs.push(weights.matmul(&vh)?);
            }
            per_sample.push(Tensor::concat_cols(&head_outs)?);
        }
        let attn = self.wo.forward(&Tensor::concat_rows(&per_sample)?)?;
        let attn = attn.dropout(self.cfg.dropout, rng, mode == Mode::Train);
        let tokens = self.ln1.forward(&tokens.add(&attn)?)?;

        let ff = self.ff2.forward(&self.ff1.forward(&tokens)?.relu())?;
        let ff = ff.dropout(self.cfg.dropout, rng, mode == Mode::Train);
        self.ln2.forward(&tokens.add(&ff)?)
    }

    /// Full forward over a [B, 1, 14, 32] batch: class probabilities
    /// [B, M] and embeddings [B, embed_dim].
    pub fn forward(
        &self,
        x: &Tensor,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(Tensor, Tensor)> {
        let batch = x.shape()[0];
        let tokens = self.conv_module(x, mode, rng)?;
        let tokens = self.attention_module(&tokens, batch, mode, rng)?;
        let flat = tokens.reshape(&[batch, self.cfg.token_count() * self.cfg.conv_channels])?;
        let embed = self.fc_embed.forward(&flat)?.relu();
        let probs = self.fc_out.forward(&embed)?.softmax()?;
        Ok((probs, embed))
    }

    /// Class probabilities for one raw EEG window (z-scored internally).
    pub fn classify(&self, window: &EEGWindow) -> Result<Tensor> {
        let (probs, _) = self.forward_single(window)?;
        Ok(probs)
    }

    /// 100-dim EEG encoding from the penultimate layer, eval mode. Refuses
    /// untrained parameters unless explicitly allowed.
    pub fn embed(&self, window: &EEGWindow, allow_untrained: bool) -> Result<Tensor> {
        if !self.trained && !allow_untrained {
            return Err(Error::Checkpoint(
                "encoder is untrained; pass allow_untrained to embed anyway".into(),
            ));
        }
        let (_, embed) = self.forward_single(window)?;
        Ok(embed)
    }

    fn forward_single(&self, window: &EEGWindow) -> Result<(Tensor, Tensor)> {
        let x = batch_tensor(std::slice::from_ref(window))?;
        let mut rng = RngStream::new(0); // unused in eval mode
        let (probs, embed) = self.forward(&x, Mode::Eval, &mut rng)?;
        Ok((
            probs.reshape(&[self.cfg.num_classes])?.detach(),
            embed.reshape(&[self.cfg.embed_dim])?.detach(),
        ))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(
            dir,
            &self.params(),
            &self.buffers(),
            serde_json::to_value(&self.cfg)?,
            false,
        )
    }

    pub fn load(dir: &Path) -> Result<CFormer> {
        let ck = checkpoint::read(dir)?;
        let cfg: CFormerConfig = serde_json::from_value(ck.manifest.config.clone())?;
        let mut model = CFormer::new(cfg, 0)?;
        ck.load_into(&model.params(), &model.buffers())?;
        model.trained = true;
        Ok(model)
    }
}

fn positional_signal(batch: usize, t_tokens: usize, k: usize) -> Tensor {
    let mut data = vec![0.0; batch * t_tokens * k];
    for b in 0..batch {
        for t in 0..t_tokens {
            for j in 0..k {
                let angle = t as f64 / 10000f64.powf(2.0 * (j / 2) as f64 / k as f64);
                data[(b * t_tokens + t) * k + j] =
                    if j % 2 == 0 { angle.sin() } else { angle.cos() };
            }
        }
    }
    Tensor::from_vec(data, &[batch * t_tokens, k]).expect("positional signal")
}

/// Stack z-scored windows into a [B, 1, 14, 32] batch.
pub fn batch_tensor(windows: &[EEGWindow]) -> Result<Tensor> {
    let b = windows.len();
    let mut data = Vec::with_capacity(b * EEG_CHANNELS * EEG_SAMPLES);
    for w in windows {
        data.extend(zscore_window(&w.samples)?.data());
    }
    Tensor::from_vec(data, &[b, 1, EEG_CHANNELS, EEG_SAMPLES])
}

#[derive(Serialize, Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop once test accuracy reaches this bar (best checkpoint is kept
    /// either way).
    pub early_stop_accuracy: Option<f64>,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        EncoderTrainConfig {
            lr: 1e-3,
            batch: 100,
            epochs: 30,
            seed: 0,
            early_stop_accuracy: Some(0.97),
        }
    }
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

pub fn accuracy(model: &CFormer, windows: &[EEGWindow], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut rng = RngStream::new(0);
    let mut correct = 0usize;
    for chunk in idx.chunks(100) {
        let batch: Vec<EEGWindow> = chunk.iter().map(|&i| windows[i].clone()).collect();
        let x = batch_tensor(&batch)?;
        let (probs, _) = model.forward(&x, Mode::Eval, &mut rng)?;
        let m = model.cfg.num_classes;
        probs.with_data(|p| {
            for (row, w) in chunk.iter().enumerate() {
                let pred = argmax(&p[row * m..(row + 1) * m]);
                if pred == windows[*w].label {
                    correct += 1;
                }
            }
        });
    }
    Ok(correct as f64 / idx.len() as f64)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Train the encoder with cross-entropy on a stratified 80/20 split and
/// return the model restored to its best-test-accuracy parameters.
pub fn train_encoder(
    windows: &[EEGWindow],
    cfg: CFormerConfig,
    train_cfg: &EncoderTrainConfig,
) -> Result<(CFormer, Vec<EpochStats>)> {
    if windows.is_empty() {
        return Err(Error::Data("train_encoder: empty dataset".into()));
    }
    let labels: Vec<usize> = windows.iter().map(|w| w.label).collect();
    let split = crate::dataio::split_dataset(&labels, 0.8, train_cfg.seed)?;
    let mut model = CFormer::new(cfg, train_cfg.seed)?;
    let params = model.params();
    let mut opt = Adam::new(
        AdamConfig { beta1: 0.9, ..AdamConfig::with_lr(train_cfg.lr) },
        &params,
    );
    let mut shuffle_rng = RngStream::new(train_cfg.seed).derive(0xE0);
    let mut dropout_rng = RngStream::new(train_cfg.seed).derive(0xD0);

    let mut stats = Vec::new();
    let mut best: Option<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> = None;
    let mut train_idx = split.train.clone();
    for epoch in 0..train_cfg.epochs {
        shuffle_rng.shuffle(&mut train_idx);
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for chunk in train_idx.chunks(train_cfg.batch) {
            if chunk.len() < 2 {
                continue; // batch norm needs at least two samples
            }
            let batch: Vec<EEGWindow> = chunk.iter().map(|&i| windows[i].clone()).collect();
            let x = batch_tensor(&batch)?;
            let y: Vec<usize> = batch.iter().map(|w| w.label).collect();
            let (probs, _) = model.forward(&x, Mode::Train, &mut dropout_rng)?;
            let loss = probs.cross_entropy(&y)?;
            let loss_val = loss.item();
            if !loss_val.is_finite() {
                return Err(Error::Divergence(format!(
                    "encoder loss {loss_val} at epoch {epoch}, sample offset {seen}"
                )));
            }
            loss.backward()?;
            opt.step()?;
            epoch_loss += loss_val * chunk.len() as f64;
            let m = model.cfg.num_classes;
            probs.with_data(|p| {
                for (row, label) in y.iter().enumerate() {
                    if argmax(&p[row * m..(row + 1) * m]) == *label {
                        correct += 1;
                    }
                }
            });
            seen += chunk.len();
        }
        let test_acc = accuracy(&model, windows, &split.test)?;
        stats.push(EpochStats {
            epoch,
            train_loss: epoch_loss / seen.max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            test_accuracy: test_acc,
        });
        if best.as_ref().map_or(true, |(acc, _, _)| test_acc > *acc) {
            let snap_p = params.iter().map(|(_, t)| t.data()).collect();
            let snap_b = model.buffers().iter().map(|(_, t)| t.data()).collect();
            best = Some((test_acc, snap_p, snap_b));
        }
        if train_cfg.early_stop_accuracy.is_some_and(|bar| test_acc >= bar) {
            break;
        }
    }
    if let Some((_, snap_p, snap_b)) = best {
        for ((_, t), d) in params.iter().zip(&snap_p) {
            t.set_data(d)?;
        }
        for ((_, t), d) in model.buffers().iter().zip(&snap_b) {
            t.set_data(d)?;
        }
    }
    model.trained = true;
    Ok((model, stats))
}
