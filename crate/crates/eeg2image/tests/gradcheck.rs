//! Finite-difference gradient verification for every full model. Op-level
//! checks live next to the ops; here each complete architecture (EEG
//! encoder, image classifier, generator, discriminator) is checked
//! end-to-end against central differences on sampled parameter and input
//! coordinates.

use eeg2image::cformer::{batch_tensor, CFormer, CFormerConfig};
use eeg2image::cgan::{Discriminator, GanConfig, Generator};
use eeg2image::check::{central_difference, max_relative_error, sampled_param_check};
use eeg2image::classifier::{ImageClassifier, ImageClassifierConfig};
use eeg2image::dataio::synth_eeg;
use eeg2image::nn::{zero_grads, Mode, NamedParams};
use eeg2image::rng::RngStream;
use eeg2image::Tensor;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;
const COORDS: usize = 4;

/// Analytic parameter gradients of a rebuilt scalar loss.
fn analytic_grads(loss: &mut dyn FnMut() -> Tensor, params: &NamedParams) -> Vec<Vec<f64>> {
    zero_grads(params);
    loss().backward().unwrap();
    let grads = params.iter().map(|(_, p)| p.grad_or_zeros()).collect();
    zero_grads(params);
    grads
}

fn check_model(loss: &mut dyn FnMut() -> Tensor, params: &NamedParams, seed: u64) {
    let analytic = analytic_grads(loss, params);
    let mut scalar_loss = || loss().item();
    let err = sampled_param_check(&mut scalar_loss, params, &analytic, COORDS, H, seed);
    assert!(err <= TOL, "max relative error {err}");
}

/// Fixed random weights so the scalar loss is sensitive to every output.
fn probe(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = RngStream::new(seed).derive(0x9E);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    Tensor::from_vec(data, shape).unwrap()
}

#[test]
fn cformer_full_model_gradients() {
    let cfg = CFormerConfig {
        conv_channels: 8,
        heads: 2,
        ff_dim: 16,
        embed_dim: 12,
        dropout: 0.0,
        ..CFormerConfig::default()
    };
    let model = CFormer::new(cfg, 3).unwrap();
    let mut windows = synth_eeg(0, 1, 5).unwrap();
    windows.extend(synth_eeg(7, 1, 5).unwrap());
    let x = batch_tensor(&windows).unwrap();
    let w = probe(&[2, 10], 1);
    let params = model.params();
    let mut loss = || {
        let mut rng = RngStream::new(0);
        let (probs, _) = model.forward(&x, Mode::Eval, &mut rng).unwrap();
        probs.mul(&w).unwrap().sum_all()
    };
    check_model(&mut loss, &params, 11);
}

#[test]
fn classifier_full_model_gradients_including_input() {
    let cfg = ImageClassifierConfig {
        img_size: 16,
        conv_channels: [4, 4, 8],
        fc1: 16,
        fc2: 8,
        dropout: 0.0,
        ..ImageClassifierConfig::default()
    };
    let model = ImageClassifier::new(cfg, 5).unwrap();
    let mut rng = RngStream::new(7);
    let x0: Vec<f64> = (0..2 * 3 * 16 * 16).map(|_| rng.uniform(-0.9, 0.9)).collect();
    let x = Tensor::param(x0.clone(), &[2, 3, 16, 16]).unwrap();
    let w = probe(&[2, 10], 2);
    let params = model.params();
    let mut loss = || {
        let mut rng = RngStream::new(0);
        model
            .forward(&x, Mode::Eval, &mut rng)
            .unwrap()
            .mul(&w)
            .unwrap()
            .sum_all()
    };
    check_model(&mut loss, &params, 13);

    // input gradient (the path the perceptual loss differentiates)
    zero_grads(&params);
    x.clear_grad();
    loss().backward().unwrap();
    let analytic = x.grad().unwrap();
    let mut f = |v: &[f64]| {
        let xi = Tensor::from_vec(v.to_vec(), &[2, 3, 16, 16]).unwrap();
        let mut rng = RngStream::new(0);
        model
            .forward(&xi, Mode::Eval, &mut rng)
            .unwrap()
            .mul(&w)
            .unwrap()
            .sum_all()
            .item()
    };
    let numeric = central_difference(&mut f, &x0, H);
    assert!(max_relative_error(&analytic, &numeric) <= TOL);
}

#[test]
fn generator_full_model_gradients() {
    // init_std well above the FD step keeps pre-activations away from the
    // relu kinks that would corrupt central differences
    let cfg = GanConfig {
        img_size: 16,
        g_channels: vec![6, 4],
        d_channels: vec![4, 8],
        init_std: 0.5,
        ..GanConfig::default()
    };
    let g = Generator::new(cfg, 9).unwrap();
    let z = probe(&[2, 100], 3);
    let w = probe(&[2, 3, 16, 16], 4);
    let params = g.params();
    let mut loss = || {
        g.forward(&z, Mode::Eval)
            .unwrap()
            .mul(&w)
            .unwrap()
            .sum_all()
    };
    check_model(&mut loss, &params, 17);
}

#[test]
fn discriminator_full_model_gradients() {
    let cfg = GanConfig {
        img_size: 16,
        g_channels: vec![6, 4],
        d_channels: vec![4, 8],
        init_std: 0.5,
        ..GanConfig::default()
    };
    let d = Discriminator::new(cfg, 11).unwrap();
    let mut rng = RngStream::new(13);
    let x_data: Vec<f64> = (0..2 * 3 * 16 * 16).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let x = Tensor::from_vec(x_data, &[2, 3, 16, 16]).unwrap();
    let w = probe(&[2, 1], 5);
    let params = d.params();
    let mut loss = || d.forward(&x).unwrap().mul(&w).unwrap().sum_all();
    check_model(&mut loss, &params, 19);
}

#[test]
fn combined_gan_objective_gradients_reach_generator() {
    // generator gradients through D, the frozen classifier, and the
    // perceptual tap simultaneously, checked against finite differences
    // small spatial size keeps the density of relu/maxpool kinks low
    // enough for clean central differences
    let cfg = GanConfig {
        img_size: 16,
        g_channels: vec![8, 8],
        d_channels: vec![4, 8],
        init_std: 0.5,
        ..GanConfig::default()
    };
    let g = Generator::new(cfg.clone(), 25).unwrap();
    let d = Discriminator::new(cfg, 22).unwrap();
    let classifier = ImageClassifier::new(
        ImageClassifierConfig {
            img_size: 16,
            conv_channels: [4, 4, 8],
            fc1: 16,
            fc2: 8,
            dropout: 0.0,
            ..ImageClassifierConfig::default()
        },
        23,
    )
    .unwrap();
    classifier.freeze();
    let z = probe(&[2, 100], 6);
    let f_real = probe(&[2, 8], 7);
    let params = g.params();
    let mut loss = || {
        let fake = g.forward(&z, Mode::Eval).unwrap();
        let mut rng = RngStream::new(0);
        let (probs, feat) = classifier
            .forward_with_tap(&fake, "fc2", Mode::Eval, &mut rng)
            .unwrap();
        let l1 = eeg2image::cgan::loss_adversarial_g(&d.forward(&fake).unwrap(), false).unwrap();
        let l2 = eeg2image::cgan::loss_classifier(&probs, &[0, 1]).unwrap();
        let l3 = eeg2image::cgan::loss_perceptual(&f_real, &feat).unwrap();
        l1.add(&l2).unwrap().add(&l3).unwrap()
    };
    check_model(&mut loss, &params, 23);
}
