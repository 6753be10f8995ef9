//! Layers built on the tensor ops: linear, convolution, batch norm, layer
//! norm. Each layer owns named parameter tensors so models can be bundled
//! into checkpoints.

use crate::error::Result;
use crate::rng::RngStream;
use crate::tensor::{batchnorm_eval, batchnorm_train, layer_norm, Padding, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Named parameter list for optimizers and checkpoints.
pub type NamedParams = Vec<(String, Tensor)>;

pub fn gaussian_param(shape: &[usize], std: f64, rng: &mut RngStream) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.normal_scaled(0.0, std)).collect();
    Tensor::param(data, shape).expect("gaussian_param")
}

pub struct Linear {
    pub weight: Tensor, // [in, out]
    pub bias: Tensor,   // [out]
    name: String,
}

impl Linear {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Linear {
        // He-style scaling keeps activations at unit order through relu stacks.
        let std = (2.0 / fan_in as f64).sqrt();
        Linear {
            weight: gaussian_param(&[fan_in, fan_out], std, rng),
            bias: Tensor::param(vec![0.0; fan_out], &[fan_out]).unwrap(),
            name: name.to_string(),
        }
    }

    /// Weights drawn from N(0, std); used by the GAN.
    pub fn new_with_std(
        name: &str,
        fan_in: usize,
        fan_out: usize,
        std: f64,
        rng: &mut RngStream,
    ) -> Linear {
        Linear {
            weight: gaussian_param(&[fan_in, fan_out], std, rng),
            bias: Tensor::param(vec![0.0; fan_out], &[fan_out]).unwrap(),
            name: name.to_string(),
        }
    }

    /// x: [batch, in] -> [batch, out]
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add_row_bias(&self.bias)
    }

    pub fn params(&self) -> NamedParams {
        vec![
            (format!("{}.weight", self.name), self.weight.clone()),
            (format!("{}.bias", self.name), self.bias.clone()),
        ]
    }
}

pub struct Conv2d {
    pub kernels: Tensor, // [out, in, kh, kw]
    pub bias: Tensor,    // [out]
    pub stride: (usize, usize),
    pub padding: Padding,
    name: String,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
        stride: (usize, usize),
        padding: Padding,
        rng: &mut RngStream,
    ) -> Conv2d {
        let fan_in = in_ch * kh * kw;
        let std = (2.0 / fan_in as f64).sqrt();
        Conv2d {
            kernels: gaussian_param(&[out_ch, in_ch, kh, kw], std, rng),
            bias: Tensor::param(vec![0.0; out_ch], &[out_ch]).unwrap(),
            stride,
            padding,
            name: name.to_string(),
        }
    }

    /// Same shapes but weights drawn from N(0, std); used by the GAN.
    #[allow(clippy::too_many_arguments)]
    pub fn new_with_std(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
        stride: (usize, usize),
        padding: Padding,
        std: f64,
        rng: &mut RngStream,
    ) -> Conv2d {
        Conv2d {
            kernels: gaussian_param(&[out_ch, in_ch, kh, kw], std, rng),
            bias: Tensor::param(vec![0.0; out_ch], &[out_ch]).unwrap(),
            stride,
            padding,
            name: name.to_string(),
        }
    }

    /// x: [B, in, H, W] -> [B, out, H', W']
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.kernels, self.stride, self.padding)?
            .add_channel_bias(&self.bias)
    }

    pub fn params(&self) -> NamedParams {
        vec![
            (format!("{}.kernels", self.name), self.kernels.clone()),
            (format!("{}.bias", self.name), self.bias.clone()),
        ]
    }
}

pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
    name: String,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> BatchNorm {
        BatchNorm {
            gamma: Tensor::param(vec![1.0; channels], &[channels]).unwrap(),
            beta: Tensor::param(vec![0.0; channels], &[channels]).unwrap(),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
            name: name.to_string(),
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Train => {
                let (y, mean, var) = batchnorm_train(x, &self.gamma, &self.beta, self.eps)?;
                let m = self.momentum;
                let rm: Vec<f64> = self
                    .running_mean
                    .data()
                    .iter()
                    .zip(&mean)
                    .map(|(r, b)| (1.0 - m) * r + m * b)
                    .collect();
                let rv: Vec<f64> = self
                    .running_var
                    .data()
                    .iter()
                    .zip(&var)
                    .map(|(r, b)| (1.0 - m) * r + m * b)
                    .collect();
                self.running_mean.set_data(&rm)?;
                self.running_var.set_data(&rv)?;
                Ok(y)
            }
            Mode::Eval => batchnorm_eval(
                x,
                &self.gamma,
                &self.beta,
                &self.running_mean.data(),
                &self.running_var.data(),
                self.eps,
            ),
        }
    }

    pub fn params(&self) -> NamedParams {
        vec![
            (format!("{}.gamma", self.name), self.gamma.clone()),
            (format!("{}.beta", self.name), self.beta.clone()),
        ]
    }

    pub fn buffers(&self) -> NamedParams {
        vec![
            (format!("{}.running_mean", self.name), self.running_mean.clone()),
            (format!("{}.running_var", self.name), self.running_var.clone()),
        ]
    }
}

pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
    name: String,
}

impl LayerNorm {
    pub fn new(name: &str, width: usize) -> LayerNorm {
        LayerNorm {
            gamma: Tensor::param(vec![1.0; width], &[width]).unwrap(),
            beta: Tensor::param(vec![0.0; width], &[width]).unwrap(),
            eps: 1e-5,
            name: name.to_string(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, &self.gamma, &self.beta, self.eps)
    }

    pub fn params(&self) -> NamedParams {
        vec![
            (format!("{}.gamma", self.name), self.gamma.clone()),
            (format!("{}.beta", self.name), self.beta.clone()),
        ]
    }
}

pub fn freeze_all(params: &NamedParams) {
    for (_, p) in params {
        p.freeze();
    }
}

pub fn zero_grads(params: &NamedParams) {
    for (_, p) in params {
        p.clear_grad();
    }
}
