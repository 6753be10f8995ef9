//! Differentiable tensor operations.
//!
//! Each op computes its output eagerly and records a backward closure that
//! scatters the incoming gradient to the op's inputs. Closures capture
//! whatever forward values they need by clone, so later in-place parameter
//! updates cannot corrupt a pending backward pass.

use super::gemm::{gemm, gemm_abt, gemm_atb};
use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

fn shape2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape(format!("{what}: expected 2-d tensor, got {s:?}"))),
    }
}

impl Tensor {
    fn unary(
        &self,
        f: impl Fn(f64) -> f64,
        dfdx: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let x = self.data();
        let y: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let parent = self.clone();
        let y_saved = y.clone();
        Tensor::from_op(
            y,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g| {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(x.iter().zip(&y_saved))
                    .map(|(gv, (&xv, &yv))| gv * dfdx(xv, yv))
                    .collect();
                parent.accumulate_grad(&dx);
            }),
        )
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let out: Vec<f64> = self
            .with_data(|a| other.with_data(|b| a.iter().zip(b).map(|(x, y)| x + y).collect()));
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                pa.accumulate_grad(g);
                pb.accumulate_grad(g);
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "sub: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let out: Vec<f64> = self
            .with_data(|a| other.with_data(|b| a.iter().zip(b).map(|(x, y)| x - y).collect()));
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                pa.accumulate_grad(g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                pb.accumulate_grad(&neg);
            }),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "mul: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let a = self.data();
        let b = other.data();
        let out: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let da: Vec<f64> = g.iter().zip(&b).map(|(gv, bv)| gv * bv).collect();
                let db: Vec<f64> = g.iter().zip(&a).map(|(gv, av)| gv * av).collect();
                pa.accumulate_grad(&da);
                pb.accumulate_grad(&db);
            }),
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn abs(&self) -> Tensor {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            },
        )
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, alpha: f64) -> Tensor {
        self.unary(
            move |x| if x > 0.0 { x } else { alpha * x },
            move |x, _| if x > 0.0 { 1.0 } else { alpha },
        )
    }

    pub fn tanh_act(&self) -> Tensor {
        self.unary(|x| x.tanh(), |_, y| 1.0 - y * y)
    }

    /// Natural log of max(x, floor). Zero gradient below the floor, which
    /// keeps saturated probabilities from producing infinities.
    pub fn ln_floored(&self, floor: f64) -> Tensor {
        self.unary(
            move |x| x.max(floor).ln(),
            move |x, _| if x > floor { 1.0 / x } else { 0.0 },
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(
            |x| 1.0 / (1.0 + (-x).exp()),
            |_, y| y * (1.0 - y),
        )
    }

    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.with_data(|d| d.iter().sum());
        let n = self.numel();
        let parent = self.clone();
        Tensor::from_op(
            vec![s],
            vec![1],
            vec![self.clone()],
            Box::new(move |g| {
                parent.accumulate_grad(&vec![g[0]; n]);
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel();
        self.sum_all().scale(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {:?}",
                self.shape(),
                shape
            )));
        }
        let parent = self.clone();
        Ok(Tensor::from_op(
            self.data(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(move |g| parent.accumulate_grad(g)),
        ))
    }

    /// Matrix product of two 2-d tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = shape2(self, "matmul lhs")?;
        let (k2, n) = shape2(other, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul: inner extents differ, lhs {:?} vs rhs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let a = self.data();
        let b = other.data();
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &a, &b, &mut out);
        let (pa, pb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                if pa.requires_grad() {
                    let mut da = vec![0.0; m * k];
                    gemm_abt(m, n, k, g, &b, &mut da);
                    pa.accumulate_grad(&da);
                }
                if pb.requires_grad() {
                    let mut db = vec![0.0; k * n];
                    gemm_atb(k, m, n, &a, g, &mut db);
                    pb.accumulate_grad(&db);
                }
            }),
        ))
    }

    pub fn transpose2(&self) -> Result<Tensor> {
        let (r, c) = shape2(self, "transpose")?;
        let d = self.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let parent = self.clone();
        Ok(Tensor::from_op(
            out,
            vec![c, r],
            vec![self.clone()],
            Box::new(move |g| {
                let mut dg = vec![0.0; r * c];
                for j in 0..c {
                    for i in 0..r {
                        dg[i * c + j] = g[j * r + i];
                    }
                }
                parent.accumulate_grad(&dg);
            }),
        ))
    }

    /// Rows [start, start+len) of a 2-d tensor.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = shape2(self, "slice_rows")?;
        if start + len > r {
            return Err(Error::Index(format!(
                "slice_rows {start}..{} out of {r} rows",
                start + len
            )));
        }
        let out = self.with_data(|d| d[start * c..(start + len) * c].to_vec());
        let parent = self.clone();
        Ok(Tensor::from_op(
            out,
            vec![len, c],
            vec![self.clone()],
            Box::new(move |g| {
                let mut dg = vec![0.0; r * c];
                dg[start * c..(start + len) * c].copy_from_slice(g);
                parent.accumulate_grad(&dg);
            }),
        ))
    }

    /// Columns [start, start+len) of a 2-d tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = shape2(self, "slice_cols")?;
        if start + len > c {
            return Err(Error::Index(format!(
                "slice_cols {start}..{} out of {c} cols",
                start + len
            )));
        }
        let mut out = vec![0.0; r * len];
        self.with_data(|d| {
            for i in 0..r {
                out[i * len..(i + 1) * len]
                    .copy_from_slice(&d[i * c + start..i * c + start + len]);
            }
        });
        let parent = self.clone();
        Ok(Tensor::from_op(
            out,
            vec![r, len],
            vec![self.clone()],
            Box::new(move |g| {
                let mut dg = vec![0.0; r * c];
                for i in 0..r {
                    dg[i * c + start..i * c + start + len]
                        .copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                parent.accumulate_grad(&dg);
            }),
        ))
    }

    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_rows: empty input".into()));
        }
        let (_, c) = shape2(&parts[0], "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let (r, pc) = shape2(p, "concat_rows")?;
            if pc != c {
                return Err(Error::Shape(format!(
                    "concat_rows: column mismatch {pc} vs {c}"
                )));
            }
            rows += r;
            p.with_data(|d| out.extend_from_slice(d));
        }
        let owned: Vec<Tensor> = parts.to_vec();
        let sizes: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
        let parents = owned.clone();
        Ok(Tensor::from_op(
            out,
            vec![rows, c],
            parents,
            Box::new(move |g| {
                let mut off = 0;
                for (p, sz) in owned.iter().zip(&sizes) {
                    p.accumulate_grad(&g[off..off + sz]);
                    off += sz;
                }
            }),
        ))
    }

    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols: empty input".into()));
        }
        let (r, _) = shape2(&parts[0], "concat_cols")?;
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| shape2(p, "concat_cols").map(|(pr, pc)| {
                debug_assert_eq!(pr, r);
                pc
            }))
            .collect::<Result<_>>()?;
        for p in parts {
            let (pr, _) = shape2(p, "concat_cols")?;
            if pr != r {
                return Err(Error::Shape(format!("concat_cols: row mismatch {pr} vs {r}")));
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut off = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            p.with_data(|d| {
                for i in 0..r {
                    out[i * total + off..i * total + off + w]
                        .copy_from_slice(&d[i * w..(i + 1) * w]);
                }
            });
            off += w;
        }
        let owned: Vec<Tensor> = parts.to_vec();
        let parents = owned.clone();
        Ok(Tensor::from_op(
            out,
            vec![r, total],
            parents,
            Box::new(move |g| {
                let mut off = 0;
                for (p, &w) in owned.iter().zip(&widths) {
                    let mut dg = vec![0.0; r * w];
                    for i in 0..r {
                        dg[i * w..(i + 1) * w]
                            .copy_from_slice(&g[i * total + off..i * total + off + w]);
                    }
                    p.accumulate_grad(&dg);
                    off += w;
                }
            }),
        ))
    }

    /// [rows, c] + [c] bias broadcast over rows.
    pub fn add_row_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (r, c) = shape2(self, "add_row_bias")?;
        if bias.shape() != [c] {
            return Err(Error::Shape(format!(
                "add_row_bias: bias {:?} vs {c} columns",
                bias.shape()
            )));
        }
        let b = bias.data();
        let out: Vec<f64> = self.with_data(|d| {
            d.iter()
                .enumerate()
                .map(|(i, v)| v + b[i % c])
                .collect()
        });
        let (pa, pb) = (self.clone(), bias.clone());
        Ok(Tensor::from_op(
            out,
            vec![r, c],
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                pa.accumulate_grad(g);
                if pb.requires_grad() {
                    let mut db = vec![0.0; c];
                    for (i, gv) in g.iter().enumerate() {
                        db[i % c] += gv;
                    }
                    pb.accumulate_grad(&db);
                }
            }),
        ))
    }

    /// [B, C, H, W] + [C] bias broadcast over batch and spatial dims.
    pub fn add_channel_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (c, h, w) = match self.shape() {
            [_, c, h, w] => (*c, *h, *w),
            s => return Err(Error::Shape(format!("add_channel_bias: got {s:?}"))),
        };
        if bias.shape() != [c] {
            return Err(Error::Shape(format!(
                "add_channel_bias: bias {:?} vs {c} channels",
                bias.shape()
            )));
        }
        let bv = bias.data();
        let hw = h * w;
        let out: Vec<f64> = self.with_data(|d| {
            d.iter()
                .enumerate()
                .map(|(i, v)| v + bv[(i / hw) % c])
                .collect()
        });
        let (pa, pb) = (self.clone(), bias.clone());
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                pa.accumulate_grad(g);
                if pb.requires_grad() {
                    let mut db = vec![0.0; c];
                    for (i, gv) in g.iter().enumerate() {
                        db[(i / hw) % c] += gv;
                    }
                    pb.accumulate_grad(&db);
                }
            }),
        ))
    }

    /// Softmax over the last dimension, computed with max subtraction.
    pub fn softmax(&self) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        let last = *shape
            .last()
            .ok_or_else(|| Error::Shape("softmax on 0-d tensor".into()))?;
        let rows = self.numel() / last;
        let mut out = vec![0.0; self.numel()];
        self.with_data(|d| {
            for r in 0..rows {
                let row = &d[r * last..(r + 1) * last];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (o, &v) in out[r * last..(r + 1) * last].iter_mut().zip(row) {
                    *o = (v - m).exp();
                    sum += *o;
                }
                for o in &mut out[r * last..(r + 1) * last] {
                    *o /= sum;
                }
            }
        });
        let y = out.clone();
        let parent = self.clone();
        Ok(Tensor::from_op(
            out,
            shape,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; g.len()];
                for r in 0..rows {
                    let ys = &y[r * last..(r + 1) * last];
                    let gs = &g[r * last..(r + 1) * last];
                    let dot: f64 = ys.iter().zip(gs).map(|(yv, gv)| yv * gv).sum();
                    for ((d, &yv), &gv) in
                        dx[r * last..(r + 1) * last].iter_mut().zip(ys).zip(gs)
                    {
                        *d = yv * (gv - dot);
                    }
                }
                parent.accumulate_grad(&dx);
            }),
        ))
    }

    /// Mean negative log-likelihood of `labels` under probability rows,
    /// with the log floored at 1e-12.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        const FLOOR: f64 = 1e-12;
        let (b, m) = shape2(self, "cross_entropy")?;
        if labels.len() != b {
            return Err(Error::Shape(format!(
                "cross_entropy: {} labels for batch {b}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
            return Err(Error::Index(format!(
                "cross_entropy: label {bad} out of range [0, {m})"
            )));
        }
        let probs = self.data();
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            loss -= probs[i * m + l].max(FLOOR).ln();
        }
        loss /= b as f64;
        let labels = labels.to_vec();
        let parent = self.clone();
        Ok(Tensor::from_op(
            vec![loss],
            vec![1],
            vec![self.clone()],
            Box::new(move |g| {
                let mut dp = vec![0.0; probs.len()];
                for (i, &l) in labels.iter().enumerate() {
                    let p = probs[i * m + l];
                    if p > FLOOR {
                        dp[i * m + l] = -g[0] / (b as f64 * p);
                    }
                }
                parent.accumulate_grad(&dp);
            }),
        ))
    }

    /// 2-d convolution of [B, C, H, W] by kernels [O, C, kh, kw].
    pub fn conv2d(
        &self,
        kernels: &Tensor,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Tensor> {
        let (b, c, h, w) = match self.shape() {
            [b, c, h, w] => (*b, *c, *h, *w),
            s => return Err(Error::Shape(format!("conv2d input: got {s:?}"))),
        };
        let (o, kc, kh, kw) = match kernels.shape() {
            [o, kc, kh, kw] => (*o, *kc, *kh, *kw),
            s => return Err(Error::Shape(format!("conv2d kernels: got {s:?}"))),
        };
        if kc != c {
            return Err(Error::Shape(format!(
                "conv2d: input channels {c} vs kernel channels {kc}"
            )));
        }
        let (sh, sw) = stride;
        if sh == 0 || sw == 0 {
            return Err(Error::Shape("conv2d: stride must be positive".into()));
        }
        let geom = ConvGeom::new(h, w, kh, kw, sh, sw, padding)?;
        let (ho, wo) = (geom.ho, geom.wo);
        let ckk = c * kh * kw;
        let hw_out = ho * wo;

        let x = self.data();
        let k = kernels.data();
        let mut out = vec![0.0; b * o * hw_out];
        let mut col = vec![0.0; ckk * hw_out];
        let in_stride = c * h * w;
        for bi in 0..b {
            im2col(&x[bi * in_stride..(bi + 1) * in_stride], c, h, w, &geom, &mut col);
            gemm(
                o,
                ckk,
                hw_out,
                &k,
                &col,
                &mut out[bi * o * hw_out..(bi + 1) * o * hw_out],
            );
        }

        let (px, pk) = (self.clone(), kernels.clone());
        Ok(Tensor::from_op(
            out,
            vec![b, o, ho, wo],
            vec![self.clone(), kernels.clone()],
            Box::new(move |g| {
                let mut dk = vec![0.0; o * ckk];
                let mut dx = vec![0.0; x.len()];
                let mut col = vec![0.0; ckk * hw_out];
                let mut dcol = vec![0.0; ckk * hw_out];
                for bi in 0..b {
                    let gb = &g[bi * o * hw_out..(bi + 1) * o * hw_out];
                    if pk.requires_grad() {
                        im2col(
                            &x[bi * in_stride..(bi + 1) * in_stride],
                            c,
                            h,
                            w,
                            &geom,
                            &mut col,
                        );
                        gemm_abt(o, hw_out, ckk, gb, &col, &mut dk);
                    }
                    if px.requires_grad() {
                        dcol.iter_mut().for_each(|v| *v = 0.0);
                        gemm_atb(ckk, o, hw_out, &k, gb, &mut dcol);
                        col2im(
                            &dcol,
                            c,
                            h,
                            w,
                            &geom,
                            &mut dx[bi * in_stride..(bi + 1) * in_stride],
                        );
                    }
                }
                if pk.requires_grad() {
                    pk.accumulate_grad(&dk);
                }
                if px.requires_grad() {
                    px.accumulate_grad(&dx);
                }
            }),
        ))
    }

    /// 2x2 max pooling with stride 2 on [B, C, H, W].
    pub fn maxpool2(&self) -> Result<Tensor> {
        let (b, c, h, w) = match self.shape() {
            [b, c, h, w] => (*b, *c, *h, *w),
            s => return Err(Error::Shape(format!("maxpool2: got {s:?}"))),
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!("maxpool2: odd spatial dims {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut out = vec![0.0; b * c * ho * wo];
        let mut argmax = vec![0usize; out.len()];
        self.with_data(|d| {
            for bc in 0..b * c {
                let plane = &d[bc * h * w..(bc + 1) * h * w];
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut best = f64::NEG_INFINITY;
                        let mut besti = 0;
                        for di in 0..2 {
                            for dj in 0..2 {
                                let idx = (oh * 2 + di) * w + ow * 2 + dj;
                                if plane[idx] > best {
                                    best = plane[idx];
                                    besti = idx;
                                }
                            }
                        }
                        let oi = bc * ho * wo + oh * wo + ow;
                        out[oi] = best;
                        argmax[oi] = bc * h * w + besti;
                    }
                }
            }
        });
        let parent = self.clone();
        let n_in = self.numel();
        Ok(Tensor::from_op(
            out,
            vec![b, c, ho, wo],
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; n_in];
                for (gi, &src) in g.iter().zip(&argmax) {
                    dx[src] += gi;
                }
                parent.accumulate_grad(&dx);
            }),
        ))
    }

    /// Nearest-neighbor x2 upsampling on [B, C, H, W]; each pixel becomes a
    /// 2x2 block, and the gradient of a source pixel sums its block.
    pub fn upsample2(&self) -> Result<Tensor> {
        let (b, c, h, w) = match self.shape() {
            [b, c, h, w] => (*b, *c, *h, *w),
            s => return Err(Error::Shape(format!("upsample2: got {s:?}"))),
        };
        let (ho, wo) = (h * 2, w * 2);
        let mut out = vec![0.0; b * c * ho * wo];
        self.with_data(|d| {
            for bc in 0..b * c {
                let src = &d[bc * h * w..(bc + 1) * h * w];
                let dst = &mut out[bc * ho * wo..(bc + 1) * ho * wo];
                for i in 0..ho {
                    for j in 0..wo {
                        dst[i * wo + j] = src[(i / 2) * w + j / 2];
                    }
                }
            }
        });
        let parent = self.clone();
        Ok(Tensor::from_op(
            out,
            vec![b, c, ho, wo],
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![0.0; b * c * h * w];
                for bc in 0..b * c {
                    let gs = &g[bc * ho * wo..(bc + 1) * ho * wo];
                    let ds = &mut dx[bc * h * w..(bc + 1) * h * w];
                    for i in 0..ho {
                        for j in 0..wo {
                            ds[(i / 2) * w + j / 2] += gs[i * wo + j];
                        }
                    }
                }
                parent.accumulate_grad(&dx);
            }),
        ))
    }

    /// Inverted dropout; identity in eval mode or at rate 0.
    pub fn dropout(&self, rate: f64, rng: &mut RngStream, train: bool) -> Tensor {
        if !train || rate == 0.0 {
            return self.clone();
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.next_f64() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out: Vec<f64> =
            self.with_data(|d| d.iter().zip(&mask).map(|(x, m)| x * m).collect());
        let parent = self.clone();
        Tensor::from_op(
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g| {
                let dx: Vec<f64> = g.iter().zip(&mask).map(|(gv, m)| gv * m).collect();
                parent.accumulate_grad(&dx);
            }),
        )
    }
}

pub(crate) struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn new(
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        sh: usize,
        sw: usize,
        padding: Padding,
    ) -> Result<ConvGeom> {
        let (ph, pw) = match padding {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let ho = h.div_ceil(sh);
                let wo = w.div_ceil(sw);
                let ph = ((ho - 1) * sh + kh).saturating_sub(h);
                let pw = ((wo - 1) * sw + kw).saturating_sub(w);
                (ph, pw)
            }
        };
        if kh > h + ph || kw > w + pw {
            return Err(Error::Shape(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + ph,
                w + pw
            )));
        }
        Ok(ConvGeom {
            kh,
            kw,
            sh,
            sw,
            pad_top: ph / 2,
            pad_left: pw / 2,
            ho: (h + ph - kh) / sh + 1,
            wo: (w + pw - kw) / sw + 1,
        })
    }
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, g: &ConvGeom, col: &mut [f64]) {
    let hw_out = g.ho * g.wo;
    let mut row = 0;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                row += 1;
                for oh in 0..g.ho {
                    let ih = (oh * g.sh + ki) as isize - g.pad_top as isize;
                    if ih < 0 || ih >= h as isize {
                        dst[oh * g.wo..(oh + 1) * g.wo].iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let ih = ih as usize;
                    for ow in 0..g.wo {
                        let iw = (ow * g.sw + kj) as isize - g.pad_left as isize;
                        dst[oh * g.wo + ow] = if iw < 0 || iw >= w as isize {
                            0.0
                        } else {
                            plane[ih * w + iw as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], c: usize, h: usize, w: usize, g: &ConvGeom, x: &mut [f64]) {
    let hw_out = g.ho * g.wo;
    let mut row = 0;
    for ci in 0..c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &col[row * hw_out..(row + 1) * hw_out];
                row += 1;
                for oh in 0..g.ho {
                    let ih = (oh * g.sh + ki) as isize - g.pad_top as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let ih = ih as usize;
                    for ow in 0..g.wo {
                        let iw = (ow * g.sw + kj) as isize - g.pad_left as isize;
                        if iw >= 0 && iw < w as isize {
                            x[ci * h * w + ih * w + iw as usize] += src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Batch normalization in training mode. Normalizes each channel by the
/// batch statistics (over batch and spatial dims) and returns the statistics
/// so the caller can update running averages. Input is [B, C] or [B, C, H, W].
pub fn batchnorm_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (b, c, hw) = bn_dims(x)?;
    if b < 2 {
        return Err(Error::Data(format!(
            "batchnorm: degenerate batch of size {b} in train mode"
        )));
    }
    let n = (b * hw) as f64;
    let d = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    bn_for_each(b, c, hw, |ci, idx| {
        mean[ci] += d[idx];
    });
    mean.iter_mut().for_each(|m| *m /= n);
    bn_for_each(b, c, hw, |ci, idx| {
        let z = d[idx] - mean[ci];
        var[ci] += z * z;
    });
    var.iter_mut().for_each(|v| *v /= n);

    let y = bn_affine(&d, b, c, hw, &mean, &var, gamma, beta, eps);
    let backward = bn_backward(x, gamma, beta, d, b, c, hw, mean.clone(), var.clone(), eps, true);
    let out = Tensor::from_op(
        y,
        x.shape().to_vec(),
        vec![x.clone(), gamma.clone(), beta.clone()],
        backward,
    );
    Ok((out, mean, var))
}

/// Batch normalization in eval mode using supplied running statistics; a
/// deterministic per-channel affine map.
pub fn batchnorm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Result<Tensor> {
    let (b, c, hw) = bn_dims(x)?;
    if mean.len() != c || var.len() != c {
        return Err(Error::Shape(format!(
            "batchnorm_eval: stats of length {}/{} for {c} channels",
            mean.len(),
            var.len()
        )));
    }
    let d = x.data();
    let y = bn_affine(&d, b, c, hw, mean, var, gamma, beta, eps);
    let backward = bn_backward(
        x,
        gamma,
        beta,
        d,
        b,
        c,
        hw,
        mean.to_vec(),
        var.to_vec(),
        eps,
        false,
    );
    Ok(Tensor::from_op(
        y,
        x.shape().to_vec(),
        vec![x.clone(), gamma.clone(), beta.clone()],
        backward,
    ))
}

fn bn_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [b, c] => Ok((*b, *c, 1)),
        [b, c, h, w] => Ok((*b, *c, h * w)),
        s => Err(Error::Shape(format!("batchnorm: got {s:?}"))),
    }
}

fn bn_for_each(b: usize, c: usize, hw: usize, mut f: impl FnMut(usize, usize)) {
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * hw;
            for k in 0..hw {
                f(ci, base + k);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn bn_affine(
    d: &[f64],
    b: usize,
    c: usize,
    hw: usize,
    mean: &[f64],
    var: &[f64],
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Vec<f64> {
    let gm = gamma.data();
    let bt = beta.data();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut y = vec![0.0; d.len()];
    bn_for_each(b, c, hw, |ci, idx| {
        y[idx] = gm[ci] * (d[idx] - mean[ci]) * inv_std[ci] + bt[ci];
    });
    y
}

#[allow(clippy::too_many_arguments)]
fn bn_backward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    d: Vec<f64>,
    b: usize,
    c: usize,
    hw: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
    eps: f64,
    train: bool,
) -> Box<dyn Fn(&[f64])> {
    let (px, pg, pb) = (x.clone(), gamma.clone(), beta.clone());
    let gm = gamma.data();
    Box::new(move |g| {
        let n = (b * hw) as f64;
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        bn_for_each(b, c, hw, |ci, idx| {
            let xhat = (d[idx] - mean[ci]) * inv_std[ci];
            dgamma[ci] += g[idx] * xhat;
            dbeta[ci] += g[idx];
            sum_g[ci] += g[idx];
            sum_gx[ci] += g[idx] * xhat;
        });
        if px.requires_grad() {
            let mut dx = vec![0.0; d.len()];
            bn_for_each(b, c, hw, |ci, idx| {
                let xhat = (d[idx] - mean[ci]) * inv_std[ci];
                dx[idx] = if train {
                    gm[ci] * inv_std[ci]
                        * (g[idx] - sum_g[ci] / n - xhat * sum_gx[ci] / n)
                } else {
                    gm[ci] * inv_std[ci] * g[idx]
                };
            });
            px.accumulate_grad(&dx);
        }
        pg.accumulate_grad(&dgamma);
        pb.accumulate_grad(&dbeta);
    })
}

/// Layer normalization over the last dimension with learnable scale/shift.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let shape = x.shape().to_vec();
    let dsz = *shape
        .last()
        .ok_or_else(|| Error::Shape("layer_norm on 0-d tensor".into()))?;
    if gamma.shape() != [dsz] || beta.shape() != [dsz] {
        return Err(Error::Shape(format!(
            "layer_norm: gamma {:?} / beta {:?} vs width {dsz}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let rows = x.numel() / dsz;
    let d = x.data();
    let gm = gamma.data();
    let bt = beta.data();
    let mut y = vec![0.0; d.len()];
    let mut means = vec![0.0; rows];
    let mut inv_stds = vec![0.0; rows];
    for r in 0..rows {
        let row = &d[r * dsz..(r + 1) * dsz];
        let mu: f64 = row.iter().sum::<f64>() / dsz as f64;
        let var: f64 = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / dsz as f64;
        let inv = 1.0 / (var + eps).sqrt();
        means[r] = mu;
        inv_stds[r] = inv;
        for j in 0..dsz {
            y[r * dsz + j] = gm[j] * (row[j] - mu) * inv + bt[j];
        }
    }
    let (px, pg, pb) = (x.clone(), gamma.clone(), beta.clone());
    Ok(Tensor::from_op(
        y,
        shape,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g| {
            let mut dgamma = vec![0.0; dsz];
            let mut dbeta = vec![0.0; dsz];
            let mut dx = vec![0.0; d.len()];
            for r in 0..rows {
                let row = &d[r * dsz..(r + 1) * dsz];
                let gs = &g[r * dsz..(r + 1) * dsz];
                let inv = inv_stds[r];
                let mu = means[r];
                let mut mean_gi = 0.0;
                let mut mean_gx = 0.0;
                for j in 0..dsz {
                    let xhat = (row[j] - mu) * inv;
                    let gi = gs[j] * gm[j];
                    dgamma[j] += gs[j] * xhat;
                    dbeta[j] += gs[j];
                    mean_gi += gi;
                    mean_gx += gi * xhat;
                }
                mean_gi /= dsz as f64;
                mean_gx /= dsz as f64;
                for j in 0..dsz {
                    let xhat = (row[j] - mu) * inv;
                    dx[r * dsz + j] = inv * (gs[j] * gm[j] - mean_gi - xhat * mean_gx);
                }
            }
            if px.requires_grad() {
                px.accumulate_grad(&dx);
            }
            pg.accumulate_grad(&dgamma);
            pb.accumulate_grad(&dbeta);
        }),
    ))
}
