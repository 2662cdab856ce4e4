//! Forward and adjoint computations for the tape primitives.
//!
//! Everything here is a pure function over tensors; the tape decides when to
//! call what. Batched layouts: activations `[n, c, h, w]`, dense `[n, f]`,
//! conv kernels `[c_out, c_in, kh, kw]`.

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::{window, MelFilterbank, StftConfig};
use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use crate::{scalar, Scalar};

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
        return Err(CoreError::shape(format!(
            "matmul {:?} x {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(&[n, m]);
    let (ad, bd, od) = (a.data(), b.data(), out.data_mut());
    for i in 0..n {
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &bd[p * m..(p + 1) * m];
            let orow = &mut od[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Ok(out)
}

/// Gradients of `matmul`: `(g · bᵀ, aᵀ · g)`.
pub fn matmul_backward<T: Scalar>(
    grad: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut ga = Tensor::zeros(&[n, k]);
    let mut gb = Tensor::zeros(&[k, m]);
    let (gd, ad, bd) = (grad.data(), a.data(), b.data());
    {
        let gad = ga.data_mut();
        for i in 0..n {
            for p in 0..k {
                let brow = &bd[p * m..(p + 1) * m];
                let grow = &gd[i * m..(i + 1) * m];
                let mut acc = T::zero();
                for (&g, &bv) in grow.iter().zip(brow) {
                    acc += g * bv;
                }
                gad[i * k + p] = acc;
            }
        }
    }
    {
        let gbd = gb.data_mut();
        for i in 0..n {
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == T::zero() {
                    continue;
                }
                let grow = &gd[i * m..(i + 1) * m];
                let brow = &mut gbd[p * m..(p + 1) * m];
                for (o, &g) in brow.iter_mut().zip(grow) {
                    *o += aip * g;
                }
            }
        }
    }
    (ga, gb)
}

pub fn conv2d_out_dims(x: &[usize], k: &[usize], stride: usize) -> Result<[usize; 4]> {
    if x.len() != 4 || k.len() != 4 {
        return Err(CoreError::shape("conv2d expects rank-4 input and kernel".into()));
    }
    if x[1] != k[1] {
        return Err(CoreError::shape(format!(
            "conv2d input has {} channels, kernel expects {}",
            x[1], k[1]
        )));
    }
    if x[2] < k[2] || x[3] < k[3] {
        return Err(CoreError::invalid(format!(
            "conv2d input {}x{} smaller than kernel {}x{}",
            x[2], x[3], k[2], k[3]
        )));
    }
    Ok([x[0], k[0], (x[2] - k[2]) / stride + 1, (x[3] - k[3]) / stride + 1])
}

/// Valid (no padding) strided convolution with per-channel bias.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let od = conv2d_out_dims(x.dims(), kernel.dims(), stride)?;
    let [n, c_out, oh, ow] = od;
    let (c_in, kh, kw) = (kernel.dims()[1], kernel.dims()[2], kernel.dims()[3]);
    let (h, w) = (x.dims()[2], x.dims()[3]);
    if bias.dims() != [c_out] {
        return Err(CoreError::shape("conv2d bias must be [c_out]".into()));
    }
    let mut out = Tensor::zeros(&od);
    let (xd, kd, bd, odata) = (x.data(), kernel.data(), bias.data(), out.data_mut());
    for b in 0..n {
        for co in 0..c_out {
            let obase = ((b * c_out) + co) * oh * ow;
            odata[obase..obase + oh * ow].fill(bd[co]);
            for ci in 0..c_in {
                let xbase = ((b * c_in) + ci) * h * w;
                let kbase = ((co * c_in) + ci) * kh * kw;
                for dy in 0..kh {
                    for dx in 0..kw {
                        let kv = kd[kbase + dy * kw + dx];
                        if kv == T::zero() {
                            continue;
                        }
                        for oy in 0..oh {
                            let xrow = xbase + (oy * stride + dy) * w + dx;
                            let orow = obase + oy * ow;
                            if stride == 1 {
                                let xs = &xd[xrow..xrow + ow];
                                let os = &mut odata[orow..orow + ow];
                                for (o, &xv) in os.iter_mut().zip(xs) {
                                    *o += kv * xv;
                                }
                            } else {
                                for ox in 0..ow {
                                    odata[orow + ox] += kv * xd[xrow + ox * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `conv2d`: `(g_input, g_kernel, g_bias)`.
pub fn conv2d_backward<T: Scalar>(
    grad: &Tensor<T>,
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [n, c_out, oh, ow] = [grad.dims()[0], grad.dims()[1], grad.dims()[2], grad.dims()[3]];
    let (c_in, kh, kw) = (kernel.dims()[1], kernel.dims()[2], kernel.dims()[3]);
    let (h, w) = (x.dims()[2], x.dims()[3]);
    let mut gx = Tensor::zeros(x.dims());
    let mut gk = Tensor::zeros(kernel.dims());
    let mut gb = Tensor::zeros(&[c_out]);
    let (gd, xd, kd) = (grad.data(), x.data(), kernel.data());
    let gxd = gx.data_mut();
    let gkd = gk.data_mut();
    let gbd = gb.data_mut();
    for b in 0..n {
        for co in 0..c_out {
            let obase = ((b * c_out) + co) * oh * ow;
            let mut bias_acc = T::zero();
            for &g in &gd[obase..obase + oh * ow] {
                bias_acc += g;
            }
            gbd[co] += bias_acc;
            for ci in 0..c_in {
                let xbase = ((b * c_in) + ci) * h * w;
                let kbase = ((co * c_in) + ci) * kh * kw;
                for dy in 0..kh {
                    for dx in 0..kw {
                        let kv = kd[kbase + dy * kw + dx];
                        let mut kacc = T::zero();
                        for oy in 0..oh {
                            let xrow = xbase + (oy * stride + dy) * w + dx;
                            let orow = obase + oy * ow;
                            for ox in 0..ow {
                                let g = gd[orow + ox];
                                let xi = xrow + ox * stride;
                                kacc += g * xd[xi];
                                gxd[xi] += g * kv;
                            }
                        }
                        gkd[kbase + dy * kw + dx] += kacc;
                    }
                }
            }
        }
    }
    (gx, gk, gb)
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled tensor and flat input argmax indices (first-wins ties).
pub fn maxpool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    if x.rank() != 4 {
        return Err(CoreError::shape("maxpool2 expects rank-4 input".into()));
    }
    let [n, c, h, w] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return Err(CoreError::invalid("maxpool2 input smaller than 2x2".into()));
    }
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let (xd, od) = (x.data(), out.data_mut());
    for b in 0..n {
        for ch in 0..c {
            let xbase = ((b * c) + ch) * h * w;
            let obase = ((b * c) + ch) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let i00 = xbase + (2 * oy) * w + 2 * ox;
                    let candidates = [i00, i00 + 1, i00 + w, i00 + w + 1];
                    let mut best = candidates[0];
                    for &idx in &candidates[1..] {
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    od[obase + oy * ow + ox] = xd[best];
                    argmax[obase + oy * ow + ox] = best as u32;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2_backward<T: Scalar>(
    grad: &Tensor<T>,
    argmax: &[u32],
    input_dims: &[usize],
) -> Tensor<T> {
    let mut gx = Tensor::zeros(input_dims);
    let gxd = gx.data_mut();
    for (&g, &idx) in grad.data().iter().zip(argmax) {
        gxd[idx as usize] += g;
    }
    gx
}

/// `[n, c, h, w]` → `[n, c]` spatial mean.
pub fn global_mean_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(CoreError::shape("global mean pool expects rank-4 input".into()));
    }
    let [n, c, h, w] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let area = T::from_usize(h * w).unwrap();
    let mut out = Tensor::zeros(&[n, c]);
    let (xd, od) = (x.data(), out.data_mut());
    for b in 0..n {
        for ch in 0..c {
            let base = ((b * c) + ch) * h * w;
            let mut acc = T::zero();
            for &v in &xd[base..base + h * w] {
                acc += v;
            }
            od[b * c + ch] = acc / area;
        }
    }
    Ok(out)
}

pub fn global_mean_pool_backward<T: Scalar>(grad: &Tensor<T>, input_dims: &[usize]) -> Tensor<T> {
    let [n, c, h, w] = [input_dims[0], input_dims[1], input_dims[2], input_dims[3]];
    let inv_area = T::one() / T::from_usize(h * w).unwrap();
    let mut gx = Tensor::zeros(input_dims);
    let gxd = gx.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let g = grad.data()[b * c + ch] * inv_area;
            let base = ((b * c) + ch) * h * w;
            for v in &mut gxd[base..base + h * w] {
                *v += g;
            }
        }
    }
    gx
}

/// Numerically stable row softmax of `[n, classes]` logits.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let (n, c) = (logits.rows(), logits.cols());
    let mut out = Tensor::zeros(&[n, c]);
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut denom = T::zero();
        let mut exps = vec![T::zero(); c];
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            exps[j] = e;
            denom += e;
        }
        for j in 0..c {
            out.set2(i, j, exps[j] / denom);
        }
    }
    out
}

/// Mean cross-entropy over the batch; also returns the softmax probabilities.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 2 || logits.rows() != labels.len() {
        return Err(CoreError::shape(format!(
            "cross-entropy on logits {:?} with {} labels",
            logits.dims(),
            labels.len()
        )));
    }
    let c = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(CoreError::invalid(format!("label {bad} out of range for {c} classes")));
    }
    let probs = softmax_rows(logits);
    let mut loss = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        // ln of a stable softmax entry; clamp to avoid -inf on underflow.
        let p = probs.at2(i, label).max(T::min_positive_value());
        loss -= p.ln();
    }
    Ok((loss / T::from_usize(labels.len()).unwrap(), probs))
}

/// Gradient of mean cross-entropy w.r.t. logits: `(probs − onehot) / n`.
pub fn softmax_cross_entropy_backward<T: Scalar>(
    upstream: T,
    probs: &Tensor<T>,
    labels: &[usize],
) -> Tensor<T> {
    let (n, c) = (probs.rows(), probs.cols());
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut g = Tensor::zeros(&[n, c]);
    let gd = g.data_mut();
    for i in 0..n {
        for j in 0..c {
            let onehot = if labels[i] == j { T::one() } else { T::zero() };
            gd[i * c + j] = upstream * inv_n * (probs.at2(i, j) - onehot);
        }
    }
    g
}

/// Magnitude STFT of a rank-1 signal tensor: `([frames, bins], phase)`.
pub fn stft_mag<T: Scalar>(x: &Tensor<T>, cfg: &StftConfig) -> Result<(Tensor<T>, Tensor<T>)> {
    if x.rank() != 1 {
        return Err(CoreError::shape("stft expects a rank-1 signal".into()));
    }
    let wave = crate::dsp::Waveform::new(x.data().to_vec(), cfg.sample_rate)?;
    let (m, p) = crate::dsp::stft(&wave, cfg)?;
    Ok((m.bins, p.bins))
}

/// Adjoint of the magnitude STFT: waveform gradient from magnitude gradient.
///
/// Uses the saved phase: `d|S|/dx = w[j]·cos(2πkj/N + φ)` summed per frame
/// via one forward FFT of `gM ⊙ e^{-iφ}`.
pub fn stft_mag_vjp<T: Scalar>(
    grad_mag: &Tensor<T>,
    phase: &Tensor<T>,
    cfg: &StftConfig,
    signal_len: usize,
) -> Result<Tensor<T>> {
    let frames = grad_mag.rows();
    let bins = grad_mag.cols();
    if phase.dims() != grad_mag.dims() || bins != cfg.freq_bins() {
        return Err(CoreError::shape("stft vjp phase/grad shape mismatch".into()));
    }
    let n = cfg.n_fft;
    let w = window::<T>(cfg.window, cfg.win_length);
    let fft = FftPlanner::<T>::new().plan_fft_forward(n);
    let mut gx = Tensor::zeros(&[signal_len]);
    let gxd = gx.data_mut();
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    for f in 0..frames {
        for (k, slot) in buf.iter_mut().enumerate() {
            *slot = if k < bins {
                let ph = phase.at2(f, k);
                Complex::new(ph.cos(), -ph.sin()) * grad_mag.at2(f, k)
            } else {
                Complex::new(T::zero(), T::zero())
            };
        }
        fft.process(&mut buf);
        let start = f * cfg.hop_length;
        for j in 0..cfg.win_length {
            gxd[start + j] += w[j] * buf[j].re;
        }
    }
    Ok(gx)
}

/// Log-mel forward returning also the pre-log denominators for the adjoint.
pub fn log_mel_aux<T: Scalar>(
    mag: &Tensor<T>,
    fb: &MelFilterbank<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if mag.rank() != 2 || mag.cols() != fb.n_bins {
        return Err(CoreError::shape(format!(
            "log-mel on {:?}, filterbank expects {} bins",
            mag.dims(),
            fb.n_bins
        )));
    }
    let frames = mag.rows();
    let floor = scalar::<T>(fb.log_floor);
    let mut out = Tensor::zeros(&[frames, fb.n_mels]);
    let mut denom = Tensor::zeros(&[frames, fb.n_mels]);
    for t in 0..frames {
        let row = mag.row(t);
        for band in 0..fb.n_mels {
            let mut acc = T::zero();
            for (x, wgt) in row.iter().zip(fb.row(band)) {
                acc += *wgt * *x * *x;
            }
            let d = acc + floor;
            out.set2(t, band, d.ln());
            denom.set2(t, band, d);
        }
    }
    Ok((out, denom))
}

/// Adjoint of log-mel: `gM[t,k] = 2·M[t,k]·Σ_band g[t,band]·w[band,k]/denom`.
pub fn log_mel_vjp<T: Scalar>(
    grad_out: &Tensor<T>,
    mag: &Tensor<T>,
    denom: &Tensor<T>,
    fb: &MelFilterbank<T>,
) -> Tensor<T> {
    let frames = mag.rows();
    let bins = mag.cols();
    let two = scalar::<T>(2.0);
    let mut gm = Tensor::zeros(&[frames, bins]);
    for t in 0..frames {
        let mrow = mag.row(t);
        let base = t * bins;
        for band in 0..fb.n_mels {
            let gscaled = grad_out.at2(t, band) / denom.at2(t, band);
            if gscaled == T::zero() {
                continue;
            }
            let fbrow = fb.row(band);
            let gmrow = &mut gm.data_mut()[base..base + bins];
            for k in 0..bins {
                gmrow[k] += two * mrow[k] * fbrow[k] * gscaled;
            }
        }
    }
    gm
}
