//! Waveform ↔ time-frequency conversion and log-mel features.
//!
//! The magnitude spectrogram is the attribution domain: explanations mask
//! magnitudes and the audio is rebuilt with the original phase. `istft` is
//! linear in the magnitude at fixed phase, and [`istft_vjp`] is the adjoint
//! of that linear map, which lets gradients flow from waveform space back
//! onto spectrogram bins.

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use crate::{scalar, Scalar};

/// Analysis window shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hann,
}

/// Short-time Fourier transform parameters.
///
/// Defaults follow 16 kHz speech practice: 25 ms windows, 10 ms hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_fft: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            sample_rate: 16_000,
            win_length: 400,
            hop_length: 160,
            n_fft: 512,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    /// Frequency bins of the half spectrum.
    pub fn freq_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frame count for a signal of `len` samples (no padding, left-aligned).
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.win_length {
            0
        } else {
            (len - self.win_length) / self.hop_length + 1
        }
    }

    /// Length reconstructed from `frames` frames.
    pub fn output_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop_length + self.win_length
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(CoreError::invalid("sample_rate must be positive"));
        }
        if self.hop_length == 0 || self.win_length == 0 || self.n_fft == 0 {
            return Err(CoreError::invalid("stft lengths must be positive"));
        }
        if !(self.hop_length <= self.win_length && self.win_length <= self.n_fft) {
            return Err(CoreError::invalid(format!(
                "need hop ({}) <= win ({}) <= n_fft ({})",
                self.hop_length, self.win_length, self.n_fft
            )));
        }
        // Overlap-add invertibility: the squared-window sum over hops must be
        // bounded away from zero in steady state, otherwise the window-square
        // normalization in `istft` cannot undo the analysis windowing.
        let w = window::<f64>(self.window, self.win_length);
        for offset in 0..self.hop_length {
            let mut acc = 0.0f64;
            let mut j = offset;
            while j < self.win_length {
                acc += w[j] * w[j];
                j += self.hop_length;
            }
            if acc <= 1e-8 {
                return Err(CoreError::invalid(
                    "window/hop pair violates the overlap-add condition",
                ));
            }
        }
        Ok(())
    }
}

/// Mono audio signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

impl<T: Scalar> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::invalid("waveform must be non-empty"));
        }
        if sample_rate == 0 {
            return Err(CoreError::invalid("sample rate must be positive"));
        }
        if !samples.iter().all(|x| x.is_finite()) {
            return Err(CoreError::invalid("waveform contains non-finite samples"));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Waveform<U> {
        Waveform {
            samples: self.samples.iter().map(|&x| U::from(x).unwrap()).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Non-negative STFT magnitudes, shape `[frames, freq_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Magnitude<T> {
    pub bins: Tensor<T>,
}

/// STFT phase angles in radians, shape `[frames, freq_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase<T> {
    pub bins: Tensor<T>,
}

impl<T: Scalar> Magnitude<T> {
    pub fn frames(&self) -> usize {
        self.bins.rows()
    }

    pub fn freq_bins(&self) -> usize {
        self.bins.cols()
    }
}

impl<T: Scalar> Phase<T> {
    pub fn frames(&self) -> usize {
        self.bins.rows()
    }

    pub fn freq_bins(&self) -> usize {
        self.bins.cols()
    }
}

/// Periodic analysis window of length `len`.
pub fn window<T: Scalar>(kind: WindowKind, len: usize) -> Vec<T> {
    match kind {
        WindowKind::Hann => (0..len)
            .map(|i| {
                let x = std::f64::consts::TAU * i as f64 / len as f64;
                scalar(0.5 * (1.0 - x.cos()))
            })
            .collect(),
    }
}

/// Forward STFT: windowed frames, zero-padded to `n_fft`, half spectrum.
pub fn stft<T: Scalar>(x: &Waveform<T>, cfg: &StftConfig) -> Result<(Magnitude<T>, Phase<T>)> {
    cfg.validate()?;
    if x.len() < cfg.win_length {
        return Err(CoreError::invalid(format!(
            "signal of {} samples is shorter than one window ({})",
            x.len(),
            cfg.win_length
        )));
    }
    let frames = cfg.num_frames(x.len());
    let bins = cfg.freq_bins();
    let w = window::<T>(cfg.window, cfg.win_length);
    let fft = FftPlanner::<T>::new().plan_fft_forward(cfg.n_fft);

    let mut mag = Tensor::zeros(&[frames, bins]);
    let mut phase = Tensor::zeros(&[frames, bins]);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.n_fft];
    for f in 0..frames {
        let start = f * cfg.hop_length;
        for (j, slot) in buf.iter_mut().enumerate() {
            let v = if j < cfg.win_length { x.samples[start + j] * w[j] } else { T::zero() };
            *slot = Complex::new(v, T::zero());
        }
        fft.process(&mut buf);
        for k in 0..bins {
            let s = buf[k];
            mag.set2(f, k, s.norm());
            phase.set2(f, k, s.im.atan2(s.re));
        }
    }
    Ok((Magnitude { bins: mag }, Phase { bins: phase }))
}

fn check_pair_shapes<T: Scalar>(m: &Magnitude<T>, p: &Phase<T>, cfg: &StftConfig) -> Result<()> {
    if m.bins.dims() != p.bins.dims() {
        return Err(CoreError::shape(format!(
            "magnitude {:?} vs phase {:?}",
            m.bins.dims(),
            p.bins.dims()
        )));
    }
    if m.freq_bins() != cfg.freq_bins() {
        return Err(CoreError::shape(format!(
            "{} frequency bins but config implies {}",
            m.freq_bins(),
            cfg.freq_bins()
        )));
    }
    if m.frames() == 0 {
        return Err(CoreError::invalid("spectrogram has no frames"));
    }
    Ok(())
}

/// Squared-window overlap-add sum used for synthesis normalization.
fn window_square_sum<T: Scalar>(w: &[T], frames: usize, hop: usize, out_len: usize) -> Vec<T> {
    let mut ws = vec![T::zero(); out_len];
    for f in 0..frames {
        let start = f * hop;
        for (j, &wj) in w.iter().enumerate() {
            ws[start + j] += wj * wj;
        }
    }
    ws
}

/// Inverse STFT by overlap-add with squared-window normalization.
///
/// Output has `(frames - 1) * hop + win_length` samples, resized to
/// `target_len` when given (zero-filled past the last full frame). At fixed
/// phase this map is linear in the magnitudes.
pub fn istft<T: Scalar>(
    m: &Magnitude<T>,
    p: &Phase<T>,
    cfg: &StftConfig,
    target_len: Option<usize>,
) -> Result<Waveform<T>> {
    cfg.validate()?;
    check_pair_shapes(m, p, cfg)?;
    let frames = m.frames();
    let bins = cfg.freq_bins();
    let n = cfg.n_fft;
    let out_len = cfg.output_len(frames);
    let w = window::<T>(cfg.window, cfg.win_length);
    let ifft = FftPlanner::<T>::new().plan_fft_inverse(n);
    let inv_n = T::one() / T::from_usize(n).unwrap();

    let mut out = vec![T::zero(); out_len];
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    for f in 0..frames {
        // Hermitian extension of the half spectrum.
        for k in 0..bins {
            let mag = m.bins.at2(f, k);
            let ph = p.bins.at2(f, k);
            buf[k] = Complex::new(mag * ph.cos(), mag * ph.sin());
        }
        for k in bins..n {
            buf[k] = buf[n - k].conj();
        }
        ifft.process(&mut buf);
        let start = f * cfg.hop_length;
        for j in 0..cfg.win_length {
            out[start + j] += buf[j].re * inv_n * w[j];
        }
    }

    let ws = window_square_sum(&w, frames, cfg.hop_length, out_len);
    let tiny = scalar::<T>(1e-8) * ws.iter().fold(T::zero(), |a, &b| a.max(b));
    for (o, &s) in out.iter_mut().zip(&ws) {
        *o = if s > tiny { *o / s } else { T::zero() };
    }

    if let Some(len) = target_len {
        out.resize(len, T::zero());
    }
    Waveform::new(out, cfg.sample_rate)
}

/// Adjoint of [`istft`] with respect to the magnitudes at fixed phase.
///
/// Given `d loss / d waveform`, returns `d loss / d magnitude` of shape
/// `[frames, freq_bins]`. The gradient length must equal the natural istft
/// output length for the phase's frame count.
pub fn istft_vjp<T: Scalar>(
    grad_wave: &[T],
    p: &Phase<T>,
    cfg: &StftConfig,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    if p.freq_bins() != cfg.freq_bins() {
        return Err(CoreError::shape(format!(
            "{} frequency bins but config implies {}",
            p.freq_bins(),
            cfg.freq_bins()
        )));
    }
    let frames = p.frames();
    let out_len = cfg.output_len(frames);
    if grad_wave.len() != out_len {
        return Err(CoreError::shape(format!(
            "gradient length {} does not match istft output length {}",
            grad_wave.len(),
            out_len
        )));
    }
    let bins = cfg.freq_bins();
    let n = cfg.n_fft;
    let w = window::<T>(cfg.window, cfg.win_length);
    let ws = window_square_sum(&w, frames, cfg.hop_length, out_len);
    let tiny = scalar::<T>(1e-8) * ws.iter().fold(T::zero(), |a, &b| a.max(b));
    let fft = FftPlanner::<T>::new().plan_fft_forward(n);
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let two = scalar::<T>(2.0);

    let mut grad = Tensor::zeros(&[frames, bins]);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
    for f in 0..frames {
        let start = f * cfg.hop_length;
        for (j, slot) in buf.iter_mut().enumerate() {
            let v = if j < cfg.win_length && ws[start + j] > tiny {
                grad_wave[start + j] * w[j] / ws[start + j]
            } else {
                T::zero()
            };
            *slot = Complex::new(v, T::zero());
        }
        fft.process(&mut buf);
        for k in 0..bins {
            // Half-spectrum bins except DC and Nyquist appear twice in the
            // Hermitian extension.
            let mult = if k == 0 || k == n / 2 { T::one() } else { two };
            let ph = p.bins.at2(f, k);
            let e = Complex::new(ph.cos(), ph.sin());
            grad.set2(f, k, mult * inv_n * (e * buf[k].conj()).re);
        }
    }
    Ok(grad)
}

/// Mel filterbank parameters for the classifier front end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Additive stabilizer inside the logarithm.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig { n_mels: 40, f_min: 0.0, f_max: 8_000.0, log_floor: 1e-10 }
    }
}

impl MelConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.n_mels == 0 {
            return Err(CoreError::invalid("n_mels must be >= 1"));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(0.0 <= self.f_min && self.f_min < self.f_max && self.f_max <= nyquist) {
            return Err(CoreError::invalid(format!(
                "need 0 <= f_min ({}) < f_max ({}) <= nyquist ({nyquist})",
                self.f_min, self.f_max
            )));
        }
        if self.log_floor <= 0.0 {
            return Err(CoreError::invalid("log_floor must be positive"));
        }
        Ok(())
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank over the FFT bins of an [`StftConfig`].
#[derive(Debug, Clone)]
pub struct MelFilterbank<T> {
    pub n_mels: usize,
    pub n_bins: usize,
    /// Row-major `[n_mels, n_bins]` weights.
    weights: Vec<T>,
    centers_hz: Vec<f64>,
    pub log_floor: f64,
}

impl<T: Scalar> MelFilterbank<T> {
    pub fn new(mel: &MelConfig, stft: &StftConfig) -> Result<Self> {
        stft.validate()?;
        mel.validate(stft.sample_rate)?;
        let n_bins = stft.freq_bins();
        let bin_hz = stft.sample_rate as f64 / stft.n_fft as f64;
        let lo = hz_to_mel(mel.f_min);
        let hi = hz_to_mel(mel.f_max);
        let grid: Vec<f64> = (0..mel.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (mel.n_mels + 1) as f64))
            .collect();

        let mut weights = vec![T::zero(); mel.n_mels * n_bins];
        for m in 0..mel.n_mels {
            let (left, center, right) = (grid[m], grid[m + 1], grid[m + 2]);
            let mut row_sum = 0.0f64;
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let rise = (f - left) / (center - left).max(f64::EPSILON);
                let fall = (right - f) / (right - center).max(f64::EPSILON);
                let v = rise.min(fall).max(0.0);
                if v > 0.0 {
                    weights[m * n_bins + k] = scalar(v);
                    row_sum += v;
                }
            }
            if row_sum <= 0.0 {
                return Err(CoreError::invalid(format!(
                    "mel band {m} covers no FFT bin; reduce n_mels or increase n_fft"
                )));
            }
        }
        Ok(MelFilterbank {
            n_mels: mel.n_mels,
            n_bins,
            weights,
            centers_hz: grid[1..=mel.n_mels].to_vec(),
            log_floor: mel.log_floor,
        })
    }

    #[inline]
    pub fn row(&self, m: usize) -> &[T] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// Center frequency of band `m` in Hz.
    pub fn center_hz(&self, m: usize) -> f64 {
        self.centers_hz[m]
    }

    /// Total filter weight applied to FFT bin `k` across all bands.
    pub fn bin_coverage(&self, k: usize) -> T {
        (0..self.n_mels).fold(T::zero(), |acc, m| acc + self.weights[m * self.n_bins + k])
    }
}

/// Log-power mel features: `ln(filterbank · magnitude² + log_floor)`.
pub fn log_mel<T: Scalar>(m: &Magnitude<T>, fb: &MelFilterbank<T>) -> Result<Tensor<T>> {
    if m.freq_bins() != fb.n_bins {
        return Err(CoreError::shape(format!(
            "magnitude has {} bins, filterbank expects {}",
            m.freq_bins(),
            fb.n_bins
        )));
    }
    let frames = m.frames();
    let floor = scalar::<T>(fb.log_floor);
    let mut out = Tensor::zeros(&[frames, fb.n_mels]);
    for t in 0..frames {
        let row = m.bins.row(t);
        for band in 0..fb.n_mels {
            let fbrow = fb.row(band);
            let mut acc = T::zero();
            for (x, wgt) in row.iter().zip(fbrow) {
                acc += *wgt * *x * *x;
            }
            out.set2(t, band, (acc + floor).ln());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
