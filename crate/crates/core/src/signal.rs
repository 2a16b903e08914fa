//! Time-frequency analysis/synthesis and channel stacking.
//!
//! Signals are real multichannel waveforms; the STFT produces a one-sided
//! complex spectrogram per channel. Analysis pads the signal by
//! `fft_size - shift` on both ends so every input sample is covered by the
//! full set of overlapping windows, which makes the inverse transform exact
//! (up to rounding) for any window/shift pair whose overlap-add sum stays
//! positive.

use ndarray::{Array2, Array3, ArrayView1};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("signal is empty")]
    EmptySignal,
    #[error("invalid sample rate: {0}")]
    InvalidSampleRate(u32),
    #[error("signal contains non-finite samples")]
    NonFiniteSamples,
    #[error("channel lengths differ")]
    ChannelLengthMismatch,
    #[error("invalid STFT config: {0}")]
    InvalidConfig(String),
    #[error("window/shift pair is not reconstructable (min overlap-add sum {min_sum:.3e})")]
    NonColaConfig { min_sum: f64 },
    #[error("sample rates differ across arrays: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("array lengths differ under strict stacking: {0} vs {1}")]
    ArrayLengthMismatch(usize, usize),
    #[error("no arrays to stack")]
    NoArrays,
    #[error("requested {requested} output samples but only {available} are reconstructable")]
    OutputTooLong { requested: usize, available: usize },
    #[error("spectrogram bins inconsistent with config: {0}")]
    ShapeMismatch(String),
}

/// Analysis/synthesis window shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    SqrtHann,
    Hann,
}

/// Edge handling for the analysis padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    Reflect,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub shift: usize,
    pub window: WindowKind,
    pub pad_mode: PadMode,
}

impl Default for StftConfig {
    /// 1024-point FFT with 256-sample shift and sqrt-Hann windows, the usual
    /// far-field setup at 16 kHz.
    fn default() -> Self {
        Self {
            fft_size: 1024,
            shift: 256,
            window: WindowKind::SqrtHann,
            pad_mode: PadMode::Zero,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<(), SignalError> {
        if self.fft_size == 0 || !self.fft_size.is_power_of_two() {
            return Err(SignalError::InvalidConfig(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        if self.shift == 0 || self.shift > self.fft_size {
            return Err(SignalError::InvalidConfig(format!(
                "shift {} must be in 1..={}",
                self.shift, self.fft_size
            )));
        }
        let min_sum = self.min_overlap_sum();
        if min_sum <= 1e-6 {
            return Err(SignalError::NonColaConfig { min_sum });
        }
        Ok(())
    }

    /// One-sided bin count.
    pub fn frequencies(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frame_shift_seconds(&self, sample_rate: u32) -> f64 {
        self.shift as f64 / sample_rate as f64
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        (self.padded_len(len) - self.fft_size) / self.shift + 1
    }

    fn pad_front(&self) -> usize {
        self.fft_size - self.shift
    }

    fn padded_len(&self, len: usize) -> usize {
        let mut padded = len + 2 * self.pad_front();
        if padded < self.fft_size {
            padded = self.fft_size;
        }
        let rem = (padded - self.fft_size) % self.shift;
        if rem != 0 {
            padded += self.shift - rem;
        }
        padded
    }

    pub(crate) fn analysis_window(&self) -> Vec<f64> {
        window_values(self.window, self.fft_size)
    }

    pub(crate) fn synthesis_window(&self) -> Vec<f64> {
        window_values(self.window, self.fft_size)
    }

    /// Minimum of the periodic overlap-add sum of the analysis/synthesis
    /// window product. Zero means some sample positions are unrecoverable.
    fn min_overlap_sum(&self) -> f64 {
        let wa = self.analysis_window();
        let ws = self.synthesis_window();
        let mut min_sum = f64::INFINITY;
        for p in 0..self.shift {
            let mut sum = 0.0;
            let mut i = p;
            while i < self.fft_size {
                sum += wa[i] * ws[i];
                i += self.shift;
            }
            min_sum = min_sum.min(sum);
        }
        min_sum
    }
}

fn window_values(kind: WindowKind, size: usize) -> Vec<f64> {
    (0..size)
        .map(|i| {
            // periodic Hann
            let hann = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / size as f64).cos());
            match kind {
                WindowKind::Hann => hann,
                WindowKind::SqrtHann => hann.sqrt(),
            }
        })
        .collect()
}

/// A block of real multichannel audio.
#[derive(Debug, Clone)]
pub struct WaveformSegment {
    samples: Array2<f64>,
    sample_rate: u32,
    start_offset: f64,
}

impl WaveformSegment {
    pub fn new(samples: Array2<f64>, sample_rate: u32, start_offset: f64) -> Result<Self, SignalError> {
        if sample_rate == 0 {
            return Err(SignalError::InvalidSampleRate(sample_rate));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(SignalError::NonFiniteSamples);
        }
        Ok(Self {
            samples,
            sample_rate,
            start_offset,
        })
    }

    pub fn from_channels(
        channels: Vec<Vec<f64>>,
        sample_rate: u32,
        start_offset: f64,
    ) -> Result<Self, SignalError> {
        if channels.is_empty() {
            return Err(SignalError::EmptySignal);
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(SignalError::ChannelLengthMismatch);
        }
        let flat: Vec<f64> = channels.into_iter().flatten().collect();
        let samples = Array2::from_shape_vec((flat.len() / len.max(1), len), flat)
            .map_err(|_| SignalError::ChannelLengthMismatch)?;
        Self::new(samples, sample_rate, start_offset)
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn start_offset(&self) -> f64 {
        self.start_offset
    }

    pub fn duration_seconds(&self) -> f64 {
        self.num_samples() as f64 / self.sample_rate as f64
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut Array2<f64> {
        &mut self.samples
    }

    pub fn channel(&self, c: usize) -> ArrayView1<'_, f64> {
        self.samples.row(c)
    }

    /// Copy of the sample range `[start, end)`, clamped to the segment.
    /// The returned segment's `start_offset` tracks recording time.
    pub fn slice_samples(&self, start: usize, end: usize) -> WaveformSegment {
        let end = end.min(self.num_samples());
        let start = start.min(end);
        WaveformSegment {
            samples: self.samples.slice(ndarray::s![.., start..end]).to_owned(),
            sample_rate: self.sample_rate,
            start_offset: self.start_offset + start as f64 / self.sample_rate as f64,
        }
    }
}

/// Complex one-sided STFT of a multichannel signal,
/// shaped `[channels, frames, frequencies]`.
#[derive(Debug, Clone)]
pub struct MultiChannelSpectrogram {
    bins: Array3<Complex64>,
    config: StftConfig,
    sample_rate: u32,
}

impl MultiChannelSpectrogram {
    pub fn from_parts(
        bins: Array3<Complex64>,
        config: StftConfig,
        sample_rate: u32,
    ) -> Result<Self, SignalError> {
        if bins.shape()[2] != config.frequencies() {
            return Err(SignalError::ShapeMismatch(format!(
                "{} frequency bins, config expects {}",
                bins.shape()[2],
                config.frequencies()
            )));
        }
        Ok(Self {
            bins,
            config,
            sample_rate,
        })
    }

    pub fn channels(&self) -> usize {
        self.bins.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.bins.shape()[1]
    }

    pub fn frequencies(&self) -> usize {
        self.bins.shape()[2]
    }

    pub fn bins(&self) -> &Array3<Complex64> {
        &self.bins
    }

    pub fn bins_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.bins
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn frame_shift_seconds(&self) -> f64 {
        self.config.frame_shift_seconds(self.sample_rate)
    }
}

fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

fn padded_channel(x: ArrayView1<'_, f64>, padded_len: usize, pad_front: usize, mode: PadMode) -> Vec<f64> {
    let len = x.len();
    let mut out = vec![0.0; padded_len];
    for (i, v) in x.iter().enumerate() {
        out[pad_front + i] = *v;
    }
    if mode == PadMode::Reflect {
        for i in 0..pad_front {
            let src = reflect_index(i as isize - pad_front as isize, len);
            out[i] = x[src];
        }
        for i in (pad_front + len)..padded_len {
            let src = reflect_index(i as isize - pad_front as isize, len);
            out[i] = x[src];
        }
    }
    out
}

/// Per-channel one-sided STFT.
pub fn stft(x: &WaveformSegment, cfg: &StftConfig) -> Result<MultiChannelSpectrogram, SignalError> {
    cfg.validate()?;
    if x.num_samples() == 0 {
        return Err(SignalError::EmptySignal);
    }
    let k = cfg.fft_size;
    let shift = cfg.shift;
    let pad_front = cfg.pad_front();
    let padded_len = cfg.padded_len(x.num_samples());
    let frames = (padded_len - k) / shift + 1;
    let freqs = cfg.frequencies();
    let window = cfg.analysis_window();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(k);
    let mut buf = vec![Complex64::new(0.0, 0.0); k];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];

    let mut bins = Array3::zeros((x.channels(), frames, freqs));
    for c in 0..x.channels() {
        let padded = padded_channel(x.channel(c), padded_len, pad_front, cfg.pad_mode);
        for t in 0..frames {
            let start = t * shift;
            for i in 0..k {
                buf[i] = Complex64::new(padded[start + i] * window[i], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for f in 0..freqs {
                bins[(c, t, f)] = buf[f];
            }
        }
    }
    MultiChannelSpectrogram::from_parts(bins, *cfg, x.sample_rate())
}

/// Overlap-add synthesis back to `out_len` samples per channel.
pub fn istft(sp: &MultiChannelSpectrogram, out_len: usize) -> Result<WaveformSegment, SignalError> {
    let cfg = sp.config();
    cfg.validate()?;
    let channels = sp.channels();
    let mut rows = Vec::with_capacity(channels);
    for c in 0..channels {
        let frames = sp.bins().index_axis(ndarray::Axis(0), c);
        rows.push(istft_frames(&frames.to_owned(), cfg, out_len)?);
    }
    WaveformSegment::from_channels(rows, sp.sample_rate(), 0.0)
}

/// Synthesis of a single channel given `[frames, frequencies]` bins.
pub fn istft_frames(
    frames: &Array2<Complex64>,
    cfg: &StftConfig,
    out_len: usize,
) -> Result<Vec<f64>, SignalError> {
    cfg.validate()?;
    let k = cfg.fft_size;
    let shift = cfg.shift;
    let freqs = cfg.frequencies();
    if frames.ncols() != freqs {
        return Err(SignalError::ShapeMismatch(format!(
            "{} frequency bins, config expects {}",
            frames.ncols(),
            freqs
        )));
    }
    let num_frames = frames.nrows();
    if num_frames == 0 {
        return Err(SignalError::EmptySignal);
    }
    let padded_len = (num_frames - 1) * shift + k;
    let pad_front = cfg.pad_front();
    let available = padded_len - pad_front;
    if out_len > available {
        return Err(SignalError::OutputTooLong {
            requested: out_len,
            available,
        });
    }

    let wa = cfg.analysis_window();
    let ws = cfg.synthesis_window();
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(k);
    let mut buf = vec![Complex64::new(0.0, 0.0); k];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];

    let mut acc = vec![0.0; padded_len];
    let mut norm = vec![0.0; padded_len];
    let scale = 1.0 / k as f64;
    for t in 0..num_frames {
        for f in 0..freqs {
            buf[f] = frames[(t, f)];
        }
        // mirror to the full spectrum; DC/Nyquist imaginary parts drop with re()
        for f in 1..(k - freqs + 1) {
            buf[k - f] = frames[(t, f)].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = t * shift;
        for i in 0..k {
            acc[start + i] += buf[i].re * scale * ws[i];
            norm[start + i] += wa[i] * ws[i];
        }
    }

    let mut out = vec![0.0; out_len];
    for i in 0..out_len {
        let n = norm[pad_front + i];
        if n > 1e-12 {
            out[i] = acc[pad_front + i] / n;
        }
    }
    Ok(out)
}

/// Channel-stacking policy for combining multiple arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackPolicy {
    Strict,
    TruncateToMin,
}

/// Concatenate the channels of several arrays into one virtual array.
/// Channel order is array order, then within-array order. Sample values are
/// copied verbatim.
pub fn stack_arrays(
    arrays: &[WaveformSegment],
    policy: StackPolicy,
) -> Result<WaveformSegment, SignalError> {
    if arrays.is_empty() {
        return Err(SignalError::NoArrays);
    }
    let sr = arrays[0].sample_rate();
    for a in arrays {
        if a.sample_rate() != sr {
            return Err(SignalError::SampleRateMismatch(sr, a.sample_rate()));
        }
    }
    let len = match policy {
        StackPolicy::Strict => {
            let len = arrays[0].num_samples();
            for a in arrays {
                if a.num_samples() != len {
                    return Err(SignalError::ArrayLengthMismatch(len, a.num_samples()));
                }
            }
            len
        }
        StackPolicy::TruncateToMin => arrays.iter().map(|a| a.num_samples()).min().unwrap(),
    };
    let total_channels: usize = arrays.iter().map(|a| a.channels()).sum();
    let mut samples = Array2::zeros((total_channels, len));
    let mut row = 0;
    for a in arrays {
        for c in 0..a.channels() {
            for i in 0..len {
                samples[(row, i)] = a.samples()[(c, i)];
            }
            row += 1;
        }
    }
    WaveformSegment::new(samples, sr, arrays[0].start_offset())
}

/// Scale each per-(frame, frequency) channel vector to unit Euclidean norm.
/// Exact-zero vectors are flagged and left untouched.
pub fn unit_normalize_bins(sp: &MultiChannelSpectrogram) -> (Array3<Complex64>, Array2<bool>) {
    let (channels, frames, freqs) = (sp.channels(), sp.frames(), sp.frequencies());
    let mut out = sp.bins().clone();
    let mut flags = Array2::from_elem((frames, freqs), false);
    for t in 0..frames {
        for f in 0..freqs {
            let mut sq = 0.0;
            for c in 0..channels {
                sq += out[(c, t, f)].norm_sqr();
            }
            if sq == 0.0 {
                flags[(t, f)] = true;
            } else {
                let inv = 1.0 / sq.sqrt();
                for c in 0..channels {
                    out[(c, t, f)] *= inv;
                }
            }
        }
    }
    (out, flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_segment(seed: u64, channels: usize, len: usize, sr: u32) -> WaveformSegment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..channels)
            .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        WaveformSegment::from_channels(rows, sr, 0.0).unwrap()
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let x = WaveformSegment::from_channels(vec![vec![0.0; 16000]], 16000, 0.0).unwrap();
        let sp = stft(&x, &StftConfig::default()).unwrap();
        assert!(sp.bins().iter().all(|b| b.norm() == 0.0));
    }

    #[test]
    fn impulse_at_frame_center_has_flat_magnitude() {
        // With fft 1024, shift 256 the front pad is 768; frame 3 covers padded
        // samples [768, 1792), so an impulse at input sample 512 lands at the
        // frame centre where the sqrt-Hann window is exactly 1.
        let mut samples = vec![0.0; 2048];
        samples[512] = 1.0;
        let x = WaveformSegment::from_channels(vec![samples], 16000, 0.0).unwrap();
        let sp = stft(&x, &StftConfig::default()).unwrap();
        for f in 0..sp.frequencies() {
            let mag = sp.bins()[(0, 3, f)].norm();
            assert!((mag - 1.0).abs() < 1e-9, "bin {f} magnitude {mag}");
        }
    }

    #[test]
    fn round_trip_recovers_signal() {
        for window in [WindowKind::SqrtHann, WindowKind::Hann] {
            for pad_mode in [PadMode::Zero, PadMode::Reflect] {
                let cfg = StftConfig {
                    window,
                    pad_mode,
                    ..StftConfig::default()
                };
                let x = random_segment(7, 4, 32000, 16000);
                let sp = stft(&x, &cfg).unwrap();
                let y = istft(&sp, x.num_samples()).unwrap();
                let peak = x.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let err = x
                    .samples()
                    .iter()
                    .zip(y.samples().iter())
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                assert!(err < 1e-6 * peak, "{window:?}/{pad_mode:?} err {err}");
            }
        }
    }

    #[test]
    fn istft_zero_spectrogram_is_zero() {
        let x = random_segment(1, 2, 8000, 16000);
        let mut sp = stft(&x, &StftConfig::default()).unwrap();
        sp.bins_mut().fill(Complex64::new(0.0, 0.0));
        let y = istft(&sp, 8000).unwrap();
        assert!(y.samples().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn istft_rejects_overlong_output() {
        let x = random_segment(2, 1, 4000, 16000);
        let sp = stft(&x, &StftConfig::default()).unwrap();
        let err = istft(&sp, 10 * 4000).unwrap_err();
        assert!(matches!(err, SignalError::OutputTooLong { .. }));
    }

    #[test]
    fn single_frame_energy_is_local() {
        let cfg = StftConfig::default();
        let x = random_segment(3, 1, 8000, 16000);
        let sp = stft(&x, &cfg).unwrap();
        let mut bins = Array3::zeros(sp.bins().raw_dim());
        let m = 10;
        for f in 0..cfg.frequencies() {
            bins[(0, m, f)] = Complex64::new(0.3, -0.1);
        }
        let sp = MultiChannelSpectrogram::from_parts(bins, cfg, 16000).unwrap();
        let y = istft(&sp, 8000).unwrap();
        // frame m covers padded [m*shift, m*shift + fft) -> signal coords
        let lo = (m * cfg.shift) as isize - (cfg.fft_size - cfg.shift) as isize;
        let hi = lo + cfg.fft_size as isize;
        for (i, v) in y.channel(0).iter().enumerate() {
            let inside = (i as isize) >= lo && (i as isize) < hi;
            if !inside {
                assert!(
                    v.abs() < 1e-12,
                    "sample {i} outside frame span has value {v}"
                );
            }
        }
    }

    #[test]
    fn stack_single_array_is_identity() {
        let a = random_segment(4, 4, 1000, 16000);
        let s = stack_arrays(std::slice::from_ref(&a), StackPolicy::Strict).unwrap();
        assert_eq!(s.samples(), a.samples());
    }

    #[test]
    fn stack_six_arrays_gives_24_channels() {
        let arrays: Vec<_> = (0..6).map(|i| random_segment(i, 4, 500, 16000)).collect();
        let s = stack_arrays(&arrays, StackPolicy::Strict).unwrap();
        assert_eq!(s.channels(), 24);
        // channel order: array order then within-array order, values verbatim
        for (ai, a) in arrays.iter().enumerate() {
            for c in 0..4 {
                assert_eq!(s.samples().row(ai * 4 + c), a.samples().row(c));
            }
        }
    }

    #[test]
    fn stack_truncates_to_min() {
        let a = random_segment(5, 2, 1000, 16000);
        let b = random_segment(6, 2, 997, 16000);
        let s = stack_arrays(&[a, b], StackPolicy::TruncateToMin).unwrap();
        assert_eq!(s.num_samples(), 997);
        assert_eq!(s.channels(), 4);
    }

    #[test]
    fn stack_strict_rejects_length_mismatch() {
        let a = random_segment(5, 2, 1000, 16000);
        let b = random_segment(6, 2, 997, 16000);
        assert!(matches!(
            stack_arrays(&[a, b], StackPolicy::Strict),
            Err(SignalError::ArrayLengthMismatch(..))
        ));
    }

    #[test]
    fn stack_rejects_sample_rate_mismatch() {
        let a = random_segment(5, 2, 1000, 16000);
        let b = random_segment(6, 2, 1000, 8000);
        assert!(matches!(
            stack_arrays(&[a, b], StackPolicy::TruncateToMin),
            Err(SignalError::SampleRateMismatch(..))
        ));
    }

    #[test]
    fn unit_normalize_examples() {
        let cfg = StftConfig::default();
        let mut bins = Array3::zeros((2, 1, cfg.frequencies()));
        bins[(0, 0, 0)] = Complex64::new(3.0, 0.0);
        bins[(1, 0, 0)] = Complex64::new(0.0, 4.0);
        // (0, 0, 1) stays the zero vector
        let sp = MultiChannelSpectrogram::from_parts(bins, cfg, 16000).unwrap();
        let (out, flags) = unit_normalize_bins(&sp);
        assert!((out[(0, 0, 0)] - Complex64::new(0.6, 0.0)).norm() < 1e-12);
        assert!((out[(1, 0, 0)] - Complex64::new(0.0, 0.8)).norm() < 1e-12);
        assert!(!flags[(0, 0)]);
        assert!(flags[(0, 1)]);
        assert_eq!(out[(0, 0, 1)], Complex64::new(0.0, 0.0));
        for f in 0..2 {
            if flags[(0, f)] {
                continue;
            }
            let n: f64 = (0..2).map(|c| out[(c, 0, f)].norm_sqr()).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_fft = StftConfig {
            fft_size: 1000,
            ..StftConfig::default()
        };
        assert!(matches!(
            bad_fft.validate(),
            Err(SignalError::InvalidConfig(_))
        ));
        let bad_shift = StftConfig {
            shift: 0,
            ..StftConfig::default()
        };
        assert!(bad_shift.validate().is_err());
        // no overlap at all: frame edges are unrecoverable with a Hann window
        let no_overlap = StftConfig {
            fft_size: 1024,
            shift: 1024,
            window: WindowKind::Hann,
            pad_mode: PadMode::Zero,
        };
        assert!(matches!(
            no_overlap.validate(),
            Err(SignalError::NonColaConfig { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_round_trip(
            seed in 0u64..1000,
            channels in 1usize..4,
            len in 300usize..5000,
            shift_div in 1usize..4,
            window in prop_oneof![Just(WindowKind::SqrtHann), Just(WindowKind::Hann)],
            pad_mode in prop_oneof![Just(PadMode::Zero), Just(PadMode::Reflect)],
        ) {
            let cfg = StftConfig {
                fft_size: 256,
                shift: 256 >> shift_div,
                window,
                pad_mode,
            };
            let x = random_segment(seed, channels, len, 16000);
            let sp = stft(&x, &cfg).unwrap();
            let y = istft(&sp, len).unwrap();
            let peak = x.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in x.samples().iter().zip(y.samples().iter()) {
                prop_assert!((a - b).abs() < 1e-6 * peak);
            }
        }

        #[test]
        fn prop_stft_linearity(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let cfg = StftConfig { fft_size: 256, shift: 64, ..StftConfig::default() };
            let x = random_segment(seed, 2, 2000, 16000);
            let y = random_segment(seed + 1, 2, 2000, 16000);
            let mixed = WaveformSegment::new(
                a * x.samples() + b * y.samples(), 16000, 0.0).unwrap();
            let sx = stft(&x, &cfg).unwrap();
            let sy = stft(&y, &cfg).unwrap();
            let sm = stft(&mixed, &cfg).unwrap();
            let scale = sm.bins().iter().fold(0.0f64, |m, v| m.max(v.norm()));
            for ((vm, vx), vy) in sm.bins().iter().zip(sx.bins().iter()).zip(sy.bins().iter()) {
                let expect = a * vx + b * vy;
                prop_assert!((vm - expect).norm() <= 1e-10 * scale.max(1.0));
            }
        }

        #[test]
        fn prop_normalize_scale_invariant(seed in 0u64..1000, c in prop_oneof![0.01f64..100.0, -100.0f64..-0.01]) {
            let cfg = StftConfig { fft_size: 256, shift: 64, ..StftConfig::default() };
            let x = random_segment(seed, 3, 2000, 16000);
            let scaled = WaveformSegment::new(c * x.samples(), 16000, 0.0).unwrap();
            let (n1, f1) = unit_normalize_bins(&stft(&x, &cfg).unwrap());
            let (n2, f2) = unit_normalize_bins(&stft(&scaled, &cfg).unwrap());
            prop_assert_eq!(f1.clone(), f2);
            let sign = if c >= 0.0 { 1.0 } else { -1.0 };
            for (v1, v2) in n1.iter().zip(n2.iter()) {
                prop_assert!((v1 * sign - v2).norm() < 1e-9);
            }
        }
    }
}
