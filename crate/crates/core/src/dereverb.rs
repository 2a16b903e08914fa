//! Multichannel linear-prediction dereverberation (WPE) in the STFT domain.
//!
//! Each frequency bin is processed independently: estimate the time-varying
//! source PSD from the current dereverberated signal, solve the PSD-weighted
//! normal equations for a multichannel prediction filter over delayed frames,
//! and subtract the predicted (late reverberant) part from the observation.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::signal::MultiChannelSpectrogram;

#[derive(Debug, Error)]
pub enum DereverbError {
    #[error("invalid WPE config: {0}")]
    InvalidConfig(String),
    #[error("too few frames: {frames} (need more than taps + delay = {needed})")]
    TooFewFrames { frames: usize, needed: usize },
    #[error("input spectrogram contains non-finite values")]
    NonFiniteInput,
    #[error("prediction normal equations stayed singular after {retries} loading retries at bin {freq}")]
    SingularCorrelation { freq: usize, retries: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WpeConfig {
    /// Prediction filter length in frames.
    pub taps: usize,
    /// Prediction delay in frames.
    pub delay: usize,
    /// Alternations between PSD estimation and filter estimation.
    pub iterations: usize,
    pub psd_floor: f64,
    /// Relative diagonal loading of the normal-equation matrix.
    pub regularization: f64,
}

impl Default for WpeConfig {
    fn default() -> Self {
        Self {
            taps: 10,
            delay: 2,
            iterations: 3,
            psd_floor: 1e-10,
            regularization: 1e-6,
        }
    }
}

impl WpeConfig {
    pub fn validate(&self) -> Result<(), DereverbError> {
        if self.taps < 1 || self.delay < 1 || self.iterations < 1 {
            return Err(DereverbError::InvalidConfig(format!(
                "taps ({}), delay ({}) and iterations ({}) must all be >= 1",
                self.taps, self.delay, self.iterations
            )));
        }
        if self.psd_floor < 0.0 || self.regularization < 0.0 {
            return Err(DereverbError::InvalidConfig(
                "psd_floor and regularization must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Dereverberate a multichannel spectrogram. Output shape equals input shape.
pub fn wpe(
    s: &MultiChannelSpectrogram,
    cfg: &WpeConfig,
) -> Result<MultiChannelSpectrogram, DereverbError> {
    cfg.validate()?;
    let (channels, frames, freqs) = (s.channels(), s.frames(), s.frequencies());
    let needed = cfg.taps + cfg.delay;
    if frames <= needed {
        return Err(DereverbError::TooFewFrames { frames, needed });
    }
    if s.bins().iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(DereverbError::NonFiniteInput);
    }

    let per_freq: Result<Vec<Array2<Complex64>>, DereverbError> = (0..freqs)
        .into_par_iter()
        .map(|f| dereverb_bin(s, f, cfg))
        .collect();
    let per_freq = per_freq?;

    let mut out = Array3::zeros((channels, frames, freqs));
    for (f, x) in per_freq.iter().enumerate() {
        for c in 0..channels {
            for t in 0..frames {
                out[(c, t, f)] = x[(c, t)];
            }
        }
    }
    Ok(MultiChannelSpectrogram::from_parts(out, *s.config(), s.sample_rate()).unwrap())
}

fn dereverb_bin(
    s: &MultiChannelSpectrogram,
    f: usize,
    cfg: &WpeConfig,
) -> Result<Array2<Complex64>, DereverbError> {
    let (channels, frames) = (s.channels(), s.frames());
    let bins = s.bins();
    let mut y = Array2::zeros((channels, frames));
    for c in 0..channels {
        for t in 0..frames {
            y[(c, t)] = bins[(c, t, f)];
        }
    }

    // stacked delayed observations, shape [taps * channels, frames];
    // frames before the history exists are treated as zero
    let kd = cfg.taps * channels;
    let mut ytilde = Array2::zeros((kd, frames));
    for tap in 0..cfg.taps {
        for c in 0..channels {
            let row = tap * channels + c;
            for t in (cfg.delay + tap)..frames {
                ytilde[(row, t)] = y[(c, t - cfg.delay - tap)];
            }
        }
    }

    let mut x = y.clone();
    let mut inv_psd = vec![0.0; frames];
    for _ in 0..cfg.iterations {
        for t in 0..frames {
            let mut p = 0.0;
            for c in 0..channels {
                p += x[(c, t)].norm_sqr();
            }
            p = (p / channels as f64).max(cfg.psd_floor);
            inv_psd[t] = if p > 0.0 { 1.0 / p } else { 0.0 };
        }

        let r = linalg::weighted_gram(ytilde.view(), &inv_psd);
        // cross term with the same sqrt-weight split on both sides
        let sqrt_w: Vec<f64> = inv_psd.iter().map(|v| v.sqrt()).collect();
        let mut yts = ytilde.clone();
        for row in 0..kd {
            for t in 0..frames {
                yts[(row, t)] *= sqrt_w[t];
            }
        }
        let mut ys_h = Array2::zeros((frames, channels));
        for c in 0..channels {
            for t in 0..frames {
                ys_h[(t, c)] = (y[(c, t)] * sqrt_w[t]).conj();
            }
        }
        let p = yts.dot(&ys_h);

        let tr = linalg::trace(r.view()).re;
        let filter = if tr <= 0.0 {
            // silent bin: nothing to predict
            Array2::zeros((kd, channels))
        } else {
            let mut reg = cfg.regularization.max(1e-12);
            let mut solved = None;
            for _ in 0..4 {
                let mut r_loaded = r.clone();
                linalg::add_diagonal(&mut r_loaded, reg * tr / kd as f64);
                match linalg::hpd_solve(&r_loaded, &p) {
                    Ok(g) => {
                        solved = Some(g);
                        break;
                    }
                    Err(_) => reg *= 10.0,
                }
            }
            solved.ok_or(DereverbError::SingularCorrelation { freq: f, retries: 3 })?
        };

        let gh = filter.mapv(|v| v.conj()).reversed_axes();
        let prediction = gh.dot(&ytilde);
        x = &y - &prediction;
    }
    Ok(x)
}
