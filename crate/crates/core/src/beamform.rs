//! Mask-driven statistical beamforming: spatial covariance estimation,
//! MVDR in the Souden formulation, and the BAN postfilter gain.

use ndarray::{Array1, Array2, Array3, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg;
use crate::signal::MultiChannelSpectrogram;

#[derive(Debug, Error)]
pub enum BeamformError {
    #[error("mask shape {mask:?} does not match spectrogram frames/frequencies {spec:?}")]
    MaskShapeMismatch { mask: Vec<usize>, spec: Vec<usize> },
    #[error("frame selection has {got} entries, expected {expected}")]
    SelectionLengthMismatch { got: usize, expected: usize },
    #[error("selected mask weights sum to zero at frequency bin {freq}")]
    ZeroMaskWeight { freq: usize },
    #[error("reference channel {reference} out of range for {channels} channels")]
    ReferenceOutOfRange { reference: usize, channels: usize },
    #[error("distortion covariance not invertible at bin {freq} even after loading")]
    SingularDistortion { freq: usize },
    #[error("numerator trace vanished at bin {freq}")]
    TraceNearZero { freq: usize },
    #[error("channel count mismatch: weights have {weights}, spectrogram has {channels}")]
    ChannelMismatch { weights: usize, channels: usize },
}

/// Target and distortion spatial covariances, `[frequencies, channels, channels]`.
#[derive(Debug, Clone)]
pub struct CovariancePair {
    pub target_psd: Array3<Complex64>,
    pub distortion_psd: Array3<Complex64>,
    pub frame_count_used: usize,
}

/// Per-frequency beamforming vector, `[frequencies, channels]`.
#[derive(Debug, Clone)]
pub struct BeamformerWeights {
    w: Array2<Complex64>,
    reference_channel: usize,
}

impl BeamformerWeights {
    pub fn new(w: Array2<Complex64>, reference_channel: usize) -> Self {
        Self {
            w,
            reference_channel,
        }
    }

    pub fn weights(&self) -> &Array2<Complex64> {
        &self.w
    }

    pub fn reference_channel(&self) -> usize {
        self.reference_channel
    }

    pub fn channels(&self) -> usize {
        self.w.ncols()
    }

    pub fn frequencies(&self) -> usize {
        self.w.nrows()
    }

    /// Scale each frequency's vector by a real gain.
    pub fn scaled(&self, gains: &Array1<f64>) -> BeamformerWeights {
        assert_eq!(gains.len(), self.frequencies());
        let mut w = self.w.clone();
        for (f, mut row) in w.axis_iter_mut(Axis(0)).enumerate() {
            let g = Complex64::new(gains[f], 0.0);
            row.mapv_inplace(|v| v * g);
        }
        BeamformerWeights {
            w,
            reference_channel: self.reference_channel,
        }
    }
}

/// Mask-weighted spatial covariance over the selected frames:
/// `phi(f) = sum_t m(t,f) y y^H / sum_t m(t,f)`.
pub fn estimate_psd(
    s: &MultiChannelSpectrogram,
    mask: &Array2<f64>,
    frame_selection: &[bool],
) -> Result<Array3<Complex64>, BeamformError> {
    let (channels, frames, freqs) = (s.channels(), s.frames(), s.frequencies());
    if mask.nrows() != frames || mask.ncols() != freqs {
        return Err(BeamformError::MaskShapeMismatch {
            mask: mask.shape().to_vec(),
            spec: vec![frames, freqs],
        });
    }
    if frame_selection.len() != frames {
        return Err(BeamformError::SelectionLengthMismatch {
            got: frame_selection.len(),
            expected: frames,
        });
    }
    let bins = s.bins();
    let per_freq: Result<Vec<Array2<Complex64>>, BeamformError> = (0..freqs)
        .into_par_iter()
        .map(|f| {
            let mut y = Array2::zeros((channels, frames));
            for c in 0..channels {
                for t in 0..frames {
                    y[(c, t)] = bins[(c, t, f)];
                }
            }
            let mut w = vec![0.0; frames];
            let mut wsum = 0.0;
            for t in 0..frames {
                if frame_selection[t] {
                    w[t] = mask[(t, f)];
                    wsum += w[t];
                }
            }
            if wsum <= 0.0 {
                return Err(BeamformError::ZeroMaskWeight { freq: f });
            }
            let mut phi = linalg::weighted_gram(y.view(), &w);
            let inv = Complex64::new(1.0 / wsum, 0.0);
            phi.mapv_inplace(|v| v * inv);
            linalg::hermitize(&mut phi);
            Ok(phi)
        })
        .collect();
    let per_freq = per_freq?;
    let mut out = Array3::zeros((freqs, channels, channels));
    for (f, phi) in per_freq.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), f).assign(&phi);
    }
    Ok(out)
}

/// Pick the channel with the highest frequency-aggregated posterior SNR,
/// `snr(c) = sum_f target(f,c,c) / sum_f distortion(f,c,c)`; ties go to the
/// lowest index.
pub fn select_reference(cov: &CovariancePair) -> usize {
    let freqs = cov.target_psd.shape()[0];
    let channels = cov.target_psd.shape()[1];
    let mut best = 0usize;
    let mut best_snr = f64::NEG_INFINITY;
    for c in 0..channels {
        let mut num = 0.0;
        let mut den = 0.0;
        for f in 0..freqs {
            num += cov.target_psd[(f, c, c)].re;
            den += cov.distortion_psd[(f, c, c)].re;
        }
        let snr = num / den.max(1e-300);
        if snr > best_snr {
            best_snr = snr;
            best = c;
        }
    }
    best
}

/// MVDR in the Souden formulation:
/// `w(f) = (phi_nn^-1 phi_xx / trace(phi_nn^-1 phi_xx)) e_ref`, with relative
/// diagonal loading on the distortion covariance before inversion.
pub fn mvdr_souden(
    cov: &CovariancePair,
    reference_channel: usize,
    loading: f64,
) -> Result<BeamformerWeights, BeamformError> {
    let freqs = cov.target_psd.shape()[0];
    let channels = cov.target_psd.shape()[1];
    if reference_channel >= channels {
        return Err(BeamformError::ReferenceOutOfRange {
            reference: reference_channel,
            channels,
        });
    }
    let rows: Result<Vec<Array1<Complex64>>, BeamformError> = (0..freqs)
        .into_par_iter()
        .map(|f| {
            let phi_xx = cov.target_psd.index_axis(Axis(0), f).to_owned();
            let phi_nn = cov.distortion_psd.index_axis(Axis(0), f).to_owned();
            let tr_nn = linalg::trace(phi_nn.view()).re;

            let mut reg = loading.max(0.0);
            let mut solved = None;
            for attempt in 0..4 {
                let mut loaded = phi_nn.clone();
                let amount = if tr_nn > 0.0 {
                    reg * tr_nn / channels as f64
                } else {
                    // degenerate distortion estimate: absolute fallback loading
                    1e-10 * 10f64.powi(attempt)
                };
                linalg::add_diagonal(&mut loaded, amount);
                match linalg::hpd_solve(&loaded, &phi_xx) {
                    Ok(x) => {
                        solved = Some(x);
                        break;
                    }
                    Err(_) => reg = (reg * 10.0).max(1e-8),
                }
            }
            let num = solved.ok_or(BeamformError::SingularDistortion { freq: f })?;
            let lambda = linalg::trace(num.view());
            if lambda.norm() < 1e-300 {
                return Err(BeamformError::TraceNearZero { freq: f });
            }
            let mut w = Array1::zeros(channels);
            for c in 0..channels {
                w[c] = num[(c, reference_channel)] / lambda;
            }
            Ok(w)
        })
        .collect();
    let rows = rows?;
    let mut w = Array2::zeros((freqs, channels));
    for (f, row) in rows.into_iter().enumerate() {
        w.row_mut(f).assign(&row);
    }
    Ok(BeamformerWeights::new(w, reference_channel))
}

/// Blind analytic normalization gain,
/// `g(f) = sqrt(w^H phi_nn phi_nn w / D) / (w^H phi_nn w)`.
/// A vanishing denominator (zero beamformer) yields gain 0.
pub fn ban_gain(w: &BeamformerWeights, distortion_psd: &Array3<Complex64>) -> Array1<f64> {
    let freqs = w.frequencies();
    let channels = w.channels();
    let mut gains = Array1::zeros(freqs);
    for f in 0..freqs {
        let phi = distortion_psd.index_axis(Axis(0), f);
        let wf = w.weights().row(f);
        let mut a = vec![Complex64::new(0.0, 0.0); channels];
        for i in 0..channels {
            for j in 0..channels {
                a[i] += phi[(i, j)] * wf[j];
            }
        }
        let mut num_sq = 0.0;
        let mut den = 0.0;
        for i in 0..channels {
            num_sq += a[i].norm_sqr();
            den += (wf[i].conj() * a[i]).re;
        }
        gains[f] = if den > 1e-300 {
            (num_sq / channels as f64).sqrt() / den
        } else {
            0.0
        };
    }
    gains
}

/// `out(t,f) = w(f)^H y(t,f)`.
pub fn apply_beamformer(
    w: &BeamformerWeights,
    s: &MultiChannelSpectrogram,
) -> Result<Array2<Complex64>, BeamformError> {
    if w.channels() != s.channels() {
        return Err(BeamformError::ChannelMismatch {
            weights: w.channels(),
            channels: s.channels(),
        });
    }
    let (channels, frames, freqs) = (s.channels(), s.frames(), s.frequencies());
    let bins = s.bins();
    let mut out = Array2::zeros((frames, freqs));
    for t in 0..frames {
        for f in 0..freqs {
            let mut acc = Complex64::new(0.0, 0.0);
            for c in 0..channels {
                acc += w.weights()[(f, c)].conj() * bins[(c, t, f)];
            }
            out[(t, f)] = acc;
        }
    }
    Ok(out)
}
