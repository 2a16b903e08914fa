//! Signal-level evaluation: scale-invariant SDR per utterance plus mask
//! agreement against the simulator oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gss::MaskSet;
use crate::scene::SceneGroundTruth;

/// Cap applied to SI-SDR values (dB); exact reconstructions hit the cap.
pub const SI_SDR_CAP_DB: f64 = 100.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("estimate has {estimate} samples, reference has {reference}")]
    LengthMismatch { estimate: usize, reference: usize },
    #[error("reference signal is zero")]
    ZeroReference,
    #[error("no enhanced signal provided for {speaker_id}/{utterance_id}")]
    MissingUtterance {
        speaker_id: String,
        utterance_id: String,
    },
    #[error("enhanced signal for {utterance_id} has {got} samples, expected {expected}")]
    WindowMismatch {
        utterance_id: String,
        got: usize,
        expected: usize,
    },
}

/// Scale-invariant signal-to-distortion ratio in dB. The reference is scaled
/// by the projection coefficient `alpha = <estimate, reference> / ||reference||^2`
/// before the error term is formed.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64, MetricsError> {
    if estimate.len() != reference.len() {
        return Err(MetricsError::LengthMismatch {
            estimate: estimate.len(),
            reference: reference.len(),
        });
    }
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    if ref_energy <= 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    let dot: f64 = estimate
        .iter()
        .zip(reference.iter())
        .map(|(e, r)| e * r)
        .sum();
    let alpha = dot / ref_energy;
    let target_energy = alpha * alpha * ref_energy;
    let err_energy: f64 = estimate
        .iter()
        .zip(reference.iter())
        .map(|(e, r)| {
            let d = e - alpha * r;
            d * d
        })
        .sum();
    if err_energy <= 0.0 || target_energy / err_energy >= 1e10 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target_energy / err_energy).log10()).min(SI_SDR_CAP_DB))
}

/// Pearson correlation between two equally long sequences.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub utterance_id: String,
    pub speaker_id: String,
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    pub improvement: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_utterance: Vec<UtteranceScore>,
    pub mean_si_sdr_in: f64,
    pub mean_si_sdr_out: f64,
    pub mean_improvement: f64,
    pub median_improvement: f64,
    /// Pearson r against the oracle mask, per class, when masks were supplied.
    pub mask_correlation: Vec<(String, f64)>,
}

impl EvalReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("utterance_id\tspeaker_id\tsi_sdr_in\tsi_sdr_out\timprovement\n");
        for u in &self.per_utterance {
            out.push_str(&format!(
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\n",
                u.utterance_id, u.speaker_id, u.si_sdr_in, u.si_sdr_out, u.improvement
            ));
        }
        out.push_str(&format!(
            "mean\t-\t{:.4}\t{:.4}\t{:.4}\n",
            self.mean_si_sdr_in, self.mean_si_sdr_out, self.mean_improvement
        ));
        out
    }
}

fn aggregate(per_utterance: Vec<UtteranceScore>, mask_correlation: Vec<(String, f64)>) -> EvalReport {
    let n = per_utterance.len().max(1) as f64;
    let mean_in = per_utterance.iter().map(|u| u.si_sdr_in).sum::<f64>() / n;
    let mean_out = per_utterance.iter().map(|u| u.si_sdr_out).sum::<f64>() / n;
    let mean_impr = per_utterance.iter().map(|u| u.improvement).sum::<f64>() / n;
    let mut sorted: Vec<f64> = per_utterance.iter().map(|u| u.improvement).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if sorted.is_empty() {
        0.0
    } else if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    EvalReport {
        per_utterance,
        mean_si_sdr_in: mean_in,
        mean_si_sdr_out: mean_out,
        mean_improvement: mean_impr,
        median_improvement: median,
        mask_correlation,
    }
}

/// Score enhanced utterances against the scene ground truth. Each enhanced
/// waveform covers exactly the annotated utterance window; the reference is
/// the target speaker's clean image at the reference channel, and the input
/// baseline is the raw reference-channel mixture over the same window.
pub fn evaluate_scene(
    gt: &SceneGroundTruth,
    enhanced: &[(String, String, Vec<f64>)],
    masks: Option<&MaskSet>,
) -> Result<EvalReport, MetricsError> {
    let sr = gt.mixtures[0].sample_rate() as f64;
    let mut per_utterance = Vec::new();
    for ann in &gt.annotations {
        let (spk, utt) = (&ann.speaker_id, &ann.utterance_id);
        let est = enhanced
            .iter()
            .find(|(s, u, _)| s == spk && u == utt)
            .map(|(_, _, w)| w)
            .ok_or_else(|| MetricsError::MissingUtterance {
                speaker_id: spk.clone(),
                utterance_id: utt.clone(),
            })?;
        let start = (ann.start * sr).round() as usize;
        let end = ((ann.end * sr).round() as usize).min(gt.mixtures[0].num_samples());
        let expected = end - start;
        if est.len() != expected {
            return Err(MetricsError::WindowMismatch {
                utterance_id: utt.clone(),
                got: est.len(),
                expected,
            });
        }
        let spk_idx = gt
            .speaker_index(spk)
            .ok_or_else(|| MetricsError::MissingUtterance {
                speaker_id: spk.clone(),
                utterance_id: utt.clone(),
            })?;
        let reference: Vec<f64> = gt.clean_images[spk_idx][0]
            .channel(0)
            .iter()
            .skip(start)
            .take(expected)
            .cloned()
            .collect();
        let mixture: Vec<f64> = gt.mixtures[0]
            .channel(0)
            .iter()
            .skip(start)
            .take(expected)
            .cloned()
            .collect();
        let si_in = si_sdr(&mixture, &reference)?;
        let si_out = si_sdr(est, &reference)?;
        per_utterance.push(UtteranceScore {
            utterance_id: utt.clone(),
            speaker_id: spk.clone(),
            si_sdr_in: si_in,
            si_sdr_out: si_out,
            improvement: si_out - si_in,
        });
    }

    let mut mask_correlation = Vec::new();
    if let Some(m) = masks {
        for (k, name) in m.classes().iter().enumerate() {
            if let Some(ko) = gt.oracle_masks.class_index(name) {
                let est: Vec<f64> = m.class_mask(k).iter().cloned().collect();
                let ora: Vec<f64> = gt.oracle_masks.class_mask(ko).iter().cloned().collect();
                if est.len() == ora.len() {
                    mask_correlation.push((name.clone(), pearson(&est, &ora)));
                }
            }
        }
    }
    Ok(aggregate(per_utterance, mask_correlation))
}
