//! Deterministic synthetic dinner-party scenes: several speakers, several
//! compact microphone arrays, a scheduled utterance overlap pattern, optional
//! exponential reverberation tails, diffuse noise, and per-array clock
//! offsets. Every scene carries its own ground truth (clean images, true
//! schedule, oracle masks, oracle alignment) so enhancement quality is
//! measurable without real recordings.

use std::path::PathBuf;

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{build_activity, ActivityPattern, AlignmentTrack, UtteranceAnnotation};
use crate::gss::{MaskSet, NOISE_CLASS};
use crate::signal::{stft, StftConfig, WaveformSegment};
use crate::wav::read_wav;

const SPEED_OF_SOUND: f64 = 343.0;
const FRAC_DELAY_HALF_WIDTH: usize = 32;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("overlap_ratio {0} is unsatisfiable with a single speaker")]
    SingleSpeakerOverlap(f64),
    #[error("could not reach overlap ratio {target} (best attempt: {achieved:.3})")]
    UnreachableOverlap { target: f64, achieved: f64 },
    #[error("source wav problem: {0}")]
    SourceWav(String),
}

/// Reverberation model: none, or a stochastic exponentially decaying tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReverbConfig {
    None,
    Tail {
        /// Time for the tail envelope to fall by 60 dB.
        decay_seconds: f64,
        /// Energy ratio of the direct image over the tail, in dB.
        direct_to_tail_db: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    SpeechLikeModulatedNoise,
    WavFiles { paths: Vec<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub seed: u64,
    pub speakers: usize,
    pub arrays: usize,
    pub channels_per_array: usize,
    pub duration: f64,
    pub sample_rate: u32,
    /// Target fraction of speech frames with more than one active speaker.
    pub overlap_ratio: f64,
    pub reverb: ReverbConfig,
    pub noise_snr_db: f64,
    /// Per-array clock offset in milliseconds; empty means all zero.
    pub array_clock_offset_ms: Vec<f64>,
    pub source_kind: SourceKind,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            speakers: 2,
            arrays: 1,
            channels_per_array: 4,
            duration: 60.0,
            sample_rate: 16000,
            overlap_ratio: 0.4,
            reverb: ReverbConfig::None,
            noise_snr_db: 20.0,
            array_clock_offset_ms: Vec::new(),
            source_kind: SourceKind::SpeechLikeModulatedNoise,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.speakers < 1 {
            return Err(SceneError::InvalidConfig("speakers must be >= 1".into()));
        }
        if self.arrays < 1 {
            return Err(SceneError::InvalidConfig("arrays must be >= 1".into()));
        }
        if self.channels_per_array < 1 {
            return Err(SceneError::InvalidConfig(
                "channels_per_array must be >= 1".into(),
            ));
        }
        if !(self.duration > 0.0) {
            return Err(SceneError::InvalidConfig(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if self.duration < 6.0 {
            return Err(SceneError::InvalidConfig(
                "duration must be at least 6 seconds to fit a schedule".into(),
            ));
        }
        if self.sample_rate == 0 {
            return Err(SceneError::InvalidConfig("sample_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_ratio) {
            return Err(SceneError::InvalidConfig(format!(
                "overlap_ratio must be in [0, 1), got {}",
                self.overlap_ratio
            )));
        }
        if self.speakers == 1 && self.overlap_ratio > 0.0 {
            return Err(SceneError::SingleSpeakerOverlap(self.overlap_ratio));
        }
        if let ReverbConfig::Tail { decay_seconds, .. } = self.reverb {
            if !(decay_seconds > 0.0) {
                return Err(SceneError::InvalidConfig(
                    "tail decay_seconds must be positive".into(),
                ));
            }
        }
        if !self.array_clock_offset_ms.is_empty()
            && self.array_clock_offset_ms.len() != self.arrays
        {
            return Err(SceneError::InvalidConfig(format!(
                "array_clock_offset_ms has {} entries for {} arrays",
                self.array_clock_offset_ms.len(),
                self.arrays
            )));
        }
        if let SourceKind::WavFiles { paths } = &self.source_kind {
            if paths.len() != self.speakers {
                return Err(SceneError::InvalidConfig(format!(
                    "{} source wav paths for {} speakers",
                    paths.len(),
                    self.speakers
                )));
            }
        }
        Ok(())
    }

    pub fn speaker_ids(&self) -> Vec<String> {
        (0..self.speakers).map(|i| format!("spk{i}")).collect()
    }
}

/// A generated scene plus everything needed to score enhancement on it.
#[derive(Debug, Clone)]
pub struct SceneGroundTruth {
    pub config: SceneConfig,
    pub annotations: Vec<UtteranceAnnotation>,
    /// Mixture per array, `channels_per_array` channels each.
    pub mixtures: Vec<WaveformSegment>,
    /// Clean image (direct plus tail) of each speaker at each array,
    /// indexed `[speaker][array]`.
    pub clean_images: Vec<Vec<WaveformSegment>>,
    /// Direct-path-only images; `None` when the scene is anechoic (then they
    /// equal `clean_images`).
    direct_only: Option<Vec<Vec<WaveformSegment>>>,
    /// Additive noise per array.
    pub noise: Vec<WaveformSegment>,
    /// True schedule on a 16 ms grid.
    pub activity: ActivityPattern,
    /// Ideal ratio masks at the reference channel (array 0, channel 0).
    pub oracle_masks: MaskSet,
    pub oracle_alignment: Vec<AlignmentTrack>,
    pub speakers: Vec<String>,
}

impl SceneGroundTruth {
    pub fn speaker_index(&self, id: &str) -> Option<usize> {
        self.speakers.iter().position(|s| s == id)
    }

    pub fn recording_len_seconds(&self) -> f64 {
        self.mixtures[0].duration_seconds()
    }

    /// Direct-path image of a speaker at an array (equals the clean image
    /// when the scene is anechoic).
    pub fn direct_image(&self, speaker: usize, array: usize) -> &WaveformSegment {
        match &self.direct_only {
            Some(d) => &d[speaker][array],
            None => &self.clean_images[speaker][array],
        }
    }
}

#[derive(Debug, Clone)]
struct ScheduledUtterance {
    speaker: usize,
    start: f64,
    end: f64,
    /// Actual speech support inside the annotated interval (the annotations
    /// deliberately include leading/trailing silence, like real transcripts).
    speech: Vec<(f64, f64)>,
}

fn draw_schedule(seed: u64, cfg: &SceneConfig, knob: f64) -> Vec<ScheduledUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = (0.02 * cfg.duration).clamp(0.2, 0.5);
    let horizon = cfg.duration - margin;
    let mut utts: Vec<ScheduledUtterance> = Vec::new();
    let mut prev: Option<(usize, f64, f64)> = None;
    let mut idx = 0usize;
    loop {
        // one fixed tuple of draws per utterance keeps the schedule a
        // continuous function of the overlap knob
        let len: f64 = rng.random_range(1.6..4.0);
        let overlap_frac: f64 = rng.random_range(0.5..1.0);
        let gap: f64 = rng.random_range(0.15..0.7);
        let spk_jitter = rng.random_range(0..cfg.speakers.max(2));
        let lead: f64 = rng.random_range(0.08..0.3);
        let trail: f64 = rng.random_range(0.08..0.3);
        let pause_draw: f64 = rng.random_range(0.0..1.0);
        let pause_pos = rng.random_range(0.35..0.6);
        let pause_len = rng.random_range(0.3..0.8);

        let speaker = if cfg.speakers == 1 {
            0
        } else {
            match prev {
                None => idx % cfg.speakers,
                Some((ps, _, _)) => (ps + 1 + spk_jitter % (cfg.speakers - 1)) % cfg.speakers,
            }
        };
        // the next start slides continuously from "gap after the previous
        // utterance" (knob 0) to "deep overlap with it" (knob 1), so the
        // measured overlap ratio is a continuous function of the knob and
        // bisection can land on any attainable target
        let start = match prev {
            None => 0.2,
            Some((_, pstart, pend)) => {
                if cfg.speakers > 1 {
                    let ov = overlap_frac * knob * len.min(pend - pstart);
                    (pend + (1.0 - knob) * gap - ov).max(pstart + 0.1)
                } else {
                    pend + gap
                }
            }
        };
        let mut end = start + len;
        if end > horizon {
            end = horizon;
            if end - start < 1.0 {
                break;
            }
        }
        let ulen = end - start;
        let s_lo = start + lead.min(0.25 * ulen);
        let s_hi = end - trail.min(0.25 * ulen);
        let mut speech = Vec::new();
        let p0 = start + pause_pos * ulen;
        let p1 = p0 + pause_len;
        if ulen > 3.0 && pause_draw < 0.25 && p0 > s_lo + 0.3 && p1 < s_hi - 0.3 {
            speech.push((s_lo, p0));
            speech.push((p1, s_hi));
        } else {
            speech.push((s_lo, s_hi));
        }
        utts.push(ScheduledUtterance {
            speaker,
            start,
            end,
            speech,
        });
        prev = Some((speaker, start, end));
        idx += 1;
        if end >= horizon - 1.0 {
            break;
        }
    }
    utts
}

fn measure_overlap(utts: &[ScheduledUtterance], duration: f64) -> f64 {
    let shift = 0.016;
    let frames = (duration / shift).ceil() as usize;
    let mut ge1 = 0usize;
    let mut ge2 = 0usize;
    for t in 0..frames {
        let s0 = t as f64 * shift;
        let s1 = s0 + shift;
        let active = utts
            .iter()
            .filter(|u| u.start < s1 && s0 < u.end)
            .map(|u| u.speaker)
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        if active >= 1 {
            ge1 += 1;
        }
        if active >= 2 {
            ge2 += 1;
        }
    }
    if ge1 == 0 {
        0.0
    } else {
        ge2 as f64 / ge1 as f64
    }
}

fn covers_all_speakers(utts: &[ScheduledUtterance], speakers: usize) -> bool {
    (0..speakers).all(|s| utts.iter().any(|u| u.speaker == s))
}

fn schedule_scene(cfg: &SceneConfig, seed: u64) -> Result<Vec<ScheduledUtterance>, SceneError> {
    let target = cfg.overlap_ratio;
    let tolerance = 0.045;
    let mut best_err = f64::INFINITY;
    let mut best_achieved = 0.0;
    for attempt in 0..8u64 {
        let attempt_seed = seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        if target == 0.0 {
            let utts = draw_schedule(attempt_seed, cfg, 0.0);
            if covers_all_speakers(&utts, cfg.speakers) {
                return Ok(utts);
            }
            continue;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut attempt_best: Option<Vec<ScheduledUtterance>> = None;
        let mut attempt_err = f64::INFINITY;
        for _ in 0..30 {
            let q = 0.5 * (lo + hi);
            let utts = draw_schedule(attempt_seed, cfg, q);
            let r = measure_overlap(&utts, cfg.duration);
            let err = (r - target).abs();
            if err < attempt_err && covers_all_speakers(&utts, cfg.speakers) {
                attempt_err = err;
                attempt_best = Some(utts);
            }
            if r < target {
                lo = q;
            } else {
                hi = q;
            }
        }
        if attempt_err <= tolerance {
            return Ok(attempt_best.unwrap());
        }
        if attempt_err < best_err {
            best_err = attempt_err;
            best_achieved = target + attempt_err.copysign(1.0);
        }
    }
    Err(SceneError::UnreachableOverlap {
        target,
        achieved: best_achieved,
    })
}

fn pink_noise(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    // Kellet's economy pink filter over white Gaussian noise
    let (mut b0, mut b1, mut b2) = (0.0f64, 0.0f64, 0.0f64);
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let white: f64 = rng.sample(StandardNormal);
        b0 = 0.99765 * b0 + white * 0.0990460;
        b1 = 0.96300 * b1 + white * 0.2965164;
        b2 = 0.57000 * b2 + white * 1.0526913;
        out.push((b0 + b1 + b2 + white * 0.1848) * 0.2);
    }
    out
}

/// Two cascaded first-order high-pass stages (about -12 dB/oct below `fc`).
/// Speech carries almost no energy under 100 Hz; without this the pink
/// sources put most of their power where no small array can separate.
fn high_pass(x: &mut [f64], fc: f64, sample_rate: u32) {
    let a = 1.0 / (1.0 + std::f64::consts::TAU * fc / sample_rate as f64);
    for _ in 0..2 {
        let mut y_prev = 0.0;
        let mut x_prev = 0.0;
        for v in x.iter_mut() {
            let y = a * (y_prev + *v - x_prev);
            x_prev = *v;
            y_prev = y;
            *v = y;
        }
    }
}

/// Syllabic 2-8 Hz amplitude envelope, strictly positive.
fn syllabic_envelope(rng: &mut ChaCha8Rng, len: usize, sample_rate: u32) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = (0..3)
        .map(|i| {
            (
                rng.random_range(2.0..8.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                [0.5, 0.3, 0.2][i],
            )
        })
        .collect();
    (0..len)
        .map(|n| {
            let t = n as f64 / sample_rate as f64;
            let m: f64 = comps
                .iter()
                .map(|(f, p, a)| a * (std::f64::consts::TAU * f * t + p).sin())
                .sum();
            0.6 + 0.4 * m
        })
        .collect()
}

/// Gate a signal with raised-cosine edges (10 ms) around the speech spans.
fn gate(signal: &mut [f64], spans: &[(f64, f64)], sample_rate: u32) {
    let sr = sample_rate as f64;
    let ramp = (0.010 * sr) as usize;
    let mut gain = vec![0.0f64; signal.len()];
    for &(a, b) in spans {
        let i0 = ((a * sr) as usize).min(signal.len());
        let i1 = ((b * sr) as usize).min(signal.len());
        for g in gain[i0..i1].iter_mut() {
            *g = 1.0;
        }
        for k in 0..ramp.min(i1.saturating_sub(i0) / 2) {
            let w = 0.5 * (1.0 - (std::f64::consts::PI * k as f64 / ramp as f64).cos());
            gain[i0 + k] = gain[i0 + k].min(w);
            gain[i1 - 1 - k] = gain[i1 - 1 - k].min(w);
        }
    }
    for (s, g) in signal.iter_mut().zip(gain.iter()) {
        *s *= g;
    }
}

fn load_source_wav(path: &PathBuf, len: usize, sample_rate: u32) -> Result<Vec<f64>, SceneError> {
    let seg = read_wav(path).map_err(|e| SceneError::SourceWav(e.to_string()))?;
    if seg.sample_rate() != sample_rate {
        return Err(SceneError::SourceWav(format!(
            "{} is {} Hz, scene wants {} Hz",
            path.display(),
            seg.sample_rate(),
            sample_rate
        )));
    }
    if seg.num_samples() == 0 {
        return Err(SceneError::SourceWav(format!("{} is empty", path.display())));
    }
    // tile the (first channel of the) file to the scene length
    let src = seg.channel(0);
    Ok((0..len).map(|i| src[i % src.len()]).collect())
}

#[derive(Debug, Clone, Copy)]
struct Point {
    x: f64,
    y: f64,
    z: f64,
}

impl Point {
    fn dist(&self, o: &Point) -> f64 {
        ((self.x - o.x).powi(2) + (self.y - o.y).powi(2) + (self.z - o.z).powi(2)).sqrt()
    }
}

struct Geometry {
    /// `[array][channel]` microphone positions.
    mics: Vec<Vec<Point>>,
    speakers: Vec<Point>,
}

fn draw_geometry(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Geometry {
    // 6 x 5 x 3 m room, linear arrays with 5.7 cm spacing at 1.5 m height
    let mut mics = Vec::with_capacity(cfg.arrays);
    let mut centers = Vec::with_capacity(cfg.arrays);
    for _ in 0..cfg.arrays {
        let cx = rng.random_range(1.5..4.5);
        let cy = rng.random_range(1.2..3.8);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let spacing = 0.057;
        let n = cfg.channels_per_array;
        let row: Vec<Point> = (0..n)
            .map(|i| {
                let off = (i as f64 - (n as f64 - 1.0) / 2.0) * spacing;
                Point {
                    x: cx + off * theta.cos(),
                    y: cy + off * theta.sin(),
                    z: 1.5,
                }
            })
            .collect();
        centers.push(Point { x: cx, y: cy, z: 1.5 });
        mics.push(row);
    }
    let mut speakers = Vec::with_capacity(cfg.speakers);
    for _ in 0..cfg.speakers {
        let mut best = Point { x: 3.0, y: 2.5, z: 1.5 };
        let mut best_clearance = f64::NEG_INFINITY;
        for _ in 0..200 {
            let p = Point {
                x: rng.random_range(0.8..5.2),
                y: rng.random_range(0.8..4.2),
                z: rng.random_range(1.2..1.8),
            };
            let c_arr = centers
                .iter()
                .map(|c| p.dist(c))
                .fold(f64::INFINITY, f64::min);
            let c_spk = speakers
                .iter()
                .map(|s: &Point| p.dist(s))
                .fold(f64::INFINITY, f64::min);
            if c_arr >= 0.7 && c_spk >= 0.9 {
                best = p;
                break;
            }
            let clearance = c_arr.min(c_spk - 0.2);
            if clearance > best_clearance {
                best_clearance = clearance;
                best = p;
            }
        }
        speakers.push(best);
    }
    Geometry { mics, speakers }
}

/// Windowed-sinc fractional delay with 1/r gain applied on top.
fn fractional_delay(x: &[f64], delay_samples: f64, gain: f64) -> Vec<f64> {
    let l = FRAC_DELAY_HALF_WIDTH as isize;
    let n0 = delay_samples.floor() as isize;
    let mu = delay_samples - n0 as f64;
    // FIR centred at index l, peak at l + mu
    let taps: Vec<f64> = (0..=2 * l)
        .map(|i| {
            let t = i as f64 - l as f64 - mu;
            let sinc = if t.abs() < 1e-12 {
                1.0
            } else {
                (std::f64::consts::PI * t).sin() / (std::f64::consts::PI * t)
            };
            let w = 0.5
                * (1.0
                    + (std::f64::consts::PI * (i as f64 - l as f64 - mu)
                        / (l as f64 + 1.0))
                        .cos());
            sinc * w.max(0.0)
        })
        .collect();
    let shift = n0 - l;
    let mut out = vec![0.0; x.len()];
    for (n, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, h) in taps.iter().enumerate() {
            let j = n as isize - shift - i as isize;
            if j >= 0 && (j as usize) < x.len() {
                acc += h * x[j as usize];
            }
        }
        *o = acc * gain;
    }
    out
}

/// Full linear convolution via FFT, truncated to `out_len`.
fn fft_convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    let full = x.len() + h.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(n, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(n, Complex64::new(0.0, 0.0));
    fft.process(&mut a);
    fft.process(&mut b);
    for (u, v) in a.iter_mut().zip(b.iter()) {
        *u *= v;
    }
    ifft.process(&mut a);
    let scale = 1.0 / n as f64;
    (0..out_len.min(n))
        .map(|i| a[i].re * scale)
        .chain(std::iter::repeat(0.0))
        .take(out_len)
        .collect()
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Build the scene deterministically from its config.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SceneGroundTruth, SceneError> {
    cfg.validate()?;
    let sr = cfg.sample_rate;
    let len = (cfg.duration * sr as f64).round() as usize;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let schedule_seed: u64 = master.random();
    let geometry_seed: u64 = master.random();
    let source_seed: u64 = master.random();
    let tail_seed: u64 = master.random();
    let noise_seed: u64 = master.random();

    let schedule = schedule_scene(cfg, schedule_seed)?;
    let mut geo_rng = ChaCha8Rng::seed_from_u64(geometry_seed);
    let geometry = draw_geometry(&mut geo_rng, cfg);

    // dry source signals, one per speaker, gated by the speech spans
    let mut sources: Vec<Vec<f64>> = Vec::with_capacity(cfg.speakers);
    for s in 0..cfg.speakers {
        let mut rng = ChaCha8Rng::seed_from_u64(source_seed.wrapping_add(s as u64));
        let mut sig = match &cfg.source_kind {
            SourceKind::SpeechLikeModulatedNoise => {
                let mut pink = pink_noise(&mut rng, len);
                high_pass(&mut pink, 130.0, sr);
                let env = syllabic_envelope(&mut rng, len, sr);
                pink.iter().zip(env.iter()).map(|(p, e)| p * e).collect()
            }
            SourceKind::WavFiles { paths } => load_source_wav(&paths[s], len, sr)?,
        };
        let spans: Vec<(f64, f64)> = schedule
            .iter()
            .filter(|u| u.speaker == s)
            .flat_map(|u| u.speech.iter().cloned())
            .collect();
        gate(&mut sig, &spans, sr);
        let e = energy(&sig);
        if e > 0.0 {
            let norm = 0.1 * (len as f64).sqrt() / e.sqrt();
            for v in sig.iter_mut() {
                *v *= norm;
            }
        }
        sources.push(sig);
    }

    // propagate to every microphone
    let offsets: Vec<f64> = if cfg.array_clock_offset_ms.is_empty() {
        vec![0.0; cfg.arrays]
    } else {
        cfg.array_clock_offset_ms.clone()
    };
    let mut direct: Vec<Vec<WaveformSegment>> = Vec::with_capacity(cfg.speakers);
    let mut clean: Vec<Vec<WaveformSegment>> = Vec::with_capacity(cfg.speakers);
    let mut tail_rng = ChaCha8Rng::seed_from_u64(tail_seed);
    let has_reverb = matches!(cfg.reverb, ReverbConfig::Tail { .. });
    for s in 0..cfg.speakers {
        let mut per_array_direct = Vec::with_capacity(cfg.arrays);
        let mut per_array_clean = Vec::with_capacity(cfg.arrays);
        for a in 0..cfg.arrays {
            let mut rows = Vec::with_capacity(cfg.channels_per_array);
            let mut min_delay = f64::INFINITY;
            for ch in 0..cfg.channels_per_array {
                let d = geometry.speakers[s].dist(&geometry.mics[a][ch]);
                let delay = d / SPEED_OF_SOUND * sr as f64 + offsets[a] * sr as f64 / 1000.0;
                min_delay = min_delay.min(delay);
                let g = 1.0 / d.max(0.4);
                rows.push(fractional_delay(&sources[s], delay, g));
            }
            let direct_seg =
                WaveformSegment::from_channels(rows.clone(), sr, 0.0).expect("finite by construction");
            let clean_seg = match cfg.reverb {
                ReverbConfig::None => direct_seg.clone(),
                ReverbConfig::Tail {
                    decay_seconds,
                    direct_to_tail_db,
                } => {
                    // one diffuse tail per (speaker, array), shared by the
                    // array's closely spaced channels
                    let ir_len = ((decay_seconds * sr as f64) as usize).max(16);
                    let ir: Vec<f64> = (0..ir_len)
                        .map(|n| {
                            let w: f64 = tail_rng.sample(StandardNormal);
                            let env = 10f64.powf(-3.0 * n as f64 / (decay_seconds * sr as f64));
                            w * env
                        })
                        .collect();
                    let mut tail = fft_convolve(&sources[s], &ir, len);
                    // tail starts a few ms after the direct sound
                    let tail_shift = (min_delay as usize) + (0.005 * sr as f64) as usize;
                    let mut shifted = vec![0.0; len];
                    for i in tail_shift..len {
                        shifted[i] = tail[i - tail_shift];
                    }
                    tail = shifted;
                    let e_direct = rows.iter().map(|r| energy(r)).sum::<f64>()
                        / cfg.channels_per_array as f64;
                    let e_tail = energy(&tail);
                    if e_tail > 0.0 && e_direct > 0.0 {
                        let scale =
                            (e_direct / (e_tail * 10f64.powf(direct_to_tail_db / 10.0))).sqrt();
                        for v in tail.iter_mut() {
                            *v *= scale;
                        }
                    }
                    let rows_clean: Vec<Vec<f64>> = rows
                        .iter()
                        .map(|r| r.iter().zip(tail.iter()).map(|(a, b)| a + b).collect())
                        .collect();
                    WaveformSegment::from_channels(rows_clean, sr, 0.0).expect("finite")
                }
            };
            per_array_direct.push(direct_seg);
            per_array_clean.push(clean_seg);
        }
        direct.push(per_array_direct);
        clean.push(per_array_clean);
    }

    // diffuse noise per array, scaled against the summed image power
    let mut noise_segments = Vec::with_capacity(cfg.arrays);
    for a in 0..cfg.arrays {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed.wrapping_add(a as u64));
        let mut p_sig = 0.0;
        for ch in 0..cfg.channels_per_array {
            let mut acc = 0.0;
            for t in 0..len {
                let v: f64 = (0..cfg.speakers)
                    .map(|s| clean[s][a].samples()[(ch, t)])
                    .sum();
                acc += v * v;
            }
            p_sig += acc / len as f64;
        }
        p_sig /= cfg.channels_per_array as f64;
        let rows: Vec<Vec<f64>> = (0..cfg.channels_per_array)
            .map(|_| pink_noise(&mut rng, len))
            .collect();
        let p_noise = rows.iter().map(|r| energy(r) / len as f64).sum::<f64>()
            / cfg.channels_per_array as f64;
        let target_p = if p_sig > 0.0 {
            p_sig / 10f64.powf(cfg.noise_snr_db / 10.0)
        } else {
            1e-6
        };
        let scale = if p_noise > 0.0 {
            (target_p / p_noise).sqrt()
        } else {
            0.0
        };
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(|v| v * scale).collect())
            .collect();
        noise_segments.push(WaveformSegment::from_channels(rows, sr, 0.0).expect("finite"));
    }

    // mixtures: exact sum of images plus noise
    let mut mixtures = Vec::with_capacity(cfg.arrays);
    for a in 0..cfg.arrays {
        let mut sum = noise_segments[a].samples().clone();
        for s in 0..cfg.speakers {
            sum += clean[s][a].samples();
        }
        mixtures.push(WaveformSegment::new(sum, sr, 0.0).expect("finite"));
    }

    // annotations and true activity on the 16 ms grid
    let speaker_ids = cfg.speaker_ids();
    let annotations: Vec<UtteranceAnnotation> = schedule
        .iter()
        .enumerate()
        .map(|(i, u)| UtteranceAnnotation {
            utterance_id: format!("u{i:04}"),
            speaker_id: speaker_ids[u.speaker].clone(),
            start: u.start,
            end: u.end,
        })
        .collect();
    // make sure every speaker appears in the roster even if silent
    let mut roster_anns = annotations.clone();
    for id in &speaker_ids {
        if !roster_anns.iter().any(|a| &a.speaker_id == id) {
            roster_anns.push(UtteranceAnnotation {
                utterance_id: format!("roster_{id}"),
                speaker_id: id.clone(),
                start: 0.0,
                end: 0.001,
            });
        }
    }
    let activity = build_activity(
        &annotations,
        (0.0, cfg.duration),
        256.0 / sr as f64,
        0.0,
    )
    .expect("non-empty window");

    let oracle_masks = oracle_masks_at_reference(cfg, &clean, &noise_segments, &speaker_ids);
    let gt = SceneGroundTruth {
        config: cfg.clone(),
        annotations,
        mixtures,
        clean_images: clean,
        direct_only: if has_reverb { Some(direct) } else { None },
        noise: noise_segments,
        activity,
        oracle_masks,
        oracle_alignment: Vec::new(),
        speakers: speaker_ids,
    };
    let alignment = oracle_alignment(&gt, 35.0);
    Ok(SceneGroundTruth {
        oracle_alignment: alignment,
        ..gt
    })
}

fn oracle_masks_at_reference(
    cfg: &SceneConfig,
    clean: &[Vec<WaveformSegment>],
    noise: &[WaveformSegment],
    speaker_ids: &[String],
) -> MaskSet {
    let stft_cfg = StftConfig::default();
    let specs: Vec<_> = (0..cfg.speakers)
        .map(|s| {
            let mono = WaveformSegment::from_channels(
                vec![clean[s][0].channel(0).to_vec()],
                cfg.sample_rate,
                0.0,
            )
            .unwrap();
            stft(&mono, &stft_cfg).unwrap()
        })
        .collect();
    let noise_mono = WaveformSegment::from_channels(
        vec![noise[0].channel(0).to_vec()],
        cfg.sample_rate,
        0.0,
    )
    .unwrap();
    let noise_spec = stft(&noise_mono, &stft_cfg).unwrap();
    let frames = noise_spec.frames();
    let freqs = noise_spec.frequencies();
    let k = cfg.speakers + 1;
    let mut gamma = ndarray::Array3::zeros((k, frames, freqs));
    for t in 0..frames {
        for f in 0..freqs {
            let mut powers: Vec<f64> = (0..cfg.speakers)
                .map(|s| specs[s].bins()[(0, t, f)].norm_sqr())
                .collect();
            powers.push(noise_spec.bins()[(0, t, f)].norm_sqr());
            let denom: f64 = powers.iter().sum();
            if denom > 0.0 {
                for (kk, p) in powers.iter().enumerate() {
                    gamma[(kk, t, f)] = p / denom;
                }
            } else {
                gamma[(k - 1, t, f)] = 1.0;
            }
        }
    }
    let mut classes: Vec<String> = speaker_ids.to_vec();
    classes.push(NOISE_CLASS.to_string());
    MaskSet::new(gamma, classes)
}

/// Speech segments from the clean-image short-time energy: maximal frame
/// runs above `energy_floor_db` below each speaker's own peak.
pub fn oracle_alignment(gt: &SceneGroundTruth, energy_floor_db: f64) -> Vec<AlignmentTrack> {
    let sr = gt.mixtures[0].sample_rate();
    let shift = 256usize;
    let mut tracks = Vec::new();
    for (s, id) in gt.speakers.iter().enumerate() {
        let x = gt.clean_images[s][0].channel(0);
        let frames = x.len() / shift;
        let mut e = Vec::with_capacity(frames);
        for t in 0..frames {
            let seg = &x.as_slice().unwrap()[t * shift..(t + 1) * shift];
            e.push(energy(seg) / shift as f64);
        }
        let peak = e.iter().cloned().fold(0.0f64, f64::max);
        let mut segments = Vec::new();
        if peak > 0.0 {
            let thr = peak * 10f64.powf(-energy_floor_db / 10.0);
            let mut run_start: Option<usize> = None;
            for t in 0..frames {
                if e[t] > thr {
                    if run_start.is_none() {
                        run_start = Some(t);
                    }
                } else if let Some(r0) = run_start.take() {
                    segments.push((
                        r0 as f64 * shift as f64 / sr as f64,
                        t as f64 * shift as f64 / sr as f64,
                    ));
                }
            }
            if let Some(r0) = run_start {
                segments.push((
                    r0 as f64 * shift as f64 / sr as f64,
                    frames as f64 * shift as f64 / sr as f64,
                ));
            }
        }
        tracks.push(AlignmentTrack {
            speaker_id: id.clone(),
            speech_segments: segments,
        });
    }
    tracks
}
