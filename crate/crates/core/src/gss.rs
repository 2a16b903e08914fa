//! Annotation-guided spatial mixture model over unit-normalized multichannel
//! STFT vectors.
//!
//! Each time-frequency observation is modeled by a mixture of complex angular
//! central Gaussian components, one per speaker plus an always-active noise
//! class. The utterance time annotations do three things: they fix the class
//! count, they initialize the posteriors uniformly over the speakers active
//! in a frame, and they pin the posterior of an inactive speaker to zero in
//! every EM iteration. Class weights are time-varying but shared across
//! frequency, which ties the per-frequency solutions together and avoids
//! frequency permutation.

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::ActivityPattern;
use crate::linalg;
use crate::signal::{unit_normalize_bins, MultiChannelSpectrogram};

/// Name of the always-active noise class.
pub const NOISE_CLASS: &str = "noise";

#[derive(Debug, Error)]
pub enum GssError {
    #[error("frame {frame} has no active class; include the noise class so silence stays modelable")]
    NoActiveClass { frame: usize },
    #[error("activity pattern covers {have} frames but {need} are required")]
    ActivityTooShort { have: usize, need: usize },
    #[error("speaker id {0:?} collides with the reserved noise class name")]
    ReservedClassName(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("shape matrix for class {class} at bin {freq} stayed singular after loading retries")]
    SingularShapeMatrix { class: usize, freq: usize },
    #[error("observation dims {obs:?} do not match state dims {state:?}")]
    DimensionMismatch { obs: Vec<usize>, state: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GssConfig {
    pub iterations: usize,
    /// Relative diagonal loading used when inverting shape matrices.
    pub inverse_regularization: f64,
    pub include_noise_class: bool,
}

impl Default for GssConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            inverse_regularization: 1e-10,
            include_noise_class: true,
        }
    }
}

/// Per-class posterior masks, shaped `[classes, frames, frequencies]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    gamma: Array3<f64>,
    classes: Vec<String>,
}

impl MaskSet {
    pub fn new(gamma: Array3<f64>, classes: Vec<String>) -> Self {
        assert_eq!(gamma.shape()[0], classes.len());
        Self { gamma, classes }
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn frames(&self) -> usize {
        self.gamma.shape()[1]
    }

    pub fn frequencies(&self) -> usize {
        self.gamma.shape()[2]
    }

    pub fn gamma(&self) -> &Array3<f64> {
        &self.gamma
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    /// Mask of one class as `[frames, frequencies]`.
    pub fn class_mask(&self, k: usize) -> Array2<f64> {
        self.gamma.index_axis(Axis(0), k).to_owned()
    }
}

/// Mixture state: per-frequency Hermitian shape matrices and
/// frequency-shared, time-varying class weights.
#[derive(Debug, Clone)]
pub struct CacgmmState {
    /// `[frequencies, classes, channels, channels]`
    shape_matrices: Array4<Complex64>,
    /// `[frames, classes]`
    weights: Array2<f64>,
    classes: Vec<String>,
    includes_noise: bool,
    inverse_regularization: f64,
}

impl CacgmmState {
    /// Identity shape matrices; weights taken from the initial posteriors
    /// (which are frequency-constant by construction).
    pub fn initial(
        init: &MaskSet,
        frequencies: usize,
        channels: usize,
        includes_noise: bool,
        inverse_regularization: f64,
    ) -> Self {
        let k = init.classes().len();
        let frames = init.frames();
        let mut shape_matrices = Array4::zeros((frequencies, k, channels, channels));
        for f in 0..frequencies {
            for kk in 0..k {
                for d in 0..channels {
                    shape_matrices[(f, kk, d, d)] = Complex64::new(1.0, 0.0);
                }
            }
        }
        let mut weights = Array2::zeros((frames, k));
        for t in 0..frames {
            for kk in 0..k {
                weights[(t, kk)] = init.gamma()[(kk, t, 0)];
            }
        }
        Self {
            shape_matrices,
            weights,
            classes: init.classes().to_vec(),
            includes_noise,
            inverse_regularization,
        }
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn shape_matrix(&self, freq: usize, class: usize) -> ArrayView2<'_, Complex64> {
        self.shape_matrices
            .index_axis(Axis(0), freq)
            .index_axis_move(Axis(0), class)
    }

    pub fn channels(&self) -> usize {
        self.shape_matrices.shape()[2]
    }

    pub fn frequencies(&self) -> usize {
        self.shape_matrices.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.weights.nrows()
    }
}

/// Class-level activity: speaker rows from the annotation guide, the noise
/// row always on.
fn class_activity(
    act: &ActivityPattern,
    frames: usize,
    include_noise: bool,
) -> Result<Array2<bool>, GssError> {
    if act.frames() < frames {
        return Err(GssError::ActivityTooShort {
            have: act.frames(),
            need: frames,
        });
    }
    let speakers = act.speakers().len();
    let k = speakers + include_noise as usize;
    let mut out = Array2::from_elem((k, frames), false);
    for s in 0..speakers {
        for t in 0..frames {
            out[(s, t)] = act.is_active(s, t);
        }
    }
    if include_noise {
        for t in 0..frames {
            out[(speakers, t)] = true;
        }
    }
    Ok(out)
}

fn class_names(act: &ActivityPattern, include_noise: bool) -> Result<Vec<String>, GssError> {
    let mut classes: Vec<String> = act.speakers().to_vec();
    if include_noise {
        if classes.iter().any(|c| c == NOISE_CLASS) {
            return Err(GssError::ReservedClassName(NOISE_CLASS.into()));
        }
        classes.push(NOISE_CLASS.into());
    }
    Ok(classes)
}

/// Guided initialization: every class active at a frame starts with posterior
/// `1/|active|` at all frequencies; inactive classes start at zero.
pub fn init_posteriors(
    act: &ActivityPattern,
    frames: usize,
    frequencies: usize,
    include_noise: bool,
) -> Result<MaskSet, GssError> {
    let classes = class_names(act, include_noise)?;
    let activity = class_activity(act, frames, include_noise)?;
    let k = classes.len();
    let mut gamma = Array3::zeros((k, frames, frequencies));
    for t in 0..frames {
        let n_active = (0..k).filter(|&kk| activity[(kk, t)]).count();
        if n_active == 0 {
            return Err(GssError::NoActiveClass { frame: t });
        }
        let p = 1.0 / n_active as f64;
        for kk in 0..k {
            if activity[(kk, t)] {
                for f in 0..frequencies {
                    gamma[(kk, t, f)] = p;
                }
            }
        }
    }
    Ok(MaskSet::new(gamma, classes))
}

fn ln_gamma_integer(d: usize) -> f64 {
    (1..d).map(|i| (i as f64).ln()).sum()
}

struct BinUpdate {
    gamma: Array2<f64>,
    shapes: Array3<Complex64>,
    log_likelihood: f64,
}

fn invert_shape(
    b: &Array2<Complex64>,
    base_reg: f64,
    freq: usize,
    class: usize,
) -> Result<(Array2<Complex64>, f64), GssError> {
    let d = b.nrows();
    let tr = linalg::trace(b.view()).re.max(1e-300);
    let mut reg = base_reg.max(1e-300);
    for _ in 0..4 {
        let mut loaded = b.clone();
        linalg::add_diagonal(&mut loaded, reg * tr / d as f64);
        if let Ok(res) = linalg::hpd_inverse_logdet(&loaded) {
            return Ok(res);
        }
        reg = (reg * 10.0).max(1e-8);
    }
    Err(GssError::SingularShapeMatrix { class, freq })
}

#[allow(clippy::too_many_arguments)]
fn em_bin(
    f: usize,
    obs: &Array3<Complex64>,
    flags: &Array2<bool>,
    state: &CacgmmState,
    activity: &Array2<bool>,
) -> Result<BinUpdate, GssError> {
    let channels = obs.shape()[0];
    let frames = obs.shape()[1];
    let k_classes = state.classes.len();
    let d_f = channels as f64;
    let lognorm = ln_gamma_integer(channels)
        - std::f64::consts::LN_2
        - d_f * std::f64::consts::PI.ln();

    let mut y = Array2::zeros((channels, frames));
    for c in 0..channels {
        for t in 0..frames {
            y[(c, t)] = obs[(c, t, f)];
        }
    }

    // E-step quantities from the current state
    let mut quad = Array2::<f64>::zeros((k_classes, frames));
    let mut scores = Array2::<f64>::from_elem((k_classes, frames), f64::NEG_INFINITY);
    for k in 0..k_classes {
        let b = state.shape_matrix(f, k).to_owned();
        let (inv, logdet) = invert_shape(&b, state.inverse_regularization, f, k)?;
        let v = inv.dot(&y);
        for t in 0..frames {
            let mut q = 0.0;
            for c in 0..channels {
                q += (y[(c, t)].conj() * v[(c, t)]).re;
            }
            let q = q.max(1e-300);
            quad[(k, t)] = q;
            let pi = state.weights[(t, k)];
            if activity[(k, t)] && pi > 0.0 {
                scores[(k, t)] = pi.ln() + lognorm - logdet - d_f * q.ln();
            }
        }
    }

    // posteriors and the pre-update log-likelihood
    let mut gamma = Array2::<f64>::zeros((k_classes, frames));
    let mut log_likelihood = 0.0;
    for t in 0..frames {
        if flags[(t, f)] {
            let n_active = (0..k_classes).filter(|&k| activity[(k, t)]).count();
            let p = 1.0 / n_active.max(1) as f64;
            for k in 0..k_classes {
                if activity[(k, t)] {
                    gamma[(k, t)] = p;
                }
            }
            continue;
        }
        let mut mx = f64::NEG_INFINITY;
        for k in 0..k_classes {
            mx = mx.max(scores[(k, t)]);
        }
        if !mx.is_finite() {
            // all active weights vanished; fall back to uniform over active
            let n_active = (0..k_classes).filter(|&k| activity[(k, t)]).count();
            let p = 1.0 / n_active.max(1) as f64;
            for k in 0..k_classes {
                if activity[(k, t)] {
                    gamma[(k, t)] = p;
                }
            }
            continue;
        }
        let mut denom = 0.0;
        for k in 0..k_classes {
            let s = scores[(k, t)];
            if s.is_finite() {
                let e = (s - mx).exp();
                gamma[(k, t)] = e;
                denom += e;
            }
        }
        for k in 0..k_classes {
            gamma[(k, t)] /= denom;
        }
        log_likelihood += mx + denom.ln();
    }

    // M-step: reweighted shape matrices, trace-normalized to the channel count
    let mut shapes = Array3::zeros((k_classes, channels, channels));
    for k in 0..k_classes {
        let mut w = vec![0.0; frames];
        let mut gsum = 0.0;
        for t in 0..frames {
            if flags[(t, f)] {
                continue;
            }
            let g = gamma[(k, t)];
            if g > 0.0 {
                w[t] = g / quad[(k, t)];
                gsum += g;
            }
        }
        if gsum > 0.0 {
            let mut bn = linalg::weighted_gram(y.view(), &w);
            let tr = linalg::trace(bn.view()).re;
            if tr > 0.0 {
                let scale = Complex64::new(d_f / tr, 0.0);
                bn.mapv_inplace(|v| v * scale);
                linalg::hermitize(&mut bn);
                shapes.index_axis_mut(Axis(0), k).assign(&bn);
                continue;
            }
        }
        // class saw no usable frames at this bin: keep the previous matrix
        shapes
            .index_axis_mut(Axis(0), k)
            .assign(&state.shape_matrix(f, k));
    }

    Ok(BinUpdate {
        gamma,
        shapes,
        log_likelihood,
    })
}

/// One EM iteration. The returned mask set and log-likelihood are the E-step
/// outputs under the incoming state; the returned state carries the M-step
/// update.
pub fn em_step(
    state: &CacgmmState,
    normalized_obs: &Array3<Complex64>,
    zero_flags: &Array2<bool>,
    act: &ActivityPattern,
) -> Result<(CacgmmState, MaskSet, f64), GssError> {
    let channels = normalized_obs.shape()[0];
    let frames = normalized_obs.shape()[1];
    let freqs = normalized_obs.shape()[2];
    if channels != state.channels() || frames != state.frames() || freqs != state.frequencies() {
        return Err(GssError::DimensionMismatch {
            obs: normalized_obs.shape().to_vec(),
            state: vec![state.frequencies(), state.frames(), state.channels()],
        });
    }
    let activity = class_activity(act, frames, state.includes_noise)?;
    let k_classes = state.classes.len();

    let updates: Result<Vec<BinUpdate>, GssError> = (0..freqs)
        .into_par_iter()
        .map(|f| em_bin(f, normalized_obs, zero_flags, state, &activity))
        .collect();
    let updates = updates?;

    let mut gamma = Array3::zeros((k_classes, frames, freqs));
    let mut shape_matrices = Array4::zeros((freqs, k_classes, channels, channels));
    let mut log_likelihood = 0.0;
    for (f, u) in updates.iter().enumerate() {
        for k in 0..k_classes {
            for t in 0..frames {
                gamma[(k, t, f)] = u.gamma[(k, t)];
            }
        }
        shape_matrices
            .index_axis_mut(Axis(0), f)
            .assign(&u.shapes);
        log_likelihood += u.log_likelihood;
    }

    // frequency-shared weight update, re-zeroed by activity and renormalized
    let mut weights = Array2::zeros((frames, k_classes));
    for t in 0..frames {
        let mut sum = 0.0;
        for k in 0..k_classes {
            if activity[(k, t)] {
                let mean: f64 =
                    (0..freqs).map(|f| gamma[(k, t, f)]).sum::<f64>() / freqs as f64;
                weights[(t, k)] = mean;
                sum += mean;
            }
        }
        if sum > 0.0 {
            for k in 0..k_classes {
                weights[(t, k)] /= sum;
            }
        } else {
            let n_active = (0..k_classes).filter(|&k| activity[(k, t)]).count();
            for k in 0..k_classes {
                if activity[(k, t)] {
                    weights[(t, k)] = 1.0 / n_active as f64;
                }
            }
        }
    }

    let new_state = CacgmmState {
        shape_matrices,
        weights,
        classes: state.classes.clone(),
        includes_noise: state.includes_noise,
        inverse_regularization: state.inverse_regularization,
    };
    Ok((
        new_state,
        MaskSet::new(gamma, state.classes.clone()),
        log_likelihood,
    ))
}

/// Full guided separation: normalize, initialize from the activity guide, and
/// iterate EM. With zero iterations this returns the initialization.
pub fn run_gss(
    s: &MultiChannelSpectrogram,
    act: &ActivityPattern,
    cfg: &GssConfig,
) -> Result<MaskSet, GssError> {
    let frames = s.frames();
    let freqs = s.frequencies();
    let (obs, flags) = unit_normalize_bins(s);
    let init = init_posteriors(act, frames, freqs, cfg.include_noise_class)?;
    if cfg.iterations == 0 {
        return Ok(init);
    }
    let mut state = CacgmmState::initial(
        &init,
        freqs,
        s.channels(),
        cfg.include_noise_class,
        cfg.inverse_regularization,
    );
    let mut masks = init;
    for _ in 0..cfg.iterations {
        let (next, m, _ll) = em_step(&state, &obs, &flags, act)?;
        state = next;
        masks = m;
    }
    Ok(masks)
}

/// Split a mask set into the target speaker's mask and the summed mask of
/// everything else.
pub fn extract_masks(
    masks: &MaskSet,
    target: &str,
) -> Result<(Array2<f64>, Array2<f64>), GssError> {
    let idx = masks
        .class_index(target)
        .ok_or_else(|| GssError::UnknownClass(target.to_string()))?;
    let target_mask = masks.class_mask(idx);
    let mut distortion = Array2::zeros((masks.frames(), masks.frequencies()));
    for (k, _) in masks.classes().iter().enumerate() {
        if k == idx {
            continue;
        }
        distortion += &masks.class_mask(k);
    }
    Ok((target_mask, distortion))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{build_activity_frames, UtteranceAnnotation};
    use crate::signal::StftConfig;
    use ndarray::Array3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn ann(id: &str, spk: &str, start: f64, end: f64) -> UtteranceAnnotation {
        UtteranceAnnotation {
            utterance_id: id.into(),
            speaker_id: spk.into(),
            start,
            end,
        }
    }

    fn small_cfg() -> StftConfig {
        StftConfig {
            fft_size: 16,
            shift: 4,
            ..StftConfig::default()
        }
    }

    /// Two sources with fixed random steering vectors; the first speaker is
    /// active on frames [0, t/2), the second on [t/4, t); low-level noise
    /// everywhere.
    fn synthetic_scene(
        seed: u64,
        channels: usize,
        frames: usize,
    ) -> (MultiChannelSpectrogram, ActivityPattern) {
        let cfg = small_cfg();
        let freqs = cfg.frequencies();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut steering = Array3::<Complex64>::zeros((2, channels, freqs));
        for s in 0..2 {
            for c in 0..channels {
                for f in 0..freqs {
                    steering[(s, c, f)] = Complex64::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                }
            }
        }
        let shift_s = cfg.frame_shift_seconds(16000);
        let anns = vec![
            ann("u1", "p1", 0.0, frames as f64 * shift_s / 2.0),
            ann(
                "u2",
                "p2",
                frames as f64 * shift_s / 4.0,
                frames as f64 * shift_s,
            ),
        ];
        let act = build_activity_frames(&anns, frames, shift_s, 0.0).unwrap();

        let mut bins = Array3::<Complex64>::zeros((channels, frames, freqs));
        for t in 0..frames {
            for f in 0..freqs {
                for s in 0..2 {
                    if !act.is_active(s, t) {
                        continue;
                    }
                    let g = Complex64::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    for c in 0..channels {
                        bins[(c, t, f)] += g * steering[(s, c, f)];
                    }
                }
                for c in 0..channels {
                    bins[(c, t, f)] += Complex64::new(
                        rng.random_range(-0.05..0.05),
                        rng.random_range(-0.05..0.05),
                    );
                }
            }
        }
        let sp = MultiChannelSpectrogram::from_parts(bins, cfg, 16000).unwrap();
        (sp, act)
    }

    #[test]
    fn init_splits_mass_over_active_classes() {
        let anns = vec![ann("u1", "p1", 0.0, 0.4), ann("u2", "p2", 0.0, 0.4), ann("u3", "p3", 2.0, 3.0)];
        let act = build_activity_frames(&anns, 10, 0.1, 0.0).unwrap();
        let masks = init_posteriors(&act, 10, 4, true).unwrap();
        let p1 = masks.class_index("p1").unwrap();
        let p3 = masks.class_index("p3").unwrap();
        let noise = masks.class_index(NOISE_CLASS).unwrap();
        // frame 0: p1, p2, noise active
        assert!((masks.gamma()[(p1, 0, 0)] - 1.0 / 3.0).abs() < 1e-12);
        assert!((masks.gamma()[(noise, 0, 0)] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(masks.gamma()[(p3, 0, 0)], 0.0);
        // frame 5 covers [0.5, 0.6): between utterances, noise alone
        assert!((masks.gamma()[(noise, 5, 0)] - 1.0).abs() < 1e-12);
        assert_eq!(masks.gamma()[(p1, 5, 0)], 0.0);
    }

    #[test]
    fn init_single_speaker_without_noise() {
        let anns = vec![ann("u1", "p1", 0.0, 1.0)];
        let act = build_activity_frames(&anns, 5, 0.2, 0.0).unwrap();
        let masks = init_posteriors(&act, 5, 3, false).unwrap();
        assert!(masks.gamma().iter().all(|&g| (g - 1.0).abs() < 1e-12));
    }

    #[test]
    fn init_errors_without_any_active_class() {
        let anns = vec![ann("u1", "p1", 0.0, 0.5)];
        let act = build_activity_frames(&anns, 10, 0.1, 0.0).unwrap();
        let err = init_posteriors(&act, 10, 3, false).unwrap_err();
        assert!(matches!(err, GssError::NoActiveClass { .. }));
        assert!(err.to_string().contains("noise"));
    }

    #[test]
    fn init_rejects_reserved_speaker_name() {
        let anns = vec![ann("u1", NOISE_CLASS, 0.0, 1.0)];
        let act = build_activity_frames(&anns, 5, 0.2, 0.0).unwrap();
        assert!(matches!(
            init_posteriors(&act, 5, 3, true),
            Err(GssError::ReservedClassName(_))
        ));
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let (sp, act) = synthetic_scene(3, 3, 40);
        let cfg = GssConfig {
            iterations: 0,
            ..GssConfig::default()
        };
        let masks = run_gss(&sp, &act, &cfg).unwrap();
        let init = init_posteriors(&act, sp.frames(), sp.frequencies(), true).unwrap();
        assert_eq!(masks, init);
    }

    #[test]
    fn activity_constraint_and_normalization_hold_every_iteration() {
        let (sp, act) = synthetic_scene(11, 4, 60);
        let (obs, flags) = unit_normalize_bins(&sp);
        let init = init_posteriors(&act, sp.frames(), sp.frequencies(), true).unwrap();
        let mut state = CacgmmState::initial(&init, sp.frequencies(), 4, true, 1e-10);
        for _ in 0..5 {
            let (next, masks, _) = em_step(&state, &obs, &flags, &act).unwrap();
            for t in 0..sp.frames() {
                for f in 0..sp.frequencies() {
                    let mut sum = 0.0;
                    for (k, _) in masks.classes().iter().enumerate() {
                        let g = masks.gamma()[(k, t, f)];
                        if k < 2 && !act.is_active(k, t) {
                            assert_eq!(g, 0.0, "inactive speaker has posterior mass");
                        }
                        sum += g;
                    }
                    assert!((sum - 1.0).abs() < 1e-9, "masks at ({t},{f}) sum to {sum}");
                }
            }
            state = next;
        }
    }

    #[test]
    fn log_likelihood_is_non_decreasing() {
        let (sp, act) = synthetic_scene(21, 4, 80);
        let (obs, flags) = unit_normalize_bins(&sp);
        let init = init_posteriors(&act, sp.frames(), sp.frequencies(), true).unwrap();
        let mut state = CacgmmState::initial(&init, sp.frequencies(), 4, true, 1e-10);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..20 {
            let (next, _, ll) = em_step(&state, &obs, &flags, &act).unwrap();
            assert!(
                ll >= prev - 1e-6 * prev.abs(),
                "iteration {i}: log-likelihood fell from {prev} to {ll}"
            );
            prev = ll;
            state = next;
        }
    }

    #[test]
    fn shape_matrices_stay_hermitian_and_trace_normalized() {
        let (sp, act) = synthetic_scene(31, 3, 50);
        let (obs, flags) = unit_normalize_bins(&sp);
        let init = init_posteriors(&act, sp.frames(), sp.frequencies(), true).unwrap();
        let mut state = CacgmmState::initial(&init, sp.frequencies(), 3, true, 1e-10);
        for _ in 0..4 {
            let (next, _, _) = em_step(&state, &obs, &flags, &act).unwrap();
            state = next;
        }
        for f in 0..sp.frequencies() {
            for k in 0..state.classes().len() {
                let b = state.shape_matrix(f, k);
                for i in 0..3 {
                    for j in 0..3 {
                        assert!((b[(i, j)] - b[(j, i)].conj()).norm() < 1e-10);
                    }
                }
                let tr = linalg::trace(b).re;
                assert!((tr - 3.0).abs() < 1e-9, "trace {tr}");
            }
        }
    }

    #[test]
    fn speaker_permutation_permutes_masks() {
        let (sp, _) = synthetic_scene(41, 3, 48);
        let shift_s = small_cfg().frame_shift_seconds(16000);
        let dur = 48.0 * shift_s;
        let a = vec![ann("u1", "p1", 0.0, dur / 2.0), ann("u2", "p2", dur / 4.0, dur)];
        let b = vec![ann("u2", "p2", dur / 4.0, dur), ann("u1", "p1", 0.0, dur / 2.0)];
        let act_a = build_activity_frames(&a, 48, shift_s, 0.0).unwrap();
        let act_b = build_activity_frames(&b, 48, shift_s, 0.0).unwrap();
        let cfg = GssConfig {
            iterations: 5,
            ..GssConfig::default()
        };
        let m_a = run_gss(&sp, &act_a, &cfg).unwrap();
        let m_b = run_gss(&sp, &act_b, &cfg).unwrap();
        for name in ["p1", "p2", NOISE_CLASS] {
            let ka = m_a.class_index(name).unwrap();
            let kb = m_b.class_index(name).unwrap();
            for t in 0..m_a.frames() {
                for f in 0..m_a.frequencies() {
                    let va = m_a.gamma()[(ka, t, f)];
                    let vb = m_b.gamma()[(kb, t, f)];
                    assert!((va - vb).abs() < 1e-10, "{name} differs at ({t},{f})");
                }
            }
        }
    }

    #[test]
    fn global_phase_change_leaves_masks_unchanged() {
        let (sp, act) = synthetic_scene(51, 3, 40);
        let cfg = GssConfig {
            iterations: 4,
            ..GssConfig::default()
        };
        let m1 = run_gss(&sp, &act, &cfg).unwrap();

        let mut rotated = sp.bins().clone();
        let phase = Complex64::from_polar(1.0, 1.234);
        for c in 0..sp.channels() {
            rotated[(c, 7, 3)] *= phase;
        }
        let sp2 =
            MultiChannelSpectrogram::from_parts(rotated, *sp.config(), sp.sample_rate()).unwrap();
        let m2 = run_gss(&sp2, &act, &cfg).unwrap();
        for k in 0..m1.classes().len() {
            for t in 0..m1.frames() {
                for f in 0..m1.frequencies() {
                    assert!((m1.gamma()[(k, t, f)] - m2.gamma()[(k, t, f)]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn extract_masks_sums_to_one() {
        let (sp, act) = synthetic_scene(61, 3, 40);
        let masks = run_gss(
            &sp,
            &act,
            &GssConfig {
                iterations: 3,
                ..GssConfig::default()
            },
        )
        .unwrap();
        let (target, distortion) = extract_masks(&masks, "p1").unwrap();
        for t in 0..masks.frames() {
            for f in 0..masks.frequencies() {
                assert!((target[(t, f)] + distortion[(t, f)] - 1.0).abs() < 1e-9);
            }
        }
        assert!(matches!(
            extract_masks(&masks, "p9"),
            Err(GssError::UnknownClass(_))
        ));
    }

    #[test]
    fn inactive_target_has_zero_mask() {
        let anns = vec![ann("u1", "p1", 0.0, 1.0), ann("u2", "p2", 2.0, 3.0)];
        let act = build_activity_frames(&anns, 10, 0.1, 0.0).unwrap();
        let masks = init_posteriors(&act, 10, 4, true).unwrap();
        let (target, _) = extract_masks(&masks, "p2").unwrap();
        for t in 0..10 {
            let span_start = t as f64 * 0.1;
            if span_start + 0.1 <= 2.0 {
                for f in 0..4 {
                    assert_eq!(target[(t, f)], 0.0);
                }
            }
        }
    }
}
