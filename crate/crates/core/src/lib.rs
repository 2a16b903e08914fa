//! Multichannel speech enhancement front-end built around guided source
//! separation: STFT analysis/synthesis, WPE dereverberation, annotation-guided
//! cACGMM mask estimation, MVDR beamforming with a BAN postfilter, plus a
//! deterministic scene simulator, signal metrics, and hypothesis
//! deduplication for downstream transcript post-processing.

// Pull in the BLAS backend so the linker sees OpenBLAS exactly once.
extern crate blas_src;

pub mod annotations;
pub mod beamform;
pub mod dereverb;
pub mod gss;
pub mod hypo;
pub mod linalg;
pub mod maskio;
pub mod metrics;
pub mod pipeline;
pub mod scene;
pub mod signal;
pub mod wav;

pub use annotations::{
    build_activity, extend_context, refine_with_alignment, ActivityPattern, AlignmentTrack,
    AnnotationError, ContextConfig, UtteranceAnnotation,
};
pub use beamform::{
    apply_beamformer, ban_gain, estimate_psd, mvdr_souden, select_reference, BeamformError,
    BeamformerWeights, CovariancePair,
};
pub use dereverb::{wpe, DereverbError, WpeConfig};
pub use gss::{
    extract_masks, init_posteriors, run_gss, CacgmmState, GssConfig, GssError, MaskSet,
};
pub use hypo::{deduplicate, HypoError, HypothesisWord};
pub use metrics::{evaluate_scene, si_sdr, EvalReport, MetricsError, UtteranceScore};
pub use pipeline::{
    enhance_scene, enhance_utterance, run_enhance, run_enhance_files, run_evaluate, run_simulate,
    EnhanceInputs, EnhanceSummary, PipelineConfig, PipelineError, ReferencePolicy, SceneManifest,
};
pub use scene::{
    generate_scene, oracle_alignment, ReverbConfig, SceneConfig, SceneError, SceneGroundTruth,
    SourceKind,
};
pub use signal::{
    istft, istft_frames, stack_arrays, stft, unit_normalize_bins, MultiChannelSpectrogram,
    PadMode, SignalError, StackPolicy, StftConfig, WaveformSegment, WindowKind,
};
