//! Frame-level speaker activity derived from utterance time annotations.
//!
//! The activity pattern is the guide for the mask estimator: context
//! extension widens each utterance window, and alignment tracks (from an
//! oracle or an external recognizer) strike out frames the annotations marked
//! active but that carry no speech.

use std::collections::HashSet;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("invalid annotation {utterance_id}: start {start} must be >= 0 and < end {end}")]
    InvalidInterval {
        utterance_id: String,
        start: f64,
        end: f64,
    },
    #[error("utterance {utterance_id} ends at {end} s, beyond the recording ({recording_len} s)")]
    BeyondRecording {
        utterance_id: String,
        end: f64,
        recording_len: f64,
    },
    #[error("empty activity window ({start} >= {end})")]
    EmptyWindow { start: f64, end: f64 },
    #[error("frame shift must be positive, got {0}")]
    InvalidFrameShift(f64),
    #[error("alignment track references unknown speaker {0}")]
    UnknownSpeaker(String),
    #[error("invalid alignment segments for speaker {0}: must be sorted, non-overlapping, start < end")]
    InvalidSegments(String),
    #[error("failed to read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("failed to parse {path}: {reason}")]
    Parse { path: String, reason: String },
}

/// One annotated utterance: who spoke when.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceAnnotation {
    pub utterance_id: String,
    pub speaker_id: String,
    pub start: f64,
    pub end: f64,
}

impl UtteranceAnnotation {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        if !(self.start >= 0.0 && self.start < self.end) {
            return Err(AnnotationError::InvalidInterval {
                utterance_id: self.utterance_id.clone(),
                start: self.start,
                end: self.end,
            });
        }
        Ok(())
    }
}

/// Per-speaker speech segments from a forced alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTrack {
    pub speaker_id: String,
    pub speech_segments: Vec<(f64, f64)>,
}

impl AlignmentTrack {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        let mut prev_end = f64::NEG_INFINITY;
        for &(s, e) in &self.speech_segments {
            if !(s < e) || s < prev_end {
                return Err(AnnotationError::InvalidSegments(self.speaker_id.clone()));
            }
            prev_end = e;
        }
        Ok(())
    }
}

/// Symmetric context window around an utterance, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextConfig {
    pub left: f64,
    pub right: f64,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            left: 15.0,
            right: 15.0,
        }
    }
}

/// Per-speaker, per-frame boolean activity.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityPattern {
    speakers: Vec<String>,
    active: Array2<bool>,
    frame_shift: f64,
    frame_offset: f64,
}

impl ActivityPattern {
    pub fn new(
        speakers: Vec<String>,
        active: Array2<bool>,
        frame_shift: f64,
        frame_offset: f64,
    ) -> Result<Self, AnnotationError> {
        if frame_shift <= 0.0 {
            return Err(AnnotationError::InvalidFrameShift(frame_shift));
        }
        assert_eq!(speakers.len(), active.nrows(), "one row per speaker");
        Ok(Self {
            speakers,
            active,
            frame_shift,
            frame_offset,
        })
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn frames(&self) -> usize {
        self.active.ncols()
    }

    pub fn frame_shift(&self) -> f64 {
        self.frame_shift
    }

    pub fn frame_offset(&self) -> f64 {
        self.frame_offset
    }

    pub fn active(&self) -> &Array2<bool> {
        &self.active
    }

    pub fn is_active(&self, speaker: usize, frame: usize) -> bool {
        self.active[(speaker, frame)]
    }

    pub fn speaker_index(&self, speaker_id: &str) -> Option<usize> {
        self.speakers.iter().position(|s| s == speaker_id)
    }

    /// Count of active speakers at a frame.
    pub fn active_count(&self, frame: usize) -> usize {
        (0..self.speakers.len())
            .filter(|&s| self.active[(s, frame)])
            .count()
    }

    /// Time span covered by frame `t`: `[offset + t*shift, offset + (t+1)*shift)`.
    pub fn frame_span(&self, t: usize) -> (f64, f64) {
        let start = self.frame_offset + t as f64 * self.frame_shift;
        (start, start + self.frame_shift)
    }
}

fn intervals_overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> bool {
    a0 < b1 && b0 < a1
}

/// Widen an utterance by the context window, clamped to the recording.
pub fn extend_context(
    u: &UtteranceAnnotation,
    ctx: &ContextConfig,
    recording_len: f64,
) -> Result<(f64, f64), AnnotationError> {
    u.validate()?;
    if u.end > recording_len {
        return Err(AnnotationError::BeyondRecording {
            utterance_id: u.utterance_id.clone(),
            end: u.end,
            recording_len,
        });
    }
    let start = (u.start - ctx.left).max(0.0);
    let end = (u.end + ctx.right).min(recording_len);
    Ok((start, end))
}

/// Rasterize annotations onto a frame grid over `window`. A frame is active
/// for a speaker iff any of that speaker's annotated intervals overlaps the
/// frame span. The speaker roster is taken from `anns` in order of first
/// appearance, so speakers silent inside the window still get a row.
pub fn build_activity(
    anns: &[UtteranceAnnotation],
    window: (f64, f64),
    frame_shift: f64,
    frame_offset: f64,
) -> Result<ActivityPattern, AnnotationError> {
    let (start, end) = window;
    if end <= start {
        return Err(AnnotationError::EmptyWindow { start, end });
    }
    if frame_shift <= 0.0 {
        return Err(AnnotationError::InvalidFrameShift(frame_shift));
    }
    let frames = ((end - start) / frame_shift).ceil().max(1.0) as usize;
    build_activity_frames(anns, frames, frame_shift, frame_offset)
}

/// Same as [`build_activity`] with an explicit frame count, for callers that
/// must match an existing spectrogram grid.
pub fn build_activity_frames(
    anns: &[UtteranceAnnotation],
    frames: usize,
    frame_shift: f64,
    frame_offset: f64,
) -> Result<ActivityPattern, AnnotationError> {
    if frame_shift <= 0.0 {
        return Err(AnnotationError::InvalidFrameShift(frame_shift));
    }
    let mut speakers: Vec<String> = Vec::new();
    for a in anns {
        a.validate()?;
        if !speakers.contains(&a.speaker_id) {
            speakers.push(a.speaker_id.clone());
        }
    }
    let mut active = Array2::from_elem((speakers.len(), frames), false);
    for a in anns {
        let row = speakers.iter().position(|s| *s == a.speaker_id).unwrap();
        // frames whose span [offset + t*shift, offset + (t+1)*shift) intersects [a.start, a.end)
        let first = ((a.start - frame_offset) / frame_shift - 1.0).floor().max(0.0) as usize;
        for t in first..frames {
            let span_start = frame_offset + t as f64 * frame_shift;
            if span_start >= a.end {
                break;
            }
            if intervals_overlap(span_start, span_start + frame_shift, a.start, a.end) {
                active[(row, t)] = true;
            }
        }
    }
    ActivityPattern::new(speakers, active, frame_shift, frame_offset)
}

/// Strike out activity where the alignment indicates silence. For each
/// speaker with a track, a frame stays active only if it was active and its
/// span overlaps a speech segment; speakers without a track are unchanged.
pub fn refine_with_alignment(
    act: &ActivityPattern,
    tracks: &[AlignmentTrack],
) -> Result<ActivityPattern, AnnotationError> {
    let known: HashSet<&str> = act.speakers.iter().map(|s| s.as_str()).collect();
    for t in tracks {
        t.validate()?;
        if !known.contains(t.speaker_id.as_str()) {
            return Err(AnnotationError::UnknownSpeaker(t.speaker_id.clone()));
        }
    }
    let mut refined = act.active.clone();
    for track in tracks {
        let row = act.speaker_index(&track.speaker_id).unwrap();
        for t in 0..act.frames() {
            if !refined[(row, t)] {
                continue;
            }
            let (s0, s1) = act.frame_span(t);
            let speech = track
                .speech_segments
                .iter()
                .any(|&(a, b)| intervals_overlap(s0, s1, a, b));
            if !speech {
                refined[(row, t)] = false;
            }
        }
    }
    ActivityPattern::new(
        act.speakers.clone(),
        refined,
        act.frame_shift,
        act.frame_offset,
    )
}

pub fn read_annotations(path: &Path) -> Result<Vec<UtteranceAnnotation>, AnnotationError> {
    let text = std::fs::read_to_string(path).map_err(|e| AnnotationError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let anns: Vec<UtteranceAnnotation> =
        serde_json::from_str(&text).map_err(|e| AnnotationError::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    for a in &anns {
        a.validate()?;
    }
    Ok(anns)
}

pub fn write_annotations(
    path: &Path,
    anns: &[UtteranceAnnotation],
) -> Result<(), AnnotationError> {
    let text = serde_json::to_string_pretty(anns).expect("annotations serialize");
    std::fs::write(path, text).map_err(|e| AnnotationError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn read_alignments(path: &Path) -> Result<Vec<AlignmentTrack>, AnnotationError> {
    let text = std::fs::read_to_string(path).map_err(|e| AnnotationError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let tracks: Vec<AlignmentTrack> =
        serde_json::from_str(&text).map_err(|e| AnnotationError::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    for t in &tracks {
        t.validate()?;
    }
    Ok(tracks)
}

pub fn write_alignments(path: &Path, tracks: &[AlignmentTrack]) -> Result<(), AnnotationError> {
    let text = serde_json::to_string_pretty(tracks).expect("alignments serialize");
    std::fs::write(path, text).map_err(|e| AnnotationError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}
