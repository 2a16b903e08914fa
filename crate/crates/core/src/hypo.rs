//! Hypothesis deduplication: when the same word is recognized in temporally
//! overlapping utterances (cross-talk picked up in both channels), keep the
//! higher-confidence occurrence and drop the other.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HypoError {
    #[error("bad ctm line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error("invalid word {token:?} in {utterance_id}: {reason}")]
    InvalidWord {
        utterance_id: String,
        token: String,
        reason: String,
    },
    #[error("i/o failed for {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisWord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub token: String,
    pub start: f64,
    pub end: f64,
    pub confidence: f64,
}

impl HypothesisWord {
    pub fn validate(&self) -> Result<(), HypoError> {
        if !(self.start < self.end) {
            return Err(HypoError::InvalidWord {
                utterance_id: self.utterance_id.clone(),
                token: self.token.clone(),
                reason: format!("start {} must be < end {}", self.start, self.end),
            });
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(HypoError::InvalidWord {
                utterance_id: self.utterance_id.clone(),
                token: self.token.clone(),
                reason: format!("confidence {} outside [0, 1]", self.confidence),
            });
        }
        Ok(())
    }

    fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// True when `a` outranks `b` in a duplicate pair: higher confidence wins,
/// then the earlier start, then the lexicographically smaller utterance id.
fn wins(a: &HypothesisWord, b: &HypothesisWord) -> bool {
    if a.confidence != b.confidence {
        return a.confidence > b.confidence;
    }
    if a.start != b.start {
        return a.start < b.start;
    }
    a.utterance_id < b.utterance_id
}

/// Remove duplicated words across overlapping utterances. For every pair of
/// words from different utterances with the same case-folded token whose
/// temporal intersection reaches `overlap_threshold` times the shorter
/// duration, the losing word is marked for removal. Marks are computed
/// against the original list in a single pass (no cascading) and the
/// surviving words keep their input order.
pub fn deduplicate(words: &[HypothesisWord], overlap_threshold: f64) -> Vec<HypothesisWord> {
    let mut removed = vec![false; words.len()];
    for i in 0..words.len() {
        for j in (i + 1)..words.len() {
            let (a, b) = (&words[i], &words[j]);
            if a.utterance_id == b.utterance_id {
                continue;
            }
            if !a.token.eq_ignore_ascii_case(&b.token)
                && a.token.to_lowercase() != b.token.to_lowercase()
            {
                continue;
            }
            let intersection = a.end.min(b.end) - a.start.max(b.start);
            if intersection <= 0.0 {
                continue;
            }
            if intersection < overlap_threshold * a.duration().min(b.duration()) {
                continue;
            }
            if wins(a, b) {
                removed[j] = true;
            } else {
                removed[i] = true;
            }
        }
    }
    words
        .iter()
        .zip(removed.iter())
        .filter(|(_, r)| !**r)
        .map(|(w, _)| w.clone())
        .collect()
}

/// Parse CTM-style lines: `utterance_id speaker_id start duration token confidence`.
pub fn read_ctm(path: &Path) -> Result<Vec<HypothesisWord>, HypoError> {
    let text = std::fs::read_to_string(path).map_err(|e| HypoError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_ctm(&text)
}

pub fn parse_ctm(text: &str) -> Result<Vec<HypothesisWord>, HypoError> {
    let mut words = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(HypoError::BadLine {
                line: lineno + 1,
                reason: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let start: f64 = fields[2].parse().map_err(|_| HypoError::BadLine {
            line: lineno + 1,
            reason: format!("bad start {:?}", fields[2]),
        })?;
        let duration: f64 = fields[3].parse().map_err(|_| HypoError::BadLine {
            line: lineno + 1,
            reason: format!("bad duration {:?}", fields[3]),
        })?;
        let confidence: f64 = fields[5].parse().map_err(|_| HypoError::BadLine {
            line: lineno + 1,
            reason: format!("bad confidence {:?}", fields[5]),
        })?;
        let word = HypothesisWord {
            utterance_id: fields[0].to_string(),
            speaker_id: fields[1].to_string(),
            token: fields[4].to_string(),
            start,
            end: start + duration,
            confidence,
        };
        word.validate()?;
        words.push(word);
    }
    Ok(words)
}

pub fn write_ctm(path: &Path, words: &[HypothesisWord]) -> Result<(), HypoError> {
    let mut out = String::new();
    for w in words {
        out.push_str(&format!(
            "{} {} {:.3} {:.3} {} {:.3}\n",
            w.utterance_id,
            w.speaker_id,
            w.start,
            w.duration(),
            w.token,
            w.confidence
        ));
    }
    std::fs::write(path, out).map_err(|e| HypoError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}
