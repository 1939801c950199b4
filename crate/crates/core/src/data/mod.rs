//! Dataset records, the construction filters, and the two-stage curriculum.
//!
//! Records are JSON lines; see `docs/formats.md` for the exact schema.

mod curriculum;
mod filters;
mod stats;
pub mod synthetic;

pub use curriculum::{curriculum_batches, Batch, CurriculumStage, CurriculumStream, MixWeights, Stage};
pub use filters::{
    filter_label_coverage, filter_min_duration, label_coverage, meets_label_coverage,
    meets_min_duration,
};
pub use stats::DatasetStats;

use crate::rewards::Interval;
use crate::videorep::{FrameAttachment, VideoMeta};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use thiserror::Error;

/// Value of the optional `schema` field in dataset records.
pub const SAMPLE_SCHEMA: &str = "twg-sample/v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{} invalid record(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Diagnostic>),
    #[error("threshold {0} is outside its valid range")]
    BadThreshold(f64),
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("no samples are admitted by {0:?}")]
    NothingAdmitted(Stage),
    #[error("invalid sample {id}: {reason}")]
    InvalidSample { id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[serde(rename = "nextgqa")]
    NextGqa,
    #[serde(rename = "cgbench")]
    CgBench,
    #[serde(rename = "generalqa")]
    GeneralQa,
    Synthetic,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::NextGqa, Source::CgBench, Source::GeneralQa, Source::Synthetic];

    pub fn as_str(&self) -> &'static str {
        match self {
            Source::NextGqa => "nextgqa",
            Source::CgBench => "cgbench",
            Source::GeneralQa => "generalqa",
            Source::Synthetic => "synthetic",
        }
    }
}

impl std::str::FromStr for Source {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .into_iter()
            .find(|src| src.as_str() == s)
            .ok_or_else(|| format!("unknown source {s:?}"))
    }
}

/// One multiple-choice QA instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SampleRecord", into = "SampleRecord")]
pub struct Sample {
    pub sample_id: String,
    pub video: VideoMeta,
    pub question: String,
    pub options: Vec<String>,
    /// Option letter, `A` for `options[0]`.
    pub answer_key: String,
    pub gt_grounding: Option<Interval<f64>>,
    pub source: Source,
}

impl Sample {
    pub fn is_labeled(&self) -> bool {
        self.gt_grounding.is_some()
    }

    pub fn option_letters(&self) -> impl Iterator<Item = char> + '_ {
        (b'A'..).take(self.options.len()).map(char::from)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.sample_id.trim().is_empty() {
            return Err("empty sample_id".into());
        }
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        if !(2..=26).contains(&self.options.len()) {
            return Err(format!("expected 2..=26 options, got {}", self.options.len()));
        }
        self.video.validate().map_err(|e| e.to_string())?;
        let mut key = self.answer_key.chars();
        let valid_key = match (key.next(), key.next()) {
            (Some(k), None) => self.option_letters().any(|l| l == k),
            _ => false,
        };
        if !valid_key {
            return Err(format!(
                "answer_key {:?} does not name one of {} options",
                self.answer_key,
                self.options.len()
            ));
        }
        if let Some(g) = &self.gt_grounding {
            if g.start_s < 0.0 || g.end_s > self.video.duration_s {
                return Err(format!(
                    "grounding [{}, {}] lies outside [0, {}]",
                    g.start_s, g.end_s, self.video.duration_s
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoRecord {
    video_id: String,
    duration_s: f64,
    uri: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    frames: Vec<FrameAttachment>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema: Option<String>,
    sample_id: String,
    video: VideoRecord,
    question: String,
    options: Vec<String>,
    answer_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grounding: Option<Interval<f64>>,
    source: Source,
}

impl TryFrom<SampleRecord> for Sample {
    type Error = String;
    fn try_from(r: SampleRecord) -> Result<Self, Self::Error> {
        if let Some(schema) = &r.schema {
            if schema != SAMPLE_SCHEMA {
                return Err(format!("unsupported schema {schema:?}, expected {SAMPLE_SCHEMA:?}"));
            }
        }
        let mut frames = r.video.frames;
        frames.sort_by(|a, b| a.t.total_cmp(&b.t));
        let sample = Sample {
            sample_id: r.sample_id,
            video: VideoMeta {
                video_id: r.video.video_id,
                duration_s: r.video.duration_s,
                source_uri: r.video.uri,
                frames,
            },
            question: r.question,
            options: r.options,
            answer_key: r.answer_key,
            gt_grounding: r.grounding,
            source: r.source,
        };
        sample.validate()?;
        Ok(sample)
    }
}

impl From<Sample> for SampleRecord {
    fn from(s: Sample) -> Self {
        SampleRecord {
            schema: Some(SAMPLE_SCHEMA.to_string()),
            sample_id: s.sample_id,
            video: VideoRecord {
                video_id: s.video.video_id,
                duration_s: s.video.duration_s,
                uri: s.video.source_uri,
                frames: s.video.frames,
            },
            question: s.question,
            options: s.options,
            answer_key: s.answer_key,
            grounding: s.gt_grounding,
            source: s.source,
        }
    }
}

/// Parses JSON-lines records. Blank lines are skipped. All invalid lines are
/// reported together.
pub fn parse_samples(reader: impl BufRead) -> Result<Vec<Sample>, DataError> {
    let mut samples = Vec::new();
    let mut diagnostics = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Sample>(&line) {
            Ok(sample) => {
                if !seen.insert(sample.sample_id.clone()) {
                    diagnostics.push(Diagnostic {
                        line: lineno,
                        message: format!("duplicate sample_id {:?}", sample.sample_id),
                    });
                } else {
                    samples.push(sample);
                }
            }
            Err(e) => diagnostics.push(Diagnostic {
                line: lineno,
                message: e.to_string(),
            }),
        }
    }
    if diagnostics.is_empty() {
        Ok(samples)
    } else {
        Err(DataError::Invalid(diagnostics))
    }
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<Sample>, DataError> {
    let file = std::fs::File::open(path)?;
    parse_samples(std::io::BufReader::new(file))
}

/// Writes samples as JSON lines (schema tag included).
pub fn write_samples(path: impl AsRef<Path>, samples: &[Sample]) -> Result<(), DataError> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        let line = serde_json::to_string(s).map_err(|e| DataError::InvalidSample {
            id: s.sample_id.clone(),
            reason: e.to_string(),
        })?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}
