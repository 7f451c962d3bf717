//! Line-delimited dataset files.
//!
//! Every file starts with a header record carrying the format version, the
//! vocabulary hash, and the task-registry hash; loaders reject mismatches.
//! Images are stored either as base64-encoded row-major byte triples or as
//! inline float arrays, selected by a config flag at write time.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::datagen::{Episode, EpisodeStep, VTSample, VtCategory};
use super::tasks::task_registry_hash;
use super::vocab::vocab;
use super::SimError;

pub const FORMAT_VERSION: u32 = 1;

/// How images are written to disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageEncoding {
    Base64,
    Float,
}

impl ImageEncoding {
    fn name(&self) -> &'static str {
        match self {
            ImageEncoding::Base64 => "base64",
            ImageEncoding::Float => "float",
        }
    }

    fn from_name(s: &str) -> Result<ImageEncoding, SimError> {
        match s {
            "base64" => Ok(ImageEncoding::Base64),
            "float" => Ok(ImageEncoding::Float),
            other => Err(SimError::BadHeader(format!("unknown image encoding {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type")]
enum Record {
    #[serde(rename = "header")]
    Header {
        format_version: u32,
        vocab_hash: String,
        task_registry_hash: String,
        image_encoding: String,
    },
    #[serde(rename = "episode")]
    Episode {
        episode: usize,
        task: String,
        seed: u64,
        n_steps: usize,
        step_boundaries: Vec<usize>,
        success: Vec<bool>,
    },
    #[serde(rename = "step")]
    Step {
        episode: usize,
        index: usize,
        instruction: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        reasoning: Option<String>,
        action: Vec<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        image_b64: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        image_f32: Option<Vec<f32>>,
    },
    #[serde(rename = "vt")]
    Vt {
        index: usize,
        question: String,
        answer: String,
        category: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        image_b64: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        image_f32: Option<Vec<f32>>,
    },
}

fn encode_image(image: &[u8], enc: ImageEncoding) -> (Option<String>, Option<Vec<f32>>) {
    match enc {
        ImageEncoding::Base64 => (Some(B64.encode(image)), None),
        ImageEncoding::Float => (
            None,
            Some(image.iter().map(|&b| b as f32 / 255.0).collect()),
        ),
    }
}

fn decode_image(
    b64: Option<String>,
    floats: Option<Vec<f32>>,
) -> Result<Vec<u8>, SimError> {
    match (b64, floats) {
        (Some(s), None) => B64
            .decode(s.as_bytes())
            .map_err(|e| SimError::BadRecord(format!("bad base64 image: {e}"))),
        (None, Some(f)) => Ok(f
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()),
        _ => Err(SimError::BadRecord(
            "record must carry exactly one image field".into(),
        )),
    }
}

fn header_record(enc: ImageEncoding) -> Record {
    Record::Header {
        format_version: FORMAT_VERSION,
        vocab_hash: vocab().hash(),
        task_registry_hash: task_registry_hash(),
        image_encoding: enc.name().to_string(),
    }
}

fn check_header(line: &str) -> Result<ImageEncoding, SimError> {
    let rec: Record =
        serde_json::from_str(line).map_err(|e| SimError::BadHeader(e.to_string()))?;
    match rec {
        Record::Header {
            format_version,
            vocab_hash,
            task_registry_hash: trh,
            image_encoding,
        } => {
            if format_version != FORMAT_VERSION {
                return Err(SimError::BadHeader(format!(
                    "format_version {format_version}, expected {FORMAT_VERSION}"
                )));
            }
            let expected = vocab().hash();
            if vocab_hash != expected {
                return Err(SimError::HashMismatch {
                    field: "vocab_hash",
                    expected,
                    got: vocab_hash,
                });
            }
            let expected = task_registry_hash();
            if trh != expected {
                return Err(SimError::HashMismatch {
                    field: "task_registry_hash",
                    expected,
                    got: trh,
                });
            }
            ImageEncoding::from_name(&image_encoding)
        }
        _ => Err(SimError::BadHeader("first record is not a header".into())),
    }
}

/// Write expert demonstrations, one episode record then one record per step.
pub fn save_demonstrations(
    path: &Path,
    episodes: &[Episode],
    enc: ImageEncoding,
) -> Result<(), SimError> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut line = serde_json::to_string(&header_record(enc))?;
    writeln!(w, "{line}")?;
    for (ei, ep) in episodes.iter().enumerate() {
        line = serde_json::to_string(&Record::Episode {
            episode: ei,
            task: ep.task.clone(),
            seed: ep.seed,
            n_steps: ep.steps.len(),
            step_boundaries: ep.step_boundaries.clone(),
            success: ep.success.clone(),
        })?;
        writeln!(w, "{line}")?;
        for (si, step) in ep.steps.iter().enumerate() {
            let (image_b64, image_f32) = encode_image(&step.image, enc);
            line = serde_json::to_string(&Record::Step {
                episode: ei,
                index: si,
                instruction: step.instruction.clone(),
                reasoning: step.reasoning.clone(),
                action: step.action.to_vec(),
                image_b64,
                image_f32,
            })?;
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

/// Load demonstrations, validating the header hashes.
pub fn load_demonstrations(path: &Path) -> Result<Vec<Episode>, SimError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| SimError::BadHeader("empty file".into()))??;
    check_header(&header)?;

    let mut episodes: Vec<Episode> = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| SimError::BadRecord(e.to_string()))?;
        match rec {
            Record::Episode {
                task,
                seed,
                step_boundaries,
                success,
                ..
            } => episodes.push(Episode {
                task,
                seed,
                steps: Vec::new(),
                step_boundaries,
                success,
            }),
            Record::Step {
                episode,
                instruction,
                reasoning,
                action,
                image_b64,
                image_f32,
                ..
            } => {
                let ep = episodes.get_mut(episode).ok_or_else(|| {
                    SimError::BadRecord(format!("step for unknown episode {episode}"))
                })?;
                if action.len() != 3 {
                    return Err(SimError::BadRecord(format!(
                        "action has {} components, expected 3",
                        action.len()
                    )));
                }
                ep.steps.push(EpisodeStep {
                    image: decode_image(image_b64, image_f32)?,
                    instruction,
                    reasoning,
                    action: [action[0], action[1], action[2]],
                });
            }
            Record::Header { .. } => {
                return Err(SimError::BadRecord("duplicate header".into()))
            }
            Record::Vt { .. } => {
                return Err(SimError::BadRecord(
                    "visual-text record in a demonstration file".into(),
                ))
            }
        }
    }
    Ok(episodes)
}

/// Write visual-text samples, one record per sample.
pub fn save_vt_samples(
    path: &Path,
    samples: &[VTSample],
    enc: ImageEncoding,
) -> Result<(), SimError> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut line = serde_json::to_string(&header_record(enc))?;
    writeln!(w, "{line}")?;
    for (i, s) in samples.iter().enumerate() {
        let (image_b64, image_f32) = encode_image(&s.image, enc);
        line = serde_json::to_string(&Record::Vt {
            index: i,
            question: s.question.clone(),
            answer: s.answer.clone(),
            category: s.category.name().to_string(),
            image_b64,
            image_f32,
        })?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Load visual-text samples, validating the header hashes.
pub fn load_vt_samples(path: &Path) -> Result<Vec<VTSample>, SimError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| SimError::BadHeader("empty file".into()))??;
    check_header(&header)?;

    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| SimError::BadRecord(e.to_string()))?;
        match rec {
            Record::Vt {
                question,
                answer,
                category,
                image_b64,
                image_f32,
                ..
            } => {
                let category = VtCategory::from_name(&category).ok_or_else(|| {
                    SimError::BadRecord(format!("unknown category {category:?}"))
                })?;
                out.push(VTSample {
                    image: decode_image(image_b64, image_f32)?,
                    question,
                    answer,
                    category,
                });
            }
            _ => {
                return Err(SimError::BadRecord(
                    "non-vt record in a visual-text file".into(),
                ))
            }
        }
    }
    Ok(out)
}
