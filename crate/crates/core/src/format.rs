//! Self-describing binary container shared by trajectory and model files.
//!
//! ```text
//! SPDINV/1\n                 magic line
//! {"format": ...}\n          one-line JSON header, must contain "blob_f64"
//! <blob_f64 * 8 bytes>       little-endian IEEE-754 f64 values
//! ```
//!
//! Trajectory blob: all states in storage order (`(T + 1) * d` values),
//! then one record per step: `t, initial_residual, final_residual, rounds,
//! predictor_calls` followed by the `d` entries of `eps`.
//!
//! Model blob: the flat parameter vector (MLP) or `A` row-major followed by
//! `b` (linear).

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::latent::{Condition, LatentState};
use crate::predictor::{EpsilonPredictor, LinearModel, MlpArchitecture, MlpDenoiser, TrainingRecord};
use crate::trajectory::{Direction, StepRecord, Trajectory};

pub const MAGIC: &[u8] = b"SPDINV/1\n";
pub const VERSION: u64 = 1;
const TRAJECTORY_FORMAT: &str = "spdinv-trajectory";
const MODEL_FORMAT: &str = "spdinv-model";

pub fn encode_container(header: &Map<String, Value>, blob: &[f64]) -> Vec<u8> {
    let mut header = header.clone();
    header.insert("blob_f64".into(), json!(blob.len()));
    let text = serde_json::to_string(&Value::Object(header)).expect("header serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + text.len() + 1 + 8 * blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(text.as_bytes());
    out.push(b'\n');
    for v in blob {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_container(bytes: &[u8]) -> Result<(Map<String, Value>, Vec<f64>)> {
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::format("magic", "missing SPDINV/1 signature"))?;
    let newline = rest
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::format("header", "unterminated header line"))?;
    let header: Value = serde_json::from_slice(&rest[..newline])
        .map_err(|e| Error::format("header", e.to_string()))?;
    let Value::Object(header) = header else {
        return Err(Error::format("header", "not a JSON object"));
    };
    let count = header_u64(&header, "blob_f64")? as usize;
    let blob = &rest[newline + 1..];
    if blob.len() != count * 8 {
        return Err(Error::Truncated {
            expected: count * 8,
            actual: blob.len(),
        });
    }
    let values = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, values))
}

fn header_field<'a>(h: &'a Map<String, Value>, field: &str) -> Result<&'a Value> {
    h.get(field).ok_or_else(|| Error::format(field, "missing"))
}

fn header_u64(h: &Map<String, Value>, field: &str) -> Result<u64> {
    header_field(h, field)?
        .as_u64()
        .ok_or_else(|| Error::format(field, "expected a non-negative integer"))
}

fn header_str<'a>(h: &'a Map<String, Value>, field: &str) -> Result<&'a str> {
    header_field(h, field)?
        .as_str()
        .ok_or_else(|| Error::format(field, "expected a string"))
}

fn expect_format(h: &Map<String, Value>, format: &str) -> Result<()> {
    let found = header_str(h, "format")?;
    if found != format {
        return Err(Error::format("format", format!("expected {format}, found {found}")));
    }
    let version = header_u64(h, "version")?;
    if version != VERSION {
        return Err(Error::format("version", format!("expected {VERSION}, found {version}")));
    }
    Ok(())
}

const RECORD_HEAD: usize = 5;

pub fn encode_trajectory(tr: &Trajectory) -> Vec<u8> {
    let d = tr.dim();
    let mut header = Map::new();
    header.insert("format".into(), json!(TRAJECTORY_FORMAT));
    header.insert("version".into(), json!(VERSION));
    header.insert("dim".into(), json!(d));
    header.insert("steps".into(), json!(tr.steps()));
    header.insert("direction".into(), json!(tr.direction().as_str()));
    header.insert("condition".into(), json!(tr.condition()));
    header.insert("schedule_hash".into(), json!(tr.schedule_hash()));
    let mut blob = Vec::with_capacity((tr.steps() + 1) * d + tr.steps() * (RECORD_HEAD + d));
    for s in tr.states() {
        blob.extend_from_slice(s.as_slice());
    }
    for r in tr.records() {
        blob.extend_from_slice(&[
            r.t as f64,
            r.initial_residual,
            r.final_residual,
            r.rounds as f64,
            r.predictor_calls as f64,
        ]);
        blob.extend_from_slice(r.eps.as_slice());
    }
    encode_container(&header, &blob)
}

fn as_count(v: f64, field: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(53) {
        Ok(v as usize)
    } else {
        Err(Error::format(field, format!("{v} is not a count")))
    }
}

pub fn decode_trajectory(bytes: &[u8]) -> Result<Trajectory> {
    let (h, blob) = decode_container(bytes)?;
    expect_format(&h, TRAJECTORY_FORMAT)?;
    let d = header_u64(&h, "dim")? as usize;
    let steps = header_u64(&h, "steps")? as usize;
    if d == 0 || steps == 0 {
        return Err(Error::format("dim", "dim and steps must be positive"));
    }
    let direction = match header_str(&h, "direction")? {
        "generation" => Direction::Generation,
        "inversion" => Direction::Inversion,
        other => return Err(Error::format("direction", format!("unknown direction {other:?}"))),
    };
    let condition: Condition = serde_json::from_value(header_field(&h, "condition")?.clone())
        .map_err(|e| Error::format("condition", e.to_string()))?;
    let hash = header_str(&h, "schedule_hash")?.to_string();
    let expected = (steps + 1) * d + steps * (RECORD_HEAD + d);
    if blob.len() != expected {
        return Err(Error::format(
            "blob_f64",
            format!("expected {expected} values for dim {d} and {steps} steps, found {}", blob.len()),
        ));
    }
    let latent = |values: &[f64]| {
        LatentState::new(values.to_vec()).map_err(|_| Error::format("blob", "non-finite latent value"))
    };
    let (state_part, record_part) = blob.split_at((steps + 1) * d);
    let states = state_part.chunks_exact(d).map(latent).collect::<Result<Vec<_>>>()?;
    let records = record_part
        .chunks_exact(RECORD_HEAD + d)
        .map(|c| {
            Ok(StepRecord {
                t: as_count(c[0], "t")?,
                initial_residual: c[1],
                final_residual: c[2],
                rounds: as_count(c[3], "rounds")?,
                predictor_calls: as_count(c[4], "predictor_calls")?,
                eps: latent(&c[RECORD_HEAD..])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(direction, condition, hash, states, records)
}

pub fn save_trajectory(path: impl AsRef<Path>, tr: &Trajectory) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_trajectory(tr)).map_err(|e| Error::io(path, e))
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    decode_trajectory(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// A model read back from a model file.
#[derive(Debug, Clone)]
pub enum StoredModel {
    Mlp(MlpDenoiser),
    Linear(LinearModel),
}

impl StoredModel {
    pub fn into_predictor(self) -> Box<dyn EpsilonPredictor> {
        match self {
            StoredModel::Mlp(m) => Box::new(m),
            StoredModel::Linear(m) => Box::new(m),
        }
    }
}

pub fn encode_mlp(model: &MlpDenoiser, schedule_hash: &str) -> Vec<u8> {
    let mut header = Map::new();
    header.insert("format".into(), json!(MODEL_FORMAT));
    header.insert("version".into(), json!(VERSION));
    header.insert("kind".into(), json!("mlp"));
    header.insert("dim".into(), json!(model.architecture().dim));
    header.insert("architecture".into(), json!(model.architecture()));
    header.insert("schedule_hash".into(), json!(schedule_hash));
    header.insert("seed".into(), json!(model.init_seed()));
    header.insert("training".into(), json!(model.training()));
    encode_container(&header, model.parameters())
}

pub fn encode_linear(model: &LinearModel) -> Vec<u8> {
    let d = model.dim();
    let mut header = Map::new();
    header.insert("format".into(), json!(MODEL_FORMAT));
    header.insert("version".into(), json!(VERSION));
    header.insert("kind".into(), json!("linear"));
    header.insert("dim".into(), json!(d));
    header.insert("schedule_hash".into(), Value::Null);
    header.insert("seed".into(), Value::Null);
    let mut blob = Vec::with_capacity(d * d + d);
    for i in 0..d {
        for j in 0..d {
            blob.push(model.matrix()[(i, j)]);
        }
    }
    blob.extend(model.offset().iter());
    encode_container(&header, &blob)
}

/// Decodes a model file. Returns the model and the schedule hash it was trained against.
pub fn decode_model(bytes: &[u8]) -> Result<(StoredModel, Option<String>)> {
    let (h, blob) = decode_container(bytes)?;
    expect_format(&h, MODEL_FORMAT)?;
    let dim = header_u64(&h, "dim")? as usize;
    let hash = h.get("schedule_hash").and_then(Value::as_str).map(str::to_string);
    let model = match header_str(&h, "kind")? {
        "mlp" => {
            let arch: MlpArchitecture = serde_json::from_value(header_field(&h, "architecture")?.clone())
                .map_err(|e| Error::format("architecture", e.to_string()))?;
            if arch.dim != dim {
                return Err(Error::format("dim", format!("header dim {dim} != architecture dim {}", arch.dim)));
            }
            let training: Option<TrainingRecord> = match h.get("training") {
                None | Some(Value::Null) => None,
                Some(v) => Some(serde_json::from_value(v.clone()).map_err(|e| Error::format("training", e.to_string()))?),
            };
            let seed = h.get("seed").and_then(Value::as_u64).unwrap_or(0);
            let model = MlpDenoiser::from_parameters(arch, blob)
                .map_err(|e| Error::format("blob", e.to_string()))?
                .with_metadata(seed, training);
            StoredModel::Mlp(model)
        }
        "linear" => {
            if blob.len() != dim * dim + dim {
                return Err(Error::format("blob_f64", format!("expected {} values", dim * dim + dim)));
            }
            let matrix = DMatrix::from_row_slice(dim, dim, &blob[..dim * dim]);
            let model = LinearModel::new(matrix, blob[dim * dim..].to_vec())
                .map_err(|e| Error::format("blob", e.to_string()))?;
            StoredModel::Linear(model)
        }
        other => return Err(Error::format("kind", format!("unknown model kind {other:?}"))),
    };
    Ok((model, hash))
}

pub fn save_model(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(StoredModel, Option<String>)> {
    let path = path.as_ref();
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::GaussianMixture;
    use crate::sampler::generate;
    use crate::schedule::build_linear_schedule;

    fn sample_trajectory() -> Trajectory {
        let s = build_linear_schedule(1000, 1e-4, 2e-2, 7).unwrap();
        let z = LatentState::new(vec![0.3, -1.1]).unwrap();
        generate(&z, Condition::label(2), &GaussianMixture::lab_default(), &s, 1.0).unwrap()
    }

    #[test]
    fn truncated_blob_reports_byte_counts() {
        let bytes = encode_trajectory(&sample_trajectory());
        let err = decode_trajectory(&bytes[..bytes.len() - 3]).unwrap_err();
        let full = bytes.len() - bytes.iter().position(|b| *b == b'\n').unwrap();
        match err {
            Error::Truncated { expected, actual } => {
                assert_eq!(actual + 3, expected);
                assert!(expected < full);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn header_mismatch_names_field() {
        let bytes = encode_trajectory(&sample_trajectory());
        let at = bytes.windows(11).position(|w| w == b"\"version\":1").unwrap();
        let mut edited = bytes.clone();
        edited[at + 10] = b'2';
        let err = decode_trajectory(&edited).unwrap_err();
        assert!(matches!(err, Error::Format { ref field, .. } if field == "version"), "{err}");
        assert!(decode_trajectory(b"NOPE\n{}\n").is_err());
    }

    #[test]
    fn linear_model_file_round_trip() {
        let m = LinearModel::new(DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.3, 0.4]), vec![1.0, -1.0]).unwrap();
        let (back, hash) = decode_model(&encode_linear(&m)).unwrap();
        assert!(hash.is_none());
        match back {
            StoredModel::Linear(b) => assert_eq!(b, m),
            _ => panic!("wrong kind"),
        }
    }
}
