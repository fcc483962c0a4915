//! JSON model files.
//!
//! Floats are written with the shortest decimal text that parses back to the
//! same bits (never more than 17 significant digits), so a loaded model
//! predicts bit-identically to the saved one.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ModelError, ModelKind, ModelParams, TrainedModel, TrainingMeta};
use crate::dataset::TargetKind;
use crate::Scalar;

pub const MODEL_SCHEMA_VERSION: u64 = 1;

#[derive(Serialize)]
struct FileOut<'a, F> {
    schema_version: u64,
    kind: ModelKind,
    target_kind: TargetKind,
    seed: u64,
    meta: &'a TrainingMeta,
    params: &'a ModelParams<F>,
}

#[derive(Deserialize)]
struct FileIn<F> {
    meta: TrainingMeta,
    params: ModelParams<F>,
}

pub fn write_model<F: Scalar, W: Write>(model: &TrainedModel<F>, w: W) -> Result<(), ModelError> {
    let out = FileOut {
        schema_version: MODEL_SCHEMA_VERSION,
        kind: model.kind(),
        target_kind: model.meta.target_kind,
        seed: model.meta.seed,
        meta: &model.meta,
        params: &model.params,
    };
    let mut w = w;
    serde_json::to_writer_pretty(&mut w, &out).map_err(|e| ModelError::Parse(e.to_string()))?;
    w.write_all(b"\n").map_err(|source| ModelError::Io {
        path: "<writer>".into(),
        source,
    })
}

pub fn read_model<F: Scalar, R: Read>(r: R) -> Result<TrainedModel<F>, ModelError> {
    let value: Value = serde_json::from_reader(r).map_err(|e| ModelError::Parse(e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| ModelError::Parse("missing schema_version".into()))?;
    if version != MODEL_SCHEMA_VERSION {
        return Err(ModelError::Version {
            found: version,
            supported: MODEL_SCHEMA_VERSION,
        });
    }
    let kind: ModelKind = value
        .get("kind")
        .cloned()
        .ok_or_else(|| ModelError::Parse("missing kind".into()))
        .and_then(|k| serde_json::from_value(k).map_err(|e| ModelError::Parse(e.to_string())))?;
    let parsed: FileIn<F> =
        serde_json::from_value(value).map_err(|e| ModelError::Parse(e.to_string()))?;
    let model = TrainedModel {
        params: parsed.params,
        meta: parsed.meta,
    };
    if model.kind() != kind {
        return Err(ModelError::Parse(format!(
            "kind {kind} does not match parameters of a {} model",
            model.kind()
        )));
    }
    Ok(model)
}

pub fn save_model<F: Scalar>(
    model: &TrainedModel<F>,
    path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    let path = path.as_ref();
    let io = |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write_model(model, &mut w)?;
    w.flush().map_err(io)
}

pub fn load_model<F: Scalar>(path: impl AsRef<Path>) -> Result<TrainedModel<F>, ModelError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_model(BufReader::new(f))
}
