//! JSON and JSON Lines files: dialogues, examples, vocabularies,
//! checkpoints, train logs and reports.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use valresp_core::corpus::{Dialogue, DialogueRecord, Source};
use valresp_core::neuralnet::{Checkpoint, ModelError, ModelParams, TrainLog};
use valresp_core::text::{Vocabulary, VocabularyFile};

use crate::error::AppError;

/// Parses one JSON value per non-blank line, reporting the 1-based line of
/// the first bad record.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, AppError> {
    let file = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| AppError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| AppError::DataAt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), AppError> {
    ensure_parent(path)?;
    let file = fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| AppError::runtime("serialize", e))?;
        w.write_all(b"\n").map_err(|e| AppError::io(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| AppError::runtime("serialize", e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, AppError> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> Result<(), AppError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e)),
        _ => Ok(()),
    }
}

/// Loads and validates dialogues; ids must be unique within the file.
pub fn read_dialogues(path: &Path, source: Option<Source>) -> Result<Vec<Dialogue>, AppError> {
    let records: Vec<DialogueRecord> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    let data_at = |line, message: String| AppError::DataAt { path: path.to_path_buf(), line, message };
    for (i, mut record) in records.into_iter().enumerate() {
        if let Some(s) = source {
            record.source = s;
        }
        if !seen.insert(record.id.clone()) {
            return Err(data_at(i + 1, format!("duplicate dialogue id {:?}", record.id)));
        }
        let d = Dialogue::from_record(record).map_err(|e| data_at(i + 1, e.to_string()))?;
        out.push(d);
    }
    Ok(out)
}

pub fn write_dialogues(path: &Path, dialogues: &[Dialogue]) -> Result<(), AppError> {
    write_jsonl(path, dialogues.iter().map(Dialogue::to_record))
}

pub fn save_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<(), AppError> {
    write_json_pretty(path, &vocab.to_file())
}

pub fn load_vocabulary(path: &Path) -> Result<Vocabulary, AppError> {
    let file: VocabularyFile = read_json(path)?;
    Vocabulary::from_file(file).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), AppError> {
    ensure_parent(path)?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, checkpoint.to_json()).map_err(|e| AppError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, AppError> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    Checkpoint::from_json(&text).map_err(|e| checkpoint_error(path, e))
}

/// Loads a checkpoint and its parameters, checking the vocabulary pairing.
pub fn load_model(path: &Path, vocab: &Vocabulary) -> Result<ModelParams, AppError> {
    let ck = load_checkpoint(path)?;
    if ck.vocab_fingerprint != vocab.fingerprint() {
        return Err(AppError::Data(format!(
            "{} was trained with a different vocabulary (fingerprint {:016x}, have {:016x})",
            path.display(),
            ck.vocab_fingerprint,
            vocab.fingerprint()
        )));
    }
    ck.to_params().map_err(|e| checkpoint_error(path, e))
}

fn checkpoint_error(path: &Path, e: ModelError) -> AppError {
    AppError::Data(format!("{}: {e}", path.display()))
}

/// One line per evaluation: `{step, epoch, loss, dev_metrics}`.
pub fn write_train_log(path: &Path, log: &TrainLog) -> Result<(), AppError> {
    write_jsonl(path, &log.evals)
}
