use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use super::{derive_labels, CatalogItem, Dialogue, DialogueFile, Scenario, TurnRecordFile, Vocabulary};
use crate::error::{Error, Result};

fn parse_jsonl<T, R>(reader: R, path: &Path, mut check: impl FnMut(&T) -> Result<()>) -> Result<Vec<T>>
where
    T: DeserializeOwned,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        check(&record).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn parse_scenarios<R: BufRead>(reader: R, path: &Path) -> Result<Vec<Scenario>> {
    parse_jsonl(reader, path, Scenario::validate)
}

pub fn load_scenarios(path: impl AsRef<Path>) -> Result<Vec<Scenario>> {
    let path = path.as_ref();
    parse_scenarios(BufReader::new(File::open(path)?), path)
}

pub fn parse_catalog<R: BufRead>(reader: R, path: &Path) -> Result<Vec<CatalogItem>> {
    parse_jsonl(reader, path, CatalogItem::validate)
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Vec<CatalogItem>> {
    let path = path.as_ref();
    parse_catalog(BufReader::new(File::open(path)?), path)
}

/// Reads raw dialogue records. Consecutive event-free turns by the same
/// speaker are merged so speakers alternate; a dialogue that still fails to
/// alternate, or has more than one terminal event, is rejected.
pub fn parse_dialogues<R: BufRead>(reader: R, path: &Path) -> Result<Vec<DialogueFile>> {
    let mut files: Vec<DialogueFile> = parse_jsonl(reader, path, |_| Ok(()))?;
    for (i, f) in files.iter_mut().enumerate() {
        normalize_turns(f).map_err(|message| Error::Parse {
            path: PathBuf::from(path),
            line: i + 1,
            message,
        })?;
    }
    Ok(files)
}

fn normalize_turns(file: &mut DialogueFile) -> std::result::Result<(), String> {
    let mut merged: Vec<TurnRecordFile> = Vec::with_capacity(file.turns.len());
    for turn in file.turns.drain(..) {
        match merged.last_mut() {
            Some(prev) if prev.speaker == turn.speaker => {
                if prev.event.is_some() || turn.event.is_some() {
                    return Err(format!("{} speaks twice in a row around an event", turn.speaker));
                }
                if !turn.text.is_empty() {
                    if !prev.text.is_empty() {
                        prev.text.push(' ');
                    }
                    prev.text.push_str(&turn.text);
                }
            }
            _ => merged.push(turn),
        }
    }
    let terminal = merged
        .iter()
        .filter(|t| t.event.is_some_and(|e| e.kind.is_terminal()))
        .count();
    if terminal > 1 {
        return Err(format!("{terminal} terminal events"));
    }
    if file.outcome.agreed != file.outcome.price.is_some() {
        return Err("outcome.agreed must match presence of outcome.price".into());
    }
    file.turns = merged;
    Ok(())
}

/// Loads dialogues and derives their labels against the scenario table.
pub fn load_dialogues(path: impl AsRef<Path>, scenarios: &[Scenario]) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let files = parse_dialogues(BufReader::new(File::open(path)?), path)?;
    let by_id: HashMap<&str, &Scenario> = scenarios.iter().map(|s| (s.id.as_str(), s)).collect();
    files
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let scenario = by_id.get(f.scenario_id.as_str()).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("unknown scenario {}", f.scenario_id),
            })?;
            Ok(derive_labels(f, scenario))
        })
        .collect()
}

pub fn write_dialogues<'a>(path: impl AsRef<Path>, dialogues: impl IntoIterator<Item = &'a DialogueFile>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for d in dialogues {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// GloVe-style text vectors for the tokens of `vocab`; rows for tokens not
/// in the file are `None`.
pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary, dim: usize) -> Result<Vec<Option<Vec<f64>>>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut rows = vec![None; vocab.len()];
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        if !vocab.contains(token) {
            continue;
        }
        let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let values = values.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if values.len() != dim {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected {dim} values, got {}", values.len()),
            });
        }
        rows[vocab.id(token)] = Some(values);
    }
    Ok(rows)
}
