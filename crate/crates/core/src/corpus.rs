//! Directory corpora of paired `<id>.txt` / `<id>.ann` files.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::brat::{brat_to_events, events_to_brat, parse_brat, serialize_brat, BratError, RoleMap};
use crate::event::{NoteDocument, SdohEvent, Split};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Brat { path: PathBuf, source: BratError },
    #[error("corpus directory {0} does not exist")]
    Missing(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

fn collect_txt(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CorpusError> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err(dir))?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_txt(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "txt") {
            out.push(path);
        }
    }
    Ok(())
}

/// Note id for `path` under `root`: the relative path without extension,
/// with `/` separators.
pub fn note_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path).with_extension("");
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

/// Loads every `.txt` under `dir` (recursively, sorted by id). Gold events
/// come from a sibling `.ann` when one exists; notes without one have no
/// gold.
pub fn load_corpus(dir: &Path, split: Split, roles: &RoleMap) -> Result<Vec<NoteDocument>, CorpusError> {
    if !dir.is_dir() {
        return Err(CorpusError::Missing(dir.to_path_buf()));
    }
    let mut files = Vec::new();
    collect_txt(dir, &mut files)?;
    let mut notes = Vec::with_capacity(files.len());
    for txt in files {
        let text = fs::read_to_string(&txt).map_err(io_err(&txt))?;
        let ann = txt.with_extension("ann");
        let gold = if ann.exists() {
            Some(read_ann(&ann, &text, roles)?)
        } else {
            None
        };
        let mut note = NoteDocument::new(note_id(dir, &txt), text).with_split(split);
        note.gold = gold;
        notes.push(note);
    }
    notes.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(notes)
}

/// Parses one `.ann` file into events against its note text.
pub fn read_ann(path: &Path, note_text: &str, roles: &RoleMap) -> Result<Vec<SdohEvent>, CorpusError> {
    let ann = fs::read_to_string(path).map_err(io_err(path))?;
    let brat_err = |source| CorpusError::Brat { path: path.to_path_buf(), source };
    let doc = parse_brat(&ann, note_text).map_err(brat_err)?;
    brat_to_events(&doc, note_text, roles).map_err(brat_err)
}

/// Loads only the `.ann` files under `dir`, keyed by note id, reading note
/// text from `texts` (the gold corpus).
pub fn load_predictions(
    dir: &Path,
    texts: &BTreeMap<String, String>,
    roles: &RoleMap,
) -> Result<BTreeMap<String, Vec<SdohEvent>>, CorpusError> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Err(CorpusError::Missing(dir.to_path_buf()));
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(io_err(&d))? {
            let path = entry.map_err(io_err(&d))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "ann") {
                let id = note_id(dir, &path);
                let text = match texts.get(&id) {
                    Some(t) => t.clone(),
                    None => {
                        let sibling = path.with_extension("txt");
                        fs::read_to_string(&sibling).map_err(io_err(&sibling))?
                    }
                };
                out.insert(id, read_ann(&path, &text, roles)?);
            }
        }
    }
    Ok(out)
}

/// Writes `<out>/<id>.ann` (creating parent directories).
pub fn write_ann(
    out_dir: &Path,
    id: &str,
    events: &[SdohEvent],
    note_text: &str,
    roles: &RoleMap,
) -> Result<PathBuf, CorpusError> {
    let path = out_dir.join(format!("{id}.ann"));
    let doc = events_to_brat(events, note_text, roles)
        .map_err(|source| CorpusError::Brat { path: path.clone(), source })?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(&path, serialize_brat(&doc)).map_err(io_err(&path))?;
    Ok(path)
}
