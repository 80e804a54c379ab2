//! Corpus file I/O: one JSON session object per line, plus a combined
//! ontology + database file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Database, DialogSession, Ontology};

#[derive(Debug, Error)]
pub enum CorpusFileError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusFileError {
    CorpusFileError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_corpus(path: &Path, sessions: &[DialogSession]) -> Result<(), CorpusFileError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for sess in sessions {
        let line = serde_json::to_string(sess).expect("sessions serialize");
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Vec<DialogSession>, CorpusFileError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut sessions = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sess: DialogSession =
            serde_json::from_str(&line).map_err(|source| CorpusFileError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })?;
        sessions.push(sess);
    }
    Ok(sessions)
}

/// On-disk world description: ontology and database sections plus the exact
/// vocabulary every downstream stage must share.
#[derive(Serialize, Deserialize)]
pub struct WorldFile {
    pub ontology: Ontology,
    pub database: Database,
    pub vocab: crate::vocab::Vocab,
}

pub fn save_world(
    path: &Path,
    ontology: &Ontology,
    database: &Database,
    vocab: &crate::vocab::Vocab,
) -> Result<(), CorpusFileError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let w = BufWriter::new(file);
    serde_json::to_writer_pretty(
        w,
        &WorldFile {
            ontology: ontology.clone(),
            database: database.clone(),
            vocab: vocab.clone(),
        },
    )
    .map_err(|source| CorpusFileError::Parse {
        path: path.display().to_string(),
        line: 0,
        source,
    })
}

pub fn load_world(path: &Path) -> Result<WorldFile, CorpusFileError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut world: WorldFile =
        serde_json::from_reader(BufReader::new(file)).map_err(|source| CorpusFileError::Parse {
            path: path.display().to_string(),
            line: 0,
            source,
        })?;
    world.vocab.rebuild_index();
    Ok(world)
}
