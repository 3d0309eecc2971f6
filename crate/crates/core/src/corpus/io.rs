use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueSession, Floor, Normalizer, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawUtterance {
    pub floor: Floor,
    pub text: String,
}

/// One corpus record: `{session_id, utterances: [{floor, text}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSession {
    pub session_id: String,
    pub utterances: Vec<RawUtterance>,
}

impl From<&DialogueSession> for RawSession {
    fn from(s: &DialogueSession) -> Self {
        RawSession {
            session_id: s.session_id.clone(),
            utterances: s.utterances.iter().map(|u| RawUtterance { floor: u.floor, text: u.text() }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordError {
    pub line: usize,
    pub message: String,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads corpus records, collecting schema violations per line instead of
/// stopping at the first one.
pub fn read_sessions(path: &Path) -> Result<(Vec<RawSession>, Vec<RecordError>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut sessions = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawSession>(&line) {
            Ok(s) => sessions.push(s),
            Err(e) => errors.push(RecordError { line: i + 1, message: e.to_string() }),
        }
    }
    Ok((sessions, errors))
}

/// Writes sessions whose utterances are already normalized.
pub fn write_sessions(path: &Path, sessions: &[DialogueSession]) -> Result<()> {
    write_jsonl(path, sessions.iter().map(RawSession::from))
}

/// Normalizes a raw record. Utterances that normalize to nothing are
/// dropped; a session left with fewer than two utterances yields `None`.
pub fn session_from_raw(raw: &RawSession, normalizer: &Normalizer) -> Option<DialogueSession> {
    let utterances: Vec<Utterance> =
        raw.utterances.iter().filter_map(|u| normalizer.normalize(&u.text, u.floor).ok()).collect();
    (utterances.len() >= 2).then(|| DialogueSession { session_id: raw.session_id.clone(), utterances })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_violations_are_reported_per_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"session_id\":\"a\",\"utterances\":[{\"floor\":\"A\",\"text\":\"Hi!\"},{\"floor\":\"B\",\"text\":\"Hello.\"}]}\n",
                "{\"session_id\":\"b\",\"utterances\":[{\"floor\":\"C\",\"text\":\"x\"}]}\n",
                "not json\n"
            ),
        )
        .unwrap();
        let (ok, errs) = read_sessions(&path).unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(errs.iter().map(|e| e.line).collect::<Vec<_>>(), [2, 3]);
        let s = session_from_raw(&ok[0], &Normalizer::default()).unwrap();
        assert_eq!(s.utterances[0].tokens, ["hi", "!"]);
    }

    #[test]
    fn short_sessions_are_dropped() {
        let raw = RawSession {
            session_id: "x".into(),
            utterances: vec![
                RawUtterance { floor: Floor::A, text: "hello".into() },
                RawUtterance { floor: Floor::B, text: "   ".into() },
            ],
        };
        assert!(session_from_raw(&raw, &Normalizer::default()).is_none());
    }
}
