//! Append-only newline-delimited JSON mission log.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Sample,
    Pose,
    Mode,
    Safety,
    Detection,
    Goal,
    Note,
    Battery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub seq: u64,
    pub t: f64,
    pub kind: EventKind,
    pub body: serde_json::Value,
}

impl LogEvent {
    /// Wall-clock notes differ between otherwise identical runs.
    pub fn is_wall_clock(&self) -> bool {
        self.kind == EventKind::Note && self.body.get("wall_clock").is_some()
    }
}

/// Log writer. Without a path the log is kept in memory only.
pub struct MissionLog {
    out: Option<BufWriter<File>>,
    quarantine_path: Option<PathBuf>,
    quarantine: Option<BufWriter<File>>,
    next_seq: u64,
    quarantined: u64,
}

impl MissionLog {
    pub fn in_memory() -> Self {
        Self {
            out: None,
            quarantine_path: None,
            quarantine: None,
            next_seq: 1,
            quarantined: 0,
        }
    }

    /// Creates (truncating) the log file. Malformed input goes to
    /// `<path>.quarantine`, created on first use.
    pub fn create(path: &Path) -> io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = File::create(path)?;
        Ok(Self {
            out: Some(BufWriter::new(file)),
            quarantine_path: Some(quarantine_path(path)),
            ..Self::in_memory()
        })
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn len(&self) -> u64 {
        self.next_seq - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Advances the sequence counter without writing, used when state is
    /// rebuilt from an existing log.
    pub fn skip_to(&mut self, next_seq: u64) {
        self.next_seq = self.next_seq.max(next_seq);
    }

    pub fn quarantined(&self) -> u64 {
        self.quarantined
    }

    pub fn append(&mut self, t: f64, kind: EventKind, body: serde_json::Value) -> io::Result<LogEvent> {
        let ev = LogEvent {
            seq: self.next_seq,
            t,
            kind,
            body,
        };
        if let Some(out) = &mut self.out {
            serde_json::to_writer(&mut *out, &ev)?;
            out.write_all(b"\n")?;
        }
        self.next_seq += 1;
        Ok(ev)
    }

    pub fn quarantine(&mut self, topic: &str, reason: &str, raw: &[u8]) -> io::Result<()> {
        self.quarantined += 1;
        log::warn!("quarantined document on '{topic}': {reason}");
        let Some(path) = &self.quarantine_path else { return Ok(()) };
        if self.quarantine.is_none() {
            let f = OpenOptions::new().create(true).append(true).open(path)?;
            self.quarantine = Some(BufWriter::new(f));
        }
        let q = self.quarantine.as_mut().expect("opened above");
        let line = serde_json::json!({
            "topic": topic,
            "reason": reason,
            "raw": String::from_utf8_lossy(raw),
        });
        serde_json::to_writer(&mut *q, &line)?;
        q.write_all(b"\n")?;
        q.flush()
    }

    pub fn flush(&mut self) -> io::Result<()> {
        if let Some(out) = &mut self.out {
            out.flush()?;
        }
        Ok(())
    }
}

pub fn quarantine_path(log: &Path) -> PathBuf {
    let mut s = log.as_os_str().to_owned();
    s.push(".quarantine");
    PathBuf::from(s)
}

/// A line that did not parse as a log event.
#[derive(Debug, Clone, PartialEq)]
pub struct BadLine {
    pub line: usize,
    pub error: String,
}

/// Reads every event, collecting unparsable lines instead of failing.
pub fn read_log<R: io::Read>(input: R) -> io::Result<(Vec<LogEvent>, Vec<BadLine>)> {
    let mut events = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogEvent>(&line) {
            Ok(ev) => events.push(ev),
            Err(e) => bad.push(BadLine {
                line: i + 1,
                error: e.to_string(),
            }),
        }
    }
    Ok((events, bad))
}

pub fn read_log_file(path: &Path) -> io::Result<(Vec<LogEvent>, Vec<BadLine>)> {
    read_log(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn appends_dense_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ndjson");
        {
            let mut log = MissionLog::create(&path).unwrap();
            for i in 0..5 {
                log.append(i as f64, EventKind::Pose, json!({"i": i})).unwrap();
            }
            log.quarantine("asv/1/pose", "bad json", b"{oops").unwrap();
            assert_eq!(log.len(), 5);
        }
        let (events, bad) = read_log_file(&path).unwrap();
        assert!(bad.is_empty());
        assert_eq!(events.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
        let q = std::fs::read_to_string(quarantine_path(&path)).unwrap();
        assert!(q.contains("{oops"));
    }

    #[test]
    fn bad_lines_reported() {
        let text = "{\"seq\":1,\"t\":0.0,\"kind\":\"note\",\"body\":{}}\nnot json\n\n";
        let (events, bad) = read_log(text.as_bytes()).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(bad, vec![BadLine { line: 2, error: bad[0].error.clone() }]);
    }

    #[test]
    fn wall_clock_notes_are_marked() {
        let mut log = MissionLog::in_memory();
        let a = log.append(0.0, EventKind::Note, json!({"wall_clock": "x"})).unwrap();
        let b = log.append(0.0, EventKind::Note, json!({"text": "x"})).unwrap();
        assert!(a.is_wall_clock() && !b.is_wall_clock());
    }
}
