//! Record/replay of backend traffic keyed by request digest.
//!
//! File format, one record per line:
//! `digest \t base64(request JSON) \t base64(response)`.
//! Repeated digests replay in recorded order.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;
use std::{fs, io};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;

use super::{Backend, BackendError, CompletionRequest};

#[derive(Debug, Clone, PartialEq)]
pub struct CassetteEntry {
    pub digest: String,
    pub request: Option<CompletionRequest>,
    pub response: String,
}

impl CassetteEntry {
    pub fn new(request: &CompletionRequest, response: impl Into<String>) -> Self {
        Self {
            digest: request.digest(),
            request: Some(request.clone()),
            response: response.into(),
        }
    }

    pub fn to_line(&self) -> String {
        let req = match &self.request {
            Some(r) => serde_json::to_string(r).expect("request serializes"),
            None => String::new(),
        };
        format!(
            "{}\t{}\t{}",
            self.digest,
            STANDARD.encode(req),
            STANDARD.encode(&self.response)
        )
    }

    pub fn from_line(line: &str) -> Result<Self, String> {
        let mut parts = line.split('\t');
        let (Some(digest), Some(req), Some(resp), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err("expected three tab-separated fields".into());
        };
        let decode = |field: &str| -> Result<String, String> {
            let bytes = STANDARD.decode(field).map_err(|e| e.to_string())?;
            String::from_utf8(bytes).map_err(|e| e.to_string())
        };
        let req = decode(req)?;
        let request = if req.is_empty() {
            None
        } else {
            Some(serde_json::from_str(&req).map_err(|e| e.to_string())?)
        };
        Ok(Self {
            digest: digest.to_string(),
            request,
            response: decode(resp)?,
        })
    }
}

enum Mode<B> {
    Record { inner: B, log: Mutex<Vec<CassetteEntry>> },
    Replay { tape: Mutex<HashMap<String, VecDeque<String>>> },
}

pub struct CassetteBackend<B = NoBackend> {
    mode: Mode<B>,
}

/// Placeholder inner backend for replay-only cassettes.
pub struct NoBackend;

impl Backend for NoBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        Err(BackendError::CassetteMiss(request.digest()))
    }
}

impl<B: Backend> CassetteBackend<B> {
    pub fn record(inner: B) -> Self {
        Self {
            mode: Mode::Record { inner, log: Mutex::new(Vec::new()) },
        }
    }

    /// Recorded entries, sorted by digest (stable for repeats).
    pub fn entries(&self) -> Vec<CassetteEntry> {
        match &self.mode {
            Mode::Record { log, .. } => {
                let mut entries = log.lock().expect("poisoned").clone();
                entries.sort_by(|a, b| a.digest.cmp(&b.digest));
                entries
            }
            Mode::Replay { .. } => Vec::new(),
        }
    }

    pub fn to_text(&self) -> String {
        entries_to_text(&self.entries())
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_text())
    }
}

impl CassetteBackend<NoBackend> {
    pub fn replay(entries: impl IntoIterator<Item = CassetteEntry>) -> Self {
        let mut tape: HashMap<String, VecDeque<String>> = HashMap::new();
        for e in entries {
            tape.entry(e.digest).or_default().push_back(e.response);
        }
        Self {
            mode: Mode::Replay { tape: Mutex::new(tape) },
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| CassetteEntry::from_line(l).map_err(|e| format!("line {}: {e}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::replay(entries))
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    /// Unplayed recordings left on the tape.
    pub fn remaining(&self) -> usize {
        match &self.mode {
            Mode::Replay { tape } => tape.lock().expect("poisoned").values().map(VecDeque::len).sum(),
            Mode::Record { .. } => 0,
        }
    }
}

pub fn entries_to_text(entries: &[CassetteEntry]) -> String {
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| a.digest.cmp(&b.digest));
    let mut out = String::new();
    for e in &sorted {
        out.push_str(&e.to_line());
        out.push('\n');
    }
    out
}

impl<B: Backend> Backend for CassetteBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        match &self.mode {
            Mode::Record { inner, log } => {
                let reply = inner.complete(request)?;
                log.lock()
                    .expect("poisoned")
                    .push(CassetteEntry::new(request, reply.clone()));
                Ok(reply)
            }
            Mode::Replay { tape } => {
                let digest = request.digest();
                tape.lock()
                    .expect("poisoned")
                    .get_mut(&digest)
                    .and_then(VecDeque::pop_front)
                    .ok_or(BackendError::CassetteMiss(digest))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{RequestTag, ScriptedBackend};
    use crate::prompt_kit::TemplateId;

    fn req(user: &str) -> CompletionRequest {
        CompletionRequest {
            system_text: "sys".into(),
            user_text: user.into(),
            temperature: 0.7,
            max_tokens: 64,
            seed: None,
            tag: RequestTag {
                question: "q".into(),
                agent: 1,
                round: 0,
                template: TemplateId::Decompose,
            },
        }
    }

    #[test]
    fn record_then_replay_verbatim() {
        let rec = CassetteBackend::record(ScriptedBackend::queue(["first\tline\n", "ünïcode"]));
        assert_eq!(rec.complete(&req("a")).unwrap(), "first\tline\n");
        assert_eq!(rec.complete(&req("b")).unwrap(), "ünïcode");
        let text = rec.to_text();
        assert_eq!(text.lines().count(), 2);

        let replay = CassetteBackend::parse(&text).unwrap();
        assert_eq!(replay.complete(&req("b")).unwrap(), "ünïcode");
        assert_eq!(replay.complete(&req("a")).unwrap(), "first\tline\n");
        assert_eq!(replay.remaining(), 0);
        assert!(matches!(replay.complete(&req("a")), Err(BackendError::CassetteMiss(_))));
    }

    #[test]
    fn repeated_digest_replays_in_order() {
        let rec = CassetteBackend::record(ScriptedBackend::queue(["1", "2"]));
        rec.complete(&req("same")).unwrap();
        rec.complete(&req("same")).unwrap();
        let replay = CassetteBackend::parse(&rec.to_text()).unwrap();
        assert_eq!(replay.complete(&req("same")).unwrap(), "1");
        assert_eq!(replay.complete(&req("same")).unwrap(), "2");
    }

    #[test]
    fn line_round_trip() {
        let e = CassetteEntry::new(&req("x"), "y");
        assert_eq!(CassetteEntry::from_line(&e.to_line()).unwrap(), e);
        assert!(CassetteEntry::from_line("only\ttwo").is_err());
        assert!(CassetteEntry::from_line("d\t!!\tYQ==").is_err());
    }
}
