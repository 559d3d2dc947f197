//! Canned replies for offline runs.
//!
//! Each entry has a matcher over the request tag (and seed). A request takes
//! the first unused entry in file order that matches it; sticky entries are
//! never used up. Script files look like:
//!
//! ```text
//! # comment
//! === question=q1 agent=2 round=0 template=decompose
//! <Answer>Answer: A</Answer>
//! Reason: ...
//! === * template=credibility
//! Index	MajorPremise	MinorPremise	Conclusion	Credibility
//! 1	a	b	c	High
//! ```
//!
//! `*` marks a sticky entry. Omitted keys match anything.

use std::fmt::Write as _;
use std::sync::Mutex;

use super::{Backend, BackendError, CompletionRequest};
use crate::prompt_kit::TemplateId;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Matcher {
    pub question: Option<String>,
    pub agent: Option<u32>,
    pub round: Option<u32>,
    pub template: Option<TemplateId>,
    pub seed: Option<u64>,
}

impl Matcher {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn question(mut self, q: impl Into<String>) -> Self {
        self.question = Some(q.into());
        self
    }

    pub fn agent(mut self, agent: u32) -> Self {
        self.agent = Some(agent);
        self
    }

    pub fn round(mut self, round: u32) -> Self {
        self.round = Some(round);
        self
    }

    pub fn template(mut self, template: TemplateId) -> Self {
        self.template = Some(template);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn matches(&self, req: &CompletionRequest) -> bool {
        self.question.as_ref().is_none_or(|q| *q == req.tag.question)
            && self.agent.is_none_or(|a| a == req.tag.agent)
            && self.round.is_none_or(|r| r == req.tag.round)
            && self.template.is_none_or(|t| t == req.tag.template)
            && self.seed.is_none_or(|s| Some(s) == req.seed)
    }

    fn parse(spec: &str) -> Result<Self, String> {
        let mut m = Matcher::default();
        for pair in spec.split_whitespace() {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{pair}`"))?;
            let num = |v: &str| v.parse::<u64>().map_err(|_| format!("bad number in `{pair}`"));
            match key {
                "question" => m.question = Some(value.to_string()),
                "agent" => m.agent = Some(num(value)? as u32),
                "round" => m.round = Some(num(value)? as u32),
                "seed" => m.seed = Some(num(value)?),
                "template" => {
                    m.template = Some(value.parse().map_err(|e| format!("{e}"))?);
                }
                other => return Err(format!("unknown matcher key `{other}`")),
            }
        }
        Ok(m)
    }

    fn render(&self) -> String {
        let mut parts = Vec::new();
        if let Some(q) = &self.question {
            parts.push(format!("question={q}"));
        }
        if let Some(a) = self.agent {
            parts.push(format!("agent={a}"));
        }
        if let Some(r) = self.round {
            parts.push(format!("round={r}"));
        }
        if let Some(t) = self.template {
            parts.push(format!("template={t}"));
        }
        if let Some(s) = self.seed {
            parts.push(format!("seed={s}"));
        }
        parts.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    pub matcher: Matcher,
    pub reply: String,
    pub sticky: bool,
}

impl ScriptEntry {
    pub fn once(matcher: Matcher, reply: impl Into<String>) -> Self {
        Self { matcher, reply: reply.into(), sticky: false }
    }

    pub fn sticky(matcher: Matcher, reply: impl Into<String>) -> Self {
        Self { matcher, reply: reply.into(), sticky: true }
    }
}

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    // (entry, used)
    entries: Mutex<Vec<(ScriptEntry, bool)>>,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        Self {
            entries: Mutex::new(entries.into_iter().map(|e| (e, false)).collect()),
        }
    }

    /// Plain queue: every request takes the next reply regardless of tag.
    pub fn queue<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(replies.into_iter().map(|r| ScriptEntry::once(Matcher::any(), r)))
    }

    pub fn push(&self, entry: ScriptEntry) {
        self.entries.lock().expect("poisoned").push((entry, false));
    }

    pub fn remaining(&self) -> usize {
        self.entries
            .lock()
            .expect("poisoned")
            .iter()
            .filter(|(e, used)| !e.sticky && !used)
            .count()
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries = Vec::new();
        let mut current: Option<(ScriptEntry, Vec<&str>)> = None;
        let finish = |(mut entry, body): (ScriptEntry, Vec<&str>)| {
            let mut body = body;
            while body.last().is_some_and(|l| l.trim().is_empty()) {
                body.pop();
            }
            entry.reply = body.join("\n");
            entry
        };
        for (idx, line) in text.lines().enumerate() {
            if let Some(spec) = line.strip_prefix("===") {
                if let Some(done) = current.take() {
                    entries.push(finish(done));
                }
                let spec = spec.trim();
                let (sticky, spec) = match spec.strip_prefix('*') {
                    Some(rest) => (true, rest),
                    None => (false, spec),
                };
                let matcher = Matcher::parse(spec).map_err(|e| format!("line {}: {e}", idx + 1))?;
                current = Some((ScriptEntry { matcher, reply: String::new(), sticky }, Vec::new()));
            } else if let Some((_, body)) = current.as_mut() {
                body.push(line);
            } else if !line.trim().is_empty() && !line.starts_with('#') {
                return Err(format!("line {}: text before the first `===` header", idx + 1));
            }
        }
        if let Some(done) = current.take() {
            entries.push(finish(done));
        }
        Ok(Self::new(entries))
    }

    /// Script text for the entries not yet used.
    pub fn to_script_text(&self) -> String {
        let mut out = String::new();
        for (entry, used) in self.entries.lock().expect("poisoned").iter() {
            if *used {
                continue;
            }
            let star = if entry.sticky { "* " } else { "" };
            let _ = writeln!(out, "=== {star}{}", entry.matcher.render());
            out.push_str(&entry.reply);
            out.push('\n');
        }
        out
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut entries = self.entries.lock().expect("poisoned");
        let hit = entries
            .iter_mut()
            .find(|(e, used)| !used && e.matcher.matches(request));
        match hit {
            Some((entry, used)) => {
                if !entry.sticky {
                    *used = true;
                }
                Ok(entry.reply.clone())
            }
            None => Err(BackendError::ScriptExhausted(request.tag.to_string())),
        }
    }
}
