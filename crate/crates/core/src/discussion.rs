//! One question end to end: premises and sub-questions, parallel agent
//! rounds with flagged-node exchange, then a merged tree and a decision.
//!
//! Rounds are numbered from 0. Round 0 is independent reasoning; rounds
//! 1..=max_rounds are discussion. The loop stops early once the answer
//! vector and the flagged-node set both repeat.
//!
//! Transcript lines are JSON objects with a `kind` field, in this order:
//! `question`, `call`* (phase A), `premises`, `subquestions`, then per round
//! `call`* `reply`* `warning`* `round`, and finally `decision` or `aborted`.
//! Calls inside a round are grouped by agent id, so thread scheduling never
//! changes the file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{
    decompose, extract_premises, respond, AgentError, AgentReply, AgentSettings, CallRecord,
    OwnView, PeerOpinion, PremiseSet, ReasonInput, Session, StepInfo, SubQuestion,
    SubQuestionKind,
};
use crate::backends::{Backend, BackendError, CompletionRequest};
use crate::consensus;
use crate::logic_tree::{merge_trees, normalize_text, LogicalTree, Owner, TreeError};
use crate::prompt_kit::TaggedAnswer;
use crate::question::Question;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscussionConfig {
    pub n_agents: u32,
    pub max_rounds: u32,
    pub temperature: f64,
    pub parse_retries: u32,
    pub seed: u64,
    pub max_in_flight: usize,
    pub max_tokens: u32,
}

impl Default for DiscussionConfig {
    fn default() -> Self {
        Self {
            n_agents: 17,
            max_rounds: 3,
            temperature: 0.7,
            parse_retries: 2,
            seed: 0,
            max_in_flight: 8,
            max_tokens: 2048,
        }
    }
}

impl DiscussionConfig {
    pub fn validate(&self) -> Result<(), DiscussionError> {
        let bad = |m: String| Err(DiscussionError::InvalidConfig(m));
        if self.n_agents < 2 {
            return bad(format!("n_agents must be at least 2, got {}", self.n_agents));
        }
        if self.max_rounds < 1 {
            return bad("max_rounds must be at least 1".into());
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad(format!("temperature must be finite and >= 0, got {}", self.temperature));
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be at least 1".into());
        }
        Ok(())
    }

    pub fn agent_settings(&self) -> AgentSettings {
        AgentSettings {
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            parse_retries: self.parse_retries,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiscussionError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("question {question}: {source}")]
    Agent { question: String, source: AgentError },
    #[error("round {round} collapsed: only {answered} agent(s) answered")]
    RoundCollapsed { round: u32, answered: usize },
    #[error("no votes in the final round")]
    NoVotes,
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Limits concurrent requests to a backend.
pub struct Gate<B> {
    inner: B,
    permits: Mutex<usize>,
    freed: Condvar,
}

impl<B: Backend> Gate<B> {
    pub fn new(inner: B, max_in_flight: usize) -> Self {
        Self { inner, permits: Mutex::new(max_in_flight.max(1)), freed: Condvar::new() }
    }
}

impl<B: Backend> Backend for Gate<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        {
            let mut p = self.permits.lock().expect("poisoned");
            while *p == 0 {
                p = self.freed.wait(p).expect("poisoned");
            }
            *p -= 1;
        }
        let result = self.inner.complete(request);
        *self.permits.lock().expect("poisoned") += 1;
        self.freed.notify_one();
        result
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u32,
    /// One entry per agent in id order; `None` is an abstention.
    pub answers: Vec<Option<char>>,
    pub flagged: BTreeSet<String>,
    /// Share of answering agents that gave the modal answer.
    pub agreement: f64,
    /// Sample variance of the chosen option positions, when two or more answered.
    pub variance: Option<f64>,
}

impl RoundSummary {
    fn answered(&self) -> usize {
        self.answers.iter().flatten().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub replies: Vec<AgentReply>,
    pub summary: RoundSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    Majority,
    CredibilityWeight,
    Lexicographic,
    Aggregator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub answer: char,
    pub rule: DecisionRule,
    pub votes: BTreeMap<char, usize>,
    /// Credibility weight per tied option; empty without a tie.
    pub weights: BTreeMap<char, u32>,
    pub explanation: String,
}

/// Picks the final answer from the last round.
pub trait Aggregator: Sync {
    fn decide(
        &self,
        question: &Question,
        last_round: &RoundRecord,
        merged: &LogicalTree,
    ) -> Result<(char, DecisionRule, BTreeMap<char, u32>), DiscussionError>;
}

/// Modal vote; ties go to the option with more credibility weight behind
/// it in the merged tree, then to the earliest letter.
#[derive(Debug, Default, Clone, Copy)]
pub struct ModalVote;

impl Aggregator for ModalVote {
    fn decide(
        &self,
        question: &Question,
        last_round: &RoundRecord,
        merged: &LogicalTree,
    ) -> Result<(char, DecisionRule, BTreeMap<char, u32>), DiscussionError> {
        let votes = tally(&last_round.summary.answers);
        let top = votes.values().copied().max().ok_or(DiscussionError::NoVotes)?;
        let tied: Vec<char> = votes.iter().filter(|(_, &n)| n == top).map(|(&l, _)| l).collect();
        if tied.len() == 1 {
            return Ok((tied[0], DecisionRule::Majority, BTreeMap::new()));
        }
        let weights: BTreeMap<char, u32> = tied
            .iter()
            .map(|&l| (l, option_weight(merged, question.option_text(l).unwrap_or(""))))
            .collect();
        let best = weights.values().copied().max().unwrap_or(0);
        let leaders: Vec<char> = weights.iter().filter(|(_, &w)| w == best).map(|(&l, _)| l).collect();
        if leaders.len() == 1 {
            Ok((leaders[0], DecisionRule::CredibilityWeight, weights))
        } else {
            Ok((leaders[0], DecisionRule::Lexicographic, weights))
        }
    }
}

fn tally(answers: &[Option<char>]) -> BTreeMap<char, usize> {
    let mut votes = BTreeMap::new();
    for a in answers.iter().flatten() {
        *votes.entry(*a).or_insert(0) += 1;
    }
    votes
}

/// Summed credibility weight of nodes whose conclusion mentions the option text.
pub fn option_weight(tree: &LogicalTree, option_text: &str) -> u32 {
    let needle = normalize_text(option_text);
    if needle.is_empty() {
        return 0;
    }
    tree.nodes()
        .iter()
        .filter(|n| normalize_text(n.conclusion()).contains(&needle))
        .map(|n| n.credibility.map_or(0, |c| c.weight()))
        .sum()
}

/// Discussion stops when the round cap is reached, or when a round after
/// the first repeats the previous answers and flagged nodes exactly.
pub fn has_converged(rounds: &[RoundSummary], max_rounds: u32) -> bool {
    let Some(last) = rounds.last() else {
        return false;
    };
    if last.round >= max_rounds {
        return true;
    }
    match rounds.len().checked_sub(2).map(|i| &rounds[i]) {
        Some(prev) => prev.answers == last.answers && prev.flagged == last.flagged,
        None => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Question {
        question: Question,
        config: DiscussionConfig,
    },
    Call {
        phase: char,
        #[serde(flatten)]
        call: CallRecord,
    },
    Premises {
        majors: Vec<String>,
        minors: Vec<String>,
        degraded: bool,
    },
    Subquestions {
        items: Vec<SubQuestion>,
    },
    Reply {
        round: u32,
        agent: u32,
        answer: Option<TaggedAnswer>,
        steps: Vec<StepInfo>,
        tree: Option<String>,
        error: Option<String>,
    },
    Warning {
        agent: u32,
        round: Option<u32>,
        message: String,
    },
    Round(RoundSummary),
    Decision {
        answer: char,
        rule: DecisionRule,
        votes: BTreeMap<char, usize>,
        weights: BTreeMap<char, u32>,
        tree: String,
        explanation: String,
    },
    Aborted {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscussionTranscript {
    pub question: Question,
    pub premises: PremiseSet,
    pub subquestions: Vec<SubQuestion>,
    pub rounds: Vec<RoundRecord>,
    pub merged: Option<LogicalTree>,
    pub decision: Option<Decision>,
    pub warnings: Vec<String>,
    pub records: Vec<Record>,
}

impl DiscussionTranscript {
    pub fn to_jsonl(&self) -> String {
        records_to_jsonl(&self.records)
    }

    pub fn answer(&self) -> Option<char> {
        self.decision.as_ref().map(|d| d.answer)
    }

    pub fn summaries(&self) -> Vec<RoundSummary> {
        self.rounds.iter().map(|r| r.summary.clone()).collect()
    }
}

pub fn records_to_jsonl(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_transcript(text: &str) -> Result<Vec<Record>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

/// File name for a question's transcript; anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn transcript_file_name(question_id: &str) -> String {
    let safe: String = question_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect();
    format!("{safe}.jsonl")
}

pub fn write_transcript(dir: &Path, transcript: &DiscussionTranscript) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(transcript_file_name(&transcript.question.id));
    fs::write(&path, transcript.to_jsonl())?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub premises: Duration,
    pub discussion: Duration,
    pub decision: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionOutcome {
    pub transcript: DiscussionTranscript,
    pub error: Option<DiscussionError>,
    pub timings: PhaseTimings,
}

impl QuestionOutcome {
    pub fn answer(&self) -> Option<char> {
        self.transcript.answer()
    }

    pub fn aborted(&self) -> bool {
        self.error.is_some()
    }
}

struct Run {
    records: Vec<Record>,
    warnings: Vec<String>,
}

impl Run {
    fn absorb(&mut self, phase: char, agent: u32, round: Option<u32>, calls: Vec<CallRecord>, warnings: Vec<String>) {
        self.records.extend(calls.into_iter().map(|call| Record::Call { phase, call }));
        self.absorb_warnings(agent, round, warnings);
    }

    fn absorb_warnings(&mut self, agent: u32, round: Option<u32>, warnings: Vec<String>) {
        for message in warnings {
            self.warnings.push(message.clone());
            self.records.push(Record::Warning { agent, round, message });
        }
    }
}

fn summarize(question: &Question, round: u32, replies: &[AgentReply], warnings: &mut Vec<(u32, String)>) -> RoundSummary {
    let answers: Vec<Option<char>> = replies
        .iter()
        .map(|r| {
            let letter = r.answer.as_ref()?.letter();
            if question.has_letter(letter) {
                Some(letter)
            } else {
                warnings.push((r.agent_id, format!("agent {} named unknown option {letter}", r.agent_id)));
                None
            }
        })
        .collect();
    let mut flagged = BTreeSet::new();
    for r in replies {
        for n in r.tree.iter().flat_map(|t| t.flagged()) {
            let (a, b, c) = n.triad_key();
            let mut h = Sha256::new();
            for part in [r.agent_id.to_string(), a, b, c] {
                h.update((part.len() as u64).to_le_bytes());
                h.update(part.as_bytes());
            }
            flagged.insert(hex::encode(&h.finalize()[..8]));
        }
    }
    let votes = tally(&answers);
    let answered: usize = votes.values().sum();
    let agreement = match votes.values().max() {
        Some(&top) => top as f64 / answered as f64,
        None => 0.0,
    };
    let positions: Vec<f64> = answers
        .iter()
        .flatten()
        .filter_map(|l| question.index_of(*l))
        .map(|i| i as f64)
        .collect();
    RoundSummary {
        round,
        answers,
        flagged,
        agreement,
        variance: consensus::variance(&positions).ok(),
    }
}

/// Merges trees one at a time; a tree whose edges would close a cycle
/// contributes its nodes only.
fn merge_all(trees: &[LogicalTree], warnings: &mut Vec<String>) -> LogicalTree {
    let mut acc: Option<LogicalTree> = None;
    for t in trees {
        acc = Some(match acc {
            None => merge_trees(std::slice::from_ref(t)).expect("single tree merges"),
            Some(prev) => match merge_trees(&[prev.clone(), t.clone()]) {
                Ok(m) => m,
                Err(_) => {
                    warnings.push(format!("edges of {} dropped from merged tree: they close a cycle", t.owner));
                    let nodes_only = t.nodes().iter().fold(LogicalTree::new(t.owner, t.round), |acc, n| {
                        acc.add_node(n.clone()).expect("ids unique in source")
                    });
                    merge_trees(&[prev, nodes_only]).expect("no new edges")
                }
            },
        });
    }
    acc.unwrap_or_else(|| LogicalTree::new(Owner::Merged, 0))
}

fn explanation(question: &Question, decision: (char, DecisionRule), merged: &LogicalTree, rounds: &[RoundRecord]) -> String {
    let (answer, rule) = decision;
    let mut out = format!(
        "Answer: {answer}. {}\nDecided by: {rule:?}\n",
        question.option_text(answer).unwrap_or("")
    );
    if let Ok(roots) = merged.root_conclusions() {
        out.push_str("Conclusions:\n");
        for (id, text) in roots {
            out.push_str(&format!("- [{id}] {text}\n"));
        }
    }
    out.push_str("Reasons:\n");
    for round in rounds {
        for r in &round.replies {
            if let Some(a) = &r.answer {
                if !a.reason.is_empty() {
                    out.push_str(&format!(
                        "- round {} agent {} {} {}: {}\n",
                        r.round,
                        r.agent_id,
                        a.tag.as_str().to_lowercase(),
                        a.option,
                        a.reason
                    ));
                }
            }
        }
    }
    out
}

/// Runs one question through every phase. Never panics on model output;
/// failures end the question early with `error` set and no answer.
pub fn run_question(
    backend: &dyn Backend,
    question: &Question,
    config: &DiscussionConfig,
    aggregator: &dyn Aggregator,
) -> QuestionOutcome {
    let mut timings = PhaseTimings::default();
    let mut run = Run { records: Vec::new(), warnings: Vec::new() };
    run.records.push(Record::Question { question: question.clone(), config: config.clone() });
    let mut transcript = DiscussionTranscript {
        question: question.clone(),
        premises: PremiseSet::default(),
        subquestions: Vec::new(),
        rounds: Vec::new(),
        merged: None,
        decision: None,
        warnings: Vec::new(),
        records: Vec::new(),
    };
    let finish = |mut run: Run, mut transcript: DiscussionTranscript, error: Option<DiscussionError>, timings| {
        if let Some(e) = &error {
            run.records.push(Record::Aborted { error: e.to_string() });
        }
        transcript.records = run.records;
        transcript.warnings = run.warnings;
        QuestionOutcome { transcript, error, timings }
    };
    if let Err(e) = config.validate() {
        return finish(run, transcript, Some(e), timings);
    }

    let settings = config.agent_settings();
    let gated = Gate::new(backend, config.max_in_flight);

    // Phase A
    let started = Instant::now();
    let mut session = Session::new(&gated, &settings, &question.id);
    let phase_a = extract_premises(&mut session, question)
        .and_then(|p| decompose(&mut session, question).map(|s| (p, s)));
    let Session { calls, warnings, .. } = session;
    run.absorb('A', 0, None, calls, warnings);
    timings.premises = started.elapsed();
    let (premises, subqs) = match phase_a {
        Ok(x) => x,
        Err(source) => {
            let err = DiscussionError::Agent { question: question.id.clone(), source };
            return finish(run, transcript, Some(err), timings);
        }
    };
    run.records.push(Record::Premises {
        majors: premises.majors.iter().map(|p| p.text().to_string()).collect(),
        minors: premises.minors.iter().map(|p| p.text().to_string()).collect(),
        degraded: premises.degraded,
    });
    run.records.push(Record::Subquestions { items: subqs.clone() });
    // Open questions are discussed over the proposed hypotheses.
    let working = if question.is_open() {
        Question {
            options: subqs
                .iter()
                .filter_map(|s| match s.kind {
                    SubQuestionKind::OptionHypothesis(l) => Some((l, s.text.clone())),
                    SubQuestionKind::Open => None,
                })
                .collect(),
            ..question.clone()
        }
    } else {
        question.clone()
    };
    transcript.premises = premises.clone();
    transcript.subquestions = subqs.clone();

    // Phase B
    let started = Instant::now();
    let mut rounds: Vec<RoundRecord> = Vec::new();
    for round in 0..=config.max_rounds {
        let prev = rounds.last();
        let opinions: Vec<PeerOpinion> = prev
            .map(|r| r.replies.iter().map(PeerOpinion::from_reply).collect())
            .unwrap_or_default();
        let results: Vec<(u32, Result<AgentReply, AgentError>, Vec<CallRecord>, Vec<String>)> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = (1..=config.n_agents)
                    .map(|agent| {
                        let (gated, settings, working) = (&gated, &settings, &working);
                        let (premises, subqs, opinions) = (&premises, &subqs, &opinions);
                        scope.spawn(move || {
                            let mut session = Session::new(gated, settings, &working.id);
                            let peers: Vec<PeerOpinion> =
                                opinions.iter().filter(|p| p.agent_id != agent).cloned().collect();
                            let own_prev = prev.map(|r| &r.replies[agent as usize - 1]);
                            let own_opinion = opinions.iter().find(|p| p.agent_id == agent);
                            let input = ReasonInput {
                                question: working,
                                premises,
                                subqs,
                                peers: &peers,
                                own: own_opinion.map(|o| OwnView { answer: o.answer.as_ref(), flagged: &o.flagged }),
                                round,
                            };
                            let reply = respond(&mut session, agent, &input, own_prev.and_then(|r| r.tree.as_ref()));
                            (agent, reply, session.calls, session.warnings)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("agent task panicked")).collect()
            });

        let mut replies = Vec::with_capacity(results.len());
        let mut errors = Vec::new();
        let mut pending = Vec::new();
        for (agent, result, calls, warnings) in results {
            run.records.extend(calls.into_iter().map(|call| Record::Call { phase: 'B', call }));
            let reply = match result {
                Ok(reply) => {
                    errors.push(None);
                    reply
                }
                Err(e) => {
                    errors.push(Some(e.to_string()));
                    // Abstains; the locked tree so far is kept.
                    let carried = prev.and_then(|r| r.replies[agent as usize - 1].tree.clone());
                    AgentReply { agent_id: agent, round, raw_text: String::new(), answer: None, tree: carried, steps: Vec::new() }
                }
            };
            pending.push((agent, warnings));
            replies.push(reply);
        }
        for (reply, error) in replies.iter().zip(errors) {
            run.records.push(Record::Reply {
                round,
                agent: reply.agent_id,
                answer: reply.answer.clone(),
                steps: reply.steps.clone(),
                tree: reply.tree.as_ref().map(LogicalTree::to_records),
                error,
            });
        }
        let mut summary_warnings = Vec::new();
        let summary = summarize(&working, round, &replies, &mut summary_warnings);
        for (agent, warnings) in pending {
            run.absorb_warnings(agent, Some(round), warnings);
        }
        for (agent, message) in summary_warnings {
            run.absorb_warnings(agent, Some(round), vec![message]);
        }
        if rounds.len() >= 2 {
            let before = &rounds[rounds.len() - 2].summary.answers;
            let last = &rounds[rounds.len() - 1].summary.answers;
            if *before == summary.answers && *last != summary.answers {
                run.absorb_warnings(0, Some(round), vec![format!("answers oscillate at round {round}")]);
            }
        }
        run.records.push(Record::Round(summary.clone()));
        let answered = summary.answered();
        rounds.push(RoundRecord { replies, summary });
        if answered < 2 {
            timings.discussion = started.elapsed();
            transcript.rounds = rounds;
            return finish(run, transcript, Some(DiscussionError::RoundCollapsed { round, answered }), timings);
        }
        let summaries: Vec<RoundSummary> = rounds.iter().map(|r| r.summary.clone()).collect();
        if has_converged(&summaries, config.max_rounds) {
            break;
        }
    }
    timings.discussion = started.elapsed();

    // Phase C
    let started = Instant::now();
    let last = rounds.last().expect("at least one round");
    let trees: Vec<LogicalTree> = last.replies.iter().filter_map(|r| r.tree.clone()).collect();
    let mut merge_warnings = Vec::new();
    let merged = merge_all(&trees, &mut merge_warnings);
    run.absorb_warnings(0, None, merge_warnings);
    let decided = aggregator.decide(&working, last, &merged);
    let (answer, rule, weights) = match decided {
        Ok(x) => x,
        Err(e) => {
            transcript.rounds = rounds;
            transcript.merged = Some(merged);
            return finish(run, transcript, Some(e), timings);
        }
    };
    let votes = tally(&last.summary.answers);
    let explanation = explanation(&working, (answer, rule), &merged, &rounds);
    run.records.push(Record::Decision {
        answer,
        rule,
        votes: votes.clone(),
        weights: weights.clone(),
        tree: merged.to_records(),
        explanation: explanation.clone(),
    });
    timings.decision = started.elapsed();
    transcript.rounds = rounds;
    transcript.merged = Some(merged);
    transcript.decision = Some(Decision { answer, rule, votes, weights, explanation });
    finish(run, transcript, None, timings)
}
