//! The four agent roles as operations over a [`Backend`]: premise
//! extraction, question decomposition, reasoning with tree extraction, and
//! credibility calibration.
//!
//! Every backend call goes through a [`Session`], which derives the request
//! seed, keeps a [`CallRecord`] per call and collects warnings. One session
//! belongs to one agent task, so concurrent agents never share mutable state.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backend, BackendError, CompletionRequest, RequestTag};
use crate::logic_tree::{
    merge_trees, normalize_text, Credibility, LogicalTree, NodeId, Owner, Premise, PremiseKind,
    PremiseSource, SyllogismNode, TreeError,
};
use crate::prompt_kit::{
    parse_hypotheses, parse_premise_blocks, parse_tagged, parse_tsv, render, RenderError,
    TaggedAnswer, TemplateId, TsvSchema,
};
use crate::question::Question;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("no candidate answers after {0} attempts")]
    NoHypotheses(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSettings {
    pub temperature: f64,
    pub max_tokens: u32,
    pub parse_retries: u32,
    pub seed: u64,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            temperature: crate::backends::DEFAULT_TEMPERATURE,
            max_tokens: 2048,
            parse_retries: 2,
            seed: 0,
        }
    }
}

/// Seed for one request. Distinct agents, rounds, templates and attempts
/// get distinct seeds from the same base.
pub fn derive_seed(base: u64, agent: u32, round: u32, template: TemplateId, attempt: u32) -> u64 {
    let t = TemplateId::ALL.iter().position(|x| *x == template).unwrap_or(0) as u64;
    base ^ ((agent as u64) << 32) ^ ((round as u64) << 16) ^ (t << 8) ^ attempt as u64
}

/// One backend call as it appears in a transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub question: String,
    pub agent: u32,
    pub round: u32,
    pub template: TemplateId,
    pub attempt: u32,
    pub digest: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

pub struct Session<'a> {
    backend: &'a dyn Backend,
    settings: &'a AgentSettings,
    question_id: String,
    attempts: HashMap<(u32, u32, TemplateId), u32>,
    pub calls: Vec<CallRecord>,
    pub warnings: Vec<String>,
}

impl<'a> Session<'a> {
    pub fn new(backend: &'a dyn Backend, settings: &'a AgentSettings, question_id: &str) -> Self {
        Self {
            backend,
            settings,
            question_id: question_id.to_string(),
            attempts: HashMap::new(),
            calls: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn settings(&self) -> &AgentSettings {
        self.settings
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    pub fn call(
        &mut self,
        agent: u32,
        round: u32,
        template: TemplateId,
        system_text: String,
        user_text: String,
    ) -> Result<String, BackendError> {
        let attempt = {
            let slot = self.attempts.entry((agent, round, template)).or_insert(0);
            let a = *slot;
            *slot += 1;
            a
        };
        let request = CompletionRequest {
            system_text,
            user_text,
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
            seed: Some(derive_seed(self.settings.seed, agent, round, template, attempt)),
            tag: RequestTag {
                question: self.question_id.clone(),
                agent,
                round,
                template,
            },
        };
        let result = self.backend.complete(&request);
        self.calls.push(CallRecord {
            question: self.question_id.clone(),
            agent,
            round,
            template,
            attempt,
            digest: request.digest(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(ToString::to_string),
        });
        result
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PremiseSet {
    pub majors: Vec<Premise>,
    pub minors: Vec<Premise>,
    /// Extraction gave up after the retry budget.
    pub degraded: bool,
}

impl PremiseSet {
    pub fn is_empty(&self) -> bool {
        self.majors.is_empty() && self.minors.is_empty()
    }
}

pub fn extract_premises(session: &mut Session<'_>, question: &Question) -> Result<PremiseSet, AgentError> {
    let mut text = question.text.clone();
    if !question.is_open() {
        text = format!("{text}\n{}", question.format_options());
    }
    let (system, user) = render(TemplateId::PremiseExtract, &[("question", text.as_str())])?;
    let budget = session.settings().parse_retries + 1;
    for _ in 0..budget {
        let reply = session.call(0, 0, TemplateId::PremiseExtract, system.clone(), user.clone())?;
        match parse_premise_blocks(&reply) {
            Ok(blocks) if !(blocks.majors.is_empty() && blocks.minors.is_empty()) => {
                let build = |items: Vec<String>, kind, source| {
                    items
                        .into_iter()
                        .filter_map(|t| Premise::new(t, kind, source).ok())
                        .collect::<Vec<_>>()
                };
                return Ok(PremiseSet {
                    majors: build(blocks.majors, PremiseKind::Major, PremiseSource::Knowledge),
                    minors: build(blocks.minors, PremiseKind::Minor, PremiseSource::Question),
                    degraded: false,
                });
            }
            Ok(_) => session.warn("premise extraction returned empty blocks"),
            Err(e) => session.warn(format!("premise extraction: {e}")),
        }
    }
    session.warn(format!("premise extraction gave up after {budget} attempts"));
    Ok(PremiseSet { degraded: true, ..PremiseSet::default() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubQuestionKind {
    OptionHypothesis(char),
    Open,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuestion {
    pub id: u32,
    pub text: String,
    pub kind: SubQuestionKind,
    pub terminal: bool,
}

/// Sub-questions for a question. For a multiple-choice question this is one
/// terminal hypothesis per option and costs no backend call. For an open
/// question the model proposes candidate answers, lettered `A`, `B`, ...
pub fn decompose(session: &mut Session<'_>, question: &Question) -> Result<Vec<SubQuestion>, AgentError> {
    let hypotheses: Vec<(char, String)> = if question.is_open() {
        open_hypotheses(session, question)?
    } else {
        question.options.clone()
    };
    Ok(hypotheses
        .into_iter()
        .enumerate()
        .map(|(i, (letter, text))| SubQuestion {
            id: i as u32 + 1,
            text,
            kind: SubQuestionKind::OptionHypothesis(letter),
            terminal: true,
        })
        .collect())
}

fn open_hypotheses(session: &mut Session<'_>, question: &Question) -> Result<Vec<(char, String)>, AgentError> {
    let (system, user) = render(TemplateId::OpenHypotheses, &[("question", question.text.as_str())])?;
    let budget = session.settings().parse_retries + 1;
    for _ in 0..budget {
        let reply = session.call(0, 0, TemplateId::OpenHypotheses, system.clone(), user.clone())?;
        match parse_hypotheses(&reply) {
            Ok(items) if !items.is_empty() => {
                let mut seen = Vec::new();
                for item in items {
                    if !seen.iter().any(|s: &String| normalize_text(s) == normalize_text(&item)) {
                        seen.push(item);
                    }
                }
                return Ok(('A'..='Z').zip(seen).collect());
            }
            Ok(_) => session.warn("hypothesis block was empty"),
            Err(e) => session.warn(format!("hypotheses: {e}")),
        }
    }
    Err(AgentError::NoHypotheses(budget))
}

/// What one agent said in a round, as shown to the others.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerOpinion {
    pub agent_id: u32,
    pub answer: Option<TaggedAnswer>,
    /// Flagged nodes of the agent's tree, one line each.
    pub flagged: Vec<String>,
}

impl PeerOpinion {
    pub fn from_reply(reply: &AgentReply) -> Self {
        Self {
            agent_id: reply.agent_id,
            answer: reply.answer.clone(),
            flagged: reply
                .tree
                .iter()
                .flat_map(|t| t.flagged())
                .map(describe_node)
                .collect(),
        }
    }
}

pub fn describe_node(n: &SyllogismNode) -> String {
    format!(
        "[{}] {} | {} => {}",
        n.id,
        n.major().text(),
        n.minor().text(),
        n.conclusion()
    )
}

/// Peer opinions in agent-id order.
pub fn format_opinions(peers: &[PeerOpinion]) -> String {
    let mut peers: Vec<&PeerOpinion> = peers.iter().collect();
    peers.sort_by_key(|p| p.agent_id);
    let mut out = String::new();
    for p in peers {
        match &p.answer {
            Some(a) => {
                let _ = writeln!(out, "Agent {}: {}", p.agent_id, a.to_tag_text());
                let _ = writeln!(out, "Reason: {}", a.reason);
            }
            None => {
                let _ = writeln!(out, "Agent {}: (no answer)", p.agent_id);
            }
        }
        if !p.flagged.is_empty() {
            let _ = writeln!(out, "Flagged steps:");
            for f in &p.flagged {
                let _ = writeln!(out, "- {f}");
            }
        }
    }
    out.trim_end().to_string()
}

fn context_block(premises: &PremiseSet, subqs: &[SubQuestion]) -> String {
    let mut out = String::new();
    if !premises.majors.is_empty() {
        out.push_str("Major premises:\n");
        for p in &premises.majors {
            let _ = writeln!(out, "- {}", p.text());
        }
    }
    if !premises.minors.is_empty() {
        out.push_str("Minor premises:\n");
        for p in &premises.minors {
            let _ = writeln!(out, "- {}", p.text());
        }
    }
    if !subqs.is_empty() {
        out.push_str("Sub-questions:\n");
        for s in subqs {
            let label = match s.kind {
                SubQuestionKind::OptionHypothesis(l) => format!("option {l}"),
                SubQuestionKind::Open => "open".to_string(),
            };
            let _ = writeln!(out, "{}. ({label}) {}", s.id, s.text);
        }
    }
    out
}

/// The agent's own position going into a round after the first.
#[derive(Debug, Clone, Copy)]
pub struct OwnView<'a> {
    pub answer: Option<&'a TaggedAnswer>,
    pub flagged: &'a [String],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepInfo {
    pub label: String,
    pub node: NodeId,
    pub flawed: bool,
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub error_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentReply {
    pub agent_id: u32,
    pub round: u32,
    pub raw_text: String,
    pub answer: Option<TaggedAnswer>,
    pub tree: Option<LogicalTree>,
    pub steps: Vec<StepInfo>,
}

pub struct ReasonInput<'a> {
    pub question: &'a Question,
    pub premises: &'a PremiseSet,
    pub subqs: &'a [SubQuestion],
    /// Opinions of the other agents; empty in round 0.
    pub peers: &'a [PeerOpinion],
    pub own: Option<OwnView<'a>>,
    pub round: u32,
}

pub fn reasoning_prompt(input: &ReasonInput<'_>) -> Result<(TemplateId, String, String), RenderError> {
    let context = context_block(input.premises, input.subqs);
    let options = input.question.format_options();
    if input.round == 0 {
        let (system, user) = render(
            TemplateId::Decompose,
            &[("question", input.question.text.as_str()), ("option", options.as_str())],
        )?;
        return Ok((TemplateId::Decompose, system, join_sections(&context, &user)));
    }
    let (answer, reason) = match input.own.and_then(|o| o.answer) {
        Some(a) => (a.option.clone(), a.reason.clone()),
        None => ("none".to_string(), "no answer was given".to_string()),
    };
    let question_text = format!("{}\n{options}", input.question.text);
    let (mut system, mut user) = render(
        TemplateId::EliminateRebuttal,
        &[
            ("question", question_text.as_str()),
            ("answer", answer.as_str()),
            ("reason", reason.as_str()),
            ("opinions", format_opinions(input.peers).as_str()),
        ],
    )?;
    let flagged = input.own.map(|o| o.flagged).unwrap_or_default();
    if !flagged.is_empty() {
        let listed = flagged.iter().map(|f| format!("- {f}")).collect::<Vec<_>>().join("\n");
        let (rev_system, rev_user) = render(TemplateId::Revision, &[("flagged", listed.as_str())])?;
        system = format!("{system}\n\n{rev_system}");
        user = format!("{user}\n\n{rev_user}");
    }
    Ok((TemplateId::EliminateRebuttal, system, join_sections(&context, &user)))
}

fn join_sections(context: &str, user: &str) -> String {
    if context.is_empty() {
        user.to_string()
    } else {
        format!("{context}\n{user}")
    }
}

/// One reasoning call plus up to `parse_retries` more while no answer tag
/// can be read. With no tag after the budget the agent abstains.
pub fn reason_once(
    session: &mut Session<'_>,
    agent_id: u32,
    input: &ReasonInput<'_>,
) -> Result<AgentReply, AgentError> {
    let (template, system, user) = reasoning_prompt(input)?;
    let budget = session.settings().parse_retries + 1;
    let mut raw_text = String::new();
    for _ in 0..budget {
        raw_text = session.call(agent_id, input.round, template, system.clone(), user.clone())?;
        match parse_tagged(&raw_text) {
            Ok(answer) => {
                return Ok(AgentReply {
                    agent_id,
                    round: input.round,
                    raw_text,
                    answer: Some(answer),
                    tree: None,
                    steps: Vec::new(),
                })
            }
            Err(e) => session.warn(format!("agent {agent_id} round {}: {e}", input.round)),
        }
    }
    session.warn(format!("agent {agent_id} abstains in round {}", input.round));
    Ok(AgentReply {
        agent_id,
        round: input.round,
        raw_text,
        answer: None,
        tree: None,
        steps: Vec::new(),
    })
}

/// Maps checker and calibrator vocabularies onto [`Credibility`].
pub fn credibility_token(token: &str) -> Option<Credibility> {
    let t = token
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_ascii_lowercase();
    match t.as_str() {
        "strong" | "high" => Some(Credibility::High),
        "moderate" | "medium" => Some(Credibility::Medium),
        "weak" | "low" => Some(Credibility::Low),
        _ => None,
    }
}

fn credibility_or_low(session: &mut Session<'_>, token: &str) -> Credibility {
    credibility_token(token).unwrap_or_else(|| {
        session.warn(format!("unknown credibility `{token}` read as Low"));
        Credibility::Low
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedTree {
    pub tree: LogicalTree,
    pub steps: Vec<StepInfo>,
}

static YES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^\W*(yes|y|true)\b").expect("valid regex"));

/// Rows of a logic-check table as a tree. Consecutive steps are chained, and
/// a step whose subject repeats an earlier step's object also hangs off that
/// step. Links only point forward, so the result is acyclic.
pub fn tree_from_table(
    session: &mut Session<'_>,
    table: &crate::prompt_kit::TsvTable,
    owner: Owner,
    round: u32,
) -> ExtractedTree {
    let mut tree = LogicalTree::new(owner, round);
    let mut steps = Vec::new();
    // (node, subject, object) of accepted rows
    let mut kept: Vec<(NodeId, String, String)> = Vec::new();
    for row in &table.rows {
        let cell = |name: &str| table.cell(row, name).unwrap_or("").trim().to_string();
        let (label, subject, object) = (cell("Step"), cell("Subject"), cell("Object"));
        let (relation, text) = (cell("Logical Relationship"), cell("Reasoning Text"));
        let major = [subject.as_str(), relation.as_str(), object.as_str()]
            .iter()
            .filter(|s| !s.is_empty())
            .copied()
            .collect::<Vec<_>>()
            .join(" — ");
        let minor = if text.is_empty() { major.clone() } else { text.clone() };
        let conclusion = if object.is_empty() { text.clone() } else { object.clone() };
        let id = tree.next_id();
        let node = match SyllogismNode::new(id.0, major, minor, conclusion) {
            Ok(n) => n,
            Err(e) => {
                session.warn(format!("skipped logic-check row `{label}`: {e}"));
                continue;
            }
        };
        let credibility = credibility_or_low(session, &cell("Credibility"));
        let flawed = YES.is_match(&cell("Error (Yes/No)"));
        let node = node.with_credibility(credibility).with_flag(flawed);
        tree = tree.add_node(node).expect("fresh id");
        steps.push(StepInfo {
            label,
            node: id,
            flawed,
            error_type: if flawed { cell("Error Type") } else { String::new() },
        });
        kept.push((id, normalize_text(&subject), normalize_text(&object)));
    }
    for i in 1..kept.len() {
        tree = tree.add_edge(kept[i - 1].0, kept[i].0).expect("forward edge");
    }
    for j in 0..kept.len() {
        if kept[j].1.is_empty() {
            continue;
        }
        for i in 0..j.saturating_sub(1) {
            if kept[i].2 == kept[j].1 && !tree.edges().contains(&(kept[i].0, kept[j].0)) {
                tree = tree.add_edge(kept[i].0, kept[j].0).expect("forward edge");
            }
        }
    }
    ExtractedTree { tree, steps }
}

/// Logic-check call over a reasoning passage, with retries while no table
/// can be read. Gives an empty tree with a warning when the budget runs out.
pub fn extract_tree(
    session: &mut Session<'_>,
    agent_id: u32,
    round: u32,
    raw_reasoning: &str,
) -> Result<ExtractedTree, AgentError> {
    let empty = ExtractedTree { tree: LogicalTree::new(Owner::Agent(agent_id), round), steps: Vec::new() };
    if raw_reasoning.trim().is_empty() {
        session.warn(format!("agent {agent_id} round {round}: nothing to check"));
        return Ok(empty);
    }
    let (system, user) = render(TemplateId::LogicCheckTsv, &[("reason", raw_reasoning)])?;
    let budget = session.settings().parse_retries + 1;
    for _ in 0..budget {
        let reply = session.call(agent_id, round, TemplateId::LogicCheckTsv, system.clone(), user.clone())?;
        match parse_tsv(&reply, TsvSchema::LogicCheck9) {
            Ok(table) => return Ok(tree_from_table(session, &table, Owner::Agent(agent_id), round)),
            Err(e) => session.warn(format!("agent {agent_id} round {round} logic check: {e}")),
        }
    }
    session.warn(format!("agent {agent_id} round {round}: no logic-check table, tree left empty"));
    Ok(empty)
}

/// Rows shown to the calibrator, `index \t syllogism`.
pub fn calibration_rows(tree: &LogicalTree) -> String {
    tree.nodes()
        .iter()
        .map(|n| {
            format!(
                "{}\t({}) ({}) -> ({})",
                n.id,
                n.major().text(),
                n.minor().text(),
                n.conclusion()
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

static INDEX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").expect("valid regex"));

/// Applies calibrator scores to a tree. Low nodes become flagged, Medium
/// and High nodes become locked; locked nodes and nodes the reply does not
/// mention stay as they were.
pub fn apply_calibration(
    session: &mut Session<'_>,
    tree: LogicalTree,
    table: &crate::prompt_kit::TsvTable,
) -> LogicalTree {
    let mut scores: HashMap<NodeId, Credibility> = HashMap::new();
    for row in &table.rows {
        let index = table.cell(row, "Index").unwrap_or("");
        let Some(id) = INDEX.find(index).and_then(|m| m.as_str().parse::<u32>().ok()) else {
            session.warn(format!("calibration row without index: `{index}`"));
            continue;
        };
        if !tree.contains(NodeId(id)) {
            session.warn(format!("calibration names unknown node {id}"));
            continue;
        }
        let token = table.cell(row, "Credibility").unwrap_or("").to_string();
        let cred = credibility_or_low(session, &token);
        scores.insert(NodeId(id), cred);
    }
    tree.map_nodes(|mut n| {
        if n.locked {
            return n;
        }
        if let Some(&cred) = scores.get(&n.id) {
            n.credibility = Some(cred);
            n.locked = cred.locks();
            n.flagged = !n.locked;
        }
        n
    })
}

pub fn calibrate(
    session: &mut Session<'_>,
    agent_id: u32,
    round: u32,
    tree: LogicalTree,
) -> Result<LogicalTree, AgentError> {
    if tree.is_empty() {
        return Ok(tree);
    }
    let agent = agent_id.to_string();
    let rows = calibration_rows(&tree);
    let (system, user) = render(
        TemplateId::CredibilityTsv,
        &[("agent", agent.as_str()), ("rows", rows.as_str())],
    )?;
    let budget = session.settings().parse_retries + 1;
    for _ in 0..budget {
        let reply = session.call(agent_id, round, TemplateId::CredibilityTsv, system.clone(), user.clone())?;
        match parse_tsv(&reply, TsvSchema::Credibility5) {
            Ok(table) => return Ok(apply_calibration(session, tree, &table)),
            Err(e) => session.warn(format!("agent {agent_id} round {round} calibration: {e}")),
        }
    }
    session.warn(format!("agent {agent_id} round {round}: calibration skipped"));
    Ok(tree)
}

/// Locked nodes of a tree with the edges between them.
pub fn locked_subtree(tree: &LogicalTree) -> LogicalTree {
    let mut out = LogicalTree::new(tree.owner, tree.round);
    for n in tree.locked() {
        out = out.add_node(n.clone()).expect("ids unique in source");
    }
    for &(a, b) in tree.edges() {
        if out.contains(a) && out.contains(b) {
            out = out.add_edge(a, b).expect("subgraph of a DAG");
        }
    }
    out
}

/// Folds the locked part of last round's tree into a fresh one, so locked
/// nodes survive revision with at least their old credibility.
pub fn carry_locks(previous: Option<&LogicalTree>, fresh: LogicalTree, agent_id: u32, round: u32) -> LogicalTree {
    let Some(prev) = previous.map(locked_subtree).filter(|t| !t.is_empty()) else {
        return fresh;
    };
    let merged = match merge_trees(&[prev.clone(), fresh.clone()]) {
        Ok(t) => t,
        Err(TreeError::MergeCycle(_)) => {
            let nodes_only = fresh
                .nodes()
                .iter()
                .fold(LogicalTree::new(fresh.owner, fresh.round), |t, n| {
                    t.add_node(n.clone()).expect("ids unique in source")
                });
            merge_trees(&[prev, nodes_only]).expect("no edges added beyond an acyclic tree")
        }
        Err(e) => unreachable!("merging two trees: {e}"),
    };
    let mut merged = merged;
    merged.owner = Owner::Agent(agent_id);
    merged.round = round;
    merged
}

/// Reasoning, tree extraction, calibration and lock carry-over for one
/// agent in one round.
pub fn respond(
    session: &mut Session<'_>,
    agent_id: u32,
    input: &ReasonInput<'_>,
    previous_tree: Option<&LogicalTree>,
) -> Result<AgentReply, AgentError> {
    let mut reply = reason_once(session, agent_id, input)?;
    let extracted = extract_tree(session, agent_id, input.round, &reply.raw_text)?;
    reply.steps = extracted.steps;
    let fresh = calibrate(session, agent_id, input.round, extracted.tree)?;
    let tree = carry_locks(previous_tree, fresh, agent_id, input.round);
    reply.tree = (!tree.is_empty()).then_some(tree);
    Ok(reply)
}
