//! Grammar-conforming model replies for offline runs and tests.
//!
//! [`SyntheticBackend`] answers every template from a vote function, so a
//! whole discussion can run without a model. The static helpers build the
//! same replies as script entries for fixtures that pin each turn.

use std::collections::HashMap;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use crate::agents::derive_seed;
use crate::backends::{Backend, BackendError, CompletionRequest, Matcher, RequestTag, ScriptEntry};
use crate::prompt_kit::{Tag, TemplateId};
use crate::question::Question;

/// Word that makes the synthetic calibrator score a row Low.
pub const DOUBT_MARKER: &str = "unverified";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vote {
    pub letter: char,
    /// The reasoning carries a weak, flawed step that calibration will flag.
    pub doubtful: bool,
}

impl Vote {
    pub fn sure(letter: char) -> Self {
        Self { letter, doubtful: false }
    }

    pub fn doubtful(letter: char) -> Self {
        Self { letter, doubtful: true }
    }
}

fn option_text(q: &Question, letter: char) -> String {
    q.option_text(letter).unwrap_or("an unlisted option").to_string()
}

fn key_finding(q: &Question) -> String {
    format!("key finding of {}", q.id)
}

pub fn premise_reply(q: &Question) -> String {
    let mut out = String::from("<MajorPremises>\n");
    for (_, text) in &q.options {
        out.push_str(&format!("- \u{201c}{text} has a known clinical profile.\u{201d}\n"));
    }
    out.push_str("</MajorPremises>\n\n<MinorPremises>\n");
    out.push_str(&format!("- \u{201c}The question asks: {}\u{201d}\n", q.text));
    out.push_str("</MinorPremises>\n");
    out
}

pub fn hypotheses_reply(q: &Question) -> String {
    format!(
        "<Hypotheses>\n- First candidate for {id}\n- Second candidate for {id}\n</Hypotheses>\n",
        id = q.id
    )
}

/// Structured reasoning ending in an answer tag. Round 0 uses the
/// elimination tag, later rounds the answer tag.
pub fn reasoning_reply(q: &Question, vote: Vote, round: u32) -> String {
    let text = option_text(q, vote.letter);
    let tag = if round == 0 { Tag::Eliminate } else { Tag::Answer };
    let doubt = if vote.doubtful { format!(" ({DOUBT_MARKER})") } else { String::new() };
    format!(
        "Step 1: Information Extraction\n\
         - Information 1: {question}\n\
         Step 2: Background Knowledge\n\
         - Knowledge 1: {text} is the best supported choice{doubt}.\n\
         Step 3: Reasoning Process (Subject-Predicate-Object format)\n\
         Reasoning Step 1:\n\
         - Subject: the question\n\
         - Predicate (relation): reveals\n\
         - Object: {key}\n\
         - Explanation: read from the stem\n\
         Reasoning Step 2:\n\
         - Subject: {key}\n\
         - Predicate (relation): supports\n\
         - Object: {text}\n\
         - Explanation: matches the findings{doubt}\n\
         <{t}>Answer: {letter}</{t}>\n\
         Reason: The key finding points to {text}{doubt}.\n",
        question = q.text,
        key = key_finding(q),
        t = tag.as_str(),
        letter = vote.letter,
    )
}

/// Two-step logic-check table for a reasoning reply.
pub fn logic_check_reply(q: &Question, vote: Vote) -> String {
    let text = option_text(q, vote.letter);
    let key = key_finding(q);
    let (strength, error, kind, fix, doubt) = if vote.doubtful {
        ("Weak", "Yes", "Factual", "Check the finding against the other options", format!(" ({DOUBT_MARKER})"))
    } else {
        ("Strong", "No", "", "", String::new())
    };
    format!(
        "Step\tSubject\tObject\tLogical Relationship\tReasoning Text\tCredibility\tError (Yes/No)\tError Type\tSuggested Correction\n\
         1\tthe question\t{key}\tinformation\tThe question states {key}\tStrong\tNo\t\t\n\
         2\t{key}\t{text}\tsupports\tThe key finding points to {text}{doubt}\t{strength}\t{error}\t{kind}\t{fix}\n"
    )
}

static CAL_ROW: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^(\d+)\t(.*)$").expect("valid regex"));

/// Credibility table for the rows listed in a calibration prompt: Low when
/// the row carries [`DOUBT_MARKER`], High otherwise.
pub fn credibility_reply(user_text: &str) -> String {
    let mut out = String::from("Index\tMajorPremise\tMinorPremise\tConclusion\tCredibility\n");
    let rows = user_text
        .split_once("Index\tSyllogism\n")
        .map(|(_, rest)| rest.split("\n\n").next().unwrap_or(""))
        .unwrap_or("");
    for caps in CAL_ROW.captures_iter(rows) {
        let cred = if caps[2].contains(DOUBT_MARKER) { "Low" } else { "High" };
        out.push_str(&format!("{}\t-\t-\t-\t{cred}\n", &caps[1]));
    }
    out
}

/// Script entries for one agent turn: reasoning, logic check, calibration.
pub fn turn_entries(q: &Question, agent: u32, round: u32, vote: Vote) -> Vec<ScriptEntry> {
    let m = || Matcher::any().question(q.id.clone()).agent(agent).round(round);
    let cal_rows = if vote.doubtful {
        "1\t-\t-\t-\tHigh\n2\t-\t-\t-\tLow\n".to_string()
    } else {
        "1\t-\t-\t-\tHigh\n2\t-\t-\t-\tHigh\n".to_string()
    };
    let reason_template = if round == 0 { TemplateId::Decompose } else { TemplateId::EliminateRebuttal };
    vec![
        ScriptEntry::once(m().template(reason_template), reasoning_reply(q, vote, round)),
        ScriptEntry::once(m().template(TemplateId::LogicCheckTsv), logic_check_reply(q, vote)),
        ScriptEntry::once(
            m().template(TemplateId::CredibilityTsv),
            format!("Index\tMajorPremise\tMinorPremise\tConclusion\tCredibility\n{cal_rows}"),
        ),
    ]
}

pub fn premise_entry(q: &Question) -> ScriptEntry {
    ScriptEntry::once(
        Matcher::any().question(q.id.clone()).agent(0).template(TemplateId::PremiseExtract),
        premise_reply(q),
    )
}

/// Recovers the configured seed from a first-attempt request.
pub fn base_seed(request: &CompletionRequest) -> Option<u64> {
    let tag = &request.tag;
    request
        .seed
        .map(|s| s ^ derive_seed(0, tag.agent, tag.round, tag.template, 0))
}

type VoteFn = dyn Fn(&RequestTag, Option<u64>) -> Vote + Send + Sync;

/// Answers every template for the questions it knows, voting through a
/// caller-supplied function of the request tag and configured seed.
pub struct SyntheticBackend {
    questions: HashMap<String, Question>,
    vote: Box<VoteFn>,
}

impl SyntheticBackend {
    pub fn new<I, F>(questions: I, vote: F) -> Self
    where
        I: IntoIterator<Item = Question>,
        F: Fn(&RequestTag, Option<u64>) -> Vote + Send + Sync + 'static,
    {
        Self {
            questions: questions.into_iter().map(|q| (q.id.clone(), q)).collect(),
            vote: Box::new(vote),
        }
    }

    /// Every agent always picks the given letter per question.
    pub fn unanimous<I>(items: I) -> Self
    where
        I: IntoIterator<Item = (Question, char)>,
    {
        let items: Vec<(Question, char)> = items.into_iter().collect();
        let gold: HashMap<String, char> = items.iter().map(|(q, l)| (q.id.clone(), *l)).collect();
        Self::new(items.into_iter().map(|(q, _)| q), move |tag, _| {
            Vote::sure(gold.get(&tag.question).copied().unwrap_or('A'))
        })
    }
}

impl Backend for SyntheticBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let tag = &request.tag;
        let q = self
            .questions
            .get(&tag.question)
            .ok_or_else(|| BackendError::ScriptExhausted(tag.to_string()))?;
        let vote = || (self.vote)(tag, base_seed(request));
        Ok(match tag.template {
            TemplateId::PremiseExtract => premise_reply(q),
            TemplateId::OpenHypotheses => hypotheses_reply(q),
            TemplateId::Decompose | TemplateId::EliminateRebuttal | TemplateId::Revision => {
                reasoning_reply(q, vote(), tag.round)
            }
            TemplateId::LogicCheckTsv => logic_check_reply(q, vote()),
            TemplateId::CredibilityTsv => credibility_reply(&request.user_text),
        })
    }
}

const TOPICS: [&str; 8] = [
    "first-line treatment",
    "most likely diagnosis",
    "responsible enzyme",
    "expected lab finding",
    "next best step",
    "affected nerve",
    "causal organism",
    "mechanism of action",
];

/// `n` four-option questions with a gold letter each, reproducible from `seed`.
pub fn mcq_fixture(n: usize, seed: u64) -> Vec<(Question, char)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let topic = TOPICS[i % TOPICS.len()];
            let mut options: Vec<String> = (1..=4).map(|k| format!("Candidate {k} for case {i}")).collect();
            options.shuffle(&mut rng);
            let gold = ['A', 'B', 'C', 'D'][rng.gen_range(0..4)];
            let q = Question::new(format!("mcq-{i:03}"), format!("Case {i}: what is the {topic}?"))
                .with_options(options);
            (q, gold)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt_kit::{parse_premise_blocks, parse_tagged, parse_tsv, TsvSchema};

    fn q() -> Question {
        Question::new("s1", "Which fits?").with_options(["alpha", "beta"])
    }

    #[test]
    fn replies_follow_grammars() {
        let q = q();
        assert_eq!(parse_premise_blocks(&premise_reply(&q)).unwrap().majors.len(), 2);
        let a = parse_tagged(&reasoning_reply(&q, Vote::sure('B'), 0)).unwrap();
        assert_eq!((a.tag, a.letter()), (Tag::Eliminate, 'B'));
        let a = parse_tagged(&reasoning_reply(&q, Vote::sure('A'), 1)).unwrap();
        assert_eq!(a.tag, Tag::Answer);
        let t = parse_tsv(&logic_check_reply(&q, Vote::doubtful('A')), TsvSchema::LogicCheck9).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[1][6], "Yes");
    }

    #[test]
    fn credibility_follows_marker() {
        let user = format!("intro\n\nIndex\tSyllogism\n1\t(a) (b) -> (c)\n2\t(a) (b {DOUBT_MARKER}) -> (c)\n\nFor each node");
        let t = parse_tsv(&credibility_reply(&user), TsvSchema::Credibility5).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0][4], "High");
        assert_eq!(t.rows[1][4], "Low");
    }

    #[test]
    fn fixture_is_reproducible() {
        let a = mcq_fixture(5, 7);
        assert_eq!(a, mcq_fixture(5, 7));
        assert!(a.iter().all(|(q, g)| q.has_letter(*g)));
    }

    #[test]
    fn seed_recovery() {
        let req = CompletionRequest {
            system_text: String::new(),
            user_text: String::new(),
            temperature: 0.7,
            max_tokens: 1,
            seed: Some(derive_seed(41, 3, 2, TemplateId::LogicCheckTsv, 0)),
            tag: RequestTag { question: "q".into(), agent: 3, round: 2, template: TemplateId::LogicCheckTsv },
        };
        assert_eq!(base_seed(&req), Some(41));
    }
}
