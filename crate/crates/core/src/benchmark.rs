//! Dataset loading and the repeated, shuffled evaluation protocol.
//!
//! Items carry exactly four fields: question, options, answer, answer_idx.
//! Anything else in an input record is ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;
use std::{fs, io};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backends::Backend;
use crate::discussion::{run_question, write_transcript, Aggregator, DiscussionConfig};
use crate::question::Question;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub question: String,
    pub options: Vec<(char, String)>,
    pub answer: char,
    /// Zero-based position of `answer` in `options`.
    pub answer_idx: usize,
}

impl BenchmarkItem {
    pub fn to_question(&self) -> Question {
        Question {
            id: self.id.clone(),
            text: self.question.clone(),
            options: self.options.clone(),
        }
    }
}

/// Exact-match scoring; letters compare case-insensitively and an
/// abstention is wrong.
pub fn score(predicted: Option<char>, item: &BenchmarkItem) -> bool {
    predicted.is_some_and(|p| p.to_ascii_uppercase() == item.answer)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetFormat {
    MirageJsonl,
    GenericCsv,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mirage-jsonl" | "jsonl" => Ok(DatasetFormat::MirageJsonl),
            "generic-csv" | "csv" => Ok(DatasetFormat::GenericCsv),
            other => Err(format!("unknown dataset format `{other}` (mirage-jsonl, generic-csv)")),
        }
    }
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DatasetFormat::GenericCsv,
            _ => DatasetFormat::MirageJsonl,
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("dataset file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("all {0} record(s) are malformed")]
    AllLinesMalformed(usize),
    #[error("reading dataset: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub items: Vec<BenchmarkItem>,
    pub errors: Vec<LineError>,
}

/// Published sizes of the datasets this harness targets.
pub const KNOWN_DATASETS: &[(&str, usize)] = &[
    ("mmlu-med", 1089),
    ("medqa-us", 1273),
    ("bioasq-y/n", 618),
    ("medddx-basic", 245),
    ("medddx-intermediate", 1041),
    ("medddx-expert", 483),
    ("medxpertqa-sample", 60),
];

pub fn known_size(name: &str) -> Option<usize> {
    let key = name.to_ascii_lowercase();
    KNOWN_DATASETS.iter().find(|(n, _)| *n == key).map(|(_, s)| *s)
}

/// Raw fields of one record before validation.
struct RawItem {
    question: Option<String>,
    options: Option<Value>,
    answer: Option<Value>,
    answer_idx: Option<Value>,
}

fn build_item(id: String, raw: RawItem) -> Result<BenchmarkItem, String> {
    let question = raw
        .question
        .filter(|q| !q.trim().is_empty())
        .ok_or("missing question")?;
    let mut options = match raw.options {
        None | Some(Value::Null) => Vec::new(),
        Some(v) => parse_options(&v)?,
    };
    let answer = raw.answer.ok_or("missing answer")?;
    let answer_idx = raw.answer_idx.ok_or("missing answer_idx")?;
    let answer_text = match &answer {
        Value::String(s) => s.trim().to_string(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => if *b { "yes" } else { "no" }.to_string(),
        _ => return Err("answer must be a string".into()),
    };
    let yes_no = matches!(answer_text.to_ascii_lowercase().as_str(), "yes" | "no");
    if options.is_empty() {
        if !yes_no {
            return Err("missing options".into());
        }
        options = vec![('A', "yes".into()), ('B', "no".into())];
    }
    let letter_of = |text: &str| -> Option<char> {
        let t = text.trim();
        if t.len() == 1 {
            let c = t.chars().next()?.to_ascii_uppercase();
            if options.iter().any(|(l, _)| *l == c) {
                return Some(c);
            }
        }
        options
            .iter()
            .find(|(_, o)| o.trim().eq_ignore_ascii_case(t))
            .map(|(l, _)| *l)
    };
    let letter = letter_of(&answer_text)
        .ok_or_else(|| format!("answer `{answer_text}` is not one of the options"))?;
    let idx = match &answer_idx {
        Value::Number(n) => n
            .as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| format!("bad answer_idx {n}"))?,
        Value::String(s) => match s.trim().parse::<usize>() {
            Ok(n) => n,
            Err(_) => letter_of(s)
                .and_then(|l| options.iter().position(|(o, _)| *o == l))
                .ok_or_else(|| format!("bad answer_idx `{s}`"))?,
        },
        _ => return Err("bad answer_idx".into()),
    };
    if options.get(idx).map(|(l, _)| *l) != Some(letter) {
        return Err(format!("answer_idx {idx} does not point at answer {letter}"));
    }
    Ok(BenchmarkItem { id, question, options, answer: letter, answer_idx: idx })
}

fn parse_options(v: &Value) -> Result<Vec<(char, String)>, String> {
    let text = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err("option values must be strings".to_string()),
    };
    match v {
        Value::Object(map) => {
            let mut opts = Vec::new();
            for (k, v) in map {
                let mut chars = k.trim().chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if c.is_ascii_alphabetic() => opts.push((c.to_ascii_uppercase(), text(v)?)),
                    _ => return Err(format!("option key `{k}` is not a letter")),
                }
            }
            opts.sort_by_key(|(l, _)| *l);
            Ok(opts)
        }
        Value::Array(list) => list
            .iter()
            .zip('A'..='Z')
            .map(|(v, l)| text(v).map(|t| (l, t)))
            .collect(),
        Value::String(s) => parse_option_cell(s),
        _ => Err("options must be an object, a list or a string".into()),
    }
}

/// CSV option cell: JSON, or `A: text | B: text`.
fn parse_option_cell(cell: &str) -> Result<Vec<(char, String)>, String> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(Vec::new());
    }
    if cell.starts_with('{') || cell.starts_with('[') {
        let v: Value = serde_json::from_str(cell).map_err(|e| format!("options: {e}"))?;
        return parse_options(&v);
    }
    cell.split('|')
        .map(|part| {
            let (k, v) = part
                .split_once(':')
                .ok_or_else(|| format!("option `{}` lacks a `letter:` prefix", part.trim()))?;
            let k = k.trim();
            let mut chars = k.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if c.is_ascii_alphabetic() => Ok((c.to_ascii_uppercase(), v.trim().to_string())),
                _ => Err(format!("option key `{k}` is not a letter")),
            }
        })
        .collect()
}

pub fn parse_jsonl(text: &str, prefix: &str) -> LoadReport {
    let mut items = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Value>(line)
            .map_err(|e| format!("invalid JSON: {e}"))
            .and_then(|v| {
                let obj = v.as_object().ok_or("record is not an object")?;
                let raw = RawItem {
                    question: obj.get("question").and_then(Value::as_str).map(str::to_string),
                    options: obj.get("options").cloned(),
                    answer: obj.get("answer").cloned(),
                    answer_idx: obj.get("answer_idx").cloned(),
                };
                build_item(format!("{prefix}-{line_no:05}"), raw)
            });
        match parsed {
            Ok(item) => items.push(item),
            Err(message) => errors.push(LineError { line: line_no, message }),
        }
    }
    LoadReport { items, errors }
}

pub fn parse_csv(text: &str, prefix: &str) -> Result<LoadReport, LoadError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| LoadError::Csv(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let (q, o, a, ai) = (col("question"), col("options"), col("answer"), col("answer_idx"));
    let mut items = Vec::new();
    let mut errors = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Header is line 1.
        let line_no = record
            .as_ref()
            .ok()
            .and_then(|r| r.position())
            .map_or(i + 2, |p| p.line() as usize);
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                errors.push(LineError { line: line_no, message: e.to_string() });
                continue;
            }
        };
        let get = |c: Option<usize>| c.and_then(|c| record.get(c)).map(str::to_string).filter(|s| !s.is_empty());
        let raw = RawItem {
            question: get(q),
            options: get(o).map(Value::String),
            answer: get(a).map(Value::String),
            answer_idx: get(ai).map(Value::String),
        };
        match build_item(format!("{prefix}-{line_no:05}"), raw) {
            Ok(item) => items.push(item),
            Err(message) => errors.push(LineError { line: line_no, message }),
        }
    }
    Ok(LoadReport { items, errors })
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<LoadReport, LoadError> {
    if !path.is_file() {
        return Err(LoadError::FileNotFound(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let prefix = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("item")
        .to_string();
    let report = match format {
        DatasetFormat::MirageJsonl => parse_jsonl(&text, &prefix),
        DatasetFormat::GenericCsv => parse_csv(&text, &prefix)?,
    };
    if report.items.is_empty() && !report.errors.is_empty() {
        return Err(LoadError::AllLinesMalformed(report.errors.len()));
    }
    Ok(report)
}

/// A reproducible random subset of `n` items, kept in file order.
pub fn sample(items: &[BenchmarkItem], n: usize, seed: u64) -> Vec<BenchmarkItem> {
    if n >= items.len() {
        return items.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, items.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i].clone()).collect()
}

/// Item order for one repetition.
pub fn shuffled(items: &[BenchmarkItem], seed: u64) -> Vec<BenchmarkItem> {
    let mut order = items.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub dataset: String,
    pub repetitions: u32,
    pub discussion: DiscussionConfig,
    /// Where per-question transcripts go, `<dir>/run-<r>/`; none when unset.
    pub transcripts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub repetition: u32,
    pub position: usize,
    pub item: String,
    pub predicted: Option<char>,
    pub gold: char,
    pub correct: bool,
    pub aborted: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Wall-clock seconds per component; retrieval and fine-tuning are always zero here.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSplit {
    pub premises: f64,
    pub discussion: f64,
    pub decision: f64,
    pub retrieval: f64,
    pub fine_tuning: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub n_items: usize,
    pub per_run: Vec<f64>,
    pub outcomes: Vec<ItemOutcome>,
    pub config: DiscussionConfig,
    pub timings: TimingSplit,
}

impl RunReport {
    pub fn mean(&self) -> f64 {
        crate::consensus::mean(&self.per_run)
    }

    /// Sample standard deviation over runs; 0 for a single run.
    pub fn std(&self) -> f64 {
        crate::consensus::variance(&self.per_run).map_or(0.0, f64::sqrt)
    }

    pub fn single_run(&self) -> bool {
        self.per_run.len() == 1
    }

    /// Item ids in evaluation order for one repetition.
    pub fn order(&self, repetition: u32) -> Vec<&str> {
        self.outcomes
            .iter()
            .filter(|o| o.repetition == repetition)
            .map(|o| o.item.as_str())
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset\tn_items\truns\tmean\tstd\tnote");
        let note = if self.single_run() { "single-run" } else { "" };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.3}\t{:.3}\t{note}",
            self.dataset,
            self.n_items,
            self.per_run.len(),
            self.mean(),
            self.std()
        );
        let _ = writeln!(out, "run\taccuracy");
        for (r, acc) in self.per_run.iter().enumerate() {
            let _ = writeln!(out, "{r}\t{acc:.4}");
        }
        let t = &self.timings;
        let _ = writeln!(out, "premises_s\tdiscussion_s\tdecision_s\tretrieval_s\tfine_tuning_s\ttotal_s");
        let _ = writeln!(
            out,
            "{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}",
            t.premises, t.discussion, t.decision, t.retrieval, t.fine_tuning, t.total
        );
        let _ = writeln!(out, "run\tposition\titem\tpredicted\tgold\tcorrect\taborted");
        for o in &self.outcomes {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                o.repetition,
                o.position,
                o.item,
                o.predicted.map_or("-".to_string(), String::from),
                o.gold,
                o.correct,
                o.aborted
            );
        }
        out
    }

    pub fn outcomes_jsonl(&self) -> String {
        self.outcomes
            .iter()
            .map(|o| serde_json::to_string(o).expect("outcome serializes") + "\n")
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error("no items to evaluate")]
    NoItems,
    #[error("{0}")]
    Config(String),
    #[error("writing transcripts: {0}")]
    Io(#[from] io::Error),
}

/// Runs every item once per repetition. Repetition `r` shuffles with seed
/// `base + r` and runs the discussion with the same seed. Aborted items
/// count as wrong.
pub fn run_eval(
    backend: &dyn Backend,
    items: &[BenchmarkItem],
    config: &EvalConfig,
    aggregator: &dyn Aggregator,
) -> Result<RunReport, EvalError> {
    if config.repetitions == 0 {
        return Err(EvalError::NoRepetitions);
    }
    if items.is_empty() {
        return Err(EvalError::NoItems);
    }
    config.discussion.validate().map_err(|e| EvalError::Config(e.to_string()))?;
    let started = Instant::now();
    let base = config.discussion.seed;
    let mut per_run = Vec::new();
    let mut outcomes = Vec::new();
    let mut timings = TimingSplit::default();
    for r in 0..config.repetitions {
        let seed = base.wrapping_add(r as u64);
        let discussion = DiscussionConfig { seed, ..config.discussion.clone() };
        let mut correct = 0usize;
        for (position, item) in shuffled(items, seed).into_iter().enumerate() {
            let outcome = run_question(backend, &item.to_question(), &discussion, aggregator);
            if let Some(dir) = &config.transcripts {
                write_transcript(&dir.join(format!("run-{r}")), &outcome.transcript)?;
            }
            timings.premises += outcome.timings.premises.as_secs_f64();
            timings.discussion += outcome.timings.discussion.as_secs_f64();
            timings.decision += outcome.timings.decision.as_secs_f64();
            let predicted = outcome.answer();
            let ok = score(predicted, &item);
            correct += ok as usize;
            outcomes.push(ItemOutcome {
                repetition: r,
                position,
                item: item.id.clone(),
                predicted,
                gold: item.answer,
                correct: ok,
                aborted: outcome.aborted(),
                error: outcome.error.map(|e| e.to_string()),
            });
        }
        per_run.push(correct as f64 / items.len() as f64);
    }
    timings.total = started.elapsed().as_secs_f64();
    Ok(RunReport {
        dataset: config.dataset.clone(),
        n_items: items.len(),
        per_run,
        outcomes,
        config: config.discussion.clone(),
        timings,
    })
}

/// Accuracy per repetition recomputed from item outcomes.
pub fn accuracy_by_run(outcomes: &[ItemOutcome]) -> BTreeMap<u32, f64> {
    let mut tally: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for o in outcomes {
        let e = tally.entry(o.repetition).or_default();
        e.0 += o.correct as usize;
        e.1 += 1;
    }
    tally.into_iter().map(|(r, (c, n))| (r, c as f64 / n as f64)).collect()
}
