//! Command-line driver.
//!
//! Settings resolve in three layers: built-in defaults, then a flat
//! `key = value` config file, then flags. Exit codes are 0 on success, 1 on
//! usage or configuration errors, 2 on runtime errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

use crate::backends::{
    Backend, BackendConfig, CassetteBackend, CassetteEntry, HttpBackend, ScriptedBackend,
};
use crate::benchmark::{self, DatasetFormat, EvalConfig};
use crate::consensus::{
    run_continuous, run_discrete, ConsensusState, DiscreteSystem, OppositePairStep, UniformAlpha,
};
use crate::discussion::{
    parse_transcript, records_to_jsonl, run_question, write_transcript, DiscussionConfig,
    ModalVote, Record,
};
use crate::logic_tree::{LogicalTree, Owner};
use crate::question::Question;
use crate::synthetic::SyntheticBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    /// Replies from a script file (`--script`).
    Scripted,
    /// Built-in grammar-conforming replies; no model involved.
    Synthetic,
    /// Chat-completion endpoint (`endpoint`, `model` in the config file).
    Http,
    /// Replays a recorded cassette (`--cassette`).
    Cassette,
}

#[derive(Debug, Parser)]
#[command(name = "triad", version, about = "Multi-agent syllogistic reasoning over multiple-choice questions")]
pub struct Cli {
    /// Flat key=value config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub n_agents: Option<u32>,
    #[arg(long, global = true)]
    pub max_rounds: Option<u32>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// Script file for the scripted backend.
    #[arg(long, global = true)]
    pub script: Option<PathBuf>,
    /// Cassette file for the cassette backend.
    #[arg(long, global = true)]
    pub cassette: Option<PathBuf>,
    /// Record every backend exchange to this cassette file.
    #[arg(long, global = true)]
    pub record_cassette: Option<PathBuf>,
    /// Root for `transcripts/`, `reports/` and `trees/`.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Answer one question.
    Ask {
        /// Question text, then option lines such as `A. text`.
        #[arg(long)]
        question_file: PathBuf,
        /// Question id; defaults to the file stem.
        #[arg(long)]
        id: Option<String>,
    },
    /// Run a dataset several times and write a report.
    Bench {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        format: Option<DatasetFormat>,
        #[arg(long)]
        repetitions: Option<u32>,
        /// Evaluate a seeded random subset of this size.
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Print a correction trajectory as `round variance c_1 .. c_N` lines.
    Simulate {
        #[arg(long)]
        agents: usize,
        /// Comma-separated starting conclusions, one per agent.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        init: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Number of trajectory rows, the starting state included.
        #[arg(long, default_value_t = 20)]
        rounds: u32,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        /// Comma-separated grid values; switches to the finite-state rule.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        grid: Vec<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a transcript's merged tree as a Graphviz document.
    ExportTree {
        #[arg(long)]
        transcript: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-run a transcript from its recorded replies and diff the result.
    Replay {
        #[arg(long)]
        transcript: PathBuf,
    },
}

/// Resolved settings after defaults, file and flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub discussion: DiscussionConfig,
    pub backend: BackendKind,
    pub http: BackendConfig,
    pub script: Option<PathBuf>,
    pub cassette: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub dataset: Option<PathBuf>,
    pub repetitions: u32,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            discussion: DiscussionConfig::default(),
            backend: BackendKind::Synthetic,
            http: BackendConfig::default(),
            script: None,
            cassette: None,
            out_dir: PathBuf::from("."),
            dataset: None,
            repetitions: 3,
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("config key {key}: cannot parse `{value}`"))
}

impl Settings {
    pub fn apply_file(&mut self, entries: &BTreeMap<String, String>) -> Result<(), String> {
        for (k, v) in entries {
            let d = &mut self.discussion;
            match k.as_str() {
                "n_agents" => d.n_agents = parse_value(k, v)?,
                "max_rounds" => d.max_rounds = parse_value(k, v)?,
                "temperature" => d.temperature = parse_value(k, v)?,
                "seed" => d.seed = parse_value(k, v)?,
                "parse_retries" => d.parse_retries = parse_value(k, v)?,
                "max_in_flight" => d.max_in_flight = parse_value(k, v)?,
                "max_tokens" => d.max_tokens = parse_value(k, v)?,
                "backend" => {
                    self.backend = BackendKind::from_str(v, true).map_err(|_| format!("config key backend: unknown `{v}`"))?
                }
                "endpoint" => self.http.endpoint = v.clone(),
                "model" => self.http.model = v.clone(),
                "api_key_env" => self.http.api_key_env = Some(v.clone()).filter(|s| !s.is_empty()),
                "timeout_secs" => self.http.timeout_secs = parse_value(k, v)?,
                "max_retries" => self.http.max_retries = parse_value(k, v)?,
                "script" => self.script = Some(PathBuf::from(v)),
                "cassette" => self.cassette = Some(PathBuf::from(v)),
                "out_dir" => self.out_dir = PathBuf::from(v),
                "dataset" => self.dataset = Some(PathBuf::from(v)),
                "repetitions" => self.repetitions = parse_value(k, v)?,
                "api_key" => return Err("api keys are read from the environment only".into()),
                _ => return Err(format!("unknown config key `{k}`")),
            }
        }
        Ok(())
    }

    pub fn apply_flags(&mut self, cli: &Cli) {
        let d = &mut self.discussion;
        if let Some(v) = cli.n_agents {
            d.n_agents = v;
        }
        if let Some(v) = cli.max_rounds {
            d.max_rounds = v;
        }
        if let Some(v) = cli.temperature {
            d.temperature = v;
        }
        if let Some(v) = cli.seed {
            d.seed = v;
        }
        if let Some(v) = cli.backend {
            self.backend = v;
        }
        if let Some(v) = &cli.script {
            self.script = Some(v.clone());
        }
        if let Some(v) = &cli.cassette {
            self.cassette = Some(v.clone());
        }
        if let Some(v) = &cli.out_dir {
            self.out_dir = v.clone();
        }
        self.http.max_in_flight = self.discussion.max_in_flight;
    }

    pub fn resolve(cli: &Cli) -> Result<Self, String> {
        let mut s = Self::default();
        if let Some(path) = &cli.config {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            s.apply_file(&parse_config_file(&text)?)?;
        }
        s.apply_flags(cli);
        s.discussion.validate().map_err(|e| e.to_string())?;
        Ok(s)
    }
}

/// Reads a question file: text lines up to the first option line, then
/// options written `A. text` or `A) text`.
pub fn parse_question_file(id: &str, text: &str) -> Result<Question, String> {
    let mut stem = Vec::new();
    let mut options = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        let mut chars = t.chars();
        let option = match (chars.next(), chars.next()) {
            (Some(l), Some('.' | ')')) if l.is_ascii_uppercase() => Some(chars.as_str().trim()),
            _ => None,
        };
        match option {
            Some(o) => {
                let expected = (b'A' + options.len() as u8) as char;
                if !t.starts_with(expected) {
                    return Err(format!("option `{t}` out of order, expected {expected}"));
                }
                options.push(o.to_string());
            }
            None if options.is_empty() => stem.push(t),
            None if t.is_empty() => {}
            None => return Err(format!("text after the options: `{t}`")),
        }
    }
    let body = stem.join("\n").trim().to_string();
    if body.is_empty() {
        return Err("question file has no question text".into());
    }
    Ok(Question::new(id, body).with_options(options))
}

enum Failure {
    Usage(String),
    Runtime(String),
}

type Outcome = Result<(), Failure>;

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn build_backend(settings: &Settings, known: Vec<(Question, char)>) -> Result<Box<dyn Backend>, Failure> {
    Ok(match settings.backend {
        BackendKind::Scripted => {
            let path = settings
                .script
                .as_ref()
                .ok_or_else(|| Failure::Usage("--backend scripted needs --script".into()))?;
            let text = fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            Box::new(ScriptedBackend::parse(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))?)
        }
        BackendKind::Synthetic => Box::new(SyntheticBackend::unanimous(known)),
        BackendKind::Http => {
            settings.http.validate().map_err(Failure::Usage)?;
            Box::new(HttpBackend::new(settings.http.clone()).map_err(runtime)?)
        }
        BackendKind::Cassette => {
            let path = settings
                .cassette
                .as_ref()
                .ok_or_else(|| Failure::Usage("--backend cassette needs --cassette".into()))?;
            Box::new(CassetteBackend::load(path).map_err(runtime)?)
        }
    })
}

/// Runs `f` against the backend, recording traffic to `record` when set.
fn with_backend<T>(
    backend: Box<dyn Backend>,
    record: Option<&Path>,
    f: impl FnOnce(&dyn Backend) -> T,
) -> Result<T, Failure> {
    match record {
        None => Ok(f(backend.as_ref())),
        Some(path) => {
            let rec = CassetteBackend::record(backend);
            let out = f(&rec);
            rec.save(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            Ok(out)
        }
    }
}

fn ask(cli: &Cli, settings: &Settings, file: &Path, id: Option<&str>, out: &mut dyn Write) -> Outcome {
    let text = fs::read_to_string(file).map_err(|e| runtime(format!("{}: {e}", file.display())))?;
    let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "question".into());
    let q = parse_question_file(id.unwrap_or(&stem), &text).map_err(|e| Failure::Usage(format!("{}: {e}", file.display())))?;
    let backend = build_backend(settings, vec![(q.clone(), 'A')])?;
    let outcome = with_backend(backend, cli.record_cassette.as_deref(), |b| {
        run_question(b, &q, &settings.discussion, &ModalVote)
    })?;
    let transcript_path =
        write_transcript(&settings.out_dir.join("transcripts"), &outcome.transcript).map_err(runtime)?;
    if let Some(e) = &outcome.error {
        return Err(Failure::Runtime(format!(
            "question {}: {e} (transcript {})",
            q.id,
            transcript_path.display()
        )));
    }
    let decision = outcome.transcript.decision.as_ref().ok_or_else(|| runtime("no decision"))?;
    let tree = outcome.transcript.merged.clone().unwrap_or_else(|| LogicalTree::new(Owner::Merged, 0));
    let trees = settings.out_dir.join("trees");
    fs::create_dir_all(&trees).map_err(runtime)?;
    let tree_path = trees.join(format!("{}.dot", file_stem_of(&transcript_path)));
    fs::write(&tree_path, tree.to_graph_description()).map_err(runtime)?;
    let _ = writeln!(out, "answer: {}", decision.answer);
    let _ = write!(out, "{}", decision.explanation);
    let _ = writeln!(out, "tree: {}", tree_path.display());
    let _ = writeln!(out, "transcript: {}", transcript_path.display());
    Ok(())
}

fn file_stem_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn bench(
    cli: &Cli,
    settings: &Settings,
    format: Option<DatasetFormat>,
    repetitions: Option<u32>,
    sample: Option<usize>,
    out: &mut dyn Write,
) -> Outcome {
    let path = settings.dataset.as_ref().ok_or_else(|| Failure::Usage("bench needs --dataset".into()))?;
    let format = format.unwrap_or_else(|| DatasetFormat::from_path(path));
    let report = benchmark::load_dataset(path, format).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    for err in &report.errors {
        let _ = writeln!(out, "skipped {}:{}: {}", path.display(), err.line, err.message);
    }
    let mut items = report.items;
    if let Some(n) = sample {
        items = benchmark::sample(&items, n, settings.discussion.seed);
    }
    let name = file_stem_of(path);
    let config = EvalConfig {
        dataset: name.clone(),
        repetitions: repetitions.unwrap_or(settings.repetitions),
        discussion: settings.discussion.clone(),
        transcripts: Some(settings.out_dir.join("transcripts").join(&name)),
    };
    let known = items.iter().map(|i| (i.to_question(), i.answer)).collect();
    let backend = build_backend(settings, known)?;
    let run = with_backend(backend, cli.record_cassette.as_deref(), |b| {
        benchmark::run_eval(b, &items, &config, &ModalVote)
    })?
    .map_err(runtime)?;
    let reports = settings.out_dir.join("reports");
    fs::create_dir_all(&reports).map_err(runtime)?;
    let tsv = reports.join(format!("{name}.tsv"));
    fs::write(&tsv, run.to_tsv()).map_err(runtime)?;
    fs::write(reports.join(format!("{name}.outcomes.jsonl")), run.outcomes_jsonl()).map_err(runtime)?;
    let _ = writeln!(
        out,
        "{name}: mean {:.3} std {:.3} over {} run(s) of {} items",
        run.mean(),
        run.std(),
        run.per_run.len(),
        run.n_items
    );
    let _ = writeln!(out, "report: {}", tsv.display());
    Ok(())
}

struct SimulateArgs<'a> {
    agents: usize,
    init: &'a [f64],
    alpha: f64,
    rounds: u32,
    tol: f64,
    grid: &'a [f64],
}

fn simulate(a: SimulateArgs<'_>) -> Result<String, Failure> {
    if a.init.len() != a.agents {
        return Err(Failure::Usage(format!("--init has {} values for {} agents", a.init.len(), a.agents)));
    }
    if a.rounds == 0 {
        return Err(Failure::Usage("--rounds must be at least 1".into()));
    }
    let usage = |e: crate::consensus::ConsensusError| Failure::Usage(e.to_string());
    if !a.grid.is_empty() {
        let system = DiscreteSystem::from_grid(a.grid).map_err(usage)?;
        let ids: Vec<String> = a.init.iter().map(|v| format!("{v}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let outcome = run_discrete(&system, &refs, &OppositePairStep, a.rounds - 1).map_err(usage)?;
        let mut table = String::new();
        for step in &outcome.trajectory {
            let mut cells = vec![step.round.to_string(), step.variance.to_string()];
            cells.extend(step.values.iter().map(|v| v.to_string()));
            table.push_str(&cells.join("\t"));
            table.push('\n');
        }
        return Ok(table);
    }
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(Failure::Usage(format!("--alpha must lie in [0, 1], got {}", a.alpha)));
    }
    let state = ConsensusState::new(a.init.to_vec()).map_err(usage)?;
    let mut trajectory = run_continuous(state, &UniformAlpha(a.alpha), a.tol, (a.rounds - 1).max(1)).map_err(usage)?;
    trajectory.steps.truncate(a.rounds as usize);
    Ok(trajectory.to_table())
}

fn load_records(path: &Path) -> Result<Vec<Record>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    parse_transcript(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn export_tree(path: &Path) -> Result<String, Failure> {
    let records = load_records(path)?;
    let tree = records
        .iter()
        .find_map(|r| match r {
            Record::Decision { tree, .. } => Some(tree.clone()),
            _ => None,
        })
        .ok_or_else(|| runtime(format!("{}: transcript has no decision", path.display())))?;
    let tree = LogicalTree::parse_records(&tree, Owner::Merged, 0).map_err(runtime)?;
    Ok(tree.to_graph_description())
}

/// Cassette entries from a transcript's call records. Calls that failed
/// carry no response and cannot be replayed.
pub fn cassette_from_records(records: &[Record]) -> Vec<CassetteEntry> {
    records
        .iter()
        .filter_map(|r| match r {
            Record::Call { call, .. } => call.response.as_ref().map(|resp| CassetteEntry {
                digest: call.digest.clone(),
                request: None,
                response: resp.clone(),
            }),
            _ => None,
        })
        .collect()
}

/// Re-runs a transcript against its own recorded replies. Returns the
/// differing lines as `(line, expected, actual)`.
pub fn replay_records(records: &[Record]) -> Result<Vec<(usize, String, String)>, String> {
    let (question, config) = records
        .iter()
        .find_map(|r| match r {
            Record::Question { question, config } => Some((question.clone(), config.clone())),
            _ => None,
        })
        .ok_or("transcript has no question record")?;
    let cassette = CassetteBackend::replay(cassette_from_records(records));
    let outcome = run_question(&cassette, &question, &config, &ModalVote);
    let expected = records_to_jsonl(records);
    let actual = outcome.transcript.to_jsonl();
    let (e, a): (Vec<&str>, Vec<&str>) = (expected.lines().collect(), actual.lines().collect());
    let mut diffs = Vec::new();
    for i in 0..e.len().max(a.len()) {
        let (x, y) = (e.get(i).copied().unwrap_or(""), a.get(i).copied().unwrap_or(""));
        if x != y {
            diffs.push((i + 1, x.to_string(), y.to_string()));
        }
    }
    Ok(diffs)
}

fn replay(path: &Path, out: &mut dyn Write) -> Outcome {
    let records = load_records(path)?;
    let diffs = replay_records(&records).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    if diffs.is_empty() {
        let _ = writeln!(out, "replay of {}: zero diff", path.display());
        return Ok(());
    }
    for (line, e, a) in diffs.iter().take(5) {
        let _ = writeln!(out, "line {line}\n- {e}\n+ {a}");
    }
    Err(Failure::Runtime(format!("replay of {} differs on {} line(s)", path.display(), diffs.len())))
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Outcome {
    let mut settings = Settings::resolve(cli).map_err(Failure::Usage)?;
    match &cli.command {
        Command::Ask { question_file, id } => ask(cli, &settings, question_file, id.as_deref(), out),
        Command::Bench { dataset, format, repetitions, sample } => {
            if let Some(d) = dataset {
                settings.dataset = Some(d.clone());
            }
            bench(cli, &settings, *format, *repetitions, *sample, out)
        }
        Command::Simulate { agents, init, alpha, rounds, tol, grid, output } => {
            let table = simulate(SimulateArgs { agents: *agents, init, alpha: *alpha, rounds: *rounds, tol: *tol, grid })?;
            match output {
                Some(path) => fs::write(path, &table).map_err(|e| runtime(format!("{}: {e}", path.display()))),
                None => {
                    let _ = out.write_all(table.as_bytes());
                    Ok(())
                }
            }
        }
        Command::ExportTree { transcript, output } => {
            let dot = export_tree(transcript)?;
            match output {
                Some(path) => fs::write(path, &dot).map_err(|e| runtime(format!("{}: {e}", path.display()))),
                None => {
                    let _ = out.write_all(dot.as_bytes());
                    Ok(())
                }
            }
        }
        Command::Replay { transcript } => replay(transcript, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{e}");
            return 0;
        }
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            let _ = write!(err, "\n{}", Cli::command().render_help());
            return 1;
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            1
        }
        Err(Failure::Runtime(m)) => {
            let _ = writeln!(err, "error: {m}");
            2
        }
    }
}
