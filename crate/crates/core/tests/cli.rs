use std::fs;
use std::path::Path;
use std::process::Command;

use triad::backends::ScriptedBackend;
use triad::cli::{parse_config_file, parse_question_file, run, BackendKind, Cli, Settings};
use triad::synthetic::{premise_entry, turn_entries, Vote};

use clap::Parser;

fn triad(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["triad"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

const QUESTION: &str = "Which medication is least likely to modulate dITP diphosphatase?\n\
A. Sodium citrate\n\
B. Citric acid\n\
C. Calcium citrate\n";

fn write_question(dir: &Path) -> String {
    let path = dir.join("citrate.txt");
    fs::write(&path, QUESTION).unwrap();
    path.to_string_lossy().into_owned()
}

fn write_script(dir: &Path) -> String {
    let q = parse_question_file("citrate", QUESTION).unwrap();
    let mut entries = vec![premise_entry(&q)];
    for round in 0..3 {
        for agent in 1..=3 {
            let vote = if round == 0 && agent == 3 { Vote::doubtful('B') } else { Vote::sure('A') };
            entries.extend(turn_entries(&q, agent, round, vote));
        }
    }
    let path = dir.join("script.txt");
    fs::write(&path, ScriptedBackend::new(entries).to_script_text()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn unknown_flag_is_a_usage_error_listing_flags() {
    let (code, _, err) = triad(&["ask", "--bogus"]);
    assert_eq!(code, 1);
    assert!(err.contains("--bogus"));
    assert!(err.contains("--n-agents"));
    let (code, _, _) = triad(&[]);
    assert_eq!(code, 1);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_triad");
    let status = Command::new(bin).arg("--nope").output().unwrap().status;
    assert_eq!(status.code(), Some(1));
    let out = Command::new(bin).args(["simulate", "--agents", "2", "--init", "0,2", "--rounds", "2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let missing = Command::new(bin).args(["export-tree", "--transcript", "/nonexistent/t.jsonl"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn simulate_prints_quartering_variance() {
    let (code, out, _) = triad(&["simulate", "--agents", "2", "--init", "0,2", "--alpha", "0.5", "--rounds", "3"]);
    assert_eq!(code, 0);
    let variances: Vec<f64> = out.lines().map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(variances, vec![2.0, 0.5, 0.125]);
    assert_eq!(out.lines().next().unwrap(), "0\t2\t0\t2");
}

#[test]
fn simulate_rejects_mismatched_init() {
    let (code, _, err) = triad(&["simulate", "--agents", "3", "--init", "0,2"]);
    assert_eq!(code, 1);
    assert!(err.contains("3 agents"));
}

#[test]
fn simulate_on_a_grid() {
    let (code, out, _) = triad(&["simulate", "--agents", "2", "--init", "0,2", "--grid", "0,1,2", "--rounds", "5"]);
    assert_eq!(code, 0);
    assert_eq!(out, "0\t2\t0\t2\n1\t0\t1\t1\n");
}

#[test]
fn ask_with_script_then_export_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let (q, s) = (write_question(dir.path()), write_script(dir.path()));
    let out_s = out_dir.to_string_lossy().into_owned();
    let (code, out, err) = triad(&[
        "--n-agents", "3", "--seed", "4", "--backend", "scripted", "--script", &s, "--out-dir", &out_s,
        "ask", "--question-file", &q,
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.starts_with("answer: A\n"), "{out}");
    assert!(out.contains("Decided by: Majority"));
    let tree_path = out_dir.join("trees").join("citrate.dot");
    assert!(out.contains(&format!("tree: {}", tree_path.display())));
    assert!(fs::read_to_string(&tree_path).unwrap().starts_with("digraph"));

    let transcript = out_dir.join("transcripts").join("citrate.jsonl");
    let t = transcript.to_string_lossy().into_owned();
    let (code, dot, _) = triad(&["export-tree", "--transcript", &t]);
    assert_eq!(code, 0);
    assert_eq!(dot, fs::read_to_string(&tree_path).unwrap());

    let (code, out, _) = triad(&["replay", "--transcript", &t]);
    assert_eq!(code, 0);
    assert!(out.contains("zero diff"));

    let tampered = fs::read_to_string(&transcript).unwrap().replace("\"rule\":\"majority\"", "\"rule\":\"lexicographic\"");
    let bad = dir.path().join("tampered.jsonl");
    fs::write(&bad, tampered).unwrap();
    let (code, _, err) = triad(&["replay", "--transcript", &bad.to_string_lossy()]);
    assert_eq!(code, 2);
    assert!(err.contains("differs"));
}

#[test]
fn recorded_cassette_replays_through_ask() {
    let dir = tempfile::tempdir().unwrap();
    let (q, s) = (write_question(dir.path()), write_script(dir.path()));
    let cas = dir.path().join("run.cassette").to_string_lossy().into_owned();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let common = ["--n-agents", "3", "--seed", "4"];
    let mut first = common.to_vec();
    let a_s = a.to_string_lossy().into_owned();
    first.extend(["--backend", "scripted", "--script", &s, "--record-cassette", &cas, "--out-dir", &a_s, "ask", "--question-file", &q]);
    assert_eq!(triad(&first).0, 0);
    let mut second = common.to_vec();
    let b_s = b.to_string_lossy().into_owned();
    second.extend(["--backend", "cassette", "--cassette", &cas, "--out-dir", &b_s, "ask", "--question-file", &q]);
    let (code, _, err) = triad(&second);
    assert_eq!(code, 0, "{err}");
    let name = Path::new("transcripts").join("citrate.jsonl");
    assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
}

#[test]
fn runtime_failure_names_the_question() {
    let dir = tempfile::tempdir().unwrap();
    let q = write_question(dir.path());
    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "").unwrap();
    let out_s = dir.path().join("out").to_string_lossy().into_owned();
    let (code, _, err) = triad(&[
        "--n-agents", "3", "--backend", "scripted", "--script", &empty.to_string_lossy(), "--out-dir", &out_s,
        "ask", "--question-file", &q,
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("question citrate"), "{err}");
    assert!(err.contains("agent"), "{err}");
}

#[test]
fn invalid_override_stops_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let q = write_question(dir.path());
    let out_dir = dir.path().join("out");
    let (code, _, err) = triad(&["--n-agents", "1", "--out-dir", &out_dir.to_string_lossy(), "ask", "--question-file", &q]);
    assert_eq!(code, 1);
    assert!(err.contains("n_agents"));
    assert!(!out_dir.exists());
}

#[test]
fn flags_override_file_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("triad.conf");
    fs::write(&cfg, "# run settings\nn_agents = 5\nmax_rounds=2\nbackend = scripted\nmodel = small\n").unwrap();
    let cfg_s = cfg.to_string_lossy().into_owned();
    let cli = Cli::try_parse_from(["triad", "--config", &cfg_s, "--n-agents", "4", "simulate", "--agents", "2", "--init", "0,1"]).unwrap();
    let s = Settings::resolve(&cli).unwrap();
    assert_eq!(s.discussion.n_agents, 4);
    assert_eq!(s.discussion.max_rounds, 2);
    assert_eq!(s.discussion.temperature, 0.7);
    assert_eq!(s.backend, BackendKind::Scripted);
    assert_eq!(s.http.model, "small");

    assert!(parse_config_file("n_agents 3").is_err());
    fs::write(&cfg, "api_key = sk-123\n").unwrap();
    assert!(Settings::resolve(&cli).is_err());
}

#[test]
fn question_file_format() {
    let q = parse_question_file("x", "Line one\nline two\n\nA) first\nB. second\n").unwrap();
    assert_eq!(q.text, "Line one\nline two");
    assert_eq!(q.letters(), vec!['A', 'B']);
    assert!(parse_question_file("x", "Text\nB. out of order\n").is_err());
    assert!(parse_question_file("x", "A. only options\n").is_err());
    assert!(parse_question_file("x", "What explains it?\n").unwrap().is_open());
}

#[test]
fn bench_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tiny.jsonl");
    let lines = [
        r#"{"question":"First?","options":{"A":"x","B":"y"},"answer":"A","answer_idx":0}"#,
        r#"{"question":"Second?","options":{"A":"x","B":"y"},"answer":"y","answer_idx":1}"#,
        r#"not json"#,
    ];
    fs::write(&data, lines.join("\n")).unwrap();
    let out_dir = dir.path().join("out");
    let (code, out, err) = triad(&[
        "--n-agents", "2", "--max-rounds", "1", "--out-dir", &out_dir.to_string_lossy(),
        "bench", "--dataset", &data.to_string_lossy(), "--repetitions", "2",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("skipped"));
    assert!(out.contains("tiny: mean 1.000 std 0.000 over 2 run(s) of 2 items"), "{out}");
    let tsv = fs::read_to_string(out_dir.join("reports").join("tiny.tsv")).unwrap();
    assert!(tsv.starts_with("dataset\tn_items\truns\tmean\tstd"));
    let outcomes = fs::read_to_string(out_dir.join("reports").join("tiny.outcomes.jsonl")).unwrap();
    assert_eq!(outcomes.lines().count(), 4);
    assert!(out_dir.join("transcripts").join("tiny").join("run-1").is_dir());
}
