//! Parsers for the three reply grammars: answer tags, TSV tables, premise blocks.
//!
//! Every parser is total: any input yields a value or a [`ParseError`].

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no <Eliminate> or <Answer> tag pair found")]
    NoTagFound,
    #[error("tag pair present but no option could be read from `{0}`")]
    MalformedTag(String),
    #[error("no {0} header line found")]
    HeaderNotFound(TsvSchema),
    #[error("{0} header found but no rows follow it")]
    EmptyTable(TsvSchema),
    #[error("missing block(s): {}", .0.join(", "))]
    BlockMissing(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    Eliminate,
    Answer,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Eliminate => "Eliminate",
            Tag::Answer => "Answer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedAnswer {
    pub tag: Tag,
    /// Uppercase option letter, or `yes` / `no`.
    pub option: String,
    pub reason: String,
}

impl TaggedAnswer {
    /// The option as a letter; `yes`/`no` map onto `A`/`B`.
    pub fn letter(&self) -> char {
        match self.option.as_str() {
            "yes" => 'A',
            "no" => 'B',
            other => other.chars().next().unwrap_or('?'),
        }
    }

    /// Tag rendered the way the model is asked to write it.
    pub fn to_tag_text(&self) -> String {
        let tag = self.tag.as_str();
        format!("<{tag}>Answer: {}</{tag}>", self.option)
    }
}

static OPEN_TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)<\s*(eliminate|answer)\s*>").expect("valid regex"));
static CLOSE_ELIMINATE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)<\s*/\s*eliminate\s*>").expect("valid regex"));
static CLOSE_ANSWER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)<\s*/\s*answer\s*>").expect("valid regex"));
static ANSWER_LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)answer\s*[:：]\s*[*_`]*\s*(?:option\s+)?([^\s<]+)").expect("valid regex")
});
static REASON_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^[\s*_.\-]*reason\s*[:：]\s*(.*)$").expect("valid regex"));

fn option_token(raw: &str) -> Option<String> {
    let token = raw.trim_matches(|c: char| !c.is_alphanumeric());
    if token.len() == 1 && token.chars().all(|c| c.is_ascii_alphabetic()) {
        return Some(token.to_ascii_uppercase());
    }
    match token.to_ascii_lowercase().as_str() {
        "yes" => Some("yes".to_string()),
        "no" => Some("no".to_string()),
        _ => None,
    }
}

fn reason_after(rest: &str) -> String {
    let mut lines = rest.lines();
    let first = lines.next().unwrap_or("");
    let strip = |line: &str| {
        REASON_LABEL
            .captures(line)
            .map(|c| c[1].trim().trim_end_matches("**").trim().to_string())
    };
    if let Some(reason) = strip(first) {
        return reason;
    }
    lines.find_map(strip).unwrap_or_default()
}

/// Reads the last well-formed `<Eliminate>` or `<Answer>` pair that names an option.
pub fn parse_tagged(text: &str) -> Result<TaggedAnswer, ParseError> {
    // (tag, content, index just past the closing tag)
    let mut pairs: Vec<(Tag, &str, usize)> = Vec::new();
    for open in OPEN_TAG.captures_iter(text) {
        let whole = open.get(0).expect("group 0");
        let (tag, close) = if open[1].eq_ignore_ascii_case("eliminate") {
            (Tag::Eliminate, &*CLOSE_ELIMINATE)
        } else {
            (Tag::Answer, &*CLOSE_ANSWER)
        };
        if let Some(end) = close.find_at(text, whole.end()) {
            pairs.push((tag, &text[whole.end()..end.start()], end.end()));
        }
    }
    if pairs.is_empty() {
        return Err(ParseError::NoTagFound);
    }
    for &(tag, content, end) in pairs.iter().rev() {
        let option = ANSWER_LABEL
            .captures(content)
            .and_then(|c| option_token(&c[1]))
            .or_else(|| option_token(content.trim()));
        if let Some(option) = option {
            return Ok(TaggedAnswer {
                tag,
                option,
                reason: reason_after(&text[end..]),
            });
        }
    }
    let (_, content, _) = pairs[pairs.len() - 1];
    Err(ParseError::MalformedTag(content.trim().chars().take(80).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TsvSchema {
    /// Nine-column logic checker table.
    LogicCheck9,
    /// Five-column credibility table.
    Credibility5,
}

impl TsvSchema {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            TsvSchema::LogicCheck9 => &[
                "Step",
                "Subject",
                "Object",
                "Logical Relationship",
                "Reasoning Text",
                "Credibility",
                "Error (Yes/No)",
                "Error Type",
                "Suggested Correction",
            ],
            TsvSchema::Credibility5 => &[
                "Index",
                "MajorPremise",
                "MinorPremise",
                "Conclusion",
                "Credibility",
            ],
        }
    }

    pub fn arity(self) -> usize {
        self.columns().len()
    }

    fn header_key(self) -> String {
        squash(&self.columns().concat())
    }
}

impl fmt::Display for TsvSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TsvSchema::LogicCheck9 => "LogicCheck9",
            TsvSchema::Credibility5 => "Credibility5",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TsvTable {
    pub schema: TsvSchema,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TsvTable {
    pub fn new(schema: TsvSchema) -> Self {
        Self {
            schema,
            header: schema.columns().iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Cell by column name, for a parsed row.
    pub fn cell<'a>(&self, row: &'a [String], column: &str) -> Option<&'a str> {
        let idx = self.header.iter().position(|h| h == column)?;
        row.get(idx).map(String::as_str)
    }
}

/// Lowercase alphanumerics only; header matching ignores spacing and punctuation.
fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

static MULTI_SPACE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r" {2,}").expect("valid regex"));
static STEP_ID: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(step\s*)?[a-z]{0,2}\d{1,3}[.:)]?$").expect("valid regex")
});

fn strip_quotes(cell: &str) -> &str {
    let cell = cell.trim();
    for (open, close) in [('"', '"'), ('\u{201c}', '\u{201d}'), ('\'', '\'')] {
        if cell.len() >= 2 && cell.starts_with(open) && cell.ends_with(close) {
            return cell[open.len_utf8()..cell.len() - close.len_utf8()].trim();
        }
    }
    cell
}

fn split_cells(line: &str) -> Vec<String> {
    let trimmed = line.trim();
    let raw: Vec<&str> = if line.contains('\t') {
        line.split('\t').collect()
    } else if trimmed.starts_with('|') {
        let inner = trimmed.trim_start_matches('|');
        let inner = inner.strip_suffix('|').unwrap_or(inner);
        inner.split('|').collect()
    } else {
        MULTI_SPACE.split(trimmed).collect()
    };
    raw.into_iter().map(|c| strip_quotes(c).to_string()).collect()
}

fn is_markdown_rule(line: &str) -> bool {
    !line.contains('\t')
        && line.contains('-')
        && line.trim().chars().all(|c| matches!(c, '|' | '-' | ':' | ' '))
}

/// Finds the schema's header line and reads rows until a blank or non-conforming line.
///
/// Separators are tabs, pipes (markdown tables) or runs of two or more spaces.
/// Over-long rows fold their tail into the last column. A nine-column row that
/// is one cell short gets either an auto-numbered Step (when its first cell is
/// not a step id) or an empty Suggested Correction.
pub fn parse_tsv(text: &str, schema: TsvSchema) -> Result<TsvTable, ParseError> {
    let key = schema.header_key();
    let mut lines = text.lines();
    if !lines.by_ref().any(|l| squash(l) == key) {
        return Err(ParseError::HeaderNotFound(schema));
    }
    let arity = schema.arity();
    let mut table = TsvTable::new(schema);
    for line in lines {
        if line.trim().is_empty() {
            break;
        }
        if is_markdown_rule(line) {
            continue;
        }
        let mut cells = split_cells(line);
        if cells.len() > arity {
            let tail = cells.split_off(arity - 1).join(" ");
            cells.push(tail);
        } else if cells.len() + 1 == arity && schema == TsvSchema::LogicCheck9 {
            if STEP_ID.is_match(&cells[0]) {
                cells.push(String::new());
            } else {
                cells.insert(0, (table.rows.len() + 1).to_string());
            }
        } else if cells.len() != arity {
            break;
        }
        table.rows.push(cells);
    }
    if table.rows.is_empty() {
        return Err(ParseError::EmptyTable(schema));
    }
    Ok(table)
}

/// Tab-separated text that [`parse_tsv`] reads back to the same table.
pub fn serialize_tsv(table: &TsvTable) -> String {
    let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
    let mut out = table.header.join("\t");
    out.push('\n');
    for row in &table.rows {
        out.push_str(&row.iter().map(|c| clean(c)).collect::<Vec<_>>().join("\t"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PremiseBlocks {
    pub majors: Vec<String>,
    pub minors: Vec<String>,
}

static BULLET: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:[-*•·–]+|\\item|\d{1,3}[.)])\s*").expect("valid regex")
});

fn block_items(body: &str) -> Vec<String> {
    body.lines()
        .map(|line| {
            let line = BULLET.replace(line.trim(), "");
            line.trim()
                .trim_matches(|c| matches!(c, '"' | '\u{201c}' | '\u{201d}' | '\''))
                .trim()
                .to_string()
        })
        .filter(|item| !item.is_empty() && item != "..." && item != "\u{2026}")
        .collect()
}

/// Body of the last `<name>` block; the closing tag is optional.
fn block<'a>(text: &'a str, name: &str, stop_at: Option<&str>) -> Option<&'a str> {
    let open = Regex::new(&format!(r"(?i)<\s*{name}\s*>")).expect("valid regex");
    let close = Regex::new(&format!(r"(?i)<\s*/\s*{name}\s*>")).expect("valid regex");
    let start = open.find_iter(text).last()?.end();
    let rest = &text[start..];
    let mut end = close.find(rest).map_or(rest.len(), |m| m.start());
    if let Some(stop) = stop_at {
        let stop = Regex::new(&format!(r"(?i)<\s*{stop}\s*>")).expect("valid regex");
        if let Some(m) = stop.find(rest) {
            end = end.min(m.start());
        }
    }
    Some(&rest[..end])
}

/// Bullet items of the `<MajorPremises>` and `<MinorPremises>` blocks.
pub fn parse_premise_blocks(text: &str) -> Result<PremiseBlocks, ParseError> {
    let major = block(text, "MajorPremises", Some("MinorPremises"));
    let minor = block(text, "MinorPremises", Some("MajorPremises"));
    match (major, minor) {
        (Some(major), Some(minor)) => Ok(PremiseBlocks {
            majors: block_items(major),
            minors: block_items(minor),
        }),
        (major, minor) => {
            let mut missing = Vec::new();
            if major.is_none() {
                missing.push("MajorPremises".to_string());
            }
            if minor.is_none() {
                missing.push("MinorPremises".to_string());
            }
            Err(ParseError::BlockMissing(missing))
        }
    }
}

/// Bullet items of a `<Hypotheses>` block.
pub fn parse_hypotheses(text: &str) -> Result<Vec<String>, ParseError> {
    block(text, "Hypotheses", None)
        .map(block_items)
        .ok_or_else(|| ParseError::BlockMissing(vec!["Hypotheses".to_string()]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_tag_without_reason() {
        let got = parse_tagged("<Answer>Answer: C</Answer>").unwrap();
        assert_eq!(
            got,
            TaggedAnswer { tag: Tag::Answer, option: "C".into(), reason: String::new() }
        );
    }

    #[test]
    fn no_tags() {
        assert_eq!(parse_tagged("no tags here"), Err(ParseError::NoTagFound));
        assert_eq!(parse_tagged("<Answer>Answer: C"), Err(ParseError::NoTagFound));
    }

    #[test]
    fn malformed_tag() {
        assert!(matches!(
            parse_tagged("<Eliminate>Answer: none of these</Eliminate>"),
            Err(ParseError::MalformedTag(_))
        ));
    }

    #[test]
    fn last_pair_wins_and_reason_on_next_line() {
        let text = "<Eliminate>Answer: b</Eliminate>\nReason: first\n\
                    thinking more...\n<Answer>Answer: (D).</Answer>\nsome prose\nReason: second one";
        let got = parse_tagged(text).unwrap();
        assert_eq!(got.tag, Tag::Answer);
        assert_eq!(got.option, "D");
        assert_eq!(got.reason, "second one");
    }

    #[test]
    fn yes_no_options() {
        let got = parse_tagged("<answer>Answer: Yes</answer>").unwrap();
        assert_eq!(got.option, "yes");
        assert_eq!(got.letter(), 'A');
        assert_eq!(parse_tagged("<Answer>Answer: NO</Answer>").unwrap().letter(), 'B');
    }

    #[test]
    fn bare_option_inside_tag() {
        assert_eq!(parse_tagged("<Answer>b</Answer>").unwrap().option, "B");
    }

    #[test]
    fn credibility_example_row() {
        let text = "Index  MajorPremise  MinorPremise  Conclusion  Credibility\n\
                    1  \"All X cause Y\"  \"Patient has X\"  \"Patient may have Y\"  High\n";
        let t = parse_tsv(text, TsvSchema::Credibility5).unwrap();
        assert_eq!(
            t.rows,
            vec![vec!["1", "All X cause Y", "Patient has X", "Patient may have Y", "High"]]
        );
    }

    #[test]
    fn fever_row_gets_step() {
        let text = "Step\tSubject\tObject\tLogical Relationship\tReasoning Text\tCredibility\t\
                    Error (Yes/No)\tError Type\tSuggested Correction\n\
                    Fever\tBacterial Infection\tSymptom-to-cause\tThe presence of fever indicates a bacterial infection\tWeak\tYes\tFactual\tClarify that fever is non-specific and may be caused by viral or bacterial infection\n";
        let t = parse_tsv(text, TsvSchema::LogicCheck9).unwrap();
        assert_eq!(t.rows[0][0], "1");
        assert_eq!(t.rows[0][1], "Fever");
        assert!(t.rows[0][8].len() > 10);
    }

    #[test]
    fn short_row_with_step_gets_empty_correction() {
        let text = "step | subject | object | logical relationship | reasoning text | credibility | error (yes/no) | error type | suggested correction\n\
                    |---|---|---|---|---|---|---|---|---|\n\
                    | 1 | A | B | cause | A causes B | Strong | No | - |\n";
        let t = parse_tsv(text, TsvSchema::LogicCheck9).unwrap();
        assert_eq!(t.rows[0], vec!["1", "A", "B", "cause", "A causes B", "Strong", "No", "-", ""]);
    }

    #[test]
    fn long_row_folds_tail() {
        let text = "Index\tMajorPremise\tMinorPremise\tConclusion\tCredibility\n1\ta\tb\tc\tHigh\textra\n";
        let t = parse_tsv(text, TsvSchema::Credibility5).unwrap();
        assert_eq!(t.rows[0][4], "High extra");
    }

    #[test]
    fn tsv_errors() {
        assert_eq!(
            parse_tsv("The reasoning looks fine overall.", TsvSchema::LogicCheck9),
            Err(ParseError::HeaderNotFound(TsvSchema::LogicCheck9))
        );
        assert_eq!(
            parse_tsv("Index MajorPremise MinorPremise Conclusion Credibility\n\nmore", TsvSchema::Credibility5),
            Err(ParseError::EmptyTable(TsvSchema::Credibility5))
        );
    }

    #[test]
    fn rows_stop_at_nonconforming_line() {
        let text = "Index\tMajorPremise\tMinorPremise\tConclusion\tCredibility\n1\ta\tb\tc\tHigh\nOverall the tree is sound.\n2\ta\tb\tc\tLow\n";
        assert_eq!(parse_tsv(text, TsvSchema::Credibility5).unwrap().rows.len(), 1);
    }

    #[test]
    fn premise_blocks() {
        let text = "<MajorPremises>\n- “Hypertension increases risk of coronary artery disease.”\n- ...\n</MajorPremises>\n\
                    <MinorPremises>\n* \"Patient is 65 years old.\"\n\n</MinorPremises>";
        let got = parse_premise_blocks(text).unwrap();
        assert_eq!(got.majors, vec!["Hypertension increases risk of coronary artery disease."]);
        assert_eq!(got.minors, vec!["Patient is 65 years old."]);
    }

    #[test]
    fn empty_and_missing_blocks() {
        let empty = parse_premise_blocks("<MajorPremises>\n</MajorPremises>\n<MinorPremises></MinorPremises>").unwrap();
        assert_eq!(empty, PremiseBlocks::default());
        assert_eq!(
            parse_premise_blocks("<MajorPremises>\n- a\n</MajorPremises>"),
            Err(ParseError::BlockMissing(vec!["MinorPremises".into()]))
        );
    }

    #[test]
    fn hypotheses_block() {
        let got = parse_hypotheses("<Hypotheses>\n- Influenza\n- Common cold\n</Hypotheses>").unwrap();
        assert_eq!(got, vec!["Influenza", "Common cold"]);
        assert!(parse_hypotheses("nothing").is_err());
    }
}
