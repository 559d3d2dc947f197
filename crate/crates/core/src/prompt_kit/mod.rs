//! Fixed prompt templates and parsers for the model output grammars.
//!
//! Templates live in `prompts/` as plain text, one system and one user file
//! per template. A placeholder is `[name]` with a lowercase identifier that
//! the template declares; other bracketed text (section labels such as
//! `[Context]`) is literal.

mod parse;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;
use thiserror::Error;

pub use parse::{
    parse_hypotheses, parse_premise_blocks, parse_tagged, parse_tsv, serialize_tsv, ParseError,
    PremiseBlocks, Tag, TaggedAnswer, TsvSchema, TsvTable,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("missing bindings: {}", .0.join(", "))]
    MissingBinding(Vec<String>),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateId {
    PremiseExtract,
    Decompose,
    EliminateRebuttal,
    LogicCheckTsv,
    CredibilityTsv,
    Revision,
    OpenHypotheses,
}

impl TemplateId {
    pub const ALL: [TemplateId; 7] = [
        TemplateId::PremiseExtract,
        TemplateId::Decompose,
        TemplateId::EliminateRebuttal,
        TemplateId::LogicCheckTsv,
        TemplateId::CredibilityTsv,
        TemplateId::Revision,
        TemplateId::OpenHypotheses,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::PremiseExtract => "premise_extract",
            TemplateId::Decompose => "decompose",
            TemplateId::EliminateRebuttal => "eliminate_rebuttal",
            TemplateId::LogicCheckTsv => "logic_check",
            TemplateId::CredibilityTsv => "credibility",
            TemplateId::Revision => "revision",
            TemplateId::OpenHypotheses => "open_hypotheses",
        }
    }

    pub fn template(self) -> &'static PromptTemplate {
        TEMPLATES
            .iter()
            .find(|t| t.id == self)
            .expect("every id has a template")
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = RenderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_lowercase().replace('-', "_");
        TemplateId::ALL
            .into_iter()
            .find(|id| {
                id.as_str() == wanted || format!("{id:?}").to_ascii_lowercase() == wanted
            })
            .ok_or_else(|| RenderError::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub system_text: &'static str,
    pub user_text: &'static str,
    /// Placeholders that must be bound.
    pub required: &'static [&'static str],
    /// Placeholders with a fallback value when unbound.
    pub optional: &'static [(&'static str, &'static str)],
}

impl PromptTemplate {
    pub fn declares(&self, name: &str) -> bool {
        self.required.contains(&name) || self.optional.iter().any(|(n, _)| *n == name)
    }

    /// Placeholder names that actually occur in the template text.
    pub fn placeholders(&self) -> BTreeSet<&'static str> {
        [self.system_text, self.user_text]
            .into_iter()
            .flat_map(|text| PLACEHOLDER.captures_iter(text))
            .filter_map(|c| {
                let name = c.get(1).expect("group").as_str();
                self.declares(name).then_some(name)
            })
            .collect()
    }
}

macro_rules! prompt_file {
    ($name:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/prompts/", $name))
    };
}

pub static TEMPLATES: [PromptTemplate; 7] = [
    PromptTemplate {
        id: TemplateId::PremiseExtract,
        system_text: prompt_file!("premise_extract.system.txt"),
        user_text: prompt_file!("premise_extract.user.txt"),
        required: &["question"],
        optional: &[],
    },
    PromptTemplate {
        id: TemplateId::Decompose,
        system_text: prompt_file!("decompose.system.txt"),
        user_text: prompt_file!("decompose.user.txt"),
        required: &["question", "option"],
        optional: &[("examples", ""), ("option_str", "{option}")],
    },
    PromptTemplate {
        id: TemplateId::EliminateRebuttal,
        system_text: prompt_file!("eliminate_rebuttal.system.txt"),
        user_text: prompt_file!("eliminate_rebuttal.user.txt"),
        required: &["question", "answer", "reason", "opinions"],
        optional: &[("options", "{option}")],
    },
    PromptTemplate {
        id: TemplateId::LogicCheckTsv,
        system_text: prompt_file!("logic_check.system.txt"),
        user_text: prompt_file!("logic_check.user.txt"),
        required: &["reason"],
        optional: &[],
    },
    PromptTemplate {
        id: TemplateId::CredibilityTsv,
        system_text: prompt_file!("credibility.system.txt"),
        user_text: prompt_file!("credibility.user.txt"),
        required: &["agent", "rows"],
        optional: &[],
    },
    PromptTemplate {
        id: TemplateId::Revision,
        system_text: prompt_file!("revision.system.txt"),
        user_text: prompt_file!("revision.user.txt"),
        required: &["flagged"],
        optional: &[],
    },
    PromptTemplate {
        id: TemplateId::OpenHypotheses,
        system_text: prompt_file!("open_hypotheses.system.txt"),
        user_text: prompt_file!("open_hypotheses.user.txt"),
        required: &["question"],
        optional: &[],
    },
];

/// `sha256  filename` lines pinning the shipped template files.
pub const TEMPLATE_CHECKSUMS: &str = prompt_file!("SHA256SUMS");

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[([a-z][a-z0-9_]*)\]").expect("valid regex"));

/// Substitutes every declared `[name]` in one pass.
///
/// Values are inserted verbatim, so a value that itself contains `[question]`
/// is not expanded again.
pub fn render<K, V>(id: TemplateId, bindings: &[(K, V)]) -> Result<(String, String), RenderError>
where
    K: AsRef<str>,
    V: AsRef<str>,
{
    let template = id.template();
    let lookup = |name: &str| -> Option<&str> {
        bindings
            .iter()
            .find(|(k, _)| k.as_ref() == name)
            .map(|(_, v)| v.as_ref())
    };
    let missing: Vec<String> = template
        .required
        .iter()
        .filter(|name| lookup(name).is_none())
        .map(|name| name.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(RenderError::MissingBinding(missing));
    }
    let fill = |text: &str| -> String {
        PLACEHOLDER
            .replace_all(text, |caps: &Captures<'_>| {
                let name = &caps[1];
                if !template.declares(name) {
                    return caps[0].to_string();
                }
                lookup(name)
                    .or_else(|| {
                        template
                            .optional
                            .iter()
                            .find(|(n, _)| *n == name)
                            .map(|(_, d)| *d)
                    })
                    .unwrap_or_default()
                    .to_string()
            })
            .into_owned()
    };
    Ok((fill(template.system_text), fill(template.user_text)))
}

/// Same as [`render`] with the template named by string.
pub fn render_named<K, V>(name: &str, bindings: &[(K, V)]) -> Result<(String, String), RenderError>
where
    K: AsRef<str>,
    V: AsRef<str>,
{
    render(name.parse()?, bindings)
}
