use serde::{Deserialize, Serialize};

/// A question with lettered options. No options means an open question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub options: Vec<(char, String)>,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { id: id.into(), text: text.into(), options: Vec::new() }
    }

    /// Options lettered `A`, `B`, ... in the given order.
    pub fn with_options<I, S>(mut self, options: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.options = options
            .into_iter()
            .zip('A'..='Z')
            .map(|(text, letter)| (letter, text.into()))
            .collect();
        self
    }

    pub fn is_open(&self) -> bool {
        self.options.is_empty()
    }

    pub fn letters(&self) -> Vec<char> {
        self.options.iter().map(|(l, _)| *l).collect()
    }

    pub fn has_letter(&self, letter: char) -> bool {
        self.options.iter().any(|(l, _)| *l == letter)
    }

    pub fn option_text(&self, letter: char) -> Option<&str> {
        self.options
            .iter()
            .find(|(l, _)| *l == letter)
            .map(|(_, t)| t.as_str())
    }

    /// `A. text` lines.
    pub fn format_options(&self) -> String {
        self.options
            .iter()
            .map(|(l, t)| format!("{l}. {t}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Zero-based position of a letter among the options.
    pub fn index_of(&self, letter: char) -> Option<usize> {
        self.options.iter().position(|(l, _)| *l == letter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lettering_and_lookup() {
        let q = Question::new("q", "Which?").with_options(["red", "green", "blue"]);
        assert_eq!(q.letters(), vec!['A', 'B', 'C']);
        assert_eq!(q.option_text('B'), Some("green"));
        assert_eq!(q.index_of('C'), Some(2));
        assert!(!q.has_letter('D'));
        assert_eq!(q.format_options(), "A. red\nB. green\nC. blue");
        assert!(Question::new("o", "Why?").is_open());
    }
}
