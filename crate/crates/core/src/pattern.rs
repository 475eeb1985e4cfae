//! Case-insensitive phrase matchers used by scenario probe tables, the
//! planner's finding lexicon and rubric grading rules.
//!
//! A pattern is one or more `|`-separated alternatives. Each alternative is a
//! whitespace-separated phrase whose tokens must appear as consecutive words
//! of the text. A token is either a literal word, a prefix (`swallow*`), or a
//! synonym group reference (`@vision`) resolved against a [`Synonyms`] table.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("empty pattern")]
    Empty,
    #[error("empty alternative in pattern `{0}`")]
    EmptyAlternative(String),
    #[error("invalid token `{token}` in pattern `{pattern}`")]
    InvalidToken { pattern: String, token: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Word(String),
    Prefix(String),
    Group(String),
}

/// A compiled phrase matcher. Serializes as its source string.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pattern {
    source: String,
    alternatives: Vec<Vec<Token>>,
}

/// Named groups of interchangeable words, declared per scenario or rubric.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Synonyms(BTreeMap<String, Vec<String>>);

/// Lower-cased word sequence of a text, ready for matching.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Words(Vec<String>);

impl Words {
    pub fn new(text: &str) -> Self {
        Self(tokenize(text))
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Splits text into lower-case alphanumeric words. Apostrophes are dropped so
/// "don't" and "dont" tokenize identically.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if ch == '\'' || ch == '\u{2019}' {
            continue;
        } else if !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

impl Pattern {
    pub fn parse(source: &str) -> Result<Self, PatternError> {
        if source.trim().is_empty() {
            return Err(PatternError::Empty);
        }
        let mut alternatives = Vec::new();
        for alt in source.split('|') {
            let mut tokens = Vec::new();
            for raw in alt.split_whitespace() {
                tokens.push(parse_token(source, raw)?);
            }
            if tokens.is_empty() {
                return Err(PatternError::EmptyAlternative(source.to_owned()));
            }
            alternatives.push(tokens);
        }
        Ok(Self {
            source: source.to_owned(),
            alternatives,
        })
    }

    /// Pattern matching the exact word sequence of `phrase`.
    pub fn literal(phrase: &str) -> Result<Self, PatternError> {
        let words = tokenize(phrase);
        if words.is_empty() {
            return Err(PatternError::Empty);
        }
        Self::parse(&words.join(" "))
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Synonym groups referenced by this pattern.
    pub fn groups(&self) -> impl Iterator<Item = &str> {
        self.alternatives.iter().flatten().filter_map(|t| match t {
            Token::Group(g) => Some(g.as_str()),
            _ => None,
        })
    }

    pub fn matches(&self, words: &Words, synonyms: &Synonyms) -> bool {
        let words = words.as_slice();
        self.alternatives.iter().any(|alt| {
            alt.len() <= words.len()
                && words
                    .windows(alt.len())
                    .any(|window| window.iter().zip(alt).all(|(w, t)| t.accepts(w, synonyms)))
        })
    }

    pub fn matches_text(&self, text: &str, synonyms: &Synonyms) -> bool {
        self.matches(&Words::new(text), synonyms)
    }
}

fn parse_token(pattern: &str, raw: &str) -> Result<Token, PatternError> {
    let invalid = || PatternError::InvalidToken {
        pattern: pattern.to_owned(),
        token: raw.to_owned(),
    };
    if let Some(group) = raw.strip_prefix('@') {
        if group.is_empty() {
            return Err(invalid());
        }
        return Ok(Token::Group(group.to_lowercase()));
    }
    let (stem, prefix) = match raw.strip_suffix('*') {
        Some(stem) => (stem, true),
        None => (raw, false),
    };
    let words = tokenize(stem);
    if words.len() != 1 {
        return Err(invalid());
    }
    let word = words.into_iter().next().unwrap_or_default();
    Ok(if prefix {
        Token::Prefix(word)
    } else {
        Token::Word(word)
    })
}

impl Token {
    fn accepts(&self, word: &str, synonyms: &Synonyms) -> bool {
        match self {
            Token::Word(w) => w == word,
            Token::Prefix(p) => word.starts_with(p.as_str()),
            Token::Group(g) => synonyms.group_accepts(g, word),
        }
    }
}

impl Synonyms {
    pub fn new(groups: BTreeMap<String, Vec<String>>) -> Self {
        Self(groups)
    }

    pub fn contains(&self, group: &str) -> bool {
        self.0.contains_key(group)
    }

    fn group_accepts(&self, group: &str, word: &str) -> bool {
        self.0.get(group).is_some_and(|members| {
            members.iter().any(|m| match m.strip_suffix('*') {
                Some(stem) => word.starts_with(&stem.to_lowercase()),
                None => m.eq_ignore_ascii_case(word),
            })
        })
    }
}

impl TryFrom<String> for Pattern {
    type Error = PatternError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Pattern::parse(&value)
    }
}

impl From<Pattern> for String {
    fn from(value: Pattern) -> Self {
        value.source
    }
}

impl fmt::Debug for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pattern({:?})", self.source)
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

/// True when any pattern in `patterns` matches.
pub fn any_matches(patterns: &[Pattern], words: &Words, synonyms: &Synonyms) -> bool {
    patterns.iter().any(|p| p.matches(words, synonyms))
}
