//! Rule-based caption masking: delete bracketed spans and any token that
//! carries a decimal digit, then normalize whitespace.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RulesError {
    #[error("bracket family {0:?} must be exactly two distinct characters")]
    BadFamily(String),
    #[error("bracket character {0:?} is used by more than one family")]
    OverlappingFamilies(char),
    #[error("mask rules disable both digit-token removal and bracket removal")]
    NothingEnabled,
}

/// An open/close character pair such as `(` and `)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BracketFamily {
    pub open: char,
    pub close: char,
}

impl BracketFamily {
    pub const PARENS: BracketFamily = BracketFamily {
        open: '(',
        close: ')',
    };
    pub const SQUARE: BracketFamily = BracketFamily {
        open: '[',
        close: ']',
    };
    pub const CURLY: BracketFamily = BracketFamily {
        open: '{',
        close: '}',
    };
}

impl TryFrom<String> for BracketFamily {
    type Error = RulesError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        let mut chars = s.chars();
        match (chars.next(), chars.next(), chars.next()) {
            (Some(open), Some(close), None) if open != close => Ok(BracketFamily { open, close }),
            _ => Err(RulesError::BadFamily(s)),
        }
    }
}

impl From<BracketFamily> for String {
    fn from(f: BracketFamily) -> String {
        format!("{}{}", f.open, f.close)
    }
}

impl fmt::Display for BracketFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.open, self.close)
    }
}

/// What to do with an open bracket that never gets closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnmatchedOpenPolicy {
    /// Delete from the bracket to the end of the text.
    #[default]
    TruncateToEnd,
    /// Keep the bracket as an ordinary character.
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskRules {
    pub remove_digit_tokens: bool,
    pub bracket_families: Vec<BracketFamily>,
    pub unmatched_open_policy: UnmatchedOpenPolicy,
    pub collapse_whitespace: bool,
}

impl Default for MaskRules {
    fn default() -> Self {
        MaskRules {
            remove_digit_tokens: true,
            bracket_families: vec![BracketFamily::PARENS, BracketFamily::SQUARE],
            unmatched_open_policy: UnmatchedOpenPolicy::TruncateToEnd,
            collapse_whitespace: true,
        }
    }
}

impl MaskRules {
    pub fn validate(&self) -> Result<(), RulesError> {
        if !self.remove_digit_tokens && self.bracket_families.is_empty() {
            return Err(RulesError::NothingEnabled);
        }
        let mut seen = Vec::with_capacity(self.bracket_families.len() * 2);
        for f in &self.bracket_families {
            if f.open == f.close {
                return Err(RulesError::BadFamily(f.to_string()));
            }
            for c in [f.open, f.close] {
                if seen.contains(&c) {
                    return Err(RulesError::OverlappingFamilies(c));
                }
                seen.push(c);
            }
        }
        Ok(())
    }

    /// Parses a compact family list such as `"()[]{}"`.
    pub fn parse_families(s: &str) -> Result<Vec<BracketFamily>, RulesError> {
        let chars: Vec<char> = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .collect();
        if !chars.len().is_multiple_of(2) {
            return Err(RulesError::BadFamily(s.to_string()));
        }
        chars
            .chunks(2)
            .map(|p| BracketFamily::try_from(p.iter().collect::<String>()))
            .collect()
    }

    fn family_of_open(&self, c: char) -> Option<usize> {
        self.bracket_families.iter().position(|f| f.open == c)
    }

    fn family_of_close(&self, c: char) -> Option<usize> {
        self.bracket_families.iter().position(|f| f.close == c)
    }

    pub fn is_bracket_char(&self, c: char) -> bool {
        self.bracket_families
            .iter()
            .any(|f| f.open == c || f.close == c)
    }
}

/// Unicode general category Nd.
pub fn is_decimal_digit(c: char) -> bool {
    if c.is_ascii() {
        return c.is_ascii_digit();
    }
    get_general_category(c) == GeneralCategory::DecimalNumber
}

/// Deletes every outermost matched bracketed span, brackets included.
///
/// Brackets are matched with a single stack across all enabled families; a
/// close that does not match the family on top of the stack counts as
/// unmatched. Unmatched closes are dropped on their own. Unmatched opens are
/// handled by [`MaskRules::unmatched_open_policy`].
pub fn strip_brackets(text: &str, rules: &MaskRules) -> String {
    if rules.bracket_families.is_empty() {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    loop {
        match strip_pass(rest, rules, &mut out) {
            None => return out,
            Some(open_at) => match rules.unmatched_open_policy {
                UnmatchedOpenPolicy::TruncateToEnd => return out,
                UnmatchedOpenPolicy::Ignore => {
                    // Keep the dangling opener literally and rescan what follows it.
                    let opener = rest[open_at..].chars().next().unwrap();
                    out.push(opener);
                    rest = &rest[open_at + opener.len_utf8()..];
                }
            },
        }
    }
}

/// One left-to-right scan. Appends everything outside matched spans to
/// `out` and returns the byte offset of the outermost unmatched opener, if
/// the scan ended inside an open span. In that case `out` holds only the
/// text before that opener.
fn strip_pass(text: &str, rules: &MaskRules, out: &mut String) -> Option<usize> {
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for (i, c) in text.char_indices() {
        if let Some(fam) = rules.family_of_open(c) {
            stack.push((fam, i));
            continue;
        }
        if let Some(fam) = rules.family_of_close(c) {
            if stack.last().map(|&(f, _)| f) == Some(fam) {
                stack.pop();
            }
            continue;
        }
        if stack.is_empty() {
            out.push(c);
        }
    }
    stack.first().map(|&(_, at)| at)
}

/// Deletes every whitespace-delimited token that contains a decimal digit.
///
/// The whitespace following a deleted token goes with it (or the preceding
/// whitespace, for the last token), so surviving tokens keep their original
/// separators.
pub fn strip_digit_tokens(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    let bytes_len = text.len();
    // Leading whitespace is kept as is.
    let lead = text
        .char_indices()
        .find(|(_, c)| !c.is_whitespace())
        .map(|(i, _)| i)
        .unwrap_or(bytes_len);
    out.push_str(&text[..lead]);
    pos += lead;
    let mut kept_any = false;
    while pos < bytes_len {
        let token_end = text[pos..]
            .char_indices()
            .find(|(_, c)| c.is_whitespace())
            .map(|(i, _)| pos + i)
            .unwrap_or(bytes_len);
        let ws_end = text[token_end..]
            .char_indices()
            .find(|(_, c)| !c.is_whitespace())
            .map(|(i, _)| token_end + i)
            .unwrap_or(bytes_len);
        let token = &text[pos..token_end];
        let separator = &text[token_end..ws_end];
        if token.chars().any(is_decimal_digit) {
            if ws_end == bytes_len && kept_any {
                // Last token: drop the separator that preceded it instead,
                // but keep trailing whitespace of the original text.
                let trimmed = out.trim_end_matches(char::is_whitespace).len();
                out.truncate(trimmed);
                out.push_str(separator);
            }
        } else {
            out.push_str(token);
            out.push_str(separator);
            kept_any = true;
        }
        pos = ws_end;
    }
    out
}

pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The caption masker: brackets first, then digit tokens, then whitespace.
pub fn mask(text: &str, rules: &MaskRules) -> String {
    let mut s = strip_brackets(text, rules);
    if rules.remove_digit_tokens {
        s = strip_digit_tokens(&s);
    }
    if rules.collapse_whitespace {
        s = collapse_whitespace(&s);
    }
    s
}

/// True when at least one token contains a decimal digit.
pub fn contains_digit_token(text: &str) -> bool {
    text.chars().any(is_decimal_digit)
}
