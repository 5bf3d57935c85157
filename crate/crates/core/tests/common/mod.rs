#![allow(dead_code)]

use mmfilter_core::masker::{BracketFamily, MaskRules, UnmatchedOpenPolicy};

/// Category Nd as of Unicode 13 (from Python's `unicodedata`).
const ND_13: &[(u32, u32)] = &[
    (0x30, 0x39),
    (0x660, 0x669),
    (0x6F0, 0x6F9),
    (0x7C0, 0x7C9),
    (0x966, 0x96F),
    (0x9E6, 0x9EF),
    (0xA66, 0xA6F),
    (0xAE6, 0xAEF),
    (0xB66, 0xB6F),
    (0xBE6, 0xBEF),
    (0xC66, 0xC6F),
    (0xCE6, 0xCEF),
    (0xD66, 0xD6F),
    (0xDE6, 0xDEF),
    (0xE50, 0xE59),
    (0xED0, 0xED9),
    (0xF20, 0xF29),
    (0x1040, 0x1049),
    (0x1090, 0x1099),
    (0x17E0, 0x17E9),
    (0x1810, 0x1819),
    (0x1946, 0x194F),
    (0x19D0, 0x19D9),
    (0x1A80, 0x1A89),
    (0x1A90, 0x1A99),
    (0x1B50, 0x1B59),
    (0x1BB0, 0x1BB9),
    (0x1C40, 0x1C49),
    (0x1C50, 0x1C59),
    (0xA620, 0xA629),
    (0xA8D0, 0xA8D9),
    (0xA900, 0xA909),
    (0xA9D0, 0xA9D9),
    (0xA9F0, 0xA9F9),
    (0xAA50, 0xAA59),
    (0xABF0, 0xABF9),
    (0xFF10, 0xFF19),
    (0x104A0, 0x104A9),
    (0x10D30, 0x10D39),
    (0x11066, 0x1106F),
    (0x110F0, 0x110F9),
    (0x11136, 0x1113F),
    (0x111D0, 0x111D9),
    (0x112F0, 0x112F9),
    (0x11450, 0x11459),
    (0x114D0, 0x114D9),
    (0x11650, 0x11659),
    (0x116C0, 0x116C9),
    (0x11730, 0x11739),
    (0x118E0, 0x118E9),
    (0x11950, 0x11959),
    (0x11C50, 0x11C59),
    (0x11D50, 0x11D59),
    (0x11DA0, 0x11DA9),
    (0x16A60, 0x16A69),
    (0x16B50, 0x16B59),
    (0x1D7CE, 0x1D7FF),
    (0x1E140, 0x1E149),
    (0x1E2F0, 0x1E2F9),
    (0x1E950, 0x1E959),
    (0x1FBF0, 0x1FBF9),
];

/// Nd digit sets added in Unicode 14 through 16.
const ND_LATER: &[(u32, u32)] = &[
    (0x10D40, 0x10D49),
    (0x116D0, 0x116E3),
    (0x11BF0, 0x11BF9),
    (0x11F50, 0x11F59),
    (0x16130, 0x16139),
    (0x16AC0, 0x16AC9),
    (0x16D70, 0x16D79),
    (0x1CCF0, 0x1CCF9),
    (0x1E4F0, 0x1E4F9),
    (0x1E5F1, 0x1E5FA),
];

pub fn is_nd(c: char) -> bool {
    let c = c as u32;
    ND_13
        .iter()
        .chain(ND_LATER)
        .any(|&(lo, hi)| (lo..=hi).contains(&c))
}

/// Characters that stress the masker: digits from several scripts, numeric
/// lookalikes that are not Nd, every bracket, assorted whitespace.
pub const ALPHABET: &[char] = &[
    'a', 'b', 'S', 'x', 'é', '日', '本', 'Ω', '-', ',', '.', '%', '#', '0', '1', '5', '9', '٣',
    '७', '９', '𝟘', '③', '²', '½', 'Ⅻ', '(', ')', '[', ']', '{', '}', '（', ' ', ' ', ' ', '\t',
    '\n', '\u{a0}', '\u{3000}', '\u{200b}',
];

pub fn rules(families: &str, digits: bool, policy: UnmatchedOpenPolicy) -> MaskRules {
    MaskRules {
        remove_digit_tokens: digits,
        bracket_families: MaskRules::parse_families(families).unwrap(),
        unmatched_open_policy: policy,
        collapse_whitespace: true,
    }
}

/// The rule configurations the suites sweep over.
pub fn rule_configs() -> Vec<(String, MaskRules)> {
    let mut out = Vec::new();
    for families in ["()[]", "()", "()[]{}", ""] {
        for digits in [true, false] {
            for policy in [
                UnmatchedOpenPolicy::TruncateToEnd,
                UnmatchedOpenPolicy::Ignore,
            ] {
                if families.is_empty() && !digits {
                    continue;
                }
                let r = rules(families, digits, policy);
                out.push((
                    format!("families={families:?} digits={digits} policy={policy:?}"),
                    r,
                ));
            }
        }
    }
    out
}

fn family(rules: &MaskRules, c: char) -> Option<(usize, bool)> {
    rules
        .bracket_families
        .iter()
        .enumerate()
        .find_map(|(i, f): (usize, &BracketFamily)| {
            if f.open == c {
                Some((i, true))
            } else if f.close == c {
                Some((i, false))
            } else {
                None
            }
        })
}

/// Reference bracket removal. First marks every character to delete (matched
/// spans, stray closes, and for truncation everything from the first
/// unmatched open), then filters.
pub fn oracle_strip_brackets(text: &str, rules: &MaskRules) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut literal = vec![false; chars.len()];
    loop {
        let mut delete = vec![false; chars.len()];
        let mut stack: Vec<(usize, usize)> = Vec::new();
        for (i, &c) in chars.iter().enumerate() {
            if literal[i] {
                continue;
            }
            match family(rules, c) {
                Some((f, true)) => stack.push((f, i)),
                Some((f, false)) => match stack.last() {
                    Some(&(top, open)) if top == f => {
                        stack.pop();
                        delete[open..=i].iter_mut().for_each(|d| *d = true);
                    }
                    _ => delete[i] = true,
                },
                None => {}
            }
        }
        match (stack.first(), rules.unmatched_open_policy) {
            (None, _) => {
                return chars
                    .iter()
                    .zip(&delete)
                    .filter(|(_, d)| !**d)
                    .map(|(c, _)| *c)
                    .collect();
            }
            (Some(&(_, first)), UnmatchedOpenPolicy::TruncateToEnd) => {
                delete[first..].iter_mut().for_each(|d| *d = true);
                return chars
                    .iter()
                    .zip(&delete)
                    .filter(|(_, d)| !**d)
                    .map(|(c, _)| *c)
                    .collect();
            }
            // The outermost dangling opener becomes plain text; everything
            // after it is reconsidered.
            (Some(&(_, first)), UnmatchedOpenPolicy::Ignore) => literal[first] = true,
        }
    }
}

/// Reference masker for `collapse_whitespace = true`.
pub fn oracle_mask(text: &str, rules: &MaskRules) -> String {
    let stripped = oracle_strip_brackets(text, rules);
    stripped
        .split_whitespace()
        .filter(|tok| !rules.remove_digit_tokens || !tok.chars().any(is_nd))
        .collect::<Vec<_>>()
        .join(" ")
}
