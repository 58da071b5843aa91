//! Answer extraction from free text.

use std::collections::BTreeSet;

const NUMBER_WORDS: [&str; 21] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoiceParse {
    pub letters: BTreeSet<char>,
    pub parsed_ok: bool,
}

/// Collects every standalone capital letter `A`-`H` (delimited by
/// non-alphanumerics or the ends of the text) that names one of `options`.
pub fn parse_choice_answer(text: &str, options: &BTreeSet<char>) -> ChoiceParse {
    let chars: Vec<char> = text.chars().collect();
    let mut letters = BTreeSet::new();
    for (i, &c) in chars.iter().enumerate() {
        if !('A'..='H').contains(&c) || !options.contains(&c) {
            continue;
        }
        let before = i == 0 || !chars[i - 1].is_alphanumeric();
        let after = i + 1 == chars.len() || !chars[i + 1].is_alphanumeric();
        if before && after {
            letters.insert(c);
        }
    }
    let parsed_ok = !letters.is_empty();
    ChoiceParse { letters, parsed_ok }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountParse {
    pub value: u32,
    pub parsed_ok: bool,
}

/// First run of ASCII digits wins. Otherwise the first of: a number word
/// `zero`..`twenty`, or `no` followed by another word (meaning 0). Nothing
/// found gives 0 with `parsed_ok = false`.
pub fn parse_count_answer(text: &str) -> CountParse {
    let digits: String = text
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    if !digits.is_empty() {
        // Saturate absurdly long numbers rather than failing.
        let value = digits.parse().unwrap_or(u32::MAX);
        return CountParse { value, parsed_ok: true };
    }
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    for (i, w) in words.iter().enumerate() {
        if let Some(v) = NUMBER_WORDS.iter().position(|n| n == w) {
            return CountParse {
                value: v as u32,
                parsed_ok: true,
            };
        }
        if w == "no" && i + 1 < words.len() {
            return CountParse {
                value: 0,
                parsed_ok: true,
            };
        }
    }
    CountParse {
        value: 0,
        parsed_ok: false,
    }
}
