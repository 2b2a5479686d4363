//! Score extraction from raw model output, echo detection, and drop
//! classification.
//!
//! Model completions rarely contain just a number, so extraction follows a
//! fixed two-tier rule; the behavioural contract is the golden corpus under
//! `tests/golden/parser_corpus.jsonl` (one JSON record per line: mode, raw
//! text, expected outcome).
//!
//! Free-text tier rules, in order:
//!   (a) the first number that starts within 40 characters after a word
//!       beginning with "score" (case-insensitive);
//!   (b) otherwise the first standalone number with value in [0,100].
//! A number never qualifies when it sits inside a range expression
//! ("0 to 100", "0-100", "between 0 and 100") or is the denominator of a
//! fraction ("85/100" yields 85). A qualifying number outside [0,100]
//! (via rule (a), or via rule (b) when no in-range number exists) drops the
//! record as out_of_range.
//!
//! JSON-first mode (used for the CoT scoring stage) reads a numeric "score"
//! field (case-insensitive) from the first parseable JSON object and falls
//! back to the free-text tier; when both fail the record drops as
//! json_invalid.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Why an instance was dropped from correlation pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NoScore,
    OutOfRange,
    Echo,
    BackendError,
    JsonInvalid,
}

impl DropReason {
    pub fn name(&self) -> &'static str {
        match self {
            DropReason::NoScore => "no_score",
            DropReason::OutOfRange => "out_of_range",
            DropReason::Echo => "echo",
            DropReason::BackendError => "backend_error",
            DropReason::JsonInvalid => "json_invalid",
        }
    }
}

/// Either a parsed score in [0,100] or the reason the record is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ParseOutcome {
    #[serde(rename = "score")]
    Score(f64),
    #[serde(rename = "drop")]
    Dropped(DropReason),
}

impl ParseOutcome {
    pub fn score(&self) -> Option<f64> {
        match self {
            ParseOutcome::Score(s) => Some(*s),
            ParseOutcome::Dropped(_) => None,
        }
    }

    pub fn drop_reason(&self) -> Option<DropReason> {
        match self {
            ParseOutcome::Score(_) => None,
            ParseOutcome::Dropped(r) => Some(*r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    FreeText,
    JsonFirst,
}

const SCORE_WINDOW_CHARS: usize = 40;

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?").unwrap())
}

fn score_token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bscore").unwrap())
}

fn range_res() -> &'static [Regex; 2] {
    static RE: OnceLock<[Regex; 2]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            // "0 to 100"
            Regex::new(r"(?i)(-?\d+(?:\.\d+)?)\s+to\s+(-?\d+(?:\.\d+)?)").unwrap(),
            // "between 0 and 100"
            Regex::new(r"(?i)\bbetween\s+(-?\d+(?:\.\d+)?)\s+and\s+(-?\d+(?:\.\d+)?)").unwrap(),
        ]
    })
}

#[derive(Debug, Clone, Copy)]
struct NumberHit {
    start: usize,
    value: f64,
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// All standalone numbers that are eligible score candidates, in text order.
fn eligible_numbers(text: &str) -> Vec<NumberHit> {
    let bytes = text.as_bytes();

    let mut excluded: Vec<(usize, usize)> = Vec::new();
    for re in range_res() {
        for caps in re.captures_iter(text) {
            for i in 1..=2 {
                if let Some(m) = caps.get(i) {
                    excluded.push((m.start(), m.end()));
                }
            }
        }
    }

    let mut out = Vec::new();
    'numbers: for m in number_re().find_iter(text) {
        let (mut start, end) = (m.start(), m.end());
        let mut token = m.as_str();

        // A minus glued to a word ("top-5") is a hyphen, not a sign.
        if token.starts_with('-') {
            let before = start.checked_sub(1).map(|i| bytes[i]);
            if before.is_some_and(is_word_byte) {
                start += 1;
                token = &token[1..];
            }
        }

        // Standalone: not embedded in a word, an adjoining number, or a
        // decimal tail.
        if let Some(prev) = start.checked_sub(1).map(|i| bytes[i]) {
            if is_word_byte(prev) || prev == b'-' || prev == b'.' {
                continue;
            }
            // Fraction denominator: the number right after a slash.
            if prev == b'/' {
                continue;
            }
        }
        if bytes.get(end).copied().is_some_and(is_word_byte) {
            continue;
        }
        // Tight hyphen range "0-100": skip the left member too.
        if bytes.get(end).copied() == Some(b'-')
            && bytes.get(end + 1).copied().is_some_and(|b| b.is_ascii_digit())
        {
            continue;
        }
        for (ex_start, ex_end) in &excluded {
            if start < *ex_end && end > *ex_start {
                continue 'numbers;
            }
        }

        let Ok(value) = token.parse::<f64>() else {
            continue;
        };
        out.push(NumberHit { start, value });
    }
    out
}

fn outcome_for(value: f64) -> ParseOutcome {
    if (0.0..=100.0).contains(&value) {
        ParseOutcome::Score(value)
    } else {
        ParseOutcome::Dropped(DropReason::OutOfRange)
    }
}

fn extract_free_text(text: &str) -> ParseOutcome {
    let numbers = eligible_numbers(text);

    // Tier (a): the first number within the window after a score token.
    for token in score_token_re().find_iter(text) {
        let window_start = token.end();
        let hit = numbers.iter().find(|n| {
            n.start >= window_start
                && text[window_start..n.start].chars().count() <= SCORE_WINDOW_CHARS
        });
        if let Some(n) = hit {
            return outcome_for(n.value);
        }
    }

    // Tier (b): the first standalone number in range; numbers outside the
    // range only count when nothing in range exists.
    if let Some(n) = numbers.iter().find(|n| (0.0..=100.0).contains(&n.value)) {
        return ParseOutcome::Score(n.value);
    }
    if numbers.is_empty() {
        ParseOutcome::Dropped(DropReason::NoScore)
    } else {
        ParseOutcome::Dropped(DropReason::OutOfRange)
    }
}

fn numeric_value(v: &serde_json::Value) -> Option<f64> {
    match v {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Depth-first search for a field named "score" (case-insensitive). Own
/// fields of an object are checked before descending into children.
fn find_score_field(v: &serde_json::Value) -> Option<f64> {
    match v {
        serde_json::Value::Object(map) => {
            for (k, val) in map {
                if k.eq_ignore_ascii_case("score") {
                    if let Some(n) = numeric_value(val) {
                        return Some(n);
                    }
                }
            }
            for val in map.values() {
                if let Some(n) = find_score_field(val) {
                    return Some(n);
                }
            }
            None
        }
        serde_json::Value::Array(items) => items.iter().find_map(find_score_field),
        _ => None,
    }
}

/// The first parseable JSON object in the text, if any.
fn first_json_object(text: &str) -> Option<serde_json::Value> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter();
        if let Some(Ok(v @ serde_json::Value::Object(_))) = stream.next() {
            return Some(v);
        }
    }
    None
}

fn extract_json_first(text: &str) -> ParseOutcome {
    if let Some(obj) = first_json_object(text) {
        if let Some(value) = find_score_field(&obj) {
            return outcome_for(value);
        }
    }
    match extract_free_text(text) {
        ParseOutcome::Dropped(DropReason::NoScore) => {
            ParseOutcome::Dropped(DropReason::JsonInvalid)
        }
        other => other,
    }
}

/// Extract a DA score from a raw completion. Total: never fails, never
/// panics; every failure is encoded as a drop reason.
pub fn extract_score(text: &str, mode: ParseMode) -> ParseOutcome {
    match mode {
        ParseMode::FreeText => extract_free_text(text),
        ParseMode::JsonFirst => extract_json_first(text),
    }
}

fn collapse_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when the output is a regurgitation of prompt content.
///
/// After whitespace collapsing, the output's trailing 90% (by characters)
/// must appear verbatim inside the prompt. Anchoring at the tail means an
/// output that copies the prompt but then appends an actual answer is not
/// an echo; purely numeric outputs are never echoes since they are score
/// attempts.
pub fn detect_echo(prompt_text: &str, output_text: &str) -> bool {
    let output = collapse_ws(output_text);
    let prompt = collapse_ws(prompt_text);
    if output.is_empty() || prompt.is_empty() {
        return false;
    }
    let meaningful: Vec<char> = output.chars().filter(|c| c.is_alphanumeric()).collect();
    if meaningful.is_empty() || meaningful.iter().all(|c| c.is_ascii_digit()) {
        return false;
    }

    let chars: Vec<char> = output.chars().collect();
    let n = chars.len();
    let need = (9 * n).div_ceil(10);
    let suffix: String = chars[n - need..].iter().collect();
    prompt.contains(&suffix)
}

/// One golden-corpus record: raw completion text plus the expected outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldenEntry {
    pub mode: ParseMode,
    pub text: String,
    pub expect: ParseOutcome,
}

/// Load the golden parser corpus (JSON lines, one record per line).
pub fn load_golden_corpus(path: &std::path::Path) -> std::io::Result<Vec<GoldenEntry>> {
    let raw = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: GoldenEntry = serde_json::from_str(line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("line {}: {e}", idx + 1),
            )
        })?;
        out.push(entry);
    }
    Ok(out)
}
