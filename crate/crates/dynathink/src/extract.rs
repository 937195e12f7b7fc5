//! Parsing of raw completions into ordered reasoning steps and a normalized
//! final answer.
//!
//! Completions follow the prompting convention that every reasoning step
//! starts on its own line with a `Step :` / `Step 1:` marker. Splitting is
//! tolerant of numbering and case; answer extraction scans only the final
//! step (models often restate intermediate values earlier) and applies
//! format-specific normalization so that votes compare canonical strings,
//! not surface forms.

use once_cell::sync::Lazy;
use regex::Regex;

use crate::types::{AnswerFormat, AnswerKey};

/// A new step begins at any line whose leading non-whitespace text is the
/// word "Step" (any case), optionally followed by an integer, then a colon.
static STEP_MARKER: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?mi)^[ \t]*step[ \t]*\d*[ \t]*:").unwrap());

/// Numeric literal with optional sign and currency symbol. The
/// comma-grouped alternative must come first: alternation is
/// leftmost-first, and the plain form would otherwise claim "234.50"
/// out of "1,234.50".
static NUMERIC_LITERAL: Lazy<Regex> = Lazy::new(|| {
    Regex::new(
        r"[-+]?[$£€]?\d{1,3}(?:,\d{3})+(?:\.\d+)?|[-+]?[$£€]?\d+(?:\.\d+)?|[-+]?[$£€]?\.\d+",
    )
    .unwrap()
});

static BOOLEAN_WORD: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?i)\b(?:yes|true|no|false)\b").unwrap());

static ANSWER_IS: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?i)\banswer\s+is\b:?").unwrap());

/// Split a completion into step texts.
///
/// Text before the first marker is discarded; each step text runs from just
/// after its marker's colon to the next marker (or the end), trimmed. Zero
/// markers yield an empty list.
pub fn split_steps(raw: &str) -> Vec<String> {
    let marks: Vec<(usize, usize)> = STEP_MARKER
        .find_iter(raw)
        .map(|m| (m.start(), m.end()))
        .collect();
    marks
        .iter()
        .enumerate()
        .map(|(i, &(_, body_start))| {
            let body_end = marks.get(i + 1).map_or(raw.len(), |&(next, _)| next);
            raw[body_start..body_end].trim().to_string()
        })
        .collect()
}

/// Number of steps in a completion; equals `split_steps(raw).len()`.
pub fn count_steps(raw: &str) -> u32 {
    STEP_MARKER.find_iter(raw).count() as u32
}

/// Extract the normalized final answer from a completion.
///
/// Scans the final step's text, falling back to the whole input only when
/// no step markers exist at all. Returns `None` for unparseable samples.
pub fn extract_answer(raw: &str, format: &AnswerFormat) -> Option<AnswerKey> {
    let steps = split_steps(raw);
    let target = steps.last().map_or(raw, |s| s.as_str());
    scan(target, format).map(|canonical| AnswerKey::new(canonical, format.clone()))
}

/// Normalize a dataset's gold answer string under `format`.
///
/// Uses the same scanners as [`extract_answer`] over the whole string, so
/// gold forms like "3.50", "$3.50" and "(c)" land on the canonical keys the
/// extractor produces. Freeform golds that contain no `\boxed{}` group or
/// "answer is" phrase fall back to the trimmed string itself.
pub fn canonicalize_gold(text: &str, format: &AnswerFormat) -> Option<AnswerKey> {
    let canonical = match format {
        AnswerFormat::FreeformBoxed => scan(text, format).or_else(|| {
            let fallback = text.trim().trim_matches('$').trim();
            (!fallback.is_empty()).then(|| fallback.to_string())
        }),
        _ => scan(text, format),
    }?;
    Some(AnswerKey::new(canonical, format.clone()))
}

fn scan(text: &str, format: &AnswerFormat) -> Option<String> {
    match format {
        AnswerFormat::Numeric => scan_numeric(text),
        AnswerFormat::MultipleChoice { letters } => scan_choice(text, letters),
        AnswerFormat::Boolean => scan_boolean(text),
        AnswerFormat::FreeformBoxed => scan_freeform(text),
    }
}

/// Last numeric literal, canonicalized to a minimal decimal string.
fn scan_numeric(text: &str) -> Option<String> {
    let last = NUMERIC_LITERAL.find_iter(text).last()?;
    canonical_decimal(last.as_str())
}

/// Canonicalize a decimal literal by string surgery (never through floats):
/// drop sign `+`, currency symbols and thousands separators; remove leading
/// integer zeros and trailing fractional zeros; map "-0" to "0".
fn canonical_decimal(literal: &str) -> Option<String> {
    let mut rest = literal.trim();
    let mut negative = false;
    if let Some(s) = rest.strip_prefix('-') {
        negative = true;
        rest = s;
    } else if let Some(s) = rest.strip_prefix('+') {
        rest = s;
    }
    let rest = rest.trim_start_matches(['$', '£', '€']);
    let cleaned: String = rest.chars().filter(|c| *c != ',').collect();
    let (int_raw, frac_raw) = match cleaned.split_once('.') {
        Some((i, f)) => (i, f),
        None => (cleaned.as_str(), ""),
    };
    let all_digits = int_raw.chars().chain(frac_raw.chars()).all(|c| c.is_ascii_digit());
    if !all_digits || (int_raw.is_empty() && frac_raw.is_empty()) {
        return None;
    }
    let int_part = int_raw.trim_start_matches('0');
    let int_part = if int_part.is_empty() { "0" } else { int_part };
    let frac_part = frac_raw.trim_end_matches('0');
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    out.push_str(int_part);
    if !frac_part.is_empty() {
        out.push('.');
        out.push_str(frac_part);
    }
    if out == "-0" {
        out = "0".to_string();
    }
    Some(out)
}

/// Last standalone occurrence of an allowed choice letter, either case,
/// uppercased. Standalone means no alphanumeric neighbors, which covers
/// "(C)", "C." and bare "C" while skipping letters inside words.
fn scan_choice(text: &str, letters: &str) -> Option<String> {
    let bytes = text.as_bytes();
    let mut found = None;
    for (i, ch) in text.char_indices() {
        if !ch.is_ascii_alphabetic() {
            continue;
        }
        let upper = ch.to_ascii_uppercase();
        if !letters.contains(upper) {
            continue;
        }
        let prev_ok = i == 0 || !bytes[i - 1].is_ascii_alphanumeric();
        let next_ok = bytes.get(i + 1).is_none_or(|b| !b.is_ascii_alphanumeric());
        if prev_ok && next_ok {
            found = Some(upper);
        }
    }
    found.map(String::from)
}

/// Last standalone yes/true/no/false keyword, mapped onto "yes"/"no".
fn scan_boolean(text: &str) -> Option<String> {
    let last = BOOLEAN_WORD.find_iter(text).last()?;
    match last.as_str().chars().next().unwrap().to_ascii_lowercase() {
        'y' | 't' => Some("yes".to_string()),
        _ => Some("no".to_string()),
    }
}

/// Content of the last `\boxed{...}` group (brace-balanced), else the text
/// after the last "answer is" phrase with one trailing sentence mark
/// dropped. Either way, surrounding whitespace and `$` are trimmed.
fn scan_freeform(text: &str) -> Option<String> {
    if let Some(inner) = scan_boxed(text) {
        let inner = inner.trim().trim_matches('$').trim();
        return (!inner.is_empty()).then(|| inner.to_string());
    }
    let last = ANSWER_IS.find_iter(text).last()?;
    let tail = text[last.end()..].trim();
    let tail = tail
        .strip_suffix(['.', '!', '?'])
        .unwrap_or(tail)
        .trim()
        .trim_matches('$')
        .trim();
    (!tail.is_empty()).then(|| tail.to_string())
}

fn scan_boxed(text: &str) -> Option<String> {
    let start = text.rfind("\\boxed{")? + "\\boxed{".len();
    let mut depth = 1u32;
    for (offset, ch) in text[start..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(text[start..start + offset].to_string());
                }
            }
            _ => {}
        }
    }
    None
}
