//! Verdict reply grammar.
//!
//! The decision model is asked to answer with three labelled lines:
//!
//! ```text
//! VERDICT: REAL|FAKE
//! CONFIDENCE: 0-100
//! REASONING: free text, may continue on following lines
//! ```
//!
//! Keys are case-insensitive and may be wrapped in markdown emphasis. When
//! that grammar fails, [`parse_verdict`] falls back to the first standalone
//! REAL or FAKE word with confidence 50.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::Label;

/// Confidence assigned when the label comes from a bare token.
pub const FALLBACK_CONFIDENCE: u8 = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    pub confidence: u8,
    pub rationale: String,
    pub raw_reply: String,
}

impl Verdict {
    /// Same label, confidence and rationale; `raw_reply` is ignored.
    pub fn same_decision(&self, other: &Verdict) -> bool {
        self.label == other.label && self.confidence == other.confidence && self.rationale == other.rationale
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no REAL or FAKE token in reply: {raw:?}")]
pub struct NoVerdictToken {
    pub raw: String,
}

static KEY_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:[-*>#]+\s*)?[*_]*(verdict|confidence|reasoning)[*_]*\s*:[*_]*\s*(.*)$").unwrap()
});
static LABEL_TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(real|fake)\b").unwrap());
static YES_NO_TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(yes-real|ai-generated|real|authentic|photograph|fake|synthetic|manipulated)\b").unwrap()
});

#[derive(Clone, Copy, PartialEq)]
enum Key {
    Verdict,
    Confidence,
    Reasoning,
}

fn strip_emphasis(value: &str) -> &str {
    value.trim().trim_matches(|c| matches!(c, '*' | '_' | '`')).trim().trim_end_matches('.').trim()
}

fn label_of(value: &str) -> Option<Label> {
    match strip_emphasis(value).to_ascii_lowercase().as_str() {
        "real" => Some(Label::Real),
        "fake" => Some(Label::Fake),
        _ => None,
    }
}

fn confidence_of(value: &str) -> Option<u8> {
    let v = strip_emphasis(value).trim_end_matches('%').trim();
    let n: u32 = v.parse().ok()?;
    u8::try_from(n).ok().filter(|c| *c <= 100)
}

/// Parses the labelled three-line grammar only.
pub fn parse_verdict_strict(raw: &str) -> Option<Verdict> {
    let mut label = None;
    let mut confidence = None;
    let mut reasoning: Option<Vec<&str>> = None;
    let mut in_reasoning = false;

    for line in raw.lines() {
        let key = KEY_LINE.captures(line).map(|c| {
            let key = match c[1].to_ascii_lowercase().as_str() {
                "verdict" => Key::Verdict,
                "confidence" => Key::Confidence,
                _ => Key::Reasoning,
            };
            (key, c.get(2).map_or("", |m| m.as_str()))
        });
        match key {
            Some((Key::Verdict, value)) => {
                in_reasoning = false;
                if label.is_none() {
                    label = Some(label_of(value)?);
                }
            }
            Some((Key::Confidence, value)) => {
                in_reasoning = false;
                if confidence.is_none() {
                    confidence = Some(confidence_of(value)?);
                }
            }
            Some((Key::Reasoning, value)) if reasoning.is_none() => {
                in_reasoning = true;
                reasoning = Some(vec![value]);
            }
            _ if in_reasoning => reasoning.as_mut().expect("reasoning started").push(line),
            _ => {}
        }
    }

    let rationale = reasoning?.join("\n").trim().to_string();
    if rationale.is_empty() {
        return None;
    }
    Some(Verdict { label: label?, confidence: confidence?, rationale, raw_reply: raw.to_string() })
}

/// Full parser: labelled grammar first, then the bare-token fallback.
pub fn parse_verdict(raw: &str) -> Result<Verdict, NoVerdictToken> {
    if let Some(v) = parse_verdict_strict(raw) {
        return Ok(v);
    }
    let label = first_label_token(raw).ok_or_else(|| NoVerdictToken { raw: raw.to_string() })?;
    Ok(Verdict {
        label,
        confidence: FALLBACK_CONFIDENCE,
        rationale: raw.trim().to_string(),
        raw_reply: raw.to_string(),
    })
}

fn first_label_token(raw: &str) -> Option<Label> {
    LABEL_TOKEN.captures(raw).map(|c| match c[1].to_ascii_lowercase().as_str() {
        "real" => Label::Real,
        _ => Label::Fake,
    })
}

/// Renders a verdict in the labelled grammar.
pub fn format_verdict(label: Label, confidence: u8, rationale: &str) -> String {
    let word = match label {
        Label::Real => "REAL",
        Label::Fake => "FAKE",
    };
    format!("VERDICT: {word}\nCONFIDENCE: {confidence}\nREASONING: {rationale}")
}

/// Maps a single-question reply to a label by its first cue word.
///
/// Bare "yes"/"no" are deliberately not mapped: their meaning depends on how
/// the question was phrased.
pub fn map_yes_no_reply(raw: &str) -> Option<Label> {
    YES_NO_TOKEN.captures(raw).map(|c| match c[1].to_ascii_lowercase().as_str() {
        "yes-real" | "real" | "authentic" | "photograph" => Label::Real,
        _ => Label::Fake,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn primary_grammar() {
        let v = parse_verdict("VERDICT: FAKE\nCONFIDENCE: 87\nREASONING: waxy skin texture").unwrap();
        assert_eq!((v.label, v.confidence, v.rationale.as_str()), (Label::Fake, 87, "waxy skin texture"));
        let v = parse_verdict("verdict: real\nconfidence: 95\nreasoning: natural pores").unwrap();
        assert_eq!((v.label, v.confidence, v.rationale.as_str()), (Label::Real, 95, "natural pores"));
    }

    #[test]
    fn fallback_grammar() {
        let raw = "This is FAKE because the pupils are misshapen.";
        let v = parse_verdict(raw).unwrap();
        assert_eq!((v.label, v.confidence), (Label::Fake, 50));
        assert_eq!(v.rationale, raw);
        assert!(parse_verdict_strict(raw).is_none());
        assert_eq!(parse_verdict("inconclusive"), Err(NoVerdictToken { raw: "inconclusive".into() }));
        // word-bounded: "unreal" and "fakeness" do not count
        assert!(parse_verdict("unreal fakeness").is_err());
    }

    #[test]
    fn out_of_range_confidence_falls_back() {
        let v = parse_verdict("VERDICT: FAKE\nCONFIDENCE: 140\nREASONING: x").unwrap();
        assert_eq!(v.confidence, 50);
        assert!(parse_verdict_strict("VERDICT: FAKE\nCONFIDENCE: high\nREASONING: x").is_none());
        assert!(parse_verdict_strict("VERDICT: FAKE\nCONFIDENCE: 10\nREASONING:   ").is_none());
        assert!(parse_verdict_strict("VERDICT: REAL or FAKE\nCONFIDENCE: 10\nREASONING: y").is_none());
    }

    #[test]
    fn yes_no_mapping() {
        assert_eq!(map_yes_no_reply("FAKE"), Some(Label::Fake));
        assert_eq!(map_yes_no_reply("This photograph is real."), Some(Label::Real));
        assert_eq!(map_yes_no_reply("Looks AI-generated to me"), Some(Label::Fake));
        assert_eq!(map_yes_no_reply("Yes-real"), Some(Label::Real));
        assert_eq!(map_yes_no_reply("cannot tell"), None);
        assert_eq!(map_yes_no_reply("yes"), None);
        assert_eq!(map_yes_no_reply("No."), None);
    }

    fn arb_rationale() -> impl Strategy<Value = String> {
        prop::collection::vec("[A-Za-z0-9][A-Za-z0-9 ,.()'-]{0,30}[A-Za-z0-9.]", 1..4).prop_map(|lines| lines.join("\n"))
    }

    proptest! {
        #[test]
        fn format_then_parse_is_identity(fake in any::<bool>(), confidence in 0u8..=100, rationale in arb_rationale()) {
            let label = if fake { Label::Fake } else { Label::Real };
            let text = format_verdict(label, confidence, &rationale);
            let parsed = parse_verdict(&text).unwrap();
            prop_assert_eq!(parsed, Verdict { label, confidence, rationale, raw_reply: text });
        }
    }
}
