//! Template aggregation of an answer set into the summary document.
//!
//! Layout:
//!
//! ```text
//! <HEADER>
//!
//! ### <category display name>
//! <answer>
//!
//! ### ...
//! ```
//!
//! When the document exceeds the character budget, every answer body is cut
//! to `floor(available * len / total_len)` characters, where `available` is
//! the budget minus the fixed header, headings and separators. A cut body
//! keeps its leading characters and ends with `…`. No section is dropped.

use serde::{Deserialize, Serialize};

use super::{AnswerSet, StructuredSummary, SummarySource};

pub const SUMMARY_HEADER: &str =
    "The sections below are observations about a single face image, one section per inspected visual attribute.";

/// Default character budget of a rendered summary.
pub const DEFAULT_SUMMARY_BUDGET: usize = 8000;

pub const TRUNCATION_MARK: char = '…';

const FAILED_ANSWER: &str = "(no answer: the query for this attribute failed)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryBudget(pub usize);

impl Default for SummaryBudget {
    fn default() -> Self {
        SummaryBudget(DEFAULT_SUMMARY_BUDGET)
    }
}

/// Escapes answer lines that would otherwise read as markdown headings.
fn sanitize_body(text: &str, failed: bool) -> String {
    if failed && text.is_empty() {
        return FAILED_ANSWER.to_string();
    }
    text.lines()
        .map(|l| if l.trim_start().starts_with('#') { format!("\\{l}") } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n")
}

fn heading(name: &str) -> String {
    format!("### {}", name.replace(['\n', '\r'], " "))
}

fn render(headings: &[String], bodies: &[String]) -> String {
    let sections: Vec<String> = headings.iter().zip(bodies).map(|(h, b)| format!("{h}\n{b}\n")).collect();
    format!("{SUMMARY_HEADER}\n\n{}", sections.join("\n"))
}

/// Allowed body lengths after proportional truncation.
pub(crate) fn allowances(lengths: &[usize], available: usize) -> Vec<usize> {
    let total: usize = lengths.iter().sum();
    if total <= available {
        return lengths.to_vec();
    }
    lengths.iter().map(|&len| ((available as u128 * len as u128) / total as u128) as usize).collect()
}

fn cut(body: &str, allowance: usize) -> String {
    let len = body.chars().count();
    if len <= allowance {
        return body.to_string();
    }
    if allowance == 0 {
        return String::new();
    }
    let mut out: String = body.chars().take(allowance - 1).collect();
    out.push(TRUNCATION_MARK);
    out
}

pub fn aggregate_with_budget(answer_set: &AnswerSet, budget: SummaryBudget) -> StructuredSummary {
    let headings: Vec<String> = answer_set.answers.iter().map(|a| heading(a.category.display_name())).collect();
    let mut bodies: Vec<String> =
        answer_set.answers.iter().map(|a| sanitize_body(&a.answer_text, a.failed)).collect();

    let empty: Vec<String> = vec![String::new(); bodies.len()];
    let fixed = render(&headings, &empty).chars().count();
    let lengths: Vec<usize> = bodies.iter().map(|b| b.chars().count()).collect();
    if fixed + lengths.iter().sum::<usize>() > budget.0 {
        let allowed = allowances(&lengths, budget.0.saturating_sub(fixed));
        bodies = bodies.iter().zip(allowed).map(|(b, n)| cut(b, n)).collect();
    }

    let text = render(&headings, &bodies);
    StructuredSummary {
        char_count: text.chars().count(),
        text,
        source: SummarySource {
            image_sha256: answer_set.image_sha256.clone(),
            prompt_set_version: answer_set.prompt_set_version.clone(),
        },
    }
}

/// Aggregates with the default budget.
pub fn aggregate(answer_set: &AnswerSet) -> StructuredSummary {
    aggregate_with_budget(answer_set, SummaryBudget::default())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::pipeline::Answer;
    use crate::prompts::{builtin_prompt_set, PromptCategory};

    fn answers(texts: &[String]) -> AnswerSet {
        let set = builtin_prompt_set();
        AnswerSet {
            image_sha256: "ab".repeat(32),
            prompt_set_version: set.version.clone(),
            answers: set
                .prompts
                .iter()
                .zip(texts)
                .map(|(p, t)| Answer { prompt_id: p.id.clone(), category: p.category.clone(), answer_text: t.clone(), failed: false })
                .collect(),
        }
    }

    fn heading_count(text: &str) -> usize {
        text.lines().filter(|l| l.starts_with("### ")).count()
    }

    /// Splits a rendered summary back into per-section bodies.
    fn bodies_of(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for chunk in text.split("\n### ").skip(1) {
            let body = chunk.split_once('\n').map_or("", |(_, b)| b);
            out.push(body.strip_suffix('\n').unwrap_or(body).to_string());
        }
        out
    }

    #[test]
    fn nine_sections_in_order() {
        let texts: Vec<String> = (1..=9).map(|i| format!("answer {i}")).collect();
        let s = aggregate(&answers(&texts));
        assert_eq!(heading_count(&s.text), 9);
        assert!(s.text.starts_with(SUMMARY_HEADER));
        assert!(s.text.contains("### Lighting and Shadows\nanswer 1\n"));
        let eyes = s.text.find("### Eyes and Pupils").unwrap();
        let hair = s.text.find("### Facial Hair").unwrap();
        assert!(hair < eyes);
        assert_eq!(s.char_count, s.text.chars().count());
        assert_eq!(bodies_of(&s.text), texts);
    }

    #[test]
    fn deterministic() {
        let texts: Vec<String> = (1..=9).map(|i| "x".repeat(i * 3)).collect();
        assert_eq!(aggregate(&answers(&texts)).text, aggregate(&answers(&texts)).text);
    }

    #[test]
    fn heading_like_answer_lines_are_escaped() {
        let texts = vec!["### injected\nok".to_string()];
        let s = aggregate(&answers(&texts));
        assert_eq!(heading_count(&s.text), 1);
        assert!(s.text.contains("\\### injected"));
    }

    #[test]
    fn failed_answer_placeholder() {
        let mut set = answers(&["a".into(), String::new()]);
        set.answers[1].failed = true;
        let s = aggregate(&set);
        assert!(s.text.contains(FAILED_ANSWER));
        assert_eq!(heading_count(&s.text), 2);
    }

    #[test]
    fn custom_category_uses_tag() {
        let set = AnswerSet {
            image_sha256: String::new(),
            prompt_set_version: "v".into(),
            answers: vec![Answer {
                prompt_id: "teeth".into(),
                category: PromptCategory::Custom("teeth".into()),
                answer_text: "even".into(),
                failed: false,
            }],
        };
        assert!(aggregate(&set).text.contains("### teeth\neven\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn truncation_rule(lens in prop::collection::vec(0usize..3000, 9), budget in 1500usize..9000) {
            let texts: Vec<String> = lens.iter().enumerate()
                .map(|(i, &n)| std::iter::repeat_n(char::from(b'a' + i as u8), n).collect())
                .collect();
            let set = answers(&texts);
            let s = aggregate_with_budget(&set, SummaryBudget(budget));
            prop_assert_eq!(heading_count(&s.text), 9);

            let fixed = aggregate_with_budget(&answers(&vec![String::new(); 9]), SummaryBudget(usize::MAX)).char_count;
            let total: usize = lens.iter().sum();
            let bodies = bodies_of(&s.text);
            prop_assert_eq!(bodies.len(), 9);
            if fixed + total <= budget {
                prop_assert_eq!(&bodies, &texts);
            } else {
                prop_assert!(s.char_count <= budget);
                let available = budget - fixed;
                for (body, (orig, &len)) in bodies.iter().zip(texts.iter().zip(&lens)) {
                    let allowed = available * len / total;
                    let got = body.chars().count();
                    if allowed >= len {
                        prop_assert_eq!(body, orig);
                    } else if allowed == 0 {
                        prop_assert_eq!(got, 0);
                    } else {
                        prop_assert_eq!(got, allowed);
                        prop_assert!(body.ends_with(TRUNCATION_MARK));
                        let kept: String = body.chars().take(allowed - 1).collect();
                        prop_assert!(orig.starts_with(&kept));
                    }
                }
            }
        }
    }
}
