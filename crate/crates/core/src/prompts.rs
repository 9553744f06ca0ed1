//! Prompt templates and their renderers.
//!
//! The template texts live under `assets/prompts/` and are compiled in.
//! Renderers are pure: identical inputs produce byte-identical messages.

use crate::sample::AttributionTask;

/// Bumped whenever any template text or layout changes.
pub const PROMPT_VERSION: &str = "1";

pub const MULTIHOP_SYSTEM: &str = include_str!("../assets/prompts/multihop_system.txt");
const MULTIHOP_USER_HEADER: &str = include_str!("../assets/prompts/multihop_user_header.txt");
const MULTIHOP_USER_FOOTER: &str = include_str!("../assets/prompts/multihop_user_footer.txt");
pub const DIALOGUE_SYSTEM: &str = include_str!("../assets/prompts/dialogue_system.txt");
const DIALOGUE_USER_HEADER: &str = include_str!("../assets/prompts/dialogue_user_header.txt");
const DIALOGUE_USER_FOOTER: &str = include_str!("../assets/prompts/dialogue_user_footer.txt");
pub const ATTRIBUTION_SYSTEM: &str = include_str!("../assets/prompts/attribution_system.txt");
const ATTRIBUTION_INSTRUCTION: &str =
    include_str!("../assets/prompts/attribution_instruction.txt");
pub const REPHRASE_SYSTEM: &str = include_str!("../assets/prompts/rephrase_system.txt");

pub fn multihop_system() -> &'static str {
    MULTIHOP_SYSTEM.trim_end()
}

pub fn dialogue_system() -> &'static str {
    DIALOGUE_SYSTEM.trim_end()
}

pub fn attribution_system() -> &'static str {
    ATTRIBUTION_SYSTEM.trim_end()
}

pub fn rephrase_system() -> &'static str {
    REPHRASE_SYSTEM.trim_end()
}

/// User message for multi-hop generation: one `Title:` block and one
/// `[i, 0] sentence` line per chain position.
pub fn multihop_user<'a>(items: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut out = String::from(MULTIHOP_USER_HEADER.trim_end());
    out.push_str("\n\n");
    for (i, (title, sentence)) in items.into_iter().enumerate() {
        out.push_str(&format!("Title: {title}\n\n[{i}, 0] {sentence}\n\n"));
    }
    out.push_str(MULTIHOP_USER_FOOTER.trim_end());
    out
}

/// User message for dialogue generation: the passage with sentences
/// numbered from 0.
pub fn dialogue_user<'a>(title: &str, sentences: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::from(DIALOGUE_USER_HEADER.trim_end());
    out.push_str(&format!("\n\nTitle: {title}\n\n"));
    for (i, s) in sentences.into_iter().enumerate() {
        out.push_str(&format!("{i}. {s}\n\n"));
    }
    out.push_str(DIALOGUE_USER_FOOTER.trim_end());
    out
}

/// `(0), (1), …` — the choice list and the target-string format.
pub fn parenthesized(numbers: impl IntoIterator<Item = usize>) -> String {
    numbers
        .into_iter()
        .map(|n| format!("({n})"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// User message for sentence attribution over a task's documents. Sentences
/// are numbered globally; conversation history, when present, precedes the
/// question.
pub fn attribution_user(task: &AttributionTask) -> String {
    let mut out = String::from("Context Document:\n\n");
    let mut n = 0;
    let blocks: Vec<String> = task
        .documents
        .iter()
        .map(|doc| {
            let mut block = format!("Title: {}", doc.title);
            for s in &doc.sentences {
                block.push_str(&format!("\n({n}) {s}"));
                n += 1;
            }
            block
        })
        .collect();
    out.push_str(&blocks.join("\n\n"));
    out.push_str("\n\n");
    if !task.history.is_empty() {
        out.push_str("Conversation history:\n\n");
        for turn in &task.history {
            out.push_str(&format!("Q: {}\nA: {}\n\n", turn.question, turn.answer));
        }
    }
    out.push_str(&format!("Question: {}\n\nAnswer: {}\n\n", task.question, task.answer));
    let choices = parenthesized(0..task.sentence_count());
    out.push_str(&ATTRIBUTION_INSTRUCTION.trim_end().replace("{choices}", &choices));
    out
}

/// User message for rewriting a conversational turn as a standalone one.
pub fn rephrase_user(history: &[crate::sample::Turn], question: &str, answer: &str) -> String {
    let mut out = String::from("Conversation history:\n");
    if history.is_empty() {
        out.push_str("(none)\n");
    }
    for (i, turn) in history.iter().enumerate() {
        out.push_str(&format!("Q{}: {}\nA{}: {}\n", i + 1, turn.question, i + 1, turn.answer));
    }
    out.push_str(&format!("\nQuestion: {question}\nAnswer: {answer}"));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{Document, Turn};

    #[test]
    fn multihop_user_layout() {
        let text = multihop_user([("Alpha", "Alpha is a."), ("Beta", "Beta is b.")]);
        assert_eq!(
            text,
            "Here are the titles and sentences:\n\nTitle: Alpha\n\n[0, 0] Alpha is a.\n\n\
             Title: Beta\n\n[1, 0] Beta is b.\n\nUse the provided sentences to generate a \
             question-answer pair following the specified guidelines. Respond only in raw JSON \
             with no additional formatting or markdown."
        );
    }

    #[test]
    fn dialogue_user_numbers_from_zero() {
        let text = dialogue_user("T", ["a.", "b.", "c.", "d."]);
        for (i, s) in ["a.", "b.", "c.", "d."].iter().enumerate() {
            assert!(text.contains(&format!("\n{i}. {s}\n")));
        }
        assert!(!text.contains("\n4. "));
        assert!(text.ends_with("Return only JSON, with no extra text."));
    }

    #[test]
    fn system_prompts_carry_key_phrases() {
        assert!(multihop_system().contains("\"ids\": A list of JSON-compatible arrays"));
        assert!(dialogue_system().ends_with("containing 5 to 10 question-answer pairs."));
        assert!(attribution_system().starts_with("You are an AI assistant that identifies"));
    }

    #[test]
    fn attribution_user_numbers_globally() {
        let task = AttributionTask {
            question: "Who?".into(),
            answer: "Bob.".into(),
            history: vec![Turn { question: "Q0".into(), answer: "A0".into() }],
            documents: vec![
                Document { article_id: "x".into(), title: "X".into(), sentences: vec!["x0.".into(), "x1.".into()] },
                Document { article_id: "y".into(), title: "Y".into(), sentences: vec!["y0.".into()] },
            ],
        };
        let text = attribution_user(&task);
        assert!(text.starts_with("Context Document:\n\nTitle: X\n(0) x0.\n(1) x1.\n\nTitle: Y\n(2) y0.\n\n"));
        assert!(text.contains("Conversation history:\n\nQ: Q0\nA: A0\n\nQuestion: Who?\n\nAnswer: Bob.\n\n"));
        assert!(text.contains("from the following choices: (0), (1), (2). Select only"));
        assert!(text.ends_with("Answer only with the corresponding number(s) in parentheses, without additional explanation."));
    }

    #[test]
    fn attribution_user_without_history_has_no_history_block() {
        let task = AttributionTask {
            question: "q".into(),
            answer: "a".into(),
            history: vec![],
            documents: vec![Document { article_id: "x".into(), title: "X".into(), sentences: vec!["s.".into()] }],
        };
        assert!(!attribution_user(&task).contains("Conversation history"));
    }
}
