//! Answer normalization, exact-match grading, and an optional model judge
//! for answers that fail exact match.

use crate::agents::{AgentError, ChatClient, ChatMessage, ChatRequest};

/// Case-fold, trim, collapse internal whitespace, strip terminal punctuation.
pub fn normalize_answer(answer: &str) -> String {
    let collapsed = answer
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    collapsed
        .trim_end_matches(['.', '!', '?', ',', ';', ':'])
        .trim()
        .to_string()
}

pub fn answers_match(predicted: &str, gold: &str) -> bool {
    let p = normalize_answer(predicted);
    !p.is_empty() && p == normalize_answer(gold)
}

/// Second opinion on a predicted answer.
pub trait Judge: Send + Sync {
    fn equivalent(&self, question: &str, predicted: &str, gold: &str) -> Result<bool, AgentError>;
}

const JUDGE_SYSTEM: &str = "You grade answers. Reply with one line: `VERDICT: correct` if the \
predicted answer means the same as the reference answer, otherwise `VERDICT: incorrect`.";

/// Chat-model judge. Its calls are not charged to any run.
#[derive(Debug, Clone)]
pub struct ChatJudge {
    client: ChatClient,
    model: String,
}

impl ChatJudge {
    pub fn new(client: ChatClient, model: impl Into<String>) -> Self {
        ChatJudge {
            client,
            model: model.into(),
        }
    }
}

/// Last `VERDICT:` line wins; anything else is unparseable.
pub fn parse_verdict(text: &str) -> Option<bool> {
    text.lines().rev().find_map(|line| {
        let v = line.trim().strip_prefix("VERDICT:")?.trim().to_lowercase();
        match v.trim_end_matches('.') {
            "correct" => Some(true),
            "incorrect" => Some(false),
            _ => None,
        }
    })
}

impl Judge for ChatJudge {
    fn equivalent(&self, question: &str, predicted: &str, gold: &str) -> Result<bool, AgentError> {
        let request = ChatRequest {
            model: self.model.clone(),
            messages: vec![
                ChatMessage::system(JUDGE_SYSTEM),
                ChatMessage::user(format!(
                    "Question: {question}\nReference answer: {gold}\nPredicted answer: {predicted}"
                )),
            ],
            max_tokens: 32,
        };
        let resp = self.client.complete(&request)?;
        parse_verdict(&resp.text).ok_or_else(|| {
            AgentError::MalformedResponse(format!("no verdict in `{}`", resp.text.trim()))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts() {
        assert_eq!(parse_verdict("VERDICT: correct"), Some(true));
        assert_eq!(parse_verdict("thinking\nVERDICT: Incorrect."), Some(false));
        assert_eq!(parse_verdict("VERDICT: maybe"), None);
        assert_eq!(parse_verdict("correct"), None);
    }

    #[test]
    fn normalization() {
        assert_eq!(
            normalize_answer("  The   Eiffel Tower. "),
            "the eiffel tower"
        );
        assert!(answers_match("PARIS!", "paris"));
        assert!(answers_match("42", " 42 "));
        assert!(!answers_match("", ""));
        assert!(!answers_match("Paris, France", "Paris"));
    }
}
