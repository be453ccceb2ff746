use crate::error::{Error, Result};

/// Decides whether a candidate answer conveys the reference answer.
pub trait Judge: Send + Sync {
    fn judge(&self, question: &str, reference: &str, candidate: &str) -> Result<bool>;
}

/// Case- and punctuation-insensitive containment of the reference in the
/// candidate, on word boundaries.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockJudge;

pub fn normalize(text: &str) -> String {
    text.chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

impl Judge for MockJudge {
    fn judge(&self, _question: &str, reference: &str, candidate: &str) -> Result<bool> {
        let (r, c) = (normalize(reference), normalize(candidate));
        if r.is_empty() {
            return Ok(c.is_empty());
        }
        Ok(format!(" {c} ").contains(&format!(" {r} ")))
    }
}

pub fn judge_answer(judge: &dyn Judge, question: &str, reference: &str, candidate: &str) -> Result<bool> {
    judge.judge(question, reference, candidate)
}

/// Reads a judge model's reply, which must be exactly "Yes" or "No" up to
/// case, surrounding whitespace or quotes, and a trailing period.
pub fn parse_judge_reply(reply: &str) -> Result<bool> {
    let t = reply.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`');
    let t = t.strip_suffix('.').unwrap_or(t).trim();
    if t.eq_ignore_ascii_case("yes") {
        Ok(true)
    } else if t.eq_ignore_ascii_case("no") {
        Ok(false)
    } else {
        Err(Error::JudgeProtocol(format!("expected Yes or No, got {reply:?}")))
    }
}
