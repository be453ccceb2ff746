use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYSTEM: &str = include_str!("../../prompts/system.txt");
const INSTRUCTION: &str = include_str!("../../prompts/instruction.txt");
const LAST_ROUND: &str = include_str!("../../prompts/last_round.txt");
const JUDGE: &str = include_str!("../../prompts/judge.txt");

/// Prompt templates. `system` takes `{question}`; `judge` takes `{question}`,
/// `{ground_truth_answer}` and `{agent_answer}`. Other braces are literal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompts {
    pub system: String,
    pub instruction: String,
    pub last_round: String,
    pub judge: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Prompts {
            system: SYSTEM.to_string(),
            instruction: INSTRUCTION.to_string(),
            last_round: LAST_ROUND.to_string(),
            judge: JUDGE.to_string(),
        }
    }
}

impl Prompts {
    /// Defaults overridden by `system.txt`, `instruction.txt`, `last_round.txt`
    /// and `judge.txt` where present in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut p = Prompts::default();
        for (name, slot) in [
            ("system.txt", &mut p.system),
            ("instruction.txt", &mut p.instruction),
            ("last_round.txt", &mut p.last_round),
            ("judge.txt", &mut p.judge),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(&path)?;
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.system.contains("{question}") {
            return Err(Error::Config("system prompt lacks {question}".into()));
        }
        for key in ["{question}", "{ground_truth_answer}", "{agent_answer}"] {
            if !self.judge.contains(key) {
                return Err(Error::Config(format!("judge prompt lacks {key}")));
            }
        }
        if self.instruction.trim().is_empty() || self.last_round.trim().is_empty() {
            return Err(Error::Config("instruction and last-round prompts must be non-empty".into()));
        }
        Ok(())
    }

    pub fn format_system(&self, question: &str) -> String {
        self.system.replace("{question}", question)
    }

    pub fn format_judge(&self, question: &str, reference: &str, candidate: &str) -> String {
        // Substitute in one pass so placeholder-like text in the inputs stays put.
        let mut out = String::with_capacity(self.judge.len() + question.len() + reference.len() + candidate.len());
        let mut rest = self.judge.as_str();
        let keys = [("{question}", question), ("{ground_truth_answer}", reference), ("{agent_answer}", candidate)];
        while let Some((pos, key, value)) =
            keys.iter().filter_map(|(k, v)| rest.find(k).map(|p| (p, *k, *v))).min_by_key(|(p, _, _)| *p)
        {
            out.push_str(&rest[..pos]);
            out.push_str(value);
            rest = &rest[pos + key.len()..];
        }
        out.push_str(rest);
        out
    }
}
