use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

const BUILTIN: &str = include_str!("../../assets/prompts.txt");

pub const REQUIRED_BLOCKS: [&str; 6] = [
    "system",
    "user",
    "elicit_files",
    "budget_exhausted",
    "consolidate",
    "judge",
];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt file {0}: {1}")]
    Io(String, std::io::Error),
    #[error("prompt file is missing block '{0}'")]
    MissingBlock(String),
}

/// Named prompt blocks, loaded from the `=== name ===` text format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    blocks: BTreeMap<String, String>,
}

impl Default for Prompts {
    fn default() -> Self {
        Self::parse(BUILTIN).expect("built-in prompts are complete")
    }
}

impl Prompts {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut blocks = BTreeMap::new();
        let mut current: Option<(String, Vec<&str>)> = None;
        for line in text.lines() {
            let t = line.trim();
            if let Some(name) = t.strip_prefix("===").and_then(|r| r.strip_suffix("===")) {
                if let Some((n, body)) = current.take() {
                    blocks.insert(n, body.join("\n").trim().to_string());
                }
                current = Some((name.trim().to_string(), Vec::new()));
            } else if let Some((_, body)) = current.as_mut() {
                body.push(line);
            }
        }
        if let Some((n, body)) = current {
            blocks.insert(n, body.join("\n").trim().to_string());
        }
        for name in REQUIRED_BLOCKS {
            if !blocks.contains_key(name) {
                return Err(PromptError::MissingBlock(name.to_string()));
            }
        }
        Ok(Self { blocks })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = fs::read_to_string(path).map_err(|e| PromptError::Io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    /// Block text with `{key}` placeholders substituted.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> String {
        let mut text = self.blocks.get(name).cloned().unwrap_or_default();
        for (k, v) in vars {
            text = text.replace(&format!("{{{k}}}"), v);
        }
        text
    }
}
