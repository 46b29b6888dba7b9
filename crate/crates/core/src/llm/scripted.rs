//! Deterministic replay backend.
//!
//! A script is JSON Lines, one reply per line:
//!
//! ```text
//! {"tool": "get_crash_stack", "args": {}}
//! {"final": "The pool is freed twice ..."}
//! {"files": ["src/pool.cpp"]}
//! ```
//!
//! Tool steps naming a tool that the current request does not offer are
//! skipped, so one script replays sensibly with deep search on or off and
//! during the tool-less file elicitation turn.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{check_transcript, ChatBackend, ChatMessage, LlmError, ToolCall, ToolSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptStep {
    Tool {
        tool: String,
        #[serde(default)]
        args: Map<String, Value>,
    },
    Final {
        #[serde(rename = "final")]
        text: String,
    },
    Files {
        files: Vec<String>,
    },
}

impl ScriptStep {
    pub fn tool(name: &str, args: Value) -> Self {
        ScriptStep::Tool {
            tool: name.to_string(),
            args: args.as_object().cloned().unwrap_or_default(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("script steps serialize")
    }
}

pub fn parse_script(text: &str) -> Result<Vec<ScriptStep>, LlmError> {
    let steps = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let value: Value = serde_json::from_str(l)
                .map_err(|e| LlmError::MalformedScript(format!("line {}: {e}", i + 1)))?;
            let keys = value.as_object().map_or(0, |o| o.len());
            let step: ScriptStep = serde_json::from_value(value)
                .map_err(|_| LlmError::MalformedScript(format!("line {}: unknown reply shape", i + 1)))?;
            // `{"tool": .., "junk": ..}` would otherwise slip through untagged matching.
            let expected = match &step {
                ScriptStep::Tool { .. } => 1..=2,
                _ => 1..=1,
            };
            if !expected.contains(&keys) {
                return Err(LlmError::MalformedScript(format!("line {}: unexpected keys", i + 1)));
            }
            Ok(step)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if steps.is_empty() {
        return Err(LlmError::MalformedScript("script has no replies".into()));
    }
    Ok(steps)
}

pub fn load_script(path: &Path) -> Result<Vec<ScriptStep>, LlmError> {
    let text = fs::read_to_string(path)
        .map_err(|e| LlmError::MalformedScript(format!("{}: {e}", path.display())))?;
    parse_script(&text)
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    steps: Vec<ScriptStep>,
    cursor: usize,
    replies: usize,
}

impl ScriptedBackend {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        Self {
            steps,
            cursor: 0,
            replies: 0,
        }
    }

    pub fn remaining(&self) -> usize {
        self.steps.len() - self.cursor
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&mut self, messages: &[ChatMessage], tools: &[ToolSpec]) -> Result<ChatMessage, LlmError> {
        check_transcript(messages)?;
        loop {
            let step = self
                .steps
                .get(self.cursor)
                .ok_or(LlmError::ScriptExhausted(self.replies))?
                .clone();
            self.cursor += 1;
            let reply = match step {
                ScriptStep::Tool { tool, args } => {
                    if !tools.iter().any(|t| t.name == tool) {
                        continue;
                    }
                    ChatMessage::assistant_calls(vec![ToolCall {
                        id: format!("call_{}", self.cursor),
                        name: tool,
                        arguments: args,
                    }])
                }
                ScriptStep::Final { text } => ChatMessage::assistant(text),
                ScriptStep::Files { files } => {
                    ChatMessage::assistant(serde_json::to_string(&files).expect("strings serialize"))
                }
            };
            self.replies += 1;
            return Ok(reply);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn spec(name: &str) -> ToolSpec {
        ToolSpec {
            name: name.into(),
            description: String::new(),
            parameters: json!({"type": "object", "properties": {}}),
        }
    }

    fn sys() -> Vec<ChatMessage> {
        vec![ChatMessage::system("s")]
    }

    #[test]
    fn replays_tool_then_final() {
        let steps = parse_script("{\"tool\": \"get_crash_stack\", \"args\": {}}\n{\"final\": \"root cause is X\"}\n").unwrap();
        assert_eq!(steps.len(), 2);
        let mut b = ScriptedBackend::new(steps);
        let tools = [spec("get_crash_stack")];
        let m = b.complete(&sys(), &tools).unwrap();
        assert_eq!(m.tool_calls.len(), 1);
        assert_eq!(m.tool_calls[0].name, "get_crash_stack");
        let m = b.complete(&sys(), &tools).unwrap();
        assert!(m.tool_calls.is_empty());
        assert_eq!(m.content, "root cause is X");
        assert_eq!(b.complete(&sys(), &tools).unwrap_err(), LlmError::ScriptExhausted(2));
    }

    #[test]
    fn files_reply_is_a_json_array() {
        let mut b = ScriptedBackend::new(parse_script(r#"{"files": ["src/a.cpp", "b.h"]}"#).unwrap());
        assert_eq!(b.complete(&sys(), &[]).unwrap().content, r#"["src/a.cpp","b.h"]"#);
    }

    #[test]
    fn unoffered_tools_are_skipped() {
        let text = r#"{"tool": "get_term_definition", "args": {"path": "a.cpp", "line": 1, "term": "x"}}
{"tool": "get_nearby_code", "args": {"path": "a.cpp", "line": 1}}
{"final": "done"}"#;
        let mut b = ScriptedBackend::new(parse_script(text).unwrap());
        let m = b.complete(&sys(), &[spec("get_nearby_code")]).unwrap();
        assert_eq!(m.tool_calls[0].name, "get_nearby_code");
    }

    #[test]
    fn malformed_scripts() {
        assert!(matches!(parse_script(""), Err(LlmError::MalformedScript(_))));
        assert!(matches!(parse_script("\n  \n"), Err(LlmError::MalformedScript(_))));
        assert!(matches!(parse_script("{\"final\": 3}"), Err(LlmError::MalformedScript(_))));
        assert!(matches!(parse_script("not json"), Err(LlmError::MalformedScript(_))));
        assert!(matches!(parse_script(r#"{"say": "hi"}"#), Err(LlmError::MalformedScript(_))));
        assert!(matches!(parse_script(r#"{"final": "a", "files": []}"#), Err(LlmError::MalformedScript(_))));
    }

    #[test]
    fn rejects_transcript_without_system_prompt() {
        let mut b = ScriptedBackend::new(parse_script(r#"{"final": "x"}"#).unwrap());
        assert!(matches!(
            b.complete(&[ChatMessage::user("u")], &[]),
            Err(LlmError::InvalidRequest(_))
        ));
        assert_eq!(b.remaining(), 1);
    }

    #[test]
    fn step_lines_round_trip() {
        for step in [
            ScriptStep::tool("get_nearby_code", json!({"path": "a.cpp", "line": 3})),
            ScriptStep::Final { text: "x".into() },
            ScriptStep::Files { files: vec!["a".into()] },
        ] {
            assert_eq!(parse_script(&step.to_line()).unwrap(), vec![step]);
        }
    }
}
