//! The four agent tools and their dispatch.

use serde_json::{json, Map, Value};

use crate::crashdump::{
    parse_crash_extinfo, parse_crash_stack, sanitize_crash_extinfo, sanitize_crash_stack, Crashdump,
    CRASH_EXTINFO, CRASH_STACK,
};
use crate::llm::{ToolCall, ToolSpec};
use crate::reponav::{
    get_nearby_code, get_term_definition, NavError, NavErrorKind, RepoSnapshot, SymbolResolver, TermOptions,
};

pub const GET_CRASH_EXTINFO: &str = "get_crash_extinfo";
pub const GET_CRASH_STACK: &str = "get_crash_stack";
pub const GET_NEARBY_CODE: &str = "get_nearby_code";
pub const GET_TERM_DEFINITION: &str = "get_term_definition";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ToolKind {
    CrashExtinfo,
    CrashStack,
    NearbyCode,
    TermDefinition,
}

#[derive(Debug, Clone)]
pub struct ToolRegistry {
    entries: Vec<(ToolSpec, ToolKind)>,
}

impl Default for ToolRegistry {
    fn default() -> Self {
        Self::new(true)
    }
}

impl ToolRegistry {
    /// The standard tool set; `deep_search = false` drops
    /// `get_term_definition` and nothing else.
    pub fn new(deep_search: bool) -> Self {
        let no_args = json!({"type": "object", "properties": {}, "required": []});
        let mut entries = vec![
            (
                ToolSpec {
                    name: GET_CRASH_EXTINFO.into(),
                    description: "Returns the crash signal summary (signal name, number and code, faulting address) with host and system metadata.".into(),
                    parameters: no_args.clone(),
                },
                ToolKind::CrashExtinfo,
            ),
            (
                ToolSpec {
                    name: GET_CRASH_STACK.into(),
                    description: "Returns the stack report of the crash: symbolic backtraces of the relevant threads and any pending exceptions.".into(),
                    parameters: no_args,
                },
                ToolKind::CrashStack,
            ),
            (
                ToolSpec {
                    name: GET_NEARBY_CODE.into(),
                    description: "Returns the source lines around a line of a repository file: 10 lines before, the line itself and 10 lines after. Each line is prefixed with its number and '|'.".into(),
                    parameters: json!({
                        "type": "object",
                        "properties": {
                            "path": {"type": "string", "description": "Repository-relative file path"},
                            "line": {"type": "integer", "description": "1-based line number"}
                        },
                        "required": ["path", "line"]
                    }),
                },
                ToolKind::NearbyCode,
            ),
        ];
        if deep_search {
            entries.push((
                ToolSpec {
                    name: GET_TERM_DEFINITION.into(),
                    description: "Given a file, a line number and an identifier appearing on that line, returns the repository location where the identifier is defined.".into(),
                    parameters: json!({
                        "type": "object",
                        "properties": {
                            "path": {"type": "string", "description": "Repository-relative file path"},
                            "line": {"type": "integer", "description": "1-based line number where the identifier appears"},
                            "term": {"type": "string", "description": "The identifier to resolve"}
                        },
                        "required": ["path", "line", "term"]
                    }),
                },
                ToolKind::TermDefinition,
            ));
        }
        Self { entries }
    }

    pub fn specs(&self) -> Vec<ToolSpec> {
        self.entries.iter().map(|(s, _)| s.clone()).collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(s, _)| s.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names().any(|n| n == name)
    }

    fn kind(&self, name: &str) -> Option<ToolKind> {
        self.entries.iter().find(|(s, _)| s.name == name).map(|(_, k)| *k)
    }

    /// Bullet list for the system prompt.
    pub fn inventory(&self) -> String {
        self.entries
            .iter()
            .map(|(s, _)| format!("- {}: {}", s.name, s.description))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// What a tool invocation can see.
pub struct ToolContext<'a> {
    pub dump: &'a Crashdump,
    pub repo: &'a RepoSnapshot,
    pub resolver: &'a mut dyn SymbolResolver,
    pub sanitize: bool,
    pub term_options: TermOptions,
}

/// Tool output as sent back to the model. `error` is set when `text` is an
/// `ERROR(<kind>): ...` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolResult {
    pub text: String,
    pub error: Option<NavErrorKind>,
}

impl From<NavError> for ToolResult {
    fn from(e: NavError) -> Self {
        Self {
            text: e.to_string(),
            error: Some(e.kind),
        }
    }
}

impl ToolResult {
    fn ok(text: String) -> Self {
        Self { text, error: None }
    }
}

fn invalid(detail: impl Into<String>) -> NavError {
    NavError::new(NavErrorKind::InvalidArgument, detail)
}

fn str_arg<'a>(args: &'a Map<String, Value>, key: &str) -> Result<&'a str, NavError> {
    match args.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(other) => Err(invalid(format!("'{key}' must be a string, got {other}"))),
        None => Err(invalid(format!("missing argument '{key}'"))),
    }
}

/// Integers, or strings holding one; anything else is malformed.
fn line_arg(args: &Map<String, Value>) -> Result<i64, NavError> {
    match args.get("line") {
        Some(Value::Number(n)) => n
            .as_i64()
            .ok_or_else(|| invalid(format!("'line' must be an integer, got {n}"))),
        Some(Value::String(s)) => s
            .trim()
            .parse()
            .map_err(|_| invalid(format!("'line' must be an integer, got \"{s}\""))),
        Some(other) => Err(invalid(format!("'line' must be an integer, got {other}"))),
        None => Err(invalid("missing argument 'line'")),
    }
}

fn section(dump: &Crashdump, name: &str) -> Result<String, NavError> {
    dump.get_section(name)
        .map(str::to_string)
        .map_err(|e| invalid(e.to_string()))
}

fn dispatch(kind: ToolKind, args: &Map<String, Value>, ctx: &mut ToolContext<'_>) -> Result<String, NavError> {
    if let Some(raw) = args.get("_unparsed") {
        return Err(invalid(format!("arguments are not a JSON object: {raw}")));
    }
    match kind {
        ToolKind::CrashStack => {
            let raw = section(ctx.dump, CRASH_STACK)?;
            Ok(if ctx.sanitize {
                sanitize_crash_stack(&parse_crash_stack(&raw))
            } else {
                raw
            })
        }
        ToolKind::CrashExtinfo => {
            let raw = section(ctx.dump, CRASH_EXTINFO)?;
            Ok(match parse_crash_extinfo(&raw) {
                Ok(info) if ctx.sanitize => sanitize_crash_extinfo(&info),
                _ => raw,
            })
        }
        ToolKind::NearbyCode => {
            let path = str_arg(args, "path")?;
            let line = line_arg(args)?;
            let snippet = get_nearby_code(ctx.repo, path, line)?;
            Ok(format!("{}\n{}", snippet.path, snippet.render()))
        }
        ToolKind::TermDefinition => {
            let path = str_arg(args, "path")?;
            let line = line_arg(args)?;
            let term = str_arg(args, "term")?;
            let def = get_term_definition(ctx.repo, &mut *ctx.resolver, path, line, term, ctx.term_options)?;
            Ok(def.render())
        }
    }
}

/// Run one tool call. Failures come back as error text, never as `Err`.
pub fn execute_tool(registry: &ToolRegistry, call: &ToolCall, ctx: &mut ToolContext<'_>) -> ToolResult {
    let Some(kind) = registry.kind(&call.name) else {
        return invalid(format!("unknown tool '{}'", call.name)).into();
    };
    match dispatch(kind, &call.arguments, ctx) {
        Ok(text) => ToolResult::ok(text),
        Err(e) => e.into(),
    }
}
