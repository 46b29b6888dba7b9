//! The localization agent.
//!
//! One run has two phases. First the model calls tools until it answers in
//! plain text (its explanation) or the interaction budget runs out. Then it
//! is asked once more for the culprit files as a JSON array.

mod prompts;
mod tools;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::thread;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::crashdump::{Crashdump, CRASH_EXTINFO, CRASH_STACK};
use crate::llm::{BackendConfig, ChatBackend, ChatMessage, LlmError};
use crate::reponav::{NavErrorKind, RepoSnapshot, ResolverConfig, SymbolResolver, TermOptions};

pub use prompts::{PromptError, Prompts};
pub use tools::{
    execute_tool, ToolContext, ToolRegistry, ToolResult, GET_CRASH_EXTINFO, GET_CRASH_STACK, GET_NEARBY_CODE,
    GET_TERM_DEFINITION,
};

pub const DEFAULT_MAX_TOOL_INTERACTIONS: usize = 25;
pub const DEFAULT_RUNS: usize = 10;

#[derive(Debug, Clone)]
pub struct AgentConfig {
    /// Tool calls allowed per run; every call counts, not every reply.
    pub max_tool_interactions: usize,
    pub sanitize_inputs: bool,
    pub enable_deep_search: bool,
    pub backend: BackendConfig,
    pub resolver: ResolverConfig,
    pub term_options: TermOptions,
    pub prompts: Prompts,
}

impl AgentConfig {
    pub fn new(backend: BackendConfig) -> Self {
        Self {
            max_tool_interactions: DEFAULT_MAX_TOOL_INTERACTIONS,
            sanitize_inputs: false,
            enable_deep_search: true,
            backend,
            resolver: ResolverConfig::default(),
            term_options: TermOptions::default(),
            prompts: Prompts::default(),
        }
    }

    pub fn registry(&self) -> ToolRegistry {
        ToolRegistry::new(self.enable_deep_search)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Completed,
    BudgetExhausted,
    BackendFailed,
    ContextLengthExceeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolError {
    pub tool: String,
    pub kind: NavErrorKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRun {
    pub run_index: usize,
    #[serde(default)]
    pub messages: Vec<ChatMessage>,
    pub explanation: String,
    /// Normalized, duplicate-free, in first-mention order.
    pub predicted_files: Vec<String>,
    /// Entries of `predicted_files` that did not resolve to a repository file.
    pub unresolved_files: Vec<String>,
    pub tool_call_count: usize,
    pub tool_errors: Vec<ToolError>,
    pub status: RunStatus,
    /// Set when the run was repeated with sanitized crash sections after a
    /// context overflow.
    pub sanitized_retry: bool,
    pub diagnostics: Vec<String>,
}

impl AgentRun {
    /// A completed run known only by its outcome, e.g. loaded from elsewhere.
    pub fn from_prediction(run_index: usize, explanation: impl Into<String>, predicted_files: Vec<String>) -> Self {
        Self {
            explanation: explanation.into(),
            predicted_files,
            status: RunStatus::Completed,
            diagnostics: Vec::new(),
            ..Self::failed(run_index, RunStatus::Completed, Vec::new(), String::new())
        }
    }

    fn failed(run_index: usize, status: RunStatus, messages: Vec<ChatMessage>, diagnostic: String) -> Self {
        Self {
            run_index,
            messages,
            explanation: String::new(),
            predicted_files: Vec::new(),
            unresolved_files: Vec::new(),
            tool_call_count: 0,
            tool_errors: Vec::new(),
            status,
            sanitized_retry: false,
            diagnostics: vec![diagnostic],
        }
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = &crate::llm::ToolCall> {
        self.messages.iter().flat_map(|m| m.tool_calls.iter())
    }

    /// Write the run as JSON Lines: a summary record, then one message per line.
    pub fn write_transcript(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        let mut summary = serde_json::to_value(self)?;
        if let Value::Object(map) = &mut summary {
            map.remove("messages");
        }
        writeln!(out, "{}", serde_json::json!({ "run": summary }))?;
        for m in &self.messages {
            writeln!(out, "{}", serde_json::to_string(m)?)?;
        }
        out.flush()
    }

    /// Inverse of [`AgentRun::write_transcript`].
    pub fn read_transcript(path: &Path) -> std::io::Result<AgentRun> {
        let bad = |e: serde_json::Error| std::io::Error::new(std::io::ErrorKind::InvalidData, e);
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head: Value = serde_json::from_str(lines.next().unwrap_or("")).map_err(bad)?;
        let mut run: AgentRun = serde_json::from_value(head.get("run").cloned().unwrap_or(Value::Null)).map_err(bad)?;
        run.messages = lines.map(serde_json::from_str).collect::<Result<_, _>>().map_err(bad)?;
        Ok(run)
    }
}

/// Creates the backend for run `i`. Each run needs a private instance.
pub type BackendFactory<'a> = dyn Fn(usize) -> Result<Box<dyn ChatBackend>, LlmError> + Sync + 'a;

enum Aborted {
    ContextLength(String, Vec<ChatMessage>),
    Backend(String, Vec<ChatMessage>),
}

fn path_token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[A-Za-z0-9_./\\+\-]+\.(?:cpp|cxx|cc|c|hpp|hxx|hh|h|inl)\b").unwrap())
}

/// File answer extraction: the first JSON array of strings in the reply,
/// else path-shaped tokens line by line.
pub fn extract_file_list(reply: &str) -> Vec<String> {
    for (start, _) in reply.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&reply[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Array(items))) = stream.next() {
            let paths: Vec<String> = items
                .iter()
                .filter_map(|v| v.as_str())
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            if !paths.is_empty() || items.is_empty() {
                return paths;
            }
        }
    }
    reply
        .lines()
        .flat_map(|line| path_token_re().find_iter(line).map(|m| m.as_str().to_string()))
        .collect()
}

struct Normalized {
    files: Vec<String>,
    unresolved: Vec<String>,
}

fn normalize_predictions(repo: &RepoSnapshot, raw: Vec<String>) -> Normalized {
    let mut files: Vec<String> = Vec::new();
    let mut unresolved = Vec::new();
    for p in raw {
        let (path, resolved) = match repo.resolve_path(&p) {
            Ok(rel) => (rel, true),
            Err(_) => (p, false),
        };
        if !files.contains(&path) {
            if !resolved {
                unresolved.push(path.clone());
            }
            files.push(path);
        }
    }
    Normalized { files, unresolved }
}

struct Session<'a> {
    config: &'a AgentConfig,
    dump: &'a Crashdump,
    repo: &'a RepoSnapshot,
    registry: ToolRegistry,
    sanitize: bool,
}

impl Session<'_> {
    fn run(
        &self,
        backend: &mut dyn ChatBackend,
        resolver: &mut dyn SymbolResolver,
        run_index: usize,
    ) -> Result<AgentRun, Aborted> {
        let prompts = &self.config.prompts;
        let budget = self.config.max_tool_interactions.max(1);
        let budget_text = budget.to_string();
        let tools = self.registry.specs();
        let inventory = self.registry.inventory();
        let mut messages = vec![
            ChatMessage::system(prompts.render("system", &[("tools", &inventory)])),
            ChatMessage::user(prompts.render("user", &[("budget", &budget_text)])),
        ];
        let mut ctx = ToolContext {
            dump: self.dump,
            repo: self.repo,
            resolver,
            sanitize: self.sanitize,
            term_options: self.config.term_options,
        };

        let mut count = 0;
        let mut tool_errors = Vec::new();
        let mut diagnostics = Vec::new();
        let mut explanation = None;

        while count < budget {
            let mut reply = match backend.complete(&messages, &tools) {
                Ok(r) => r,
                Err(e) => return Err(abort(e, messages)),
            };
            if !reply.has_tool_calls() {
                explanation = Some(reply.content.clone());
                messages.push(reply);
                break;
            }
            let room = budget - count;
            if reply.tool_calls.len() > room {
                diagnostics.push(format!(
                    "dropped {} tool calls beyond the interaction budget",
                    reply.tool_calls.len() - room
                ));
                reply.tool_calls.truncate(room);
            }
            let calls = reply.tool_calls.clone();
            messages.push(reply);
            for call in &calls {
                let result = execute_tool(&self.registry, call, &mut ctx);
                count += 1;
                if let Some(kind) = result.error {
                    tool_errors.push(ToolError {
                        tool: call.name.clone(),
                        kind,
                    });
                }
                messages.push(ChatMessage::tool(call.id.clone(), result.text));
            }
        }

        let status = if explanation.is_some() {
            RunStatus::Completed
        } else {
            RunStatus::BudgetExhausted
        };
        let mut elicit = prompts.render("elicit_files", &[]);
        if status == RunStatus::BudgetExhausted {
            elicit = format!("{}\n{elicit}", prompts.render("budget_exhausted", &[("budget", &budget_text)]));
        }
        messages.push(ChatMessage::user(elicit));
        let answer = match backend.complete(&messages, &[]) {
            Ok(a) => a,
            Err(e) => return Err(abort(e, messages)),
        };
        let raw_files = extract_file_list(&answer.content);
        if raw_files.is_empty() {
            diagnostics.push("file answer contained no paths".to_string());
        }
        messages.push(answer);
        let Normalized { files, unresolved } = normalize_predictions(self.repo, raw_files);
        for u in &unresolved {
            diagnostics.push(format!("predicted path '{u}' is not in the repository"));
        }

        Ok(AgentRun {
            run_index,
            messages,
            explanation: explanation.unwrap_or_default(),
            predicted_files: files,
            unresolved_files: unresolved,
            tool_call_count: count,
            tool_errors,
            status,
            sanitized_retry: false,
            diagnostics,
        })
    }
}

fn abort(e: LlmError, messages: Vec<ChatMessage>) -> Aborted {
    match e {
        LlmError::ContextLengthExceeded(d) => Aborted::ContextLength(d, messages),
        other => Aborted::Backend(other.to_string(), messages),
    }
}

/// One run with backends created by `factory`. A context overflow is
/// retried once with sanitized crash sections.
pub fn run_agent_with(
    config: &AgentConfig,
    dump: &Crashdump,
    repo: &RepoSnapshot,
    factory: &BackendFactory<'_>,
    run_index: usize,
) -> AgentRun {
    for required in [CRASH_STACK, CRASH_EXTINFO] {
        if !dump.has_section(required) {
            return AgentRun::failed(
                run_index,
                RunStatus::BackendFailed,
                Vec::new(),
                format!("crashdump has no {required} section"),
            );
        }
    }

    let mut sanitize = config.sanitize_inputs;
    let mut retried = false;
    loop {
        let session = Session {
            config,
            dump,
            repo,
            registry: config.registry(),
            sanitize,
        };
        let mut backend = match factory(run_index) {
            Ok(b) => b,
            Err(e) => return AgentRun::failed(run_index, RunStatus::BackendFailed, Vec::new(), e.to_string()),
        };
        let mut resolver = config.resolver.build(repo);
        match session.run(backend.as_mut(), resolver.as_mut(), run_index) {
            Ok(mut run) => {
                run.sanitized_retry = retried;
                return run;
            }
            Err(Aborted::ContextLength(..)) if !sanitize => {
                log::warn!("run {run_index}: context length exceeded, retrying with sanitized sections");
                sanitize = true;
                retried = true;
            }
            Err(Aborted::ContextLength(detail, messages)) => {
                let mut run = AgentRun::failed(run_index, RunStatus::ContextLengthExceeded, messages, detail);
                run.sanitized_retry = retried;
                return run;
            }
            Err(Aborted::Backend(detail, messages)) => {
                let mut run = AgentRun::failed(run_index, RunStatus::BackendFailed, messages, detail);
                run.sanitized_retry = retried;
                return run;
            }
        }
    }
}

/// One run using `config.backend`.
pub fn run_agent(config: &AgentConfig, dump: &Crashdump, repo: &RepoSnapshot) -> AgentRun {
    let factory = |_: usize| config.backend.build();
    run_agent_with(config, dump, repo, &factory, 0)
}

/// `runs` independent runs on up to `jobs` worker threads. Results are in
/// run order; failed runs are kept.
pub fn run_repeated_with(
    config: &AgentConfig,
    dump: &Crashdump,
    repo: &RepoSnapshot,
    runs: usize,
    jobs: usize,
    factory: &BackendFactory<'_>,
) -> Vec<AgentRun> {
    let slots: Vec<Mutex<Option<AgentRun>>> = (0..runs).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = jobs.clamp(1, runs.max(1));
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= runs {
                    break;
                }
                let run = run_agent_with(config, dump, repo, factory, i);
                *slots[i].lock().expect("slot lock") = Some(run);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every run filled"))
        .collect()
}

pub fn run_repeated(config: &AgentConfig, dump: &Crashdump, repo: &RepoSnapshot, runs: usize) -> Vec<AgentRun> {
    let factory = |_: usize| config.backend.build();
    run_repeated_with(config, dump, repo, runs, runs.min(4), &factory)
}
