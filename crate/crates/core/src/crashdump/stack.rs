use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameOrigin {
    Backtrace,
    PendingException,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackLocation {
    pub file_path: String,
    pub line: u32,
    pub origin: FrameOrigin,
    pub frame_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thread_label: Option<String>,
}

impl StackLocation {
    pub fn basename(&self) -> &str {
        basename(&self.file_path)
    }
}

pub(crate) fn basename(path: &str) -> &str {
    path.rsplit(['/', '\\']).next().unwrap_or(path)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashStack {
    pub backtrace: Vec<StackLocation>,
    pub pending: Vec<StackLocation>,
    pub raw_text: String,
    /// Frame lines that carried no resolvable `path:line` token.
    pub skipped_lines: usize,
}

impl CrashStack {
    /// All locations, pending exceptions first.
    pub fn locations(&self) -> impl Iterator<Item = &StackLocation> {
        self.pending.iter().chain(self.backtrace.iter())
    }
}

fn frame_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*#?(\d+)\s*:").unwrap())
}

fn location_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"([A-Za-z0-9_./\\+\-]+\.(?:cpp|cxx|cc|c|hpp|hxx|h)):(\d+)\b").unwrap()
    })
}

fn thread_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\W*(thread\b.*?)[\]:\s-]*$").unwrap())
}

/// First `path:line` token whose path carries a C/C++ source suffix.
pub(crate) fn find_location(line: &str) -> Option<(String, u32)> {
    location_re().captures_iter(line).find_map(|c| {
        let number: u32 = c[2].parse().ok()?;
        (number > 0).then(|| (c[1].to_string(), number))
    })
}

/// Headings that close a pending-exception block.
fn is_backtrace_heading(lower: &str) -> bool {
    !lower.contains("exception")
        && (lower.contains("call stack")
            || lower.contains("backtrace")
            || lower.contains("stack trace")
            || lower.contains("thread"))
}

pub fn parse_crash_stack(body: &str) -> CrashStack {
    let mut stack = CrashStack {
        raw_text: body.to_string(),
        ..CrashStack::default()
    };
    let mut origin = FrameOrigin::Backtrace;
    let mut thread: Option<String> = None;
    let mut last_index: Option<u32> = None;

    for line in body.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let Some(frame) = frame_re().captures(line) else {
            let lower = line.to_ascii_lowercase();
            if lower.contains("pending exception") {
                origin = FrameOrigin::PendingException;
            } else if is_backtrace_heading(&lower) {
                origin = FrameOrigin::Backtrace;
            }
            if let Some(t) = thread_re().captures(line) {
                thread = Some(t[1].trim().to_string());
            }
            last_index = None;
            continue;
        };
        let Ok(frame_index) = frame[1].parse::<u32>() else {
            stack.skipped_lines += 1;
            continue;
        };
        let Some((file_path, number)) = find_location(line) else {
            stack.skipped_lines += 1;
            continue;
        };
        // Frame numbering restarting means a new trace block.
        if last_index.is_some_and(|prev| frame_index <= prev) {
            log::debug!("frame index {frame_index} restarts a trace block");
        }
        last_index = Some(frame_index);
        let location = StackLocation {
            file_path,
            line: number,
            origin,
            frame_index,
            thread_label: thread.clone(),
        };
        match origin {
            FrameOrigin::Backtrace => stack.backtrace.push(location),
            FrameOrigin::PendingException => stack.pending.push(location),
        }
    }
    stack
}

/// Location-only rendering of a stack: `path:line` per line, pending
/// exceptions block first. Empty blocks are omitted.
pub fn sanitize_crash_stack(stack: &CrashStack) -> String {
    let mut lines: Vec<String> = Vec::new();
    for (heading, block) in [
        ("pending_exceptions:", &stack.pending),
        ("backtrace:", &stack.backtrace),
    ] {
        if block.is_empty() {
            continue;
        }
        lines.push(heading.to_string());
        lines.extend(block.iter().map(|l| format!("{}:{}", l.file_path, l.line)));
    }
    lines.join("\n")
}
