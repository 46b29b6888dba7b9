//! Crashdump parsing.
//!
//! A crashdump is plain UTF-8 text split into sections by header lines of
//! the form `[NAME]`. Only `CRASH_STACK`, `CRASH_EXTINFO` and `BUILD` get a
//! structured view; everything else stays raw text.

mod extinfo;
mod stack;

use std::fmt;

use regex::Regex;
use thiserror::Error;

pub use extinfo::{
    classify_crash_type, parse_crash_extinfo, sanitize_crash_extinfo, CrashExtInfo, CrashType,
    NPE_THRESHOLD,
};
pub use stack::{parse_crash_stack, sanitize_crash_stack, CrashStack, FrameOrigin, StackLocation};
pub(crate) use stack::basename;

pub const PREAMBLE: &str = "PREAMBLE";
pub const CRASH_STACK: &str = "CRASH_STACK";
pub const CRASH_EXTINFO: &str = "CRASH_EXTINFO";
pub const BUILD: &str = "BUILD";

const DEFAULT_HEADER_PATTERN: &str = r"^\[([A-Z0-9_]+)\]$";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DumpError {
    #[error("malformed crashdump: {0}")]
    MalformedDump(String),
    #[error("duplicate section [{0}]")]
    DuplicateSection(String),
    #[error("section [{0}] not found")]
    SectionNotFound(String),
    #[error("no signal found in CRASH_EXTINFO")]
    MissingSignal,
}

/// One named section. `header` is the raw header line including its line
/// terminator (empty for the preamble) and `raw_body` is every byte up to
/// the next header, so concatenating the two reproduces the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    name: String,
    header: String,
    raw_body: String,
}

impl Section {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Section body without the single line terminator that separates it
    /// from the next header.
    pub fn body(&self) -> &str {
        let body = self.raw_body.strip_suffix('\n').unwrap_or(&self.raw_body);
        body.strip_suffix('\r').unwrap_or(body)
    }

    pub fn raw_body(&self) -> &str {
        &self.raw_body
    }
}

/// Knobs for the section splitter.
#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Regex matched against a whole line (terminator stripped). Capture
    /// group 1 must yield the section name.
    pub header_pattern: Regex,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            header_pattern: Regex::new(DEFAULT_HEADER_PATTERN).expect("valid header regex"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Crashdump {
    pub source_id: String,
    sections: Vec<Section>,
}

impl Crashdump {
    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|s| s.name.as_str())
    }

    pub fn get_section(&self, name: &str) -> Result<&str, DumpError> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .map(Section::body)
            .ok_or_else(|| DumpError::SectionNotFound(name.to_string()))
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.iter().any(|s| s.name == name)
    }

    /// True when the input had no header at all and was kept as a single
    /// preamble section.
    pub fn is_unstructured(&self) -> bool {
        self.sections.len() == 1 && self.sections[0].name == PREAMBLE
    }

    pub fn crash_stack(&self) -> Result<CrashStack, DumpError> {
        Ok(parse_crash_stack(self.get_section(CRASH_STACK)?))
    }

    pub fn crash_extinfo(&self) -> Result<CrashExtInfo, DumpError> {
        parse_crash_extinfo(self.get_section(CRASH_EXTINFO)?)
    }

    /// Revision hash from the `BUILD` section (`git: <hash>` style line).
    pub fn build_revision(&self) -> Option<String> {
        let body = self.get_section(BUILD).ok()?;
        body.lines().find_map(|line| {
            let (key, value) = line.split_once(':')?;
            let key = key.trim().to_ascii_lowercase();
            matches!(key.as_str(), "git" | "git_hash" | "revision" | "githash" | "commit")
                .then(|| value.trim().to_string())
                .filter(|v| !v.is_empty())
        })
    }

    /// Reassemble the exact input text.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            out.push_str(&s.header);
            out.push_str(&s.raw_body);
        }
        out
    }
}

impl fmt::Display for Crashdump {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

pub fn parse_crashdump(input: &str) -> Result<Crashdump, DumpError> {
    parse_crashdump_with(input, "", &ParseOptions::default())
}

pub fn parse_crashdump_with(
    input: &str,
    source_id: &str,
    options: &ParseOptions,
) -> Result<Crashdump, DumpError> {
    if input.is_empty() {
        return Err(DumpError::MalformedDump("empty input".into()));
    }

    let mut sections: Vec<Section> = Vec::new();
    let mut current = Section {
        name: PREAMBLE.to_string(),
        header: String::new(),
        raw_body: String::new(),
    };

    for line in input.split_inclusive('\n') {
        let bare = line.strip_suffix('\n').unwrap_or(line);
        let bare = bare.strip_suffix('\r').unwrap_or(bare);
        let name = options
            .header_pattern
            .captures(bare)
            .and_then(|c| c.get(1))
            .map(|m| m.as_str().to_string());
        match name {
            Some(name) => {
                let finished = std::mem::replace(
                    &mut current,
                    Section {
                        name,
                        header: line.to_string(),
                        raw_body: String::new(),
                    },
                );
                // An empty preamble is not a section.
                if finished.name != PREAMBLE || !finished.raw_body.is_empty() {
                    push_unique(&mut sections, finished)?;
                }
            }
            None => current.raw_body.push_str(line),
        }
    }
    push_unique(&mut sections, current)?;

    Ok(Crashdump {
        source_id: source_id.to_string(),
        sections,
    })
}

fn push_unique(sections: &mut Vec<Section>, section: Section) -> Result<(), DumpError> {
    if sections.iter().any(|s| s.name == section.name) {
        return Err(DumpError::DuplicateSection(section.name));
    }
    sections.push(section);
    Ok(())
}
