//! Repository navigation for the agent: numbered code windows and symbol
//! definition lookup.
//!
//! Every failure is a [`NavError`] so the agent can hand it back to the
//! model as tool output instead of aborting.

mod lexical;
pub mod lsp;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

pub use lexical::LexicalResolver;
pub use lsp::{LspConfig, LspResolver};

/// Lines shown on each side of the requested line.
pub const WINDOW_RADIUS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NavErrorKind {
    FileNotFound,
    InvalidLine,
    TermNotInLine,
    NavigationFailed,
    InvalidArgument,
}

impl NavErrorKind {
    pub const ALL: [NavErrorKind; 5] = [
        NavErrorKind::TermNotInLine,
        NavErrorKind::FileNotFound,
        NavErrorKind::NavigationFailed,
        NavErrorKind::InvalidLine,
        NavErrorKind::InvalidArgument,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NavErrorKind::FileNotFound => "FileNotFound",
            NavErrorKind::InvalidLine => "InvalidLine",
            NavErrorKind::TermNotInLine => "TermNotInLine",
            NavErrorKind::NavigationFailed => "NavigationFailed",
            NavErrorKind::InvalidArgument => "InvalidArgument",
        }
    }
}

impl fmt::Display for NavErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why a path could not be mapped into the repository.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathMiss {
    Absolute,
    Relative,
    Unknown,
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("ERROR({kind}): {detail}")]
pub struct NavError {
    pub kind: NavErrorKind,
    pub detail: String,
}

impl NavError {
    pub fn new(kind: NavErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }

    fn file_not_found(raw: &str, miss: PathMiss) -> Self {
        let why = match miss {
            PathMiss::Absolute => "absolute path is not inside the repository",
            PathMiss::Relative => "relative path does not resolve in the repository",
            PathMiss::Unknown => "no file with this name in the repository",
            PathMiss::Ambiguous => "file name matches several repository files",
        };
        Self::new(NavErrorKind::FileNotFound, format!("{raw}: {why}"))
    }
}

/// A read-only view of one source tree.
#[derive(Debug, Clone)]
pub struct RepoSnapshot {
    root: PathBuf,
    revision: Option<String>,
    files: Vec<String>,
    by_basename: HashMap<String, Vec<usize>>,
}

impl RepoSnapshot {
    pub fn open(root: impl AsRef<Path>, revision: Option<String>) -> Result<Self, NavError> {
        let root = root.as_ref();
        let root = fs::canonicalize(root).map_err(|e| {
            NavError::new(
                NavErrorKind::FileNotFound,
                format!("repository root {}: {e}", root.display()),
            )
        })?;
        if !root.is_dir() {
            return Err(NavError::new(
                NavErrorKind::FileNotFound,
                format!("repository root {} is not a directory", root.display()),
            ));
        }

        let mut files: Vec<String> = WalkDir::new(&root)
            .follow_links(false)
            .into_iter()
            .filter_map(Result::ok)
            .filter(|e| e.file_type().is_file())
            .filter_map(|e| {
                let rel = e.path().strip_prefix(&root).ok()?;
                let parts: Vec<&str> = rel.iter().filter_map(|p| p.to_str()).collect();
                (!parts.iter().any(|p| p.starts_with(".git"))).then(|| parts.join("/"))
            })
            .collect();
        files.sort();

        let mut by_basename: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, f) in files.iter().enumerate() {
            by_basename
                .entry(base_name(f).to_string())
                .or_default()
                .push(i);
        }
        Ok(Self {
            root,
            revision,
            files,
            by_basename,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn revision(&self) -> Option<&str> {
        self.revision.as_deref()
    }

    /// Repository-relative paths, sorted, `/`-separated.
    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn contains(&self, rel: &str) -> bool {
        self.files.binary_search_by(|f| f.as_str().cmp(rel)).is_ok()
    }

    pub fn absolute(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn read_lines(&self, rel: &str) -> Result<Vec<String>, NavError> {
        let text = fs::read(self.absolute(rel))
            .map_err(|e| NavError::new(NavErrorKind::FileNotFound, format!("{rel}: {e}")))?;
        Ok(String::from_utf8_lossy(&text).lines().map(str::to_string).collect())
    }

    /// Map an absolute filesystem path to a repository-relative one.
    pub fn relativize(&self, path: &Path) -> Option<String> {
        // Resolvers may report through a symlinked root.
        let canon = fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf());
        let rel = canon.strip_prefix(&self.root).ok()?;
        let parts: Option<Vec<&str>> = rel.iter().map(|p| p.to_str()).collect();
        let joined = parts?.join("/");
        self.contains(&joined).then_some(joined)
    }

    /// Normalize a model-supplied path to a repository file.
    ///
    /// Tried in order: the path as repo-relative, then the longest suffix
    /// of an absolute path that exists in the repository, then a unique
    /// basename match.
    pub fn resolve_path(&self, raw: &str) -> Result<String, NavError> {
        let cleaned = raw.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`');
        let unified = cleaned.replace('\\', "/");
        let absolute = unified.starts_with('/');
        let miss = if absolute {
            PathMiss::Absolute
        } else if unified.contains('/') {
            PathMiss::Relative
        } else {
            PathMiss::Unknown
        };
        if unified.is_empty() {
            return Err(NavError::file_not_found(raw, PathMiss::Unknown));
        }

        let components = normalize_components(&unified);
        if !absolute {
            if let Some(parts) = &components {
                let joined = parts.join("/");
                if self.contains(&joined) {
                    return Ok(joined);
                }
            }
        } else if let Some(parts) = &components {
            for start in 0..parts.len() {
                let candidate = parts[start..].join("/");
                if self.contains(&candidate) {
                    return Ok(candidate);
                }
            }
        }

        match self.by_basename.get(base_name(&unified)).map(Vec::as_slice) {
            Some([only]) => Ok(self.files[*only].clone()),
            Some([_, _, ..]) => Err(NavError::file_not_found(raw, PathMiss::Ambiguous)),
            _ => Err(NavError::file_not_found(raw, miss)),
        }
    }
}

fn base_name(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

/// Lexically resolve `.` and `..`; `None` when the path escapes its root.
fn normalize_components(path: &str) -> Option<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    for c in Path::new(path).components() {
        match c {
            Component::Normal(p) => out.push(p.to_str()?.to_string()),
            Component::ParentDir => {
                out.pop()?;
            }
            Component::CurDir | Component::RootDir | Component::Prefix(_) => {}
        }
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSnippet {
    pub path: String,
    pub center_line: u32,
    pub lines: Vec<(u32, String)>,
}

impl CodeSnippet {
    /// Tool rendering: every line prefixed with `N|`.
    pub fn render(&self) -> String {
        self.lines
            .iter()
            .map(|(n, text)| format!("{n}|{text}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn get_nearby_code(repo: &RepoSnapshot, path: &str, line: i64) -> Result<CodeSnippet, NavError> {
    let rel = repo.resolve_path(path)?;
    let lines = repo.read_lines(&rel)?;
    let center = check_line(&rel, line, lines.len())?;
    let first = center.saturating_sub(WINDOW_RADIUS).max(1);
    let last = (center + WINDOW_RADIUS).min(lines.len() as u32);
    Ok(CodeSnippet {
        path: rel,
        center_line: center,
        lines: (first..=last)
            .map(|n| (n, lines[(n - 1) as usize].clone()))
            .collect(),
    })
}

fn check_line(rel: &str, line: i64, len: usize) -> Result<u32, NavError> {
    if line < 1 || line as u64 > len as u64 {
        return Err(NavError::new(
            NavErrorKind::InvalidLine,
            format!("{rel} has {len} lines, line {line} requested"),
        ));
    }
    Ok(line as u32)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefinitionLocation {
    pub path: String,
    pub line: u32,
    pub defining_text: String,
}

impl DefinitionLocation {
    pub fn render(&self) -> String {
        format!("{}:{}\n{}|{}", self.path, self.line, self.line, self.defining_text)
    }
}

/// A definition request handed to a resolver backend. `column` is the
/// 0-based UTF-16 offset of the term in its line, `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefinitionQuery {
    pub path: String,
    pub line: u32,
    pub column: u32,
    pub term: String,
}

/// Where a resolver says the symbol lives. `path` may be absolute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedSite {
    pub path: PathBuf,
    pub line: u32,
}

pub trait SymbolResolver: Send {
    fn name(&self) -> &'static str;

    fn definition(
        &mut self,
        repo: &RepoSnapshot,
        query: &DefinitionQuery,
    ) -> Result<Option<ResolvedSite>, String>;
}

/// Resolver selection. One resolver is built per agent run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum ResolverConfig {
    #[default]
    Lexical,
    Lsp(LspConfig),
}

impl ResolverConfig {
    pub fn lsp(command: impl Into<String>, args: Vec<String>) -> Self {
        ResolverConfig::Lsp(LspConfig {
            command: command.into(),
            args,
            timeout: Duration::from_secs(10),
        })
    }

    /// Build a resolver session; a language server that fails to start
    /// degrades to the lexical scanner.
    pub fn build(&self, repo: &RepoSnapshot) -> Box<dyn SymbolResolver> {
        match self {
            ResolverConfig::Lexical => Box::new(LexicalResolver),
            ResolverConfig::Lsp(cfg) => match LspResolver::spawn(cfg, repo) {
                Ok(r) => Box::new(r),
                Err(e) => {
                    log::warn!("language server unavailable ({e}); using lexical resolver");
                    Box::new(LexicalResolver)
                }
            },
        }
    }
}

/// Options for the term check.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TermOptions {
    /// Do not strip a `N|` prefix echoed back by the model.
    pub strict: bool,
}

fn term_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^~?[A-Za-z_][A-Za-z0-9_]*(?:::~?[A-Za-z_][A-Za-z0-9_]*)*$").unwrap())
}

fn echoed_prefix_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\d+\s*\|\s*").unwrap())
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Byte offset of the first whole-token occurrence of `term` in `line`.
pub(crate) fn find_token(line: &str, term: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(pos) = line[from..].find(term) {
        let start = from + pos;
        let end = start + term.len();
        let before_ok = !line[..start].chars().next_back().is_some_and(is_ident_char);
        let after_ok = !line[end..].chars().next().is_some_and(is_ident_char);
        if before_ok && after_ok {
            return Some(start);
        }
        from = start + term.chars().next().map_or(1, char::len_utf8);
    }
    None
}

pub fn get_term_definition(
    repo: &RepoSnapshot,
    resolver: &mut dyn SymbolResolver,
    path: &str,
    line: i64,
    term: &str,
    options: TermOptions,
) -> Result<DefinitionLocation, NavError> {
    let mut term = term.trim();
    if !options.strict {
        if let Some(m) = echoed_prefix_re().find(term) {
            term = &term[m.end()..];
        }
    }
    if !term_re().is_match(term) {
        return Err(NavError::new(
            NavErrorKind::InvalidArgument,
            format!("'{term}' is not an identifier"),
        ));
    }

    let rel = repo.resolve_path(path)?;
    let lines = repo.read_lines(&rel)?;
    let line_no = check_line(&rel, line, lines.len())?;
    let text = &lines[(line_no - 1) as usize];
    let Some(offset) = find_token(text, term) else {
        return Err(NavError::new(
            NavErrorKind::TermNotInLine,
            format!("'{term}' does not appear in {rel}:{line_no}"),
        ));
    };
    // Point the resolver at the last path segment of a qualified name.
    let (offset, term) = match term.rfind("::") {
        Some(i) => (offset + i + 2, &term[i + 2..]),
        None => (offset, term),
    };
    let column = text[..offset].encode_utf16().count() as u32;

    let query = DefinitionQuery {
        path: rel.clone(),
        line: line_no,
        column,
        term: term.to_string(),
    };
    let site = match resolver.definition(repo, &query) {
        Ok(Some(site)) => site,
        Ok(None) => {
            return Err(NavError::new(
                NavErrorKind::NavigationFailed,
                format!("{} found no definition for '{term}'", resolver.name()),
            ))
        }
        Err(e) => {
            return Err(NavError::new(
                NavErrorKind::NavigationFailed,
                format!("{}: {e}", resolver.name()),
            ))
        }
    };

    let def_rel = if site.path.is_absolute() {
        repo.relativize(&site.path)
    } else {
        site.path.to_str().map(|s| s.replace('\\', "/")).filter(|s| repo.contains(s))
    };
    let Some(def_rel) = def_rel else {
        return Err(NavError::new(
            NavErrorKind::NavigationFailed,
            format!("definition of '{term}' is outside the repository ({})", site.path.display()),
        ));
    };
    let def_lines = repo.read_lines(&def_rel)?;
    let defining_text = def_lines
        .get(site.line.saturating_sub(1) as usize)
        .filter(|_| site.line >= 1)
        .cloned()
        .ok_or_else(|| {
            NavError::new(
                NavErrorKind::NavigationFailed,
                format!("resolver pointed past the end of {def_rel}"),
            )
        })?;
    Ok(DefinitionLocation {
        path: def_rel,
        line: site.line,
        defining_text,
    })
}
