//! Per-file explanation consolidation and majority-vote alignment judging.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentRun, Prompts};
use crate::llm::{ChatBackend, ChatMessage, LlmError};

pub const DEFAULT_JUDGES: usize = 5;

const REVIEWER: &str = "You are an expert C/C++ engineer reviewing crash analyses of a large database system.";

fn ask(backend: &mut dyn ChatBackend, prompt: &str) -> Result<ChatMessage, LlmError> {
    backend.complete(&[ChatMessage::system(REVIEWER), ChatMessage::user(prompt)], &[])
}

#[derive(Debug, Error, PartialEq)]
pub enum ExplainError {
    #[error("no run predicted '{0}'")]
    NoSourceRuns(String),
    #[error("backend failed: {0}")]
    BackendFailed(String),
    #[error("judge reply has no verdict: {0:?}")]
    UnparseableVerdict(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl From<LlmError> for ExplainError {
    fn from(e: LlmError) -> Self {
        Self::BackendFailed(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsolidationMethod {
    Llm,
    /// Offline fallback: explanations joined under run headers.
    Concatenation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileExplanation {
    pub path: String,
    pub source_runs: Vec<usize>,
    pub consolidated: String,
    pub method: ConsolidationMethod,
}

fn concatenate(sources: &[(usize, &str)]) -> String {
    if let [(_, only)] = sources {
        return only.to_string();
    }
    sources
        .iter()
        .map(|(i, text)| format!("[run {i}]\n{}", text.trim_end()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Gathers the explanations of every run that predicted `path`; with a
/// backend they are summarized, otherwise concatenated.
pub fn consolidate(
    runs: &[AgentRun],
    path: &str,
    backend: Option<&mut dyn ChatBackend>,
    prompts: &Prompts,
) -> Result<FileExplanation, ExplainError> {
    let mut sources: Vec<(usize, &str)> = runs
        .iter()
        .filter(|r| r.predicted_files.iter().any(|p| p == path))
        .map(|r| (r.run_index, r.explanation.as_str()))
        .collect();
    if sources.is_empty() {
        return Err(ExplainError::NoSourceRuns(path.to_string()));
    }
    sources.sort_by_key(|(i, _)| *i);
    let source_runs = sources.iter().map(|(i, _)| *i).collect();
    let joined = concatenate(&sources);
    let (consolidated, method) = match backend {
        None => (joined, ConsolidationMethod::Concatenation),
        Some(b) => {
            let listing = sources
                .iter()
                .map(|(i, text)| format!("[run {i}]\n{}", text.trim_end()))
                .collect::<Vec<_>>()
                .join("\n\n");
            let prompt = prompts.render("consolidate", &[("path", path), ("explanations", &listing)]);
            let reply = ask(b, &prompt)?;
            (reply.content.trim().to_string(), ConsolidationMethod::Llm)
        }
    };
    Ok(FileExplanation {
        path: path.to_string(),
        source_runs,
        consolidated,
        method,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictLabel {
    Aligned,
    Misaligned,
}

/// Case-insensitive keyword search; "misaligned" contains "aligned", so it
/// is checked first.
pub fn parse_verdict(reply: &str) -> Option<VerdictLabel> {
    let lower = reply.to_lowercase();
    if lower.contains("misaligned") {
        Some(VerdictLabel::Misaligned)
    } else if lower.contains("aligned") {
        Some(VerdictLabel::Aligned)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: VerdictLabel,
    pub votes_aligned: usize,
    pub votes_total: usize,
}

impl Verdict {
    pub fn from_votes(votes_aligned: usize, votes_total: usize) -> Self {
        let label = if 2 * votes_aligned > votes_total {
            VerdictLabel::Aligned
        } else {
            VerdictLabel::Misaligned
        };
        Self {
            label,
            votes_aligned,
            votes_total,
        }
    }

    pub fn is_aligned(&self) -> bool {
        self.label == VerdictLabel::Aligned
    }
}

fn one_vote(backend: &mut dyn ChatBackend, prompt: &str) -> Result<VerdictLabel, ExplainError> {
    let mut last = String::new();
    for _ in 0..2 {
        let reply = ask(backend, prompt)?;
        if let Some(label) = parse_verdict(&reply.content) {
            return Ok(label);
        }
        last = reply.content;
    }
    Err(ExplainError::UnparseableVerdict(last))
}

/// `judges` independent verdict requests, decided by majority.
pub fn judge(
    backend: &mut dyn ChatBackend,
    prompts: &Prompts,
    postmortem: &str,
    explanation: &str,
    judges: usize,
) -> Result<Verdict, ExplainError> {
    if judges == 0 || judges.is_multiple_of(2) {
        return Err(ExplainError::InvalidArgument(format!("judge count must be odd, got {judges}")));
    }
    let prompt = prompts.render("judge", &[("postmortem", postmortem.trim()), ("explanation", explanation.trim())]);
    let mut aligned = 0;
    for _ in 0..judges {
        if one_vote(backend, &prompt)? == VerdictLabel::Aligned {
            aligned += 1;
        }
    }
    Ok(Verdict::from_votes(aligned, judges))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRates {
    pub overall: f64,
    pub top1: f64,
    pub top3: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedFile {
    pub path: String,
    pub verdict: Verdict,
}

/// Verdicts per crash in ranking order.
pub type CrashVerdicts = BTreeMap<String, Vec<JudgedFile>>;

pub fn alignment_rates(per_crash: &CrashVerdicts) -> AlignmentRates {
    if per_crash.is_empty() {
        return AlignmentRates {
            overall: 0.0,
            top1: 0.0,
            top3: 0.0,
        };
    }
    let within = |k: usize| {
        per_crash
            .values()
            .filter(|v| v.iter().take(k).any(|j| j.verdict.is_aligned()))
            .count() as f64
            / per_crash.len() as f64
    };
    AlignmentRates {
        overall: within(usize::MAX),
        top1: within(1),
        top3: within(3),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub crashes: CrashVerdicts,
    pub rates: AlignmentRates,
}

impl AlignmentReport {
    pub fn new(crashes: CrashVerdicts) -> Self {
        let rates = alignment_rates(&crashes);
        Self { crashes, rates }
    }
}
