//! Vote aggregation over agent runs, stack-order baselines and ranking
//! augmentation.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{Num, One, Signed, ToPrimitive};
use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::agent::AgentRun;
use crate::crashdump::CrashStack;
use crate::reponav::RepoSnapshot;

/// A suspiciousness score. Exact rationals are the default; floats work
/// for quick experiments but can produce tie artifacts.
pub trait Score: Num + Clone + PartialOrd + fmt::Debug {
    fn from_count(n: usize) -> Self;
    fn to_f64(&self) -> f64;
    /// Decimal text with exactly six fraction digits.
    fn decimal6(&self) -> String {
        format!("{:.6}", self.to_f64())
    }
}

impl Score for f64 {
    fn from_count(n: usize) -> Self {
        n as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Score for f32 {
    fn from_count(n: usize) -> Self {
        n as f32
    }
    fn to_f64(&self) -> f64 {
        *self as f64
    }
}

impl Score for BigRational {
    fn from_count(n: usize) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    /// Rounds half away from zero, exactly.
    fn decimal6(&self) -> String {
        let scaled = self * BigRational::from_integer(BigInt::from(1_000_000));
        let half = BigRational::new(BigInt::one(), BigInt::from(2));
        let units = if scaled.is_negative() {
            -(scaled.abs() + half).floor().to_integer()
        } else {
            (scaled + half).floor().to_integer()
        };
        let sign = if units.sign() == Sign::Minus { "-" } else { "" };
        let digits = format!("{:07}", units.abs());
        let (int, frac) = digits.split_at(digits.len() - 6);
        format!("{sign}{int}.{frac}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedFile<S> {
    pub path: String,
    pub score: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRanking<S> {
    pub entries: Vec<RankedFile<S>>,
    pub runs: usize,
    pub confidence: S,
}

impl<S: Score> ScoredRanking<S> {
    pub fn paths(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.path.clone()).collect()
    }

    pub fn top(&self) -> Option<&RankedFile<S>> {
        self.entries.first()
    }

    pub fn to_record(&self, crash_id: &str) -> RankingRecord {
        RankingRecord {
            crash_id: crash_id.to_string(),
            runs: self.runs,
            confidence: Decimal::new(self.confidence.decimal6()),
            entries: self
                .entries
                .iter()
                .map(|e| RecordEntry {
                    path: e.path.clone(),
                    score: Decimal::new(e.score.decimal6()),
                })
                .collect(),
            augmented: None,
        }
    }
}

/// Vote aggregation over `(run_index, predicted files)` pairs. `r` is the
/// number of runs launched, failed ones included.
pub fn aggregate_sets<S: Score>(sets: &[(usize, Vec<String>)], r: usize) -> ScoredRanking<S> {
    // path -> (score, (run_index, position))
    let mut acc: BTreeMap<&str, (S, (usize, usize))> = BTreeMap::new();
    for (run_index, files) in sets {
        let mut seen = HashSet::new();
        let distinct: Vec<&str> = files.iter().map(String::as_str).filter(|f| seen.insert(*f)).collect();
        if distinct.is_empty() {
            continue;
        }
        let share = S::one() / S::from_count(distinct.len());
        for (pos, f) in distinct.into_iter().enumerate() {
            let first = (*run_index, pos);
            let slot = acc.entry(f).or_insert_with(|| (S::zero(), first));
            slot.0 = slot.0.clone() + share.clone();
            slot.1 = slot.1.min(first);
        }
    }
    let mut ranked: Vec<(&str, S, (usize, usize))> = acc.into_iter().map(|(p, (s, f))| (p, s, f)).collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.2.cmp(&b.2))
            .then(a.0.cmp(b.0))
    });
    let confidence = match ranked.first() {
        Some((_, top, _)) if r > 0 => top.clone() / S::from_count(r),
        _ => S::zero(),
    };
    ScoredRanking {
        entries: ranked
            .into_iter()
            .map(|(path, score, _)| RankedFile {
                path: path.to_string(),
                score,
            })
            .collect(),
        runs: r,
        confidence,
    }
}

pub fn aggregate<S: Score>(runs: &[AgentRun], r: usize) -> ScoredRanking<S> {
    let sets: Vec<(usize, Vec<String>)> = runs
        .iter()
        .map(|run| (run.run_index, run.predicted_files.clone()))
        .collect();
    aggregate_sets(&sets, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    B1,
    B2,
}

impl std::str::FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "b1" => Ok(Self::B1),
            "b2" => Ok(Self::B2),
            other => Err(format!("unknown baseline '{other}' (expected b1 or b2)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineRanking {
    pub kind: BaselineKind,
    pub entries: Vec<String>,
}

fn dedup<'a>(paths: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    paths.filter(|p| seen.insert(*p)).map(str::to_string).collect()
}

/// Backtrace files, top frame first.
pub fn baseline1(stack: &CrashStack) -> BaselineRanking {
    BaselineRanking {
        kind: BaselineKind::B1,
        entries: dedup(stack.backtrace.iter().map(|l| l.file_path.as_str())),
    }
}

/// Pending-exception files first, then backtrace files.
pub fn baseline2(stack: &CrashStack) -> BaselineRanking {
    BaselineRanking {
        kind: BaselineKind::B2,
        entries: dedup(
            stack
                .pending
                .iter()
                .chain(&stack.backtrace)
                .map(|l| l.file_path.as_str()),
        ),
    }
}

pub fn baseline(kind: BaselineKind, stack: &CrashStack) -> BaselineRanking {
    match kind {
        BaselineKind::B1 => baseline1(stack),
        BaselineKind::B2 => baseline2(stack),
    }
}

impl BaselineRanking {
    /// Maps stack paths onto repository paths; unresolvable ones are kept
    /// verbatim. Order is preserved and duplicates created by the mapping
    /// are dropped.
    pub fn resolved(&self, repo: &RepoSnapshot) -> Self {
        let mapped: Vec<String> = self
            .entries
            .iter()
            .map(|p| repo.resolve_path(p).unwrap_or_else(|_| p.clone()))
            .collect();
        Self {
            kind: self.kind,
            entries: dedup(mapped.iter().map(String::as_str)),
        }
    }
}

/// Primary paths in rank order followed by the filler paths it lacks.
pub fn augment<S: Score>(primary: &ScoredRanking<S>, filler: &BaselineRanking) -> Vec<String> {
    augment_paths(&primary.paths(), &filler.entries)
}

pub fn augment_paths(primary: &[String], filler: &[String]) -> Vec<String> {
    dedup(primary.iter().chain(filler).map(String::as_str))
}

/// A decimal number kept as its exact JSON text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decimal(String);

impl Decimal {
    pub fn new(text: impl Into<String>) -> Self {
        Self(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn value(&self) -> f64 {
        self.0.parse().unwrap_or(f64::NAN)
    }
}

impl Serialize for Decimal {
    fn serialize<Z: Serializer>(&self, s: Z) -> Result<Z::Ok, Z::Error> {
        let raw = RawValue::from_string(self.0.clone()).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = Box::<RawValue>::deserialize(d)?;
        let text = raw.get().trim();
        text.parse::<f64>()
            .map_err(|_| serde::de::Error::custom(format!("expected a number, got {text}")))?;
        Ok(Self(text.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub path: String,
    pub score: Decimal,
}

/// On-disk ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub crash_id: String,
    #[serde(rename = "R")]
    pub runs: usize,
    pub confidence: Decimal,
    pub entries: Vec<RecordEntry>,
    /// Set when the ranking was extended with a baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmented: Option<Vec<String>>,
}

impl RankingRecord {
    /// The list used for scoring: the augmented one when present.
    pub fn ordered_paths(&self) -> Vec<String> {
        match &self.augmented {
            Some(list) => list.clone(),
            None => self.entries.iter().map(|e| e.path.clone()).collect(),
        }
    }

    pub fn confidence(&self) -> f64 {
        self.confidence.value()
    }
}

#[cfg(test)]
mod tests;
