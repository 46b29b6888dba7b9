//! Scoring rankings against ground truth and analysing confidence.

mod calibrate;
pub mod special;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crashdump::CrashStack;

pub use calibrate::{
    fold_assignment, platt_cv, platt_fit, CalibrationModel, CvCalibration, GRADIENT_TOLERANCE, L2_LAMBDA,
    MAX_ITERATIONS,
};

pub const DEFAULT_KS: [usize; 5] = [1, 2, 3, 5, 10];
pub const DEFAULT_BOUNDS: [f64; 4] = [0.0, 0.33, 0.66, 1.0];
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no ground truth for crash '{0}'")]
    MissingGroundTruth(String),
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub(crate) fn check_lengths(a: usize, b: usize) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::LengthMismatch(a, b));
    }
    Ok(())
}

fn c<F: Float>(x: f64) -> F {
    F::from(x).unwrap()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub crash_id: String,
    pub buggy_files: BTreeSet<String>,
}

impl GroundTruth {
    pub fn new(crash_id: impl Into<String>, files: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            crash_id: crash_id.into(),
            buggy_files: files.into_iter().map(Into::into).collect(),
        }
    }

    pub fn hit_within(&self, ranking: &[String], k: usize) -> bool {
        ranking.iter().take(k).any(|p| self.buggy_files.contains(p))
    }
}

pub type Rankings = BTreeMap<String, Vec<String>>;
pub type Truths = BTreeMap<String, GroundTruth>;

fn truth_for<'a>(truth: &'a Truths, id: &str) -> Result<&'a GroundTruth, EvalError> {
    truth.get(id).ok_or_else(|| EvalError::MissingGroundTruth(id.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccAt {
    pub k: usize,
    pub count: usize,
    pub ratio: f64,
}

/// Crashes with a buggy file among the first k entries, for each k. Empty
/// rankings are misses at every k.
pub fn acc_at_k(rankings: &Rankings, truth: &Truths, ks: &[usize]) -> Result<Vec<AccAt>, EvalError> {
    let mut counts = vec![0; ks.len()];
    for (id, ranking) in rankings {
        let gt = truth_for(truth, id)?;
        for (slot, k) in counts.iter_mut().zip(ks) {
            if gt.hit_within(ranking, *k) {
                *slot += 1;
            }
        }
    }
    let total = rankings.len();
    Ok(ks
        .iter()
        .zip(counts)
        .map(|(k, count)| AccAt {
            k: *k,
            count,
            ratio: if total == 0 { 0.0 } else { count as f64 / total as f64 },
        })
        .collect())
}

pub fn top1_success(rankings: &Rankings, truth: &Truths) -> Result<BTreeMap<String, bool>, EvalError> {
    rankings
        .iter()
        .map(|(id, r)| Ok((id.clone(), truth_for(truth, id)?.hit_within(r, 1))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlap {
    pub only_a: usize,
    pub both: usize,
    pub only_b: usize,
}

/// Decomposition of top-1 successes of two ranking sets.
pub fn top1_overlap(a: &Rankings, b: &Rankings, truth: &Truths) -> Result<Overlap, EvalError> {
    let hits = |r: &Rankings| -> Result<HashSet<String>, EvalError> {
        Ok(top1_success(r, truth)?
            .into_iter()
            .filter_map(|(id, ok)| ok.then_some(id))
            .collect())
    };
    let (ha, hb) = (hits(a)?, hits(b)?);
    Ok(Overlap {
        only_a: ha.difference(&hb).count(),
        both: ha.intersection(&hb).count(),
        only_b: hb.difference(&ha).count(),
    })
}

/// Share of buggy files whose basename shows up anywhere in the stack.
pub fn in_trace_ratio<F: Float>(stack: &CrashStack, truth: &GroundTruth) -> Result<F, EvalError> {
    if truth.buggy_files.is_empty() {
        return Err(EvalError::InvalidInput(format!("crash '{}' has no buggy files", truth.crash_id)));
    }
    let names: HashSet<&str> = stack.locations().map(|l| l.basename()).collect();
    let found = truth
        .buggy_files
        .iter()
        .filter(|f| names.contains(crate::crashdump::basename(f)))
        .count();
    Ok(c::<F>(found as f64) / c(truth.buggy_files.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket<F> {
    /// Exclusive.
    pub lower: F,
    /// Inclusive.
    pub upper: F,
    pub n: usize,
    pub successes: usize,
    /// Absent for an empty bucket.
    pub ratio: Option<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketTable<F> {
    pub buckets: Vec<Bucket<F>>,
    /// Scores outside every interval (for example a confidence of exactly 0).
    pub outside: usize,
}

/// Success ratio per interval (bounds[i], bounds[i+1]].
pub fn bucket_success<F: Float>(confidences: &[F], labels: &[bool], bounds: &[F]) -> Result<BucketTable<F>, EvalError> {
    check_lengths(confidences.len(), labels.len())?;
    if bounds.len() < 2 || bounds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::InvalidInput("bounds must be strictly increasing with at least two cut points".into()));
    }
    let mut buckets: Vec<Bucket<F>> = bounds
        .windows(2)
        .map(|w| Bucket {
            lower: w[0],
            upper: w[1],
            n: 0,
            successes: 0,
            ratio: None,
        })
        .collect();
    let mut outside = 0;
    for (p, y) in confidences.iter().zip(labels) {
        match buckets.iter_mut().find(|b| *p > b.lower && *p <= b.upper) {
            Some(b) => {
                b.n += 1;
                b.successes += usize::from(*y);
            }
            None => outside += 1,
        }
    }
    for b in &mut buckets {
        if b.n > 0 {
            b.ratio = Some(c::<F>(b.successes as f64) / c(b.n as f64));
        }
    }
    Ok(BucketTable { buckets, outside })
}

fn pearson<F: Float>(xs: &[F], ys: &[F]) -> F {
    let n = c::<F>(xs.len() as f64);
    let mx = xs.iter().fold(F::zero(), |a, x| a + *x) / n;
    let my = ys.iter().fold(F::zero(), |a, y| a + *y) / n;
    let (mut sxy, mut sxx, mut syy) = (F::zero(), F::zero(), F::zero());
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (*x - mx, *y - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == F::zero() || syy == F::zero() {
        return F::zero();
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    r.max(-F::one()).min(F::one())
}

fn check_correlation_input<F: Float>(confidences: &[F], labels: &[bool]) -> Result<(), EvalError> {
    check_lengths(confidences.len(), labels.len())?;
    if confidences.len() < 3 {
        return Err(EvalError::Degenerate(format!("need at least 3 items, got {}", confidences.len())));
    }
    let positives = labels.iter().filter(|y| **y).count();
    if positives == 0 || positives == labels.len() {
        return Err(EvalError::Degenerate("both label classes must be present".into()));
    }
    Ok(())
}

fn as_numbers<F: Float>(labels: &[bool]) -> Vec<F> {
    labels.iter().map(|y| if *y { F::one() } else { F::zero() }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation<F> {
    pub r: F,
    pub p_value: F,
}

/// Pearson correlation against 0/1 labels with a two-sided t-test p-value.
pub fn point_biserial<F: Float>(confidences: &[F], labels: &[bool]) -> Result<Correlation<F>, EvalError> {
    check_correlation_input(confidences, labels)?;
    let r = pearson(confidences, &as_numbers(labels));
    let df = c::<F>((confidences.len() - 2) as f64);
    let denom = F::one() - r * r;
    let t = if denom <= F::zero() {
        F::infinity()
    } else {
        r * (df / denom).sqrt()
    };
    Ok(Correlation {
        r,
        p_value: special::student_t_two_sided(t, df),
    })
}

/// Same r, with a label-permutation p-value: (hits + 1) / (permutations + 1).
pub fn point_biserial_permutation<F: Float>(
    confidences: &[F],
    labels: &[bool],
    permutations: usize,
    seed: u64,
) -> Result<Correlation<F>, EvalError> {
    check_correlation_input(confidences, labels)?;
    let mut ys = as_numbers::<F>(labels);
    let r = pearson(confidences, &ys);
    let slack = c::<F>(1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..permutations {
        ys.shuffle(&mut rng);
        if pearson(confidences, &ys).abs() >= r.abs() - slack {
            hits += 1;
        }
    }
    Ok(Correlation {
        r,
        p_value: c::<F>((hits + 1) as f64) / c((permutations + 1) as f64),
    })
}

/// Mean squared error between confidence and outcome.
pub fn brier<F: Float>(confidences: &[F], labels: &[bool]) -> Result<F, EvalError> {
    check_lengths(confidences.len(), labels.len())?;
    if confidences.is_empty() {
        return Err(EvalError::LengthMismatch(0, 0));
    }
    let sum = confidences
        .iter()
        .zip(labels)
        .map(|(p, y)| {
            let d = *p - if *y { F::one() } else { F::zero() };
            d * d
        })
        .fold(F::zero(), |a, x| a + x);
    Ok(sum / c(confidences.len() as f64))
}

/// One crash as seen by the evaluator.
#[derive(Debug, Clone, PartialEq)]
pub struct CrashOutcome {
    pub crash_id: String,
    pub ranking: Vec<String>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub ks: Vec<usize>,
    pub bounds: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    /// Use a permutation test with this many shuffles instead of the t-test.
    pub permutations: Option<usize>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            ks: DEFAULT_KS.to_vec(),
            bounds: DEFAULT_BOUNDS.to_vec(),
            folds: DEFAULT_FOLDS,
            seed: 0,
            permutations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub folds: usize,
    pub seed: u64,
    pub degenerate_folds: Vec<usize>,
    pub fallback_folds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub acc_at: Vec<AccAt>,
    pub per_crash_success: BTreeMap<String, bool>,
    pub buckets: BucketTable<f64>,
    pub point_biserial: Option<Correlation<f64>>,
    pub p_value_method: String,
    pub brier_raw: Option<f64>,
    pub brier_calibrated: Option<f64>,
    pub calibration: Option<CalibrationSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<crate::explain::AlignmentRates>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

/// Rounds to the six fraction digits used in serialized reports.
pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Full report; statistics that cannot be computed are left empty with a
/// diagnostic instead of failing the whole report.
pub fn build_report(outcomes: &[CrashOutcome], truth: &Truths, opts: &ReportOptions) -> Result<EvalReport, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::InvalidInput("no rankings to evaluate".into()));
    }
    let rankings: Rankings = outcomes.iter().map(|o| (o.crash_id.clone(), o.ranking.clone())).collect();
    if rankings.len() != outcomes.len() {
        return Err(EvalError::InvalidInput("duplicate crash ids among rankings".into()));
    }
    let acc_at = acc_at_k(&rankings, truth, &opts.ks)?
        .into_iter()
        .map(|a| AccAt {
            ratio: round6(a.ratio),
            ..a
        })
        .collect();
    let per_crash_success = top1_success(&rankings, truth)?;
    let confidences: Vec<f64> = outcomes.iter().map(|o| o.confidence).collect();
    let labels: Vec<bool> = outcomes.iter().map(|o| per_crash_success[&o.crash_id]).collect();
    let mut diagnostics = Vec::new();

    let mut buckets = bucket_success(&confidences, &labels, &opts.bounds)?;
    for b in &mut buckets.buckets {
        b.ratio = b.ratio.map(round6);
    }
    let correlation = match opts.permutations {
        Some(n) => point_biserial_permutation(&confidences, &labels, n, opts.seed),
        None => point_biserial(&confidences, &labels),
    };
    let point_biserial = match correlation {
        Ok(r) => Some(Correlation {
            r: round6(r.r),
            p_value: round6(r.p_value),
        }),
        Err(e) => {
            diagnostics.push(format!("point-biserial skipped: {e}"));
            None
        }
    };
    let brier_raw = Some(round6(brier(&confidences, &labels)?));
    let (brier_calibrated, calibration) = match platt_cv(&confidences, &labels, opts.folds, opts.seed) {
        Ok(cv) => (
            Some(round6(brier(&cv.scores, &labels)?)),
            Some(CalibrationSummary {
                folds: cv.folds,
                seed: cv.seed,
                degenerate_folds: cv.degenerate_folds,
                fallback_folds: cv.fallback_folds,
            }),
        ),
        Err(e) => {
            diagnostics.push(format!("calibration skipped: {e}"));
            (None, None)
        }
    };
    Ok(EvalReport {
        total: outcomes.len(),
        acc_at,
        per_crash_success,
        buckets,
        point_biserial,
        p_value_method: match opts.permutations {
            Some(n) => format!("permutation({n})"),
            None => "student-t".into(),
        },
        brier_raw,
        brier_calibrated,
        calibration,
        alignment: None,
        diagnostics,
    })
}
