//! Platt scaling: fit σ(a·p + b) to binary outcomes.

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_lengths, EvalError};

pub const L2_LAMBDA: f64 = 1e-6;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;

fn c<F: Float>(x: f64) -> F {
    F::from(x).unwrap()
}

pub(crate) fn sigmoid<F: Float>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus<F: Float>(z: F) -> F {
    if z > F::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel<F> {
    pub a: F,
    pub b: F,
    /// Newton iteration stopped without meeting the gradient tolerance.
    pub fallback: bool,
    pub iterations: usize,
}

impl<F: Float> CalibrationModel<F> {
    pub fn apply(&self, p: F) -> F {
        sigmoid(self.a * p + self.b)
    }

    pub fn apply_all(&self, ps: &[F]) -> Vec<F> {
        ps.iter().map(|p| self.apply(*p)).collect()
    }
}

/// Penalized negative log-likelihood.
pub(crate) fn objective<F: Float>(ps: &[F], ys: &[bool], a: F, b: F) -> F {
    let lambda = c::<F>(L2_LAMBDA);
    let mut total = c::<F>(0.5) * lambda * (a * a + b * b);
    for (p, y) in ps.iter().zip(ys) {
        let z = a * *p + b;
        // -log σ(z) = softplus(-z), -log(1-σ(z)) = softplus(z)
        total = total + if *y { softplus(-z) } else { softplus(z) };
    }
    total
}

pub fn platt_fit<F: Float>(confidences: &[F], labels: &[bool]) -> Result<CalibrationModel<F>, EvalError> {
    check_lengths(confidences.len(), labels.len())?;
    let positives = labels.iter().filter(|y| **y).count();
    if positives == 0 || positives == labels.len() {
        return Err(EvalError::Degenerate("calibration needs both outcome classes".into()));
    }
    let lambda = c::<F>(L2_LAMBDA);
    let tol = c::<F>(GRADIENT_TOLERANCE);
    let (mut a, mut b) = (F::zero(), F::zero());
    let mut current = objective(confidences, labels, a, b);
    for iteration in 0..MAX_ITERATIONS {
        // gradient and Hessian of the minimized objective
        let (mut ga, mut gb) = (lambda * a, lambda * b);
        let (mut haa, mut hab, mut hbb) = (lambda, F::zero(), lambda);
        for (p, y) in confidences.iter().zip(labels) {
            let s = sigmoid(a * *p + b);
            let r = s - if *y { F::one() } else { F::zero() };
            ga = ga + r * *p;
            gb = gb + r;
            let w = s * (F::one() - s);
            haa = haa + w * *p * *p;
            hab = hab + w * *p;
            hbb = hbb + w;
        }
        if (ga * ga + gb * gb).sqrt() < tol {
            return Ok(CalibrationModel {
                a,
                b,
                fallback: false,
                iterations: iteration,
            });
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > F::zero() && det.is_finite() {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        // backtracking keeps each step a descent step
        let mut step = F::one();
        let mut accepted = false;
        for _ in 0..40 {
            let (na, nb) = (a - step * da, b - step * db);
            let next = objective(confidences, labels, na, nb);
            if next <= current {
                a = na;
                b = nb;
                current = next;
                accepted = true;
                break;
            }
            step = step * c(0.5);
        }
        if !accepted {
            break;
        }
    }
    Ok(CalibrationModel {
        a,
        b,
        fallback: true,
        iterations: MAX_ITERATIONS,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCalibration<F> {
    pub scores: Vec<F>,
    pub folds: usize,
    pub seed: u64,
    /// Folds whose training part had a single class and used the full fit.
    pub degenerate_folds: Vec<usize>,
    /// Folds whose fit hit the iteration limit.
    pub fallback_folds: Vec<usize>,
}

/// Fold index per item: seeded shuffle, then round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, idx) in order.into_iter().enumerate() {
        fold[idx] = pos % folds;
    }
    fold
}

/// Cross-validated calibration: every score is mapped by a model fit on
/// the other folds.
pub fn platt_cv<F: Float>(
    confidences: &[F],
    labels: &[bool],
    folds: usize,
    seed: u64,
) -> Result<CvCalibration<F>, EvalError> {
    check_lengths(confidences.len(), labels.len())?;
    let n = confidences.len();
    if folds < 2 || n < folds {
        return Err(EvalError::InvalidInput(format!("{folds} folds over {n} items")));
    }
    let full = platt_fit(confidences, labels)?;
    let assignment = fold_assignment(n, folds, seed);
    let mut scores = vec![F::zero(); n];
    let mut degenerate_folds = Vec::new();
    let mut fallback_folds = Vec::new();
    for fold in 0..folds {
        let (mut tp, mut ty) = (Vec::new(), Vec::new());
        for i in (0..n).filter(|i| assignment[*i] != fold) {
            tp.push(confidences[i]);
            ty.push(labels[i]);
        }
        let model = match platt_fit(&tp, &ty) {
            Ok(m) => m,
            Err(EvalError::Degenerate(_)) => {
                degenerate_folds.push(fold);
                full
            }
            Err(e) => return Err(e),
        };
        if model.fallback {
            fallback_folds.push(fold);
        }
        for i in (0..n).filter(|i| assignment[*i] == fold) {
            scores[i] = model.apply(confidences[i]);
        }
    }
    Ok(CvCalibration {
        scores,
        folds,
        seed,
        degenerate_folds,
        fallback_folds,
    })
}
