//! Unseen-class priors: representation, sampling, clustering-based
//! estimation and the prior-bias metric.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};

const SIMPLEX_TOL: f64 = 1e-9;

/// Probability vector over the unseen classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior(Vec<f64>);

impl ClassPrior {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Validation("empty prior".into()));
        }
        if let Some(bad) = p.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Validation(format!("prior entry {bad} is not a probability")));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Validation(format!("prior sums to {s}")));
        }
        Ok(Self(p))
    }

    /// Normalises non-negative weights.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        let s: f64 = w.iter().sum();
        if !(s > 0.0) || w.iter().any(|v| *v < 0.0) {
            return Err(Error::Validation("weights must be non-negative with a positive sum".into()));
        }
        Self::new(w.iter().map(|v| v / s).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Contract("uniform prior needs at least one class".into()));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// I.i.d. categorical draws by inverse CDF.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<usize> {
        let last_positive = self.0.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        (0..n)
            .map(|_| {
                let u = rng.uniform();
                let mut acc = 0.0;
                for (k, &p) in self.0.iter().enumerate() {
                    acc += p;
                    if u < acc && p > 0.0 {
                        return k;
                    }
                }
                last_positive
            })
            .collect()
    }

    pub fn to_csv_row(&self) -> String {
        self.0.iter().map(|p| format!("{p:.6}")).collect::<Vec<_>>().join(",")
    }
}

pub fn uniform_prior(n_unseen: usize) -> Result<ClassPrior> {
    ClassPrior::uniform(n_unseen)
}

/// Class-averaged absolute prior error in percent: `(100/N)·Σ|p̂ᵢ − pᵢ|`.
pub fn prior_bias(estimate: &ClassPrior, truth: &ClassPrior) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Contract(format!(
            "prior lengths differ: {} vs {}",
            estimate.len(),
            truth.len()
        )));
    }
    let s: f64 = estimate.0.iter().zip(&truth.0).map(|(a, b)| (a - b).abs()).sum();
    Ok(100.0 * s / truth.len() as f64)
}

fn nearest(x: &[f64], centroids: &Matrix) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centroids.iter_rows().enumerate() {
        let d: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Nearest-centroid assignment of every row.
pub fn assign_nearest(x: &Matrix, centroids: &Matrix) -> Vec<usize> {
    x.iter_rows().map(|r| nearest(r, centroids)).collect()
}

/// Per-cluster means of `x` under `assignment`; empty clusters keep `fallback`.
pub fn centroids_of(x: &Matrix, assignment: &[usize], fallback: &Matrix) -> Matrix {
    let mut sums = Matrix::zeros(fallback.rows(), x.cols());
    let mut counts = vec![0usize; fallback.rows()];
    for (r, &k) in x.iter_rows().zip(assignment) {
        counts[k] += 1;
        for (s, v) in sums.row_mut(k).iter_mut().zip(r) {
            *s += v;
        }
    }
    for (k, &n) in counts.iter().enumerate() {
        if n == 0 {
            sums.row_mut(k).copy_from_slice(fallback.row(k));
        } else {
            sums.row_mut(k).iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

/// Clustering-based prior estimate.
///
/// Lloyd iterations start from one anchor per unseen class; after `iters`
/// assignment rounds the prior is the fraction of rows in each cluster. An
/// empty cluster keeps its previous centroid and reports probability 0.
pub fn estimate_prior_cpe(xu: &Matrix, anchors: &Matrix, iters: usize) -> Result<ClassPrior> {
    if iters == 0 {
        return Err(Error::Contract("CPE needs at least one iteration".into()));
    }
    if xu.rows() == 0 {
        return Err(Error::Contract("CPE needs unlabeled samples".into()));
    }
    if anchors.cols() != xu.cols() || anchors.rows() == 0 {
        return Err(Error::Contract(format!(
            "anchors are {}x{}, samples have {} columns",
            anchors.rows(),
            anchors.cols(),
            xu.cols()
        )));
    }
    let mut centroids = anchors.clone();
    let mut assignment = assign_nearest(xu, &centroids);
    for _ in 1..iters {
        centroids = centroids_of(xu, &assignment, &centroids);
        let next = assign_nearest(xu, &centroids);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let mut counts = vec![0.0; anchors.rows()];
    for &k in &assignment {
        counts[k] += 1.0;
    }
    ClassPrior::from_weights(&counts)
}

/// Which prior a stage samples unseen classes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Uniform,
    Cpe,
    #[serde(rename = "gt")]
    GroundTruth,
}

impl PriorKind {
    pub const ALL: [PriorKind; 3] = [PriorKind::Uniform, PriorKind::Cpe, PriorKind::GroundTruth];
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorKind::Uniform => "uniform",
            PriorKind::Cpe => "cpe",
            PriorKind::GroundTruth => "gt",
        })
    }
}

impl FromStr for PriorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PriorKind::Uniform),
            "cpe" => Ok(PriorKind::Cpe),
            "gt" | "ground_truth" => Ok(PriorKind::GroundTruth),
            other => Err(Error::Config(format!("unknown prior kind {other:?} (uniform|cpe|gt)"))),
        }
    }
}
