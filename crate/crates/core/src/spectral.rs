//! Eigendecompositions, the per-objective eigenvector selection rules and
//! subspace distances.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::linalg::{asymmetry, gram_residual, max_abs, thin_orthonormal, to_rows};
use crate::mdp::{max_commutator, Mdp};
use crate::{Error, ObjectiveKind, Result};

pub const SYMMETRY_TOL: f64 = 1e-10;
pub const COMMUTATOR_TOL: f64 = 1e-8;
pub const LEAKAGE_TOL: f64 = 1e-8;
/// Eigenvalues of the averaged matrix closer than this are refined jointly.
const CLUSTER_TOL: f64 = 1e-8;

/// Eigenvalues in descending order with their eigenvectors as columns of `Q`.
/// Each eigenvector's first entry above `1e-12` in magnitude is positive.
pub fn sym_eigendecomposition(t: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if t.nrows() != t.ncols() || t.nrows() == 0 {
        return Err(Error::invalid("eigendecomposition needs a nonempty square matrix"));
    }
    let asym = asymmetry(t);
    if asym > SYMMETRY_TOL {
        return Err(Error::invalid(format!("matrix is not symmetric (asymmetry {asym:e})")));
    }
    let eig = crate::linalg::symmetric_part(t).symmetric_eigen();
    let mut order: Vec<usize> = (0..t.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let mut q = DMatrix::from_fn(t.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    fix_signs(&mut q);
    Ok((q, vals))
}

fn fix_signs(q: &mut DMatrix<f64>) {
    for mut col in q.column_iter_mut() {
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12).copied() {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Eigen-selection rule for each objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Criterion {
    #[serde(rename = "square-of-mean")]
    SquareOfMean,
    #[serde(rename = "mean-of-squares")]
    MeanOfSquares,
    #[serde(rename = "variance")]
    Variance,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::SquareOfMean, Criterion::MeanOfSquares, Criterion::Variance];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::SquareOfMean => "square-of-mean",
            Criterion::MeanOfSquares => "mean-of-squares",
            Criterion::Variance => "variance",
        }
    }

    pub fn for_objective(kind: ObjectiveKind) -> Self {
        match kind {
            ObjectiveKind::Pi => Criterion::SquareOfMean,
            ObjectiveKind::Ac => Criterion::MeanOfSquares,
            ObjectiveKind::Var => Criterion::Variance,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown criterion `{s}`")))
    }
}

/// Per-eigenvector scores for all three criteria.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionScores {
    pub square_of_mean: Vec<f64>,
    pub mean_of_squares: Vec<f64>,
    pub variance: Vec<f64>,
}

impl CriterionScores {
    pub fn get(&self, c: Criterion) -> &[f64] {
        match c {
            Criterion::SquareOfMean => &self.square_of_mean,
            Criterion::MeanOfSquares => &self.mean_of_squares,
            Criterion::Variance => &self.variance,
        }
    }
}

/// Scores from an `m × n` eigenvalue array (rows = actions) and action weights.
pub fn criterion_scores(eigvals: &DMatrix<f64>, weights: &DVector<f64>) -> Result<CriterionScores> {
    let (m, n) = eigvals.shape();
    if weights.len() != m || m == 0 {
        return Err(Error::invalid(format!("expected {m} action weights, got {}", weights.len())));
    }
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || (weights.sum() - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("action weights must form a probability vector"));
    }
    let mut out = CriterionScores {
        square_of_mean: Vec::with_capacity(n),
        mean_of_squares: Vec::with_capacity(n),
        variance: Vec::with_capacity(n),
    };
    for i in 0..n {
        let col = eigvals.column(i);
        let mean: f64 = col.iter().zip(weights.iter()).map(|(l, w)| w * l).sum();
        let msq: f64 = col.iter().zip(weights.iter()).map(|(l, w)| w * l * l).sum();
        let var: f64 = col.iter().zip(weights.iter()).map(|(l, w)| w * (l - mean).powi(2)).sum();
        out.square_of_mean.push(mean * mean);
        out.mean_of_squares.push(msq);
        out.variance.push(var);
    }
    Ok(out)
}

/// Indices sorted by descending score; equal scores keep index order.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Gap between the `k`-th and `(k+1)`-th largest score; infinite when `k = n`.
pub fn score_gap(scores: &[f64], k: usize) -> f64 {
    let r = ranking(scores);
    if k == 0 || k >= r.len() {
        return f64::INFINITY;
    }
    scores[r[k - 1]] - scores[r[k]]
}

/// Shared eigenbasis of a commuting family with per-action eigenvalues and
/// the three criterion scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    pub basis: DMatrix<f64>,
    /// `m × n`; row `a` holds `diag(Qᵀ T_a Q)`.
    pub eigvals: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub scores: CriterionScores,
    /// Largest off-diagonal entry of `Qᵀ T_a Q` over actions.
    pub leakage: f64,
}

impl SpectralReport {
    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    pub fn topk_indices(&self, criterion: Criterion, k: usize) -> Vec<usize> {
        ranking(self.scores.get(criterion)).into_iter().take(k).collect()
    }

    pub fn gap(&self, criterion: Criterion, k: usize) -> f64 {
        score_gap(self.scores.get(criterion), k)
    }

    /// JSON with basis, eigenvalues, scores and the top-`k` indices per criterion.
    pub fn to_json(&self, k: usize) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            basis: Vec<Vec<f64>>,
            eigvals: Vec<Vec<f64>>,
            weights: Vec<f64>,
            scores: &'a CriterionScores,
            topk: std::collections::BTreeMap<&'static str, Vec<usize>>,
            leakage: f64,
        }
        let topk = Criterion::ALL.iter().map(|c| (c.as_str(), self.topk_indices(*c, k))).collect();
        let doc = Doc {
            basis: to_rows(&self.basis),
            eigvals: to_rows(&self.eigvals),
            weights: self.weights.iter().copied().collect(),
            scores: &self.scores,
            topk,
            leakage: self.leakage,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Joint eigendecomposition with uniform action weights.
pub fn joint_eigendecomposition(mdp: &Mdp) -> Result<SpectralReport> {
    let m = mdp.n_actions();
    joint_eigendecomposition_weighted(mdp, &DVector::from_element(m, 1.0 / m as f64))
}

/// Diagonalizes the weighted average of the `T_a`, then re-diagonalizes
/// inside each cluster of (near-)repeated eigenvalues so the basis also
/// splits eigenspaces that only the individual actions distinguish.
pub fn joint_eigendecomposition_weighted(mdp: &Mdp, weights: &DVector<f64>) -> Result<SpectralReport> {
    let comm = max_commutator(mdp);
    if comm > COMMUTATOR_TOL {
        return Err(Error::AssumptionViolation(format!(
            "transition matrices do not commute (max commutator entry {comm:e})"
        )));
    }
    let ts = mdp.transitions();
    for t in ts {
        let asym = asymmetry(t);
        if asym > SYMMETRY_TOL {
            return Err(Error::AssumptionViolation(format!("transition matrix is not symmetric ({asym:e})")));
        }
    }
    let n = mdp.n_states();
    let m = ts.len();
    if weights.len() != m {
        return Err(Error::invalid("one weight per action is required"));
    }
    let avg = ts.iter().zip(weights.iter()).fold(DMatrix::zeros(n, n), |acc, (t, w)| acc + t * *w);
    let (mut q, vals) = sym_eigendecomposition(&avg)?;

    // Fixed, generic mixing coefficients for splitting clusters.
    let mix: Vec<f64> = (0..m).map(|a| ((a as f64 + 1.0) * 0.618_033_988_749_895).fract() + 0.5).collect();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (vals[end - 1] - vals[end]).abs() <= CLUSTER_TOL * vals[start].abs().max(1.0) {
            end += 1;
        }
        if end - start > 1 && m > 1 {
            let v = q.columns(start, end - start).into_owned();
            let restricted = ts
                .iter()
                .zip(&mix)
                .fold(DMatrix::zeros(end - start, end - start), |acc, (t, c)| acc + v.transpose() * t * &v * *c);
            let (w, _) = sym_eigendecomposition(&crate::linalg::symmetric_part(&restricted))?;
            let refined = &v * w;
            q.columns_mut(start, end - start).copy_from(&refined);
        }
        start = end;
    }
    fix_signs(&mut q);

    let mut eigvals = DMatrix::zeros(m, n);
    let mut leakage = 0.0f64;
    for (a, t) in ts.iter().enumerate() {
        let d = q.transpose() * t * &q;
        for i in 0..n {
            eigvals[(a, i)] = d[(i, i)];
            for j in 0..n {
                if i != j {
                    leakage = leakage.max(d[(i, j)].abs());
                }
            }
        }
    }
    if leakage > LEAKAGE_TOL {
        return Err(Error::AssumptionViolation(format!("shared basis leaks off-diagonal mass {leakage:e}")));
    }
    let scores = criterion_scores(&eigvals, weights)?;
    Ok(SpectralReport { basis: q, eigvals, weights: weights.clone(), scores, leakage })
}

/// Columns of `Q` at the `k` largest scores of `criterion`, in ranking order.
pub fn topk_subspace(report: &SpectralReport, criterion: Criterion, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 || k > report.n() {
        return Err(Error::invalid(format!("k must lie in 1..={}, got {k}", report.n())));
    }
    let idx = report.topk_indices(criterion, k);
    Ok(report.basis.select_columns(&idx))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubspaceDistance {
    /// Ascending, in `[0, π/2]`.
    pub principal_angles: Vec<f64>,
    pub grassmann: f64,
}

fn prepare(phi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = gram_residual(phi);
    if r == 0.0 {
        return Ok(phi.clone());
    }
    if r > 1e-6 {
        return Err(Error::invalid(format!("representation is not orthonormal (residual {r:e})")));
    }
    thin_orthonormal(phi).map_err(|e| Error::invalid(e.to_string()))
}

/// Principal angles between two column spans. Small angles come from the
/// sines and large ones from the cosines, which keeps both ends accurate.
pub fn principal_angles(phi1: &DMatrix<f64>, phi2: &DMatrix<f64>) -> Result<SubspaceDistance> {
    if phi1.shape() != phi2.shape() {
        return Err(Error::invalid(format!("shapes differ: {:?} vs {:?}", phi1.shape(), phi2.shape())));
    }
    let (n, k) = phi1.shape();
    if k == 0 || k > n {
        return Err(Error::invalid("subspaces must be n x k with n >= k >= 1"));
    }
    let a = prepare(phi1)?;
    let b = prepare(phi2)?;
    let mut cos: Vec<f64> = (a.transpose() * &b).singular_values().iter().map(|s| s.clamp(0.0, 1.0)).collect();
    cos.sort_by(|x, y| y.total_cmp(x));
    let residual = &b - &a * (a.transpose() * &b);
    let mut sin: Vec<f64> = residual.singular_values().iter().map(|s| s.clamp(0.0, 1.0)).collect();
    sin.sort_by(|x, y| x.total_cmp(y));
    let angles: Vec<f64> = cos
        .iter()
        .zip(&sin)
        .map(|(c, s)| if c * c >= 0.5 { s.asin() } else { c.acos() })
        .collect();
    let grassmann = angles.iter().map(|t| t * t).sum::<f64>().sqrt();
    Ok(SubspaceDistance { principal_angles: angles, grassmann })
}

pub fn grassmann_distance(phi1: &DMatrix<f64>, phi2: &DMatrix<f64>) -> Result<f64> {
    Ok(principal_angles(phi1, phi2)?.grassmann)
}

/// Reconstruction error `max_a ‖Q diag(D_a) Qᵀ − T_a‖_∞`.
pub fn reconstruction_error(report: &SpectralReport, mdp: &Mdp) -> f64 {
    mdp.transitions()
        .iter()
        .enumerate()
        .map(|(a, t)| {
            let d = DMatrix::from_diagonal(&report.eigvals.row(a).transpose());
            max_abs(&(&report.basis * d * report.basis.transpose() - t))
        })
        .fold(0.0, f64::max)
}
