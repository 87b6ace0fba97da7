//! LinUCB contextual bandit over family byte positions. The context of a
//! seed is its execution path, featurized as cosine similarities to a set
//! of center seeds chosen by farthest-point traversal. Each position keeps
//! ridge-regression statistics (A = I + sum f f^T, b = sum phi f); its
//! score is the expected reward plus half the confidence width.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::coverage::EdgeSet;
use crate::error::{Error, Result};
use crate::family::SeedId;

pub const DEFAULT_CENTERS: usize = 10;
pub const DEFAULT_UCB_ALPHA: f64 = 0.5;

/// Cosine similarity between two edge sets: |a∩b| / sqrt(|a||b|).
/// Defined as 0 when exactly one side is empty and 1 when both are.
pub fn cosine(a: &EdgeSet, b: &EdgeSet) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let inter = a.intersection(b).len() as f64;
            inter / ((a.len() as f64) * (b.len() as f64)).sqrt()
        }
    }
}

/// Seeds whose paths anchor the feature space.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CenterSet {
    centers: Vec<(SeedId, EdgeSet)>,
    k: usize,
}

impl CenterSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Feature dimension; features are zero-padded up to this.
    pub fn dimension(&self) -> usize {
        self.k
    }

    pub fn seed_ids(&self) -> impl Iterator<Item = SeedId> + '_ {
        self.centers.iter().map(|(id, _)| *id)
    }
}

/// Farthest-point traversal: start from the seed with the largest edge set
/// (ties: lowest id), then repeatedly take the seed maximizing the minimum
/// distance (1 - cosine) to the chosen centers.
pub fn select_centers(corpus_paths: &[(SeedId, EdgeSet)], k: usize) -> Result<CenterSet> {
    if corpus_paths.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut remaining: Vec<&(SeedId, EdgeSet)> = corpus_paths.iter().collect();
    remaining.sort_by_key(|(id, _)| *id);

    let first = remaining
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("nonempty");
    let mut centers = vec![remaining.swap_remove(first).clone()];
    remaining.sort_by_key(|(id, _)| *id);

    while centers.len() < k && !remaining.is_empty() {
        let mut best: Option<(usize, f64)> = None;
        for (i, (_, path)) in remaining.iter().enumerate() {
            let min_dist = centers
                .iter()
                .map(|(_, c)| 1.0 - cosine(path, c))
                .fold(f64::INFINITY, f64::min);
            let better = match best {
                None => true,
                Some((_, d)) => min_dist > d,
            };
            if better {
                best = Some((i, min_dist));
            }
        }
        let (idx, _) = best.expect("nonempty remaining");
        centers.push(remaining.remove(idx).clone());
    }

    Ok(CenterSet { centers, k })
}

/// Context feature vector, one cosine entry per center, zero padded to k.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    fn as_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }
}

pub fn featurize(seed_path: &EdgeSet, centers: &CenterSet) -> FeatureVector {
    let mut values = vec![0.0; centers.k.max(centers.centers.len())];
    for (i, (_, c)) in centers.centers.iter().enumerate() {
        values[i] = cosine(seed_path, c);
    }
    FeatureVector { values }
}

/// Per-position ridge-regression statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    a: DMatrix<f64>,
    b: DVector<f64>,
    pulls: u64,
}

impl ArmState {
    pub fn new(dimension: usize) -> Self {
        Self {
            a: DMatrix::identity(dimension, dimension),
            b: DVector::zeros(dimension),
            pulls: 0,
        }
    }

    pub fn pulls(&self) -> u64 {
        self.pulls
    }

    pub fn dimension(&self) -> usize {
        self.a.nrows()
    }

    /// Row-major copy of the design matrix A.
    pub fn matrix_rows(&self) -> Vec<Vec<f64>> {
        (0..self.a.nrows())
            .map(|i| (0..self.a.ncols()).map(|j| self.a[(i, j)]).collect())
            .collect()
    }

    pub fn reward_vector(&self) -> Vec<f64> {
        self.b.iter().copied().collect()
    }

    /// Smallest eigenvalue of A; at least 1 by construction.
    pub fn min_eigenvalue(&self) -> f64 {
        self.a
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v))
    }

    fn check_dimension(&self, f: &FeatureVector) -> Result<()> {
        if f.dimension() != self.dimension() {
            return Err(Error::Config(format!(
                "feature dimension {} does not match arm dimension {}",
                f.dimension(),
                self.dimension()
            )));
        }
        Ok(())
    }

    /// Score(s, p) = f^T (A^-1 b) + alpha * sqrt(f^T A^-1 f).
    pub fn score(&self, f: &FeatureVector, alpha: f64) -> Result<f64> {
        self.check_dimension(f)?;
        let fv = f.as_dvector();
        // A starts at the identity and only grows by rank-one terms, so the
        // Cholesky factorization always exists.
        let chol = Cholesky::new(self.a.clone())
            .ok_or_else(|| Error::Config("arm matrix not positive definite".into()))?;
        let theta = chol.solve(&self.b);
        let a_inv_f = chol.solve(&fv);
        let expected = fv.dot(&theta);
        let width = fv.dot(&a_inv_f).max(0.0).sqrt();
        Ok(expected + alpha * width)
    }

    /// A += f f^T; b += phi * f.
    pub fn update(&mut self, f: &FeatureVector, phi_reward: f64) -> Result<()> {
        self.check_dimension(f)?;
        if !phi_reward.is_finite() {
            return Err(Error::NonFiniteReward(phi_reward));
        }
        let fv = f.as_dvector();
        self.a += &fv * fv.transpose();
        self.b += phi_reward * &fv;
        self.pulls += 1;
        Ok(())
    }
}

/// Turn scores into a selection distribution: shift so the minimum is 0,
/// add epsilon everywhere, normalize. Order preserving.
pub fn selection_distribution(scores: &[f64]) -> Result<Vec<f64>> {
    const EPSILON: f64 = 1e-6;
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteReward(f64::NAN));
    }
    let min = scores.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let shifted: Vec<f64> = scores.iter().map(|s| s - min + EPSILON).collect();
    let total: f64 = shifted.iter().sum();
    Ok(shifted.into_iter().map(|s| s / total).collect())
}
