//! Affinity propagation (Frey & Dueck message passing).
//!
//! Responsibilities `r(i,k)` and availabilities `a(i,k)` are exchanged with
//! damping until the exemplar set `{k : a(k,k) + r(k,k) > 0}` stays fixed
//! for `convergence_iter` sweeps. Exemplars are then refined within their
//! clusters and every point is assigned to its most similar exemplar.
//!
//! No random jitter is used. Exact ties (duplicate points, symmetric
//! layouts) are broken by biasing the working similarities by a vanishing,
//! index-proportional amount, so that the lower index wins. Reported
//! quantities always use the unbiased similarities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ApError {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("damping must lie in [0.5, 1), got {0}")]
    InvalidDamping(f64),
    #[error("similarity matrix must be square with {n}x{n} finite entries")]
    InvalidMatrix { n: usize },
    #[error("no exemplars emerged after {iterations} iterations")]
    NoExemplars { iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preference {
    Value(f64),
    /// Median of the off-diagonal similarities.
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApParams {
    pub damping: f64,
    pub max_iter: usize,
    pub convergence_iter: usize,
    pub preference: Preference,
}

impl Default for ApParams {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_iter: 200,
            convergence_iter: 15,
            preference: Preference::Median,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    /// Exemplar point indices, ascending.
    pub exemplars: Vec<usize>,
    /// Exemplar point index of every point.
    pub assignment: Vec<usize>,
    pub n_iterations: usize,
    pub converged: bool,
    /// `sum_i s(i, assignment[i])`, with the preference counted for exemplars.
    pub net_similarity: f64,
    /// Preference actually used on the diagonal.
    pub preference: f64,
}

impl ClusteringResult {
    pub fn n_clusters(&self) -> usize {
        self.exemplars.len()
    }

    /// Position of point `i`'s exemplar in [`Self::exemplars`].
    pub fn cluster_of(&self, i: usize) -> usize {
        self.exemplars
            .binary_search(&self.assignment[i])
            .expect("assignment targets an exemplar")
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        let e = self.exemplars[cluster];
        (0..self.assignment.len())
            .filter(|i| self.assignment[*i] == e)
            .collect()
    }
}

/// Dense row-major `n x n` similarity with `s(i,k) = -|x_i - x_k|^2`;
/// the diagonal is left at 0.
pub fn negative_squared_euclidean(points: &[[f64; 2]]) -> Vec<f64> {
    let n = points.len();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            if i != k {
                let dx = points[i][0] - points[k][0];
                let dy = points[i][1] - points[k][1];
                s[i * n + k] = -(dx * dx + dy * dy);
            }
        }
    }
    s
}

/// Clusters 2-d points under negative squared Euclidean similarity.
pub fn affinity_propagation(
    points: &[[f64; 2]],
    params: &ApParams,
) -> Result<ClusteringResult, ApError> {
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(ApError::InvalidMatrix { n: points.len() });
    }
    affinity_propagation_matrix(&negative_squared_euclidean(points), points.len(), params)
}

fn median_off_diagonal(s: &[f64], n: usize) -> f64 {
    let mut off: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |k| *k != i).map(move |k| s[i * n + k]))
        .collect();
    off.sort_by(f64::total_cmp);
    let m = off.len() / 2;
    if off.len() % 2 == 0 {
        (off[m - 1] + off[m]) / 2.0
    } else {
        off[m]
    }
}

/// Index of the first maximum of `values`.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Runs affinity propagation on a precomputed row-major similarity matrix.
/// The diagonal of `similarity` is ignored and replaced by the preference.
pub fn affinity_propagation_matrix(
    similarity: &[f64],
    n: usize,
    params: &ApParams,
) -> Result<ClusteringResult, ApError> {
    if n < 2 {
        return Err(ApError::TooFewPoints(n));
    }
    if !(0.5..1.0).contains(&params.damping) {
        return Err(ApError::InvalidDamping(params.damping));
    }
    if similarity.len() != n * n || similarity.iter().any(|v| !v.is_finite()) {
        return Err(ApError::InvalidMatrix { n });
    }

    let preference = match params.preference {
        Preference::Value(p) => p,
        Preference::Median => median_off_diagonal(similarity, n),
    };
    if !preference.is_finite() {
        return Err(ApError::InvalidMatrix { n });
    }
    let mut s = similarity.to_vec();
    for k in 0..n {
        s[k * n + k] = preference;
    }

    // Tie-break bias: scale it to the similarity range so it only matters
    // where entries are exactly equal.
    let scale = s.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let eps = scale * 1e-10 / n as f64;
    let mut work = s.clone();
    for i in 0..n {
        for k in 0..n {
            work[i * n + k] -= eps * k as f64;
        }
    }

    let damping = params.damping;
    let mut r = vec![0.0; n * n];
    let mut a = vec![0.0; n * n];
    let mut history: Vec<Vec<bool>> = Vec::with_capacity(params.convergence_iter);
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..params.max_iter {
        iterations = it + 1;
        // responsibilities
        for i in 0..n {
            let row = i * n;
            let mut first = (0, f64::NEG_INFINITY);
            let mut second = f64::NEG_INFINITY;
            for k in 0..n {
                let v = a[row + k] + work[row + k];
                if v > first.1 {
                    second = first.1;
                    first = (k, v);
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == first.0 { second } else { first.1 };
                let fresh = work[row + k] - competitor;
                r[row + k] = damping * r[row + k] + (1.0 - damping) * fresh;
            }
        }
        // availabilities
        for k in 0..n {
            let mut positive = 0.0;
            for i in 0..n {
                if i != k {
                    positive += r[i * n + k].max(0.0);
                }
            }
            let rkk = r[k * n + k];
            for i in 0..n {
                let fresh = if i == k {
                    positive
                } else {
                    (rkk + positive - r[i * n + k].max(0.0)).min(0.0)
                };
                a[i * n + k] = damping * a[i * n + k] + (1.0 - damping) * fresh;
            }
        }

        let exemplar: Vec<bool> = (0..n).map(|k| a[k * n + k] + r[k * n + k] > 0.0).collect();
        if history.len() == params.convergence_iter {
            history.remove(0);
        }
        history.push(exemplar);
        if history.len() == params.convergence_iter
            && history.windows(2).all(|w| w[0] == w[1])
            && history[0].iter().any(|e| *e)
        {
            converged = true;
            break;
        }
    }

    let last = history.last().cloned().unwrap_or_default();
    let mut exemplars: Vec<usize> = (0..n).filter(|k| last[*k]).collect();
    if exemplars.is_empty() {
        return Err(ApError::NoExemplars { iterations });
    }

    // Refine: within each cluster pick the member with the largest summed
    // similarity to the other members, then reassign.
    let assign = |exemplars: &[usize]| -> Vec<usize> {
        (0..n)
            .map(|i| {
                if exemplars.contains(&i) {
                    i
                } else {
                    exemplars[argmax(exemplars.iter().map(|k| work[i * n + k]))]
                }
            })
            .collect()
    };
    let assignment = assign(&exemplars);
    let mut refined = Vec::with_capacity(exemplars.len());
    for &e in &exemplars {
        let members: Vec<usize> = (0..n).filter(|i| assignment[*i] == e).collect();
        let best = argmax(
            members
                .iter()
                .map(|j| members.iter().map(|i| work[i * n + j]).sum::<f64>()),
        );
        refined.push(members[best]);
    }
    refined.sort_unstable();
    refined.dedup();
    exemplars = refined;
    let assignment = assign(&exemplars);

    let net_similarity = (0..n).map(|i| s[i * n + assignment[i]]).sum();
    Ok(ClusteringResult {
        exemplars,
        assignment,
        n_iterations: iterations,
        converged,
        net_similarity,
        preference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pref: f64) -> ApParams {
        ApParams {
            preference: Preference::Value(pref),
            ..ApParams::default()
        }
    }

    #[test]
    fn two_clusters_on_a_line() {
        let pts = [[0.0, 0.0], [0.0, 0.0], [10.0, 0.0]];
        let res = affinity_propagation(&pts, &params(-50.0)).unwrap();
        assert_eq!(res.n_clusters(), 2);
        assert!(res.exemplars.contains(&2));
        assert!(res.exemplars.contains(&0) || res.exemplars.contains(&1));
        assert_eq!(res.assignment[0], res.assignment[1]);
        assert!((res.net_similarity + 100.0).abs() < 1e-9);
        assert!(res.converged);
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let pts = [[1.0, 1.0]; 3];
        let res = affinity_propagation(&pts, &params(-1.0)).unwrap();
        assert_eq!(res.exemplars, vec![0]);
        assert_eq!(res.assignment, vec![0, 0, 0]);
        assert!((res.net_similarity + 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            affinity_propagation(&[[0.0, 0.0]], &ApParams::default()).unwrap_err(),
            ApError::TooFewPoints(1)
        );
        let p = ApParams {
            damping: 0.3,
            ..ApParams::default()
        };
        assert_eq!(
            affinity_propagation(&[[0.0, 0.0], [1.0, 1.0]], &p).unwrap_err(),
            ApError::InvalidDamping(0.3)
        );
    }

    #[test]
    fn median_preference_on_separated_blobs() {
        let mut pts = Vec::new();
        for c in [[0.0, 0.0], [5.0, 5.0], [10.0, 0.0]] {
            for d in [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [0.1, 0.1]] {
                pts.push([c[0] + d[0], c[1] + d[1]]);
            }
        }
        let res = affinity_propagation(&pts, &params(-1.0)).unwrap();
        assert_eq!(res.n_clusters(), 3);
        for blob in 0..3 {
            let first = res.assignment[blob * 4];
            assert!((0..4).all(|j| res.assignment[blob * 4 + j] == first));
        }
        let median = affinity_propagation(&pts, &ApParams::default()).unwrap();
        assert!(median.preference < 0.0);
    }
}
