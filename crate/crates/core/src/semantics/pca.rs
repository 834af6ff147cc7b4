//! Principal components via cyclic Jacobi rotations.

use crate::stats;

/// Eigen-decomposition of a symmetric `n x n` row-major matrix. Returns
/// eigenvalues and column eigenvectors (row-major `n x n`), sorted by
/// descending eigenvalue with ties kept in index order.
pub(crate) fn symmetric_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = a.iter().map(|x| x * x).sum();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |q| *q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum();
        if off <= total * 1e-30 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|i, j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(j)));
    let values = order.iter().map(|i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + col] = v[row * n + src];
        }
    }
    (values, vectors)
}

/// Result of projecting `n` points onto their top principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `n` rows of `dims` coordinates.
    pub scores: Vec<Vec<f64>>,
    /// Population variance along each returned axis, descending.
    pub variances: Vec<f64>,
    /// Unit loading vector of each returned axis.
    pub loadings: Vec<Vec<f64>>,
    /// Number of axes with non-negligible variance.
    pub rank: usize,
}

impl Projection {
    pub fn is_degenerate(&self) -> bool {
        self.rank < self.variances.len()
    }
}

/// Projects mean-centred `data` onto its top `dims` principal axes. Axes
/// beyond the data's rank get zero scores. Each loading vector's
/// largest-magnitude entry (first on ties) is made positive.
///
/// Uses the `d x d` covariance when `n >= d` and the `n x n` Gram matrix
/// otherwise; both give the same axes.
pub fn principal_components(data: &[Vec<f64>], dims: usize) -> Projection {
    let n = data.len();
    let d = data.first().map_or(0, Vec::len);
    let means: Vec<f64> = (0..d)
        .map(|j| stats::mean(&data.iter().map(|r| r[j]).collect::<Vec<_>>()).unwrap_or(0.0))
        .collect();
    let centred: Vec<Vec<f64>> = data
        .iter()
        .map(|r| r.iter().zip(&means).map(|(x, m)| x - m).collect())
        .collect();

    let (eigvals, axes): (Vec<f64>, Vec<Vec<f64>>) = if n >= d {
        let mut cov = vec![0.0; d * d];
        for j in 0..d {
            for k in j..d {
                let v = stats::sum(centred.iter().map(|r| r[j] * r[k])) / n as f64;
                cov[j * d + k] = v;
                cov[k * d + j] = v;
            }
        }
        let (vals, vecs) = symmetric_eigen(cov, d);
        let axes = (0..d)
            .map(|c| (0..d).map(|r| vecs[r * d + c]).collect())
            .collect();
        (vals, axes)
    } else {
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for k in i..n {
                let v = stats::sum(centred[i].iter().zip(&centred[k]).map(|(a, b)| a * b));
                gram[i * n + k] = v;
                gram[k * n + i] = v;
            }
        }
        let (vals, vecs) = symmetric_eigen(gram, n);
        // loading = Xc^T u / |Xc^T u|; covariance eigenvalue = lambda / n
        let axes = (0..n)
            .map(|c| {
                let mut w: Vec<f64> = (0..d)
                    .map(|j| stats::sum((0..n).map(|i| centred[i][j] * vecs[i * n + c])))
                    .collect();
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    w.iter_mut().for_each(|x| *x /= norm);
                }
                w
            })
            .collect();
        (vals.into_iter().map(|l| l / n as f64).collect(), axes)
    };

    let top = eigvals.first().copied().unwrap_or(0.0);
    let significant = |l: f64| top > 0.0 && l > top * 1e-12;
    let all_identical = data.iter().all(|r| r == &data[0]);
    let rank = if all_identical {
        0
    } else {
        eigvals.iter().take(dims).filter(|l| significant(**l)).count()
    };

    let mut scores = vec![vec![0.0; dims]; n];
    let mut variances = vec![0.0; dims];
    let mut loadings = vec![vec![0.0; d]; dims];
    for c in 0..rank {
        let mut axis = axes[c].clone();
        let lead = axis
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |best, (j, x)| if x.abs() > best.1 { (j, x.abs()) } else { best })
            .0;
        if axis[lead] < 0.0 {
            axis.iter_mut().for_each(|x| *x = -*x);
        }
        for (i, row) in centred.iter().enumerate() {
            scores[i][c] = stats::sum(row.iter().zip(&axis).map(|(a, b)| a * b));
        }
        variances[c] = eigvals[c].max(0.0);
        loadings[c] = axis;
    }
    Projection {
        scores,
        variances,
        loadings,
        rank,
    }
}
