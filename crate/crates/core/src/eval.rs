//! Metrics for comparing embeddings and predictions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ProbDrError, Result};

/// Whether Procrustes alignment may rescale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcrustesMode {
    /// Translation, orthogonal map and uniform scale; both inputs are
    /// normalised to unit Frobenius norm.
    #[default]
    Similarity,
    /// Translation and orthogonal map only; residual relative to |b|.
    Rigid,
}

#[derive(Debug, Clone)]
pub struct ProcrustesResult {
    pub residual: f64,
    /// `a` mapped onto the frame of `b`.
    pub aligned: DMatrix<f64>,
    pub rotation: DMatrix<f64>,
    pub scale: f64,
}

fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

fn check_same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(ProbDrError::ShapeMismatch { expected: format!("{:?}", b.shape()), got: format!("{:?}", a.shape()) });
    }
    Ok(())
}

/// Aligns `a` to `b` and reports the remaining Frobenius error.
pub fn procrustes(a: &DMatrix<f64>, b: &DMatrix<f64>, mode: ProcrustesMode) -> Result<ProcrustesResult> {
    check_same_shape(a, b)?;
    let (ac, bc) = (centered(a), centered(b));
    let (na, nb) = (ac.norm(), bc.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(ProbDrError::InvalidArgument("Procrustes input has zero variance".into()));
    }
    let (ah, bh) = match mode {
        ProcrustesMode::Similarity => (&ac / na, &bc / nb),
        ProcrustesMode::Rigid => (ac.clone(), bc.clone()),
    };
    let svd = (ah.transpose() * &bh).svd(true, true);
    let (u, vt) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let rotation = u * vt;
    let scale = match mode {
        ProcrustesMode::Similarity => svd.singular_values.sum(),
        ProcrustesMode::Rigid => 1.0,
    };
    let fitted = &ah * &rotation * scale;
    let residual = match mode {
        ProcrustesMode::Similarity => (&fitted - &bh).norm(),
        ProcrustesMode::Rigid => (&fitted - &bh).norm() / nb,
    };
    let b_mean = DMatrix::from_fn(1, b.ncols(), |_, c| b.column(c).mean());
    let back = match mode {
        ProcrustesMode::Similarity => nb,
        ProcrustesMode::Rigid => 1.0,
    };
    let mut aligned = fitted * back;
    for mut row in aligned.row_iter_mut() {
        row += &b_mean;
    }
    Ok(ProcrustesResult { residual, aligned, rotation, scale })
}

/// Mean silhouette with Euclidean distances. Points alone in their cluster
/// or with a = b = 0 score zero.
pub fn silhouette(x: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(ProbDrError::ShapeMismatch { expected: format!("{n} labels"), got: format!("{}", labels.len()) });
    }
    let mut clusters: Vec<usize> = labels.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    if clusters.len() < 2 {
        return Err(ProbDrError::InvalidArgument("silhouette needs at least two clusters".into()));
    }
    let index = |l: usize| clusters.binary_search(&l).expect("label present");
    let sizes = clusters.iter().map(|&c| labels.iter().filter(|&&l| l == c).count()).collect::<Vec<_>>();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; clusters.len()];
        for j in 0..n {
            if i != j {
                sums[index(labels[j])] += (x.row(i) - x.row(j)).norm();
            }
        }
        let own = index(labels[i]);
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..clusters.len()).filter(|&c| c != own).map(|c| sums[c] / sizes[c] as f64).fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Root mean squared elementwise error.
pub fn rmse(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    check_same_shape(pred, truth)?;
    if pred.is_empty() {
        return Err(ProbDrError::InvalidArgument("rmse of an empty matrix".into()));
    }
    Ok(((pred - truth).norm_squared() / pred.len() as f64).sqrt())
}

/// Ranks starting at 1 with ties given their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &k in &order[start..=end] {
            ranks[k] = rank;
        }
        start = end + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(ProbDrError::ShapeMismatch { expected: format!("{} values", a.len()), got: format!("{}", b.len()) });
    }
    let r = pearson(&average_ranks(a), &average_ranks(b));
    if !r.is_finite() {
        return Err(ProbDrError::InvalidArgument("spearman correlation of a constant sequence".into()));
    }
    Ok(r)
}

/// Pearson correlation.
pub fn pearson_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(ProbDrError::ShapeMismatch { expected: format!("{} values", a.len()), got: format!("{}", b.len()) });
    }
    Ok(pearson(a, b))
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random(n: usize, q: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = SeededRng::new(seed);
        DMatrix::from_fn(n, q, |_, _| rng.normal())
    }

    fn random_orthogonal(q: usize, seed: u64) -> DMatrix<f64> {
        random(q, q, seed).qr().q()
    }

    #[test]
    fn similarity_transform_has_zero_residual() {
        let a = random(20, 3, 1);
        let q = random_orthogonal(3, 2);
        let mut b = &a * &q * 2.5;
        for mut row in b.row_iter_mut() {
            row[0] += 4.0;
            row[2] -= 1.0;
        }
        let r = procrustes(&a, &b, ProcrustesMode::Similarity).unwrap();
        assert!(r.residual < 1e-10);
        assert!((r.aligned - &b).norm() < 1e-9);
        let mut reflected = a.clone();
        reflected.column_mut(0).neg_mut();
        assert!(procrustes(&a, &reflected, ProcrustesMode::Similarity).unwrap().residual < 1e-10);
        let rigid = procrustes(&a, &(&a * &q), ProcrustesMode::Rigid).unwrap();
        assert!(rigid.residual < 1e-10);
    }

    #[test]
    fn independent_embeddings_are_far_apart() {
        let a = random(200, 2, 3);
        let b = random(200, 2, 4);
        let r = procrustes(&a, &b, ProcrustesMode::Similarity).unwrap();
        assert!(r.residual > 0.9 && r.residual <= 1.0 + 1e-12);
    }

    #[test]
    fn procrustes_is_symmetric_and_rejects_constants() {
        let a = random(15, 2, 5);
        let b = &a + random(15, 2, 6) * 0.3;
        let ab = procrustes(&a, &b, ProcrustesMode::Similarity).unwrap().residual;
        let ba = procrustes(&b, &a, ProcrustesMode::Similarity).unwrap().residual;
        assert!((ab - ba).abs() < 1e-8);
        assert!(procrustes(&a, &DMatrix::from_element(15, 2, 3.0), ProcrustesMode::Similarity).is_err());
        assert!(procrustes(&a, &random(14, 2, 7), ProcrustesMode::Similarity).is_err());
    }

    #[test]
    fn silhouette_cases() {
        let mut x = random(40, 2, 8) * 0.1;
        let labels: Vec<usize> = (0..40).map(|i| i / 20).collect();
        for i in 20..40 {
            x[(i, 0)] += 50.0;
        }
        assert!(silhouette(&x, &labels).unwrap() > 0.9);
        let mut rng = SeededRng::new(9);
        let mut mean_abs = 0.0;
        let y = random(60, 2, 10);
        for _ in 0..20 {
            let shuffled: Vec<usize> = (0..60).map(|_| usize::from(rng.bernoulli(0.5))).collect();
            mean_abs += silhouette(&y, &shuffled).unwrap().abs() / 20.0;
        }
        assert!(mean_abs < 0.15);
        let same = DMatrix::zeros(4, 2);
        assert_eq!(silhouette(&same, &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(silhouette(&same, &[1, 1, 1, 1]).is_err());
    }

    #[test]
    fn silhouette_is_similarity_invariant() {
        let x = random(30, 2, 11);
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let moved = &x * random_orthogonal(2, 12) * 3.0 + DMatrix::from_element(30, 2, 7.0);
        let (s1, s2) = (silhouette(&x, &labels).unwrap(), silhouette(&moved, &labels).unwrap());
        assert!((s1 - s2).abs() < 1e-10);
    }

    #[test]
    fn rmse_cases() {
        let a = random(5, 3, 13);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        assert!((rmse(&a.add_scalar(-0.7), &a).unwrap() - 0.7).abs() < 1e-12);
        let b = random(5, 3, 14);
        let mut acc = 0.0;
        for i in 0..5 {
            for j in 0..3 {
                acc += (a[(i, j)] - b[(i, j)]).powi(2);
            }
        }
        assert!((rmse(&a, &b).unwrap() - (acc / 15.0).sqrt()).abs() < 1e-12);
        assert!(rmse(&a, &random(3, 5, 1)).is_err());
    }

    #[test]
    fn ranks_and_spearman() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ks_of_uniform_sample() {
        let mut rng = SeededRng::new(15);
        let s: Vec<f64> = (0..10_000).map(|_| rng.uniform()).collect();
        assert!(ks_statistic(&s, |x| x.clamp(0.0, 1.0)) < 0.02);
        assert!(ks_statistic(&s, |x| (x * 2.0).clamp(0.0, 1.0)) > 0.4);
    }
}
