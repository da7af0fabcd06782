//! Evaluation metrics and cluster-quality scores.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("ROC-AUC needs both classes present")]
    SingleClass,
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("clustering needs at least 2 groups with at least 2 members each")]
    DegenerateClustering,
}

/// Rank-based ROC-AUC (Mann-Whitney U) with midranks for ties.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie block i..=j shares their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let p = n_pos as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

/// Mean ROC-AUC over tasks with both classes among the labelled rows.
/// Returns the mean and the indices of skipped tasks.
pub fn roc_auc_multi(scores: &[Vec<f64>], labels: &[Vec<Option<f64>>]) -> Result<(f64, Vec<usize>), MetricError> {
    let n_tasks = labels.first().map_or(0, |r| r.len());
    let mut total = 0.0;
    let mut used = 0;
    let mut skipped = Vec::new();
    for t in 0..n_tasks {
        let (s, l): (Vec<f64>, Vec<u8>) = scores.iter().zip(labels).filter_map(|(s, l)| l[t].map(|y| (s[t], (y > 0.5) as u8))).unzip();
        match roc_auc(&s, &l) {
            Ok(a) => {
                total += a;
                used += 1;
            }
            Err(MetricError::SingleClass) => skipped.push(t),
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(MetricError::SingleClass);
    }
    Ok((total / used as f64, skipped))
}

pub fn rmse(preds: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::LengthMismatch(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mse = preds.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / preds.len() as f64;
    Ok(mse.sqrt())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Group member indices by key, in first-appearance order.
fn groups<K: PartialEq>(keys: &[K]) -> Vec<Vec<usize>> {
    let mut reps: Vec<&K> = Vec::new();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, k) in keys.iter().enumerate() {
        match reps.iter().position(|r| *r == k) {
            Some(g) => out[g].push(i),
            None => {
                reps.push(k);
                out.push(vec![i]);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterScores {
    pub dbi: f64,
    pub silhouette: f64,
}

/// Davies-Bouldin index and mean silhouette, Euclidean distance.
pub fn cluster_metrics<K: PartialEq>(points: &[Vec<f64>], keys: &[K]) -> Result<ClusterScores, MetricError> {
    if points.len() != keys.len() {
        return Err(MetricError::LengthMismatch(points.len(), keys.len()));
    }
    let gs = groups(keys);
    if gs.len() < 2 || gs.iter().any(|g| g.len() < 2) {
        return Err(MetricError::DegenerateClustering);
    }
    let dim = points[0].len();
    let centroids: Vec<Vec<f64>> = gs
        .iter()
        .map(|g| {
            let mut c = vec![0.0; dim];
            for &i in g {
                for (a, b) in c.iter_mut().zip(&points[i]) {
                    *a += b;
                }
            }
            c.iter_mut().for_each(|a| *a /= g.len() as f64);
            c
        })
        .collect();
    let scatter: Vec<f64> = gs
        .iter()
        .zip(&centroids)
        .map(|(g, c)| g.iter().map(|&i| distance(&points[i], c)).sum::<f64>() / g.len() as f64)
        .collect();
    let k = gs.len();
    let mut dbi = 0.0;
    for i in 0..k {
        let worst = (0..k)
            .filter(|&j| j != i)
            .map(|j| (scatter[i] + scatter[j]) / distance(&centroids[i], &centroids[j]))
            .fold(f64::NEG_INFINITY, f64::max);
        dbi += worst;
    }
    dbi /= k as f64;

    let mut label = vec![0; points.len()];
    for (g, members) in gs.iter().enumerate() {
        for &i in members {
            label[i] = g;
        }
    }
    let mut sil = 0.0;
    for i in 0..points.len() {
        let mut sums = vec![0.0; k];
        for j in 0..points.len() {
            if j != i {
                sums[label[j]] += distance(&points[i], &points[j]);
            }
        }
        let own = label[i];
        let a = sums[own] / (gs[own].len() - 1) as f64;
        let b = (0..k).filter(|&g| g != own).map(|g| sums[g] / gs[g].len() as f64).fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        sil += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    Ok(ClusterScores {
        dbi,
        silhouette: sil / points.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.8, 0.6, 0.4], &[1, 0, 1]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(MetricError::SingleClass));
    }

    #[test]
    fn multi_task_skips_single_class() {
        let scores = vec![vec![0.9, 0.1], vec![0.1, 0.2], vec![0.5, 0.3]];
        let labels = vec![vec![Some(1.0), Some(1.0)], vec![Some(0.0), Some(1.0)], vec![None, Some(1.0)]];
        let (mean, skipped) = roc_auc_multi(&scores, &labels).unwrap();
        assert_eq!(mean, 1.0);
        assert_eq!(skipped, vec![1]);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_relative_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5f64.sqrt(), epsilon = 1e-12);
        assert_eq!(rmse(&[2.5], &[-1.0]).unwrap(), 3.5);
        assert_eq!(rmse(&[], &[]), Err(MetricError::EmptyInput));
    }

    #[test]
    fn cluster_examples() {
        let pts = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
        let s = cluster_metrics(&pts, &["a", "a", "b", "b"]).unwrap();
        assert_relative_eq!(s.dbi, 0.1, epsilon = 1e-12);
        assert!(s.silhouette > 0.9);
        assert_eq!(cluster_metrics(&pts, &["a", "b", "c", "d"]), Err(MetricError::DegenerateClustering));
        assert_eq!(cluster_metrics(&pts, &["a"; 4]), Err(MetricError::DegenerateClustering));
    }
}
