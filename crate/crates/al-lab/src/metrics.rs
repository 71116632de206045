//! Evaluation metrics. Macro AUROC: one-vs-rest AUC per class present in
//! the labels, averaged; ties counted 0.5 via the rank (Mann-Whitney)
//! formulation.

use crate::error::{Error, Result};

/// Binary AUC from per-instance scores and 0/1 labels, Mann-Whitney ranks.
fn binary_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = n - n_pos;
    let rank_sum: f64 = (0..n).filter(|&i| positive[i]).map(|i| ranks[i]).sum();
    (rank_sum - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64)
}

/// One-vs-rest AUROC macro-averaged over the classes present in `labels`.
/// `scores[i][c]` is the score of instance i for class c.
pub fn macro_auc(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Metric("scores and labels must be non-empty and matching".into()));
    }
    let classes = scores[0].len();
    let mut aucs = Vec::new();
    for c in 0..classes {
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let n_pos = positive.iter().filter(|&&p| p).count();
        if n_pos == 0 || n_pos == labels.len() {
            continue; // class absent (or only class) -> skipped in the macro average
        }
        let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        aucs.push(binary_auc(&col, &positive));
    }
    if aucs.is_empty() {
        return Err(Error::Metric("fewer than two classes present in labels".into()));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn perfectly_ranked_is_one() {
        let scores = vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.2, 0.8], vec![0.1, 0.9]];
        let labels = vec![0, 0, 1, 1];
        assert_relative_eq!(macro_auc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn all_tied_is_half() {
        let scores = vec![vec![0.5, 0.5]; 6];
        let labels = vec![0, 1, 0, 1, 0, 1];
        assert_relative_eq!(macro_auc(&scores, &labels).unwrap(), 0.5);
    }

    #[test]
    fn four_point_hand_case() {
        // binary AUC 0.75: 3 of 4 pos/neg pairs concordant
        let pos_scores = [0.9, 0.8, 0.7, 0.1];
        let labels = [1usize, 0, 1, 0];
        let scores: Vec<Vec<f64>> =
            pos_scores.iter().map(|&s| vec![1.0 - s, s]).collect();
        assert_relative_eq!(macro_auc(&scores, &labels).unwrap(), 0.75);
    }

    #[test]
    fn single_class_is_undefined() {
        let scores = vec![vec![0.2, 0.8]; 3];
        assert!(macro_auc(&scores, &[1, 1, 1]).is_err());
    }

    #[test]
    fn absent_class_skipped() {
        // 3 class columns but only classes 0 and 1 present
        let scores = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.6, 0.3, 0.1],
            vec![0.2, 0.7, 0.1],
        ];
        let labels = vec![0, 1, 0, 1];
        assert_relative_eq!(macro_auc(&scores, &labels).unwrap(), 1.0);
    }
}
