//! Acquisition scores over Monte Carlo output matrices: variation ratio,
//! predictive entropy, BALD, and the two consistency divergences (Gaussian
//! KL over fitted moments, and the paired-row categorical JSD form), plus
//! the trapezoidal score-history integrator and top-b selection.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mc::OutputMatrix;
use crate::nn::{argmax_lowest, PROB_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcquisitionFn {
    VarRatio,
    Entropy,
    Bald,
    BalcKld,
    BalcJsd,
}

impl AcquisitionFn {
    pub fn needs_paired_outputs(self) -> bool {
        matches!(self, AcquisitionFn::BalcKld | AcquisitionFn::BalcJsd)
    }
}

impl std::fmt::Display for AcquisitionFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AcquisitionFn::VarRatio => "var-ratio",
            AcquisitionFn::Entropy => "entropy",
            AcquisitionFn::Bald => "bald",
            AcquisitionFn::BalcKld => "balc-kld",
            AcquisitionFn::BalcJsd => "balc-jsd",
        })
    }
}

/// 1 - (votes for the modal argmax class) / T. Argmax and modal ties break
/// toward the lowest class index.
pub fn var_ratio(g: &OutputMatrix) -> f64 {
    let mut votes = vec![0usize; g.classes()];
    for row in g.rows() {
        votes[argmax_lowest(row)] += 1;
    }
    let modal = *votes.iter().max().expect("at least one class");
    1.0 - modal as f64 / g.samples() as f64
}

fn entropy(p: &[f64]) -> f64 {
    p.iter().map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 }).sum()
}

/// Entropy of the mean predictive distribution, natural log.
pub fn pred_entropy(g: &OutputMatrix) -> f64 {
    entropy(&g.mean_row())
}

/// H(mean row) - mean row entropy, clamped at zero from below.
pub fn bald(g: &OutputMatrix) -> f64 {
    let mean_h: f64 = g.rows().iter().map(|r| entropy(r)).sum::<f64>() / g.samples() as f64;
    let v = pred_entropy(g) - mean_h;
    if v < 0.0 && v > -1e-12 {
        0.0
    } else {
        v
    }
}

/// Moments of an output matrix: mean vector plus the unnormalized scatter
/// matrix with a ridge added so the fit is positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    /// row-major C x C, already regularized
    pub cov: Vec<f64>,
    pub ridge: f64,
}

pub fn gaussian_fit(g: &OutputMatrix, ridge: f64) -> GaussianFit {
    let c = g.classes();
    let mean = g.mean_row();
    let mut cov = vec![0.0; c * c];
    for row in g.rows() {
        for i in 0..c {
            let di = row[i] - mean[i];
            for j in 0..c {
                cov[i * c + j] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..c {
        cov[i * c + i] += ridge;
    }
    GaussianFit { mean, cov, ridge }
}

/// Closed-form KL between two multivariate Gaussians:
/// 0.5 [tr(Sb^-1 Sa) + (mb-ma)^T Sb^-1 (mb-ma) - C + ln(det Sb / det Sa)].
pub fn kl_mvn(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    let c = a.mean.len();
    if b.mean.len() != c {
        return Err(Error::ShapeMismatch { expected: c, got: b.mean.len() });
    }
    let la = linalg::cholesky(&a.cov, c)?;
    let lb = linalg::cholesky(&b.cov, c)?;
    // tr(Sb^-1 Sa): solve per column of Sa
    let mut trace = 0.0;
    let mut col = vec![0.0; c];
    for j in 0..c {
        for (i, cv) in col.iter_mut().enumerate() {
            *cv = a.cov[i * c + j];
        }
        trace += linalg::chol_solve(&lb, c, &col)[j];
    }
    let diff: Vec<f64> = b.mean.iter().zip(&a.mean).map(|(mb, ma)| mb - ma).collect();
    let solved = linalg::chol_solve(&lb, c, &diff);
    let maha: f64 = diff.iter().zip(&solved).map(|(d, s)| d * s).sum();
    let log_det = linalg::log_det_from_chol(&lb, c) - linalg::log_det_from_chol(&la, c);
    Ok(0.5 * (trace + maha - c as f64 + log_det))
}

/// Gaussian-KL consistency score between the fits of G and G'.
pub fn balc_kld(g: &OutputMatrix, gp: &OutputMatrix, ridge: f64) -> Result<f64> {
    if g.samples() != gp.samples() || g.classes() != gp.classes() {
        return Err(Error::ShapeMismatch { expected: g.classes(), got: gp.classes() });
    }
    kl_mvn(&gaussian_fit(g, ridge), &gaussian_fit(gp, ridge))
}

fn kl_categorical(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let pi = pi.max(PROB_FLOOR);
            let qi = qi.max(PROB_FLOOR);
            pi * (pi / qi).ln()
        })
        .sum()
}

/// Mean paired-row KL minus KL of the mean rows.
pub fn balc_jsd(g: &OutputMatrix, gp: &OutputMatrix) -> Result<f64> {
    if g.samples() != gp.samples() || g.classes() != gp.classes() {
        return Err(Error::ShapeMismatch { expected: g.classes(), got: gp.classes() });
    }
    let mean_kl: f64 = g
        .rows()
        .iter()
        .zip(gp.rows())
        .map(|(a, b)| kl_categorical(a, b))
        .sum::<f64>()
        / g.samples() as f64;
    Ok(mean_kl - kl_categorical(&g.mean_row(), &gp.mean_row()))
}

/// Per-instance time series of acquisition scores between acquisitions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreHistory {
    pub id: u64,
    pub dt: u64,
    points: Vec<(u64, f64)>,
}

impl ScoreHistory {
    pub fn new(id: u64, dt: u64) -> Self {
        ScoreHistory { id, dt, points: Vec::new() }
    }

    pub fn push(&mut self, epoch: u64, score: f64) -> Result<()> {
        if let Some(&(last, _)) = self.points.last() {
            if epoch != last + self.dt {
                return Err(Error::InvalidBatch(format!(
                    "history epochs must advance by dt={}, got {last} -> {epoch}",
                    self.dt
                )));
            }
        }
        self.points.push((epoch, score));
        Ok(())
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn clear(&mut self) {
        self.points.clear();
    }

    /// Trapezoidal integral of the recorded scores. A single point spans no
    /// interval and integrates to zero.
    pub fn autaf(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].1 + w[0].1) / 2.0 * self.dt as f64)
            .sum()
    }
}

/// Top-b selection: ceil(b * |pool|) ids with the highest scores, descending;
/// score ties break toward the lower instance id.
pub fn rank_and_select(scores: &BTreeMap<u64, f64>, b: f64) -> Result<Vec<u64>> {
    if !(b > 0.0 && b <= 1.0) {
        return Err(Error::Config(format!("acquisition fraction b={b} outside (0,1]")));
    }
    if scores.is_empty() {
        return Ok(Vec::new());
    }
    let take = ((b * scores.len() as f64).ceil() as usize).min(scores.len());
    let mut ranked: Vec<(u64, f64)> = scores.iter().map(|(&k, &v)| (k, v)).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(take).map(|(id, _)| id).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::McMode;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mat(rows: Vec<Vec<f64>>) -> OutputMatrix {
        OutputMatrix::new(rows, McMode::Mcd).unwrap()
    }

    #[test]
    fn var_ratio_examples() {
        let g = mat(vec![vec![0.1, 0.2, 0.7]; 4]);
        assert_relative_eq!(var_ratio(&g), 0.0);
        let g = mat(vec![
            vec![0.9, 0.1],
            vec![0.8, 0.2],
            vec![0.7, 0.3],
            vec![0.4, 0.6],
        ]);
        assert_relative_eq!(var_ratio(&g), 0.25);
    }

    #[test]
    fn entropy_examples() {
        assert_relative_eq!(
            pred_entropy(&mat(vec![vec![0.5, 0.5]])),
            std::f64::consts::LN_2,
            epsilon = 1e-9
        );
        assert_relative_eq!(pred_entropy(&mat(vec![vec![1.0, 0.0]])), 0.0);
        let g = mat(vec![vec![0.8, 0.2], vec![0.6, 0.4]]);
        assert_relative_eq!(pred_entropy(&g), 0.610864, epsilon = 1e-6);
    }

    #[test]
    fn bald_examples() {
        assert_relative_eq!(bald(&mat(vec![vec![0.3, 0.7]; 5])), 0.0, epsilon = 1e-12);
        let g = mat(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_relative_eq!(bald(&g), std::f64::consts::LN_2, epsilon = 1e-9);
        assert_relative_eq!(bald(&mat(vec![vec![0.5, 0.5]; 3])), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_fit_examples() {
        let lam = 1e-6;
        let g = mat(vec![vec![0.2, 0.8]; 3]);
        let fit = gaussian_fit(&g, lam);
        assert_eq!(fit.mean, vec![0.2, 0.8]);
        assert_relative_eq!(fit.cov[0], lam);
        assert_relative_eq!(fit.cov[1], 0.0);

        let g = mat(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let fit = gaussian_fit(&g, lam);
        assert_eq!(fit.mean, vec![0.5, 0.5]);
        assert_relative_eq!(fit.cov[0], 0.5 + lam);
        assert_relative_eq!(fit.cov[1], -0.5);
        assert_relative_eq!(fit.cov[3], 0.5 + lam);

        // permutation invariance of moments
        let gp = mat(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(gaussian_fit(&gp, lam), fit);
    }

    #[test]
    fn kl_mvn_closed_form_1d() {
        let a = GaussianFit { mean: vec![0.0], cov: vec![1.0], ridge: 0.0 };
        let b = GaussianFit { mean: vec![1.0], cov: vec![1.0], ridge: 0.0 };
        assert_relative_eq!(kl_mvn(&a, &a).unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(kl_mvn(&a, &b).unwrap(), 0.5, epsilon = 1e-12);
        let wide = GaussianFit { mean: vec![0.0], cov: vec![4.0], ridge: 0.0 };
        assert_relative_eq!(
            kl_mvn(&wide, &a).unwrap(),
            0.5 * (4.0 - 1.0 - (4.0f64).ln()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn balc_kld_examples() {
        let g = mat(vec![vec![0.7, 0.3], vec![0.2, 0.8], vec![0.5, 0.5]]);
        assert_relative_eq!(balc_kld(&g, &g, 1e-6).unwrap(), 0.0, epsilon = 1e-9);
        let perm = mat(vec![vec![0.5, 0.5], vec![0.7, 0.3], vec![0.2, 0.8]]);
        assert_relative_eq!(balc_kld(&g, &perm, 1e-6).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn balc_jsd_hand_values() {
        let g = mat(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert_relative_eq!(balc_jsd(&g, &g).unwrap(), 0.0, epsilon = 1e-12);
        let gp = mat(vec![vec![0.6, 0.4], vec![0.4, 0.6]]);
        assert_relative_eq!(
            balc_jsd(&g, &gp).unwrap(),
            0.5 * (25.0f64 / 24.0).ln(),
            epsilon = 1e-12
        );
        let g2 = mat(vec![vec![0.6, 0.4]; 2]);
        let gp2 = mat(vec![vec![0.3, 0.7]; 2]);
        assert_relative_eq!(balc_jsd(&g2, &gp2).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn autaf_examples() {
        let mut h = ScoreHistory::new(0, 1);
        for e in 0..4 {
            h.push(e, 2.0).unwrap();
        }
        assert_relative_eq!(h.autaf(), 6.0);
        let mut h = ScoreHistory::new(0, 1);
        for e in 0..3 {
            h.push(e, e as f64).unwrap();
        }
        assert_relative_eq!(h.autaf(), 2.0);
        let mut h = ScoreHistory::new(0, 1);
        h.push(5, 3.0).unwrap();
        assert_relative_eq!(h.autaf(), 0.0);
    }

    #[test]
    fn history_rejects_bad_spacing() {
        let mut h = ScoreHistory::new(0, 2);
        h.push(0, 1.0).unwrap();
        assert!(h.push(1, 1.0).is_err());
        assert!(h.push(2, 1.0).is_ok());
    }

    #[test]
    fn rank_and_select_examples() {
        let scores: BTreeMap<u64, f64> = (0..100).map(|i| (i, 0.5)).collect();
        let sel = rank_and_select(&scores, 0.02).unwrap();
        assert_eq!(sel, vec![0, 1]); // all tied -> lowest ids
        let mut scores = BTreeMap::new();
        scores.insert(3, 0.1);
        scores.insert(7, 0.9);
        scores.insert(9, 0.5);
        assert_eq!(rank_and_select(&scores, 1.0).unwrap(), vec![7, 9, 3]);
        assert!(rank_and_select(&BTreeMap::new(), 0.5).unwrap().is_empty());
    }

    fn simplex_rows(t: usize, c: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, c), t).prop_map(|rows| {
            rows.into_iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    r.into_iter().map(|v| v / s).collect()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn score_bounds_hold(rows in simplex_rows(6, 3)) {
            let g = mat(rows);
            let t = g.samples() as f64;
            let c = g.classes() as f64;
            prop_assert!((0.0..=1.0 - 1.0 / t + 1e-12).contains(&var_ratio(&g)));
            prop_assert!((-1e-9..=c.ln() + 1e-9).contains(&pred_entropy(&g)));
            prop_assert!((-1e-9..=c.ln() + 1e-9).contains(&bald(&g)));
        }

        #[test]
        fn jsd_nonnegative_and_kld_symmetric_under_joint_permutation(
            rows in simplex_rows(5, 3),
            rows2 in simplex_rows(5, 3),
        ) {
            let g = mat(rows.clone());
            let gp = mat(rows2.clone());
            prop_assert!(balc_jsd(&g, &gp).unwrap() >= -1e-9);
            prop_assert!(balc_kld(&g, &gp, 1e-6).unwrap() >= -1e-9);
            // joint row permutation leaves both scores unchanged
            let perm = [2usize, 0, 4, 1, 3];
            let pg = mat(perm.iter().map(|&i| rows[i].clone()).collect());
            let pgp = mat(perm.iter().map(|&i| rows2[i].clone()).collect());
            let a = balc_jsd(&g, &gp).unwrap();
            let b = balc_jsd(&pg, &pgp).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            let a = balc_kld(&g, &gp, 1e-6).unwrap();
            let b = balc_kld(&pg, &pgp, 1e-6).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
