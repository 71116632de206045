//! Selective oracle questioning: per-epoch Gaussian fits of the selector
//! outputs split by zero-one error, the Hellinger separability gate, the
//! ask-vs-pseudo-label decision rule, and the Chernoff-bound diagnostic on
//! the selector's error rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::OutputMatrix;
use crate::nn::argmax_lowest;

/// Variance floor for the per-group fits.
pub const VAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gauss1 {
    pub mean: f64,
    pub var: f64,
}

impl Gauss1 {
    pub fn density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        (-d * d / (2.0 * self.var)).exp() / (2.0 * std::f64::consts::PI * self.var).sqrt()
    }
}

/// Snapshot of the selector's behaviour at the end of an epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectorState {
    pub epoch: u64,
    pub fit0: Option<Gauss1>,
    pub fit1: Option<Gauss1>,
    pub d_h: f64,
    /// Both fits had at least two samples.
    pub usable: bool,
}

impl SelectorState {
    /// A state that always defers to the oracle.
    pub fn unusable(epoch: u64) -> Self {
        SelectorState { epoch, fit0: None, fit1: None, d_h: 0.0, usable: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    AskOracle,
    PseudoLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reason {
    GateClosed,
    DensityE1Dominates,
    DensityE0Dominates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AskDecision {
    pub verdict: Verdict,
    pub reason: Reason,
}

fn moments(vals: &[f64]) -> Gauss1 {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Gauss1 { mean, var: var.max(VAR_FLOOR) }
}

/// Fit the two per-error-group Gaussians (population variance, floored).
/// A group with fewer than two samples makes the state unusable, which
/// forces deferral to the oracle through the gate.
pub fn fit_error_gaussians(tvals: &[(f64, u8)], epoch: u64) -> SelectorState {
    let g0: Vec<f64> = tvals.iter().filter(|&&(_, e)| e == 0).map(|&(t, _)| t).collect();
    let g1: Vec<f64> = tvals.iter().filter(|&&(_, e)| e == 1).map(|&(t, _)| t).collect();
    if g0.len() < 2 || g1.len() < 2 {
        return SelectorState {
            epoch,
            fit0: (g0.len() >= 2).then(|| moments(&g0)),
            fit1: (g1.len() >= 2).then(|| moments(&g1)),
            d_h: 0.0,
            usable: false,
        };
    }
    let fit0 = moments(&g0);
    let fit1 = moments(&g1);
    SelectorState { epoch, d_h: hellinger(&fit0, &fit1), fit0: Some(fit0), fit1: Some(fit1), usable: true }
}

/// Closed-form Hellinger distance between two 1-D Gaussians.
pub fn hellinger(a: &Gauss1, b: &Gauss1) -> f64 {
    let (s0, s1) = (a.var.sqrt(), b.var.sqrt());
    let vsum = a.var + b.var;
    let dm = a.mean - b.mean;
    let h2 = 1.0 - (2.0 * s0 * s1 / vsum).sqrt() * (-dm * dm / (4.0 * vsum)).exp();
    h2.max(0.0).sqrt()
}

/// Ask iff the gate is closed (low separability or unusable fits) or the
/// misclassified-group density dominates at `t`. Density ties resolve to a
/// pseudo-label.
pub fn decide(t: f64, state: &SelectorState, threshold: f64) -> AskDecision {
    if !state.usable || state.d_h < threshold {
        return AskDecision { verdict: Verdict::AskOracle, reason: Reason::GateClosed };
    }
    let n0 = state.fit0.expect("usable state").density(t);
    let n1 = state.fit1.expect("usable state").density(t);
    if n1 > n0 {
        AskDecision { verdict: Verdict::AskOracle, reason: Reason::DensityE1Dominates }
    } else {
        AskDecision { verdict: Verdict::PseudoLabel, reason: Reason::DensityE0Dominates }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChernoffResult {
    pub beta: f64,
    pub bound: f64,
    pub degenerate: bool,
}

/// -ln of the integral of f0^beta f1^(1-beta).
fn chernoff_exponent(beta: f64, f0: &Gauss1, f1: &Gauss1) -> f64 {
    let mixed = beta * f1.var + (1.0 - beta) * f0.var;
    let dm = f0.mean - f1.mean;
    beta * (1.0 - beta) * dm * dm / (2.0 * mixed)
        + 0.5 * (mixed / (f0.var.powf(1.0 - beta) * f1.var.powf(beta))).ln()
}

fn log_bound(beta: f64, f0: &Gauss1, f1: &Gauss1, p0: f64, p1: f64) -> f64 {
    beta * p0.ln() + (1.0 - beta) * p1.ln() - chernoff_exponent(beta, f0, f1)
}

/// Minimize the Chernoff bound P0^b P1^(1-b) e^{-exponent(b)} over b in
/// [0,1]: coarse grid scan, then golden-section refinement to |db| <= 1e-6.
pub fn chernoff_bound(f0: &Gauss1, f1: &Gauss1, priors: (f64, f64)) -> Result<ChernoffResult> {
    let (p0, p1) = priors;
    if !(p0 >= 0.0 && p1 >= 0.0 && (p0 + p1 - 1.0).abs() < 1e-9) {
        return Err(Error::Config(format!("priors ({p0},{p1}) must be nonnegative and sum to 1")));
    }
    if !(f0.var > 0.0 && f1.var > 0.0) {
        return Err(Error::Numeric("chernoff bound needs positive variances".into()));
    }
    if p0 == 0.0 || p1 == 0.0 {
        // one class never occurs; the error (and the infimum of the bound) is 0
        let beta = if p0 == 0.0 { 1.0 } else { 0.0 };
        return Ok(ChernoffResult { beta, bound: 0.0, degenerate: true });
    }

    let obj = |b: f64| log_bound(b, f0, f1, p0, p1);
    let grid = 200;
    let mut best_i = 0usize;
    let mut best = f64::INFINITY;
    for i in 0..=grid {
        let b = i as f64 / grid as f64;
        let v = obj(b);
        if v < best {
            best = v;
            best_i = i;
        }
    }
    let mut lo = (best_i.saturating_sub(1)) as f64 / grid as f64;
    let mut hi = ((best_i + 1).min(grid)) as f64 / grid as f64;
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-6 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if obj(m1) <= obj(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let beta = 0.5 * (lo + hi);
    // the endpoints are valid bounds too; never return anything above them
    let (beta, logv) = [(beta, obj(beta)), (0.0, obj(0.0)), (1.0, obj(1.0))]
        .into_iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"))
        .expect("non-empty");
    Ok(ChernoffResult { beta, bound: logv.exp(), degenerate: false })
}

/// argmax of the mean MC output row; ties break toward the lowest class.
pub fn pseudo_label(g: &OutputMatrix) -> usize {
    argmax_lowest(&g.mean_row())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::McMode;
    use approx::assert_relative_eq;

    #[test]
    fn fit_hand_moments() {
        let tv = [(0.1, 0), (0.3, 0), (0.7, 1), (0.9, 1)];
        let s = fit_error_gaussians(&tv, 3);
        assert!(s.usable);
        let f0 = s.fit0.unwrap();
        let f1 = s.fit1.unwrap();
        assert_relative_eq!(f0.mean, 0.2, epsilon = 1e-12);
        assert_relative_eq!(f0.var, 0.01, epsilon = 1e-12);
        assert_relative_eq!(f1.mean, 0.8, epsilon = 1e-12);
        assert_relative_eq!(f1.var, 0.01, epsilon = 1e-12);
    }

    #[test]
    fn empty_group_forces_unusable() {
        let s = fit_error_gaussians(&[(0.2, 0), (0.4, 0)], 1);
        assert!(!s.usable);
        assert_eq!(s.d_h, 0.0);
        assert_eq!(decide(0.5, &s, 0.15).reason, Reason::GateClosed);
    }

    #[test]
    fn identical_values_hit_variance_floor() {
        let s = fit_error_gaussians(&[(0.3, 0), (0.3, 0), (0.8, 1), (0.9, 1)], 1);
        assert_relative_eq!(s.fit0.unwrap().var, VAR_FLOOR);
    }

    #[test]
    fn hellinger_closed_form_values() {
        let a = Gauss1 { mean: 0.0, var: 1.0 };
        assert_relative_eq!(hellinger(&a, &a), 0.0);
        let b = Gauss1 { mean: 1.0, var: 1.0 };
        assert_relative_eq!(hellinger(&a, &b), 0.342787, epsilon = 1e-6);
        let wide = Gauss1 { mean: 0.0, var: 1e6 };
        assert_relative_eq!(hellinger(&a, &wide), 0.977384, epsilon = 1e-6);
        // symmetry
        assert_relative_eq!(hellinger(&a, &b), hellinger(&b, &a), epsilon = 1e-12);
    }

    #[test]
    fn decide_follows_densities_once_gate_open() {
        let state = SelectorState {
            epoch: 0,
            fit0: Some(Gauss1 { mean: 0.2, var: 0.01 }),
            fit1: Some(Gauss1 { mean: 0.8, var: 0.01 }),
            d_h: 0.9,
            usable: true,
        };
        let d = decide(0.9, &state, 0.15);
        assert_eq!(d.verdict, Verdict::AskOracle);
        assert_eq!(d.reason, Reason::DensityE1Dominates);
        let d = decide(0.1, &state, 0.15);
        assert_eq!(d.verdict, Verdict::PseudoLabel);
        // gate closed
        let mut closed = state.clone();
        closed.d_h = 0.10;
        assert_eq!(decide(0.9, &closed, 0.15).reason, Reason::GateClosed);
    }

    #[test]
    fn chernoff_identical_gaussians_is_half() {
        let g = Gauss1 { mean: 0.3, var: 0.2 };
        let r = chernoff_bound(&g, &g, (0.5, 0.5)).unwrap();
        assert_relative_eq!(r.bound, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn chernoff_symmetric_case() {
        let f0 = Gauss1 { mean: 0.0, var: 1.0 };
        let f1 = Gauss1 { mean: 4.0, var: 1.0 };
        let r = chernoff_bound(&f0, &f1, (0.5, 0.5)).unwrap();
        assert_relative_eq!(r.beta, 0.5, epsilon = 1e-4);
        assert_relative_eq!(r.bound, 0.5 * (-2.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn chernoff_endpoints_and_degeneracy() {
        let f0 = Gauss1 { mean: 0.0, var: 1.0 };
        let f1 = Gauss1 { mean: 1.0, var: 2.0 };
        let (p0, p1) = (0.3, 0.7);
        let r = chernoff_bound(&f0, &f1, (p0, p1)).unwrap();
        assert!(r.bound <= p1 + 1e-9 && r.bound <= p0 + 1e-9);
        let d = chernoff_bound(&f0, &f1, (0.0, 1.0)).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.bound, 0.0);
    }

    #[test]
    fn pseudo_label_examples() {
        let g = OutputMatrix::new(vec![vec![0.1, 0.9]; 3], McMode::Mcd).unwrap();
        assert_eq!(pseudo_label(&g), 1);
        let g = OutputMatrix::new(vec![vec![0.5, 0.5]; 2], McMode::Mcd).unwrap();
        assert_eq!(pseudo_label(&g), 0);
        let g = OutputMatrix::new(vec![vec![0.8, 0.2], vec![0.4, 0.6]], McMode::Mcd).unwrap();
        assert_eq!(pseudo_label(&g), 0);
    }

    #[test]
    fn ask_rate_monotone_in_threshold() {
        let state = SelectorState {
            epoch: 0,
            fit0: Some(Gauss1 { mean: 0.3, var: 0.02 }),
            fit1: Some(Gauss1 { mean: 0.7, var: 0.03 }),
            d_h: 0.25,
            usable: true,
        };
        let tset: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let rate = |s: f64| {
            tset.iter().filter(|&&t| decide(t, &state, s).verdict == Verdict::AskOracle).count()
        };
        let mut prev = 0;
        for s in [0.10, 0.15, 0.20, 0.30, 0.40] {
            let r = rate(s);
            assert!(r >= prev, "ask count dropped at S={s}");
            prev = r;
        }
    }
}
