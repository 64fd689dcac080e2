//! PAC-Bayes risk bound with the negative log likelihood as the loss.
//!
//! With probability at least `1 - delta` over the draw of `N` rows,
//!
//! ```text
//! risk <= 1/M sum_i [ (log q(w_i|phi) - log p(w_i) - log p(D|w_i)) / N ]
//!         + log(1/delta) / N + s^2 / 2
//! ```
//!
//! where `s^2` is the subgaussian variance factor of the loss, set equal to
//! the likelihood variance `beta`. The first term is the training cost
//! `F(D)` divided by `N`, so the bound is an affine function of the cost.
//!
//! Note that `delta = 0.1` gives a 90% statement; reports carry the
//! confidence `1 - delta` explicitly.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::objective::{gaussian_nll, sample_terms, Hyperparams, SampleTerms};
use crate::scalar::Scalar;
use crate::variational_net::{sample_weights, NoiseDraw, VariationalParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport<T> {
    /// `N` or `|D_j|`.
    pub rows: usize,
    /// `1/M sum_i [log q - log p(w) - log p(D|w)] / N`.
    pub mc_term: T,
    /// `log(1/delta) / N`.
    pub confidence_term: T,
    /// `s^2 / 2`.
    pub slack_term: T,
    pub bound_value: T,
    /// Per-row validation nll, when a holdout set was evaluated.
    pub holdout_nll: Option<T>,
    pub holds: Option<bool>,
    pub delta: f64,
    /// `1 - delta`.
    pub confidence: f64,
    pub mc_samples: usize,
    pub seed: Option<u64>,
}

impl<T: Scalar> BoundReport<T> {
    /// Records a holdout risk and whether it lies under the bound.
    pub fn with_holdout(mut self, risk: T) -> Self {
        self.holdout_nll = Some(risk);
        self.holds = Some(risk <= self.bound_value);
        self
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::contract(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// Assembles the bound from already evaluated per-sample terms.
pub fn bound_from_terms<T: Scalar>(
    terms: &[SampleTerms<T>],
    rows: usize,
    delta: f64,
    variance_factor: T,
) -> Result<BoundReport<T>> {
    check_delta(delta)?;
    if rows == 0 {
        return Err(Error::contract("bound over zero rows"));
    }
    if terms.is_empty() {
        return Err(Error::contract("at least one Monte-Carlo sample is required"));
    }
    let n = T::from_usize_lossy(rows);
    let m = T::from_usize_lossy(terms.len());
    let mut acc = T::zero();
    for t in terms {
        acc = acc + (t.log_q - t.log_prior + t.nll) / n;
    }
    let mc_term = acc / m;
    let confidence_term = (T::one() / T::lit(delta)).ln() / n;
    let slack_term = variance_factor / T::lit(2.0);
    Ok(BoundReport {
        rows,
        mc_term,
        confidence_term,
        slack_term,
        bound_value: mc_term + confidence_term + slack_term,
        holdout_nll: None,
        holds: None,
        delta,
        confidence: 1.0 - delta,
        mc_samples: terms.len(),
        seed: None,
    })
}

fn seed_of<T>(noise: &[NoiseDraw<T>]) -> Option<u64> {
    noise.first().and_then(|n| n.source).map(|s| s.seed)
}

/// Bound over the full training set.
pub fn bound_full<T: Scalar>(
    data: &Dataset<T>,
    params: &VariationalParams<T>,
    h: &Hyperparams,
    noise: &[NoiseDraw<T>],
) -> Result<BoundReport<T>> {
    check_delta(h.delta)?;
    params.validate()?;
    let beta = T::lit(h.beta);
    let terms = sample_terms(data, params, beta, noise)?;
    let mut r = bound_from_terms(&terms, data.len(), h.delta, beta)?;
    r.seed = seed_of(noise);
    Ok(r)
}

/// Bound evaluated on one minibatch `D_j`, with `|D_j|` in place of `N`.
pub fn bound_minibatch<T: Scalar>(
    batch: &Dataset<T>,
    params: &VariationalParams<T>,
    h: &Hyperparams,
    noise: &[NoiseDraw<T>],
) -> Result<BoundReport<T>> {
    if batch.is_empty() {
        return Err(Error::contract("bound over an empty minibatch"));
    }
    bound_full(batch, params, h, noise)
}

/// `F / N + log(1/delta) / N + s^2 / 2` with `s^2 = beta`.
pub fn affine_from_cost<T: Scalar>(cost: T, rows: usize, h: &Hyperparams) -> T {
    affine_with_variance(cost, rows, h.delta, T::lit(h.beta))
}

pub fn affine_with_variance<T: Scalar>(cost: T, rows: usize, delta: f64, variance_factor: T) -> T {
    let n = T::from_usize_lossy(rows.max(1));
    cost / n + (T::one() / T::lit(delta)).ln() / n + variance_factor / T::lit(2.0)
}

/// Per-row validation nll averaged over the Monte-Carlo samples.
pub fn holdout_risk<T: Scalar>(
    validation: &Dataset<T>,
    params: &VariationalParams<T>,
    h: &Hyperparams,
    noise: &[NoiseDraw<T>],
) -> Result<T> {
    if validation.is_empty() {
        return Err(Error::contract("holdout risk of an empty dataset"));
    }
    if noise.is_empty() {
        return Err(Error::contract("at least one Monte-Carlo sample is required"));
    }
    let beta = T::lit(h.beta);
    let mut acc = T::zero();
    for n in noise {
        let w = sample_weights(params, n)?;
        acc = acc + gaussian_nll(validation, &w, &params.arch, beta)?;
    }
    Ok(acc / T::from_usize_lossy(noise.len()) / T::from_usize_lossy(validation.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variational_net::{NetworkArch, Weights};

    fn zero_terms() -> Vec<SampleTerms<f64>> {
        vec![SampleTerms {
            log_q: 0.0,
            log_prior: 0.0,
            nll: 0.0,
        }]
    }

    #[test]
    fn synthetic_bound_value() {
        let r = bound_from_terms(&zero_terms(), 100, 0.1, 100.0).unwrap();
        assert!((r.bound_value - 50.023_025_850_929_94).abs() < 1e-12);
        assert_eq!(r.bound_value, r.mc_term + r.confidence_term + r.slack_term);
        assert_eq!(r.slack_term, 50.0);
        assert!((r.confidence - 0.9).abs() < 1e-15);

        let h = Hyperparams::default();
        assert!((affine_from_cost(0.0f64, 100, &h) - 50.023_025_850_929_94).abs() < 1e-12);
        let v = affine_with_variance(0.0f64, 1, 0.5, 0.0);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn delta_limits() {
        assert!(bound_from_terms(&zero_terms(), 10, 1.0, 1.0).is_err());
        assert!(bound_from_terms(&zero_terms(), 10, 0.0, 1.0).is_err());
        let r = bound_from_terms(&zero_terms(), 10, 1.0 - 1e-12, 1.0).unwrap();
        assert!(r.confidence_term < 1e-12);
        let half = bound_from_terms(&zero_terms(), 5, 0.1, 1.0).unwrap();
        let full = bound_from_terms(&zero_terms(), 10, 0.1, 1.0).unwrap();
        assert!((half.confidence_term - 2.0 * full.confidence_term).abs() < 1e-15);
    }

    #[test]
    fn holds_flag_is_comparison() {
        let r = bound_from_terms(&zero_terms(), 100, 0.1, 100.0).unwrap();
        assert_eq!(r.clone().with_holdout(50.0).holds, Some(true));
        assert_eq!(r.with_holdout(60.0).holds, Some(false));
    }

    #[test]
    fn perfect_predictor_holdout() {
        let arch = NetworkArch::new(1, vec![2], 1).unwrap();
        let mut p = VariationalParams::<f64>::init(&arch, 0).unwrap();
        p.mu = Weights::zeros(&arch).tensors;
        let val = Dataset::new(1, 1, vec![0.5, -0.5], vec![0.0, 0.0]).unwrap();
        let h = Hyperparams::default();
        let r = holdout_risk(&val, &p, &h, &[NoiseDraw::zeros(&arch)]).unwrap();
        assert!((r - 3.221_523_626_198_718).abs() < 1e-12);
    }
}
