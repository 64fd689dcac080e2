//! Training cost: Monte-Carlo estimate of the negative ELBO.
//!
//! For `M` reparameterized samples `w_i` the full-data cost is
//!
//! ```text
//! F(D) = 1/M sum_i [ log q(w_i|phi) - log p(w_i) - log p(D|w_i) ]
//! ```
//!
//! and the minibatch cost scales the complexity part by
//! `theta_j = 2^(B-j) / (2^B - 1)`, so that one epoch of minibatch costs adds
//! up to `F(D)` when the samples are shared. The likelihood is an isotropic
//! Gaussian over actions with variance `beta`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::variational_net::{
    bind_params, log_prior, log_q, policy_forward_batch, sample_weights, tape_forward, tape_log_prior, tape_log_q,
    tape_sample_weights, NoiseDraw, VariationalParams, Weights,
};

/// Run-level settings of the variational objective and its optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Likelihood variance, also used as the subgaussian variance factor.
    pub beta: f64,
    /// Bound failure probability.
    pub delta: f64,
    /// Monte-Carlo samples per training step.
    pub mc_samples: usize,
    /// Minibatches per epoch.
    pub batches: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            beta: 100.0,
            delta: 0.1,
            mc_samples: 1,
            batches: 20,
            lr: 0.001,
            epochs: 5000,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::contract(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::contract(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.mc_samples == 0 {
            return Err(Error::contract("mc_samples must be >= 1"));
        }
        if self.batches == 0 {
            return Err(Error::contract("batches must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::contract(format!("lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

fn check_beta<T: Scalar>(beta: T) -> Result<()> {
    if beta > T::zero() && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(format!("beta must be > 0, got {beta}")))
    }
}

/// `sum_i [ d_a/2 log(2 pi beta) + |a_i - f_w(x_i)|^2 / (2 beta) ]`.
pub fn gaussian_nll<T: Scalar>(
    data: &Dataset<T>,
    weights: &Weights<T>,
    arch: &crate::variational_net::NetworkArch,
    beta: T,
) -> Result<T> {
    check_beta(beta)?;
    if data.is_empty() {
        return Err(Error::contract("nll of an empty dataset"));
    }
    if data.input_dim() != arch.input_dim || data.output_dim() != arch.output_dim {
        return Err(Error::Shape {
            op: "gaussian_nll",
            left: vec![data.input_dim(), data.output_dim()],
            right: vec![arch.input_dim, arch.output_dim],
        });
    }
    let pred = policy_forward_batch(data.inputs(), data.len(), weights, arch)?;
    let sq: T = pred.iter().zip(data.targets()).map(|(&p, &a)| (a - p) * (a - p)).sum();
    Ok(nll_constant(data.len(), data.output_dim(), beta) + sq / (T::lit(2.0) * beta))
}

fn nll_constant<T: Scalar>(rows: usize, da: usize, beta: T) -> T {
    T::from_usize_lossy(rows * da) * T::lit(0.5) * (T::lit(2.0) * T::PI() * beta).ln()
}

/// Per-sample pieces of the cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleTerms<T> {
    pub log_q: T,
    pub log_prior: T,
    /// `-log p(D|w)` on the rows the sample was evaluated on.
    pub nll: T,
}

impl<T: Scalar> SampleTerms<T> {
    /// `log q(w|phi) - log p(w)`.
    pub fn complexity(&self) -> T {
        self.log_q - self.log_prior
    }
}

/// Evaluates `(log q, log p, nll)` for each noise draw, in draw order.
pub fn sample_terms<T: Scalar>(
    data: &Dataset<T>,
    params: &VariationalParams<T>,
    beta: T,
    noise: &[NoiseDraw<T>],
) -> Result<Vec<SampleTerms<T>>> {
    if noise.is_empty() {
        return Err(Error::contract("at least one Monte-Carlo sample is required"));
    }
    noise
        .iter()
        .map(|n| {
            let w = sample_weights(params, n)?;
            Ok(SampleTerms {
                log_q: log_q(&w, params)?,
                log_prior: log_prior(&w)?,
                nll: gaussian_nll(data, &w, &params.arch, beta)?,
            })
        })
        .collect()
}

/// A Monte-Carlo cost value with its decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEstimate<T> {
    pub cost: T,
    /// Weight on the complexity term (1 for the full-data cost).
    pub theta: T,
    /// Sample mean of `log q - log p(w)`.
    pub complexity: T,
    /// Sample mean of the nll.
    pub nll: T,
    pub samples: Vec<SampleTerms<T>>,
}

impl<T: Scalar> CostEstimate<T> {
    fn from_terms(samples: Vec<SampleTerms<T>>, theta: T) -> Self {
        let m = T::from_usize_lossy(samples.len());
        let mut cost = T::zero();
        let mut complexity = T::zero();
        let mut nll = T::zero();
        for s in &samples {
            cost = cost + (theta * s.complexity() + s.nll);
            complexity = complexity + s.complexity();
            nll = nll + s.nll;
        }
        CostEstimate {
            cost: cost / m,
            theta,
            complexity: complexity / m,
            nll: nll / m,
            samples,
        }
    }
}

/// `F(D)`, the Monte-Carlo negative ELBO over the whole dataset.
pub fn mc_cost_full<T: Scalar>(
    data: &Dataset<T>,
    params: &VariationalParams<T>,
    h: &Hyperparams,
    noise: &[NoiseDraw<T>],
) -> Result<CostEstimate<T>> {
    let terms = sample_terms(data, params, T::lit(h.beta), noise)?;
    Ok(CostEstimate::from_terms(terms, T::one()))
}

/// `theta_j = 2^(B-j) / (2^B - 1)` for the 1-based minibatch index `j`.
pub fn minibatch_weight<T: Scalar>(j: usize, batches: usize) -> Result<T> {
    if j == 0 || j > batches {
        return Err(Error::contract(format!("minibatch index {j} outside 1..={batches}")));
    }
    // 2^(B-j) / (2^B - 1) == 2^-j / (1 - 2^-B), finite for any B
    let half = T::lit(0.5);
    let num = half.powi(j.min(i32::MAX as usize) as i32);
    let den = T::one() - half.powi(batches.min(i32::MAX as usize) as i32);
    Ok(num / den)
}

/// `F(D_j)`: minibatch cost with the complexity term weighted by `theta_j`.
pub fn mc_cost_minibatch<T: Scalar>(
    batch: &Dataset<T>,
    j: usize,
    batches: usize,
    params: &VariationalParams<T>,
    h: &Hyperparams,
    noise: &[NoiseDraw<T>],
) -> Result<CostEstimate<T>> {
    let theta = minibatch_weight(j, batches)?;
    let terms = sample_terms(batch, params, T::lit(h.beta), noise)?;
    Ok(CostEstimate::from_terms(terms, theta))
}

/// `KL[N(mu, sigma^2) || N(0, I)] = sum_j 1/2 (sigma_j^2 + mu_j^2 - 1 - log sigma_j^2)`.
pub fn closed_form_kl<T: Scalar>(params: &VariationalParams<T>) -> Result<T> {
    let half = T::lit(0.5);
    let mut total = T::zero();
    for (mu, sigma) in params.mu.iter().zip(params.sigma()?) {
        for (&m, &s) in mu.data().iter().zip(sigma.data()) {
            let s2 = s * s;
            total = total + half * (s2 + m * m - T::one() - s2.ln());
        }
    }
    Ok(total)
}

/// Cost value and its gradient w.r.t. `mu` and `rho`.
#[derive(Debug, Clone)]
pub struct CostGradient<T> {
    pub estimate: CostEstimate<T>,
    pub grad_mu: Vec<Tensor<T>>,
    pub grad_rho: Vec<Tensor<T>>,
}

impl<T: Scalar> CostGradient<T> {
    /// Gradient in the layout of [`VariationalParams::flat`].
    pub fn flat(&self) -> Vec<T> {
        self.grad_mu
            .iter()
            .chain(&self.grad_rho)
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }
}

/// Differentiates `1/M sum_i [theta (log q - log p(w_i)) - log p(D|w_i)]`.
pub fn mc_cost_gradient<T: Scalar>(
    data: &Dataset<T>,
    theta: T,
    params: &VariationalParams<T>,
    beta: T,
    noise: &[NoiseDraw<T>],
) -> Result<CostGradient<T>> {
    check_beta(beta)?;
    if noise.is_empty() {
        return Err(Error::contract("at least one Monte-Carlo sample is required"));
    }
    if data.is_empty() {
        return Err(Error::contract("cost of an empty dataset"));
    }
    let arch = &params.arch;
    if data.input_dim() != arch.input_dim || data.output_dim() != arch.output_dim {
        return Err(Error::Shape {
            op: "mc_cost",
            left: vec![data.input_dim(), data.output_dim()],
            right: vec![arch.input_dim, arch.output_dim],
        });
    }
    let mut tape = Tape::new();
    let tp = bind_params(&mut tape, params)?;
    let x = tape.leaf(Tensor::matrix(data.len(), data.input_dim(), data.inputs().to_vec())?)?;
    let a = tape.leaf(Tensor::matrix(data.len(), data.output_dim(), data.targets().to_vec())?)?;
    let nll_c = tape.constant(nll_constant(data.len(), data.output_dim(), beta))?;
    let inv_two_beta = T::one() / (T::lit(2.0) * beta);

    let mut samples = Vec::with_capacity(noise.len());
    let mut total = None;
    for n in noise {
        let s = tape_sample_weights(&mut tape, &tp, n)?;
        let lq = tape_log_q(&mut tape, &s, &tp.mu)?;
        let lp = tape_log_prior(&mut tape, &s.weights)?;
        let pred = tape_forward(&mut tape, x, &s.weights, arch)?;
        let r = tape.sub(pred, a)?;
        let r2 = tape.square(r)?;
        let r2 = tape.sum(r2)?;
        let quad = tape.scale(r2, inv_two_beta)?;
        let nll = tape.add(quad, nll_c)?;
        let kl = tape.sub(lq, lp)?;
        let kl = tape.scale(kl, theta)?;
        let term = tape.add(kl, nll)?;
        samples.push(SampleTerms {
            log_q: tape.value(lq).item()?,
            log_prior: tape.value(lp).item()?,
            nll: tape.value(nll).item()?,
        });
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    let m = T::from_usize_lossy(noise.len());
    let loss = tape.scale(total.expect("non-empty noise"), T::one() / m)?;
    let grads = tape.backward(loss)?;
    let mut estimate = CostEstimate::from_terms(samples, theta);
    estimate.cost = tape.value(loss).item()?;
    Ok(CostGradient {
        estimate,
        grad_mu: tp.mu.iter().map(|&v| grads.wrt(&tape, v)).collect(),
        grad_rho: tp.rho.iter().map(|&v| grads.wrt(&tape, v)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;
    use crate::variational_net::NetworkArch;

    fn line_data() -> Dataset<f64> {
        let xs: Vec<f64> = (0..8).map(|i| i as f64 / 4.0 - 1.0).collect();
        let ys = xs.iter().map(|x| 2.0 * x).collect();
        Dataset::new(1, 1, xs, ys).unwrap()
    }

    fn zero_net() -> (NetworkArch, Weights<f64>) {
        let arch = NetworkArch::new(1, vec![2], 1).unwrap();
        let w = Weights::zeros(&arch);
        (arch, w)
    }

    #[test]
    fn nll_examples() {
        let (arch, w) = zero_net();
        let perfect = Dataset::new(1, 1, vec![0.3], vec![0.0]).unwrap();
        let v = gaussian_nll(&perfect, &w, &arch, 1.0).unwrap();
        assert!((v - 0.918_938_533_204_672_7).abs() < 1e-12);
        let v = gaussian_nll(&perfect, &w, &arch, 100.0).unwrap();
        assert!((v - 3.221_523_626_198_718).abs() < 1e-12);
        let off = Dataset::new(1, 1, vec![0.3], vec![2.0]).unwrap();
        let v = gaussian_nll(&off, &w, &arch, 1.0).unwrap();
        assert!((v - 2.918_938_533_204_672_7).abs() < 1e-12);
        assert!(gaussian_nll(&off, &w, &arch, 0.0).is_err());
    }

    #[test]
    fn theta_examples() {
        assert_eq!(minibatch_weight::<f64>(1, 1).unwrap(), 1.0);
        let t1: f64 = minibatch_weight(1, 2).unwrap();
        let t2: f64 = minibatch_weight(2, 2).unwrap();
        assert!((t1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((t2 - 1.0 / 3.0).abs() < 1e-15);
        assert!(minibatch_weight::<f64>(0, 3).is_err());
        assert!(minibatch_weight::<f64>(4, 3).is_err());
    }

    #[test]
    fn kl_examples() {
        let arch = NetworkArch::new(1, vec![], 1).unwrap();
        let p = VariationalParams::<f64>::standard_normal(&arch);
        assert!(closed_form_kl(&p).unwrap().abs() < 1e-12);

        let mut q = p.clone();
        q.mu[0].data_mut()[0] = 1.0;
        assert!((closed_form_kl(&q).unwrap() - 0.5).abs() < 1e-12);

        let mut q = p.clone();
        // softplus(rho) = 2  =>  rho = ln(e^2 - 1)
        q.rho[0].data_mut()[0] = (2f64.exp() - 1.0).ln();
        assert!((closed_form_kl(&q).unwrap() - 0.806_852_819_440_054_7).abs() < 1e-12);
    }

    #[test]
    fn deterministic_single_sample() {
        let data = line_data();
        let arch = NetworkArch::new(1, vec![4], 1).unwrap();
        let p = VariationalParams::<f64>::init(&arch, 2).unwrap();
        let h = Hyperparams::default();
        let f = mc_cost_full(&data, &p, &h, &[NoiseDraw::zeros(&arch)]).unwrap();
        let mu = p.mean_weights();
        let expected =
            log_q(&mu, &p).unwrap() - log_prior(&mu).unwrap() + gaussian_nll(&data, &mu, &arch, 100.0).unwrap();
        assert_eq!(f.cost, expected);
        assert!(mc_cost_full(&data, &p, &h, &[]).is_err());
    }

    #[test]
    fn gradient_path_matches_value_path() {
        let data = line_data();
        let arch = NetworkArch::new(1, vec![4], 1).unwrap();
        let p = VariationalParams::<f64>::init(&arch, 2).unwrap();
        let noise = NoiseDraw::batch(&arch, 9, Purpose::TRAIN_NOISE, 0, 3);
        let h = Hyperparams::default();
        let v = mc_cost_minibatch(&data, 2, 4, &p, &h, &noise).unwrap();
        let g = mc_cost_gradient(&data, minibatch_weight(2, 4).unwrap(), &p, 100.0, &noise).unwrap();
        assert!((v.cost - g.estimate.cost).abs() < 1e-10 * v.cost.abs());
        assert_eq!(g.flat().len(), 2 * arch.num_params());
    }

    #[test]
    fn hyperparam_defaults_and_validation() {
        let h = Hyperparams::default();
        assert_eq!(
            (h.beta, h.delta, h.batches, h.lr, h.epochs),
            (100.0, 0.1, 20, 0.001, 5000)
        );
        h.validate().unwrap();
        for bad in [
            Hyperparams { beta: 0.0, ..h.clone() },
            Hyperparams {
                delta: 1.0,
                ..h.clone()
            },
            Hyperparams {
                delta: 0.0,
                ..h.clone()
            },
            Hyperparams {
                mc_samples: 0,
                ..h.clone()
            },
            Hyperparams {
                batches: 0,
                ..h.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
