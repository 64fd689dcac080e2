//! Mean-field Gaussian MLP.
//!
//! Every weight and bias `w_j` has its own Gaussian `N(mu_j, sigma_j^2)` with
//! `sigma_j = softplus(rho_j)`. Samples are drawn by reparameterization,
//! `w = mu + softplus(rho) * tau` with `tau ~ N(0, I)` supplied from outside,
//! so the sampled network is a differentiable function of `(mu, rho)`.
//!
//! Learnable tensors are ordered `[W_1, b_1, W_2, b_2, ..., W_L, b_L]` with
//! `W_l` of shape `[fan_in, fan_out]` and `b_l` of shape `[fan_out]`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{matmul_into, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

pub const DEFAULT_HIDDEN: [usize; 3] = [90, 30, 10];

/// Initial pre-variance; softplus(-3) ~= 0.0486.
pub const INIT_RHO: f64 = -3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
        }
    }

    fn on_tape<T: Scalar>(self, tape: &mut Tape<T>, v: Var) -> Result<Var> {
        match self {
            Activation::Tanh => tape.tanh(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl NetworkArch {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        let arch = NetworkArch {
            input_dim,
            hidden,
            output_dim,
            activation: Activation::Tanh,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Three hidden layers of 90, 30 and 10 units.
    pub fn with_default_hidden(input_dim: usize, output_dim: usize) -> Result<Self> {
        Self::new(input_dim, DEFAULT_HIDDEN.to_vec(), output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::contract(format!(
                "all layer sizes must be >= 1, got {}-{:?}-{}",
                self.input_dim, self.hidden, self.output_dim
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(self.input_dim);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(self.output_dim);
        sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers()
            .into_iter()
            .flat_map(|(i, o)| [vec![i, o], vec![o]])
            .collect()
    }

    /// Total number of scalar parameters `d`.
    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Concrete network parameters, in the learnable-tensor order.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Weights<T> {
    pub fn zeros(arch: &NetworkArch) -> Self {
        Weights {
            tensors: arch.param_shapes().iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Glorot-uniform weights and zero biases.
    pub fn glorot(arch: &NetworkArch, rng: &mut impl Rng) -> Self {
        let mut tensors = Vec::new();
        for (fan_in, fan_out) in arch.layers() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite range");
            let w: Vec<T> = (0..fan_in * fan_out).map(|_| T::lit(dist.sample(rng))).collect();
            tensors.push(Tensor::matrix(fan_in, fan_out, w).expect("shape"));
            tensors.push(Tensor::zeros(&[fan_out]));
        }
        Weights { tensors }
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn flat(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    fn check_arch(&self, arch: &NetworkArch) -> Result<()> {
        let shapes = arch.param_shapes();
        if shapes.len() != self.tensors.len() {
            return Err(Error::Shape {
                op: "weights",
                left: vec![shapes.len()],
                right: vec![self.tensors.len()],
            });
        }
        for (s, t) in shapes.iter().zip(&self.tensors) {
            if s.as_slice() != t.shape() {
                return Err(Error::Shape {
                    op: "weights",
                    left: s.clone(),
                    right: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// Variational parameters `phi = (mu, rho)`, one pair per learnable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams<T> {
    pub arch: NetworkArch,
    pub mu: Vec<Tensor<T>>,
    pub rho: Vec<Tensor<T>>,
}

impl<T: Scalar> VariationalParams<T> {
    /// Glorot-uniform means, zero bias means, `rho = -3` everywhere.
    pub fn init(arch: &NetworkArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut r = rng::stream(seed, Purpose::INIT, 0, 0);
        let mu = Weights::glorot(arch, &mut r).tensors;
        let rho = arch
            .param_shapes()
            .iter()
            .map(|s| Tensor::filled(s, T::lit(INIT_RHO)))
            .collect();
        Ok(VariationalParams {
            arch: arch.clone(),
            mu,
            rho,
        })
    }

    /// The prior `N(0, I)` expressed as a member of the variational family.
    pub fn standard_normal(arch: &NetworkArch) -> Self {
        let rho_unit = T::lit(std::f64::consts::E - 1.0).ln();
        let shapes = arch.param_shapes();
        VariationalParams {
            arch: arch.clone(),
            mu: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            rho: shapes.iter().map(|s| Tensor::filled(s, rho_unit)).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.mu.iter().map(Tensor::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        Weights {
            tensors: self.mu.clone(),
        }
        .check_arch(&self.arch)?;
        Weights {
            tensors: self.rho.clone(),
        }
        .check_arch(&self.arch)?;
        let finite = self.mu.iter().chain(&self.rho).all(Tensor::all_finite);
        if !finite {
            return Err(Error::non_finite("variational parameters"));
        }
        Ok(())
    }

    pub fn sigma(&self) -> Result<Vec<Tensor<T>>> {
        self.rho
            .iter()
            .map(|r| {
                let s = sigma_from_rho(r.data())?;
                Tensor::new(r.shape().to_vec(), s)
            })
            .collect()
    }

    /// The mean network, `w = mu`.
    pub fn mean_weights(&self) -> Weights<T> {
        Weights {
            tensors: self.mu.clone(),
        }
    }

    /// `[mu..., rho...]` as one flat vector.
    pub fn flat(&self) -> Vec<T> {
        self.mu
            .iter()
            .chain(&self.rho)
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Inverse of [`VariationalParams::flat`].
    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != 2 * self.num_params() {
            return Err(Error::Shape {
                op: "set_flat",
                left: vec![2 * self.num_params()],
                right: vec![flat.len()],
            });
        }
        let mut offset = 0;
        for t in self.mu.iter_mut().chain(self.rho.iter_mut()) {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Provenance of a noise draw: the stream it was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSource {
    pub seed: u64,
    pub purpose: u64,
    pub a: u64,
    pub b: u64,
}

/// Standard-normal `tau`, one tensor per learnable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw<T> {
    pub tau: Vec<Tensor<T>>,
    pub source: Option<NoiseSource>,
}

impl<T: Scalar> NoiseDraw<T> {
    pub fn zeros(arch: &NetworkArch) -> Self {
        NoiseDraw {
            tau: arch.param_shapes().iter().map(|s| Tensor::zeros(s)).collect(),
            source: None,
        }
    }

    pub fn filled(arch: &NetworkArch, v: T) -> Self {
        NoiseDraw {
            tau: arch.param_shapes().iter().map(|s| Tensor::filled(s, v)).collect(),
            source: None,
        }
    }

    /// Draws `tau` from the stream `(seed, purpose, a, b)`.
    pub fn sample(arch: &NetworkArch, seed: u64, purpose: Purpose, a: u64, b: u64) -> Self {
        let mut r = rng::stream(seed, purpose, a, b);
        let tau = arch
            .param_shapes()
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                let data = (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        T::lit(z)
                    })
                    .collect();
                Tensor::new(s.clone(), data).expect("shape")
            })
            .collect();
        NoiseDraw {
            tau,
            source: Some(NoiseSource {
                seed,
                purpose: purpose.0,
                a,
                b,
            }),
        }
    }

    /// `m` draws, sample index `i` taken from stream `(seed, purpose, a, i)`.
    pub fn batch(arch: &NetworkArch, seed: u64, purpose: Purpose, a: u64, m: usize) -> Vec<Self> {
        (0..m as u64).map(|i| Self::sample(arch, seed, purpose, a, i)).collect()
    }
}

/// Elementwise softplus; strictly positive for finite input.
pub fn sigma_from_rho<T: Scalar>(rho: &[T]) -> Result<Vec<T>> {
    rho.iter()
        .map(|&r| {
            if r.is_finite() {
                Ok(r.softplus())
            } else {
                Err(Error::non_finite("rho"))
            }
        })
        .collect()
}

/// `w = mu + softplus(rho) * tau`.
pub fn sample_weights<T: Scalar>(params: &VariationalParams<T>, noise: &NoiseDraw<T>) -> Result<Weights<T>> {
    if noise.tau.len() != params.mu.len() {
        return Err(Error::Shape {
            op: "sample_weights",
            left: vec![params.mu.len()],
            right: vec![noise.tau.len()],
        });
    }
    let mut tensors = Vec::with_capacity(params.mu.len());
    for ((mu, rho), tau) in params.mu.iter().zip(&params.rho).zip(&noise.tau) {
        if mu.shape() != tau.shape() || mu.shape() != rho.shape() {
            return Err(Error::Shape {
                op: "sample_weights",
                left: mu.shape().to_vec(),
                right: tau.shape().to_vec(),
            });
        }
        let sigma = sigma_from_rho(rho.data())?;
        let data = mu
            .data()
            .iter()
            .zip(&sigma)
            .zip(tau.data())
            .map(|((&m, &s), &t)| m + s * t)
            .collect();
        tensors.push(Tensor::new(mu.shape().to_vec(), data)?);
    }
    Ok(Weights { tensors })
}

/// Network output for a batch of `rows` inputs stored row-major.
pub fn policy_forward_batch<T: Scalar>(
    x: &[T],
    rows: usize,
    weights: &Weights<T>,
    arch: &NetworkArch,
) -> Result<Vec<T>> {
    weights.check_arch(arch)?;
    if x.len() != rows * arch.input_dim {
        return Err(Error::Shape {
            op: "policy_forward",
            left: vec![rows, arch.input_dim],
            right: vec![x.len()],
        });
    }
    let layers = arch.layers();
    let last = layers.len() - 1;
    let mut h = x.to_vec();
    for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
        let w = weights.tensors[2 * l].data();
        let b = weights.tensors[2 * l + 1].data();
        let mut z = matmul_into(&h, w, rows, fan_in, fan_out);
        for row in z.chunks_mut(fan_out) {
            for (v, &bias) in row.iter_mut().zip(b) {
                *v = *v + bias;
                if l != last {
                    *v = arch.activation.apply(*v);
                }
            }
        }
        h = z;
    }
    Ok(h)
}

/// Action mean for a single input.
pub fn policy_forward<T: Scalar>(x: &[T], weights: &Weights<T>, arch: &NetworkArch) -> Result<Vec<T>> {
    policy_forward_batch(x, 1, weights, arch)
}

/// Average of the outputs of several sampled networks.
pub fn predictive_mean<T: Scalar>(x: &[T], samples: &[Weights<T>], arch: &NetworkArch) -> Result<Vec<T>> {
    if samples.is_empty() {
        return Err(Error::contract("predictive mean needs at least one sample"));
    }
    let mut acc = vec![T::zero(); arch.output_dim];
    for w in samples {
        for (a, v) in acc.iter_mut().zip(policy_forward(x, w, arch)?) {
            *a = *a + v;
        }
    }
    let m = T::from_usize_lossy(samples.len());
    Ok(acc.into_iter().map(|a| a / m).collect())
}

fn half_log_two_pi<T: Scalar>() -> T {
    T::lit(0.5) * (T::lit(2.0) * T::PI()).ln()
}

/// `log q(w | phi) = sum_j -1/2 log(2 pi sigma_j^2) - (w_j - mu_j)^2 / (2 sigma_j^2)`.
pub fn log_q<T: Scalar>(weights: &Weights<T>, params: &VariationalParams<T>) -> Result<T> {
    weights.check_arch(&params.arch)?;
    let c = half_log_two_pi::<T>();
    let half = T::lit(0.5);
    let mut total = T::zero();
    for ((w, mu), rho) in weights.tensors.iter().zip(&params.mu).zip(&params.rho) {
        let sigma = sigma_from_rho(rho.data())?;
        for ((&wj, &mj), &sj) in w.data().iter().zip(mu.data()).zip(&sigma) {
            if sj <= T::zero() {
                return Err(Error::contract("sigma must be positive"));
            }
            let z = (wj - mj) / sj;
            total = total - c - sj.ln() - half * z * z;
        }
    }
    Ok(total)
}

/// Standard-normal prior density, `sum_j -1/2 log 2 pi - w_j^2 / 2`.
pub fn log_prior<T: Scalar>(weights: &Weights<T>) -> Result<T> {
    let c = half_log_two_pi::<T>();
    let half = T::lit(0.5);
    let mut total = T::zero();
    for t in &weights.tensors {
        for &w in t.data() {
            if !w.is_finite() {
                return Err(Error::non_finite("weights"));
            }
            total = total - c - half * w * w;
        }
    }
    Ok(total)
}

/// Variational parameters recorded as tape leaves.
#[derive(Debug, Clone)]
pub struct TapeParams {
    pub mu: Vec<Var>,
    pub rho: Vec<Var>,
}

/// A reparameterized sample on the tape.
#[derive(Debug, Clone)]
pub struct TapeSample {
    pub weights: Vec<Var>,
    pub sigma: Vec<Var>,
}

pub fn bind_params<T: Scalar>(tape: &mut Tape<T>, params: &VariationalParams<T>) -> Result<TapeParams> {
    let mu = params.mu.iter().map(|t| tape.leaf(t.clone())).collect::<Result<_>>()?;
    let rho = params.rho.iter().map(|t| tape.leaf(t.clone())).collect::<Result<_>>()?;
    Ok(TapeParams { mu, rho })
}

pub fn tape_sample_weights<T: Scalar>(
    tape: &mut Tape<T>,
    params: &TapeParams,
    noise: &NoiseDraw<T>,
) -> Result<TapeSample> {
    if noise.tau.len() != params.mu.len() {
        return Err(Error::Shape {
            op: "sample_weights",
            left: vec![params.mu.len()],
            right: vec![noise.tau.len()],
        });
    }
    let mut weights = Vec::with_capacity(params.mu.len());
    let mut sigma = Vec::with_capacity(params.mu.len());
    for ((&mu, &rho), tau) in params.mu.iter().zip(&params.rho).zip(&noise.tau) {
        let s = tape.softplus(rho)?;
        let t = tape.leaf(tau.clone())?;
        let st = tape.mul(s, t)?;
        weights.push(tape.add(mu, st)?);
        sigma.push(s);
    }
    Ok(TapeSample { weights, sigma })
}

/// Forward pass on the tape for an `[n, input_dim]` input node.
pub fn tape_forward<T: Scalar>(tape: &mut Tape<T>, x: Var, weights: &[Var], arch: &NetworkArch) -> Result<Var> {
    let layers = arch.layers();
    if weights.len() != 2 * layers.len() {
        return Err(Error::Shape {
            op: "policy_forward",
            left: vec![2 * layers.len()],
            right: vec![weights.len()],
        });
    }
    let mut h = x;
    for l in 0..layers.len() {
        let z = tape.matmul(h, weights[2 * l])?;
        let z = tape.add(z, weights[2 * l + 1])?;
        h = if l + 1 == layers.len() {
            z
        } else {
            arch.activation.on_tape(tape, z)?
        };
    }
    Ok(h)
}

pub fn tape_log_q<T: Scalar>(tape: &mut Tape<T>, sample: &TapeSample, mu: &[Var]) -> Result<Var> {
    let mut count = 0usize;
    let mut acc: Option<Var> = None;
    for ((&w, &s), &m) in sample.weights.iter().zip(&sample.sigma).zip(mu) {
        count += tape.value(w).len();
        let diff = tape.sub(w, m)?;
        let sq = tape.square(diff)?;
        let log_s = tape.log(s)?;
        let neg2 = tape.scale(log_s, T::lit(-2.0))?;
        let inv_var = tape.exp(neg2)?;
        let quad = tape.mul(sq, inv_var)?;
        let quad = tape.sum(quad)?;
        let quad = tape.scale(quad, T::lit(-0.5))?;
        let logs = tape.sum(log_s)?;
        let term = tape.sub(quad, logs)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    let c = tape.constant(-half_log_two_pi::<T>() * T::from_usize_lossy(count))?;
    match acc {
        Some(a) => tape.add(a, c),
        None => Ok(c),
    }
}

pub fn tape_log_prior<T: Scalar>(tape: &mut Tape<T>, weights: &[Var]) -> Result<Var> {
    let mut count = 0usize;
    let mut acc: Option<Var> = None;
    for &w in weights {
        count += tape.value(w).len();
        let sq = tape.square(w)?;
        let s = tape.sum(sq)?;
        let term = tape.scale(s, T::lit(-0.5))?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    let c = tape.constant(-half_log_two_pi::<T>() * T::from_usize_lossy(count))?;
    match acc {
        Some(a) => tape.add(a, c),
        None => Ok(c),
    }
}
