//! Adam optimization of the minibatch cost, trace recording, and the
//! deterministic mean-squared-error baseline.
//!
//! One optimization step per minibatch. Rows are reshuffled every epoch
//! (stream `SHUFFLE`, epoch) and cut into `B` contiguous chunks; the step
//! with global index `s` draws its `M` noise samples from streams
//! `TRAIN_NOISE, s, 0..M`.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::data::{minibatch_ranges, Dataset};
use crate::error::{Error, Result};
use crate::objective::{mc_cost_gradient, minibatch_weight, Hyperparams};
use crate::pac_bound::affine_from_cost;
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;
use crate::variational_net::{policy_forward_batch, tape_forward, NetworkArch, NoiseDraw, VariationalParams, Weights};

/// Adam moments with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    blocks: Vec<(String, usize)>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            blocks: Vec::new(),
        }
    }

    /// Names contiguous parameter blocks for error messages.
    pub fn with_blocks(mut self, blocks: Vec<(String, usize)>) -> Self {
        self.blocks = blocks;
        self
    }

    fn block_name(&self, index: usize) -> String {
        let mut start = 0;
        for (name, len) in &self.blocks {
            if index < start + len {
                return format!("{name}[{}]", index - start);
            }
            start += len;
        }
        format!("parameter[{index}]")
    }
}

/// `params <- params - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, lr: T) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape {
            op: "adam_step",
            left: vec![params.len(), state.m.len()],
            right: vec![grads.len()],
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::non_finite(format!("gradient of {}", state.block_name(i))));
    }
    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let one = T::one();
    let c1 = one - state.beta1.powi(t);
    let c2 = one - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (one - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (one - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Rescales `g` so its Euclidean norm is at most `max_norm`.
pub fn clip_global_norm<T: Scalar>(g: &mut [T], max_norm: T) -> T {
    let norm = g.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        g.iter_mut().for_each(|x| *x = *x * s);
    }
    norm
}

/// One optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord<T> {
    /// 1-based epoch.
    pub epoch: usize,
    /// 1-based minibatch index `j`.
    pub batch: usize,
    /// `F(D_j)` before the update.
    pub cost: T,
    /// `F(D_j)/|D_j| + log(1/delta)/|D_j| + s^2/2` from the same samples.
    pub bound: T,
    pub wallclock_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace<T> {
    pub records: Vec<TraceRecord<T>>,
}

pub const TRACE_HEADER: &str = "epoch,batch,cost,bound,wallclock_ms";

impl<T: Scalar> TrainTrace<T> {
    pub fn costs(&self) -> Vec<T> {
        self.records.iter().map(|r| r.cost).collect()
    }

    pub fn bounds(&self) -> Vec<T> {
        self.records.iter().map(|r| r.bound).collect()
    }

    pub fn csv_row(r: &TraceRecord<T>) -> String {
        format!(
            "{},{},{:?},{:?},{}",
            r.epoch,
            r.batch,
            r.cost.to_f64_lossy(),
            r.bound.to_f64_lossy(),
            r.wallclock_ms
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&Self::csv_row(r));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == TRACE_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    row: 1,
                    column: 1,
                    message: format!("expected header `{TRACE_HEADER}`"),
                })
            }
        }
        let mut records = Vec::new();
        for (n, line) in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(Error::Parse {
                    row: n + 1,
                    column: f.len().min(5) + 1,
                    message: format!("expected 5 fields, found {}", f.len()),
                });
            }
            let err = |c: usize| Error::Parse {
                row: n + 1,
                column: c + 1,
                message: format!("invalid value `{}`", f[c]),
            };
            let num = |c: usize| -> Result<T> {
                let v: f64 = f[c].parse().map_err(|_| err(c))?;
                if v.is_finite() {
                    Ok(T::lit(v))
                } else {
                    Err(err(c))
                }
            };
            records.push(TraceRecord {
                epoch: f[0].parse().map_err(|_| err(0))?,
                batch: f[1].parse().map_err(|_| err(1))?,
                cost: num(2)?,
                bound: num(3)?,
                wallclock_ms: f[4].parse().map_err(|_| err(4))?,
            });
        }
        Ok(TrainTrace { records })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Fill `wallclock_ms` with elapsed time. Off by default so traces are
    /// reproducible byte for byte.
    pub record_wallclock: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            clip_norm: Some(100.0),
            record_wallclock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// The cost or the parameters stopped being finite; the returned
    /// parameters are the last finite ones.
    Diverged {
        epoch: usize,
        batch: usize,
        reason: String,
    },
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun<T> {
    pub initial: VariationalParams<T>,
    pub params: VariationalParams<T>,
    pub trace: TrainTrace<T>,
    pub status: RunStatus,
}

fn check_training_inputs<T: Scalar>(data: &Dataset<T>, arch: &NetworkArch, batches: usize) -> Result<()> {
    arch.validate()?;
    if data.input_dim() != arch.input_dim || data.output_dim() != arch.output_dim {
        return Err(Error::Shape {
            op: "train",
            left: vec![data.input_dim(), data.output_dim()],
            right: vec![arch.input_dim, arch.output_dim],
        });
    }
    if data.len() < batches {
        return Err(Error::contract(format!(
            "{} rows cannot fill {batches} minibatches",
            data.len()
        )));
    }
    Ok(())
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, Purpose::SHUFFLE, epoch as u64, 0));
    order
}

fn param_blocks(arch: &NetworkArch) -> Vec<(String, usize)> {
    let names: Vec<(String, usize)> = arch
        .layers()
        .iter()
        .enumerate()
        .flat_map(|(l, &(i, o))| [(format!("W{}", l + 1), i * o), (format!("b{}", l + 1), o)])
        .collect();
    names
        .iter()
        .map(|(n, s)| (format!("mu.{n}"), *s))
        .chain(names.iter().map(|(n, s)| (format!("rho.{n}"), *s)))
        .collect()
}

pub fn train<T: Scalar>(
    data: &Dataset<T>,
    arch: &NetworkArch,
    h: &Hyperparams,
    opts: &TrainOptions,
) -> Result<TrainRun<T>> {
    train_observed(data, arch, h, opts, |_| {})
}

/// [`train`], calling `on_step` after every recorded step.
pub fn train_observed<T: Scalar>(
    data: &Dataset<T>,
    arch: &NetworkArch,
    h: &Hyperparams,
    opts: &TrainOptions,
    mut on_step: impl FnMut(&TraceRecord<T>),
) -> Result<TrainRun<T>> {
    h.validate()?;
    check_training_inputs(data, arch, h.batches)?;
    let initial = VariationalParams::<T>::init(arch, h.seed)?;
    let mut params = initial.clone();
    let mut flat = params.flat();
    let mut adam = AdamState::new(flat.len()).with_blocks(param_blocks(arch));
    let lr = T::lit(h.lr);
    let beta = T::lit(h.beta);
    let clip = opts.clip_norm.map(T::lit);
    let started = Instant::now();
    let mut trace = TrainTrace::default();
    let mut step: u64 = 0;

    for epoch in 1..=h.epochs {
        let order = epoch_order(data.len(), h.seed, epoch);
        for (jm1, range) in minibatch_ranges(data.len(), h.batches)?.into_iter().enumerate() {
            let j = jm1 + 1;
            let batch = data.select(&order[range]);
            let noise = NoiseDraw::batch(arch, h.seed, Purpose::TRAIN_NOISE, step, h.mc_samples);
            step += 1;
            let theta = minibatch_weight(j, h.batches)?;
            let diverged = |reason: String| RunStatus::Diverged {
                epoch,
                batch: j,
                reason,
            };
            let cg = match mc_cost_gradient(&batch, theta, &params, beta, &noise) {
                Ok(cg) => cg,
                Err(Error::NonFinite(what)) => {
                    return Ok(TrainRun {
                        initial,
                        params,
                        trace,
                        status: diverged(format!("non-finite {what}")),
                    })
                }
                Err(e) => return Err(e),
            };
            let cost = cg.estimate.cost;
            let record = TraceRecord {
                epoch,
                batch: j,
                cost,
                bound: affine_from_cost(cost, batch.len(), h),
                wallclock_ms: if opts.record_wallclock {
                    started.elapsed().as_millis() as u64
                } else {
                    0
                },
            };
            trace.records.push(record);
            on_step(&record);

            let mut g = cg.flat();
            if let Some(c) = clip {
                clip_global_norm(&mut g, c);
            }
            let saved = flat.clone();
            let update = adam_step(&mut flat, &g, &mut adam, lr);
            let bad = match update {
                Err(Error::NonFinite(what)) => Some(what),
                Err(e) => return Err(e),
                Ok(()) if flat.iter().any(|v| !v.is_finite()) => Some("parameters".to_string()),
                Ok(()) => None,
            };
            if let Some(what) = bad {
                flat = saved;
                params.set_flat(&flat)?;
                return Ok(TrainRun {
                    initial,
                    params,
                    trace,
                    status: diverged(format!("non-finite {what}")),
                });
            }
            params.set_flat(&flat)?;
        }
    }
    Ok(TrainRun {
        initial,
        params,
        trace,
        status: RunStatus::Completed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batches: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
}

impl BaselineConfig {
    /// Optimizer settings shared with a variational run.
    pub fn matching(h: &Hyperparams, opts: &TrainOptions) -> Self {
        BaselineConfig {
            lr: h.lr,
            epochs: h.epochs,
            batches: h.batches,
            seed: h.seed,
            clip_norm: opts.clip_norm,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineRun<T> {
    pub weights: Weights<T>,
    /// Mean squared error of each step, before its update.
    pub losses: Vec<T>,
    pub status: RunStatus,
}

/// Deterministic MLP fitted to mean squared error with Adam; no weight
/// decay and no noise. Initialized exactly like the variational means.
pub fn train_baseline<T: Scalar>(
    data: &Dataset<T>,
    arch: &NetworkArch,
    cfg: &BaselineConfig,
) -> Result<BaselineRun<T>> {
    check_training_inputs(data, arch, cfg.batches)?;
    if cfg.lr.is_nan() || cfg.lr <= 0.0 {
        return Err(Error::contract("lr must be > 0"));
    }
    let mut weights = Weights::<T>::glorot(arch, &mut rng::stream(cfg.seed, Purpose::INIT, 0, 0));
    let mut adam = AdamState::new(weights.num_params());
    let lr = T::lit(cfg.lr);
    let clip = cfg.clip_norm.map(T::lit);
    let mut losses = Vec::new();

    for epoch in 1..=cfg.epochs {
        let order = epoch_order(data.len(), cfg.seed, epoch);
        for (jm1, range) in minibatch_ranges(data.len(), cfg.batches)?.into_iter().enumerate() {
            let batch = data.select(&order[range]);
            let mut tape = Tape::new();
            let wv = weights
                .tensors
                .iter()
                .map(|t| tape.leaf(t.clone()))
                .collect::<Result<Vec<_>>>()?;
            let x = tape.leaf(Tensor::matrix(batch.len(), batch.input_dim(), batch.inputs().to_vec())?)?;
            let a = tape.leaf(Tensor::matrix(
                batch.len(),
                batch.output_dim(),
                batch.targets().to_vec(),
            )?)?;
            let step_result = (|| -> Result<(T, Vec<T>)> {
                let pred = tape_forward(&mut tape, x, &wv, arch)?;
                let r = tape.sub(pred, a)?;
                let r2 = tape.square(r)?;
                let s = tape.sum(r2)?;
                let loss = tape.scale(s, T::one() / T::from_usize_lossy(batch.len()))?;
                let grads = tape.backward(loss)?;
                let g = wv.iter().flat_map(|&v| grads.wrt(&tape, v).into_data()).collect();
                Ok((tape.value(loss).item()?, g))
            })();
            let diverged = |reason: String| RunStatus::Diverged {
                epoch,
                batch: jm1 + 1,
                reason,
            };
            let (loss, mut g) = match step_result {
                Ok(v) => v,
                Err(Error::NonFinite(what)) => {
                    return Ok(BaselineRun {
                        weights,
                        losses,
                        status: diverged(format!("non-finite {what}")),
                    })
                }
                Err(e) => return Err(e),
            };
            losses.push(loss);
            if let Some(c) = clip {
                clip_global_norm(&mut g, c);
            }
            let mut flat = weights.flat();
            adam_step(&mut flat, &g, &mut adam, lr)?;
            if flat.iter().any(|v| !v.is_finite()) {
                return Ok(BaselineRun {
                    weights,
                    losses,
                    status: diverged("non-finite parameters".into()),
                });
            }
            let mut offset = 0;
            for t in weights.tensors.iter_mut() {
                let n = t.len();
                t.data_mut().copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            }
        }
    }
    Ok(BaselineRun {
        weights,
        losses,
        status: RunStatus::Completed,
    })
}

/// Mean over rows of `|a_i - f_w(x_i)|^2`.
pub fn mean_squared_residual<T: Scalar>(data: &Dataset<T>, weights: &Weights<T>, arch: &NetworkArch) -> Result<T> {
    if data.is_empty() {
        return Err(Error::contract("residual of an empty dataset"));
    }
    let pred = policy_forward_batch(data.inputs(), data.len(), weights, arch)?;
    let sq: T = pred.iter().zip(data.targets()).map(|(&p, &a)| (a - p) * (a - p)).sum();
    Ok(sq / T::from_usize_lossy(data.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![1.0f64, -2.0, 3.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 0.001).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_first_step() {
        let mut p = vec![0.0f64];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.001).unwrap();
        // m_hat = 1, v_hat = 1  =>  delta = -0.001 / (1 + 1e-8)
        assert!((p[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn adam_names_bad_block() {
        let mut p = vec![0.0f64; 4];
        let mut s = AdamState::new(4).with_blocks(vec![("mu.W1".into(), 2), ("rho.W1".into(), 2)]);
        let err = adam_step(&mut p, &[0.0, 0.0, 0.0, f64::NAN], &mut s, 0.1).unwrap_err();
        assert!(err.to_string().contains("rho.W1[1]"), "{err}");
        assert!(adam_step(&mut p, &[0.0; 3], &mut s, 0.1).is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0f64, 4.0];
        assert_eq!(clip_global_norm(&mut g, 100.0), 5.0);
        assert_eq!(g, vec![3.0, 4.0]);
        clip_global_norm(&mut g, 1.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn trace_csv_roundtrip() {
        let t = TrainTrace {
            records: vec![TraceRecord {
                epoch: 1,
                batch: 2,
                cost: 0.1f64 + 0.2,
                bound: 50.5,
                wallclock_ms: 0,
            }],
        };
        let text = t.to_csv();
        assert!(text.starts_with("epoch,batch,cost,bound,wallclock_ms\n"));
        assert_eq!(TrainTrace::<f64>::from_csv(&text).unwrap(), t);
        assert!(TrainTrace::<f64>::from_csv("epoch,batch\n").is_err());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let arch = NetworkArch::new(1, vec![3], 1).unwrap();
        let data = Dataset::new(1, 1, vec![0.0, 0.5, 1.0, 1.5], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let h = Hyperparams {
            epochs: 0,
            batches: 2,
            ..Hyperparams::default()
        };
        let run = train(&data, &arch, &h, &TrainOptions::default()).unwrap();
        assert_eq!(run.params, run.initial);
        assert!(run.trace.records.is_empty());
        assert!(run.status.is_completed());

        let b = train_baseline(&data, &arch, &BaselineConfig::matching(&h, &TrainOptions::default())).unwrap();
        assert_eq!(b.weights.tensors, run.initial.mu);
    }

    #[test]
    fn too_few_rows() {
        let arch = NetworkArch::new(1, vec![3], 1).unwrap();
        let data = Dataset::new(1, 1, vec![0.0], vec![0.0]).unwrap();
        let h = Hyperparams {
            batches: 2,
            ..Hyperparams::default()
        };
        assert!(train(&data, &arch, &h, &TrainOptions::default()).is_err());
    }
}
