//! Experiment harnesses: cost/bound correlation, bound validity on held-out
//! episodes, generalization to perturbed tasks, and the likelihood-dominance
//! sweep.
//!
//! Every harness is a pure function of its configuration and seeds. Jobs may
//! run on several threads; results are sorted by (task, cell, seed) before
//! they are returned, so reports do not depend on scheduling.

use std::fmt::Write as _;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::envs::{expert_action, generate_demos, rollout_policy, EnvKind, EnvSpec, State};
use crate::error::{Error, Result};
use crate::objective::Hyperparams;
use crate::pac_bound::{bound_full, holdout_risk};
use crate::rng::{self, Purpose};
use crate::trainer::{
    mean_squared_residual, train, train_baseline, BaselineConfig, RunStatus, TrainOptions, TrainTrace,
};
use crate::variational_net::{
    policy_forward, predictive_mean, sample_weights, NetworkArch, NoiseDraw, VariationalParams, Weights,
};

fn check_series(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::contract(format!(
            "correlation needs two series of equal length >= 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::non_finite("correlation input"));
    }
    Ok(())
}

fn centered(v: &[f64]) -> Result<Vec<f64>> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|x| x - mean).collect();
    if c.iter().all(|&x| x == 0.0) {
        return Err(Error::contract("series has zero variance"));
    }
    Ok(c)
}

fn r_centered(cx: &[f64], cy: &[f64]) -> f64 {
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in cx.iter().zip(cy) {
        sxy += x * y;
        sxx += x * x;
        syy += y * y;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Sample Pearson correlation coefficient.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_series(xs, ys)?;
    Ok(r_centered(&centered(xs)?, &centered(ys)?))
}

/// Two-sided permutation p-value of [`pearson_r`]: `(1 + #{|r_perm| >=
/// |r_obs|}) / (1 + permutations)`, shuffling `ys` with stream
/// `PERMUTATION` of `seed`.
pub fn perm_pvalue(xs: &[f64], ys: &[f64], permutations: usize, seed: u64) -> Result<f64> {
    check_series(xs, ys)?;
    if permutations < 100 {
        return Err(Error::contract(format!(
            "at least 100 permutations are required, got {permutations}"
        )));
    }
    let cx = centered(xs)?;
    let mut cy = centered(ys)?;
    let observed = r_centered(&cx, &cy).abs();
    let mut r = rng::stream(seed, Purpose::PERMUTATION, 0, 0);
    let mut extreme = 0usize;
    for _ in 0..permutations {
        cy.shuffle(&mut r);
        if r_centered(&cx, &cy).abs() >= observed {
            extreme += 1;
        }
    }
    Ok((extreme + 1) as f64 / (permutations + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub records: usize,
    pub r: f64,
    pub p_value: f64,
    pub permutations: usize,
    pub seed: u64,
}

/// Correlation between the cost and bound columns of a training trace.
pub fn correlate(trace: &TrainTrace<f64>, permutations: usize, seed: u64) -> Result<CorrelationReport> {
    let (c, b) = (trace.costs(), trace.bounds());
    Ok(CorrelationReport {
        records: c.len(),
        r: pearson_r(&c, &b)?,
        p_value: perm_pvalue(&c, &b, permutations, seed)?,
        permutations,
        seed,
    })
}

/// Settings shared by all harnesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub hidden: Vec<usize>,
    /// Training settings; `seed` is replaced by each job's seed.
    pub hyperparams: Hyperparams,
    pub train_options: TrainOptions,
    /// Demonstration episodes generated per seed.
    pub episodes: usize,
    /// Fraction of episodes used for training; the rest is the holdout.
    pub train_fraction: f64,
    /// Monte-Carlo samples for bound and holdout evaluation.
    pub eval_samples: usize,
    /// Sampled networks averaged by the variational policy.
    pub policy_samples: usize,
    /// Rollouts averaged per return.
    pub rollouts: usize,
    /// Worker threads; results do not depend on it.
    pub parallel: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            hidden: crate::variational_net::DEFAULT_HIDDEN.to_vec(),
            hyperparams: Hyperparams::default(),
            train_options: TrainOptions::default(),
            episodes: 10,
            train_fraction: 0.8,
            eval_samples: 30,
            policy_samples: 10,
            rollouts: 10,
            parallel: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyperparams.validate()?;
        if self.episodes < 2 {
            return Err(Error::contract("experiments need at least two demonstration episodes"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::contract("train_fraction must lie in (0, 1)"));
        }
        if self.eval_samples == 0 || self.policy_samples == 0 || self.rollouts == 0 || self.parallel == 0 {
            return Err(Error::contract(
                "eval_samples, policy_samples, rollouts and parallel must be >= 1",
            ));
        }
        Ok(())
    }

    fn arch(&self, spec: &EnvSpec) -> Result<NetworkArch> {
        NetworkArch::new(spec.state_dim(), self.hidden.clone(), spec.action_dim())
    }

    fn hyperparams_for(&self, seed: u64) -> Hyperparams {
        Hyperparams {
            seed,
            ..self.hyperparams.clone()
        }
    }
}

/// Runs `f` over `jobs` on up to `parallel` threads, keeping job order.
fn run_jobs<J: Sync, R: Send>(jobs: &[J], parallel: usize, f: impl Fn(&J) -> R + Sync) -> Vec<R> {
    if parallel <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(f).collect();
    }
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..parallel.min(jobs.len()) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job produces a result"))
        .collect()
}

fn status_label(status: &RunStatus) -> String {
    match status {
        RunStatus::Completed => "completed".into(),
        RunStatus::Diverged { epoch, batch, reason } => {
            format!("diverged at epoch {epoch} batch {batch}: {reason}")
        }
    }
}

/// Mean episodic return of the variational policy, acting on the average
/// output of `samples` networks drawn from stream `POLICY_NOISE`.
pub fn variational_return(
    spec: &EnvSpec,
    params: &VariationalParams<f64>,
    samples: usize,
    seed: u64,
    rollouts: usize,
) -> Result<f64> {
    let nets: Vec<Weights<f64>> = NoiseDraw::batch(&params.arch, seed, Purpose::POLICY_NOISE, 0, samples)
        .iter()
        .map(|n| sample_weights(params, n))
        .collect::<Result<_>>()?;
    let arch = &params.arch;
    let mut policy = |s: &State| Ok(predictive_mean(&s[..], &nets, arch)?[0]);
    rollout_policy(spec, &mut policy, rollouts, rollout_seed(seed))
}

pub fn deterministic_return(
    spec: &EnvSpec,
    weights: &Weights<f64>,
    arch: &NetworkArch,
    seed: u64,
    rollouts: usize,
) -> Result<f64> {
    let mut policy = |s: &State| Ok(policy_forward(&s[..], weights, arch)?[0]);
    rollout_policy(spec, &mut policy, rollouts, rollout_seed(seed))
}

pub fn expert_return(spec: &EnvSpec, seed: u64, rollouts: usize) -> Result<f64> {
    let mut policy = |s: &State| Ok(expert_action(spec, *s));
    rollout_policy(spec, &mut policy, rollouts, rollout_seed(seed))
}

fn rollout_seed(seed: u64) -> u64 {
    rng::derive_seed(seed, Purpose::ROLLOUT, 0, 0)
}

fn demos(spec: &EnvSpec, cfg: &ExperimentConfig, seed: u64) -> Result<Dataset<f64>> {
    Ok(generate_demos(spec, cfg.episodes, seed)?.0)
}

/// One trained model evaluated against its holdout episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub task: EnvKind,
    pub seed: u64,
    pub beta: f64,
    pub status: String,
    pub train_rows: usize,
    pub holdout_rows: usize,
    pub mc_term: Option<f64>,
    pub bound: Option<f64>,
    /// Per-row nll on the holdout episodes.
    pub holdout_risk: Option<f64>,
    /// Per-row nll on the training rows.
    pub train_nll: Option<f64>,
    /// Mean of `|a - mu(x)|^2` over training rows, using the mean network.
    pub train_residual: Option<f64>,
    pub holds: Option<bool>,
}

struct BoundCell {
    row: BoundRow,
    params: Option<VariationalParams<f64>>,
}

fn bound_cell(spec: &EnvSpec, cfg: &ExperimentConfig, h: &Hyperparams) -> Result<BoundCell> {
    let data = demos(spec, cfg, h.seed)?;
    let (train_set, holdout) = data.split_by_episode(cfg.train_fraction)?;
    let arch = cfg.arch(spec)?;
    let mut row = BoundRow {
        task: spec.kind,
        seed: h.seed,
        beta: h.beta,
        status: String::new(),
        train_rows: train_set.len(),
        holdout_rows: holdout.len(),
        mc_term: None,
        bound: None,
        holdout_risk: None,
        train_nll: None,
        train_residual: None,
        holds: None,
    };
    let run = train(&train_set, &arch, h, &cfg.train_options)?;
    row.status = status_label(&run.status);
    if !run.status.is_completed() {
        return Ok(BoundCell { row, params: None });
    }
    let noise = NoiseDraw::batch(&arch, h.seed, Purpose::EVAL_NOISE, 0, cfg.eval_samples);
    let report = bound_full(&train_set, &run.params, h, &noise)?;
    let risk = holdout_risk(&holdout, &run.params, h, &noise)?;
    let report = report.with_holdout(risk);
    row.mc_term = Some(report.mc_term);
    row.bound = Some(report.bound_value);
    row.holdout_risk = Some(risk);
    row.holds = report.holds;
    row.train_nll = Some(holdout_risk(&train_set, &run.params, h, &noise)?);
    row.train_residual = Some(mean_squared_residual(&train_set, &run.params.mean_weights(), &arch)?);
    Ok(BoundCell {
        row,
        params: Some(run.params),
    })
}

fn failed_bound_row(spec: &EnvSpec, h: &Hyperparams, e: &Error) -> BoundRow {
    BoundRow {
        task: spec.kind,
        seed: h.seed,
        beta: h.beta,
        status: format!("error: {e}"),
        train_rows: 0,
        holdout_rows: 0,
        mc_term: None,
        bound: None,
        holdout_risk: None,
        train_nll: None,
        train_residual: None,
        holds: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTable {
    pub config: ExperimentConfig,
    pub tasks: Vec<EnvSpec>,
    pub seeds: Vec<u64>,
    pub rows: Vec<BoundRow>,
    /// Runs whose holdout risk lies under the bound.
    pub holds: usize,
    /// Runs that produced a verdict.
    pub evaluated: usize,
}

impl BoundTable {
    pub fn holds_fraction(&self) -> f64 {
        self.holds as f64 / self.rows.len().max(1) as f64
    }
}

/// Trains on the first `train_fraction` of each seed's demonstration
/// episodes and checks the holdout per-row nll against the bound.
pub fn verify_bound_experiment(tasks: &[EnvSpec], seeds: &[u64], cfg: &ExperimentConfig) -> Result<BoundTable> {
    cfg.validate()?;
    let jobs: Vec<(EnvSpec, u64)> = tasks
        .iter()
        .flat_map(|t| seeds.iter().map(move |&s| (t.clone(), s)))
        .collect();
    let mut rows = run_jobs(&jobs, cfg.parallel, |(spec, seed)| {
        let h = cfg.hyperparams_for(*seed);
        match bound_cell(spec, cfg, &h) {
            Ok(c) => c.row,
            Err(e) => failed_bound_row(spec, &h, &e),
        }
    });
    rows.sort_by_key(|r| (r.task, r.seed));
    let holds = rows.iter().filter(|r| r.holds == Some(true)).count();
    let evaluated = rows.iter().filter(|r| r.holds.is_some()).count();
    Ok(BoundTable {
        config: cfg.clone(),
        tasks: tasks.to_vec(),
        seeds: seeds.to_vec(),
        rows,
        holds,
        evaluated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationRow {
    pub seed: u64,
    pub status: String,
    pub expert_original: Option<f64>,
    pub expert_variant: Option<f64>,
    pub variational_original: Option<f64>,
    pub variational_variant: Option<f64>,
    pub baseline_original: Option<f64>,
    pub baseline_variant: Option<f64>,
    /// Variational variant return >= baseline variant return.
    pub variational_wins: Option<bool>,
    /// Both learned policies within `NEAR_EXPERT` of the expert on the
    /// original task.
    pub near_expert: Option<bool>,
}

/// Relative distance to the expert's original-task return that still
/// counts as imitating it.
pub const NEAR_EXPERT: f64 = 0.2;

pub fn within_relative(value: f64, reference: f64, tolerance: f64) -> bool {
    (value - reference).abs() <= tolerance * reference.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationTable {
    pub config: ExperimentConfig,
    pub task: EnvSpec,
    pub variant: EnvSpec,
    pub seeds: Vec<u64>,
    pub rows: Vec<GeneralizationRow>,
    pub wins: usize,
    pub near_expert: usize,
    pub win_fraction: f64,
}

fn generalization_row(
    task: &EnvSpec,
    variant: &EnvSpec,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<GeneralizationRow> {
    let h = cfg.hyperparams_for(seed);
    let data = demos(task, cfg, seed)?;
    let arch = cfg.arch(task)?;
    let mut row = GeneralizationRow {
        seed,
        status: String::new(),
        expert_original: Some(expert_return(task, seed, cfg.rollouts)?),
        expert_variant: Some(expert_return(variant, seed, cfg.rollouts)?),
        variational_original: None,
        variational_variant: None,
        baseline_original: None,
        baseline_variant: None,
        variational_wins: None,
        near_expert: None,
    };
    let run = train(&data, &arch, &h, &cfg.train_options)?;
    let base = train_baseline(&data, &arch, &BaselineConfig::matching(&h, &cfg.train_options))?;
    let mut statuses = Vec::new();
    if !run.status.is_completed() {
        statuses.push(format!("variational {}", status_label(&run.status)));
    }
    if !base.status.is_completed() {
        statuses.push(format!("baseline {}", status_label(&base.status)));
    }
    if !statuses.is_empty() {
        row.status = statuses.join("; ");
        return Ok(row);
    }
    row.status = "completed".into();
    let vo = variational_return(task, &run.params, cfg.policy_samples, seed, cfg.rollouts)?;
    let vv = variational_return(variant, &run.params, cfg.policy_samples, seed, cfg.rollouts)?;
    let bo = deterministic_return(task, &base.weights, &arch, seed, cfg.rollouts)?;
    let bv = deterministic_return(variant, &base.weights, &arch, seed, cfg.rollouts)?;
    let eo = row.expert_original.unwrap_or_default();
    row.variational_original = Some(vo);
    row.variational_variant = Some(vv);
    row.baseline_original = Some(bo);
    row.baseline_variant = Some(bv);
    row.variational_wins = Some(vv >= bv);
    row.near_expert = Some(within_relative(vo, eo, NEAR_EXPERT) && within_relative(bo, eo, NEAR_EXPERT));
    Ok(row)
}

/// Trains the variational policy and the MSE baseline on identical
/// demonstrations of `task` and compares their returns on `task` and
/// `variant`.
pub fn generalization_experiment(
    task: &EnvSpec,
    variant: &EnvSpec,
    seeds: &[u64],
    cfg: &ExperimentConfig,
) -> Result<GeneralizationTable> {
    cfg.validate()?;
    if task.kind != variant.kind {
        return Err(Error::contract("variant must be of the same task kind"));
    }
    let mut rows = run_jobs(seeds, cfg.parallel, |&seed| {
        generalization_row(task, variant, cfg, seed).unwrap_or_else(|e| GeneralizationRow {
            seed,
            status: format!("error: {e}"),
            expert_original: None,
            expert_variant: None,
            variational_original: None,
            variational_variant: None,
            baseline_original: None,
            baseline_variant: None,
            variational_wins: None,
            near_expert: None,
        })
    });
    rows.sort_by_key(|r| r.seed);
    let wins = rows.iter().filter(|r| r.variational_wins == Some(true)).count();
    let near_expert = rows.iter().filter(|r| r.near_expert == Some(true)).count();
    Ok(GeneralizationTable {
        config: cfg.clone(),
        task: task.clone(),
        variant: variant.clone(),
        seeds: seeds.to_vec(),
        win_fraction: wins as f64 / rows.len().max(1) as f64,
        rows,
        wins,
        near_expert,
    })
}

/// Likelihood-variance cells of the dominance sweep, from
/// complexity-dominated (`C1`) to likelihood-dominated (`C3`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub cells: Vec<(String, f64)>,
    pub seeds: Vec<u64>,
    pub experiment: ExperimentConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            cells: vec![("C1".into(), 1e3), ("C2".into(), 1e0), ("C3".into(), 1e-2)],
            seeds: vec![0],
            experiment: ExperimentConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        if self.cells.is_empty() || self.seeds.is_empty() {
            return Err(Error::contract("sweep needs at least one cell and one seed"));
        }
        if self.cells.iter().any(|(_, b)| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::contract("cell betas must be positive"));
        }
        if self.cells.windows(2).any(|w| w[0].1 <= w[1].1) {
            return Err(Error::contract("cell betas must be strictly decreasing"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: String,
    pub bound: BoundRow,
    pub return_original: Option<f64>,
    pub return_variant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub config: SweepConfig,
    pub task: EnvSpec,
    pub variant: EnvSpec,
    /// Sorted by cell order, then seed.
    pub rows: Vec<SweepRow>,
}

/// Mean of a per-row quantity over a cell's seeds, `None` if any seed
/// failed to produce it.
fn cell_mean(rows: &[SweepRow], cell: &str, f: impl Fn(&SweepRow) -> Option<f64>) -> Option<f64> {
    let vals: Option<Vec<f64>> = rows.iter().filter(|r| r.cell == cell).map(f).collect();
    vals.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

impl SweepTable {
    pub fn mean_residual(&self, cell: &str) -> Option<f64> {
        cell_mean(&self.rows, cell, |r| r.bound.train_residual)
    }

    pub fn mean_return_original(&self, cell: &str) -> Option<f64> {
        cell_mean(&self.rows, cell, |r| r.return_original)
    }

    pub fn mean_return_variant(&self, cell: &str) -> Option<f64> {
        cell_mean(&self.rows, cell, |r| r.return_variant)
    }

    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.bound.holds == Some(true))
    }
}

/// Trains every (cell, seed) with `beta` set by the cell and reports bound,
/// holdout risk, training nll and residual, and returns on both tasks.
pub fn sensitivity_sweep(cfg: &SweepConfig, task: &EnvSpec, variant: &EnvSpec) -> Result<SweepTable> {
    cfg.validate()?;
    let ex = &cfg.experiment;
    let jobs: Vec<(usize, u64)> = (0..cfg.cells.len())
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let mut rows = run_jobs(&jobs, ex.parallel, |&(c, seed)| {
        let (name, beta) = &cfg.cells[c];
        let h = Hyperparams {
            beta: *beta,
            seed,
            ..ex.hyperparams.clone()
        };
        let evaluated = bound_cell(task, ex, &h).and_then(|cell| {
            let returns = match &cell.params {
                Some(p) => Some((
                    variational_return(task, p, ex.policy_samples, seed, ex.rollouts)?,
                    variational_return(variant, p, ex.policy_samples, seed, ex.rollouts)?,
                )),
                None => None,
            };
            Ok((cell.row, returns))
        });
        let (bound, returns) = match evaluated {
            Ok(v) => v,
            Err(e) => (failed_bound_row(task, &h, &e), None),
        };
        (
            c,
            SweepRow {
                cell: name.clone(),
                bound,
                return_original: returns.map(|r| r.0),
                return_variant: returns.map(|r| r.1),
            },
        )
    });
    rows.sort_by_key(|(c, r)| (*c, r.bound.seed));
    Ok(SweepTable {
        config: cfg.clone(),
        task: task.clone(),
        variant: variant.clone(),
        rows: rows.into_iter().map(|(_, r)| r).collect(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

fn flag(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "yes",
        Some(false) => "no",
        None => "-",
    }
}

/// Left-aligned first column, right-aligned remaining columns.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&mut out, &header.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    line(&mut out, &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
    for r in rows {
        line(&mut out, r);
    }
    out
}

/// Text report: title, the configuration as JSON, then the table.
fn text_report(title: &str, config: &impl Serialize, table: String, footer: &str) -> Result<String> {
    let mut out = format!("{title}\n\nconfiguration:\n");
    for l in serde_json::to_string_pretty(config)?.lines() {
        let _ = writeln!(out, "  {l}");
    }
    out.push('\n');
    out.push_str(&table);
    if !footer.is_empty() {
        out.push('\n');
        out.push_str(footer);
        out.push('\n');
    }
    Ok(out)
}

impl CorrelationReport {
    pub fn to_text(&self) -> String {
        format!(
            "records {}\nr {:.12}\np {:.6} ({} permutations, seed {})\n",
            self.records, self.r, self.p_value, self.permutations, self.seed
        )
    }
}

impl BoundTable {
    pub fn to_text(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Cfg<'a> {
            config: &'a ExperimentConfig,
            tasks: &'a [EnvSpec],
            seeds: &'a [u64],
        }
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.task.to_string(),
                    r.seed.to_string(),
                    opt(r.holdout_risk),
                    opt(r.bound),
                    flag(r.holds).into(),
                    r.status.clone(),
                ]
            })
            .collect();
        text_report(
            "bound validity on held-out episodes",
            &Cfg {
                config: &self.config,
                tasks: &self.tasks,
                seeds: &self.seeds,
            },
            render_table(&["task", "seed", "holdout_risk", "bound", "holds", "status"], &rows),
            &format!("holds in {}/{} runs", self.holds, self.rows.len()),
        )
    }
}

impl GeneralizationTable {
    pub fn to_text(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Cfg<'a> {
            config: &'a ExperimentConfig,
            task: &'a EnvSpec,
            variant: &'a EnvSpec,
            seeds: &'a [u64],
        }
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.seed.to_string(),
                    opt(r.expert_original),
                    opt(r.variational_original),
                    opt(r.baseline_original),
                    opt(r.expert_variant),
                    opt(r.variational_variant),
                    opt(r.baseline_variant),
                    flag(r.variational_wins).into(),
                    r.status.clone(),
                ]
            })
            .collect();
        text_report(
            &format!("generalization on {}", self.task.kind),
            &Cfg {
                config: &self.config,
                task: &self.task,
                variant: &self.variant,
                seeds: &self.seeds,
            },
            render_table(
                &[
                    "seed",
                    "expert",
                    "vi",
                    "dnn",
                    "expert_var",
                    "vi_var",
                    "dnn_var",
                    "vi_wins",
                    "status",
                ],
                &rows,
            ),
            &format!(
                "variational wins on the variant in {}/{} seeds (win fraction {:.2}); \
                 both near expert in {}/{}",
                self.wins,
                self.rows.len(),
                self.win_fraction,
                self.near_expert,
                self.rows.len()
            ),
        )
    }
}

impl SweepTable {
    pub fn to_text(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Cfg<'a> {
            config: &'a SweepConfig,
            task: &'a EnvSpec,
            variant: &'a EnvSpec,
        }
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.cell.clone(),
                    format!("{:e}", r.bound.beta),
                    r.bound.seed.to_string(),
                    opt(r.return_original),
                    opt(r.return_variant),
                    opt(r.bound.train_residual),
                    opt(r.bound.train_nll),
                    opt(r.bound.holdout_risk),
                    opt(r.bound.bound),
                    flag(r.bound.holds).into(),
                    r.bound.status.clone(),
                ]
            })
            .collect();
        text_report(
            &format!("likelihood dominance sweep on {}", self.task.kind),
            &Cfg {
                config: &self.config,
                task: &self.task,
                variant: &self.variant,
            },
            render_table(
                &[
                    "cell",
                    "beta",
                    "seed",
                    "return",
                    "return_var",
                    "residual",
                    "train_nll",
                    "holdout_risk",
                    "bound",
                    "holds",
                    "status",
                ],
                &rows,
            ),
            "",
        )
    }
}
