use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use vipac::analysis::{self, ExperimentConfig, SweepConfig};
use vipac::checkpoint::Checkpoint;
use vipac::envs::{generate_demos, make_variant, EnvSpec, Overrides};
use vipac::pac_bound::{bound_full, holdout_risk};
use vipac::rng::Purpose;
use vipac::trainer::{train_observed, RunStatus, TrainOptions, TRACE_HEADER};
use vipac::{Dataset, Hyperparams, NetworkArch, NoiseDraw, TrainTrace};

use crate::args::{
    BoundArgs, Command, CorrelateArgs, EnvArgs, Experiment, GenDemosArgs, GeneralizeArgs, HarnessArgs, HyperArgs,
    SweepArgs, TrainCmdArgs, VerifyBoundArgs,
};
use crate::config::{self, Resolved};
use crate::CliError;

const VERSION: &str = concat!("vipac ", env!("CARGO_PKG_VERSION"));

/// Training-trace rows buffered between flushes to disk.
const TRACE_FLUSH_EVERY: usize = 50;

pub fn run(command: Command) -> Result<(), CliError> {
    let name = command.name();
    match command {
        Command::GenDemos(a) => gen_demos(name, a),
        Command::Train(a) => train(name, a),
        Command::Bound(a) => bound(name, a),
        Command::Experiment(Experiment::Correlate(a)) => correlate(name, a),
        Command::Experiment(Experiment::VerifyBound(a)) => verify_bound(name, a),
        Command::Experiment(Experiment::Generalize(a)) => generalize(name, a),
        Command::Experiment(Experiment::Sweep(a)) => sweep(name, a),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| {
        CliError::Input(vipac::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

/// Writes a CSV or JSON-lines output together with its `<path>.config`.
fn write_with_sidecar(path: &Path, contents: &str, resolved: &Resolved) -> Result<(), CliError> {
    write_file(path, contents)?;
    write_file(&config::sidecar_path(path), &config::to_text(resolved))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(vipac::Error::from)?;
    text.push('\n');
    write_file(path, &text)
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|source| {
        CliError::Input(vipac::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn env_spec(env: &EnvArgs) -> Result<EnvSpec, CliError> {
    let base = EnvSpec::default_for(env.env);
    match &env.variant {
        Some(v) => Ok(make_variant(&base, &v.parse::<Overrides>()?)?),
        None => Ok(base),
    }
}

/// `k=v` text of the parameters in which `variant` differs from `base`.
fn describe_variant(base: &EnvSpec, variant: &EnvSpec) -> String {
    let mut parts = Vec::new();
    if variant.mass != base.mass {
        parts.push(format!("m={}", variant.mass));
    }
    if variant.length != base.length {
        parts.push(format!("l={}", variant.length));
    }
    if variant.drag != base.drag {
        parts.push(format!("c={}", variant.drag));
    }
    parts.join(",")
}

fn hyperparams(h: &HyperArgs, seed: u64) -> Hyperparams {
    Hyperparams {
        beta: h.beta,
        delta: h.delta,
        mc_samples: h.mc_samples,
        batches: h.batches,
        lr: h.lr,
        epochs: h.epochs,
        seed,
    }
}

fn train_options(h: &HyperArgs, record_wallclock: bool) -> TrainOptions {
    TrainOptions {
        clip_norm: if h.clip_off { None } else { Some(h.clip_norm) },
        record_wallclock,
    }
}

fn gen_demos(name: &str, mut a: GenDemosArgs) -> Result<(), CliError> {
    let spec = env_spec(&a.env)?;
    let (data, trajectories) = generate_demos(&spec, a.episodes, a.seed)?;
    let traj_path = a
        .trajectories
        .get_or_insert_with(|| with_suffix(&a.out, "jsonl"))
        .clone();
    let resolved = config::resolve(name, &a)?;

    match &a.holdout_out {
        Some(holdout_path) => {
            let (train, holdout) = data.split_by_episode(a.train_fraction)?;
            write_with_sidecar(&a.out, &train.to_csv(), &resolved)?;
            write_with_sidecar(holdout_path, &holdout.to_csv(), &resolved)?;
            println!(
                "wrote {} training rows to {} and {} holdout rows to {}",
                train.len(),
                a.out.display(),
                holdout.len(),
                holdout_path.display()
            );
        }
        None => {
            write_with_sidecar(&a.out, &data.to_csv(), &resolved)?;
            println!("wrote {} rows to {}", data.len(), a.out.display());
        }
    }
    let mut lines = String::new();
    for t in &trajectories {
        lines.push_str(&t.to_jsonl()?);
    }
    write_with_sidecar(&traj_path, &lines, &resolved)?;
    let mean = trajectories.iter().map(|t| t.episodic_return).sum::<f64>() / trajectories.len() as f64;
    println!("expert mean episodic return {mean:.6}");
    Ok(())
}

fn train(name: &str, mut a: TrainCmdArgs) -> Result<(), CliError> {
    let data = Dataset::read_csv(&a.data)?;
    let arch = NetworkArch::new(data.input_dim(), a.hyper.hidden.clone(), data.output_dim())?;
    let h = hyperparams(&a.hyper, a.seed);
    let opts = train_options(&a.hyper, a.record_wallclock);
    let trace_path = a.trace.get_or_insert_with(|| with_suffix(&a.out, "trace.csv")).clone();
    let resolved = config::resolve(name, &a)?;

    let io_err = |source| {
        CliError::Input(vipac::Error::Io {
            path: trace_path.clone(),
            source,
        })
    };
    let mut trace = std::io::BufWriter::new(std::fs::File::create(&trace_path).map_err(io_err)?);
    writeln!(trace, "{TRACE_HEADER}").map_err(io_err)?;
    let mut trace_result = Ok(());

    let report_every = (h.epochs / 10).max(1);
    let batches = h.batches;
    let mut steps = 0usize;
    let run = train_observed(&data, &arch, &h, &opts, |r| {
        if r.batch == batches && r.epoch % report_every == 0 {
            eprintln!("epoch {:>6}  cost {:.6}  bound {:.6}", r.epoch, r.cost, r.bound);
        }
        steps += 1;
        if trace_result.is_ok() {
            trace_result = writeln!(trace, "{}", TrainTrace::csv_row(r));
        }
        if trace_result.is_ok() && steps.is_multiple_of(TRACE_FLUSH_EVERY) {
            trace_result = trace.flush();
        }
    })?;
    trace_result.and_then(|()| trace.flush()).map_err(io_err)?;
    write_file(&config::sidecar_path(&trace_path), &config::to_text(&resolved))?;

    let ck = Checkpoint::new(&run.params, &h).with_config(config::to_json(&resolved));
    write_file(&a.out, &ck.to_json()?)?;
    match run.status {
        RunStatus::Completed => {
            println!(
                "wrote checkpoint {} and trace {} ({} steps)",
                a.out.display(),
                trace_path.display(),
                run.trace.records.len()
            );
            Ok(())
        }
        RunStatus::Diverged { epoch, batch, reason } => Err(CliError::Diverged(format!(
            "epoch {epoch} batch {batch}: {reason}; last finite parameters saved to {}",
            a.out.display()
        ))),
    }
}

fn bound(name: &str, mut a: BoundArgs) -> Result<(), CliError> {
    let ck = Checkpoint::read(&a.checkpoint)?;
    let params = ck.params::<f64>()?;
    let data = Dataset::read_csv(&a.data)?;
    let mut h = ck.hyperparams.clone();
    h.delta = *a.delta.get_or_insert(h.delta);
    h.beta = *a.beta.get_or_insert(h.beta);
    h.seed = *a.seed.get_or_insert(ck.seed);
    h.mc_samples = a.mc_samples;
    h.validate()?;
    let resolved = config::resolve(name, &a)?;

    let noise = NoiseDraw::batch(&params.arch, h.seed, Purpose::EVAL_NOISE, 0, h.mc_samples);
    let mut report = bound_full(&data, &params, &h, &noise)?;
    let mut provenance = json!({
        "dataset": a.data.display().to_string(),
        "dataset_sha256": sha256_file(&a.data)?,
        "checkpoint": a.checkpoint.display().to_string(),
        "checkpoint_sha256": sha256_file(&a.checkpoint)?,
        "version": VERSION,
    });
    if let Some(path) = &a.holdout {
        let holdout = Dataset::read_csv(path)?;
        report = report.with_holdout(holdout_risk(&holdout, &params, &h, &noise)?);
        provenance["holdout"] = json!(path.display().to_string());
        provenance["holdout_sha256"] = json!(sha256_file(path)?);
    }
    let value = json!({
        "config": config::to_json(&resolved),
        "report": report,
        "provenance": provenance,
    });
    match &a.out {
        Some(path) => {
            write_json(path, &value)?;
            eprintln!("bound {:.6} written to {}", report.bound_value, path.display());
        }
        None => {
            let text = serde_json::to_string_pretty(&value).map_err(vipac::Error::from)?;
            let _ = writeln!(std::io::stdout(), "{text}");
        }
    }
    Ok(())
}

fn correlate(name: &str, a: CorrelateArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.trace).map_err(|source| {
        CliError::Input(vipac::Error::Io {
            path: a.trace.clone(),
            source,
        })
    })?;
    let trace = TrainTrace::from_csv(&text)?;
    let report = analysis::correlate(&trace, a.permutations, a.seed)?;
    let resolved = config::resolve(name, &a)?;
    print!("{}", report.to_text());
    if let Some(path) = &a.out {
        write_json(
            path,
            &json!({
                "config": config::to_json(&resolved),
                "trace_sha256": sha256_file(&a.trace)?,
                "report": report,
            }),
        )?;
    }
    Ok(())
}

fn experiment_config(h: &HarnessArgs) -> ExperimentConfig {
    ExperimentConfig {
        hidden: h.hyper.hidden.clone(),
        hyperparams: hyperparams(&h.hyper, 0),
        train_options: train_options(&h.hyper, false),
        episodes: h.episodes,
        train_fraction: h.train_fraction,
        eval_samples: h.eval_samples,
        policy_samples: h.policy_samples,
        rollouts: h.rollouts,
        parallel: h.parallel,
    }
}

/// JSON report at `out` and an aligned-text report next to it.
fn write_reports(out: &Path, resolved: &Resolved, table: Value, text: String) -> Result<(), CliError> {
    write_json(
        out,
        &json!({
            "config": config::to_json(resolved),
            "version": VERSION,
            "table": table,
        }),
    )?;
    let mut full = String::from("flags:\n");
    for line in config::to_text(resolved).lines() {
        full.push_str("  ");
        full.push_str(line);
        full.push('\n');
    }
    full.push('\n');
    full.push_str(&text);
    write_file(&with_suffix(out, "txt"), &full)?;
    print!("{text}");
    Ok(())
}

fn to_value(v: &impl serde::Serialize) -> Result<Value, CliError> {
    Ok(serde_json::to_value(v).map_err(vipac::Error::from)?)
}

fn verify_bound(name: &str, a: VerifyBoundArgs) -> Result<(), CliError> {
    let tasks: Vec<EnvSpec> = a.envs.iter().map(|&k| EnvSpec::default_for(k)).collect();
    let cfg = experiment_config(&a.harness);
    let resolved = config::resolve(name, &a)?;
    let table = analysis::verify_bound_experiment(&tasks, &a.harness.seeds, &cfg)?;
    write_reports(&a.harness.out, &resolved, to_value(&table)?, table.to_text()?)
}

fn task_and_variant(env: &mut EnvArgs) -> Result<(EnvSpec, EnvSpec), CliError> {
    let base = EnvSpec::default_for(env.env);
    let variant = match &env.variant {
        Some(v) => make_variant(&base, &v.parse::<Overrides>()?)?,
        None => base.canonical_variant()?,
    };
    env.variant = Some(describe_variant(&base, &variant));
    Ok((base, variant))
}

fn generalize(name: &str, mut a: GeneralizeArgs) -> Result<(), CliError> {
    let (task, variant) = task_and_variant(&mut a.env)?;
    let cfg = experiment_config(&a.harness);
    let resolved = config::resolve(name, &a)?;
    let table = analysis::generalization_experiment(&task, &variant, &a.harness.seeds, &cfg)?;
    write_reports(&a.harness.out, &resolved, to_value(&table)?, table.to_text()?)
}

fn parse_cells(text: &str) -> Result<Vec<(String, f64)>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(|c| {
            let (n, b) = c
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("cell `{c}` is not name=beta")))?;
            let beta = b
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("cell `{c}` has a non-numeric beta")))?;
            Ok((n.trim().to_string(), beta))
        })
        .collect()
}

fn sweep(name: &str, mut a: SweepArgs) -> Result<(), CliError> {
    let (task, variant) = task_and_variant(&mut a.env)?;
    let cfg = SweepConfig {
        cells: parse_cells(&a.cells)?,
        seeds: a.harness.seeds.clone(),
        experiment: experiment_config(&a.harness),
    };
    let resolved = config::resolve(name, &a)?;
    let table = analysis::sensitivity_sweep(&cfg, &task, &variant)?;
    write_reports(&a.harness.out, &resolved, to_value(&table)?, table.to_text()?)
}
