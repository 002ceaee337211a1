//! The pipeline stages behind each subcommand.
//!
//! Every output file is written to a temporary sibling and renamed into
//! place, so an interrupted or failed command never leaves a partial file.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ivy_core::eval::{
    holdout_traces, run_ab, run_interval_ablation, standard_suite, EvalSetup, PolicyEntry, Report,
    SuiteOptions,
};
use ivy_core::meta::{collect, dataset_stats, CollectSpec, Dataset, DatasetStats};
use ivy_core::rl::{EpochLoss, TrainState};
use ivy_core::trace::{format_trace, load_trace, Regime, Trace};
use ivy_core::Checkpoint;

use crate::config::{RunConfig, Sigma};
use crate::error::CliError;

pub const REPORT_FILE: &str = "report.csv";
pub const AUDIT_FILE: &str = "audit.csv";
pub const TIMELINES_FILE: &str = "timelines.csv";
pub const NONSTATIONARY_REPORT_FILE: &str = "report_nonstationary.csv";
pub const NONSTATIONARY_AUDIT_FILE: &str = "audit_nonstationary.csv";
pub const NONSTATIONARY_TIMELINES_FILE: &str = "timelines_nonstationary.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

fn parent_of(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(ivy_core::Error::io(path, e))
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = parent_of(path);
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn trace_path(dir: &Path, regime: Regime, index: usize) -> PathBuf {
    dir.join(regime.as_str())
        .join(format!("call-{index:03}.trace"))
}

/// Holdout traces for the configured evaluation regimes followed by the
/// nonstationary scenario.
pub fn holdout_set(cfg: &RunConfig) -> Result<Vec<(Regime, Vec<Trace>)>, CliError> {
    let mut out = Vec::new();
    for &r in &cfg.eval_regimes {
        out.push((
            r,
            holdout_traces(&[r], cfg.eval_calls, cfg.seed, cfg.sim.call_duration)?,
        ));
    }
    let ns = Regime::Nonstationary;
    out.push((
        ns,
        holdout_traces(
            &[ns],
            cfg.nonstationary_calls,
            cfg.seed,
            cfg.sim.call_duration,
        )?,
    ));
    Ok(out)
}

/// Writes the holdout set to `paths.traces_dir`, replacing any previous set
/// in one rename. Returns the number of traces written.
pub fn cmd_gen_traces(cfg: &RunConfig) -> Result<usize, CliError> {
    let target = &cfg.traces_dir;
    let parent = parent_of(target);
    fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".traces-")
        .tempdir_in(parent)
        .map_err(|e| io_err(parent, e))?;
    let mut n = 0;
    for (regime, traces) in holdout_set(cfg)? {
        let dir = staging.path().join(regime.as_str());
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        for (i, t) in traces.iter().enumerate() {
            let p = trace_path(staging.path(), regime, i);
            fs::write(&p, format_trace(t)).map_err(|e| io_err(&p, e))?;
            n += 1;
        }
    }
    if target.exists() {
        fs::remove_dir_all(target).map_err(|e| io_err(target, e))?;
    }
    let staged = staging.keep();
    fs::rename(&staged, target).map_err(|e| io_err(target, e))?;
    Ok(n)
}

fn load_regime(cfg: &RunConfig, regime: Regime, calls: usize) -> Result<Vec<Trace>, CliError> {
    (0..calls)
        .map(|i| {
            let p = trace_path(&cfg.traces_dir, regime, i);
            if !p.is_file() {
                return Err(CliError::MissingInput(format!(
                    "missing holdout trace {} (run gen-traces first)",
                    p.display()
                )));
            }
            Ok(load_trace(&p)?)
        })
        .collect()
}

/// Holdout traces of the evaluation regimes, read from `paths.traces_dir`.
pub fn load_holdout(cfg: &RunConfig) -> Result<Vec<Trace>, CliError> {
    let mut out = Vec::new();
    for &r in &cfg.eval_regimes {
        out.extend(load_regime(cfg, r, cfg.eval_calls)?);
    }
    Ok(out)
}

pub fn load_nonstationary(cfg: &RunConfig) -> Result<Vec<Trace>, CliError> {
    load_regime(cfg, Regime::Nonstationary, cfg.nonstationary_calls)
}

fn collect_spec(cfg: &RunConfig, calls: usize, interval: f64) -> CollectSpec {
    let mut sim = cfg.sim.clone();
    sim.decision_interval = interval;
    CollectSpec {
        calls,
        regimes: cfg.collect_regimes.clone(),
        pool: cfg.pool.clone(),
        bwe: cfg.bwe.clone(),
        sim,
        seed: cfg.seed,
    }
}

/// Logs `run.collect_calls` random-policy calls and writes the dataset.
pub fn cmd_collect(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let ds = collect(&collect_spec(
        cfg,
        cfg.collect_calls,
        cfg.sim.decision_interval,
    ))?;
    write_atomic(&cfg.dataset, ds.to_text().as_bytes())?;
    Ok(ds)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingInput(format!(
            "missing dataset {} (run collect first)",
            path.display()
        )));
    }
    Ok(Dataset::load(path)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingInput(format!(
            "missing checkpoint {} (run train first)",
            path.display()
        )));
    }
    Ok(Checkpoint::load(path)?)
}

fn check_dataset(cfg: &RunConfig, ds: &Dataset, interval: f64) -> Result<(), CliError> {
    if ds.pool != cfg.pool.len() {
        return Err(CliError::Config(format!(
            "dataset was collected with {} estimators but run.pool has {}",
            ds.pool,
            cfg.pool.len()
        )));
    }
    if (ds.interval - interval).abs() > 1e-9 {
        return Err(CliError::Config(format!(
            "dataset decision interval {} s differs from the configured {} s",
            ds.interval, interval
        )));
    }
    Ok(())
}

pub fn loss_csv(losses: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,loss_v,loss_q,loss_pi\n");
    for l in losses {
        let _ = writeln!(out, "{},{},{},{}", l.epoch, l.loss_v, l.loss_q, l.loss_pi);
    }
    out
}

/// Trains on `ds` from scratch, or continues `resume` for `epochs` more.
pub fn train_on(
    cfg: &RunConfig,
    ds: &Dataset,
    interval: f64,
    epochs: usize,
    resume: Option<Checkpoint>,
) -> Result<(Checkpoint, Vec<EpochLoss>), CliError> {
    check_dataset(cfg, ds, interval)?;
    if ds.is_empty() {
        return Err(ivy_core::Error::EmptyDataset.into());
    }
    let mut state = match resume {
        Some(ck) => {
            if ck.pool != cfg.pool || (ck.interval - interval).abs() > 1e-9 {
                return Err(CliError::Config(
                    "checkpoint to resume was trained with a different pool or interval".into(),
                ));
            }
            ck.train_state()
        }
        None => TrainState::init(cfg.train.clone(), cfg.pool.len())?,
    };
    let losses = state.run(ds, epochs)?;
    Ok((Checkpoint::new(state, cfg.pool.clone(), interval)?, losses))
}

/// Trains on the collected dataset and writes the checkpoint and loss trace.
/// With `resume`, continues the existing checkpoint for `train.epochs` more.
pub fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<(Checkpoint, Vec<EpochLoss>), CliError> {
    let ds = load_dataset(&cfg.dataset)?;
    let previous = if resume {
        Some(load_checkpoint(&cfg.checkpoint)?)
    } else {
        None
    };
    let (ck, losses) = train_on(
        cfg,
        &ds,
        cfg.sim.decision_interval,
        cfg.train.epochs,
        previous,
    )?;
    write_atomic(&cfg.checkpoint, &ck.to_bytes())?;
    write_atomic(&cfg.loss_trace, loss_csv(&losses).as_bytes())?;
    Ok((ck, losses))
}

/// σ for the delta rule: the configured value, or the dataset's gap std.
pub fn resolve_sigma(cfg: &RunConfig) -> Result<Option<f64>, CliError> {
    match cfg.sigma {
        Sigma::Fixed(s) => Ok(Some(s)),
        Sigma::Auto => {
            let stats = dataset_stats(&load_dataset(&cfg.dataset)?)?;
            if stats.sigma_degenerate {
                eprintln!("warning: dataset gap has zero spread; delta rules are skipped");
            }
            Ok(stats.sigma)
        }
    }
}

fn setup(cfg: &RunConfig) -> EvalSetup {
    let mut s = EvalSetup::new(cfg.pool.clone(), cfg.seed);
    s.bwe = cfg.bwe.clone();
    s.sim = cfg.sim.clone();
    s.paired = cfg.paired;
    s.reference = Some("ivy".into());
    s
}

fn write_report(dir: &Path, files: [&str; 3], report: &Report) -> Result<(), CliError> {
    write_atomic(&dir.join(files[0]), report.to_csv().as_bytes())?;
    write_atomic(&dir.join(files[1]), report.audit_csv().as_bytes())?;
    write_atomic(&dir.join(files[2]), report.timelines_csv().as_bytes())
}

/// Evaluates the trained metapolicy against every baseline on the holdout
/// regimes and on the nonstationary scenario.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(Report, Report), CliError> {
    let ck = load_checkpoint(&cfg.checkpoint)?;
    if (ck.interval - cfg.sim.decision_interval).abs() > 1e-9 {
        return Err(CliError::Config(format!(
            "checkpoint was trained at a {} s interval, run.decision_interval is {} s",
            ck.interval, cfg.sim.decision_interval
        )));
    }
    let traces = load_holdout(cfg)?;
    let ns_traces = load_nonstationary(cfg)?;
    let opts = SuiteOptions {
        vivace: cfg.vivace.clone(),
        sigma: resolve_sigma(cfg)?,
    };
    let policies = standard_suite(&cfg.pool, Some(Arc::new(ck)), &opts)?;
    let setup = setup(cfg);
    let report = run_ab(&policies, &traces, &setup)?;
    let ns = run_ab(&policies, &ns_traces, &setup)?;
    write_report(
        &cfg.reports_dir,
        [REPORT_FILE, AUDIT_FILE, TIMELINES_FILE],
        &report,
    )?;
    write_report(
        &cfg.reports_dir,
        [
            NONSTATIONARY_REPORT_FILE,
            NONSTATIONARY_AUDIT_FILE,
            NONSTATIONARY_TIMELINES_FILE,
        ],
        &ns,
    )?;
    Ok((report, ns))
}

/// Collects, trains and evaluates one metapolicy per decision interval.
/// Each arm compares its metapolicy with the fixed estimators on the same
/// holdout traces.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<(f64, Report)>, CliError> {
    let traces = load_holdout(cfg)?;
    let mut arms = Vec::with_capacity(cfg.ablation_intervals.len());
    for &interval in &cfg.ablation_intervals {
        let ds = collect(&collect_spec(cfg, cfg.ablation_collect_calls, interval))?;
        let (ck, _) = train_on(cfg, &ds, interval, cfg.ablation_epochs, None)?;
        let mut policies = vec![PolicyEntry::trained("ivy", Arc::new(ck))];
        policies.extend((0..cfg.pool.len()).map(|i| PolicyEntry::fixed(&cfg.pool, i)));
        arms.push((interval, policies));
    }
    let reports = run_interval_ablation(&arms, &traces, &setup(cfg))?;
    write_atomic(
        &cfg.reports_dir.join(ABLATION_FILE),
        ablation_csv(&reports).as_bytes(),
    )?;
    Ok(reports)
}

pub fn ablation_csv(reports: &[(f64, Report)]) -> String {
    let mut out = String::new();
    for (k, (interval, report)) in reports.iter().enumerate() {
        let csv = report.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        if k == 0 {
            let _ = writeln!(out, "interval,{header}");
        }
        for line in lines {
            let _ = writeln!(out, "{interval},{line}");
        }
    }
    out
}

pub fn cmd_stats(cfg: &RunConfig) -> Result<DatasetStats, CliError> {
    Ok(dataset_stats(&load_dataset(&cfg.dataset)?)?)
}

pub fn format_stats(stats: &DatasetStats) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "transitions  {}", stats.transitions);
    let _ = writeln!(out, "calls        {}", stats.calls);
    let _ = writeln!(
        out,
        "reward       mean {:.4} std {:.4}",
        stats.reward_mean, stats.reward_std
    );
    let _ = writeln!(out, "actions      {:?}", stats.action_counts);
    match stats.sigma {
        Some(s) => {
            let _ = writeln!(
                out,
                "sigma        {s:.3} kbps{}",
                if stats.sigma_degenerate {
                    " (degenerate)"
                } else {
                    ""
                }
            );
        }
        None => {
            let _ = writeln!(out, "sigma        unavailable (no gap field)");
        }
    }
    let _ = writeln!(out, "feature      mean std");
    for (j, (m, s)) in stats
        .feature_mean
        .iter()
        .zip(&stats.feature_std)
        .enumerate()
    {
        let _ = writeln!(out, "  {j:>2}        {m:.4} {s:.4}");
    }
    out
}
