//! Paired A/B runs over holdout traces.
//!
//! Every policy is run on the same list of traces, and call `i` of every
//! policy uses the same simulator seed, so per-regime differences come from
//! the policies and not from the draw of traces or loss events.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::bwe::{make_pool, BweParams};
use crate::error::{Error, Result};
use crate::eval::stats::{mean_ci95, welch_t_test};
use crate::meta::policy::{
    ExploreExploitPolicy, FixedPolicy, HeuristicPair, Metapolicy, RandomPolicy, RuleKind,
    RulePolicy,
};
use crate::meta::utility::{Utility, VivaceParams};
use crate::rl::checkpoint::{Checkpoint, IqlPolicy};
use crate::rng::{derive_seed, label};
use crate::sim::{run_call, SimConfig};
use crate::trace::{generate_trace, Regime, Trace};

type Factory = dyn Fn(u64) -> Box<dyn Metapolicy> + Send + Sync;

/// A named policy constructor; a fresh policy is built for every call.
#[derive(Clone)]
pub struct PolicyEntry {
    pub name: String,
    make: Arc<Factory>,
}

impl std::fmt::Debug for PolicyEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PolicyEntry")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

impl PolicyEntry {
    /// `make` receives the per-call seed.
    pub fn new(
        name: impl Into<String>,
        make: impl Fn(u64) -> Box<dyn Metapolicy> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            make: Arc::new(make),
        }
    }

    pub fn build(&self, call_seed: u64) -> Box<dyn Metapolicy> {
        (self.make)(call_seed)
    }

    pub fn fixed(pool: &[String], index: usize) -> Self {
        Self::new(pool[index].clone(), move |_| {
            Box::new(FixedPolicy::new(index))
        })
    }

    pub fn random() -> Self {
        Self::new("random", |seed| {
            Box::new(RandomPolicy::new(derive_seed(seed, &[label("random")])))
        })
    }

    pub fn explore_exploit(utility: Utility, vivace: VivaceParams, pair: HeuristicPair) -> Self {
        Self::new(utility.as_str(), move |_| {
            Box::new(ExploreExploitPolicy::new(utility, vivace.clone(), pair))
        })
    }

    pub fn rule(kind: RuleKind, sigma: f64, pair: HeuristicPair) -> Result<Self> {
        // Validate once so the factory cannot fail later.
        RulePolicy::new(kind, sigma, pair)?;
        Ok(Self::new(kind.as_str(), move |_| {
            Box::new(RulePolicy::new(kind, sigma, pair).expect("validated above"))
        }))
    }

    pub fn trained(name: impl Into<String>, checkpoint: Arc<Checkpoint>) -> Self {
        let name = name.into();
        let n = name.clone();
        Self::new(name, move |_| {
            Box::new(IqlPolicy::named(checkpoint.clone(), n.clone()))
        })
    }
}

/// Settings shared by all runs of one evaluation.
#[derive(Debug, Clone)]
pub struct EvalSetup {
    pub pool: Vec<String>,
    pub bwe: BweParams,
    pub sim: SimConfig,
    pub master_seed: u64,
    /// Same simulator seed for call `i` of every policy. When false the seed
    /// also depends on the policy name.
    pub paired: bool,
    /// Policy the p-values are computed against.
    pub reference: Option<String>,
}

impl EvalSetup {
    pub fn new(pool: Vec<String>, master_seed: u64) -> Self {
        Self {
            pool,
            bwe: BweParams::default(),
            sim: SimConfig::default(),
            master_seed,
            paired: true,
            reference: None,
        }
    }
}

/// Holdout traces: `calls` per regime, seeded from their own stream so they
/// never coincide with training traces.
pub fn holdout_traces(
    regimes: &[Regime],
    calls: usize,
    master_seed: u64,
    duration: f64,
) -> Result<Vec<Trace>> {
    let mut out = Vec::with_capacity(regimes.len() * calls);
    for &r in regimes {
        for i in 0..calls {
            let seed = derive_seed(
                master_seed,
                &[label("holdout"), label(r.as_str()), i as u64],
            );
            out.push(generate_trace(r, seed, duration)?);
        }
    }
    Ok(out)
}

/// Outcome of a single evaluated call.
#[derive(Debug, Clone, PartialEq)]
pub struct CallResult {
    pub policy: String,
    pub regime: Regime,
    pub trace_id: String,
    /// Position of the trace in the trace list.
    pub call_index: usize,
    pub sim_seed: u64,
    pub video_mos: f64,
    pub audio_mos: f64,
    /// Estimator in charge at the start of each decision interval.
    pub actions: Vec<usize>,
}

impl CallResult {
    pub fn switches(&self) -> usize {
        self.actions.windows(2).filter(|w| w[0] != w[1]).count()
    }

    pub fn call_id(&self) -> String {
        format!("{}/{}", self.policy, self.trace_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub policy: String,
    pub regime: Regime,
    pub n: usize,
    pub video_mos: f64,
    pub video_ci: f64,
    pub audio_mos: f64,
    pub audio_ci: f64,
    /// Welch p-values against the reference policy.
    pub p_video: Option<f64>,
    pub p_audio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub reference: Option<String>,
    /// One row per (policy, regime), policies in input order, regimes in
    /// order of first appearance in the trace list.
    pub rows: Vec<ReportRow>,
    /// Every call, sorted by policy then call index.
    pub calls: Vec<CallResult>,
}

pub const REPORT_HEADER: &str =
    "policy,regime,n,video_mos,video_ci,audio_mos,audio_ci,p_video,p_audio";
pub const AUDIT_HEADER: &str =
    "policy,regime,call_index,trace_id,sim_seed,video_mos,audio_mos,switches";
pub const TIMELINE_HEADER: &str = "call_id,interval_index,action";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |p| format!("{p:.6}"))
}

impl Report {
    pub fn row(&self, policy: &str, regime: Regime) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.policy == policy && r.regime == regime)
    }

    pub fn policies(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.policy.as_str()) {
                out.push(&r.policy);
            }
        }
        out
    }

    pub fn regimes(&self) -> Vec<Regime> {
        let mut out = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.regime) {
                out.push(r.regime);
            }
        }
        out
    }

    /// Mean of the per-regime video MOS of `policy`.
    pub fn regime_average(&self, policy: &str) -> Option<f64> {
        let rows: Vec<&ReportRow> = self.rows.iter().filter(|r| r.policy == policy).collect();
        (!rows.is_empty())
            .then(|| rows.iter().map(|r| r.video_mos).sum::<f64>() / rows.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
                r.policy,
                r.regime,
                r.n,
                r.video_mos,
                r.video_ci,
                r.audio_mos,
                r.audio_ci,
                opt(r.p_video),
                opt(r.p_audio)
            );
        }
        out
    }

    pub fn audit_csv(&self) -> String {
        let mut out = format!("{AUDIT_HEADER}\n");
        for c in &self.calls {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{}",
                c.policy,
                c.regime,
                c.call_index,
                c.trace_id,
                c.sim_seed,
                c.video_mos,
                c.audio_mos,
                c.switches()
            );
        }
        out
    }

    pub fn timelines_csv(&self) -> String {
        let mut out = format!("{TIMELINE_HEADER}\n");
        for c in &self.calls {
            let id = c.call_id();
            for (k, a) in c.actions.iter().enumerate() {
                let _ = writeln!(out, "{id},{k},{a}");
            }
        }
        out
    }
}

fn sim_seed(setup: &EvalSetup, policy: &str, trace: &Trace) -> u64 {
    let mut parts = vec![label("sim"), label(&trace.id)];
    if !setup.paired {
        parts.push(label(policy));
    }
    derive_seed(setup.master_seed, &parts)
}

/// Runs every policy on every trace and aggregates per regime.
pub fn run_ab(policies: &[PolicyEntry], traces: &[Trace], setup: &EvalSetup) -> Result<Report> {
    if traces.is_empty() {
        return Err(Error::InvalidInput("empty trace set".into()));
    }
    if policies.is_empty() {
        return Err(Error::InvalidInput("no policies to evaluate".into()));
    }
    for (i, p) in policies.iter().enumerate() {
        if policies[..i].iter().any(|q| q.name == p.name) {
            return Err(Error::Config(format!("duplicate policy name `{}`", p.name)));
        }
    }
    if let Some(r) = &setup.reference {
        if !policies.iter().any(|p| &p.name == r) {
            return Err(Error::Config(format!(
                "reference policy `{r}` is not evaluated"
            )));
        }
    }
    setup.sim.validate()?;
    make_pool(&setup.pool, &setup.bwe)?;

    let jobs: Vec<(usize, usize)> = (0..policies.len())
        .flat_map(|p| (0..traces.len()).map(move |t| (p, t)))
        .collect();
    let mut results: Vec<(usize, CallResult)> = jobs
        .par_iter()
        .map(|&(p, t)| -> Result<(usize, CallResult)> {
            let entry = &policies[p];
            let trace = &traces[t];
            let seed = sim_seed(setup, &entry.name, trace);
            let mut policy = entry.build(seed);
            let mut pool = make_pool(&setup.pool, &setup.bwe)?;
            let log = run_call(trace, policy.as_mut(), &mut pool, &setup.sim, seed)?;
            Ok((
                p,
                CallResult {
                    policy: entry.name.clone(),
                    regime: trace.regime,
                    trace_id: trace.id.clone(),
                    call_index: t,
                    sim_seed: seed,
                    video_mos: log.mean_video_mos(),
                    audio_mos: log.mean_audio_mos(),
                    actions: log.actions(),
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    // Workers may finish in any order; the report only depends on the keys.
    results.sort_by_key(|(p, c)| (*p, c.call_index));
    let calls: Vec<CallResult> = results.into_iter().map(|(_, c)| c).collect();
    aggregate(policies, traces, calls, setup.reference.clone())
}

fn aggregate(
    policies: &[PolicyEntry],
    traces: &[Trace],
    calls: Vec<CallResult>,
    reference: Option<String>,
) -> Result<Report> {
    let mut regimes: Vec<Regime> = Vec::new();
    for t in traces {
        if !regimes.contains(&t.regime) {
            regimes.push(t.regime);
        }
    }
    let samples = |policy: &str, regime: Regime| -> (Vec<f64>, Vec<f64>) {
        calls
            .iter()
            .filter(|c| c.policy == policy && c.regime == regime)
            .map(|c| (c.video_mos, c.audio_mos))
            .unzip()
    };
    let mut rows = Vec::with_capacity(policies.len() * regimes.len());
    for p in policies {
        for &regime in &regimes {
            let (video, audio) = samples(&p.name, regime);
            let n = video.len();
            let (video_mos, video_ci, audio_mos, audio_ci) = if n >= 2 {
                let (vm, vc) = mean_ci95(&video)?;
                let (am, ac) = mean_ci95(&audio)?;
                (vm, vc, am, ac)
            } else {
                // A single call has no spread estimate.
                (video[0], 0.0, audio[0], 0.0)
            };
            let (p_video, p_audio) = match &reference {
                Some(r) if n >= 2 => {
                    let (rv, ra) = samples(r, regime);
                    (
                        Some(welch_t_test(&video, &rv)?.p),
                        Some(welch_t_test(&audio, &ra)?.p),
                    )
                }
                _ => (None, None),
            };
            rows.push(ReportRow {
                policy: p.name.clone(),
                regime,
                n,
                video_mos,
                video_ci,
                audio_mos,
                audio_ci,
                p_video,
                p_audio,
            });
        }
    }
    Ok(Report {
        reference,
        rows,
        calls,
    })
}

/// Policies compared in the standard A/B suite.
#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub vivace: VivaceParams,
    /// σ for the delta and all-rules heuristics; they are skipped when absent
    /// or zero.
    pub sigma: Option<f64>,
}

/// The trained metapolicy (if any), every fixed estimator, the
/// explore-exploit heuristics, the rules and the random policy.
pub fn standard_suite(
    pool: &[String],
    checkpoint: Option<Arc<Checkpoint>>,
    opts: &SuiteOptions,
) -> Result<Vec<PolicyEntry>> {
    let mut out = Vec::new();
    if let Some(ck) = checkpoint {
        if ck.pool != pool {
            return Err(Error::Config(format!(
                "checkpoint pool [{}] differs from configured pool [{}]",
                ck.pool.join(","),
                pool.join(",")
            )));
        }
        out.push(PolicyEntry::trained("ivy", ck));
    }
    for i in 0..pool.len() {
        out.push(PolicyEntry::fixed(pool, i));
    }
    if let Ok(pair) = HeuristicPair::from_pool(pool) {
        for u in Utility::ALL {
            out.push(PolicyEntry::explore_exploit(u, opts.vivace.clone(), pair));
        }
        out.push(PolicyEntry::rule(RuleKind::Jitter, 1.0, pair)?);
        if let Some(s) = opts.sigma.filter(|s| *s > 0.0) {
            out.push(PolicyEntry::rule(RuleKind::Delta, s, pair)?);
            out.push(PolicyEntry::rule(RuleKind::AllRules, s, pair)?);
        }
    }
    out.push(PolicyEntry::random());
    Ok(out)
}

pub const NONSTATIONARY_CALLS: usize = 30;

/// The three-phase scenario; timelines are in `Report::calls`.
pub fn run_nonstationary(
    policies: &[PolicyEntry],
    setup: &EvalSetup,
    calls: usize,
) -> Result<Report> {
    let traces = holdout_traces(
        &[Regime::Nonstationary],
        calls,
        setup.master_seed,
        setup.sim.call_duration,
    )?;
    run_ab(policies, &traces, setup)
}

/// One A/B run per decision interval, each with the policies trained for it.
pub fn run_interval_ablation(
    arms: &[(f64, Vec<PolicyEntry>)],
    traces: &[Trace],
    setup: &EvalSetup,
) -> Result<Vec<(f64, Report)>> {
    for (interval, _) in arms {
        crate::sim::windows_in(*interval)?;
    }
    arms.iter()
        .map(|(interval, policies)| {
            let mut s = setup.clone();
            s.sim.decision_interval = *interval;
            Ok((*interval, run_ab(policies, traces, &s)?))
        })
        .collect()
}
