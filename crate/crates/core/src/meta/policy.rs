//! Metapolicies: who drives the sender during the next interval.

use crate::bwe::{PROBE_MAX, SAFE_FILTER};
use crate::error::{Error, Result};
use crate::meta::state::MetaState;
use crate::meta::utility::{MiniWindowStats, Utility, VivaceParams};
use crate::rng::{rng_from, SimRng};
use crate::sim::{uniform_index, QosWindow, TickStats, TICKS_PER_WINDOW, WINDOW};

/// What a metapolicy sees at a decision point.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub interval_index: usize,
    pub state: &'a MetaState,
    /// Every window observed so far in the call, oldest first.
    pub windows: &'a [QosWindow],
    pub actions: &'a [usize],
    /// Current estimate of every pool member, pool order.
    pub estimates: &'a [f64],
    pub pool: &'a [String],
    pub windows_per_interval: usize,
}

/// What a metapolicy sees after each 600 ms window.
#[derive(Debug, Clone, Copy)]
pub struct WindowContext<'a> {
    pub interval_index: usize,
    /// Zero-based index of the window just closed within its interval.
    pub window_in_interval: usize,
    pub windows_per_interval: usize,
    /// Ticks of the current interval so far.
    pub interval_ticks: &'a [TickStats],
    pub windows: &'a [QosWindow],
    pub active: usize,
    pub estimates: &'a [f64],
    pub pool: &'a [String],
}

pub trait Metapolicy {
    fn name(&self) -> String;

    /// Estimator to run for the next interval.
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> usize;

    /// Optional switch at a window boundary inside an interval.
    fn on_window(&mut self, _ctx: &WindowContext<'_>) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct FixedPolicy {
    index: usize,
}

impl FixedPolicy {
    pub fn new(index: usize) -> Self {
        Self { index }
    }
}

impl Metapolicy for FixedPolicy {
    fn name(&self) -> String {
        format!("fixed_{}", self.index)
    }

    fn decide(&mut self, _ctx: &DecisionContext<'_>) -> usize {
        self.index
    }
}

/// Uniform i.i.d. choice per decision; the data-collection behaviour policy.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: SimRng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: rng_from(seed),
        }
    }

    pub fn draw(&mut self, pool_size: usize) -> usize {
        uniform_index(&mut self.rng, pool_size)
    }
}

impl Metapolicy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> usize {
        self.draw(ctx.pool.len())
    }
}

fn index_of(pool: &[String], name: &str) -> Result<usize> {
    pool.iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::Config(format!("baseline requires `{name}` in the estimator pool")))
}

/// Conservative and aggressive estimator indices used by the heuristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeuristicPair {
    pub safe: usize,
    pub probe: usize,
}

impl HeuristicPair {
    pub fn from_pool(pool: &[String]) -> Result<Self> {
        Ok(Self {
            safe: index_of(pool, SAFE_FILTER)?,
            probe: index_of(pool, PROBE_MAX)?,
        })
    }
}

/// Seconds into the call before exploring; video starts flowing by then.
pub const EXPLORATION_START: f64 = 12.0;

/// Runs SafeFilter until the exploration interval, splits that interval into
/// a SafeFilter and a ProbeMax mini-window, scores both with a QoS utility and
/// commits to the winner for the rest of the call. Ties keep SafeFilter.
#[derive(Debug, Clone)]
pub struct ExploreExploitPolicy {
    utility: Utility,
    vivace: VivaceParams,
    pair: HeuristicPair,
    safe_stats: Option<MiniWindowStats>,
    choice: Option<usize>,
}

impl ExploreExploitPolicy {
    pub fn new(utility: Utility, vivace: VivaceParams, pair: HeuristicPair) -> Self {
        Self {
            utility,
            vivace,
            pair,
            safe_stats: None,
            choice: None,
        }
    }

    fn exploration_interval(windows_per_interval: usize) -> usize {
        let interval = windows_per_interval as f64 * WINDOW;
        (EXPLORATION_START / interval - 1e-9).ceil() as usize
    }

    /// Winner between two mini-windows; ties and scoring errors keep SafeFilter.
    pub fn pick(&self, safe: &MiniWindowStats, probe: &MiniWindowStats) -> usize {
        let s = self
            .utility
            .score(safe, &self.vivace)
            .unwrap_or(f64::NEG_INFINITY);
        let p = self
            .utility
            .score(probe, &self.vivace)
            .unwrap_or(f64::NEG_INFINITY);
        if p > s {
            self.pair.probe
        } else {
            self.pair.safe
        }
    }

    pub fn committed(&self) -> Option<usize> {
        self.choice
    }
}

impl Metapolicy for ExploreExploitPolicy {
    fn name(&self) -> String {
        self.utility.as_str().to_string()
    }

    fn decide(&mut self, _ctx: &DecisionContext<'_>) -> usize {
        self.choice.unwrap_or(self.pair.safe)
    }

    fn on_window(&mut self, ctx: &WindowContext<'_>) -> Option<usize> {
        let per = ctx.windows_per_interval;
        if self.choice.is_some() || ctx.interval_index != Self::exploration_interval(per) {
            return None;
        }
        let half = (per / 2).max(1);
        if ctx.window_in_interval + 1 == half && half < per {
            self.safe_stats = Some(MiniWindowStats::from_ticks(ctx.interval_ticks));
            return Some(self.pair.probe);
        }
        if ctx.window_in_interval + 1 == per {
            let split = half * TICKS_PER_WINDOW;
            let probe = MiniWindowStats::from_ticks(
                &ctx.interval_ticks[split.min(ctx.interval_ticks.len())..],
            );
            let choice = match self.safe_stats {
                Some(safe) => self.pick(&safe, &probe),
                None => self.pair.safe,
            };
            self.choice = Some(choice);
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Jitter,
    Delta,
    AllRules,
}

impl RuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::Jitter => "jitter",
            RuleKind::Delta => "delta",
            RuleKind::AllRules => "all_rules",
        }
    }
}

/// Falls back to SafeFilter when the network looks unstable, otherwise runs
/// ProbeMax.
#[derive(Debug, Clone)]
pub struct RulePolicy {
    kind: RuleKind,
    /// ms
    jitter_threshold: f64,
    /// kbps
    sigma: f64,
    pair: HeuristicPair,
}

pub const JITTER_THRESHOLD_MS: f64 = 25.0;

impl RulePolicy {
    pub fn new(kind: RuleKind, sigma: f64, pair: HeuristicPair) -> Result<Self> {
        if kind != RuleKind::Jitter && !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "delta rule needs sigma > 0, got {sigma}"
            )));
        }
        Ok(Self {
            kind,
            jitter_threshold: JITTER_THRESHOLD_MS,
            sigma,
            pair,
        })
    }

    /// Population standard deviation of window owd over the last 6 s.
    pub fn jitter(windows: &[QosWindow]) -> f64 {
        let recent = &windows[windows.len().saturating_sub(10)..];
        if recent.len() < 2 {
            return 0.0;
        }
        let n = recent.len() as f64;
        let mean = recent.iter().map(|w| w.owd).sum::<f64>() / n;
        (recent.iter().map(|w| (w.owd - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    pub fn choose(&self, jitter: f64, safe_estimate: f64, probe_estimate: f64) -> usize {
        let jitter_fires = jitter > self.jitter_threshold;
        let delta_fires = (safe_estimate - probe_estimate).abs() > self.sigma;
        let unstable = match self.kind {
            RuleKind::Jitter => jitter_fires,
            RuleKind::Delta => delta_fires,
            RuleKind::AllRules => jitter_fires || delta_fires,
        };
        if unstable {
            self.pair.safe
        } else {
            self.pair.probe
        }
    }
}

impl Metapolicy for RulePolicy {
    fn name(&self) -> String {
        self.kind.as_str().to_string()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> usize {
        self.choose(
            Self::jitter(ctx.windows),
            ctx.estimates[self.pair.safe],
            ctx.estimates[self.pair.probe],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAIR: HeuristicPair = HeuristicPair { safe: 0, probe: 1 };

    #[test]
    fn random_policy_is_uniform_and_seeded() {
        let mut p = RandomPolicy::new(0);
        let mut counts = [0usize; 3];
        let draws: Vec<usize> = (0..10_000).map(|_| p.draw(3)).collect();
        for &d in &draws {
            counts[d] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 1.0 / 3.0).abs() < 0.03, "{counts:?}");
        }
        let mut q = RandomPolicy::new(0);
        let again: Vec<usize> = (0..10_000).map(|_| q.draw(3)).collect();
        assert_eq!(draws, again);
    }

    #[test]
    fn jitter_rule() {
        let p = RulePolicy::new(RuleKind::Jitter, 0.0, PAIR).unwrap();
        assert_eq!(p.choose(30.0, 0.0, 0.0), PAIR.safe);
        assert_eq!(p.choose(10.0, 0.0, 0.0), PAIR.probe);
    }

    #[test]
    fn delta_rule_and_or_semantics() {
        let p = RulePolicy::new(RuleKind::Delta, 100.0, PAIR).unwrap();
        assert_eq!(p.choose(0.0, 1000.0, 1000.0), PAIR.probe);
        assert_eq!(p.choose(0.0, 1000.0, 1300.0), PAIR.safe);
        let all = RulePolicy::new(RuleKind::AllRules, 100.0, PAIR).unwrap();
        assert_eq!(all.choose(10.0, 1000.0, 1300.0), PAIR.safe);
        assert_eq!(all.choose(30.0, 1000.0, 1000.0), PAIR.safe);
        assert_eq!(all.choose(10.0, 1000.0, 1000.0), PAIR.probe);
        assert!(RulePolicy::new(RuleKind::Delta, 0.0, PAIR).is_err());
    }

    #[test]
    fn jitter_statistic() {
        let ws: Vec<QosWindow> = [10.0, 70.0]
            .iter()
            .cycle()
            .take(12)
            .map(|&owd| QosWindow {
                owd,
                ..Default::default()
            })
            .collect();
        assert!((RulePolicy::jitter(&ws) - 30.0).abs() < 1e-12);
        assert_eq!(RulePolicy::jitter(&ws[..1]), 0.0);
    }

    #[test]
    fn explore_pick_and_ties() {
        let p = ExploreExploitPolicy::new(Utility::Throughput, VivaceParams::default(), PAIR);
        let lo = MiniWindowStats {
            rate: 1000.0,
            delay: 50.0,
            drtt_dt: 0.0,
            loss: 0.0,
        };
        let hi = MiniWindowStats { rate: 2000.0, ..lo };
        assert_eq!(p.pick(&lo, &hi), PAIR.probe);
        assert_eq!(p.pick(&lo, &lo), PAIR.safe);
        assert_eq!(p.pick(&hi, &lo), PAIR.safe);
    }

    #[test]
    fn exploration_interval_tracks_twelve_seconds() {
        assert_eq!(ExploreExploitPolicy::exploration_interval(10), 2);
        assert_eq!(ExploreExploitPolicy::exploration_interval(2), 10);
        assert_eq!(ExploreExploitPolicy::exploration_interval(5), 4);
        assert_eq!(ExploreExploitPolicy::exploration_interval(8), 3);
    }
}
