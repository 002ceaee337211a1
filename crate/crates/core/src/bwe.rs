//! Bandwidth estimators.
//!
//! Every estimator observes every 60 ms tick, whether or not it currently
//! drives the sender, and keeps its estimate in `[MIN_RATE, MAX_RATE]` kbps.
//! The three estimators are deliberately complementary:
//!
//! - [`SafeFilter`]: delay-gradient AIMD with a conservative ceiling. Keeps
//!   queues short on thin links, leaves capacity unused on fat ones.
//! - [`ProbeMax`]: multiplicative probing towards 1.25× the delivered rate,
//!   backing off only on sustained loss or long queues. Keeps a minimum
//!   operating rate, so it overloads thin links.
//! - [`LossTolerant`]: a ProbeMax variant that ignores loss not accompanied by
//!   queue growth, at the price of slower recovery after congestion.

use std::fmt::Debug;

use crate::error::{Error, Result};

pub const MIN_RATE: f64 = 10.0;
pub const MAX_RATE: f64 = 8000.0;
pub const INITIAL_ESTIMATE: f64 = 300.0;

pub const SAFE_FILTER: &str = "safe_filter";
pub const PROBE_MAX: &str = "probe_max";
pub const LOSS_TOLERANT: &str = "loss_tolerant";

pub const KNOWN_ESTIMATORS: [&str; 3] = [SAFE_FILTER, PROBE_MAX, LOSS_TOLERANT];

/// What an estimator sees of one tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EstimatorObs {
    /// kbps
    pub recv_rate: f64,
    /// ms
    pub owd: f64,
    pub lost_pkts: u32,
    pub video_pkts: u32,
    pub audio_pkts: u32,
}

impl EstimatorObs {
    pub fn loss_fraction(&self) -> f64 {
        let received = self.video_pkts + self.audio_pkts;
        let total = received + self.lost_pkts;
        if total == 0 {
            0.0
        } else {
            f64::from(self.lost_pkts) / f64::from(total)
        }
    }
}

pub fn clip_rate(rate: f64) -> f64 {
    if rate.is_nan() {
        MIN_RATE
    } else {
        rate.clamp(MIN_RATE, MAX_RATE)
    }
}

pub trait Estimator: Debug + Send {
    fn name(&self) -> &'static str;
    /// Current clipped estimate in kbps.
    fn estimate(&self) -> f64;
    /// Consumes one tick and returns the new clipped estimate.
    fn update(&mut self, obs: &EstimatorObs) -> f64;
    fn reset(&mut self);
    fn box_clone(&self) -> Box<dyn Estimator>;
}

impl Clone for Box<dyn Estimator> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Shared signal conditioning: delay baseline, smoothed receive rate and
/// smoothed loss.
#[derive(Debug, Clone, PartialEq)]
struct Signals {
    baseline: Option<f64>,
    recv: Option<f64>,
    loss: f64,
    last_qdelay: f64,
}

impl Signals {
    fn new() -> Self {
        Self {
            baseline: None,
            recv: None,
            loss: 0.0,
            last_qdelay: 0.0,
        }
    }

    /// Returns (queuing delay, delay change since last tick).
    fn observe(
        &mut self,
        obs: &EstimatorObs,
        recv_gain: f64,
        loss_gain: f64,
        drift: f64,
    ) -> (f64, f64) {
        let base = match self.baseline {
            Some(b) => obs.owd.min(b + drift),
            None => obs.owd,
        };
        self.baseline = Some(base);
        self.recv = Some(match self.recv {
            Some(r) => r + recv_gain * (obs.recv_rate - r),
            None => obs.recv_rate,
        });
        self.loss += loss_gain * (obs.loss_fraction() - self.loss);
        let qd = (obs.owd - base).max(0.0);
        let grad = qd - self.last_qdelay;
        self.last_qdelay = qd;
        (qd, grad)
    }

    fn recv(&self) -> f64 {
        self.recv.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeFilterParams {
    /// kbps added per tick while the path looks idle.
    pub additive_step: f64,
    pub backoff: f64,
    /// Queuing delay (ms) that triggers a multiplicative decrease.
    pub overuse_delay: f64,
    /// Queuing delay (ms) above which probing pauses.
    pub hold_delay: f64,
    /// Delay growth (ms per tick) above which probing pauses.
    pub hold_gradient: f64,
    pub loss_threshold: f64,
    pub hold_ticks: u32,
    /// Ceiling on the estimate; the estimator never probes beyond it.
    pub ceiling: f64,
    /// Estimate may not exceed `recv_headroom × smoothed receive rate + recv_slack`.
    pub recv_headroom: f64,
    pub recv_slack: f64,
}

impl Default for SafeFilterParams {
    fn default() -> Self {
        Self {
            additive_step: 20.0,
            backoff: 0.85,
            overuse_delay: 50.0,
            hold_delay: 20.0,
            hold_gradient: 2.0,
            loss_threshold: 0.10,
            hold_ticks: 8,
            ceiling: 1500.0,
            recv_headroom: 1.5,
            recv_slack: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeFilter {
    params: SafeFilterParams,
    signals: Signals,
    estimate: f64,
    hold: u32,
}

impl SafeFilter {
    pub fn new(params: SafeFilterParams) -> Self {
        Self {
            params,
            signals: Signals::new(),
            estimate: INITIAL_ESTIMATE,
            hold: 0,
        }
    }
}

impl Estimator for SafeFilter {
    fn name(&self) -> &'static str {
        SAFE_FILTER
    }

    fn estimate(&self) -> f64 {
        self.estimate
    }

    fn update(&mut self, obs: &EstimatorObs) -> f64 {
        let p = &self.params;
        let (qd, grad) = self.signals.observe(obs, 0.2, 0.3, 0.02);
        let mut est = self.estimate;
        if qd > p.overuse_delay && self.hold == 0 {
            est *= p.backoff;
            self.hold = p.hold_ticks;
        } else if self.signals.loss > p.loss_threshold && self.hold == 0 {
            est *= 1.0 - 0.5 * self.signals.loss;
            self.hold = p.hold_ticks;
        } else if self.hold > 0 {
            self.hold -= 1;
        } else if qd <= p.hold_delay && grad <= p.hold_gradient {
            est += p.additive_step;
        }
        est = est
            .min(p.recv_headroom * self.signals.recv() + p.recv_slack)
            .min(p.ceiling);
        self.estimate = clip_rate(est);
        self.estimate
    }

    fn reset(&mut self) {
        *self = SafeFilter::new(self.params.clone());
    }

    fn box_clone(&self) -> Box<dyn Estimator> {
        Box::new(self.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    /// Multiplicative increase per tick.
    pub gain: f64,
    /// Estimate may not exceed `recv_headroom × smoothed receive rate`.
    pub recv_headroom: f64,
    pub recv_gain: f64,
    pub loss_threshold: f64,
    /// Queuing delay (ms) treated as congestion.
    pub overuse_delay: f64,
    /// After congestion the estimate drops to `backoff × smoothed receive rate`.
    pub backoff: f64,
    pub hold_ticks: u32,
    /// Lowest rate the estimator backs off to.
    pub floor: f64,
    /// LossTolerant only: loss counts as congestion only above this queuing
    /// delay (ms).
    pub loss_delay_gate: f64,
}

impl ProbeParams {
    pub fn probe_max() -> Self {
        Self {
            gain: 1.08,
            recv_headroom: 1.25,
            recv_gain: 0.3,
            loss_threshold: 0.02,
            overuse_delay: 150.0,
            backoff: 0.7,
            hold_ticks: 10,
            floor: 400.0,
            loss_delay_gate: 0.0,
        }
    }

    pub fn loss_tolerant() -> Self {
        Self {
            gain: 1.08,
            recv_headroom: 1.25,
            recv_gain: 0.3,
            loss_threshold: 0.02,
            overuse_delay: 150.0,
            backoff: 0.7,
            hold_ticks: 14,
            floor: 400.0,
            loss_delay_gate: 30.0,
        }
    }
}

/// Shared machinery of the two probing estimators.
#[derive(Debug, Clone, PartialEq)]
struct Prober {
    params: ProbeParams,
    signals: Signals,
    estimate: f64,
    hold: u32,
}

impl Prober {
    fn new(params: ProbeParams) -> Self {
        Self {
            params,
            signals: Signals::new(),
            estimate: INITIAL_ESTIMATE,
            hold: 0,
        }
    }

    fn update(&mut self, obs: &EstimatorObs, loss_tolerant: bool) -> f64 {
        let p = &self.params;
        let (qd, _) = self.signals.observe(obs, p.recv_gain, 0.3, 0.02);
        let lossy =
            self.signals.loss > p.loss_threshold && (!loss_tolerant || qd > p.loss_delay_gate);
        let mut est = self.estimate;
        if (lossy || qd > p.overuse_delay) && self.hold == 0 {
            est = (p.backoff * self.signals.recv()).min(est).max(p.floor);
            self.hold = p.hold_ticks;
        } else if self.hold > 0 {
            self.hold -= 1;
        } else if (obs.lost_pkts == 0 || loss_tolerant && !lossy) && qd < p.overuse_delay {
            est = (p.gain * est)
                .min(p.recv_headroom * self.signals.recv())
                .max(p.floor.min(p.gain * est));
        }
        self.estimate = clip_rate(est);
        self.estimate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeMax(Prober);

impl ProbeMax {
    pub fn new(params: ProbeParams) -> Self {
        Self(Prober::new(params))
    }
}

impl Estimator for ProbeMax {
    fn name(&self) -> &'static str {
        PROBE_MAX
    }

    fn estimate(&self) -> f64 {
        self.0.estimate
    }

    fn update(&mut self, obs: &EstimatorObs) -> f64 {
        self.0.update(obs, false)
    }

    fn reset(&mut self) {
        self.0 = Prober::new(self.0.params.clone());
    }

    fn box_clone(&self) -> Box<dyn Estimator> {
        Box::new(self.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTolerant(Prober);

impl LossTolerant {
    pub fn new(params: ProbeParams) -> Self {
        Self(Prober::new(params))
    }
}

impl Estimator for LossTolerant {
    fn name(&self) -> &'static str {
        LOSS_TOLERANT
    }

    fn estimate(&self) -> f64 {
        self.0.estimate
    }

    fn update(&mut self, obs: &EstimatorObs) -> f64 {
        self.0.update(obs, true)
    }

    fn reset(&mut self) {
        self.0 = Prober::new(self.0.params.clone());
    }

    fn box_clone(&self) -> Box<dyn Estimator> {
        Box::new(self.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BweParams {
    pub safe_filter: SafeFilterParams,
    pub probe_max: ProbeParams,
    pub loss_tolerant: ProbeParams,
}

impl Default for BweParams {
    fn default() -> Self {
        Self {
            safe_filter: SafeFilterParams::default(),
            probe_max: ProbeParams::probe_max(),
            loss_tolerant: ProbeParams::loss_tolerant(),
        }
    }
}

pub fn make_estimator(name: &str, params: &BweParams) -> Result<Box<dyn Estimator>> {
    Ok(match name {
        SAFE_FILTER => Box::new(SafeFilter::new(params.safe_filter.clone())),
        PROBE_MAX => Box::new(ProbeMax::new(params.probe_max.clone())),
        LOSS_TOLERANT => Box::new(LossTolerant::new(params.loss_tolerant.clone())),
        other => {
            return Err(Error::Config(format!(
                "unknown estimator `{other}` (known: {})",
                KNOWN_ESTIMATORS.join(", ")
            )))
        }
    })
}

pub fn make_pool<S: AsRef<str>>(
    names: &[S],
    params: &BweParams,
) -> Result<Vec<Box<dyn Estimator>>> {
    if names.is_empty() {
        return Err(Error::Config("estimator pool is empty".into()));
    }
    names
        .iter()
        .map(|n| make_estimator(n.as_ref(), params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(recv_rate: f64, owd: f64, lost_pkts: u32) -> EstimatorObs {
        EstimatorObs {
            recv_rate,
            owd,
            lost_pkts,
            video_pkts: 10,
            audio_pkts: 3,
        }
    }

    fn pool() -> Vec<Box<dyn Estimator>> {
        make_pool(&KNOWN_ESTIMATORS, &BweParams::default()).unwrap()
    }

    #[test]
    fn safe_filter_backs_off_on_queuing_delay() {
        let mut sf = SafeFilter::new(SafeFilterParams::default());
        // First tick sets the 40 ms baseline and probes additively.
        let before = sf.update(&obs(2000.0, 40.0, 0));
        assert_eq!(before, INITIAL_ESTIMATE + 20.0);
        // 100 ms against a ~40 ms baseline: about 60 ms of queue.
        let after = sf.update(&obs(2000.0, 100.0, 0));
        assert!(
            (after - 0.85 * before).abs() < 1e-9,
            "{after} vs {}",
            0.85 * before
        );
    }

    #[test]
    fn probe_max_multiplicative_probe_rule() {
        let mut pm = ProbeMax::new(ProbeParams::probe_max());
        let o = obs(2000.0, 40.0, 0);
        let mut est = pm.estimate();
        for _ in 0..40 {
            // Receive rate is constant, so its smoothed value is exactly 2000.
            let expected = (1.08 * est).min(1.25 * 2000.0).min(MAX_RATE);
            est = pm.update(&o);
            assert!((est - expected).abs() < 1e-9, "{est} vs {expected}");
        }
        assert!((est - 2500.0).abs() < 1e-9);
    }

    #[test]
    fn probe_max_backs_off_on_loss_but_loss_tolerant_does_not() {
        let mut pm = ProbeMax::new(ProbeParams::probe_max());
        let mut lt = LossTolerant::new(ProbeParams::loss_tolerant());
        for _ in 0..30 {
            pm.update(&obs(3000.0, 40.0, 0));
            lt.update(&obs(3000.0, 40.0, 0));
        }
        let (p0, l0) = (pm.estimate(), lt.estimate());
        // Heavy random loss with no queue growth.
        for _ in 0..3 {
            pm.update(&obs(3000.0, 40.0, 4));
            lt.update(&obs(3000.0, 40.0, 4));
        }
        assert!(pm.estimate() < p0);
        assert!(lt.estimate() >= l0);
    }

    #[test]
    fn reset_restores_initial_state() {
        for mut e in pool() {
            let fresh = e.box_clone();
            for k in 0..50 {
                e.update(&obs(
                    1000.0 + 10.0 * f64::from(k),
                    40.0 + f64::from(k % 7) * 20.0,
                    k % 3,
                ));
            }
            e.reset();
            assert_eq!(e.estimate(), INITIAL_ESTIMATE);
            let once = format!("{e:?}");
            e.reset();
            assert_eq!(format!("{e:?}"), once);
            assert_eq!(once, format!("{fresh:?}"));
            assert!((MIN_RATE..=MAX_RATE).contains(&e.estimate()));
        }
    }

    #[test]
    fn unknown_estimator_and_empty_pool_rejected() {
        assert!(matches!(
            make_estimator("gcc", &BweParams::default()),
            Err(Error::Config(_))
        ));
        assert!(make_pool::<&str>(&[], &BweParams::default()).is_err());
    }

    #[test]
    fn clip_rate_bounds() {
        assert_eq!(clip_rate(1.0), MIN_RATE);
        assert_eq!(clip_rate(1e9), MAX_RATE);
        assert_eq!(clip_rate(f64::NAN), MIN_RATE);
        assert_eq!(clip_rate(500.0), 500.0);
    }

    fn arb_obs() -> impl Strategy<Value = EstimatorObs> {
        (
            0.0..20_000.0f64,
            0.0..2_000.0f64,
            0u32..50,
            0u32..50,
            0u32..10,
        )
            .prop_map(
                |(recv_rate, owd, lost_pkts, video_pkts, audio_pkts)| EstimatorObs {
                    recv_rate,
                    owd,
                    lost_pkts,
                    video_pkts,
                    audio_pkts,
                },
            )
    }

    proptest! {
        #[test]
        fn estimates_stay_clipped_and_updates_are_deterministic(seq in prop::collection::vec(arb_obs(), 1..200)) {
            let mut a = pool();
            let mut b = pool();
            for o in &seq {
                for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                    let ex = x.update(o);
                    prop_assert!((MIN_RATE..=MAX_RATE).contains(&ex));
                    prop_assert_eq!(ex, y.update(o));
                }
            }
        }
    }
}
