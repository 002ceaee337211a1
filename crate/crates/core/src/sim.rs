//! Tick-level simulation of one media call over a trace.
//!
//! The bottleneck is a fluid FIFO queue served at the segment capacity and
//! capped at `queue_cap` seconds of capacity; overflow is congestive loss.
//! Packets are book-kept as integer counts next to the fluid bit totals.
//! Every 10 ticks (600 ms) the ticks are aggregated into a [`QosWindow`] and
//! scored by the QoE proxy; the metapolicy is consulted every decision
//! interval and may switch estimators at window boundaries.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::bwe::{clip_rate, Estimator, EstimatorObs, PROBE_MAX, SAFE_FILTER};
use crate::error::{Error, Result};
use crate::meta::policy::{DecisionContext, Metapolicy, WindowContext};
use crate::meta::state::{build_state, MetaState};
use crate::qoe::{audio_mos, interval_reward, video_mos, MosScore, QoeParams};
use crate::rng::{rng_from, SimRng};
use crate::trace::{Trace, TraceSegment};

/// Seconds per tick.
pub const TICK: f64 = 0.06;
pub const TICKS_PER_WINDOW: usize = 10;
/// Seconds per QoS window.
pub const WINDOW: f64 = 0.6;
/// Interarrival reported for a window without received packets (ms).
pub const INTERARRIVAL_CEILING: f64 = 600.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Seconds.
    pub call_duration: f64,
    /// Seconds; must be a multiple of [`WINDOW`].
    pub decision_interval: f64,
    /// Hold video back for the first 12 s of the call.
    pub delay_video: bool,
    /// Queue capacity in seconds of link capacity.
    pub queue_cap: f64,
    /// kbps
    pub audio_rate: f64,
    pub audio_pkts_per_sec: f64,
    pub video_pkt_bytes: f64,
    pub qoe: QoeParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            call_duration: 120.0,
            decision_interval: 6.0,
            delay_video: false,
            queue_cap: 0.4,
            audio_rate: 40.0,
            audio_pkts_per_sec: 50.0,
            video_pkt_bytes: 1000.0,
            qoe: QoeParams::default(),
        }
    }
}

/// Number of whole windows in `seconds`, or an error if it is not a multiple.
pub fn windows_in(seconds: f64) -> Result<usize> {
    let n = (seconds / WINDOW).round();
    if !(seconds.is_finite() && seconds > 0.0) || n < 1.0 || (n * WINDOW - seconds).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "decision interval {seconds} s is not a positive multiple of {WINDOW} s"
        )));
    }
    Ok(n as usize)
}

impl SimConfig {
    pub fn windows_per_interval(&self) -> Result<usize> {
        windows_in(self.decision_interval)
    }

    pub fn intervals(&self) -> Result<usize> {
        let per = self.windows_per_interval()?;
        Ok((self.call_duration / WINDOW + 1e-9) as usize / per)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.call_duration.is_finite() && self.call_duration > 0.0) {
            return Err(Error::Config(format!(
                "call_duration must be positive, got {}",
                self.call_duration
            )));
        }
        if self.intervals()? == 0 {
            return Err(Error::Config(
                "call_duration shorter than one decision interval".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TickStats {
    /// Tick start time, seconds.
    pub t: f64,
    /// kbps
    pub send_rate: f64,
    /// kbps
    pub recv_rate: f64,
    /// ms
    pub owd: f64,
    pub lost_pkts: u32,
    pub video_pkts: u32,
    pub audio_pkts: u32,
    /// Queue occupancy after the tick, kilobits.
    pub queue_bits: f64,
    /// Base delay of the active segment, ms.
    pub base_owd: f64,
    pub sent_kbit: f64,
    pub random_lost_kbit: f64,
    pub dropped_kbit: f64,
    pub video_recv_kbit: f64,
    pub audio_recv_kbit: f64,
}

impl TickStats {
    pub fn obs(&self) -> EstimatorObs {
        EstimatorObs {
            recv_rate: self.recv_rate,
            owd: self.owd,
            lost_pkts: self.lost_pkts,
            video_pkts: self.video_pkts,
            audio_pkts: self.audio_pkts,
        }
    }

    pub fn queuing_delay(&self) -> f64 {
        self.owd - self.base_owd
    }
}

/// Mutable state of the bottleneck and the packetiser.
#[derive(Debug, Clone, Default)]
pub struct LinkState {
    /// Kilobits queued at the bottleneck.
    pub queue: f64,
    pub video_enabled: bool,
    sent_audio_carry: f64,
    sent_video_carry: f64,
    recv_audio_carry: f64,
    recv_video_carry: f64,
    drop_carry: f64,
}

impl LinkState {
    pub fn new() -> Self {
        Self {
            video_enabled: true,
            ..Default::default()
        }
    }
}

fn take_whole(carry: &mut f64, add: f64) -> u32 {
    *carry += add;
    let n = carry.floor().max(0.0);
    *carry -= n;
    n as u32
}

/// Advances the link by one tick at `send_rate` kbps.
pub fn step_tick(
    link: &mut LinkState,
    seg: &TraceSegment,
    send_rate: f64,
    t: f64,
    config: &SimConfig,
    rng: &mut SimRng,
) -> TickStats {
    let send_rate = send_rate.max(0.0);
    let audio_rate = config.audio_rate.min(send_rate);
    let video_rate = if link.video_enabled {
        send_rate - audio_rate
    } else {
        0.0
    };
    let offered = audio_rate + video_rate;
    let sent = offered * TICK;

    // Packetisation of what leaves the sender this tick.
    let audio_pkt_kbit = config.audio_rate / config.audio_pkts_per_sec;
    let video_pkt_kbit = config.video_pkt_bytes * 8.0 / 1000.0;
    let audio_sent = take_whole(
        &mut link.sent_audio_carry,
        audio_rate * TICK / audio_pkt_kbit,
    );
    let video_sent = take_whole(
        &mut link.sent_video_carry,
        video_rate * TICK / video_pkt_kbit,
    );
    let random_lost_pkts = if seg.random_loss > 0.0 && audio_sent + video_sent > 0 {
        Binomial::new(u64::from(audio_sent + video_sent), seg.random_loss)
            .map(|b| b.sample(rng) as u32)
            .unwrap_or(0)
    } else {
        0
    };

    let random_lost = sent * seg.random_loss;
    let arrived = sent - random_lost;
    let service = seg.capacity * TICK;
    let backlog = link.queue + arrived;
    let delivered = backlog.min(service);
    let mut queue = backlog - delivered;
    let cap = seg.capacity * config.queue_cap;
    let dropped = if queue > cap {
        let d = queue - cap;
        queue = cap;
        d
    } else {
        0.0
    };
    link.queue = queue;

    let audio_share = if offered > 0.0 {
        audio_rate / offered
    } else {
        0.0
    };
    let audio_recv = delivered * audio_share;
    let video_recv = delivered - audio_recv;
    let audio_pkts = take_whole(&mut link.recv_audio_carry, audio_recv / audio_pkt_kbit);
    let video_pkts = take_whole(&mut link.recv_video_carry, video_recv / video_pkt_kbit);
    let mean_pkt = if offered > 0.0 {
        audio_share * audio_pkt_kbit + (1.0 - audio_share) * video_pkt_kbit
    } else {
        video_pkt_kbit
    };
    let dropped_pkts = take_whole(&mut link.drop_carry, dropped / mean_pkt);

    TickStats {
        t,
        send_rate: offered,
        recv_rate: delivered / TICK,
        owd: seg.base_owd + queue / seg.capacity * 1000.0,
        lost_pkts: random_lost_pkts + dropped_pkts,
        video_pkts,
        audio_pkts,
        queue_bits: queue,
        base_owd: seg.base_owd,
        sent_kbit: sent,
        random_lost_kbit: random_lost,
        dropped_kbit: dropped,
        video_recv_kbit: video_recv,
        audio_recv_kbit: audio_recv,
    }
}

/// Six per-window QoS aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QosWindow {
    /// Mean receive rate, kbps.
    pub recv_rate: f64,
    /// Lost packets in the window.
    pub lost_pkts: f64,
    /// Mean one-way delay, ms.
    pub owd: f64,
    /// Mean gap between received packets, ms.
    pub interarrival: f64,
    pub video_prop: f64,
    pub audio_prop: f64,
}

pub fn aggregate_window(ticks: &[TickStats]) -> Result<QosWindow> {
    if ticks.len() != TICKS_PER_WINDOW {
        return Err(Error::InvalidInput(format!(
            "a window needs {TICKS_PER_WINDOW} ticks, got {}",
            ticks.len()
        )));
    }
    let n = ticks.len() as f64;
    let video: u64 = ticks.iter().map(|t| u64::from(t.video_pkts)).sum();
    let audio: u64 = ticks.iter().map(|t| u64::from(t.audio_pkts)).sum();
    let total = video + audio;
    let (video_prop, audio_prop, interarrival) = if total == 0 {
        (0.0, 0.0, INTERARRIVAL_CEILING)
    } else {
        (
            video as f64 / total as f64,
            audio as f64 / total as f64,
            WINDOW * 1000.0 / total as f64,
        )
    };
    Ok(QosWindow {
        recv_rate: ticks.iter().map(|t| t.recv_rate).sum::<f64>() / n,
        lost_pkts: ticks.iter().map(|t| f64::from(t.lost_pkts)).sum(),
        owd: ticks.iter().map(|t| t.owd).sum::<f64>() / n,
        interarrival,
        video_prop,
        audio_prop,
    })
}

/// QoE proxy scores for one window of ticks.
pub fn window_mos(ticks: &[TickStats], qoe: &QoeParams) -> MosScore {
    let span = ticks.len() as f64 * TICK;
    let sent: f64 = ticks.iter().map(|t| t.sent_kbit).sum();
    let lost: f64 = ticks
        .iter()
        .map(|t| t.random_lost_kbit + t.dropped_kbit)
        .sum();
    let loss = if sent > 0.0 {
        (lost / sent).min(1.0)
    } else {
        0.0
    };
    let qdelay = ticks.iter().map(TickStats::queuing_delay).sum::<f64>() / ticks.len() as f64;
    let video = ticks.iter().map(|t| t.video_recv_kbit).sum::<f64>() / span;
    let audio = ticks.iter().map(|t| t.audio_recv_kbit).sum::<f64>() / span;
    MosScore {
        video_mos: video_mos(video, qdelay, loss, qoe),
        audio_mos: audio_mos(audio, qdelay, loss, qoe),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRecord {
    pub state: MetaState,
    pub action: usize,
    /// Mean window video MOS over the interval; the RL reward.
    pub video_mos: f64,
    pub audio_mos: f64,
    /// Every estimator's estimate at decision time, pool order.
    pub estimates: Vec<f64>,
}

/// Bit accounting over a whole call, kilobits.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Conservation {
    pub sent: f64,
    pub received: f64,
    pub random_lost: f64,
    pub dropped: f64,
    pub final_queue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallLog {
    pub trace_id: String,
    pub policy_name: String,
    pub seed: u64,
    pub pool: Vec<String>,
    pub records: Vec<IntervalRecord>,
    /// State observed after the final interval.
    pub final_state: MetaState,
    /// Per tick, every estimator's estimate after the update, pool order.
    pub estimates: Vec<Vec<f64>>,
    /// Estimator that drove the sender on each tick.
    pub active: Vec<usize>,
    pub windows: Vec<QosWindow>,
    pub window_mos: Vec<MosScore>,
    pub totals: Conservation,
}

impl CallLog {
    pub fn mean_video_mos(&self) -> f64 {
        self.window_mos.iter().map(|m| m.video_mos).sum::<f64>() / self.window_mos.len() as f64
    }

    pub fn mean_audio_mos(&self) -> f64 {
        self.window_mos.iter().map(|m| m.audio_mos).sum::<f64>() / self.window_mos.len() as f64
    }

    pub fn actions(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.action).collect()
    }

    /// |SafeFilter − ProbeMax| at each decision, when both are in the pool.
    pub fn estimate_gaps(&self) -> Option<Vec<f64>> {
        let sf = self.pool.iter().position(|n| n == SAFE_FILTER)?;
        let pm = self.pool.iter().position(|n| n == PROBE_MAX)?;
        Some(
            self.records
                .iter()
                .map(|r| (r.estimates[sf] - r.estimates[pm]).abs())
                .collect(),
        )
    }
}

/// State handed to the metapolicy: only the windows of the most recent
/// interval (at most 10) are visible.
fn state_now(
    windows: &[QosWindow],
    actions: &[usize],
    per_interval: usize,
    pool: usize,
) -> MetaState {
    let visible = per_interval.min(10).min(windows.len());
    build_state(&windows[windows.len() - visible..], actions, pool)
}

pub fn run_call(
    trace: &Trace,
    policy: &mut dyn Metapolicy,
    pool: &mut [Box<dyn Estimator>],
    config: &SimConfig,
    seed: u64,
) -> Result<CallLog> {
    if pool.is_empty() {
        return Err(Error::Config("estimator pool is empty".into()));
    }
    config.validate()?;
    if trace.duration() + 1e-9 < config.call_duration {
        return Err(Error::InvalidInput(format!(
            "trace `{}` lasts {} s, shorter than the {} s call",
            trace.id,
            trace.duration(),
            config.call_duration
        )));
    }
    let per_interval = config.windows_per_interval()?;
    let intervals = config.intervals()?;
    let pool_size = pool.len();
    let names: Vec<String> = pool.iter().map(|e| e.name().to_string()).collect();
    for est in pool.iter_mut() {
        est.reset();
    }

    let mut rng: SimRng = rng_from(seed);
    let mut link = LinkState::new();
    let mut cursor = trace.cursor();
    let ticks_per_interval = per_interval * TICKS_PER_WINDOW;
    let total_ticks = intervals * ticks_per_interval;
    let video_start_tick = if config.delay_video {
        (12.0 / TICK).round() as usize
    } else {
        0
    };

    let mut windows: Vec<QosWindow> = Vec::with_capacity(intervals * per_interval);
    let mut window_mos: Vec<MosScore> = Vec::with_capacity(windows.capacity());
    let mut actions: Vec<usize> = Vec::with_capacity(intervals);
    let mut records: Vec<IntervalRecord> = Vec::with_capacity(intervals);
    let mut estimates_log = Vec::with_capacity(total_ticks);
    let mut active_log = Vec::with_capacity(total_ticks);
    let mut interval_ticks: Vec<TickStats> = Vec::with_capacity(ticks_per_interval);
    let mut totals = Conservation::default();
    let mut active = 0usize;
    let mut current: Vec<f64> = pool.iter().map(|e| e.estimate()).collect();

    for k in 0..total_ticks {
        let interval = k / ticks_per_interval;
        if k % ticks_per_interval == 0 {
            let state = state_now(&windows, &actions, per_interval, pool_size);
            let ctx = DecisionContext {
                interval_index: interval,
                state: &state,
                windows: &windows,
                actions: &actions,
                estimates: &current,
                pool: &names,
                windows_per_interval: per_interval,
            };
            let a = policy.decide(&ctx);
            if a >= pool_size {
                return Err(Error::InvalidInput(format!(
                    "policy `{}` chose estimator {a} from a pool of {pool_size}",
                    policy.name()
                )));
            }
            active = a;
            actions.push(a);
            records.push(IntervalRecord {
                state,
                action: a,
                video_mos: 0.0,
                audio_mos: 0.0,
                estimates: current.clone(),
            });
            interval_ticks.clear();
        }

        link.video_enabled = k >= video_start_tick;
        let t = k as f64 * TICK;
        let seg = cursor.at(t);
        let rate = clip_rate(pool[active].estimate());
        let tick = step_tick(&mut link, seg, rate, t, config, &mut rng);
        totals.sent += tick.sent_kbit;
        totals.received += tick.recv_rate * TICK;
        totals.random_lost += tick.random_lost_kbit;
        totals.dropped += tick.dropped_kbit;

        let obs = tick.obs();
        for (slot, est) in current.iter_mut().zip(pool.iter_mut()) {
            *slot = est.update(&obs);
        }
        estimates_log.push(current.clone());
        active_log.push(active);
        interval_ticks.push(tick);

        if interval_ticks.len().is_multiple_of(TICKS_PER_WINDOW) {
            let w_ticks = &interval_ticks[interval_ticks.len() - TICKS_PER_WINDOW..];
            windows.push(aggregate_window(w_ticks)?);
            window_mos.push(window_mos_checked(w_ticks, &config.qoe)?);
            let ctx = WindowContext {
                interval_index: interval,
                window_in_interval: interval_ticks.len() / TICKS_PER_WINDOW - 1,
                windows_per_interval: per_interval,
                interval_ticks: &interval_ticks,
                windows: &windows,
                active,
                estimates: &current,
                pool: &names,
            };
            if let Some(next) = policy.on_window(&ctx) {
                if next >= pool_size {
                    return Err(Error::InvalidInput(format!(
                        "policy `{}` switched to estimator {next} from a pool of {pool_size}",
                        policy.name()
                    )));
                }
                active = next;
            }
        }

        if interval_ticks.len() == ticks_per_interval {
            let scores = &window_mos[window_mos.len() - per_interval..];
            let video: Vec<f64> = scores.iter().map(|m| m.video_mos).collect();
            let rec = records.last_mut().expect("record pushed at interval start");
            rec.video_mos = interval_reward(&video);
            rec.audio_mos = scores.iter().map(|m| m.audio_mos).sum::<f64>() / per_interval as f64;
        }
    }
    totals.final_queue = link.queue;

    Ok(CallLog {
        trace_id: trace.id.clone(),
        policy_name: policy.name(),
        seed,
        pool: names,
        records,
        final_state: state_now(&windows, &actions, per_interval, pool_size),
        estimates: estimates_log,
        active: active_log,
        windows,
        window_mos,
        totals,
    })
}

fn window_mos_checked(ticks: &[TickStats], qoe: &QoeParams) -> Result<MosScore> {
    let m = window_mos(ticks, qoe);
    if m.video_mos.is_finite() && m.audio_mos.is_finite() {
        Ok(m)
    } else {
        Err(Error::Numerical("non-finite MOS in window".into()))
    }
}

/// Draws a uniform index; shared by the random policies.
pub(crate) fn uniform_index(rng: &mut SimRng, n: usize) -> usize {
    rng.random_range(0..n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bwe::{make_pool, BweParams, KNOWN_ESTIMATORS};
    use crate::meta::policy::{FixedPolicy, RandomPolicy};
    use crate::trace::{generate_trace, Regime};

    fn seg(capacity: f64, loss: f64) -> TraceSegment {
        TraceSegment {
            duration: 100.0,
            capacity,
            base_owd: 40.0,
            random_loss: loss,
        }
    }

    #[test]
    fn overload_builds_queue_and_delay() {
        let mut link = LinkState::new();
        let mut rng = rng_from(0);
        let t = step_tick(
            &mut link,
            &seg(1000.0, 0.0),
            2000.0,
            0.0,
            &SimConfig::default(),
            &mut rng,
        );
        // (2000 - 1000) * 0.06 = 60 kbit queued; 60 kbit / 1000 kbps = 60 ms.
        assert!((t.queue_bits - 60.0).abs() < 1e-9);
        assert!((t.owd - 100.0).abs() < 1e-9);
        assert!((t.recv_rate - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn underload_passes_through() {
        let mut link = LinkState::new();
        let mut rng = rng_from(0);
        let t = step_tick(
            &mut link,
            &seg(1000.0, 0.0),
            600.0,
            0.0,
            &SimConfig::default(),
            &mut rng,
        );
        assert!((t.recv_rate - 600.0).abs() < 1e-9);
        assert_eq!(t.owd, 40.0);
        assert_eq!(t.lost_pkts, 0);
        assert_eq!(t.queue_bits, 0.0);
    }

    #[test]
    fn total_random_loss_delivers_nothing_new() {
        let mut link = LinkState::new();
        let mut rng = rng_from(0);
        let s = TraceSegment {
            random_loss: 1.0,
            ..seg(1000.0, 0.0)
        };
        let t = step_tick(&mut link, &s, 800.0, 0.0, &SimConfig::default(), &mut rng);
        assert_eq!(t.recv_rate, 0.0);
        assert!(t.lost_pkts > 0);
    }

    #[test]
    fn queue_overflow_is_dropped() {
        let mut link = LinkState::new();
        let mut rng = rng_from(0);
        let cfg = SimConfig::default();
        let s = seg(500.0, 0.0);
        let mut dropped = 0.0;
        for k in 0..100 {
            let t = step_tick(&mut link, &s, 4000.0, k as f64 * TICK, &cfg, &mut rng);
            assert!(t.queue_bits <= 500.0 * 0.4 + 1e-9);
            dropped += t.dropped_kbit;
        }
        assert!(dropped > 0.0);
        assert!((link.queue - 200.0).abs() < 1e-9);
    }

    fn tick(video: u32, audio: u32) -> TickStats {
        TickStats {
            recv_rate: 500.0,
            owd: 70.0,
            lost_pkts: 2,
            video_pkts: video,
            audio_pkts: audio,
            ..Default::default()
        }
    }

    #[test]
    fn window_of_identical_ticks() {
        let w = aggregate_window(&[tick(4, 3); 10]).unwrap();
        assert_eq!(w.recv_rate, 500.0);
        assert_eq!(w.owd, 70.0);
        assert_eq!(w.lost_pkts, 20.0);
        assert!((w.video_prop - 4.0 / 7.0).abs() < 1e-12);
        assert!((w.video_prop + w.audio_prop - 1.0).abs() < 1e-12);
        assert!((w.interarrival - 600.0 / 70.0).abs() < 1e-12);
    }

    #[test]
    fn window_interarrival_and_empty_window() {
        let w = aggregate_window(&[tick(27, 3); 10]).unwrap();
        assert!((w.interarrival - 2.0).abs() < 1e-12);
        let w = aggregate_window(&[tick(0, 0); 10]).unwrap();
        assert_eq!((w.video_prop, w.audio_prop), (0.0, 0.0));
        assert_eq!(w.interarrival, 600.0);
        assert!(aggregate_window(&[tick(1, 1); 9]).is_err());
    }

    fn pool() -> Vec<Box<dyn Estimator>> {
        make_pool(&KNOWN_ESTIMATORS, &BweParams::default()).unwrap()
    }

    #[test]
    fn fixed_policy_call_shape() {
        let trace = generate_trace(Regime::FluctHbw, 2, 120.0).unwrap();
        let log = run_call(
            &trace,
            &mut FixedPolicy::new(1),
            &mut pool(),
            &SimConfig::default(),
            5,
        )
        .unwrap();
        assert_eq!(log.records.len(), 20);
        assert!(log.records.iter().all(|r| r.action == 1));
        assert_eq!(log.windows.len(), 200);
        assert_eq!(log.estimates.len(), 2000);
        for r in &log.records {
            assert!((1.0..=5.0).contains(&r.video_mos));
            assert!((1.0..=5.0).contains(&r.audio_mos));
        }
    }

    #[test]
    fn call_is_deterministic() {
        let trace = generate_trace(Regime::BurstLbw, 4, 120.0).unwrap();
        let cfg = SimConfig::default();
        let a = run_call(&trace, &mut RandomPolicy::new(9), &mut pool(), &cfg, 77).unwrap();
        let b = run_call(&trace, &mut RandomPolicy::new(9), &mut pool(), &cfg, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conservation_and_delay_floor() {
        for regime in Regime::ALL {
            let trace = generate_trace(regime, 13, 120.0).unwrap();
            let log = run_call(
                &trace,
                &mut RandomPolicy::new(1),
                &mut pool(),
                &SimConfig::default(),
                3,
            )
            .unwrap();
            let c = log.totals;
            assert!(c.received <= c.sent + 1e-6);
            let residual = c.sent - (c.received + c.random_lost + c.dropped + c.final_queue);
            assert!(residual.abs() < 1e-3, "{regime}: residual {residual} kbit");
        }
    }

    #[test]
    fn owd_equals_base_only_when_queue_empty() {
        let mut link = LinkState::new();
        let mut rng = rng_from(1);
        let cfg = SimConfig::default();
        let s = seg(800.0, 0.02);
        for k in 0..400 {
            let rate = if (k / 40) % 2 == 0 { 1200.0 } else { 300.0 };
            let t = step_tick(&mut link, &s, rate, k as f64 * TICK, &cfg, &mut rng);
            if t.queue_bits == 0.0 {
                assert_eq!(t.owd, s.base_owd);
            } else {
                assert!(t.owd > s.base_owd);
            }
        }
    }

    #[test]
    fn shadow_estimators_ignore_who_is_active() {
        // Replaying one tick stream into fresh estimators reproduces the
        // shadow trajectories recorded during the call.
        let trace = generate_trace(Regime::Lte, 8, 120.0).unwrap();
        let cfg = SimConfig::default();
        let mut p = pool();
        let mut rng = rng_from(21);
        let mut link = LinkState::new();
        let mut cursor = trace.cursor();
        let mut replay = pool();
        for k in 0..2000 {
            let active = (k / 100) % 3;
            let t = k as f64 * TICK;
            let tick = step_tick(
                &mut link,
                cursor.at(t),
                clip_rate(p[active].estimate()),
                t,
                &cfg,
                &mut rng,
            );
            for (a, b) in p.iter_mut().zip(replay.iter_mut()) {
                assert_eq!(a.update(&tick.obs()), b.update(&tick.obs()));
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let trace = generate_trace(Regime::StableLbw, 1, 120.0).unwrap();
        let mut empty: Vec<Box<dyn Estimator>> = Vec::new();
        assert!(matches!(
            run_call(
                &trace,
                &mut FixedPolicy::new(0),
                &mut empty,
                &SimConfig::default(),
                0
            ),
            Err(Error::Config(_))
        ));
        let cfg = SimConfig {
            decision_interval: 5.0,
            ..Default::default()
        };
        assert!(run_call(&trace, &mut FixedPolicy::new(0), &mut pool(), &cfg, 0).is_err());
        let short = generate_trace(Regime::StableLbw, 1, 60.0).unwrap();
        assert!(run_call(
            &short,
            &mut FixedPolicy::new(0),
            &mut pool(),
            &SimConfig::default(),
            0
        )
        .is_err());
    }

    #[test]
    fn interval_counts_follow_decision_interval() {
        for (interval, windows, count) in [(6.0, 10, 20), (4.8, 8, 25), (3.0, 5, 40), (1.2, 2, 100)]
        {
            let cfg = SimConfig {
                decision_interval: interval,
                ..Default::default()
            };
            assert_eq!(cfg.windows_per_interval().unwrap(), windows);
            assert_eq!(cfg.intervals().unwrap(), count);
        }
    }
}
