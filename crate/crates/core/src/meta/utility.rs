//! QoS utilities scored by the exploration–exploitation baselines.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sim::{TickStats, TICK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Utility {
    Vivace,
    PowerVariant,
    Power,
    Throughput,
}

impl Utility {
    pub const ALL: [Utility; 4] = [
        Utility::Vivace,
        Utility::PowerVariant,
        Utility::Power,
        Utility::Throughput,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Utility::Vivace => "vivace",
            Utility::PowerVariant => "power_variant",
            Utility::Power => "power",
            Utility::Throughput => "throughput",
        }
    }

    pub fn score(self, stats: &MiniWindowStats, vivace: &VivaceParams) -> Result<f64> {
        match self {
            Utility::Vivace => Ok(vivace_utility(
                stats.rate,
                stats.drtt_dt,
                stats.loss,
                vivace,
            )),
            Utility::PowerVariant => power_variant(stats.rate, stats.loss, stats.delay),
            Utility::Power => power(stats.rate, stats.delay),
            Utility::Throughput => Ok(throughput(stats.rate)),
        }
    }
}

impl fmt::Display for Utility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Utility {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Utility::ALL
            .into_iter()
            .find(|u| u.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown utility `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VivaceParams {
    pub exponent: f64,
    pub latency_penalty: f64,
    pub loss_penalty: f64,
}

impl Default for VivaceParams {
    fn default() -> Self {
        Self {
            exponent: 0.9,
            latency_penalty: 0.009,
            loss_penalty: 11.35,
        }
    }
}

/// `rate^t − β·rate·max(0, dRTT/dT) − γ·loss·rate`, with rate in kbps and the
/// delay slope in ms per second.
pub fn vivace_utility<T: Scalar>(rate: T, drtt_dt: T, loss: T, p: &VivaceParams) -> T {
    rate.powf(T::lit(p.exponent))
        - T::lit(p.latency_penalty) * rate * drtt_dt.max(T::zero())
        - T::lit(p.loss_penalty) * loss * rate
}

pub fn power<T: Scalar>(rate: T, delay: T) -> Result<T> {
    if delay <= T::zero() {
        return Err(Error::InvalidInput(format!(
            "power: delay must be > 0, got {delay}"
        )));
    }
    Ok(rate / delay)
}

pub fn power_variant<T: Scalar>(rate: T, loss: T, delay: T) -> Result<T> {
    if delay <= T::zero() {
        return Err(Error::InvalidInput(format!(
            "power_variant: delay must be > 0, got {delay}"
        )));
    }
    Ok(rate * (T::one() - loss) / delay)
}

pub fn throughput<T: Scalar>(rate: T) -> T {
    rate
}

/// Inputs to a utility, measured over one exploration mini-window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiniWindowStats {
    /// Mean receive rate, kbps.
    pub rate: f64,
    /// Mean one-way delay, ms.
    pub delay: f64,
    /// Least-squares slope of owd, ms per second.
    pub drtt_dt: f64,
    /// Lost packets over lost plus received.
    pub loss: f64,
}

impl MiniWindowStats {
    pub fn from_ticks(ticks: &[TickStats]) -> Self {
        let n = ticks.len().max(1) as f64;
        let lost: u64 = ticks.iter().map(|t| u64::from(t.lost_pkts)).sum();
        let recv: u64 = ticks
            .iter()
            .map(|t| u64::from(t.video_pkts + t.audio_pkts))
            .sum();
        let times: Vec<f64> = (0..ticks.len()).map(|i| i as f64 * TICK).collect();
        let owds: Vec<f64> = ticks.iter().map(|t| t.owd).collect();
        Self {
            rate: ticks.iter().map(|t| t.recv_rate).sum::<f64>() / n,
            delay: owds.iter().sum::<f64>() / n,
            drtt_dt: ls_slope(&times, &owds),
            loss: if lost + recv == 0 {
                0.0
            } else {
                lost as f64 / (lost + recv) as f64
            },
        }
    }
}

/// Least-squares slope of `y` on `x`; zero for fewer than two points or
/// constant `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for i in 0..n {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}
