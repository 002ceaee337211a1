//! Deterministic QoE proxy: per-window video and audio MOS on the 1..5 scale.
//!
//! Video MOS is `1 + 4·R·D·L` with a log-rate term `R`, an exponential
//! queuing-delay term `D` and a loss term `L`; audio MOS saturates at 4.6 once
//! the audio stream receives its nominal rate. Delay terms use queuing delay
//! (owd minus the link's base delay), so a trace's propagation delay does not
//! dominate scoring.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct QoeParams {
    /// Video rate at which the log-rate term reaches half its slope scale.
    pub video_half_rate: f64,
    /// Video rate that saturates the rate term.
    pub video_max_rate: f64,
    pub video_delay_scale: f64,
    pub video_loss_exponent: f64,
    pub audio_nominal_rate: f64,
    pub audio_span: f64,
    pub audio_delay_scale: f64,
    pub audio_loss_exponent: f64,
}

impl Default for QoeParams {
    fn default() -> Self {
        Self {
            video_half_rate: 300.0,
            video_max_rate: 8000.0,
            video_delay_scale: 250.0,
            video_loss_exponent: 8.0,
            audio_nominal_rate: 40.0,
            audio_span: 3.6,
            audio_delay_scale: 400.0,
            audio_loss_exponent: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosScore {
    pub video_mos: f64,
    pub audio_mos: f64,
}

fn clamp01<T: Scalar>(x: T) -> T {
    x.max(T::zero()).min(T::one())
}

/// Video MOS from goodput (kbps), queuing delay (ms) and loss fraction.
pub fn video_mos<T: Scalar>(goodput: T, queuing_delay: T, loss: T, p: &QoeParams) -> T {
    let half = T::lit(p.video_half_rate);
    let rate = clamp01(
        (T::one() + goodput.max(T::zero()) / half).ln()
            / (T::one() + T::lit(p.video_max_rate) / half).ln(),
    );
    let delay = (-queuing_delay.max(T::zero()) / T::lit(p.video_delay_scale)).exp();
    let keep = (T::one() - clamp01(loss)).powf(T::lit(p.video_loss_exponent));
    clamp_mos(T::one() + T::lit(4.0) * rate * delay * keep)
}

pub fn audio_mos<T: Scalar>(goodput: T, queuing_delay: T, loss: T, p: &QoeParams) -> T {
    let rate = clamp01(goodput / T::lit(p.audio_nominal_rate));
    let delay = (-queuing_delay.max(T::zero()) / T::lit(p.audio_delay_scale)).exp();
    let keep = (T::one() - clamp01(loss)).powf(T::lit(p.audio_loss_exponent));
    clamp_mos(T::one() + T::lit(p.audio_span) * rate * delay * keep)
}

fn clamp_mos<T: Scalar>(x: T) -> T {
    x.max(T::one()).min(T::lit(5.0))
}

/// Mean of window video MOS values; the per-decision-interval reward.
pub fn interval_reward(window_video_mos: &[f64]) -> f64 {
    window_video_mos.iter().sum::<f64>() / window_video_mos.len().max(1) as f64
}
