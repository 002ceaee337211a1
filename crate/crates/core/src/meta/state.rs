use crate::sim::QosWindow;

/// QoS windows in the state.
pub const WINDOW_HISTORY: usize = 10;
/// Past actions in the state.
pub const ACTION_HISTORY: usize = 5;
pub const STATE_DIM: usize = 6 * WINDOW_HISTORY + ACTION_HISTORY;

const RATE_SCALE: f64 = 8000.0;
const LOSS_SCALE: f64 = 100.0;
const OWD_SCALE: f64 = 1000.0;
const INTERARRIVAL_SCALE: f64 = 100.0;

/// Metapolicy input: six normalised QoS histories of length 10 (receive rate,
/// lost packets, owd, interarrival, video share, audio share; oldest first)
/// followed by the last five actions as `index / (pool − 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaState(pub [f32; STATE_DIM]);

impl Default for MetaState {
    fn default() -> Self {
        MetaState([0.0; STATE_DIM])
    }
}

impl MetaState {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn from_slice(values: &[f32]) -> Option<Self> {
        <[f32; STATE_DIM]>::try_from(values).ok().map(MetaState)
    }
}

fn norm(x: f64, scale: f64) -> f32 {
    let v = x / scale;
    if v.is_finite() {
        v.clamp(0.0, 1.0) as f32
    } else {
        0.0
    }
}

/// Builds the state from the most recent windows and actions; missing history
/// is zero at the oldest positions. Extra history beyond 10 windows / 5
/// actions is ignored (newest kept).
pub fn build_state(windows: &[QosWindow], actions: &[usize], pool_size: usize) -> MetaState {
    let mut s = [0.0f32; STATE_DIM];
    let windows = &windows[windows.len().saturating_sub(WINDOW_HISTORY)..];
    let offset = WINDOW_HISTORY - windows.len();
    for (i, w) in windows.iter().enumerate() {
        let j = offset + i;
        s[j] = norm(w.recv_rate, RATE_SCALE);
        s[WINDOW_HISTORY + j] = norm(w.lost_pkts, LOSS_SCALE);
        s[2 * WINDOW_HISTORY + j] = norm(w.owd, OWD_SCALE);
        s[3 * WINDOW_HISTORY + j] = norm(w.interarrival, INTERARRIVAL_SCALE);
        s[4 * WINDOW_HISTORY + j] = norm(w.video_prop, 1.0);
        s[5 * WINDOW_HISTORY + j] = norm(w.audio_prop, 1.0);
    }
    let actions = &actions[actions.len().saturating_sub(ACTION_HISTORY)..];
    let offset = 6 * WINDOW_HISTORY + ACTION_HISTORY - actions.len();
    let denom = pool_size.saturating_sub(1).max(1) as f64;
    for (i, &a) in actions.iter().enumerate() {
        s[offset + i] = norm(a as f64, denom);
    }
    MetaState(s)
}
