//! Synthetic network traces.
//!
//! A trace is a piecewise-constant description of bottleneck capacity, base
//! one-way delay and random loss. Generation is a pure function of
//! `(regime, seed, duration)`.
//!
//! File format (`IVYTRACE v1`):
//!
//! ```text
//! IVYTRACE v1
//! id=<s> regime=<s> seed=<u64>
//! seg dur=<f> cap=<f> owd=<f> loss=<f>
//! ...
//! ```

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, label, rng_from, SimRng};

pub const TRACE_MAGIC: &str = "IVYTRACE v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    StableLbw,
    FluctLbw,
    BurstLbw,
    StableHbw,
    FluctHbw,
    BurstHbw,
    Lte,
    Nonstationary,
}

impl Regime {
    pub const ALL: [Regime; 8] = [
        Regime::StableLbw,
        Regime::FluctLbw,
        Regime::BurstLbw,
        Regime::StableHbw,
        Regime::FluctHbw,
        Regime::BurstHbw,
        Regime::Lte,
        Regime::Nonstationary,
    ];

    /// The six stable / fluctuating / burst-loss × LBW / HBW evaluation regimes.
    pub const EVAL: [Regime; 6] = [
        Regime::StableLbw,
        Regime::FluctLbw,
        Regime::BurstLbw,
        Regime::StableHbw,
        Regime::FluctHbw,
        Regime::BurstHbw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::StableLbw => "stable_lbw",
            Regime::FluctLbw => "fluct_lbw",
            Regime::BurstLbw => "burst_lbw",
            Regime::StableHbw => "stable_hbw",
            Regime::FluctHbw => "fluct_hbw",
            Regime::BurstHbw => "burst_hbw",
            Regime::Lte => "lte",
            Regime::Nonstationary => "nonstationary",
        }
    }

    pub fn is_hbw(self) -> bool {
        matches!(
            self,
            Regime::StableHbw | Regime::FluctHbw | Regime::BurstHbw
        )
    }

    pub fn is_lbw(self) -> bool {
        matches!(
            self,
            Regime::StableLbw | Regime::FluctLbw | Regime::BurstLbw
        )
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown regime `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSegment {
    /// Seconds.
    pub duration: f64,
    /// Kilobits per second.
    pub capacity: f64,
    /// Milliseconds.
    pub base_owd: f64,
    /// Fraction of packets dropped independently of load.
    pub random_loss: f64,
}

impl TraceSegment {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(("dur", format!("must be > 0, got {}", self.duration)));
        }
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(("cap", format!("must be > 0, got {}", self.capacity)));
        }
        if !(self.base_owd.is_finite() && self.base_owd >= 0.0) {
            return Err(("owd", format!("must be >= 0, got {}", self.base_owd)));
        }
        if !(self.random_loss.is_finite() && (0.0..1.0).contains(&self.random_loss)) {
            return Err((
                "loss",
                format!("must be in [0, 1), got {}", self.random_loss),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub id: String,
    pub regime: Regime,
    pub segments: Vec<TraceSegment>,
    pub seed: u64,
}

impl Trace {
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Segment active at time `t` seconds; the last segment extends forever.
    pub fn segment_at(&self, t: f64) -> &TraceSegment {
        let mut end = 0.0;
        for seg in &self.segments {
            end += seg.duration;
            if t < end {
                return seg;
            }
        }
        self.segments.last().expect("trace has segments")
    }

    /// Cursor for sequential lookups in O(1) amortised time.
    pub fn cursor(&self) -> SegmentCursor<'_> {
        SegmentCursor {
            trace: self,
            index: 0,
            end: self.segments[0].duration,
        }
    }
}

pub struct SegmentCursor<'a> {
    trace: &'a Trace,
    index: usize,
    end: f64,
}

impl<'a> SegmentCursor<'a> {
    /// Advances to the segment covering `t`. Times must be non-decreasing.
    pub fn at(&mut self, t: f64) -> &'a TraceSegment {
        let segs = &self.trace.segments;
        while t >= self.end && self.index + 1 < segs.len() {
            self.index += 1;
            self.end += segs[self.index].duration;
        }
        &segs[self.index]
    }
}

/// Parameter ranges for trace generation.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeBands {
    pub lbw_capacity: (f64, f64),
    pub hbw_capacity: (f64, f64),
    pub lte_capacity: (f64, f64),
    pub base_owd: (f64, f64),
    /// Segment length for fluctuating and LTE regimes.
    pub fluct_segment: (f64, f64),
    pub burst_length: (f64, f64),
    pub burst_loss: (f64, f64),
    pub quiet_length: (f64, f64),
    pub quiet_loss: (f64, f64),
    pub lte_loss: (f64, f64),
    /// Capacity sub-bands of the three nonstationary phases. They are disjoint
    /// and ordered so each phase is unambiguous.
    pub nonstationary_capacity: [(f64, f64); 3],
}

impl Default for RegimeBands {
    fn default() -> Self {
        Self {
            lbw_capacity: (150.0, 800.0),
            hbw_capacity: (2000.0, 8000.0),
            lte_capacity: (600.0, 3000.0),
            base_owd: (20.0, 80.0),
            fluct_segment: (5.0, 15.0),
            burst_length: (2.0, 6.0),
            burst_loss: (0.05, 0.15),
            quiet_length: (5.0, 15.0),
            quiet_loss: (0.0, 0.01),
            lte_loss: (0.005, 0.04),
            nonstationary_capacity: [(150.0, 600.0), (800.0, 1800.0), (3000.0, 8000.0)],
        }
    }
}

fn uniform(rng: &mut SimRng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Splits `duration` into consecutive pieces with lengths drawn from `len`.
fn split_durations(rng: &mut SimRng, duration: f64, len: (f64, f64)) -> Vec<f64> {
    let mut out = Vec::new();
    let mut left = duration;
    while left > 0.0 {
        let d = uniform(rng, len).min(left);
        out.push(d);
        left -= d;
        // Avoid a vanishing tail segment from floating point residue.
        if left < 1e-9 {
            break;
        }
    }
    out
}

fn fluctuating(
    rng: &mut SimRng,
    duration: f64,
    capacity: (f64, f64),
    loss: (f64, f64),
    owd: f64,
    seg_len: (f64, f64),
) -> Vec<TraceSegment> {
    split_durations(rng, duration, seg_len)
        .into_iter()
        .map(|d| TraceSegment {
            duration: d,
            capacity: uniform(rng, capacity),
            base_owd: owd,
            random_loss: uniform(rng, loss),
        })
        .collect()
}

fn bursty(
    rng: &mut SimRng,
    bands: &RegimeBands,
    duration: f64,
    capacity: f64,
    owd: f64,
) -> Vec<TraceSegment> {
    let mut segs = Vec::new();
    let mut left = duration;
    let mut burst = false;
    while left > 1e-9 {
        let (len, loss) = if burst {
            (bands.burst_length, bands.burst_loss)
        } else {
            (bands.quiet_length, bands.quiet_loss)
        };
        let d = uniform(rng, len).min(left);
        segs.push(TraceSegment {
            duration: d,
            capacity,
            base_owd: owd,
            random_loss: uniform(rng, loss),
        });
        left -= d;
        burst = !burst;
    }
    if segs.len() == 1 {
        // Too short for a full quiet period: halve it and append a burst.
        segs[0].duration = duration / 2.0;
        segs.push(TraceSegment {
            duration: duration / 2.0,
            capacity,
            base_owd: owd,
            random_loss: uniform(rng, bands.burst_loss),
        });
    }
    segs
}

pub fn generate_trace(regime: Regime, seed: u64, duration: f64) -> Result<Trace> {
    generate_trace_with(&RegimeBands::default(), regime, seed, duration)
}

pub fn generate_trace_with(
    bands: &RegimeBands,
    regime: Regime,
    seed: u64,
    duration: f64,
) -> Result<Trace> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidInput(format!(
            "trace duration must be > 0, got {duration}"
        )));
    }
    let mut rng = rng_from(derive_seed(seed, &[label(regime.as_str())]));
    let owd = uniform(&mut rng, bands.base_owd);
    let single = |rng: &mut SimRng, cap: (f64, f64)| {
        vec![TraceSegment {
            duration,
            capacity: uniform(rng, cap),
            base_owd: owd,
            random_loss: 0.0,
        }]
    };
    let segments = match regime {
        Regime::StableLbw => single(&mut rng, bands.lbw_capacity),
        Regime::StableHbw => single(&mut rng, bands.hbw_capacity),
        Regime::FluctLbw => fluctuating(
            &mut rng,
            duration,
            bands.lbw_capacity,
            (0.0, 0.0),
            owd,
            bands.fluct_segment,
        ),
        Regime::FluctHbw => fluctuating(
            &mut rng,
            duration,
            bands.hbw_capacity,
            (0.0, 0.0),
            owd,
            bands.fluct_segment,
        ),
        Regime::BurstLbw => {
            let cap = uniform(&mut rng, bands.lbw_capacity);
            bursty(&mut rng, bands, duration, cap, owd)
        }
        Regime::BurstHbw => {
            let cap = uniform(&mut rng, bands.hbw_capacity);
            bursty(&mut rng, bands, duration, cap, owd)
        }
        Regime::Lte => fluctuating(
            &mut rng,
            duration,
            bands.lte_capacity,
            bands.lte_loss,
            owd,
            bands.fluct_segment,
        ),
        Regime::Nonstationary => {
            let third = duration / 3.0;
            let [lbw, lte, hbw] = bands.nonstationary_capacity;
            let mut segs = vec![TraceSegment {
                duration: third,
                capacity: uniform(&mut rng, lbw),
                base_owd: owd,
                random_loss: 0.0,
            }];
            segs.extend(fluctuating(
                &mut rng,
                third,
                lte,
                bands.lte_loss,
                owd,
                bands.fluct_segment,
            ));
            segs.push(TraceSegment {
                duration: duration - 2.0 * third,
                capacity: uniform(&mut rng, hbw),
                base_owd: owd,
                random_loss: 0.0,
            });
            segs
        }
    };
    Ok(Trace {
        id: format!("{}-{}", regime.as_str(), seed),
        regime,
        segments,
        seed,
    })
}

pub fn format_trace(trace: &Trace) -> String {
    let mut out = format!(
        "{TRACE_MAGIC}\nid={} regime={} seed={}\n",
        trace.id, trace.regime, trace.seed
    );
    for s in &trace.segments {
        out.push_str(&format!(
            "seg dur={} cap={} owd={} loss={}\n",
            s.duration, s.capacity, s.base_owd, s.random_loss
        ));
    }
    out
}

/// Splits `key=value` tokens, checking the keys appear in the given order.
pub(crate) fn keyed_fields<'a>(
    src: &str,
    line_no: usize,
    line: &'a str,
    keys: &[&str],
) -> Result<Vec<&'a str>> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != keys.len() {
        return Err(Error::parse(
            src,
            line_no,
            keys.join(","),
            format!("expected {} fields, found {}", keys.len(), tokens.len()),
        ));
    }
    tokens
        .iter()
        .zip(keys)
        .map(|(tok, key)| match tok.split_once('=') {
            Some((k, v)) if k == *key => Ok(v),
            _ => Err(Error::parse(
                src,
                line_no,
                *key,
                format!("expected `{key}=`, found `{tok}`"),
            )),
        })
        .collect()
}

pub(crate) fn parse_num<T: FromStr>(src: &str, line: usize, field: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::parse(src, line, field, format!("not a number: `{v}`")))
}

pub fn parse_trace(text: &str, src: &str) -> Result<Trace> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, TRACE_MAGIC)) => {}
        Some((n, other)) => {
            return Err(Error::parse(
                src,
                n,
                "magic",
                format!("expected `{TRACE_MAGIC}`, found `{other}`"),
            ))
        }
        None => return Err(Error::parse(src, 1, "magic", "empty file")),
    }
    let (n, header) = lines
        .next()
        .ok_or_else(|| Error::parse(src, 2, "header", "missing header line"))?;
    let h = keyed_fields(src, n, header, &["id", "regime", "seed"])?;
    let regime: Regime = h[1]
        .parse()
        .map_err(|_| Error::parse(src, n, "regime", format!("unknown regime `{}`", h[1])))?;
    let seed: u64 = parse_num(src, n, "seed", h[2])?;
    let mut segments = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let body = line.strip_prefix("seg ").ok_or_else(|| {
            Error::parse(
                src,
                n,
                "seg",
                format!("expected segment line, found `{line}`"),
            )
        })?;
        let f = keyed_fields(src, n, body, &["dur", "cap", "owd", "loss"])?;
        let seg = TraceSegment {
            duration: parse_num(src, n, "dur", f[0])?,
            capacity: parse_num(src, n, "cap", f[1])?,
            base_owd: parse_num(src, n, "owd", f[2])?,
            random_loss: parse_num(src, n, "loss", f[3])?,
        };
        seg.validate()
            .map_err(|(field, msg)| Error::parse(src, n, field, msg))?;
        segments.push(seg);
    }
    if segments.is_empty() {
        return Err(Error::parse(src, 3, "seg", "trace has no segments"));
    }
    Ok(Trace {
        id: h[0].to_string(),
        regime,
        segments,
        seed,
    })
}

pub fn save_trace(trace: &Trace, path: &Path) -> Result<()> {
    fs::write(path, format_trace(trace)).map_err(|e| Error::io(path, e))
}

pub fn load_trace(path: &Path) -> Result<Trace> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text, &path.display().to_string())
}
