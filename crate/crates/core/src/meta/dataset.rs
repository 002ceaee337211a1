//! Offline experience: transitions logged by the behaviour policy.
//!
//! File format (`IVYDATA v1`), one transition per line after the header:
//!
//! ```text
//! IVYDATA v1 pool=<n> interval=<f>
//! s=<65 csv floats> a=<u> r=<f> s2=<65 csv floats> done=<0|1> call=<id> [gap=<f>]
//! ```
//!
//! The optional `gap` field is |SafeFilter − ProbeMax| (kbps) at decision
//! time; it feeds the delta rule's threshold.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::meta::state::{MetaState, STATE_DIM};
use crate::sim::CallLog;
use crate::trace::parse_num;

pub const DATA_MAGIC: &str = "IVYDATA v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: MetaState,
    pub action: usize,
    /// Mean video MOS of the interval.
    pub reward: f64,
    pub next_state: MetaState,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub transition: Transition,
    pub call: String,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pool: usize,
    /// Decision interval in seconds.
    pub interval: f64,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(pool: usize, interval: f64) -> Self {
        Self {
            pool,
            interval,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends one transition per decision interval of `log`.
    pub fn push_call(&mut self, call_id: &str, log: &CallLog) {
        let gaps = log.estimate_gaps();
        let n = log.records.len();
        for (k, rec) in log.records.iter().enumerate() {
            let next_state = if k + 1 < n {
                log.records[k + 1].state
            } else {
                log.final_state
            };
            self.records.push(Record {
                transition: Transition {
                    state: rec.state,
                    action: rec.action,
                    reward: rec.video_mos,
                    next_state,
                    done: k + 1 == n,
                },
                call: call_id.to_string(),
                gap: gaps.as_ref().map(|g| g[k]),
            });
        }
    }

    pub fn calls(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.call.as_str()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{DATA_MAGIC} pool={} interval={}\n",
            self.pool, self.interval
        );
        for r in &self.records {
            let t = &r.transition;
            out.push_str("s=");
            write_csv(&mut out, &t.state);
            let _ = write!(out, " a={} r={} s2=", t.action, t.reward);
            write_csv(&mut out, &t.next_state);
            let _ = write!(out, " done={} call={}", u8::from(t.done), r.call);
            if let Some(g) = r.gap {
                let _ = write!(out, " gap={g}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, src: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(src, 1, "magic", "empty file"))?;
        let rest = header
            .strip_prefix(DATA_MAGIC)
            .ok_or_else(|| Error::parse(src, 1, "magic", format!("expected `{DATA_MAGIC}`")))?;
        let h = crate::trace::keyed_fields(src, 1, rest, &["pool", "interval"])?;
        let pool: usize = parse_num(src, 1, "pool", h[0])?;
        let interval: f64 = parse_num(src, 1, "interval", h[1])?;
        if pool < 1 {
            return Err(Error::parse(src, 1, "pool", "pool must be >= 1"));
        }
        let mut ds = Dataset::new(pool, interval);
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            ds.records.push(parse_record(src, n, line, pool)?);
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

fn write_csv(out: &mut String, s: &MetaState) {
    for (i, v) in s.0.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
}

fn parse_state(src: &str, line: usize, field: &str, v: &str) -> Result<MetaState> {
    let vals = v
        .split(',')
        .map(|x| parse_num::<f32>(src, line, field, x))
        .collect::<Result<Vec<f32>>>()?;
    if vals.iter().any(|x| !x.is_finite()) {
        return Err(Error::parse(src, line, field, "non-finite state entry"));
    }
    MetaState::from_slice(&vals).ok_or_else(|| {
        Error::parse(
            src,
            line,
            field,
            format!("expected {STATE_DIM} values, found {}", vals.len()),
        )
    })
}

fn parse_record(src: &str, n: usize, line: &str, pool: usize) -> Result<Record> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let (keys, gap): (&[&str], bool) = match tokens.len() {
        6 => (&["s", "a", "r", "s2", "done", "call"], false),
        7 => (&["s", "a", "r", "s2", "done", "call", "gap"], true),
        k => {
            return Err(Error::parse(
                src,
                n,
                "record",
                format!("expected 6 or 7 fields, found {k}"),
            ))
        }
    };
    let f = crate::trace::keyed_fields(src, n, line, keys)?;
    let action: usize = parse_num(src, n, "a", f[1])?;
    if action >= pool {
        return Err(Error::parse(
            src,
            n,
            "a",
            format!("action {action} outside pool of {pool}"),
        ));
    }
    let reward: f64 = parse_num(src, n, "r", f[2])?;
    if !(1.0..=5.0).contains(&reward) {
        return Err(Error::parse(
            src,
            n,
            "r",
            format!("reward {reward} outside [1, 5]"),
        ));
    }
    let done = match f[4] {
        "0" => false,
        "1" => true,
        other => {
            return Err(Error::parse(
                src,
                n,
                "done",
                format!("expected 0 or 1, found `{other}`"),
            ))
        }
    };
    let gap = if gap {
        Some(parse_num::<f64>(src, n, "gap", f[6])?)
    } else {
        None
    };
    Ok(Record {
        transition: Transition {
            state: parse_state(src, n, "s", f[0])?,
            action,
            reward,
            next_state: parse_state(src, n, "s2", f[3])?,
            done,
        },
        call: f[5].to_string(),
        gap,
    })
}

/// Mean and population standard deviation, summed in sorted order so the
/// result does not depend on record order.
pub fn mean_std(values: &mut [f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / n).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub transitions: usize,
    pub calls: usize,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub action_counts: Vec<usize>,
    /// Standard deviation of |SafeFilter − ProbeMax|; the delta rule's σ.
    pub sigma: Option<f64>,
    /// σ is zero: the delta rule cannot discriminate.
    pub sigma_degenerate: bool,
}

pub fn dataset_stats(ds: &Dataset) -> Result<DatasetStats> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut feature_mean = Vec::with_capacity(STATE_DIM);
    let mut feature_std = Vec::with_capacity(STATE_DIM);
    let mut column = Vec::with_capacity(ds.len());
    for j in 0..STATE_DIM {
        column.clear();
        column.extend(
            ds.records
                .iter()
                .map(|r| f64::from(r.transition.state.0[j])),
        );
        let (m, s) = mean_std(&mut column);
        feature_mean.push(m);
        feature_std.push(s);
    }
    let mut rewards: Vec<f64> = ds.records.iter().map(|r| r.transition.reward).collect();
    let (reward_mean, reward_std) = mean_std(&mut rewards);
    let mut action_counts = vec![0; ds.pool];
    for r in &ds.records {
        action_counts[r.transition.action] += 1;
    }
    let mut gaps: Vec<f64> = ds.records.iter().filter_map(|r| r.gap).collect();
    let sigma = if gaps.is_empty() {
        None
    } else {
        Some(mean_std(&mut gaps).1)
    };
    Ok(DatasetStats {
        transitions: ds.len(),
        calls: ds.calls().len(),
        feature_mean,
        feature_std,
        reward_mean,
        reward_std,
        action_counts,
        sigma,
        sigma_degenerate: sigma == Some(0.0),
    })
}
