//! Run configuration: `key = value` lines grouped under `[section]` headers.
//!
//! ```text
//! # comment
//! [run]
//! seed = 7
//! [train]
//! epochs = 50
//! ```
//!
//! Every key is addressed as `section.key`; command-line `--set` overrides
//! use the same names.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ivy_core::bwe::BweParams;
use ivy_core::meta::utility::VivaceParams;
use ivy_core::qoe::QoeParams;
use ivy_core::rl::TrainConfig;
use ivy_core::sim::SimConfig;
use ivy_core::trace::Regime;

use crate::error::CliError;

/// `(key, default, description)` for every recognised setting.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "paths.traces_dir",
        "traces",
        "holdout traces written by gen-traces, read by eval and ablate",
    ),
    (
        "paths.dataset",
        "data/dataset.txt",
        "offline dataset written by collect",
    ),
    (
        "paths.checkpoint",
        "data/ivy.ckpt",
        "trained metapolicy written by train",
    ),
    (
        "paths.loss_trace",
        "data/loss.csv",
        "per-epoch training losses",
    ),
    (
        "paths.reports_dir",
        "reports",
        "evaluation and ablation reports",
    ),
    ("run.seed", "1", "master seed for every random stream"),
    (
        "run.pool",
        "safe_filter,probe_max,loss_tolerant",
        "estimator pool, in action order",
    ),
    ("run.call_duration", "120", "call length in seconds"),
    (
        "run.decision_interval",
        "6",
        "metapolicy decision interval in seconds (multiple of 0.6)",
    ),
    (
        "run.collect_calls",
        "2000",
        "random-policy calls logged by collect",
    ),
    (
        "run.collect_regimes",
        "stable_lbw,fluct_lbw,burst_lbw,stable_hbw,fluct_hbw,burst_hbw,lte",
        "regimes sampled for training calls",
    ),
    (
        "run.eval_calls",
        "50",
        "holdout calls per policy per regime",
    ),
    (
        "run.eval_regimes",
        "stable_lbw,fluct_lbw,burst_lbw,stable_hbw,fluct_hbw,burst_hbw",
        "regimes of the holdout set",
    ),
    (
        "run.nonstationary_calls",
        "30",
        "calls in the lbw -> lte -> hbw scenario",
    ),
    (
        "run.paired",
        "true",
        "share trace and simulator seed across policies",
    ),
    (
        "ablation.intervals",
        "1.2,3,4.8,6",
        "decision intervals compared by ablate",
    ),
    (
        "ablation.collect_calls",
        "2000",
        "training calls per ablation interval",
    ),
    (
        "ablation.epochs",
        "200",
        "training epochs per ablation interval",
    ),
    ("train.gamma", "0.9", "discount"),
    ("train.tau", "0.7", "expectile of the value regression"),
    ("train.beta", "3", "advantage temperature"),
    ("train.max_weight", "100", "cap on the advantage weight"),
    ("train.lr", "0.0001", "learning rate"),
    ("train.batch", "128", "transitions per minibatch"),
    ("train.epochs", "200", "passes over the dataset"),
    ("train.polyak", "0.005", "target network averaging rate"),
    ("train.optimizer", "adam", "adam or sgd"),
    (
        "train.terminal_at_call_end",
        "false",
        "treat the last interval of a call as terminal",
    ),
    (
        "train.reward_scale",
        "auto",
        "reward multiplier, or auto (1000 / spread of per-call returns)",
    ),
    ("train.hidden", "128", "width of both hidden layers"),
    (
        "rules.sigma",
        "auto",
        "delta rule threshold in kbps, or auto (std of the dataset gap)",
    ),
    (
        "vivace.exponent",
        "0.9",
        "rate exponent of the vivace utility",
    ),
    (
        "vivace.latency_penalty",
        "0.009",
        "delay-gradient penalty of the vivace utility",
    ),
    (
        "vivace.loss_penalty",
        "11.35",
        "loss penalty of the vivace utility",
    ),
    (
        "qoe.video_half_rate",
        "300",
        "video rate scale of the log-rate term (kbps)",
    ),
    (
        "qoe.video_max_rate",
        "8000",
        "video rate saturating the rate term (kbps)",
    ),
    (
        "qoe.video_delay_scale",
        "250",
        "video queuing-delay decay (ms)",
    ),
    ("qoe.video_loss_exponent", "8", "video loss exponent"),
    (
        "qoe.audio_nominal_rate",
        "40",
        "audio rate for full quality (kbps)",
    ),
    ("qoe.audio_span", "3.6", "audio MOS range above 1"),
    (
        "qoe.audio_delay_scale",
        "400",
        "audio queuing-delay decay (ms)",
    ),
    ("qoe.audio_loss_exponent", "4", "audio loss exponent"),
];

/// Help text listing every key with its default.
pub fn keys_help() -> String {
    let width = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Configuration keys (file sections or --set section.key=value):\n");
    for (k, d, h) in KEYS {
        out.push_str(&format!("  {k:<width$}  {h} [default: {d}]\n"));
    }
    out
}

/// Prefixes a core configuration error with the section or key it came from.
fn scoped(scope: &str, e: ivy_core::Error) -> CliError {
    match e {
        ivy_core::Error::Config(m) | ivy_core::Error::InvalidInput(m) => {
            CliError::Config(format!("{scope}: {m}"))
        }
        other => other.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub traces_dir: PathBuf,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub loss_trace: PathBuf,
    pub reports_dir: PathBuf,
    pub seed: u64,
    pub pool: Vec<String>,
    pub collect_calls: usize,
    pub collect_regimes: Vec<Regime>,
    pub eval_calls: usize,
    pub eval_regimes: Vec<Regime>,
    pub nonstationary_calls: usize,
    pub paired: bool,
    pub ablation_intervals: Vec<f64>,
    pub ablation_collect_calls: usize,
    pub ablation_epochs: usize,
    pub sim: SimConfig,
    pub bwe: BweParams,
    pub train: TrainConfig,
    pub sigma: Sigma,
    pub vivace: VivaceParams,
}

/// Raw `key -> value` map, defaults first, then file, then overrides.
#[derive(Debug, Clone)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl Default for RawConfig {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|(k, d, _)| (k.to_string(), d.to_string()))
                .collect(),
        }
    }
}

impl RawConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.trim().to_string();
                Ok(())
            }
            None => Err(CliError::Config(format!(
                "unknown configuration key `{key}`"
            ))),
        }
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| {
            CliError::Config(format!("override `{pair}` is not of the form key=value"))
        })?;
        self.set(k.trim(), v)
    }

    pub fn apply_text(&mut self, text: &str, src: &str) -> Result<(), CliError> {
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{src}:{}: expected `key = value`", n + 1))
            })?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            self.set(&key, v)
                .map_err(|e| CliError::Config(format!("{src}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::MissingInput(format!("cannot read config {}: {e}", path.display()))
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .expect("every key has a default")
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{v}`")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::Config(format!("`{key}`: invalid entry `{s}`")))
            })
            .collect()
    }

    fn positive(&self, key: &str) -> Result<f64, CliError> {
        let v: f64 = self.parse(key)?;
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(CliError::Config(format!(
                "`{key}` must be positive, got {v}"
            )))
        }
    }

    /// Effective configuration as `section.key = value` lines.
    pub fn dump(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let sim = SimConfig {
            call_duration: self.positive("run.call_duration")?,
            decision_interval: self.positive("run.decision_interval")?,
            qoe: QoeParams {
                video_half_rate: self.positive("qoe.video_half_rate")?,
                video_max_rate: self.positive("qoe.video_max_rate")?,
                video_delay_scale: self.positive("qoe.video_delay_scale")?,
                video_loss_exponent: self.positive("qoe.video_loss_exponent")?,
                audio_nominal_rate: self.positive("qoe.audio_nominal_rate")?,
                audio_span: self.positive("qoe.audio_span")?,
                audio_delay_scale: self.positive("qoe.audio_delay_scale")?,
                audio_loss_exponent: self.positive("qoe.audio_loss_exponent")?,
            },
            ..SimConfig::default()
        };
        ivy_core::sim::windows_in(sim.decision_interval)
            .map_err(|e| scoped("run.decision_interval", e))?;
        sim.validate().map_err(|e| scoped("run.call_duration", e))?;
        let train = TrainConfig {
            gamma: self.parse("train.gamma")?,
            tau: self.parse("train.tau")?,
            beta: self.parse("train.beta")?,
            max_weight: self.parse("train.max_weight")?,
            lr: self.parse("train.lr")?,
            batch: self.parse("train.batch")?,
            epochs: self.parse("train.epochs")?,
            polyak: self.parse("train.polyak")?,
            optimizer: self.parse("train.optimizer")?,
            terminal_at_call_end: self.parse("train.terminal_at_call_end")?,
            reward_scale: self.parse("train.reward_scale")?,
            hidden: self.parse("train.hidden")?,
            seed: self.parse("run.seed")?,
        };
        train.validate().map_err(|e| scoped("train", e))?;
        let sigma = match self.get("rules.sigma") {
            "auto" => Sigma::Auto,
            _ => Sigma::Fixed(self.positive("rules.sigma")?),
        };
        let pool: Vec<String> = self.list("run.pool")?;
        ivy_core::bwe::make_pool(&pool, &BweParams::default())
            .map_err(|e| scoped("run.pool", e))?;
        let ablation_intervals: Vec<f64> = self.list("ablation.intervals")?;
        for &i in &ablation_intervals {
            ivy_core::sim::windows_in(i).map_err(|e| scoped("ablation.intervals", e))?;
        }
        let regimes = |key: &str| -> Result<Vec<Regime>, CliError> {
            let r: Vec<Regime> = self.list(key)?;
            if r.is_empty() {
                return Err(CliError::Config(format!("`{key}` is empty")));
            }
            Ok(r)
        };
        let at_least_two = |key: &str| -> Result<usize, CliError> {
            let n: usize = self.parse(key)?;
            if n < 2 {
                return Err(CliError::Config(format!(
                    "`{key}` must be at least 2, got {n}"
                )));
            }
            Ok(n)
        };
        Ok(RunConfig {
            traces_dir: self.get("paths.traces_dir").into(),
            dataset: self.get("paths.dataset").into(),
            checkpoint: self.get("paths.checkpoint").into(),
            loss_trace: self.get("paths.loss_trace").into(),
            reports_dir: self.get("paths.reports_dir").into(),
            seed: self.parse("run.seed")?,
            pool,
            collect_calls: self.parse("run.collect_calls")?,
            collect_regimes: regimes("run.collect_regimes")?,
            eval_calls: at_least_two("run.eval_calls")?,
            eval_regimes: regimes("run.eval_regimes")?,
            nonstationary_calls: at_least_two("run.nonstationary_calls")?,
            paired: self.parse("run.paired")?,
            ablation_intervals,
            ablation_collect_calls: self.parse("ablation.collect_calls")?,
            ablation_epochs: self.parse("ablation.epochs")?,
            sim,
            bwe: BweParams::default(),
            train,
            sigma,
            vivace: VivaceParams {
                exponent: self.parse("vivace.exponent")?,
                latency_penalty: self.parse("vivace.latency_penalty")?,
                loss_penalty: self.parse("vivace.loss_penalty")?,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = RawConfig::default().resolve().unwrap();
        assert_eq!(cfg.collect_calls, 2000);
        assert_eq!(cfg.eval_calls, 50);
        assert_eq!(cfg.sim.decision_interval, 6.0);
        assert_eq!(
            cfg.train,
            TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            }
        );
        assert_eq!(cfg.sigma, Sigma::Auto);
        assert_eq!(cfg.pool.len(), 3);
    }

    #[test]
    fn file_sections_and_overrides() {
        let mut raw = RawConfig::default();
        raw.apply_text(
            "# experiment\n[train]\nepochs = 5  # short\n\n[run]\nseed=9\n",
            "f",
        )
        .unwrap();
        raw.set_pair("train.epochs=7").unwrap();
        let cfg = raw.resolve().unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.seed, 9);
    }

    #[test]
    fn errors_name_the_key() {
        let mut raw = RawConfig::default();
        let e = raw.set_pair("train.epoch=3").unwrap_err();
        assert!(e.to_string().contains("train.epoch"));
        raw.set("run.decision_interval", "5").unwrap();
        assert!(raw
            .resolve()
            .unwrap_err()
            .to_string()
            .contains("decision_interval"));
        let mut raw = RawConfig::default();
        raw.set("train.gamma", "1.5").unwrap();
        assert!(raw.resolve().unwrap_err().to_string().contains("gamma"));
        let mut raw = RawConfig::default();
        raw.set("run.pool", "safe_filter,gcc").unwrap();
        assert!(raw.resolve().unwrap_err().to_string().contains("run.pool"));
    }

    #[test]
    fn help_lists_every_key_with_default() {
        let help = keys_help();
        for (k, d, _) in KEYS {
            assert!(
                help.contains(k) && help.contains(&format!("[default: {d}]")),
                "{k}"
            );
        }
    }
}
