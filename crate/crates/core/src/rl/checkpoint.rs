//! Trained metapolicy checkpoints.
//!
//! Layout: a text header, one `key=value` per line and terminated by a line
//! reading `weights`, followed by the parameters of actor, q, v and q_target as
//! row-major little-endian `f32` blocks (each layer's weight then bias). When
//! the header carries `adam_steps=<n>`, the Adam moments follow in the same
//! layout: first then second moment of actor, q and v.
//!
//! ```text
//! IVYCKPT v1
//! pool=safe_filter,probe_max,loss_tolerant
//! interval=6
//! epochs_done=200
//! gamma=0.99
//! ...
//! actor=65,128,128,3
//! q=65,128,128,3
//! v=65,128,128,1
//! q_target=65,128,128,3
//! adam_steps=62600
//! weights
//! <binary>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::meta::policy::{DecisionContext, Metapolicy};
use crate::meta::state::{MetaState, STATE_DIM};
use crate::rl::iql::{greedy_action, IqlAdam, IqlNets, TrainConfig, TrainState};
use crate::rl::mlp::{AdamState, Layer, Mlp, MlpGrads};

pub const CKPT_MAGIC: &str = "IVYCKPT v1";
const CKPT_PREFIX: &str = "IVYCKPT ";
const NETS: [&str; 4] = ["actor", "q", "v", "q_target"];
const CONFIG_KEYS: [&str; 13] = [
    "gamma",
    "tau",
    "beta",
    "max_weight",
    "lr",
    "batch",
    "epochs",
    "polyak",
    "optimizer",
    "terminal_at_call_end",
    "reward_scale",
    "hidden",
    "seed",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub nets: IqlNets<f32>,
    pub config: TrainConfig,
    /// Estimator names, in action-index order.
    pub pool: Vec<String>,
    /// Decision interval (s) of the data the policy was trained on.
    pub interval: f64,
    pub epochs_done: usize,
    /// Optimizer moments, kept so training can resume exactly.
    pub adam: Option<IqlAdam>,
}

impl Checkpoint {
    pub fn new(state: TrainState, pool: Vec<String>, interval: f64) -> Result<Self> {
        let ck = Self {
            nets: state.nets,
            config: state.config,
            pool,
            interval,
            epochs_done: state.epochs_done,
            adam: state.adam,
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn train_state(&self) -> TrainState {
        TrainState {
            nets: self.nets.clone(),
            config: self.config.clone(),
            epochs_done: self.epochs_done,
            adam: self.adam.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.pool.len();
        for (name, net) in self.named_nets() {
            if net.input_dim() != STATE_DIM {
                return Err(Error::Format(format!(
                    "{name}: input dim {} != {STATE_DIM}",
                    net.input_dim()
                )));
            }
            let out = if name == "v" { 1 } else { m };
            if net.output_dim() != out {
                return Err(Error::Format(format!(
                    "{name}: output dim {} != {out}",
                    net.output_dim()
                )));
            }
            if !net.is_finite() {
                return Err(Error::Format(format!("{name}: non-finite weights")));
            }
        }
        Ok(())
    }

    fn named_nets(&self) -> [(&'static str, &Mlp<f32>); 4] {
        [
            (NETS[0], &self.nets.actor),
            (NETS[1], &self.nets.q),
            (NETS[2], &self.nets.v),
            (NETS[3], &self.nets.q_target),
        ]
    }

    /// Greedy estimator choice for `state`.
    pub fn act(&self, state: &MetaState) -> usize {
        // Dimensions are checked at construction, so this cannot fail.
        greedy_action(&self.nets.actor, state.as_slice()).unwrap_or(0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut h = format!("{CKPT_MAGIC}\n");
        let _ = writeln!(h, "pool={}", self.pool.join(","));
        let _ = writeln!(h, "interval={}", self.interval);
        let _ = writeln!(h, "epochs_done={}", self.epochs_done);
        let values = [
            c.gamma.to_string(),
            c.tau.to_string(),
            c.beta.to_string(),
            c.max_weight.to_string(),
            c.lr.to_string(),
            c.batch.to_string(),
            c.epochs.to_string(),
            c.polyak.to_string(),
            c.optimizer.to_string(),
            c.terminal_at_call_end.to_string(),
            c.reward_scale.to_string(),
            c.hidden.to_string(),
            c.seed.to_string(),
        ];
        for (k, v) in CONFIG_KEYS.iter().zip(values) {
            let _ = writeln!(h, "{k}={v}");
        }
        for (name, net) in self.named_nets() {
            let sizes: Vec<String> = net.sizes().iter().map(ToString::to_string).collect();
            let _ = writeln!(h, "{name}={}", sizes.join(","));
        }
        match &self.adam {
            Some(a) => {
                let _ = writeln!(h, "adam_steps={}", a.actor.t);
            }
            None => h.push_str("adam_steps=none\n"),
        }
        h.push_str("weights\n");
        let mut out = h.into_bytes();
        let mut put = |values: &mut dyn Iterator<Item = &f32>| {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (_, net) in self.named_nets() {
            for layer in &net.layers {
                put(&mut layer.weight.iter().chain(layer.bias.iter()));
            }
        }
        if let Some(a) = &self.adam {
            for st in [&a.actor, &a.q, &a.v] {
                put(&mut st.m.iter());
                put(&mut st.v.iter());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], src: &str) -> Result<Self> {
        let mut pos = 0usize;
        let mut line_no = 0usize;
        let mut next_line = |what: &str| -> Result<(usize, String)> {
            let rest = &bytes[pos.min(bytes.len())..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| {
                Error::Format(format!("{src}: truncated header while reading {what}"))
            })?;
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| Error::Format(format!("{src}: header is not UTF-8")))?
                .to_string();
            pos += end + 1;
            line_no += 1;
            Ok((line_no, line))
        };

        let (_, magic) = next_line("magic")?;
        if magic != CKPT_MAGIC {
            return Err(match magic.strip_prefix(CKPT_PREFIX) {
                Some(v) => Error::Format(format!("{src}: unsupported checkpoint version `{v}`")),
                None => Error::Format(format!("{src}: not a checkpoint (bad magic)")),
            });
        }
        let mut field = |key: &str| -> Result<(usize, String)> {
            let (n, line) = next_line(key)?;
            match line.split_once('=') {
                Some((k, v)) if k == key => Ok((n, v.to_string())),
                _ => Err(Error::parse(
                    src,
                    n,
                    key,
                    format!("expected `{key}=...`, found `{line}`"),
                )),
            }
        };
        let num = |n: usize, key: &str, v: &str| -> Result<f64> {
            crate::trace::parse_num::<f64>(src, n, key, v)
        };
        let int = |n: usize, key: &str, v: &str| -> Result<u64> {
            crate::trace::parse_num::<u64>(src, n, key, v)
        };

        let (_, pool) = field("pool")?;
        let pool: Vec<String> = pool
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let (n, v) = field("interval")?;
        let interval = num(n, "interval", &v)?;
        let (n, v) = field("epochs_done")?;
        let epochs_done = int(n, "epochs_done", &v)? as usize;
        let mut cfg = Vec::with_capacity(CONFIG_KEYS.len());
        for key in CONFIG_KEYS {
            let (n, v) = field(key)?;
            cfg.push((n, key, v));
        }
        let f = |i: usize| num(cfg[i].0, cfg[i].1, &cfg[i].2);
        let u = |i: usize| int(cfg[i].0, cfg[i].1, &cfg[i].2);
        let config = TrainConfig {
            gamma: f(0)?,
            tau: f(1)?,
            beta: f(2)?,
            max_weight: f(3)?,
            lr: f(4)?,
            batch: u(5)? as usize,
            epochs: u(6)? as usize,
            polyak: f(7)?,
            optimizer: cfg[8]
                .2
                .parse()
                .map_err(|e: Error| Error::parse(src, cfg[8].0, "optimizer", e.to_string()))?,
            terminal_at_call_end: cfg[9].2.parse().map_err(|_| {
                Error::parse(
                    src,
                    cfg[9].0,
                    "terminal_at_call_end",
                    "expected true or false",
                )
            })?,
            reward_scale: cfg[10]
                .2
                .parse()
                .map_err(|e: Error| Error::parse(src, cfg[10].0, "reward_scale", e.to_string()))?,
            hidden: u(11)? as usize,
            seed: u(12)?,
        };
        let mut shapes = Vec::with_capacity(4);
        for key in NETS {
            let (n, v) = field(key)?;
            let sizes = v
                .split(',')
                .map(|s| int(n, key, s).map(|x| x as usize))
                .collect::<Result<Vec<usize>>>()?;
            if sizes.len() < 2 || sizes.contains(&0) {
                return Err(Error::parse(src, n, key, "invalid layer sizes"));
            }
            shapes.push(sizes);
        }
        let (n, v) = field("adam_steps")?;
        let adam_steps = match v.as_str() {
            "none" => None,
            s => Some(int(n, "adam_steps", s)?),
        };
        if adam_steps.is_some() != (config.optimizer == crate::rl::iql::Optimizer::Adam) {
            return Err(Error::parse(
                src,
                n,
                "adam_steps",
                "optimizer state does not match `optimizer`",
            ));
        }
        let (n, marker) = next_line("weights")?;
        if marker != "weights" {
            return Err(Error::parse(
                src,
                n,
                "weights",
                "expected the `weights` marker",
            ));
        }

        let params = |s: &Vec<usize>| s.windows(2).map(|w| (w[0] + 1) * w[1]).sum::<usize>();
        let mut floats_expected: usize = shapes.iter().map(params).sum();
        if adam_steps.is_some() {
            floats_expected += 2 * shapes[..3].iter().map(params).sum::<usize>();
        }
        let expected = floats_expected * 4;
        let body = &bytes[pos..];
        if body.len() != expected {
            return Err(Error::Format(format!(
                "{src}: weight section holds {} bytes, expected {expected} (truncated or corrupt file)",
                body.len()
            )));
        }
        let mut floats = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let mut read_net = |sizes: &[usize]| Mlp {
            layers: sizes
                .windows(2)
                .map(|w| Layer {
                    weight: Array2::from_shape_simple_fn((w[0], w[1]), || {
                        floats.next().unwrap_or(0.0)
                    }),
                    bias: Array1::from_shape_simple_fn(w[1], || floats.next().unwrap_or(0.0)),
                })
                .collect(),
        };
        let actor = read_net(&shapes[0]);
        let q = read_net(&shapes[1]);
        let v = read_net(&shapes[2]);
        let q_target = read_net(&shapes[3]);
        let adam = adam_steps.map(|t| {
            let mut moments = |net: &Mlp<f32>| {
                let mut read = || {
                    let m = read_net(&net.sizes());
                    MlpGrads {
                        weight: m.layers.iter().map(|l| l.weight.clone()).collect(),
                        bias: m.layers.iter().map(|l| l.bias.clone()).collect(),
                    }
                };
                let m = read();
                let v = read();
                AdamState { m, v, t }
            };
            IqlAdam {
                actor: moments(&actor),
                q: moments(&q),
                v: moments(&v),
            }
        });
        let ck = Self {
            nets: IqlNets {
                actor,
                q,
                v,
                q_target,
            },
            config,
            pool,
            interval,
            epochs_done,
            adam,
        };
        ck.validate()
            .map_err(|e| Error::Format(format!("{src}: {e}")))?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

/// The trained metapolicy: picks the actor's greedy estimator at each decision.
#[derive(Debug, Clone)]
pub struct IqlPolicy {
    checkpoint: Arc<Checkpoint>,
    name: String,
}

impl IqlPolicy {
    pub fn new(checkpoint: Arc<Checkpoint>) -> Self {
        Self {
            checkpoint,
            name: "ivy".into(),
        }
    }

    pub fn named(checkpoint: Arc<Checkpoint>, name: impl Into<String>) -> Self {
        Self {
            checkpoint,
            name: name.into(),
        }
    }
}

impl Metapolicy for IqlPolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> usize {
        self.checkpoint.act(ctx.state)
    }
}
