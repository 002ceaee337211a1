//! Implicit Q-Learning over the discrete estimator pool.
//!
//! V is fitted to the τ-expectile of the target Q over dataset actions, Q is
//! fitted to the one-step TD target `r + γ(1 − done)V(s')`, and the actor is
//! extracted by advantage-weighted regression. No action outside the dataset
//! is ever evaluated.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::meta::dataset::{Dataset, Transition};
use crate::meta::state::{MetaState, STATE_DIM};
use crate::rl::mlp::{log_softmax, softmax, AdamState, Mlp, MlpGrads};
use crate::rng::{derive_seed, label, rng_from};
use crate::scalar::Scalar;

/// Update rule applied to the gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Plain gradient descent, no momentum.
    Sgd,
    /// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    Adam,
}

impl Optimizer {
    pub fn as_str(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        }
    }
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::Config(format!(
                "unknown optimizer `{other}` (expected sgd or adam)"
            ))),
        }
    }
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Multiplier applied to dataset rewards before training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardScale {
    /// `1000 / (max − min)` over the per-call reward sums of the dataset.
    Auto,
    Fixed(f64),
}

/// Sum of per-call returns the automatic scale maps onto.
pub const AUTO_RETURN_SPAN: f64 = 1000.0;

impl RewardScale {
    /// The factor for `dataset`. `Auto` falls back to 1 when every call has
    /// the same return.
    pub fn factor(self, dataset: &Dataset) -> f64 {
        match self {
            RewardScale::Fixed(k) => k,
            RewardScale::Auto => {
                let mut returns: BTreeMap<&str, f64> = BTreeMap::new();
                for r in &dataset.records {
                    *returns.entry(r.call.as_str()).or_default() += r.transition.reward;
                }
                let lo = returns.values().copied().fold(f64::INFINITY, f64::min);
                let hi = returns.values().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi - lo > 1e-9 {
                    AUTO_RETURN_SPAN / (hi - lo)
                } else {
                    1.0
                }
            }
        }
    }
}

impl std::str::FromStr for RewardScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(RewardScale::Auto);
        }
        match s.parse::<f64>() {
            Ok(k) if k.is_finite() && k > 0.0 => Ok(RewardScale::Fixed(k)),
            _ => Err(Error::Config(format!(
                "reward scale must be `auto` or a positive number, got `{s}`"
            ))),
        }
    }
}

impl std::fmt::Display for RewardScale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RewardScale::Auto => f.write_str("auto"),
            RewardScale::Fixed(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Expectile used for the value regression.
    pub tau: f64,
    /// Advantage temperature.
    pub beta: f64,
    /// Upper bound on the advantage weight.
    pub max_weight: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub polyak: f64,
    pub optimizer: Optimizer,
    /// Treat the last interval of a call as terminal. Calls end on a clock
    /// the state cannot see, so by default the end is handled as a time limit
    /// and the target still bootstraps from V(s').
    pub terminal_at_call_end: bool,
    pub reward_scale: RewardScale,
    /// Width of both hidden layers.
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            tau: 0.7,
            beta: 3.0,
            max_weight: 100.0,
            lr: 1e-4,
            batch: 128,
            epochs: 200,
            polyak: 0.005,
            optimizer: Optimizer::Adam,
            terminal_at_call_end: false,
            reward_scale: RewardScale::Auto,
            hidden: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let open01 = |v: f64| v > 0.0 && v < 1.0;
        if !open01(self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if !open01(self.tau) {
            return Err(Error::Config(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden must be >= 1".into()));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        if !(self.max_weight.is_finite() && self.max_weight >= 1.0) {
            return Err(Error::Config(format!(
                "max_weight must be >= 1, got {}",
                self.max_weight
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if let RewardScale::Fixed(k) = self.reward_scale {
            if !(k.is_finite() && k > 0.0) {
                return Err(Error::Config(format!("reward_scale must be > 0, got {k}")));
            }
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return Err(Error::Config(format!(
                "polyak must lie in [0, 1], got {}",
                self.polyak
            )));
        }
        Ok(())
    }
}

/// `|τ − 1(u < 0)| · u²`
pub fn expectile_loss<T: Scalar>(u: T, tau: T) -> T {
    let w = if u < T::zero() { T::one() - tau } else { tau };
    w * u * u
}

#[derive(Debug, Clone, PartialEq)]
pub struct IqlNets<T> {
    pub actor: Mlp<T>,
    pub q: Mlp<T>,
    pub v: Mlp<T>,
    pub q_target: Mlp<T>,
}

impl<T: Scalar> IqlNets<T> {
    /// Fresh networks; the target starts as a copy of Q.
    pub fn new(input: usize, hidden: usize, actions: usize, seed: u64) -> Self {
        let init = |name: &str, out: usize| {
            Mlp::new(
                &[input, hidden, hidden, out],
                &mut rng_from(derive_seed(seed, &[label(name)])),
            )
        };
        let q = init("q", actions);
        Self {
            actor: init("actor", actions),
            q_target: q.clone(),
            q,
            v: init("v", 1),
        }
    }

    pub fn actions(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn cast<U: Scalar>(&self) -> IqlNets<U> {
        IqlNets {
            actor: self.actor.cast(),
            q: self.q.cast(),
            v: self.v.cast(),
            q_target: self.q_target.cast(),
        }
    }

    fn check(&self) -> Result<()> {
        let m = self.actor.output_dim();
        if self.q.output_dim() != m || self.q_target.output_dim() != m {
            return Err(Error::Dimension {
                expected: m,
                got: self.q.output_dim(),
            });
        }
        if self.v.output_dim() != 1 {
            return Err(Error::Dimension {
                expected: 1,
                got: self.v.output_dim(),
            });
        }
        Ok(())
    }
}

/// A minibatch in matrix form.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub states: Array2<T>,
    pub actions: Vec<usize>,
    pub rewards: Array1<T>,
    pub next_states: Array2<T>,
    pub dones: Array1<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_transitions<'a>(items: impl IntoIterator<Item = &'a Transition>) -> Self {
        let items: Vec<&Transition> = items.into_iter().collect();
        let n = items.len();
        let row = |s: &MetaState, j: usize| T::lit(f64::from(s.0[j]));
        Self {
            states: Array2::from_shape_fn((n, STATE_DIM), |(i, j)| row(&items[i].state, j)),
            actions: items.iter().map(|t| t.action).collect(),
            rewards: items.iter().map(|t| T::lit(t.reward)).collect(),
            next_states: Array2::from_shape_fn((n, STATE_DIM), |(i, j)| {
                row(&items[i].next_state, j)
            }),
            dones: items
                .iter()
                .map(|t| if t.done { T::one() } else { T::zero() })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqlLosses<T> {
    pub loss_v: T,
    pub loss_q: T,
    pub loss_pi: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IqlGrads<T> {
    pub actor: MlpGrads<T>,
    pub q: MlpGrads<T>,
    pub v: MlpGrads<T>,
    /// Advantage weights applied to each sample of the policy loss.
    pub weights: Vec<T>,
}

/// Losses and gradients of the three trained networks on one batch.
///
/// Each network is differentiated on its own: the value targets, TD targets
/// and advantage weights are constants.
pub fn iql_losses<T: Scalar>(
    nets: &IqlNets<T>,
    batch: &Batch<T>,
    cfg: &TrainConfig,
) -> Result<(IqlLosses<T>, IqlGrads<T>)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    nets.check()?;
    let m = nets.actions();
    if let Some(&a) = batch.actions.iter().find(|&&a| a >= m) {
        return Err(Error::InvalidInput(format!(
            "action {a} outside pool of {m}"
        )));
    }
    let n = batch.len();
    let inv_n = T::one() / T::lit(n as f64);
    let two = T::lit(2.0);
    let tau = T::lit(cfg.tau);
    let gamma = T::lit(cfg.gamma);
    let beta = T::lit(cfg.beta);
    let log_cap = T::lit(cfg.max_weight.ln());

    let q_target = nets.q_target.forward(batch.states.view())?.output;
    let v_cache = nets.v.forward(batch.states.view())?;
    let v_next = nets.v.forward(batch.next_states.view())?.output;
    let q_cache = nets.q.forward(batch.states.view())?;
    let pi_cache = nets.actor.forward(batch.states.view())?;

    let mut d_v = Array2::zeros((n, 1));
    let mut d_q = Array2::zeros((n, m));
    let mut loss_v = T::zero();
    let mut loss_q = T::zero();
    let mut loss_pi = T::zero();

    let probs = softmax(&pi_cache.output);
    let logp = log_softmax(&pi_cache.output);
    let mut d_pi = Array2::zeros((n, m));
    let mut weights = Vec::with_capacity(n);

    for i in 0..n {
        let a = batch.actions[i];
        let adv = q_target[[i, a]] - v_cache.output[[i, 0]];

        // Expectile regression of V towards Q_target.
        let w_exp = if adv < T::zero() { T::one() - tau } else { tau };
        loss_v += w_exp * adv * adv;
        d_v[[i, 0]] = -two * w_exp * adv * inv_n;

        // TD regression of Q.
        let y = batch.rewards[i] + gamma * (T::one() - batch.dones[i]) * v_next[[i, 0]];
        let td = y - q_cache.output[[i, a]];
        loss_q += td * td;
        d_q[[i, a]] = -two * td * inv_n;

        // Advantage-weighted log-likelihood; the cap is applied in log space.
        let w = (beta * adv).min(log_cap).exp();
        weights.push(w);
        loss_pi -= w * logp[[i, a]];
        for j in 0..m {
            let onehot = if j == a { T::one() } else { T::zero() };
            d_pi[[i, j]] = w * (probs[[i, j]] - onehot) * inv_n;
        }
    }

    let losses = IqlLosses {
        loss_v: loss_v * inv_n,
        loss_q: loss_q * inv_n,
        loss_pi: loss_pi * inv_n,
    };
    for (name, v) in [
        ("loss_v", losses.loss_v),
        ("loss_q", losses.loss_q),
        ("loss_pi", losses.loss_pi),
    ] {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("{name} is not finite ({v})")));
        }
    }
    let grads = IqlGrads {
        actor: nets.actor.backward(&pi_cache, d_pi.view()),
        q: nets.q.backward(&q_cache, d_q.view()),
        v: nets.v.backward(&v_cache, d_v.view()),
        weights,
    };
    Ok((losses, grads))
}

/// Mean losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss_v: f64,
    pub loss_q: f64,
    pub loss_pi: f64,
}

/// Visiting order for one epoch: calls are shuffled, then the transitions of
/// each call, and the result is concatenated. Minibatches are consecutive
/// slices of this order, so a batch holds transitions from few calls.
pub fn epoch_order(dataset: &Dataset, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = rng_from(derive_seed(seed, &[label("shuffle"), epoch as u64]));
    let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (i, r) in dataset.records.iter().enumerate() {
        let g = *index.entry(r.call.as_str()).or_insert_with(|| {
            groups.push((r.call.as_str(), Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(i);
    }
    // Sort by call id so the order does not depend on file layout.
    groups.sort_by(|a, b| a.0.cmp(b.0));
    groups.shuffle(&mut rng);
    let mut order = Vec::with_capacity(dataset.len());
    for (_, mut idx) in groups {
        idx.shuffle(&mut rng);
        order.extend(idx);
    }
    order
}

/// Adam moments of the three trained networks.
#[derive(Debug, Clone, PartialEq)]
pub struct IqlAdam {
    pub actor: AdamState<f32>,
    pub q: AdamState<f32>,
    pub v: AdamState<f32>,
}

impl IqlAdam {
    pub fn new(nets: &IqlNets<f32>) -> Self {
        Self {
            actor: AdamState::new(&nets.actor),
            q: AdamState::new(&nets.q),
            v: AdamState::new(&nets.v),
        }
    }
}

/// Training state that can be saved and resumed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub nets: IqlNets<f32>,
    pub config: TrainConfig,
    pub epochs_done: usize,
    /// Present when training with Adam.
    pub adam: Option<IqlAdam>,
}

impl TrainState {
    pub fn init(config: TrainConfig, actions: usize) -> Result<Self> {
        config.validate()?;
        if actions == 0 {
            return Err(Error::Config(
                "pool must hold at least one estimator".into(),
            ));
        }
        let nets = IqlNets::new(STATE_DIM, config.hidden, actions, config.seed);
        let adam = (config.optimizer == Optimizer::Adam).then(|| IqlAdam::new(&nets));
        Ok(Self {
            nets,
            config,
            epochs_done: 0,
            adam,
        })
    }

    /// Runs `epochs` more epochs, continuing the shuffle stream where it left off.
    pub fn run(&mut self, dataset: &Dataset, epochs: usize) -> Result<Vec<EpochLoss>> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if self.adam.is_some() != (self.config.optimizer == Optimizer::Adam) {
            return Err(Error::Config(
                "optimizer state does not match the configured optimizer".into(),
            ));
        }
        if dataset.pool != self.nets.actions() {
            return Err(Error::Dimension {
                expected: self.nets.actions(),
                got: dataset.pool,
            });
        }
        let cfg = self.config.clone();
        let lr = cfg.lr as f32;
        let polyak = cfg.polyak as f32;
        let scale = cfg.reward_scale.factor(dataset) as f32;
        let mut trace = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let epoch = self.epochs_done;
            let order = epoch_order(dataset, cfg.seed, epoch);
            let (mut sv, mut sq, mut sp, mut steps) = (0.0, 0.0, 0.0, 0usize);
            for chunk in order.chunks(cfg.batch) {
                let mut batch = Batch::<f32>::from_transitions(
                    chunk.iter().map(|&i| &dataset.records[i].transition),
                );
                batch.rewards *= scale;
                if !cfg.terminal_at_call_end {
                    batch.dones.fill(0.0);
                }
                let (l, g) =
                    iql_losses(&self.nets, &batch, &cfg).map_err(|e| annotate(e, epoch, steps))?;
                match &mut self.adam {
                    Some(adam) => {
                        adam.v.step(&mut self.nets.v, &g.v, lr);
                        adam.q.step(&mut self.nets.q, &g.q, lr);
                        adam.actor.step(&mut self.nets.actor, &g.actor, lr);
                    }
                    None => {
                        self.nets.v.sgd_step(&g.v, lr);
                        self.nets.q.sgd_step(&g.q, lr);
                        self.nets.actor.sgd_step(&g.actor, lr);
                    }
                }
                self.nets.q_target.polyak_from(&self.nets.q, polyak);
                sv += f64::from(l.loss_v);
                sq += f64::from(l.loss_q);
                sp += f64::from(l.loss_pi);
                steps += 1;
            }
            if !(self.nets.v.is_finite() && self.nets.q.is_finite() && self.nets.actor.is_finite())
            {
                return Err(Error::Numerical(format!(
                    "non-finite weights after epoch {epoch}"
                )));
            }
            let k = steps as f64;
            trace.push(EpochLoss {
                epoch,
                loss_v: sv / k,
                loss_q: sq / k,
                loss_pi: sp / k,
            });
            self.epochs_done += 1;
        }
        Ok(trace)
    }
}

fn annotate(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, step {step}: {m}")),
        other => other,
    }
}

/// Greedy action: argmax of the actor's probabilities, ties to the lowest index.
pub fn greedy_action<T: Scalar>(actor: &Mlp<T>, state: &[T]) -> Result<usize> {
    let logits = actor.predict(state)?;
    let row = Array2::from_shape_vec((1, logits.len()), logits)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(argmax_first(softmax(&row).row(0).iter().copied()))
}

/// Index of the largest value, first one on ties.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn argmax_first<T: PartialOrd>(values: impl IntoIterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match &best {
            Some((_, b)) if !(v > *b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(0, |(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::dataset::Record;
    use crate::rl::mlp::Layer;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn expectile_loss_examples() {
        assert_eq!(expectile_loss(2.0, 0.5), 2.0);
        assert!((expectile_loss(-1.0f64, 0.7) - 0.3).abs() < 1e-12);
    }

    /// Golden-section search over c ∈ [lo, hi] for Σ expectile_loss(x − c).
    fn minimize_expectile(xs: &[f64], tau: f64) -> f64 {
        let f = |c: f64| xs.iter().map(|&x| expectile_loss(x - c, tau)).sum::<f64>();
        let (mut lo, mut hi) = (-100.0, 100.0);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if f(a) < f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        (lo + hi) / 2.0
    }

    /// τ-expectile by fixed-point iteration of its first-order condition:
    /// c = Σ w_i x_i / Σ w_i with w_i = τ if x_i ≥ c else 1 − τ.
    fn expectile_fixed_point(xs: &[f64], tau: f64) -> f64 {
        let mut c = xs.iter().sum::<f64>() / xs.len() as f64;
        for _ in 0..1000 {
            let (mut num, mut den) = (0.0, 0.0);
            for &x in xs {
                let w = if x >= c { tau } else { 1.0 - tau };
                num += w * x;
                den += w;
            }
            c = num / den;
        }
        c
    }

    #[test]
    fn expectile_minimizer_of_mean_example() {
        assert!((minimize_expectile(&[0.0, 0.0, 0.0, 10.0], 0.5) - 2.5).abs() < 1e-6);
    }

    #[test]
    fn expectile_recovery_by_gradient_descent() {
        let mut rng = rng_from(5);
        let xs: Vec<f64> = (0..200).map(|_| rng.random_range(-3.0..7.0)).collect();
        for tau in [0.5, 0.7, 0.9] {
            let oracle = expectile_fixed_point(&xs, tau);
            assert!((minimize_expectile(&xs, tau) - oracle).abs() < 1e-6);
            // Fit a constant predictor with the same gradient used for V.
            let mut c = 0.0;
            for _ in 0..5000 {
                let g: f64 = xs
                    .iter()
                    .map(|&x| {
                        let u = x - c;
                        let w = if u < 0.0 { 1.0 - tau } else { tau };
                        -2.0 * w * u
                    })
                    .sum::<f64>()
                    / xs.len() as f64;
                c -= 0.1 * g;
            }
            assert!((c - oracle).abs() < 1e-2, "tau {tau}: {c} vs {oracle}");
        }
    }

    fn transition(
        state: [f32; 2],
        action: usize,
        reward: f64,
        next: [f32; 2],
        done: bool,
    ) -> Transition {
        let mut s = MetaState::default();
        s.0[..2].copy_from_slice(&state);
        let mut s2 = MetaState::default();
        s2.0[..2].copy_from_slice(&next);
        Transition {
            state: s,
            action,
            reward,
            next_state: s2,
            done,
        }
    }

    /// Constant-output network over the 65-dim state: zero weights, bias = `out`.
    fn constant_net(hidden: usize, out: &[f64]) -> Mlp<f64> {
        let mut net = Mlp::zeros(&[STATE_DIM, hidden, hidden, out.len()]);
        net.layers[2].bias = Array1::from(out.to_vec());
        net
    }

    #[test]
    fn zero_advantage_gives_zero_value_loss_and_unit_weights() {
        let nets = IqlNets {
            actor: constant_net(4, &[0.0, 0.0]),
            q: constant_net(4, &[1.0, 2.0]),
            v: constant_net(4, &[3.0]),
            q_target: constant_net(4, &[3.0, 3.0]),
        };
        let batch = Batch::from_transitions(&[
            transition([0.1, 0.2], 0, 2.0, [0.0, 0.0], false),
            transition([0.3, 0.4], 1, 4.0, [0.0, 0.0], true),
        ]);
        let (l, g) = iql_losses(&nets, &batch, &TrainConfig::default()).unwrap();
        assert_eq!(l.loss_v, 0.0);
        assert!(g.weights.iter().all(|&w| w == 1.0));
        // Both actions equally likely: −log(1/2).
        assert!((l.loss_pi - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn terminal_transition_ignores_next_value() {
        let nets = IqlNets {
            actor: constant_net(4, &[0.0, 0.0]),
            q: constant_net(4, &[0.5, 1.25]),
            v: constant_net(4, &[40.0]),
            q_target: constant_net(4, &[0.0, 0.0]),
        };
        let batch = Batch::from_transitions(&[transition([0.0, 0.0], 1, 2.0, [1.0, 1.0], true)]);
        let (l, _) = iql_losses(&nets, &batch, &TrainConfig::default()).unwrap();
        assert!((l.loss_q - (2.0f64 - 1.25).powi(2)).abs() < 1e-12);
    }

    /// Tiny nets reading only the first two state entries, evaluated by hand.
    #[test]
    fn hand_computed_single_sample_losses() {
        // Input x = (1, 2, 0, ...). Every net: h1 = relu(x·W1), h2 = relu(h1·W2), y = h2·W3 + b3,
        // with W1 picking x0 and x1 into two units and W2 = identity.
        fn net(w3: &[[f64; 2]], b3: &[f64]) -> Mlp<f64> {
            let mut w1 = Array2::zeros((STATE_DIM, 2));
            w1[[0, 0]] = 1.0;
            w1[[1, 1]] = 1.0;
            let out = b3.len();
            let mut w = Array2::zeros((2, out));
            for (j, col) in w3.iter().enumerate() {
                w[[0, j]] = col[0];
                w[[1, j]] = col[1];
            }
            Mlp {
                layers: vec![
                    Layer {
                        weight: w1,
                        bias: Array1::zeros(2),
                    },
                    Layer {
                        weight: array![[1.0, 0.0], [0.0, 1.0]],
                        bias: Array1::zeros(2),
                    },
                    Layer {
                        weight: w,
                        bias: Array1::from(b3.to_vec()),
                    },
                ],
            }
        }
        // h2 = (1, 2) on s, (0.5, 0) on s2.
        let nets = IqlNets {
            actor: net(&[[1.0, 0.0], [0.0, 1.0]], &[0.0, 0.0]), // logits (1, 2)
            q: net(&[[1.0, 1.0], [0.5, 0.0]], &[0.0, 0.0]),     // Q(s) = (3, 0.5)
            v: net(&[[2.0, 0.0]], &[0.0]),                      // V(s) = 2, V(s2) = 1
            q_target: net(&[[1.0, 0.5], [0.0, 0.0]], &[0.0, 0.0]), // Qt(s) = (2, 0)
        };
        let batch = Batch::from_transitions(&[transition([1.0, 2.0], 0, 1.5, [0.5, 0.0], false)]);
        let cfg = TrainConfig {
            gamma: 0.9,
            tau: 0.7,
            beta: 3.0,
            ..TrainConfig::default()
        };
        let (l, g) = iql_losses(&nets, &batch, &cfg).unwrap();
        // adv = Qt(s,0) − V(s) = 2 − 2 = 0; loss_v = 0; w = 1.
        assert_eq!(l.loss_v, 0.0);
        assert_eq!(g.weights, vec![1.0]);
        // y = 1.5 + 0.9·1 = 2.4; loss_q = (2.4 − 3)² = 0.36.
        assert!((l.loss_q - 0.36).abs() < 1e-12);
        // −log softmax((1,2))[0] = log(1 + e).
        assert!((l.loss_pi - (1.0 + 1f64.exp()).ln()).abs() < 1e-12);

        // Shift V down so the advantage is 0.5: loss_v = 0.7·0.25, w = e^1.5.
        let mut nets2 = nets.clone();
        nets2.v.layers[2].bias[0] = -0.5;
        let (l2, g2) = iql_losses(&nets2, &batch, &cfg).unwrap();
        assert!((l2.loss_v - 0.7 * 0.25).abs() < 1e-12);
        assert!((g2.weights[0] - 1.5f64.exp()).abs() < 1e-12);
        // V(s2) is now 0.5: y = 1.5 + 0.45 = 1.95.
        assert!((l2.loss_q - (1.95f64 - 3.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn advantage_weight_is_capped() {
        let nets = IqlNets {
            actor: constant_net(4, &[0.0, 0.0]),
            q: constant_net(4, &[0.0, 0.0]),
            v: constant_net(4, &[0.0]),
            q_target: constant_net(4, &[1000.0, 0.0]),
        };
        let batch = Batch::from_transitions(&[transition([0.0, 0.0], 0, 1.0, [0.0, 0.0], true)]);
        let (_, g) = iql_losses(&nets, &batch, &TrainConfig::default()).unwrap();
        assert!((g.weights[0] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_action_and_empty_batch_rejected() {
        let nets = IqlNets::<f64>::new(STATE_DIM, 4, 2, 1);
        let batch = Batch::from_transitions(&[transition([0.0, 0.0], 2, 1.0, [0.0, 0.0], true)]);
        assert!(iql_losses(&nets, &batch, &TrainConfig::default()).is_err());
        let empty = Batch::<f64>::from_transitions(&[]);
        assert!(matches!(
            iql_losses(&nets, &empty, &TrainConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    fn loss_of(nets: &IqlNets<f64>, batch: &Batch<f64>, cfg: &TrainConfig, which: usize) -> f64 {
        let (l, _) = iql_losses(nets, batch, cfg).unwrap();
        [l.loss_v, l.loss_q, l.loss_pi][which]
    }

    fn random_batch(rng: &mut crate::rng::SimRng, n: usize, m: usize) -> Batch<f64> {
        let items: Vec<Transition> = (0..n)
            .map(|_| {
                let mut s = MetaState::default();
                let mut s2 = MetaState::default();
                for j in 0..STATE_DIM {
                    s.0[j] = rng.random_range(-1.0..1.0);
                    s2.0[j] = rng.random_range(-1.0..1.0);
                }
                Transition {
                    state: s,
                    action: rng.random_range(0..m),
                    reward: rng.random_range(1.0..5.0),
                    next_state: s2,
                    done: rng.random_bool(0.2),
                }
            })
            .collect();
        Batch::from_transitions(&items)
    }

    #[test]
    fn iql_gradients_match_finite_differences() {
        let mut rng = rng_from(99);
        let cfg = TrainConfig {
            beta: 0.5,
            ..TrainConfig::default()
        };
        let eps = 1e-4;
        let mut worst: f64 = 0.0;
        for trial in 0..100 {
            let m = 2 + trial % 3;
            let nets = IqlNets::<f64>::new(STATE_DIM, 3 + trial % 4, m, 1000 + trial as u64);
            let batch = random_batch(&mut rng, 3, m);
            let (_, g) = iql_losses(&nets, &batch, &cfg).unwrap();
            for which in 0..3 {
                let analytic: Vec<f64> = match which {
                    0 => g.v.iter().copied().collect(),
                    1 => g.q.iter().copied().collect(),
                    _ => g.actor.iter().copied().collect(),
                };
                // Spot-check a spread of parameters in every layer.
                let count = analytic.len();
                for k in (0..count).step_by(1 + count / 40) {
                    let mut up = nets.clone();
                    let mut down = nets.clone();
                    {
                        let net_up = match which {
                            0 => &mut up.v,
                            1 => &mut up.q,
                            _ => &mut up.actor,
                        };
                        *net_up.params_mut().nth(k).unwrap() += eps;
                        let net_down = match which {
                            0 => &mut down.v,
                            1 => &mut down.q,
                            _ => &mut down.actor,
                        };
                        *net_down.params_mut().nth(k).unwrap() -= eps;
                    }
                    // Each loss depends on its own network only through the
                    // differentiated path; targets come from the other nets.
                    let numeric = (loss_of(&up, &batch, &cfg, which)
                        - loss_of(&down, &batch, &cfg, which))
                        / (2.0 * eps);
                    let diff = (numeric - analytic[k]).abs();
                    let scale = numeric.abs().max(analytic[k].abs());
                    // Kinks of ReLU and of the expectile weight make tiny
                    // gradients noisy; compare absolutely when both are tiny.
                    let rel = if scale < 1e-6 { diff } else { diff / scale };
                    worst = worst.max(rel);
                }
            }
        }
        assert!(worst < 1e-4, "max relative gradient error {worst}");
    }

    fn dataset_from(items: Vec<(String, Transition)>, pool: usize) -> Dataset {
        let mut ds = Dataset::new(pool, 6.0);
        for (call, t) in items {
            ds.records.push(Record {
                transition: t,
                call,
                gap: None,
            });
        }
        ds
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let mut rng = rng_from(1);
        let items = (0..10)
            .map(|i| {
                (
                    format!("c{}", i / 5),
                    transition([rng.random(), 0.0], i % 2, 3.0, [0.0, 0.0], i % 5 == 4),
                )
            })
            .collect();
        let ds = dataset_from(items, 2);
        let cfg = TrainConfig {
            epochs: 0,
            hidden: 8,
            seed: 4,
            ..TrainConfig::default()
        };
        let init = TrainState::init(cfg.clone(), 2).unwrap();
        let mut st = init.clone();
        let trace = st.run(&ds, cfg.epochs).unwrap();
        assert!(trace.is_empty());
        assert_eq!(st, init);
    }

    #[test]
    fn call_end_bootstraps_unless_configured_terminal() {
        let t = transition([0.5, 0.25], 1, 3.0, [0.1, 0.9], true);
        let ds = dataset_from(vec![("c".into(), t.clone())], 2);
        for terminal in [false, true] {
            let cfg = TrainConfig {
                hidden: 6,
                seed: 2,
                optimizer: Optimizer::Sgd,
                terminal_at_call_end: terminal,
                ..TrainConfig::default()
            };
            let mut st = TrainState::init(cfg.clone(), 2).unwrap();
            let mut expected = st.nets.clone();
            let mut batch = Batch::<f32>::from_transitions([&t]);
            if !terminal {
                batch.dones.fill(0.0);
            }
            let (_, g) = iql_losses(&expected, &batch, &cfg).unwrap();
            expected.q.sgd_step(&g.q, cfg.lr as f32);
            st.run(&ds, 1).unwrap();
            assert_eq!(st.nets.q, expected.q, "terminal = {terminal}");
        }
    }

    #[test]
    fn auto_reward_scale_maps_return_span_to_a_thousand() {
        let items = vec![
            (
                "a".into(),
                transition([0.0, 0.0], 0, 4.0, [0.0, 0.0], false),
            ),
            ("a".into(), transition([0.0, 0.0], 1, 6.0, [0.0, 0.0], true)),
            (
                "b".into(),
                transition([0.0, 0.0], 0, 30.0, [0.0, 0.0], true),
            ),
            (
                "c".into(),
                transition([0.0, 0.0], 0, 20.0, [0.0, 0.0], true),
            ),
        ];
        let ds = dataset_from(items, 2);
        assert!((RewardScale::Auto.factor(&ds) - 1000.0 / 20.0).abs() < 1e-12);
        assert_eq!(RewardScale::Fixed(0.5).factor(&ds), 0.5);
        let flat = dataset_from(
            vec![("a".into(), transition([0.0, 0.0], 0, 4.0, [0.0, 0.0], true))],
            2,
        );
        assert_eq!(RewardScale::Auto.factor(&flat), 1.0);
        assert_eq!("auto".parse::<RewardScale>().unwrap(), RewardScale::Auto);
        assert_eq!(
            "2.5".parse::<RewardScale>().unwrap(),
            RewardScale::Fixed(2.5)
        );
        assert!("0".parse::<RewardScale>().is_err());
        assert!("-1".parse::<RewardScale>().is_err());
    }

    #[test]
    fn reward_scale_is_equivalent_to_scaled_rewards() {
        let make = |k: f64| {
            let mut rng = rng_from(8);
            let items: Vec<(String, Transition)> = (0..40)
                .map(|i| {
                    let r: f64 = rng.random_range(1.0..4.0);
                    let s = [rng.random(), rng.random()];
                    (
                        format!("c{}", i / 10),
                        transition(s, i % 2, k * r, [0.2, 0.3], i % 10 == 9),
                    )
                })
                .collect();
            dataset_from(items, 2)
        };
        let cfg = |scale| TrainConfig {
            hidden: 8,
            batch: 16,
            seed: 5,
            reward_scale: scale,
            ..TrainConfig::default()
        };
        let mut scaled = TrainState::init(cfg(RewardScale::Fixed(4.0)), 2).unwrap();
        scaled.run(&make(1.0), 3).unwrap();
        let mut raw = TrainState::init(cfg(RewardScale::Fixed(1.0)), 2).unwrap();
        raw.run(&make(4.0), 3).unwrap();
        assert_eq!(scaled.nets, raw.nets);
    }

    #[test]
    fn empty_dataset_and_pool_mismatch_rejected() {
        let mut st = TrainState::init(
            TrainConfig {
                hidden: 4,
                ..TrainConfig::default()
            },
            3,
        )
        .unwrap();
        assert!(matches!(
            st.run(&Dataset::new(3, 6.0), 1),
            Err(Error::EmptyDataset)
        ));
        let ds = dataset_from(
            vec![("a".into(), transition([0.0, 0.0], 0, 1.0, [0.0, 0.0], true))],
            2,
        );
        assert!(st.run(&ds, 1).is_err());
    }

    #[test]
    fn epoch_order_is_a_grouped_permutation() {
        let items = (0..40)
            .map(|i| {
                (
                    format!("call{}", i % 4),
                    transition([i as f32, 0.0], 0, 1.0, [0.0, 0.0], false),
                )
            })
            .collect();
        let ds = dataset_from(items, 1);
        let order = epoch_order(&ds, 3, 0);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..40).collect::<Vec<_>>());
        // Each call's transitions are contiguous.
        for chunk in order.chunks(10) {
            let call = &ds.records[chunk[0]].call;
            assert!(chunk.iter().all(|&i| &ds.records[i].call == call));
        }
        assert_eq!(order, epoch_order(&ds, 3, 0));
        assert_ne!(order, epoch_order(&ds, 3, 1));
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        assert_eq!(argmax_first([0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax_first([0.5, 0.5]), 0);
        assert_eq!(argmax_first([1.0, 3.0, 3.0]), 1);
        let zero = Mlp::<f32>::zeros(&[STATE_DIM, 8, 8, 3]);
        assert_eq!(greedy_action(&zero, &[0.3; STATE_DIM]).unwrap(), 0);
    }
}
