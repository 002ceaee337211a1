//! Offline experience collection with the uniformly random behaviour policy.

use rand::Rng;
use rayon::prelude::*;

use crate::bwe::{make_pool, BweParams};
use crate::error::{Error, Result};
use crate::meta::dataset::Dataset;
use crate::meta::policy::RandomPolicy;
use crate::rng::{derive_seed, label, rng_from};
use crate::sim::{run_call, CallLog, SimConfig};
use crate::trace::{generate_trace, Regime, Trace};

#[derive(Debug, Clone)]
pub struct CollectSpec {
    pub calls: usize,
    /// Each call's regime is drawn uniformly from this list.
    pub regimes: Vec<Regime>,
    pub pool: Vec<String>,
    pub bwe: BweParams,
    pub sim: SimConfig,
    pub seed: u64,
}

/// Training trace `i`; seeded from a stream distinct from the holdout traces.
pub fn training_trace(spec: &CollectSpec, i: usize) -> Result<Trace> {
    let mut rng = rng_from(derive_seed(spec.seed, &[label("train-regime"), i as u64]));
    let regime = spec.regimes[rng.random_range(0..spec.regimes.len())];
    let seed = derive_seed(spec.seed, &[label("train"), i as u64]);
    generate_trace(regime, seed, spec.sim.call_duration)
}

pub fn call_id(i: usize) -> String {
    format!("call-{i:05}")
}

/// Runs `spec.calls` calls under the random policy and logs every interval.
pub fn collect(spec: &CollectSpec) -> Result<Dataset> {
    if spec.regimes.is_empty() {
        return Err(Error::Config("no regimes to collect from".into()));
    }
    spec.sim.validate()?;
    make_pool(&spec.pool, &spec.bwe)?;
    let logs: Vec<CallLog> = (0..spec.calls)
        .into_par_iter()
        .map(|i| {
            let trace = training_trace(spec, i)?;
            let mut pool = make_pool(&spec.pool, &spec.bwe)?;
            let mut policy =
                RandomPolicy::new(derive_seed(spec.seed, &[label("behaviour"), i as u64]));
            let sim_seed = derive_seed(spec.seed, &[label("train-sim"), i as u64]);
            run_call(&trace, &mut policy, &mut pool, &spec.sim, sim_seed)
        })
        .collect::<Result<_>>()?;
    let mut ds = Dataset::new(spec.pool.len(), spec.sim.decision_interval);
    for (i, log) in logs.iter().enumerate() {
        ds.push_call(&call_id(i), log);
    }
    Ok(ds)
}
