use ivy_core::bwe::{make_pool, BweParams, KNOWN_ESTIMATORS};
use ivy_core::meta::policy::FixedPolicy;
use ivy_core::sim::{run_call, SimConfig, TICK};
use ivy_core::trace::{Regime, Trace, TraceSegment};

/// Each estimator, driving the sender alone on a clean constant link for 60 s,
/// settles within 10% of the video share of the link or its own ceiling.
#[test]
fn estimators_converge_on_clean_constant_links() {
    let cfg = SimConfig {
        call_duration: 60.0,
        ..SimConfig::default()
    };
    let params = BweParams::default();
    let ceilings = [params.safe_filter.ceiling, 8000.0, 8000.0];
    for capacity in [1000.0, 2500.0, 6000.0] {
        let trace = Trace {
            id: format!("const-{capacity}"),
            regime: Regime::StableHbw,
            seed: 0,
            segments: vec![TraceSegment {
                duration: 60.0,
                capacity,
                base_owd: 40.0,
                random_loss: 0.0,
            }],
        };
        for (k, name) in KNOWN_ESTIMATORS.iter().enumerate() {
            let mut pool = make_pool(&KNOWN_ESTIMATORS, &params).unwrap();
            let log = run_call(&trace, &mut FixedPolicy::new(k), &mut pool, &cfg, 1).unwrap();
            // Mean estimate over the last 30 s.
            let skip = (30.0 / TICK).round() as usize;
            let tail = &log.estimates[skip..];
            let mean = tail.iter().map(|e| e[k]).sum::<f64>() / tail.len() as f64;
            let target = (capacity - cfg.audio_rate).min(ceilings[k]);
            let ratio = mean / target;
            assert!(
                (0.9..=1.1).contains(&ratio),
                "{name} at {capacity} kbps: {mean:.0} vs {target:.0}"
            );
        }
    }
}
