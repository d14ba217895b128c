mod common;

use sst_core::metrics::rmse;
use sst_core::synthetic::{generate_model_counterpart, generate_pair, generate_truth, BiasPattern, BiasSpec, SyntheticScenario};

fn frame_means(s: &sst_core::grid::SstSeries) -> Vec<f64> {
    s.frames()
        .iter()
        .map(|f| {
            let v: Vec<f64> = f.ocean_values().collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect()
}

/// Sample autocorrelation at `lag`, written out directly.
fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let mut acc = 0.0;
    for t in 0..n - lag {
        acc += (x[t] - mean) * (x[t + lag] - mean);
    }
    acc / var
}

#[test]
fn frame_mean_period_found_by_autocorrelation() {
    for period in [40.0, 61.0, 90.0] {
        let s = SyntheticScenario {
            seasonal_period: period,
            n_days: 400,
            ..SyntheticScenario::default()
        };
        let means = frame_means(&generate_truth(&s).unwrap());
        let lo = (period / 2.0) as usize;
        let hi = (period * 1.5) as usize;
        let best = (lo..=hi)
            .max_by(|&a, &b| autocorrelation(&means, a).total_cmp(&autocorrelation(&means, b)))
            .unwrap();
        assert!(
            (best as f64 - period).abs() <= 0.05 * period,
            "period {period}: autocorrelation peak at lag {best}"
        );
    }
}

#[test]
fn one_period_apart_differs_only_by_drift() {
    let s = SyntheticScenario {
        seasonal_period: 100.0,
        n_days: 220,
        ..SyntheticScenario::default()
    };
    let truth = generate_truth(&s).unwrap();
    let bound = s.drift_bound();
    for d in 0..120 {
        let (a, b) = (truth.frame(d), truth.frame(d + 100));
        for ((idx, &x), &y) in a.values().indexed_iter().zip(b.values()) {
            if a.mask()[idx] {
                assert!((x - y).abs() <= 2.0 * bound[idx] + 1e-9, "day {d} pixel {idx:?}");
            }
        }
    }
}

#[test]
fn default_pair_shape_mask_and_band() {
    let s = SyntheticScenario::default();
    let (truth, model) = generate_pair(&s).unwrap();
    assert_eq!((truth.len(), truth.height(), truth.width()), (400, 32, 32));
    assert_eq!(truth.mask(), model.mask());
    assert_eq!(truth.days(), model.days());
    let land = 1.0 - truth.n_ocean() as f64 / (32.0 * 32.0);
    assert!((0.10..=0.20).contains(&land), "land fraction {land}");
    let e = rmse(&model, &truth).unwrap();
    assert!((0.5..=1.5).contains(&e), "model rmse {e}");
}

#[test]
fn same_seed_same_pair_and_new_seed_differs() {
    let s = SyntheticScenario {
        height: 16,
        width: 16,
        n_days: 20,
        ..SyntheticScenario::default()
    };
    let (t1, m1) = generate_pair(&s).unwrap();
    let (t2, m2) = generate_pair(&s).unwrap();
    assert_eq!(t1.frames(), t2.frames());
    assert_eq!(m1.frames(), m2.frames());
    let (t3, _) = generate_pair(&SyntheticScenario { seed: 8, ..s }).unwrap();
    assert_ne!(t1.frames(), t3.frames());
}

#[test]
fn error_is_monotone_in_each_bias_component() {
    let s = SyntheticScenario {
        height: 16,
        width: 16,
        n_days: 60,
        ..SyntheticScenario::default()
    };
    let truth = generate_truth(&s).unwrap();
    let err = |b: BiasSpec| rmse(&generate_model_counterpart(&truth, &b, 5).unwrap(), &truth).unwrap();
    let grids: [fn(f64) -> BiasSpec; 3] = [
        |v| BiasSpec::new(v, 0.0, 0.0),
        |v| BiasSpec::new(0.0, v, 0.0),
        |v| BiasSpec::new(0.0, 0.0, v),
    ];
    for (k, make) in grids.iter().enumerate() {
        let e: Vec<f64> = [0.0, 0.5, 1.0].iter().map(|&v| err(make(v))).collect();
        assert_eq!(e[0], 0.0, "component {k}");
        assert!(e[0] <= e[1] && e[1] <= e[2], "component {k}: {e:?}");
    }
}

#[test]
fn flat_offset_error_equals_offset() {
    let s = SyntheticScenario {
        height: 16,
        width: 16,
        n_days: 10,
        ..SyntheticScenario::default()
    };
    let truth = generate_truth(&s).unwrap();
    let b = BiasSpec {
        pattern: BiasPattern::Flat,
        ..BiasSpec::new(0.37, 0.0, 0.0)
    };
    let e = rmse(&generate_model_counterpart(&truth, &b, 1).unwrap(), &truth).unwrap();
    assert!((e - 0.37).abs() < 1e-12);
}
