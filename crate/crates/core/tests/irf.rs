use fire_lp::design::{log_outcome, ModelSpec, PreparedModel, SampleFilter};
use fire_lp::estimator::{fit, FitOptions};
use fire_lp::irf::{
    block_jackknife, cumulative_effect, estimate_responses, ImpulseResponse, IrfOptions, JackknifeMethod,
    JackknifeOptions, JackknifeScaling,
};
use fire_lp::panel::{PanelDataset, SeriesRef};
use fire_lp::synth::{generate, DgpConfig};
use fire_lp::{Error, Exec};

fn panel(seed: u64) -> PanelDataset {
    let cfg = DgpConfig {
        n_counties: 60,
        n_periods: 100,
        seed,
        ..DgpConfig::default()
    };
    generate(&cfg, Exec::Sequential).unwrap().0
}

fn spec(h: usize) -> ModelSpec {
    ModelSpec::new(log_outcome("emp"), SeriesRef::new("burn"), h).with_lags(6, 6)
}

#[test]
fn each_horizon_matches_a_direct_fit() {
    let p = panel(1);
    let model = PreparedModel::new(&p, &spec(4), None).unwrap();
    let irf = estimate_responses(&model, &IrfOptions::default()).unwrap().swap_remove(0);
    assert_eq!(irf.horizons, vec![0, 1, 2, 3, 4]);
    for h in 0..=4 {
        let f = fit(&model.design(h, Exec::Sequential).unwrap(), &FitOptions::default()).unwrap();
        assert_eq!(irf.beta[h], f.coefficients[0]);
        assert_eq!(irf.se[h], f.covariance[(0, 0)].sqrt());
        assert_eq!(irf.scaled_beta[h], irf.beta[h] * 13.1 * 100.0);
        assert_eq!(irf.dk_bandwidth[h], h + 1);
    }
}

#[test]
fn jackknife_cross_product_updates_match_refits() {
    let p = panel(2);
    let model = PreparedModel::new(&p, &spec(3), None).unwrap();
    let base = JackknifeOptions {
        draws: 12,
        drop: 0.1,
        seed: 5,
        ..JackknifeOptions::default()
    };
    let gram = block_jackknife(
        &model,
        &IrfOptions::default(),
        &JackknifeOptions {
            method: JackknifeMethod::Gram,
            ..base
        },
    )
    .unwrap();
    let refit = block_jackknife(
        &model,
        &IrfOptions::default(),
        &JackknifeOptions {
            method: JackknifeMethod::Refit,
            ..base
        },
    )
    .unwrap();
    assert_eq!(gram.n_drop, 6);
    for (a, b) in gram.paths.iter().zip(&refit.paths) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-8 * y.abs().max(1e-3), "{x} vs {y}");
        }
    }
}

#[test]
fn gram_method_rejects_unbalanced_designs() {
    let p = panel(3);
    // Controls are shock-free across the window, so shock lags would be all but empty.
    let mut s = spec(2).with_lags(6, 0);
    s.sample = vec![SampleFilter::CleanControl {
        window: 12,
        treated_above: 0.0,
    }];
    let model = PreparedModel::new(&p, &s, None).unwrap();
    let opts = JackknifeOptions {
        draws: 4,
        method: JackknifeMethod::Gram,
        ..JackknifeOptions::default()
    };
    assert!(block_jackknife(&model, &IrfOptions::default(), &opts).is_err());
    let auto = JackknifeOptions {
        method: JackknifeMethod::Auto,
        ..opts
    };
    assert_eq!(block_jackknife(&model, &IrfOptions::default(), &auto).unwrap().paths.len(), 4);
}

#[test]
fn jackknife_covariance_is_symmetric_psd_and_scaled() {
    let p = panel(4);
    let model = PreparedModel::new(&p, &spec(5), None).unwrap();
    let opts = JackknifeOptions {
        draws: 40,
        seed: 9,
        ..JackknifeOptions::default()
    };
    let d = block_jackknife(&model, &IrfOptions::default(), &opts).unwrap();
    let raw = block_jackknife(
        &model,
        &IrfOptions::default(),
        &JackknifeOptions {
            scaling: JackknifeScaling::Raw,
            ..opts
        },
    )
    .unwrap();
    let c = &d.covariance;
    assert_eq!(c, &c.transpose());
    let eig = c.clone().symmetric_eigen();
    assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-10 * eig.eigenvalues.max().max(1e-300)));
    // 60 counties, 5% dropped → 3 per draw; factor (60 − 3)/3 = 19.
    assert_eq!(d.n_drop, 3);
    assert_eq!(d.factor, 19.0);
    assert!(((&raw.covariance * 19.0) - c).abs().max() <= 1e-12 * c.abs().max());
    let ones: f64 = (1..=5).flat_map(|i| (1..=5).map(move |j| (i, j))).map(|(i, j)| c[(i, j)]).sum();
    assert!((d.sd_phi - ones.sqrt()).abs() <= 1e-12 * d.sd_phi);
}

#[test]
fn jackknife_needs_two_draws() {
    let p = panel(5);
    let model = PreparedModel::new(&p, &spec(1), None).unwrap();
    let opts = JackknifeOptions {
        draws: 1,
        ..JackknifeOptions::default()
    };
    let err = block_jackknife(&model, &IrfOptions::default(), &opts).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn cumulative_effect_is_linear() {
    let a = ImpulseResponse::from_raw("d", vec![1e-6, -2e-6, 3e-6, 0.5e-6], vec![0.0; 4], 13.1, 0.95);
    let b = ImpulseResponse::from_raw("d", vec![-4e-6, 1e-6, 1e-6, 2e-6], vec![0.0; 4], 13.1, 0.95);
    let sum: Vec<f64> = a.beta.iter().zip(&b.beta).map(|(x, y)| x + y).collect();
    let ab = ImpulseResponse::from_raw("d", sum, vec![0.0; 4], 13.1, 0.95);
    for include_h0 in [false, true] {
        let l = cumulative_effect(&ab, 3, include_h0).unwrap().phi;
        let r = cumulative_effect(&a, 3, include_h0).unwrap().phi + cumulative_effect(&b, 3, include_h0).unwrap().phi;
        assert!((l - r).abs() < 1e-14);
    }
    assert!(cumulative_effect(&a, 4, false).is_err());
}
