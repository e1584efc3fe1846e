use hrgg::census::TreeSpec;
use hrgg::experiments::{
    run_clt_experiment, run_palm_check, run_stein_experiment, run_variance_experiment, ExperimentConfig, Mode,
    PalmConfig, SteinConfig,
};
use hrgg::{ModelParams, RadiusRule};

fn thermo(alpha: f64, gamma: f64) -> ModelParams {
    ModelParams::new(2, alpha, 1.0, 100.0, RadiusRule::Thermodynamic { nu: 1.0 })
        .unwrap()
        .with_gamma(gamma)
        .unwrap()
}

#[test]
fn stein_bound_dominates_and_shrinks() {
    let mut cfg = ExperimentConfig::new(thermo(3.0, 0.1), TreeSpec::edge(), Mode::Stein, vec![1e3, 1e4], 200, 5);
    cfg.stein = Some(SteinConfig::default());
    let res = run_stein_experiment(&cfg).unwrap();
    let recs = res.stein.unwrap();
    assert_eq!(recs.len(), 2);
    for r in &recs {
        assert!(r.bounds.kolmogorov >= r.empirical_ks, "{r:?}");
        assert!(r.bounds.w.iter().all(|w| w.is_finite() && *w >= 0.0));
    }
    assert!(recs[1].bounds.kolmogorov < recs[0].bounds.kolmogorov);
    assert!(recs[1].bounds.wasserstein < recs[0].bounds.wasserstein);
}

#[test]
fn stein_skips_empty_clouds() {
    let params = ModelParams::new(2, 2.0, 1.0, 1e-9, RadiusRule::Explicit { radius: 3.0 }).unwrap().with_gamma(0.3).unwrap();
    let cfg = ExperimentConfig::new(params, TreeSpec::edge(), Mode::Stein, vec![1e-9], 5, 1);
    let res = run_stein_experiment(&cfg).unwrap();
    assert!(res.stein.unwrap().is_empty());
    assert_eq!(res.warnings.len(), 1);
    assert_eq!(res.records.len(), 1);
}

#[test]
fn palm_point_count_and_second_moment() {
    let mut cfg = ExperimentConfig::new(thermo(2.0, 0.4), TreeSpec::edge(), Mode::Palm, vec![50.0], 4000, 9);
    cfg.palm = Some(PalmConfig { iid_draws: 400_000, second_moment_n: Some(30.0) });
    let res = run_palm_check(&cfg).unwrap();
    let rec = res.palm.unwrap()[0];
    assert!(rec.point_count.z.abs() < 3.0, "{rec:?}");
    assert!(rec.first_moment.z.abs() < 3.0, "{rec:?}");
    let second = rec.second_moment.unwrap();
    assert!(second.z.abs() < 3.0, "{second:?}");
}

#[test]
fn palm_second_moment_path_tree() {
    let mut cfg = ExperimentConfig::new(thermo(1.5, 0.5), TreeSpec::path(3).unwrap(), Mode::Palm, vec![30.0], 3000, 21);
    cfg.palm = Some(PalmConfig { iid_draws: 200_000, second_moment_n: Some(20.0) });
    let rec = run_palm_check(&cfg).unwrap().palm.unwrap()[0];
    assert!(rec.first_moment.z.abs() < 3.0, "{rec:?}");
    assert!(rec.second_moment.unwrap().z.abs() < 3.0, "{rec:?}");
}

#[test]
fn variance_respects_fitted_lower_bound() {
    // alpha / zeta below the maximum degree: only the lower bound is available
    let cfg = ExperimentConfig::new(thermo(0.8, 1.0), TreeSpec::edge(), Mode::Variance, vec![300.0, 1000.0, 3000.0], 200, 13);
    let res = run_variance_experiment(&cfg).unwrap();
    assert!(!res.warnings.is_empty());
    let c_star = res.records[0].mc_variance / res.records[0].theory_value.unwrap();
    for r in &res.records[1..] {
        assert!(r.mc_variance >= 0.0);
        assert!(r.mc_variance >= 0.7 * c_star * r.theory_value.unwrap(), "{} vs {}", r.mc_variance, c_star * r.theory_value.unwrap());
    }
}

#[test]
fn clt_warns_outside_regime() {
    let cfg = ExperimentConfig::new(thermo(0.8, 1.0), TreeSpec::edge(), Mode::Clt, vec![300.0], 50, 3);
    let res = run_clt_experiment(&cfg).unwrap();
    assert_eq!(res.warnings.len(), 1);
    let clt = &res.clt.unwrap()[0];
    assert_eq!(clt.standardized_samples.len(), 50);
    assert!((0.0..=1.0).contains(&clt.ks_statistic));
    assert!((0.0..=1.0).contains(&clt.ks_p_value));
}

#[test]
fn result_files_carry_provenance() {
    let cfg = ExperimentConfig::new(thermo(3.0, 1.0), TreeSpec::edge(), Mode::Clt, vec![200.0, 400.0], 20, 77);
    let res = run_clt_experiment(&cfg).unwrap();
    let json = res.to_json().unwrap();
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(value["provenance"]["master_seed"], 77);
    assert_eq!(value["provenance"]["config_hash"], cfg.hash());
    assert_eq!(value["provenance"]["library_version"], env!("CARGO_PKG_VERSION"));
    let mut z = Vec::new();
    res.write_standardized_csv(&mut z).unwrap();
    assert_eq!(String::from_utf8(z).unwrap().lines().count(), 1 + 40);
}

#[test]
fn config_json_round_trip() {
    let text = r#"{
        "params": {"d": 2, "alpha": 2.0, "zeta": 1.0, "n": 1000.0, "radius_rule": {"rule": "thermodynamic", "nu": 1.0}, "gamma": 0.4},
        "tree": {"k": 3, "edges": [[1, 2], [1, 3]]},
        "replicates": 10,
        "n_grid": [100.0, 200.0],
        "master_seed": 4,
        "mode": "euclid-baseline",
        "euclid": {"regime": "thermodynamic"}
    }"#;
    let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
    assert_eq!(cfg.mode, Mode::EuclidBaseline);
    assert_eq!(cfg.tree, TreeSpec::star(3).unwrap());
    assert_eq!(cfg.euclid.unwrap().ball_radius, 1.0);
    cfg.validate().unwrap();
    let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
}
