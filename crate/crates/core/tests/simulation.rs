use monospline::estimators::Method;
use monospline::simulation::{
    calibrate_sigma, calibration_rng, gen_covariates, replication_rng, run_experiment, run_replication, summarize,
    LambdaRule, Model, SimConfig, ACTIVE,
};

fn small_config() -> SimConfig {
    SimConfig {
        n: 40,
        p: 12,
        t_dep: 0.0,
        snr: 4.0,
        model: Model::A,
        replications: 3,
        seed: 21,
        methods: Method::ALL.to_vec(),
        knots: 6,
        order: None,
        folds: 5,
        grid_size: 20,
        grid_ratio: 1e-2,
        standardize: false,
        lambda_rule: LambdaRule::Cv,
        record_curves: true,
        max_iterations: None,
    }
}

#[test]
fn replications_do_not_depend_on_scheduling() {
    let cfg = small_config();
    let sigma = calibrate_sigma(cfg.model, cfg.snr, cfg.t_dep, &mut calibration_rng(cfg.seed));
    let report = run_experiment(&cfg).unwrap();
    // Serial, out-of-order reruns reproduce every record exactly.
    for rep in (0..cfg.replications).rev() {
        assert_eq!(run_replication(&cfg, sigma, rep), report.replications[rep]);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let again = pool.install(|| run_experiment(&cfg).unwrap());
    assert_eq!(
        serde_json::to_string(&report).unwrap(),
        serde_json::to_string(&again).unwrap()
    );
}

#[test]
fn records_are_consistent_with_summaries() {
    let cfg = small_config();
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.summaries.len(), Method::ALL.len());
    for rep in &report.replications {
        assert!(rep.failures.is_empty(), "{:?}", rep.failures);
        for rec in &rep.records {
            assert_eq!(rec.tp + rec.fp, rec.support.len());
            assert_eq!(rec.tp, rec.selected.iter().filter(|&&s| s).count());
            assert_eq!(rec.curves.len(), 4);
            if rec.method == Method::Bs {
                assert_eq!(rec.monotone_violations, None);
            } else {
                assert_eq!(rec.monotone_violations, Some(0));
            }
        }
        let ms = rep.records.iter().find(|r| r.method == Method::Ms).unwrap();
        let ams = rep.records.iter().find(|r| r.method == Method::Ams).unwrap();
        assert!(ams.support.iter().all(|j| ms.support.contains(j)));
    }
    let again = summarize(&cfg, &report.replications);
    assert_eq!(again, report.summaries);
}

#[test]
fn unselected_component_error_is_its_sample_variance() {
    // A huge fixed lambda selects nothing, so every MSE is the centered
    // variance of the true component over the observed points.
    let mut cfg = small_config();
    cfg.methods = vec![Method::Ms];
    cfg.lambda_rule = LambdaRule::Rate { lambda0: 1e6, gamma: 0.0 };
    cfg.replications = 1;
    let report = run_experiment(&cfg).unwrap();
    let rec = &report.replications[0].records[0];
    assert!(rec.support.is_empty());
    let mut rng = replication_rng(cfg.seed, 0);
    let x = gen_covariates(cfg.n, cfg.p, cfg.t_dep, &ACTIVE, &mut rng);
    for slot in 0..4 {
        let g: Vec<f64> = x.column(slot).iter().map(|&v| Model::A.component(slot, v)).collect();
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / g.len() as f64;
        assert!((rec.mse[slot] - var).abs() < 1e-12);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = small_config();
    cfg.p = 3;
    assert!(run_experiment(&cfg).is_err());
    let mut cfg = small_config();
    cfg.snr = 0.0;
    assert!(run_experiment(&cfg).is_err());
    let mut cfg = small_config();
    cfg.n = 8;
    assert!(run_experiment(&cfg).is_err());
}

#[test]
fn config_defaults_fill_in() {
    let cfg: SimConfig = serde_json::from_str(
        r#"{"n": 50, "p": 100, "snr": 4, "model": "linear", "replications": 2, "seed": 3}"#,
    )
    .unwrap();
    assert_eq!(cfg.knots, 6);
    assert_eq!(cfg.folds, 10);
    assert_eq!(cfg.grid_size, 100);
    assert_eq!(cfg.methods, Method::ALL.to_vec());
    assert_eq!(cfg.lambda_rule, LambdaRule::Cv);
}
