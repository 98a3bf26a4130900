use cvrrw::acceptance::{bundled_config, BUNDLED};
use cvrrw::experiments::{
    compare_path_laws, derived_seed, run_experiment, sample_path_histogram, ExperimentConfig, ExperimentError,
};
use cvrrw::sampling::{RngStream, StreamId};
use cvrrw::stats::{stat_tests, Reference};
use rand::Rng;

const SMALL: &str = r#"
[experiment]
id = "small"
kind = "cvrrw"
seed = 5
replicas = 6

[graph]
family = "complete"
weights = [1.0, 2.0, 3.0, 4.0]

[run]
engine = "hybrid"
horizon = 40.0
grid = { kind = "linear", points = 9 }

[[claim]]
id = "uniform"
kind = "max_pi_deviation"
tolerance = 0.5
"#;

fn small_with(patch: impl FnOnce(&mut toml::Table)) -> Result<ExperimentConfig, ExperimentError> {
    let mut t: toml::Table = SMALL.parse().unwrap();
    patch(&mut t);
    ExperimentConfig::parse(&toml::to_string(&t).unwrap())
}

fn section<'a>(t: &'a mut toml::Table, name: &str) -> &'a mut toml::Table {
    t.get_mut(name).unwrap().as_table_mut().unwrap()
}

fn is_config(r: Result<ExperimentConfig, ExperimentError>) -> bool {
    matches!(r, Err(ExperimentError::Config(_)))
}

#[test]
fn bundled_configs_validate() {
    for (name, _) in BUNDLED {
        bundled_config(name).unwrap().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    small_with(|_| {}).unwrap();
}

#[test]
fn zero_replicas_rejected() {
    let r = small_with(|t| {
        section(t, "experiment").insert("replicas".into(), 0.into());
    });
    assert!(is_config(r));
}

#[test]
fn unknown_keys_rejected() {
    let r = small_with(|t| {
        section(t, "run").insert("horizn".into(), 3.0.into());
    });
    assert!(is_config(r));
}

#[test]
fn bad_grid_and_tolerance_rejected() {
    assert!(is_config(small_with(|t| {
        section(t, "run").insert("grid".into(), toml::Value::Table(toml::toml! { kind = "linear"
        points = 1 }));
    })));
    assert!(is_config(small_with(|t| {
        section(t, "run").insert("horizon".into(), 0.0.into());
    })));
    assert!(is_config(small_with(|t| {
        let c = t.get_mut("claim").unwrap().as_array_mut().unwrap();
        c[0].as_table_mut().unwrap().insert("tolerance".into(), 0.0.into());
    })));
    assert!(is_config(small_with(|t| {
        section(t, "run").insert("start".into(), 9.into());
    })));
}

#[test]
fn config_errors_exit_two() {
    let e = small_with(|t| {
        section(t, "experiment").insert("replicas".into(), 0.into());
    })
    .unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn same_config_same_body() {
    let cfg = small_with(|_| {}).unwrap();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.body_json(), b.body_json());
    assert_eq!(a.exit_code(), 0);
}

#[test]
fn thread_count_does_not_change_body() {
    let cfg = small_with(|_| {}).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_experiment(&cfg).unwrap().body_json())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn seeds_change_results() {
    let cfg = small_with(|_| {}).unwrap();
    let other = cfg.with_seed(derived_seed(cfg.experiment.seed, 1));
    assert_ne!(other.experiment.seed, cfg.experiment.seed);
    assert_ne!(derived_seed(5, 1), derived_seed(5, 2));
    assert_ne!(run_experiment(&cfg).unwrap().body_json(), run_experiment(&other).unwrap().body_json());
}

#[test]
fn identical_sides_identical_histograms() {
    let mut cfg = bundled_config("mixture").unwrap().unwrap();
    cfg.experiment.replicas = 3000;
    let side = cfg.sides[2].clone();
    let h1 = sample_path_histogram(&cfg, &side, 3000).unwrap();
    let h2 = sample_path_histogram(&cfg, &side, 3000).unwrap();
    assert_eq!(h1, h2);
    let chi = compare_path_laws(&cfg, &side, &side, 3000).unwrap();
    assert!(chi.statistic < 1e-9, "{}", chi.statistic);
    assert!(chi.p_value > 1.0 - 1e-9);
}

#[test]
fn oversized_path_space_rejected() {
    let mut cfg = bundled_config("mixture").unwrap().unwrap();
    cfg.run.steps = Some(40);
    let (a, b) = (cfg.sides[0].clone(), cfg.sides[1].clone());
    assert!(matches!(compare_path_laws(&cfg, &a, &b, 10), Err(ExperimentError::Config(_))));
}

#[test]
fn ks_calibration_on_exponentials() {
    let cdf = |x: f64| if x <= 0.0 { 0.0 } else { 1.0 - (-x).exp() };
    let mut rejected = 0;
    for rep in 0..100 {
        let mut rng = RngStream::new(77, rep, StreamId::Global);
        let xs: Vec<f64> = (0..10_000).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let r = stat_tests(&xs, Reference::KsAgainstCdf(&cdf)).unwrap();
        if !r.passes(0.01) {
            rejected += 1;
        }
    }
    assert!(rejected <= 5, "{rejected} rejections");
}

#[test]
fn constant_samples_rejected() {
    let cdf = |x: f64| if x <= 0.0 { 0.0 } else { 1.0 - (-x).exp() };
    let r = stat_tests(&[1.0; 500], Reference::KsAgainstCdf(&cdf)).unwrap();
    assert!(r.p_value.unwrap() < 1e-10);
    assert!(!r.passes(0.01));
}

#[test]
fn beta_marginal_and_ci() {
    let mut rng = RngStream::new(3, 0, StreamId::Global);
    let u: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
    assert!(stat_tests(&u, Reference::BetaMarginal { alpha: 1.0, beta: 1.0 }).unwrap().passes(0.001));
    let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
    assert!(!stat_tests(&sq, Reference::BetaMarginal { alpha: 1.0, beta: 1.0 }).unwrap().passes(0.01));
    assert!(stat_tests(&u, Reference::NormalCi { value: 0.5, z: 4.0 }).unwrap().passes(0.0));
    assert!(!stat_tests(&u, Reference::NormalCi { value: 0.6, z: 4.0 }).unwrap().passes(0.0));
    assert!(stat_tests(&[], Reference::NormalCi { value: 0.5, z: 4.0 }).is_err());
}
