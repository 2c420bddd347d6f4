//! Configuration, data set and artifact contracts of the command-line tool.

use std::path::{Path, PathBuf};
use std::process::Command;

use hcebnn::reference::analytic_solution;
use hcebnn::{GaussianVariationalPosterior, ObservationTag};
use hcebnn_cli::commands::{cmd_generate, cmd_invert, cmd_predict, cmd_sweep, cmd_train, DATA_DIR};
use hcebnn_cli::config::Truth;
use hcebnn_cli::dataset::{generate, read_dataset, read_observations, OBSERVATIONS_FILE};
use hcebnn_cli::output::{read_trace, PosteriorFile, METRICS_FILE, POSTERIOR_FILE, PREDICTION_FILE, TRACE_FILE};
use hcebnn_cli::sweep::SweepAxis;
use hcebnn_cli::RunConfig;

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

const SHIPPED: [&str; 5] = [
    "steady_forward.toml",
    "steady_inverse.toml",
    "transient_forward.toml",
    "transient_plate.toml",
    "alpha_inverse.toml",
];

/// A shipped config cut down to a few hundred iterations.
fn tiny(name: &str) -> RunConfig {
    let mut c = RunConfig::load(&config_path(name)).unwrap();
    c.training.iterations = 200;
    c.training.collocation = c.training.collocation.min(50);
    c.evaluation.samples = 10;
    c
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    for name in SHIPPED {
        let cfg = RunConfig::load(&config_path(name)).unwrap();
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back, "{name}");
        assert_eq!(text, back.to_toml().unwrap(), "{name}");
    }
}

#[test]
fn unknown_fields_are_reported_with_their_location() {
    let text = std::fs::read_to_string(config_path("steady_forward.toml"))
        .unwrap()
        .replace("lambda = 0.001", "lambda = 0.001\nlamda = 2.0");
    let err = RunConfig::from_toml(&text).unwrap_err().to_string();
    assert!(err.contains("lamda"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn mismatched_analytic_extents_are_rejected() {
    let text = std::fs::read_to_string(config_path("steady_forward.toml"))
        .unwrap()
        .replace("extents = [0.05, 0.05]", "extents = [0.06, 0.05]");
    assert!(RunConfig::from_toml(&text).is_err());
}

#[test]
fn generate_is_idempotent() {
    let cfg = tiny("steady_forward.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_generate(&cfg, a.path()).unwrap();
    cmd_generate(&cfg, b.path()).unwrap();
    cmd_generate(&cfg, b.path()).unwrap();
    let (fa, fb) = (files(&a.path().join(DATA_DIR)), files(&b.path().join(DATA_DIR)));
    assert_eq!(fa.len(), 3);
    assert_eq!(fa, fb);
}

#[test]
fn noise_free_observations_equal_the_truth() {
    let mut cfg = tiny("steady_forward.toml");
    cfg.data.noise = 0.0;
    let Truth::Analytic { case } = cfg.problem.truth else { panic!() };
    let dir = tempfile::tempdir().unwrap();
    cmd_generate(&cfg, dir.path()).unwrap();
    let obs = read_observations(&dir.path().join(DATA_DIR).join(OBSERVATIONS_FILE)).unwrap();
    assert_eq!(obs.len(), 20);
    for m in obs {
        let t = analytic_solution(&case, &m.coords, None).unwrap();
        assert!((m.temperature - t).abs() <= 1e-9 * t.abs(), "{} vs {t}", m.temperature);
        assert_eq!(m.tag, ObservationTag::Boundary);
    }
}

#[test]
fn transient_plate_data_set_shape() {
    let cfg = RunConfig::load(&config_path("transient_plate.toml")).unwrap();
    let data = generate(&cfg).unwrap();
    let initial = data.observations.iter().filter(|m| m.tag == ObservationTag::Initial).count();
    assert_eq!(initial, 273);
    assert_eq!(data.observations.len(), 2253);
    assert!(data
        .observations
        .iter()
        .filter(|m| m.tag != ObservationTag::Initial)
        .all(|m| m.tag == ObservationTag::Boundary));
}

#[test]
fn dataset_files_read_back() {
    let cfg = tiny("transient_forward.toml");
    let data = generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    hcebnn_cli::dataset::write_dataset(dir.path(), &cfg, &data).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, data);
}

#[test]
fn csv_version_line_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join(OBSERVATIONS_FILE);
    std::fs::write(&p, "x,T,tag\n0.5,300,interior\n").unwrap();
    let err = read_observations(&p).unwrap_err().to_string();
    assert!(err.contains("version"), "{err}");
}

#[test]
fn train_writes_artifacts_and_posterior_round_trips() {
    let cfg = tiny("steady_forward.toml");
    let out = tempfile::tempdir().unwrap();
    let m = cmd_train(&cfg, None, out.path()).unwrap();
    assert_eq!(m.iterations, 200);
    for f in [POSTERIOR_FILE, TRACE_FILE, METRICS_FILE, PREDICTION_FILE, "sorted.csv", "config.toml"] {
        assert!(out.path().join(f).is_file(), "{f}");
    }
    let path = out.path().join(POSTERIOR_FILE);
    let first = std::fs::read(&path).unwrap();
    let post = PosteriorFile::load(&path).unwrap();
    let again = out.path().join("again.json");
    post.save(&again).unwrap();
    assert_eq!(first, std::fs::read(&again).unwrap());
    assert_eq!(PosteriorFile::load(&again).unwrap(), post);

    let (records, alpha) = read_trace(&out.path().join(TRACE_FILE)).unwrap();
    assert_eq!(records.len(), 2);
    assert!(alpha.iter().all(Option::is_none));
}

#[test]
fn training_is_repeatable() {
    let cfg = tiny("steady_forward.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_train(&cfg, None, a.path()).unwrap();
    cmd_train(&cfg, None, b.path()).unwrap();
    for f in [METRICS_FILE, POSTERIOR_FILE, TRACE_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn posterior_with_wrong_length_is_rejected() {
    let cfg = tiny("steady_forward.toml");
    let out = tempfile::tempdir().unwrap();
    cmd_train(&cfg, None, out.path()).unwrap();
    let path = out.path().join(POSTERIOR_FILE);
    let mut post = PosteriorFile::load(&path).unwrap();
    let mut mu = post.posterior.mu().to_vec();
    mu.pop();
    post.posterior = GaussianVariationalPosterior::delta(mu);
    post.save(&path).unwrap();
    assert!(PosteriorFile::load(&path).is_err());
}

#[test]
fn delta_posterior_predicts_zero_std() {
    let cfg = tiny("steady_forward.toml");
    let out = tempfile::tempdir().unwrap();
    cmd_train(&cfg, None, out.path()).unwrap();
    let path = out.path().join(POSTERIOR_FILE);
    let mut post = PosteriorFile::load(&path).unwrap();
    post.posterior = GaussianVariationalPosterior::delta(post.posterior.mu().to_vec());
    post.save(&path).unwrap();
    let truth = out.path().join(DATA_DIR).join("truth.csv");
    let pred_dir = out.path().join("pred");
    let m = cmd_predict(&cfg, &path, Some(&truth), 20, &pred_dir).unwrap().unwrap();
    assert_eq!(m.metrics.n, 32 * 32);
    let text = std::fs::read_to_string(pred_dir.join(PREDICTION_FILE)).unwrap();
    let stds: Vec<f64> = text
        .lines()
        .skip(2)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(stds.len(), 32 * 32);
    assert!(stds.iter().all(|&s| s == 0.0));
}

#[test]
fn boundary_and_alpha_inversion_reports() {
    let cfg = tiny("steady_inverse.toml");
    let out = tempfile::tempdir().unwrap();
    cmd_train(&cfg, None, out.path()).unwrap();
    let id = cmd_invert(&cfg, Some(&out.path().join(POSTERIOR_FILE)), None, out.path()).unwrap();
    assert_eq!(id.boundaries.len(), 2);
    assert_eq!(id.boundaries[0].estimates.len(), 400 * 10);
    assert!(id.boundaries[0].relative_error.is_some());
    // zero truth: no relative error
    assert!(id.boundaries[1].relative_error.is_none());
    // the steady run has no diffusivity trace
    assert!(cmd_invert(&cfg, None, Some(&out.path().join(TRACE_FILE)), out.path()).is_err());

    let acfg = tiny("alpha_inverse.toml");
    let aout = tempfile::tempdir().unwrap();
    cmd_train(&acfg, None, aout.path()).unwrap();
    let id = cmd_invert(&acfg, None, Some(&aout.path().join(TRACE_FILE)), aout.path()).unwrap();
    let a = id.alpha.unwrap();
    assert_eq!(a.tail_records, 1);
    assert!(a.relative_error.is_some());
}

#[test]
fn single_repeat_sweep_matches_single_run() {
    let cfg = tiny("steady_forward.toml");
    let out = tempfile::tempdir().unwrap();
    let rows = cmd_sweep(&cfg, SweepAxis::ObservationCount, &["20".into()], 1, &out.path().join("sweep")).unwrap();
    let single = cmd_train(&cfg, None, &out.path().join("single")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].median_rmse, Some(single.metrics.rmse));
    assert_eq!(rows[0].median_r_squared, Some(single.metrics.r_squared));
}

#[test]
fn sweep_records_failing_cells_and_continues() {
    let mut cfg = tiny("steady_forward.toml");
    cfg.training.iterations = 50;
    let out = tempfile::tempdir().unwrap();
    // 100 uniform sensors snapped to a 3x3 grid cannot be distinct
    cfg.data.snap = Some(vec![3, 3]);
    let rows = cmd_sweep(&cfg, SweepAxis::ObservationCount, &["4".into(), "100".into()], 1, out.path()).unwrap();
    assert_eq!(rows[0].failures, 0);
    assert_eq!(rows[1].failures, 1);
    assert!(rows[1].median_rmse.is_none());
}

#[test]
fn binary_reports_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[problem]\nextents = [1.0]\nmaterial = { k = 1.0, rho = 1.0, c = 1.0 }\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hcebnn"))
        .args(["generate", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("bad.toml"), "{msg}");
}

#[test]
fn binary_generate_train_invert() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, tiny("alpha_inverse.toml").to_toml().unwrap()).unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_hcebnn"))
            .args(args)
            .arg("--config")
            .arg(&cfg_path)
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8_lossy(&out.stdout).into_owned()
    };
    run(&["generate", "--seed", "3"]);
    let data = dir.path().join(DATA_DIR);
    assert!(data.join(OBSERVATIONS_FILE).is_file());
    let text = run(&["train", "--seed", "3", "--data", data.to_str().unwrap()]);
    assert!(text.contains("alpha"), "{text}");
    let text = run(&["invert"]);
    assert!(text.contains("alpha"), "{text}");
    assert!(dir.path().join("identification.json").is_file());
}
