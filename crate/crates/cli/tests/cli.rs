use std::path::{Path, PathBuf};
use std::process::Command;

use sparge_cli::{run, EXIT_OK, EXIT_VALIDATION};
use sparge_core::data_io::load_model;

fn sparge(args: &[&str]) -> i32 {
    run(std::iter::once("sparge").chain(args.iter().copied()))
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Synthetic data plus a short composite fit in `dir`.
fn fitted(dir: &Path) -> (String, String) {
    let data = path(dir, "data.csv");
    let model = path(dir, "model.sparge");
    assert_eq!(sparge(&["synth", "--seed", "5", "--classes", "2", "--per-class", "15", "--ambient-dim", "20", "-o", &data]), EXIT_OK);
    let code = sparge(&[
        "fit", &data, "--dict-size", "12", "--embed-dim", "3", "--max-iter", "5", "--backtrack", "--descent",
        "composite", "--svt-rule", "proximal", "-o", &model,
    ]);
    assert_eq!(code, EXIT_OK);
    (data, model)
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(sparge(&["--help"]), EXIT_OK);
    assert_eq!(sparge(&["fit", "--help"]), EXIT_OK);
    assert_eq!(sparge(&["--version"]), EXIT_OK);
}

#[test]
fn usage_errors_are_validation_failures() {
    assert_eq!(sparge(&[]), EXIT_VALIDATION);
    assert_eq!(sparge(&["frobnicate"]), EXIT_VALIDATION);
    assert_eq!(sparge(&["fit", "missing.csv", "--dict-size", "many"]), EXIT_VALIDATION);
}

#[test]
fn missing_input_and_bad_parameters_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sparge(&["fit", &path(dir.path(), "absent.csv")]), EXIT_VALIDATION);
    let data = path(dir.path(), "d.csv");
    assert_eq!(sparge(&["synth", "--per-class", "10", "-o", &data]), EXIT_OK);
    assert_eq!(sparge(&["fit", &data, "--dict-size", "4", "--embed-dim", "6"]), EXIT_VALIDATION);
    assert_eq!(sparge(&["fit", &data, "--gamma=-1"]), EXIT_VALIDATION);
    let model = path(dir.path(), "m.sparge");
    assert_eq!(sparge(&["fit", &data, "--dict-size", "8", "--embed-dim", "2", "--max-iter", "1", "-o", &model]), EXIT_OK);
    // Three classes cannot feed a binary logistic regression.
    assert_eq!(sparge(&["evaluate", &data, "--model", &model, "--baseline", "lr"]), EXIT_VALIDATION);
}

#[test]
fn commands_chain_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = fitted(dir.path());
    assert!(Path::new(&path(dir.path(), "data.truth.csv")).exists());
    let report = std::fs::read_to_string(path(dir.path(), "model.report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 1 + 5);

    let embedded = path(dir.path(), "emb.csv");
    assert_eq!(sparge(&["embed", &data, "--model", &model, "-o", &embedded]), EXIT_OK);
    let text = std::fs::read_to_string(&embedded).unwrap();
    assert_eq!(text.lines().next().unwrap(), "id,y0,y1,y2");
    assert_eq!(text.lines().count(), 1 + 30);

    let hits = path(dir.path(), "hits.csv");
    assert_eq!(sparge(&["query", &data, "--row", "2", "--model", &model, "-o", &hits]), EXIT_OK);
    let text = std::fs::read_to_string(&hits).unwrap();
    assert_eq!(text.lines().next().unwrap(), "rank,id,distance");
    assert_eq!(text.lines().count(), 1 + 5);

    let weights = path(dir.path(), "w.csv");
    assert_eq!(sparge(&["query", &data, "--model", &model, "--by-weight", "-o", &weights]), EXIT_OK);
    assert!(std::fs::read_to_string(&weights).unwrap().starts_with("rank,atom,weight"));

    for baseline in ["sparge", "knn", "lr", "raw-knn", "raw-lr"] {
        let metrics = path(dir.path(), &format!("{baseline}.csv"));
        let code = sparge(&[
            "evaluate", &data, "--model", &model, "--baseline", baseline, "--train", &data, "-o", &metrics,
        ]);
        assert_eq!(code, EXIT_OK, "baseline {baseline}");
        assert!(!std::fs::read_to_string(&metrics).unwrap().is_empty());
    }
}

#[test]
fn config_fills_unset_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "d.csv");
    assert_eq!(sparge(&["synth", "--per-class", "12", "--ambient-dim", "15", "-o", &data]), EXIT_OK);
    let config = dir.path().join("fit.conf");
    std::fs::write(
        &config,
        "# fit defaults\ndict_size = 9\nembed-dim = 2\nmax_iter = 3\nbacktrack = true\ndescent = composite\nsvt_rule = proximal\n",
    )
    .unwrap();
    let model = path(dir.path(), "m.sparge");
    let code = sparge(&["fit", &data, "--config", &config.to_string_lossy(), "--dict-size", "10", "-o", &model]);
    assert_eq!(code, EXIT_OK);
    let m = load_model(&model).unwrap();
    assert_eq!(m.hyperparams.k, 10);
    assert_eq!(m.hyperparams.l, 2);
    assert_eq!(m.hyperparams.max_iter, 3);
    assert!(m.hyperparams.backtracking);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "d.csv");
    assert_eq!(sparge(&["synth", "--per-class", "10", "-o", &data]), EXIT_OK);
    let config: PathBuf = dir.path().join("bad.conf");
    std::fs::write(&config, "dictionary_size = 9\n").unwrap();
    assert_eq!(sparge(&["fit", &data, "--config", &config.to_string_lossy()]), EXIT_VALIDATION);
}

#[test]
fn gradcheck_on_the_toy_set_is_within_bounds() {
    let out = Command::new(env!("CARGO_BIN_EXE_sparge"))
        .args([
            "gradcheck", "--dict-size", "12", "--embed-dim", "3", "--descent", "composite", "--svt-rule", "proximal",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let grad_u = text.lines().find(|l| l.starts_with("grad_u,")).unwrap();
    assert!(grad_u.ends_with(",ok"), "{text}");
}

#[test]
fn binary_exit_codes_match_library() {
    let out = Command::new(env!("CARGO_BIN_EXE_sparge")).args(["fit", "/nonexistent/x.csv"]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
